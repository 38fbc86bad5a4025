"""Outer block-coordinate ascent loop, initialisation and baseline schemes."""

from __future__ import annotations

import enum
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import metrics
from .channel import ChannelSet, effective_channels, synthesize_channels
from .metrics import RisState, check_feasibility, total_power
from .scenario import NetworkGeometry, SelectionMask, SystemConfig, build_selection_mask
from .solver import ConvexQcqp, QuadConstraint, solve_beamforming, solve_qcqp, solve_ris
from .solver.qcqp import Status
from .transforms import SlackState, eval_f3, kron_power_operators, unvec, update_slack, vec

log = logging.getLogger(__name__)


class BaselineMode(enum.Enum):
    PROPOSED = "proposed"
    ACTIVE_RIS = "active"
    PASSIVE_RIS = "passive"
    RANDOM_THETA = "random"
    ALL_AP = "allap"

    @classmethod
    def parse(cls, name: str) -> "BaselineMode":
        key = name.strip().lower().replace("_", "").replace("-", "")
        aliases = {"proposed": "proposed", "hybrid": "proposed", "active": "active",
                   "activeris": "active", "passive": "passive", "passiveris": "passive",
                   "random": "random", "randomtheta": "random", "allap": "allap"}
        if key not in aliases:
            raise ValueError(f"unknown mode {name!r}")
        return cls(aliases[key])


class InfeasibleTrial(RuntimeError):
    """No beamformer meeting the minimum-rate constraints could be found."""


@dataclass(frozen=True, eq=False)
class IterationRecord:
    iteration: int
    eta: float
    sum_rate: float
    rates: np.ndarray
    power: metrics.PowerBreakdown
    f1: float
    f3: float
    slack: SlackState
    max_violation: float
    wall_time: float


@dataclass(eq=False)
class IterationTrace:
    records: list[IterationRecord] = field(default_factory=list)
    converged: bool = False

    @property
    def etas(self) -> np.ndarray:
        return np.array([r.eta for r in self.records])

    @property
    def iterations(self) -> int:
        """Outer iterations performed (the initial point is record 0)."""
        return max(len(self.records) - 1, 0)

    def __len__(self) -> int:
        return len(self.records)


@dataclass(eq=False)
class OptimizeResult:
    W: np.ndarray
    ris: RisState
    trace: IterationTrace
    cfg: SystemConfig
    mode: BaselineMode

    @property
    def eta(self) -> float:
        return self.trace.records[-1].eta


def mode_mask(cfg: SystemConfig, mode: BaselineMode) -> SelectionMask:
    if mode is BaselineMode.ACTIVE_RIS:
        return build_selection_mask(cfg, cfg.N_s)
    if mode is BaselineMode.PASSIVE_RIS:
        return build_selection_mask(cfg, 0)
    return build_selection_mask(cfg)


def all_ap_scenario(cfg: SystemConfig, geometry: NetworkGeometry, rng: np.random.Generator):
    """Replace every RIS by an AP at the same spot; the summed AP budget is unchanged.

    Pass a generator in the same state as the one used for the RIS scenario so
    the original AP-user links are reproduced exactly.
    """
    L, R = cfg.L, cfg.R
    cfg2 = cfg.replace(L=L + R, R=0, P_max_A=cfg.P_max_A * L / (L + R))
    geo2 = NetworkGeometry(
        ap_positions=np.vstack([geometry.ap_positions, geometry.ris_positions]),
        ris_positions=np.zeros((0, 2)),
        user_positions=geometry.user_positions,
    )
    return cfg2, geo2, synthesize_channels(cfg2, geo2, rng)


# --------------------------------------------------------------------------
# initialisation
# --------------------------------------------------------------------------

def _random_coeffs(cfg, mask: SelectionMask, rng, active_amp: float) -> np.ndarray:
    phases = rng.uniform(0.0, 2 * np.pi, size=mask.active.size)
    amp = np.where(mask.active, active_amp, 1.0)
    return amp * np.exp(1j * phases)


def _initial_active_amplitude(cfg: SystemConfig, mask: SelectionMask) -> float:
    """Largest amplitude <= a_max whose amplified-noise power uses at most half of each RIS budget."""
    per_ris = max((int(mask.active_in(r).sum()) for r in range(mask.R)), default=0)
    if per_ris == 0:
        return cfg.a_max
    cap = np.sqrt(0.5 * cfg.mu_R * cfg.P_max_R / (per_ris * cfg.sigmar_sq))
    return float(min(cfg.a_max, cap))


def _max_common_scale(ch, W, ris, cfg) -> float:
    """Largest s with s*W meeting every AP and RIS power budget."""
    ap = metrics.ap_tx_powers(W, cfg)
    s2 = np.min(cfg.P_max_A / ap[ap > 0]) if np.any(ap > 0) else np.inf
    _, ris_ops = kron_power_operators(ch, ris, cfg, W.shape[1])
    for op in ris_ops:
        amplified = op.value(W) - op.offset
        room = cfg.P_max_R - op.offset
        if room <= 0:
            raise InfeasibleTrial("amplified RIS noise alone exceeds the RIS power budget")
        if amplified > 0:
            s2 = min(s2, room / amplified)
    return float(np.sqrt(s2))


def _rates_ok(ch, W, ris, cfg, margin=0.0) -> bool:
    g = metrics.sinr_all(ch, W, ris, cfg)
    return bool(np.all(g >= cfg.gamma_th * (1.0 + margin)))


def feasibility_phase(ch, W, ris, cfg, max_rounds: int = 50) -> np.ndarray:
    """Raise the worst linearised SINR margin by repeated convex steps until every rate target is met.

    Variables are ``[vec(W); s]``; each round maximises ``Re(s)`` subject to the
    power limits and ``linearised signal - gamma_th * (interference + noise) >= s * sigma0^2``.
    """
    Hrows = effective_channels(ch, ris)
    K, M = Hrows.shape
    n = M * K
    g_th = cfg.gamma_th
    sig = cfg.sigma0_sq
    noise = metrics.ris_noise_power(ch, ris, cfg)
    ap_ops, ris_ops = kron_power_operators(ch, ris, cfg, K)
    delta = 1e-9

    def pad(P):
        out = np.zeros((n + 1, n + 1), dtype=complex)
        out[:n, :n] = P
        return out

    for _ in range(max_rounds):
        if _rates_ok(ch, W, ris, cfg, margin=1e-6):
            return W
        ref = np.einsum("km,mk->k", Hrows, W)
        cons = [QuadConstraint(pad(op.dense() / cfg.P_max_A), np.zeros(n + 1), -1.0, f"ap{l}")
                for l, op in enumerate(ap_ops)]
        for r, op in enumerate(ris_ops):
            if ris.mask.active_in(r).any():
                cons.append(QuadConstraint(pad(op.dense() / cfg.P_max_R), np.zeros(n + 1),
                                           op.offset / cfg.P_max_R - 1.0, f"ris{r}"))
        margins = []
        link = np.abs(Hrows @ W) ** 2
        for k in range(K):
            P = np.zeros((n + 1, n + 1), dtype=complex)
            outer = np.outer(Hrows[k].conj(), Hrows[k])
            for j in range(K):
                if j != k:
                    P[j * M:(j + 1) * M, j * M:(j + 1) * M] = g_th * outer / sig
            q = np.zeros(n + 1, dtype=complex)
            q[k * M:(k + 1) * M] = -Hrows[k].conj() * ref[k] / sig
            q[n] = 0.5
            r = (g_th * (noise[k] + sig) + abs(ref[k]) ** 2) / sig
            cons.append(QuadConstraint(P, q, r, f"rate{k}"))
            interf = link[k].sum() - link[k, k]
            margins.append((abs(ref[k]) ** 2 - g_th * (interf + noise[k] + sig)) / sig)
        Mobj = np.zeros((n + 1, n + 1))
        Mobj[n, n] = delta
        c = np.zeros(n + 1)
        c[n] = 0.5
        p = ConvexQcqp(Mobj, c, 0.0, cons, None, verify=False)
        x0 = np.append(vec(W), min(margins) - 1.0)
        res = solve_qcqp(p, x0, tol_feas=cfg.tol_feas, tol_kkt=cfg.tol_kkt, max_iters=cfg.solver_max_iters)
        if res.status is Status.INFEASIBLE:
            break
        W_new = unvec(res.x[:n], K)
        if np.allclose(W_new, W, rtol=1e-10, atol=0):
            break
        W = W_new
    if _rates_ok(ch, W, ris, cfg, margin=0.0):
        return W
    raise InfeasibleTrial("minimum-rate constraints could not be met")


def initialize(ch: ChannelSet, cfg: SystemConfig, rng: np.random.Generator,
               mask: SelectionMask | None = None, mode: BaselineMode = BaselineMode.PROPOSED):
    """Random-phase RIS, maximum-ratio beamformer at the largest feasible common scale.

    Returns ``(W, RisState, SlackState)``.
    """
    if mask is None:
        mask = mode_mask(cfg, mode) if ch.N else SelectionMask(np.zeros(0, dtype=bool), cfg.N_s)
    if mode is BaselineMode.RANDOM_THETA:
        amp = cfg.a_max
    else:
        amp = _initial_active_amplitude(cfg, mask)
    ris = RisState(_random_coeffs(cfg, mask, rng, amp), mask)
    Hrows = effective_channels(ch, ris)
    W = (Hrows.conj() / np.linalg.norm(Hrows, axis=1, keepdims=True)).T
    W = W * _max_common_scale(ch, W, ris, cfg)
    if not _rates_ok(ch, W, ris, cfg):
        W = feasibility_phase(ch, W, ris, cfg)
    return W, ris, update_slack(ch, W, ris, cfg)


# --------------------------------------------------------------------------
# outer loop
# --------------------------------------------------------------------------

def _record(i, ch, W, ris, slack, cfg, t0) -> IterationRecord:
    pw = total_power(ch, W, ris, cfg)
    rates = metrics.user_rates(ch, W, ris, cfg)
    sr = float(rates.sum())
    return IterationRecord(
        iteration=i,
        eta=sr / pw.total,
        sum_rate=sr,
        rates=rates,
        power=pw,
        f1=sr - slack.y_hat * pw.total,
        f3=eval_f3(ch, W, ris, slack, cfg),
        slack=slack,
        max_violation=check_feasibility(ch, W, ris, cfg).max_violation,
        wall_time=time.perf_counter() - t0,
    )


def optimize(ch: ChannelSet, cfg: SystemConfig, mode: BaselineMode | str = BaselineMode.PROPOSED,
             rng: np.random.Generator | None = None, init=None) -> OptimizeResult:
    """Alternate slack updates, the beamforming block and the RIS block until eta settles.

    For ``ALL_AP`` pass the channel set / config produced by :func:`all_ap_scenario`.
    ``init`` may supply a ``(W, RisState)`` starting point.
    """
    mode = BaselineMode.parse(mode) if isinstance(mode, str) else mode
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    t0 = time.perf_counter()
    if init is None:
        W, ris, slack = initialize(ch, cfg, rng, mode=mode)
    else:
        W, ris = init
        slack = update_slack(ch, W, ris, cfg)
    update_theta = mode not in (BaselineMode.RANDOM_THETA, BaselineMode.ALL_AP) and ch.N > 0

    trace = IterationTrace([_record(0, ch, W, ris, slack, cfg, t0)])
    eta_prev = trace.records[0].eta
    for i in range(1, cfg.max_outer_iters + 1):
        slack = update_slack(ch, W, ris, cfg)
        W, _ = solve_beamforming(ch, ris, slack, W, cfg)
        if update_theta:
            ris, _ = solve_ris(ch, W, slack, ris, cfg)
        rec = _record(i, ch, W, ris, slack, cfg, t0)
        trace.records.append(rec)
        if eta_prev > 0 and abs(rec.eta - eta_prev) / eta_prev < cfg.tol_eta:
            trace.converged = True
            break
        eta_prev = rec.eta
    return OptimizeResult(W, ris, trace, cfg, mode)


def dinkelbach_residual(trace: IterationTrace, y_hat: float | None = None) -> float:
    """``|f1|`` at the last record.

    By default the multiplier is the one used in that iteration (the previous
    eta); pass ``y_hat`` to evaluate against another value.
    """
    rec = trace.records[-1]
    if y_hat is None:
        return abs(rec.f1)
    return abs(rec.sum_rate - y_hat * rec.power.total)
