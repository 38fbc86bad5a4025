"""The beamforming and RIS-coefficient blocks cast as :class:`ConvexQcqp` instances.

Both objectives equal the quadratic-transform surrogate (``eval_f3`` / ``eval_f4``)
exactly, constant included.  Constraints are normalised before being handed to
the solver: power constraints are divided by their budget and the linearised
rate constraints by the AWGN power, so solver tolerances are relative.
"""

from __future__ import annotations

import logging

import numpy as np

from ..channel import ChannelSet, effective_channels, from_theta, to_theta
from ..metrics import RisState, ap_tx_powers, circuit_power, ris_noise_power
from ..scenario import SystemConfig
from ..transforms import LN2, SlackState, build_quadratic_forms, kron_power_operators, unvec, vec
from .qcqp import ConvexQcqp, QuadConstraint, SolveResult, Status, solve_qcqp

log = logging.getLogger(__name__)


class SubproblemInfeasible(RuntimeError):
    pass


def _solve(p: ConvexQcqp, x0: np.ndarray, cfg: SystemConfig, what: str) -> SolveResult:
    res = solve_qcqp(p, x0, tol_feas=cfg.tol_feas, tol_kkt=cfg.tol_kkt, max_iters=cfg.solver_max_iters)
    if res.status is Status.INFEASIBLE:
        raise SubproblemInfeasible(f"{what}: no strictly feasible point found")
    if res.status is Status.MAX_ITERS:
        log.debug("%s: solver stopped at MaxIters (stationarity %.2e)", what, res.stationarity)
    return res


# --------------------------------------------------------------------------
# beamforming block, x = vec(W)
# --------------------------------------------------------------------------

def beamforming_qcqp(ch: ChannelSet, ris: RisState, slack: SlackState, W_ref: np.ndarray,
                     cfg: SystemConfig, rate_constraints: bool = True) -> ConvexQcqp:
    """Concave f3 in W with per-AP / per-RIS power limits and rate constraints linearised at ``W_ref``."""
    Hrows = effective_channels(ch, ris)               # row k = h_k^H
    K, M = Hrows.shape
    rho, eps, y = slack.rho_hat, slack.eps_hat, slack.y_hat
    ap_ops, ris_ops = kron_power_operators(ch, ris, cfg, K)

    outer = np.einsum("km,kn->kmn", Hrows.conj(), Hrows)   # h_k h_k^H
    A = np.tensordot(np.abs(rho) ** 2, outer, axes=1) / LN2 + (y / cfg.mu_A) * np.eye(M)
    for op in ris_ops:
        A = A + y * op.scale * op.block
    A = 0.5 * (A + A.conj().T)
    c = (np.sqrt(1.0 + eps) * rho)[:, None] * Hrows.conj() / LN2
    noise = ris_noise_power(ch, ris, cfg)
    const = (-np.sum(np.abs(rho) ** 2 * (noise + cfg.sigma0_sq)) / LN2
             - y * (circuit_power(cfg, ris.mask) + sum(op.offset for op in ris_ops)))

    cons = []
    for l, op in enumerate(ap_ops):
        cons.append(QuadConstraint(op.dense() / cfg.P_max_A, np.zeros(M * K), -1.0, f"ap{l}"))
    for r, op in enumerate(ris_ops):
        if not ris.mask.active_in(r).any():
            continue
        cons.append(QuadConstraint(op.dense() / cfg.P_max_R, np.zeros(M * K),
                                   op.offset / cfg.P_max_R - 1.0, f"ris{r}"))
    g_th = cfg.gamma_th
    if rate_constraints and g_th > 0:
        s = cfg.sigma0_sq
        ref = np.einsum("km,mk->k", Hrows, W_ref)
        for k in range(K):
            P = np.zeros((M * K, M * K), dtype=complex)
            for j in range(K):
                if j != k:
                    P[j * M:(j + 1) * M, j * M:(j + 1) * M] = g_th * outer[k] / s
            q = np.zeros(M * K, dtype=complex)
            q[k * M:(k + 1) * M] = -Hrows[k].conj() * ref[k] / s
            r = (g_th * (noise[k] + s) + abs(ref[k]) ** 2) / s
            cons.append(QuadConstraint(P, q, r, f"rate{k}"))

    Mfull = np.kron(np.eye(K), A)
    return ConvexQcqp(Mfull, vec(c.T), const, cons, None)


def solve_beamforming(ch, ris, slack, W_prev, cfg, rate_constraints: bool = True):
    """Returns ``(W, SolveResult)``; repeats the linearisation ``cfg.sca_inner_iters`` times."""
    K = W_prev.shape[1]
    W = W_prev
    res = None
    for _ in range(cfg.sca_inner_iters):
        p = beamforming_qcqp(ch, ris, slack, W, cfg, rate_constraints)
        res = _solve(p, vec(W), cfg, "beamforming")
        W = unvec(res.x, K)
    return W, res


# --------------------------------------------------------------------------
# RIS block, x = theta = conj(coeffs)
# --------------------------------------------------------------------------

def ris_qcqp(ch: ChannelSet, W: np.ndarray, slack: SlackState, ris_ref: RisState,
             cfg: SystemConfig, rate_constraints: bool = True) -> ConvexQcqp:
    """Concave f4 in theta with amplitude bounds, RIS power limits and linearised rate constraints."""
    mask = ris_ref.mask
    qf = build_quadratic_forms(ch, W, mask, cfg)
    K = qf.b.shape[0]
    N = mask.active.size
    rho, eps, y = slack.rho_hat, slack.eps_hat, slack.y_hat
    r2 = np.abs(rho) ** 2
    act = mask.active.astype(float)

    VV = np.einsum("kjn,kjm->kjnm", qf.V, qf.V.conj())     # Q1 for every (k, j)
    Msum = np.einsum("k,kjnm->nm", r2, VV) + np.diag(r2 @ qf.noise_diag)
    power_diag = act * (qf.H + cfg.sigmar_sq) / cfg.mu_R
    Mobj = Msum / LN2 + y * np.diag(power_diag)
    Mobj = 0.5 * (Mobj + Mobj.conj().T)
    idx = np.arange(K)
    c = ((np.sqrt(1.0 + eps) * np.conj(rho))[:, None] * qf.V[idx, idx]
         - r2[:, None] * qf.Q2.sum(axis=1)).sum(axis=0) / LN2
    const = (np.sum(2.0 * np.sqrt(1.0 + eps) * np.real(np.conj(rho) * qf.b[idx, idx])
                    - r2 * (qf.Q3.sum(axis=1) + cfg.sigma0_sq)) / LN2
             - y * (ap_tx_powers(W, cfg).sum() + circuit_power(cfg, mask)))

    cons = []
    for r in range(mask.R):
        sel = mask.active_in(r)
        if not sel.any():
            continue
        P = np.diag(np.where(sel, power_diag, 0.0) / cfg.P_max_R).astype(complex)
        cons.append(QuadConstraint(P, np.zeros(N), -1.0, f"ris{r}"))
    g_th = cfg.gamma_th
    if rate_constraints and g_th > 0:
        s = cfg.sigma0_sq
        t_ref = to_theta(ris_ref.coeffs)
        for k in range(K):
            others = [j for j in range(K) if j != k]
            P = g_th * (VV[k, others].sum(axis=0) + np.diag(qf.noise_diag[k])) / s
            Q1kk_ref = qf.V[k, k] * (qf.V[k, k].conj() @ t_ref)
            q = (g_th * qf.Q2[k, others].sum(axis=0) - Q1kk_ref - qf.Q2[k, k]) / s
            r = (g_th * (qf.Q3[k, others].sum() + s)
                 + abs(qf.V[k, k].conj() @ t_ref) ** 2 - qf.Q3[k, k]) / s
            cons.append(QuadConstraint(P, q, float(np.real(r)), f"rate{k}"))

    bounds = ris_ref.amplitude_bounds(cfg.a_max)
    return ConvexQcqp(Mobj, c, float(const), cons, bounds)


def solve_ris(ch, W, slack, ris_prev: RisState, cfg, rate_constraints: bool = True):
    """Returns ``(RisState, SolveResult)``."""
    ris = ris_prev
    res = None
    for _ in range(cfg.sca_inner_iters):
        p = ris_qcqp(ch, W, slack, ris, cfg, rate_constraints)
        res = _solve(p, to_theta(ris.coeffs), cfg, "ris")
        ris = ris.with_coeffs(from_theta(res.x))
    return ris, res
