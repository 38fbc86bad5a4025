"""SINR, rates, power consumption, energy efficiency and feasibility of a design point.

A beamformer is a plain ``(L*N_t, K)`` complex array ``W``; column k is the
precoder of user k and rows ``l*N_t:(l+1)*N_t`` are the block sent by AP l.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import ChannelSet, effective_channels
from .scenario import SelectionMask, SystemConfig


@dataclass(frozen=True, eq=False)
class RisState:
    """Physical reflection coefficients ``a_n`` of all N elements plus the active mask."""

    coeffs: np.ndarray
    mask: SelectionMask

    @property
    def active(self) -> np.ndarray:
        return self.mask.active

    def active_coeffs(self) -> np.ndarray:
        """Coefficients with passive entries zeroed (the diagonal of Psi)."""
        return np.where(self.mask.active, self.coeffs, 0.0)

    def amplitude_bounds(self, a_max: float) -> np.ndarray:
        return np.where(self.mask.active, a_max, 1.0)

    def with_coeffs(self, coeffs: np.ndarray) -> "RisState":
        return RisState(np.asarray(coeffs, dtype=complex), self.mask)


def ap_block(W: np.ndarray, l: int, N_t: int) -> np.ndarray:
    return W[l * N_t:(l + 1) * N_t]


def ris_noise_power(ch: ChannelSet, ris: RisState, cfg: SystemConfig) -> np.ndarray:
    """Per-user effective RIS noise, summed over all surfaces: sigma_r^2 * ||f_k^H Psi||^2."""
    psi = ris.active_coeffs()
    return cfg.sigmar_sq * np.sum(np.abs(ch.F * psi[None, :]) ** 2, axis=1)


def received_powers(ch: ChannelSet, W: np.ndarray, ris: RisState) -> np.ndarray:
    """Matrix ``P[k, j] = |h_k^H w_j|^2``."""
    return np.abs(effective_channels(ch, ris) @ W) ** 2


def sinr_all(ch: ChannelSet, W: np.ndarray, ris: RisState, cfg: SystemConfig) -> np.ndarray:
    P = received_powers(ch, W, ris)
    signal = np.diag(P)
    interference = P.sum(axis=1) - signal
    return signal / (interference + ris_noise_power(ch, ris, cfg) + cfg.sigma0_sq)


def sinr(ch: ChannelSet, W: np.ndarray, ris: RisState, k: int, cfg: SystemConfig) -> float:
    return float(sinr_all(ch, W, ris, cfg)[k])


def rate_from_sinr(gamma):
    return np.log1p(np.asarray(gamma)) / np.log(2.0)


def user_rates(ch, W, ris, cfg) -> np.ndarray:
    return rate_from_sinr(sinr_all(ch, W, ris, cfg))


def user_rate(ch, W, ris, k, cfg) -> float:
    return float(user_rates(ch, W, ris, cfg)[k])


def sum_rate(ch, W, ris, cfg) -> float:
    return float(user_rates(ch, W, ris, cfg).sum())


def ap_tx_power(W: np.ndarray, l: int, cfg: SystemConfig) -> float:
    Wl = ap_block(W, l, cfg.N_t)
    return float(np.real(np.trace(Wl.conj().T @ Wl)) / cfg.mu_A)


def ap_tx_powers(W: np.ndarray, cfg: SystemConfig) -> np.ndarray:
    L = W.shape[0] // cfg.N_t
    per_row = np.sum(np.abs(W) ** 2, axis=1)
    return per_row.reshape(L, cfg.N_t).sum(axis=1) / cfg.mu_A


def ris_tx_power(ch: ChannelSet, W: np.ndarray, ris: RisState, r: int, cfg: SystemConfig) -> float:
    blk = ris.mask.block(r)
    psi = ris.active_coeffs()[blk]
    Gr = ch.G[blk]
    PsiGW = psi[:, None] * (Gr @ W)
    amplified = np.real(np.trace(PsiGW.conj().T @ PsiGW))
    noise = cfg.sigmar_sq * np.sum(np.abs(psi) ** 2)
    return float((amplified + noise) / cfg.mu_R)


def ris_tx_powers(ch, W, ris, cfg) -> np.ndarray:
    return np.array([ris_tx_power(ch, W, ris, r, cfg) for r in range(ris.mask.R)])


def circuit_power(cfg: SystemConfig, mask: SelectionMask) -> float:
    n_act = mask.n_active
    n_pass = mask.active.size - n_act
    return cfg.L * cfg.Pc_A + n_act * cfg.Pc_act + n_pass * cfg.Pc_pass + cfg.K * cfg.Pc_U


@dataclass(frozen=True, eq=False)
class PowerBreakdown:
    ap_tx: np.ndarray
    ris_tx: np.ndarray
    circuit: float
    total: float


def total_power(ch, W, ris, cfg) -> PowerBreakdown:
    ap = ap_tx_powers(W, cfg)
    rp = ris_tx_powers(ch, W, ris, cfg)
    circ = circuit_power(cfg, ris.mask)
    return PowerBreakdown(ap, rp, circ, float(ap.sum() + rp.sum() + circ))


def energy_efficiency(ch, W, ris, cfg) -> float:
    """Sum rate over total consumed power, bits/Joule/Hz."""
    return sum_rate(ch, W, ris, cfg) / total_power(ch, W, ris, cfg).total


@dataclass(frozen=True, eq=False)
class FeasibilityReport:
    """Signed violations in natural units; positive means violated."""

    ap_power: np.ndarray          # W, per AP
    phase: np.ndarray             # always zero: phases are represented modulo 2*pi
    amplitude_active: np.ndarray  # amplitude units, active elements only
    amplitude_passive: np.ndarray  # amplitude units, passive elements only
    rate: np.ndarray              # bits/s/Hz, per user
    ris_power: np.ndarray         # W, per RIS
    tol: float

    @property
    def max_violation(self) -> float:
        parts = [self.ap_power, self.amplitude_active, self.amplitude_passive,
                 self.rate, self.ris_power, self.phase]
        return max((float(p.max()) for p in parts if p.size), default=0.0)

    @property
    def feasible(self) -> bool:
        return self.max_violation <= self.tol


def check_feasibility(ch, W, ris: RisState, cfg: SystemConfig) -> FeasibilityReport:
    amp = np.abs(ris.coeffs)
    act = ris.mask.active
    return FeasibilityReport(
        ap_power=ap_tx_powers(W, cfg) - cfg.P_max_A,
        phase=np.zeros(amp.size),
        amplitude_active=amp[act] - cfg.a_max,
        amplitude_passive=amp[~act] - 1.0,
        rate=cfg.R_th - user_rates(ch, W, ris, cfg),
        ris_power=ris_tx_powers(ch, W, ris, cfg) - cfg.P_max_R,
        tol=cfg.tol_feas,
    )
