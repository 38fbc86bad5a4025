"""Fractional-programming reformulations of the energy-efficiency objective.

The chain is Dinkelbach (scalar ``y_hat``), Lagrangian dual (per-user
``eps_hat``) and quadratic transform (per-user complex ``rho_hat``).  The
ratio terms of f2/f3/f4 are written in natural log and divided by ln 2, so

* f2(eps_hat = gamma) == f1 exactly, and
* f3(rho_hat optimal) == f2 - sum(log(1+eps) - eps) / ln 2,

while the closed-form updates stay exact stationary points.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import ChannelSet, effective_channels, to_theta
from .metrics import (RisState, ap_tx_powers, circuit_power, received_powers,
                      ris_noise_power, sinr_all, sum_rate, total_power)
from .scenario import SelectionMask, SystemConfig

LN2 = np.log(2.0)


@dataclass(frozen=True, eq=False)
class SlackState:
    y_hat: float
    eps_hat: np.ndarray
    rho_hat: np.ndarray


# --------------------------------------------------------------------------
# closed-form slack updates
# --------------------------------------------------------------------------

def update_y(ch, W, ris, cfg) -> float:
    return sum_rate(ch, W, ris, cfg) / total_power(ch, W, ris, cfg).total


def update_epsilon(ch, W, ris, cfg) -> np.ndarray:
    return sinr_all(ch, W, ris, cfg)


def _denominators(ch, W, ris, cfg) -> np.ndarray:
    """Total received power of user k: all streams + RIS noise + AWGN."""
    return received_powers(ch, W, ris).sum(axis=1) + ris_noise_power(ch, ris, cfg) + cfg.sigma0_sq


def update_rho(ch, W, ris, eps_hat, cfg) -> np.ndarray:
    signal = np.einsum("km,mk->k", effective_channels(ch, ris), W)
    return np.sqrt(1.0 + np.asarray(eps_hat)) * signal / _denominators(ch, W, ris, cfg)


def update_slack(ch, W, ris, cfg) -> SlackState:
    """Slack updates of one outer iteration: y, then eps, then rho."""
    y = update_y(ch, W, ris, cfg)
    eps = update_epsilon(ch, W, ris, cfg)
    return SlackState(y, eps, update_rho(ch, W, ris, eps, cfg))


# --------------------------------------------------------------------------
# objective surrogates
# --------------------------------------------------------------------------

def eval_f1(ch, W, ris, y_hat, cfg) -> float:
    return sum_rate(ch, W, ris, cfg) - y_hat * total_power(ch, W, ris, cfg).total


def eval_f2(ch, W, ris, y_hat, eps_hat, cfg) -> float:
    g = sinr_all(ch, W, ris, cfg)
    e = np.asarray(eps_hat)
    ratio = np.sum(np.log1p(e) - e + (1.0 + e) * g / (1.0 + g)) / LN2
    return float(ratio - y_hat * total_power(ch, W, ris, cfg).total)


def f3_ratio_terms(ch, W, ris, slack: SlackState, cfg) -> np.ndarray:
    """Per-user quadratic-transform terms, natural-log units (not divided by ln 2)."""
    signal = np.einsum("km,mk->k", effective_channels(ch, ris), W)
    rho = slack.rho_hat
    return (2.0 * np.sqrt(1.0 + slack.eps_hat) * np.real(np.conj(rho) * signal)
            - np.abs(rho) ** 2 * _denominators(ch, W, ris, cfg))


def eval_f3(ch, W, ris, slack: SlackState, cfg) -> float:
    qt = f3_ratio_terms(ch, W, ris, slack, cfg).sum() / LN2
    return float(qt - slack.y_hat * total_power(ch, W, ris, cfg).total)


def f3_constant(eps_hat) -> float:
    """The slack-only part separating f2 from f3 at the optimal rho."""
    e = np.asarray(eps_hat)
    return float(np.sum(np.log1p(e) - e) / LN2)


# --------------------------------------------------------------------------
# quadratic forms in the RIS coefficient vector theta (= conj of coeffs)
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class QuadraticForms:
    """Snapshot of all theta-quadratic forms for one fixed beamformer.

    ``|h_k^H w_j|^2 = theta^H Q1[k,j] theta + 2 Re(theta^H Q2[k,j]) + Q3[k,j]``
    with ``Q1[k,j] = V[k,j] V[k,j]^H`` kept in factored form.
    """

    V: np.ndarray           # (K, K, N): diag(f_k^H) G w_j
    b: np.ndarray           # (K, K): d_k^H w_j
    Q2: np.ndarray          # (K, K, N)
    Q3: np.ndarray          # (K, K)
    noise_diag: np.ndarray  # (K, N): sigma_r^2 |f_k,n|^2 on active n, summed over surfaces
    H: np.ndarray           # (N,): diagonals of G_r W W^H G_r^H for all r
    mask: SelectionMask

    def Q1(self, k: int, j: int) -> np.ndarray:
        v = self.V[k, j]
        return np.outer(v, v.conj())

    def H_r(self, r: int) -> np.ndarray:
        return np.diag(self.H[self.mask.block(r)])

    def noise_diag_rk(self, r: int, k: int) -> np.ndarray:
        out = np.zeros_like(self.noise_diag[k])
        blk = self.mask.block(r)
        out[blk] = self.noise_diag[k, blk]
        return out

    def link_power(self, theta: np.ndarray) -> np.ndarray:
        """``P[k, j] = |h_k^H w_j|^2`` evaluated through the quadratic forms."""
        proj = np.einsum("n,kjn->kj", theta.conj(), self.V)
        return (np.abs(proj) ** 2 + 2.0 * np.real(np.einsum("n,kjn->kj", theta.conj(), self.Q2))
                + self.Q3)

    def noise(self, theta: np.ndarray) -> np.ndarray:
        return self.noise_diag @ (np.abs(theta) ** 2)

    def ris_power(self, theta: np.ndarray, r: int, cfg: SystemConfig) -> float:
        blk = self.mask.block(r)
        act = self.mask.active[blk]
        t2 = np.abs(theta[blk]) ** 2 * act
        return float((self.H[blk] @ t2 + cfg.sigmar_sq * t2.sum()) / cfg.mu_R)


def build_quadratic_forms(ch: ChannelSet, W: np.ndarray, mask: SelectionMask,
                          cfg: SystemConfig) -> QuadraticForms:
    GW = ch.G @ W                                    # (N, K)
    V = ch.F[:, None, :] * GW.T[None, :, :]          # (K, K, N)
    b = ch.D @ W                                     # (K, K)
    Q2 = V * np.conj(b)[:, :, None]
    Q3 = np.abs(b) ** 2
    noise_diag = cfg.sigmar_sq * np.abs(ch.F) ** 2 * mask.active[None, :]
    H = np.sum(np.abs(GW) ** 2, axis=1)
    return QuadraticForms(V, b, Q2, Q3, noise_diag, H, mask)


def eval_f4(ch: ChannelSet, theta: np.ndarray, W_prev: np.ndarray, slack: SlackState,
            mask: SelectionMask, cfg: SystemConfig, qf: QuadraticForms | None = None) -> float:
    """f3 written as an explicit function of theta for a frozen beamformer."""
    if qf is None:
        qf = build_quadratic_forms(ch, W_prev, mask, cfg)
    K = qf.b.shape[0]
    rho, eps = slack.rho_hat, slack.eps_hat
    idx = np.arange(K)
    signal = qf.b[idx, idx] + np.einsum("n,kn->k", theta.conj(), qf.V[idx, idx])
    link = qf.link_power(theta)
    denom = link.sum(axis=1) + qf.noise(theta) + cfg.sigma0_sq
    qt = np.sum(2.0 * np.sqrt(1.0 + eps) * np.real(np.conj(rho) * signal)
                - np.abs(rho) ** 2 * denom) / LN2
    p_ris = sum(qf.ris_power(theta, r, cfg) for r in range(mask.R))
    p_tot = p_ris + ap_tx_powers(W_prev, cfg).sum() + circuit_power(cfg, mask)
    return float(qt - slack.y_hat * p_tot)


def eval_f4_at(ch, ris: RisState, W_prev, slack, cfg) -> float:
    return eval_f4(ch, to_theta(ris.coeffs), W_prev, slack, ris.mask, cfg)


# --------------------------------------------------------------------------
# power constraints as quadratic operators on vec(W)
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class KronOperator:
    """``scale * vec(W)^H (I_K kron block) vec(W) + offset`` applied without forming the Kronecker."""

    block: np.ndarray
    K: int
    scale: float
    offset: float = 0.0

    def apply(self, x: np.ndarray) -> np.ndarray:
        m = self.block.shape[0]
        Wm = x.reshape(self.K, m).T
        return self.scale * (self.block @ Wm).T.reshape(-1)

    def value(self, W: np.ndarray) -> float:
        x = W.T.reshape(-1)
        return float(np.real(np.vdot(x, self.apply(x))) + self.offset)

    def dense(self) -> np.ndarray:
        return self.scale * np.kron(np.eye(self.K), self.block)


def vec(W: np.ndarray) -> np.ndarray:
    """Column-stacking vectorisation."""
    return W.T.reshape(-1)


def unvec(x: np.ndarray, K: int) -> np.ndarray:
    return x.reshape(K, -1).T


def kron_power_operators(ch: ChannelSet, ris: RisState, cfg: SystemConfig, K: int | None = None):
    """Per-AP and per-RIS transmit-power operators; returns ``(ap_ops, ris_ops)``."""
    K = ch.K if K is None else K
    M = ch.M
    L = M // cfg.N_t
    ap_ops = []
    for l in range(L):
        sel = np.zeros(M)
        sel[l * cfg.N_t:(l + 1) * cfg.N_t] = 1.0
        ap_ops.append(KronOperator(np.diag(sel).astype(complex), K, 1.0 / cfg.mu_A))
    ris_ops = []
    psi = ris.active_coeffs()
    for r in range(ris.mask.R):
        blk = ris.mask.block(r)
        PG = psi[blk, None] * ch.G[blk]
        B = PG.conj().T @ PG
        offset = cfg.sigmar_sq * np.sum(np.abs(psi[blk]) ** 2) / cfg.mu_R
        ris_ops.append(KronOperator(B, K, 1.0 / cfg.mu_R, offset))
    return ap_ops, ris_ops


# --------------------------------------------------------------------------
# first-order minorants of the convex signal power used by the rate constraints
# --------------------------------------------------------------------------

def signal_minorant_w(h: np.ndarray, w: np.ndarray, w_ref: np.ndarray) -> float:
    """``2 Re{(h^H w_ref)^* h^H w} - |h^H w_ref|^2 <= |h^H w|^2``; ``h`` is the row h^H."""
    s_ref = h @ w_ref
    return float(2.0 * np.real(np.conj(s_ref) * (h @ w)) - abs(s_ref) ** 2)


def signal_minorant_theta(Q1: np.ndarray, Q2: np.ndarray, Q3: float,
                          theta: np.ndarray, theta_ref: np.ndarray) -> float:
    """Linearisation of ``theta^H Q1 theta`` at ``theta_ref`` plus the exact affine part."""
    return float(2.0 * np.real(theta_ref.conj() @ Q1 @ theta)
                 - np.real(theta_ref.conj() @ Q1 @ theta_ref)
                 + 2.0 * np.real(theta.conj() @ Q2) + Q3)
