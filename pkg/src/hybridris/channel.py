"""Rician link synthesis and the stacked channel matrices D, G, F.

Layout of the stacked matrices (AP l, RIS r, user k, all zero-based):

* ``D[k, l*N_t:(l+1)*N_t]``                     = d_{l,k}^H
* ``G[r*N_s:(r+1)*N_s, l*N_t:(l+1)*N_t]``        = G_{l,r}
* ``F[k, r*N_s:(r+1)*N_s]``                     = f_{r,k}^H

RIS coefficients are stored as the physical reflection coefficients ``a_n``.
The vector used by every quadratic form in the RIS sub-problem is their
elementwise conjugate; :func:`to_theta` / :func:`from_theta` are the only
places that convert between the two.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .scenario import NetworkGeometry, SystemConfig

_LINK_KIND = {"d": 0, "G": 1, "f": 2}


def to_theta(coeffs: np.ndarray) -> np.ndarray:
    return np.conj(coeffs)


def from_theta(theta: np.ndarray) -> np.ndarray:
    return np.conj(theta)


@dataclass(frozen=True, eq=False)
class ChannelSet:
    D: np.ndarray  # (K, L*N_t)
    G: np.ndarray  # (R*N_s, L*N_t)
    F: np.ndarray  # (K, R*N_s)

    @property
    def K(self) -> int:
        return self.D.shape[0]

    @property
    def M(self) -> int:
        return self.D.shape[1]

    @property
    def N(self) -> int:
        return self.F.shape[1]

    def save(self, path: str | Path) -> None:
        """Write an ``.npz`` fixture holding the three complex128 arrays D, G, F."""
        np.savez(path, D=self.D, G=self.G, F=self.F)

    @classmethod
    def load(cls, path: str | Path) -> "ChannelSet":
        with np.load(path) as z:
            ch = cls(D=z["D"], G=z["G"], F=z["F"])
        K, M = ch.D.shape
        if ch.G.shape[1] != M or ch.F.shape != (K, ch.G.shape[0]):
            raise ValueError(f"{path}: inconsistent channel shapes "
                             f"{ch.D.shape}, {ch.G.shape}, {ch.F.shape}")
        return ch


def path_gain(d, alpha: float, cfg: SystemConfig):
    """Linear large-scale gain ``C0 * (d / d0) ** -alpha``; distances below d0 are clamped."""
    d = np.asarray(d, dtype=float)
    if np.any(d < cfg.d0):
        warnings.warn(f"link distance below d0={cfg.d0} m clamped", RuntimeWarning, stacklevel=2)
        d = np.maximum(d, cfg.d0)
    g = cfg.C0 * (d / cfg.d0) ** (-alpha)
    return float(g) if g.ndim == 0 else g


def steering_vector(n: int, angle: float) -> np.ndarray:
    """Half-wavelength ULA along the x axis; ``angle`` measured from that axis."""
    return np.exp(1j * np.pi * np.arange(n) * np.cos(angle))


def rician_link(dim_rx: int, dim_tx: int, gain: float, beta: float,
                rng: np.random.Generator, los_spec: tuple[float, float] | None = None) -> np.ndarray:
    """One ``dim_rx x dim_tx`` Rician-faded link with average entry power ``gain``.

    ``los_spec = (arrival_angle, departure_angle)``; ``None`` draws both uniformly.
    The LOS part also carries a uniformly random common phase.
    """
    if gain <= 0 or beta < 0:
        raise ValueError("gain must be positive and beta non-negative")
    if los_spec is None:
        los_spec = tuple(rng.uniform(0.0, 2 * np.pi, size=2))
    aoa, aod = los_spec
    phase = np.exp(1j * rng.uniform(0.0, 2 * np.pi))
    los = phase * np.outer(steering_vector(dim_rx, aoa), steering_vector(dim_tx, aod).conj())
    nlos = (rng.standard_normal((dim_rx, dim_tx))
            + 1j * rng.standard_normal((dim_rx, dim_tx))) / np.sqrt(2.0)
    if np.isinf(beta):
        w_los, w_nlos = 1.0, 0.0
    else:
        w_los, w_nlos = np.sqrt(beta / (1 + beta)), np.sqrt(1 / (1 + beta))
    return np.sqrt(gain) * (w_los * los + w_nlos * nlos)


def link_rng(base_seed: int, kind: str, i: int, j: int) -> np.random.Generator:
    """Independent stream per link so any single link can be regenerated on its own."""
    ss = np.random.SeedSequence(base_seed, spawn_key=(_LINK_KIND[kind], i, j))
    return np.random.default_rng(ss)


def _angle(src: np.ndarray, dst: np.ndarray) -> float:
    v = dst - src
    return float(np.arctan2(v[1], v[0]))


def generate_link(cfg: SystemConfig, geometry: NetworkGeometry, base_seed: int,
                  kind: str, i: int, j: int) -> np.ndarray:
    """Draw one link.

    kind ``"d"``: AP i -> user j, shape (1, N_t).
    kind ``"G"``: AP i -> RIS j, shape (N_s, N_t).
    kind ``"f"``: RIS i -> user j, shape (1, N_s).
    """
    if kind == "d":
        tx, rx, n_tx, n_rx, alpha = geometry.ap_positions[i], geometry.user_positions[j], cfg.N_t, 1, cfg.alpha_d
    elif kind == "G":
        tx, rx, n_tx, n_rx, alpha = geometry.ap_positions[i], geometry.ris_positions[j], cfg.N_t, cfg.N_s, cfg.alpha_G
    elif kind == "f":
        tx, rx, n_tx, n_rx, alpha = geometry.ris_positions[i], geometry.user_positions[j], cfg.N_s, 1, cfg.alpha_f
    else:
        raise ValueError(f"unknown link kind {kind!r}")
    gain = path_gain(np.linalg.norm(rx - tx), alpha, cfg)
    los = (_angle(rx, tx), _angle(tx, rx))
    return rician_link(n_rx, n_tx, gain, cfg.beta, link_rng(base_seed, kind, i, j), los)


def synthesize_channels(cfg: SystemConfig, geometry: NetworkGeometry,
                        rng: np.random.Generator) -> ChannelSet:
    base_seed = int(rng.integers(0, 2**63))
    L, R, K = len(geometry.ap_positions), len(geometry.ris_positions), len(geometry.user_positions)
    Nt, Ns = cfg.N_t, cfg.N_s
    D = np.zeros((K, L * Nt), dtype=complex)
    G = np.zeros((R * Ns, L * Nt), dtype=complex)
    F = np.zeros((K, R * Ns), dtype=complex)
    for l in range(L):
        for k in range(K):
            D[k, l * Nt:(l + 1) * Nt] = generate_link(cfg, geometry, base_seed, "d", l, k)[0]
        for r in range(R):
            G[r * Ns:(r + 1) * Ns, l * Nt:(l + 1) * Nt] = generate_link(cfg, geometry, base_seed, "G", l, r)
    for r in range(R):
        for k in range(K):
            F[k, r * Ns:(r + 1) * Ns] = generate_link(cfg, geometry, base_seed, "f", r, k)[0]
    return ChannelSet(D, G, F)


def _coeffs(ris) -> np.ndarray:
    return getattr(ris, "coeffs", ris)


def effective_channels(ch: ChannelSet, ris) -> np.ndarray:
    """All effective channels stacked as rows: ``D + theta^H diag(f_k^H) G`` for each k."""
    a = _coeffs(ris)
    return ch.D + (ch.F * a[None, :]) @ ch.G


def effective_channel(ch: ChannelSet, ris, k: int) -> np.ndarray:
    theta = to_theta(_coeffs(ris))
    return ch.D[k] + (theta.conj() * ch.F[k]) @ ch.G
