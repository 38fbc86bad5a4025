"""System configuration, node placement and the active-element selection mask.

All quantities held by :class:`SystemConfig` are linear (watts, linear gains).
Decibel units only exist at the config-file boundary, see :func:`load_config`.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml


def db2lin(x_db: float) -> float:
    return 10.0 ** (x_db / 10.0)


def lin2db(x: float) -> float:
    return 10.0 * math.log10(x)


def dbm2watt(x_dbm: float) -> float:
    return 10.0 ** ((x_dbm - 30.0) / 10.0)


def watt2dbm(x: float) -> float:
    return 10.0 * math.log10(x) + 30.0


@dataclass(frozen=True)
class SystemConfig:
    # network size
    L: int = 4
    N_t: int = 6
    R: int = 2
    N_s: int = 80
    N_a: int = 3
    K: int = 4
    area_side: float = 200.0
    # budgets and hardware
    P_max_A: float = 0.1         # W (20 dBm)
    P_max_R: float = 0.01        # W (10 dBm)
    a_max: float = 10.0          # amplitude, i.e. 20 dB power gain
    sigma0_sq: float = 1e-11     # W (-80 dBm)
    sigmar_sq: float = dbm2watt(-76.0)
    mu_A: float = 0.8
    mu_R: float = 0.8
    R_th: float = 1.0            # bits/s/Hz ("0 dB" read as a factor of one)
    # propagation
    beta: float = db2lin(3.0)
    C0: float = 1e-3             # -30 dB at d0
    d0: float = 1.0
    alpha_d: float = 2.8
    alpha_G: float = 2.2
    alpha_f: float = 2.2
    # circuit power, W
    Pc_A: float = 0.1
    Pc_pass: float = 0.01
    Pc_act: float = 0.025
    Pc_U: float = 0.01
    # algorithm
    seed: int = 0
    max_outer_iters: int = 30
    tol_eta: float = 1e-4
    tol_feas: float = 1e-7
    tol_kkt: float = 1e-6
    solver_max_iters: int = 5000
    sca_inner_iters: int = 1     # >1 repeats each block update around a fresh expansion point

    @property
    def N(self) -> int:
        return self.R * self.N_s

    @property
    def gamma_th(self) -> float:
        return 2.0 ** self.R_th - 1.0

    def replace(self, **changes) -> "SystemConfig":
        return dataclasses.replace(self, **changes)


def paper_config(**overrides) -> SystemConfig:
    """Full-size network of the reference experiments (N_s = 80, N_a = 3)."""
    return SystemConfig().replace(**overrides)


def ci_config(**overrides) -> SystemConfig:
    """Desk-scale network used by the test-suite and the ``ci`` profile (AP budget 10 dBm)."""
    base = SystemConfig(L=2, N_t=2, K=2, R=2, N_s=16, N_a=2, P_max_A=0.01)
    return base.replace(**overrides)


PROFILES = {"ci": ci_config, "paper": paper_config}


@dataclass
class ValidationReport:
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok


def validate_config(cfg: SystemConfig) -> ValidationReport:
    """Collect every violated invariant of ``cfg`` without raising."""
    bad = []
    for name in ("L", "N_t", "R", "N_s", "N_a", "K"):
        if getattr(cfg, name) < 1:
            bad.append(f"{name} must be at least 1")
    if cfg.N_a > cfg.N_s:
        bad.append("N_a exceeds N_s")
    for name in ("mu_A", "mu_R"):
        v = getattr(cfg, name)
        if not 0.0 < v <= 1.0:
            bad.append(f"{name}: amplifier efficiency must be in (0,1]")
    if cfg.a_max < 1.0:
        bad.append("a_max must be at least 1")
    for name in ("P_max_A", "P_max_R", "sigma0_sq", "sigmar_sq", "Pc_A",
                 "Pc_pass", "Pc_act", "Pc_U", "C0", "d0", "area_side"):
        if not getattr(cfg, name) > 0.0:
            bad.append(f"{name} must be strictly positive")
    if cfg.R_th < 0.0:
        bad.append("R_th must be non-negative")
    if cfg.beta < 0.0:
        bad.append("beta must be non-negative")
    if cfg.max_outer_iters < 1 or cfg.solver_max_iters < 1 or cfg.sca_inner_iters < 1:
        bad.append("iteration limits must be at least 1")
    for name in ("tol_eta", "tol_feas", "tol_kkt"):
        if not getattr(cfg, name) > 0.0:
            bad.append(f"{name} must be strictly positive")
    return ValidationReport(bad)


# --------------------------------------------------------------------------
# config files
# --------------------------------------------------------------------------

# file key -> (field, converter from file units to internal units)
_FILE_KEYS = {
    "L": ("L", int),
    "N_t": ("N_t", int),
    "R": ("R", int),
    "N_s": ("N_s", int),
    "N_a": ("N_a", int),
    "K": ("K", int),
    "area_side_m": ("area_side", float),
    "P_max_A_dBm": ("P_max_A", dbm2watt),
    "P_max_R_dBm": ("P_max_R", dbm2watt),
    "a_max": ("a_max", float),
    "sigma0_sq_dBm": ("sigma0_sq", dbm2watt),
    "sigmar_sq_dBm": ("sigmar_sq", dbm2watt),
    "mu_A": ("mu_A", float),
    "mu_R": ("mu_R", float),
    "R_th": ("R_th", float),
    "beta_dB": ("beta", db2lin),
    "C0_dB": ("C0", db2lin),
    "d0_m": ("d0", float),
    "alpha_d": ("alpha_d", float),
    "alpha_G": ("alpha_G", float),
    "alpha_f": ("alpha_f", float),
    "Pc_A_dBm": ("Pc_A", dbm2watt),
    "Pc_pass_dBm": ("Pc_pass", dbm2watt),
    "Pc_act_dBm": ("Pc_act", dbm2watt),
    "Pc_U_dBm": ("Pc_U", dbm2watt),
    "seed": ("seed", int),
    "max_outer_iters": ("max_outer_iters", int),
    "tol_eta": ("tol_eta", float),
    "tol_feas": ("tol_feas", float),
    "tol_kkt": ("tol_kkt", float),
    "solver_max_iters": ("solver_max_iters", int),
    "sca_inner_iters": ("sca_inner_iters", int),
}

_TO_FILE = {
    dbm2watt: watt2dbm,
    db2lin: lin2db,
    int: int,
    float: float,
}


class ConfigError(ValueError):
    pass


def config_from_mapping(data: dict, base: SystemConfig | None = None) -> SystemConfig:
    """Build a config from file-unit keys; unknown keys raise :class:`ConfigError`."""
    unknown = sorted(set(data) - set(_FILE_KEYS))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    changes = {}
    for key, value in data.items():
        name, conv = _FILE_KEYS[key]
        try:
            changes[name] = conv(value)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {key!r}: {value!r}") from exc
    return (base or SystemConfig()).replace(**changes)


def config_to_mapping(cfg: SystemConfig) -> dict:
    out = {}
    for key, (name, conv) in _FILE_KEYS.items():
        value = _TO_FILE[conv](getattr(cfg, name))
        out[key] = round(value, 12) if isinstance(value, float) else value
    return out


def load_config(path: str | Path, base: SystemConfig | None = None) -> SystemConfig:
    """Load a flat YAML document; keys omitted from the file keep ``base`` values."""
    with open(path) as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a flat key/value document")
    nested = [k for k, v in data.items() if isinstance(v, (dict, list))]
    if nested:
        raise ConfigError(f"{path}: nested values not allowed ({', '.join(nested)})")
    return config_from_mapping(data, base)


def save_config(cfg: SystemConfig, path: str | Path) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(config_to_mapping(cfg), fh, sort_keys=False)


# --------------------------------------------------------------------------
# geometry
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class NetworkGeometry:
    ap_positions: np.ndarray    # (L, 2)
    ris_positions: np.ndarray   # (R, 2)
    user_positions: np.ndarray  # (K, 2)


def ap_grid(n: int, side: float) -> np.ndarray:
    """Centers of an (almost) square grid of ``n`` cells, column-major."""
    cols = math.ceil(math.sqrt(n))
    rows = math.ceil(n / cols)
    pts = []
    for c in range(cols):
        for r in range(rows):
            pts.append(((c + 0.5) * side / cols, (r + 0.5) * side / rows))
    return np.array(pts[:n], dtype=float)


def ris_edge_positions(n: int, side: float) -> np.ndarray:
    """RISs alternate between the bottom (y=0) and top (y=side) edges, evenly spaced in x."""
    pts = np.zeros((n, 2))
    for edge in (0, 1):
        idx = np.arange(edge, n, 2)
        if idx.size:
            pts[idx, 0] = (np.arange(idx.size) + 0.5) * side / idx.size
            pts[idx, 1] = edge * side
    return pts


def place_nodes(cfg: SystemConfig, rng: np.random.Generator) -> NetworkGeometry:
    users = rng.uniform(0.0, cfg.area_side, size=(cfg.K, 2))
    return NetworkGeometry(
        ap_positions=ap_grid(cfg.L, cfg.area_side),
        ris_positions=ris_edge_positions(cfg.R, cfg.area_side),
        user_positions=users,
    )


# --------------------------------------------------------------------------
# active-element selection
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SelectionMask:
    active: np.ndarray  # bool, length R*N_s
    N_s: int

    @property
    def R(self) -> int:
        return self.active.size // self.N_s if self.N_s else 0

    @property
    def n_active(self) -> int:
        return int(self.active.sum())

    def block(self, r: int) -> slice:
        return slice(r * self.N_s, (r + 1) * self.N_s)

    def active_in(self, r: int) -> np.ndarray:
        """Boolean mask over all N elements restricted to RIS ``r``."""
        out = np.zeros_like(self.active)
        out[self.block(r)] = self.active[self.block(r)]
        return out


def build_selection_mask(cfg: SystemConfig, n_active: int | None = None) -> SelectionMask:
    """First ``n_active`` (default ``cfg.N_a``) elements of every RIS are active.

    ``n_active=0`` gives the fully passive surface, ``n_active=N_s`` the fully active one.
    """
    na = cfg.N_a if n_active is None else n_active
    if not 0 <= na <= cfg.N_s:
        raise ValueError(f"n_active={na} outside [0, {cfg.N_s}]")
    block = np.zeros(cfg.N_s, dtype=bool)
    block[:na] = True
    return SelectionMask(np.tile(block, cfg.R), cfg.N_s)
