"""Convex complex QCQP solver.

Canonical problem::

    maximize    const + 2 Re(c^H x) - x^H M x
    subject to  x^H P_i x + 2 Re(x^H q_i) + r_i <= 0     for every constraint i
                |x_n| <= u_n                              for every bounded coordinate n

with M and every P_i Hermitian PSD.  The problem is mapped to real
coordinates ``z = [Re x; Im x]`` and solved with a primal log-barrier
method (damped Newton centering, geometric increase of the barrier weight).
A phase-I search supplies a strictly feasible start when the warm start
sits on, or outside, the boundary.  Iterates are strictly feasible, so a
returned ``Optimal`` point never violates a constraint.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as sla
from scipy.optimize import nnls

PSD_RTOL = 1e-9


class Status(enum.Enum):
    OPTIMAL = "Optimal"
    MAX_ITERS = "MaxIters"
    INFEASIBLE = "Infeasible"


class NotPSDError(ValueError):
    pass


def _as_dense(op) -> np.ndarray:
    return op.dense() if hasattr(op, "dense") else np.asarray(op, dtype=complex)


def check_psd(A: np.ndarray, name: str = "operator") -> None:
    if not np.allclose(A, A.conj().T, rtol=0, atol=1e-12 * max(1.0, np.abs(A).max(initial=0.0))):
        raise NotPSDError(f"{name} is not Hermitian")
    if A.size == 0:
        return
    norm = np.abs(A).max()
    if norm == 0.0:
        return
    lam_min = np.linalg.eigvalsh(A)[0]
    if lam_min < -PSD_RTOL * np.linalg.norm(A, 2):
        raise NotPSDError(f"{name} has eigenvalue {lam_min:.3e} < 0")


@dataclass(eq=False)
class QuadConstraint:
    """``x^H P x + 2 Re(x^H q) + r <= 0``."""

    P: np.ndarray
    q: np.ndarray
    r: float
    name: str = ""

    def value(self, x: np.ndarray) -> float:
        return float(np.real(np.vdot(x, self.P @ x)) + 2.0 * np.real(np.vdot(x, self.q)) + self.r)


@dataclass(eq=False)
class ConvexQcqp:
    M: np.ndarray
    c: np.ndarray
    const: float = 0.0
    constraints: list[QuadConstraint] = field(default_factory=list)
    bounds: np.ndarray | None = None   # per-coordinate magnitude bound, np.inf for none
    verify: bool = True

    def __post_init__(self):
        self.M = _as_dense(self.M)
        self.c = np.asarray(self.c, dtype=complex)
        n = self.c.size
        if self.M.shape != (n, n):
            raise ValueError(f"objective curvature has shape {self.M.shape}, expected {(n, n)}")
        for con in self.constraints:
            con.P = _as_dense(con.P)
            con.q = np.asarray(con.q, dtype=complex)
            if con.P.shape != (n, n) or con.q.shape != (n,):
                raise ValueError(f"constraint {con.name!r} has inconsistent shape")
        if self.bounds is not None:
            self.bounds = np.broadcast_to(np.asarray(self.bounds, dtype=float), (n,)).copy()
            if np.any(self.bounds < 0):
                raise ValueError("magnitude bounds must be non-negative")
        if self.verify:
            check_psd(self.M, "objective curvature")
            for i, con in enumerate(self.constraints):
                check_psd(con.P, f"constraint {con.name or i}")

    @property
    def n(self) -> int:
        return self.c.size

    def objective(self, x: np.ndarray) -> float:
        return float(self.const + 2.0 * np.real(np.vdot(self.c, x)) - np.real(np.vdot(x, self.M @ x)))

    def violations(self, x: np.ndarray) -> np.ndarray:
        vals = [con.value(x) for con in self.constraints]
        if self.bounds is not None:
            fin = np.isfinite(self.bounds)
            vals.extend(np.abs(x[fin]) - self.bounds[fin])
        return np.array(vals, dtype=float)

    def max_violation(self, x: np.ndarray) -> float:
        v = self.violations(x)
        return float(max(0.0, v.max())) if v.size else 0.0


@dataclass(eq=False)
class SolveResult:
    x: np.ndarray
    objective: float
    feasibility: float
    stationarity: float
    iterations: int
    status: Status
    history: list[dict] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.status is Status.OPTIMAL


def write_residual_log(result: SolveResult, path: str | Path) -> None:
    """One whitespace-separated record per barrier stage: stage, t, newton, gap, stationarity."""
    with open(path, "w") as fh:
        fh.write("stage t newton_steps gap stationarity\n")
        for rec in result.history:
            fh.write(f"{rec['stage']} {rec['t']:.6e} {rec['newton']} "
                     f"{rec['gap']:.6e} {rec['stationarity']:.6e}\n")


# --------------------------------------------------------------------------
# real-valued engine
# --------------------------------------------------------------------------

def realify(A: np.ndarray) -> np.ndarray:
    """Real symmetric matrix with ``x^H A x == z^T A_r z``."""
    return np.block([[A.real, -A.imag], [A.imag, A.real]])


def realify_vec(v: np.ndarray) -> np.ndarray:
    return np.concatenate([v.real, v.imag])


def complexify(z: np.ndarray, n: int) -> np.ndarray:
    return z[:n] + 1j * z[n:2 * n]


class _Barrier:
    """Log-barrier machinery for a real convex QCQP in ``minimize`` form.

    quadratic constraints: ``z^T A_i z + 2 b_i^T z + c_i <= 0``
    disks:                 ``w_n (z_a^2 + z_b^2 - u_n^2) <= 0``
    In phase-I mode an extra trailing coordinate ``s`` is subtracted from
    every constraint and the objective is ``s`` itself.
    """

    def __init__(self, A0, b0, c0, As, bs, cs, disk_a, disk_b, disk_u2, disk_w, phase1=False):
        self.A0, self.b0, self.c0 = A0, b0, c0
        self.As, self.bs, self.cs = As, bs, cs
        self.da, self.db, self.du2, self.dw = disk_a, disk_b, disk_u2, disk_w
        self.phase1 = phase1
        self.m = len(cs) + len(disk_a)

    def split(self, y):
        return (y[:-1], y[-1]) if self.phase1 else (y, 0.0)

    def constraints(self, y):
        z, s = self.split(y)
        Az = self.As @ z if len(self.cs) else np.zeros((0, z.size))
        g = np.einsum("id,d->i", Az, z) + 2.0 * self.bs @ z + self.cs - s if len(self.cs) else np.zeros(0)
        gd = self.dw * (z[self.da] ** 2 + z[self.db] ** 2 - self.du2) - s
        return g, gd, Az

    def objective(self, y):
        if self.phase1:
            return y[-1]
        return float(y @ self.A0 @ y + 2.0 * self.b0 @ y + self.c0)

    def objective_grad(self, y):
        if self.phase1:
            g = np.zeros_like(y)
            g[-1] = 1.0
            return g
        return 2.0 * (self.A0 @ y + self.b0)

    def strictly_feasible(self, y) -> bool:
        g, gd, _ = self.constraints(y)
        return bool(np.all(g < 0) and np.all(gd < 0))

    def value(self, y, t):
        g, gd, _ = self.constraints(y)
        if np.any(g >= 0) or np.any(gd >= 0):
            return np.inf
        return t * self.objective(y) - np.sum(np.log(-g)) - np.sum(np.log(-gd))

    def derivatives(self, y, t):
        z, _ = self.split(y)
        d = z.size
        g, gd, Az = self.constraints(y)
        grad_obj = self.objective_grad(y)
        nz = y.size
        grad = t * grad_obj
        hess = np.zeros((nz, nz))
        if not self.phase1:
            hess += 2.0 * t * self.A0
        if len(self.cs):
            inv = 1.0 / (-g)
            Gz = 2.0 * (Az + self.bs)                  # (m, d) gradients w.r.t. z
            grad[:d] += Gz.T @ inv
            hess[:d, :d] += 2.0 * np.tensordot(inv, self.As, axes=1)
            Gs = Gz * inv[:, None]
            hess[:d, :d] += Gs.T @ Gs
            if self.phase1:
                grad[-1] -= inv.sum()
                hess[:d, -1] -= Gs.T @ inv
                hess[-1, :d] -= Gs.T @ inv
                hess[-1, -1] += inv @ inv
        if len(self.da):
            inv = 1.0 / (-gd)
            ga = 2.0 * self.dw * z[self.da]
            gb = 2.0 * self.dw * z[self.db]
            grad[self.da] += ga * inv
            grad[self.db] += gb * inv
            i2 = inv * inv
            hess[self.da, self.da] += 2.0 * self.dw * inv + ga * ga * i2
            hess[self.db, self.db] += 2.0 * self.dw * inv + gb * gb * i2
            hess[self.da, self.db] += ga * gb * i2
            hess[self.db, self.da] += ga * gb * i2
            if self.phase1:
                grad[-1] -= inv.sum()
                hess[self.da, -1] -= ga * i2
                hess[-1, self.da] -= ga * i2
                hess[self.db, -1] -= gb * i2
                hess[-1, self.db] -= gb * i2
                hess[-1, -1] += i2.sum()
        return grad, hess, grad_obj, g, gd, Az

    def kkt_residual(self, y, t):
        """Relative norm of the Lagrangian gradient with the best non-negative duals.

        Duals are fitted by NNLS over the constraints the barrier marks as
        active, which avoids dividing by slacks that are at rounding level.
        """
        z, _ = self.split(y)
        d = z.size
        g, gd, Az = self.constraints(y)
        grad_obj = self.objective_grad(y)
        cols = []
        lam_bar = []
        if len(self.cs):
            Gz = 2.0 * (Az + self.bs)
            for i in range(len(self.cs)):
                col = np.zeros_like(y)
                col[:d] = Gz[i]
                if self.phase1:
                    col[-1] = -1.0
                cols.append(col)
            lam_bar.extend(1.0 / (t * -g))
        for i, (a, b) in enumerate(zip(self.da, self.db)):
            col = np.zeros_like(y)
            col[a] = 2.0 * self.dw[i] * z[a]
            col[b] = 2.0 * self.dw[i] * z[b]
            if self.phase1:
                col[-1] = -1.0
            cols.append(col)
        lam_bar.extend(1.0 / (t * -gd))
        gnorm = np.linalg.norm(grad_obj)
        if not cols:
            return float(gnorm)
        C = np.array(cols).T
        lam_bar = np.array(lam_bar)
        weight = lam_bar * np.linalg.norm(C, axis=0)
        keep = weight >= 1e-8 * max(gnorm, weight.max(), 1e-300)
        ref = max(gnorm, weight.max(), 1e-300)
        if not keep.any():
            return float(gnorm / ref)
        lam, res = nnls(C[:, keep], -grad_obj, maxiter=50 * C.shape[1])
        ref = max(ref, (lam * np.linalg.norm(C[:, keep], axis=0)).max(initial=0.0))
        return float(res / ref)


def _newton_direction(H, g):
    try:
        cf = sla.cho_factor(H, check_finite=False)
        return -sla.cho_solve(cf, g, check_finite=False)
    except (np.linalg.LinAlgError, ValueError):
        pass
    ridge = 1e-12 * max(np.abs(np.diag(H)).max(), 1e-300)
    for _ in range(8):
        try:
            cf = sla.cho_factor(H + ridge * np.eye(H.shape[0]), check_finite=False)
            return -sla.cho_solve(cf, g, check_finite=False)
        except (np.linalg.LinAlgError, ValueError):
            ridge *= 100.0
    return -np.linalg.lstsq(H, g, rcond=None)[0]


def _center(bar: _Barrier, y, t, budget, eps=1e-12, stop=None, max_steps=200):
    """Damped Newton on ``t * f0 - sum log(-g)``; returns (y, steps, converged).

    The centering function is self-concordant, so once the Newton decrement is
    small full steps are taken without a value test (values are then below
    rounding resolution, gradients are not).
    """
    alpha, beta = 0.01, 0.5
    steps = 0
    val = bar.value(y, t)
    best, stalled = np.inf, 0
    while steps < min(budget, max_steps):
        grad, hess, *_ = bar.derivatives(y, t)
        dy = _newton_direction(hess, grad)
        lam2 = float(-grad @ dy)
        steps += 1
        if not np.isfinite(lam2) or lam2 / 2.0 <= eps:
            return y, steps, True
        if lam2 < 0.5 * best:
            best, stalled = lam2, 0
        else:
            stalled += 1
            if stalled >= 3 and best < 1e-6:   # decrement at rounding level
                return y, steps, True
        step = 1.0
        while True:
            cand = y + step * dy
            cval = bar.value(cand, t)
            if cval <= val - alpha * step * lam2 or (lam2 < 1e-2 and np.isfinite(cval)):
                break
            step *= beta
            if step < 1e-12:
                return y, steps, True
        y, val = cand, cval
        if stop is not None and stop(y):
            return y, steps, True
    return y, steps, False


def _barrier_loop(bar: _Barrier, y, t, budget, gap_tol, history, stage, stop=None, mu=20.0):
    used = 0
    while True:
        y, steps, converged = _center(bar, y, t, budget - used, stop=stop)
        used += steps
        gap = bar.m / t
        resid = bar.kkt_residual(y, t)
        history.append(dict(stage=stage, t=float(t), newton=steps, gap=gap, stationarity=resid))
        if stop is not None and stop(y):
            return y, used, t, True
        if gap <= gap_tol(y):
            return y, used, t, converged
        if used >= budget:
            return y, used, t, False
        t *= mu


def _initial_t(bar: _Barrier, y, scale):
    """Start where the barrier gap ``m / t`` equals the objective scale.

    Fitting ``t`` to the barrier gradient at the start point would give a huge
    ``t`` whenever the warm start hugs the boundary (the usual case here), and
    centering then crawls along the curved boundary.
    """
    return max(bar.m, 1) / scale


def solve_qcqp(p: ConvexQcqp, x0: np.ndarray | None = None, tol_feas: float = 1e-7,
               tol_kkt: float = 1e-6, max_iters: int = 5000, rel_gap: float = 1e-10) -> SolveResult:
    """Maximise ``p`` starting from ``x0``.

    A feasible ``x0`` is never made worse: if the solver ends below it, ``x0`` is returned.
    """
    n = p.n
    x0 = np.zeros(n, dtype=complex) if x0 is None else np.asarray(x0, dtype=complex)
    if not np.all(np.isfinite(x0)):
        raise ValueError("warm start must be finite")
    history: list[dict] = []

    A0 = realify(p.M)
    b0 = -realify_vec(p.c)
    c0 = -p.const
    As = np.array([realify(con.P) for con in p.constraints]).reshape(len(p.constraints), 2 * n, 2 * n)
    bs = np.array([realify_vec(con.q) for con in p.constraints]).reshape(len(p.constraints), 2 * n)
    cs = np.array([con.r for con in p.constraints], dtype=float)
    if p.bounds is not None:
        idx = np.flatnonzero(np.isfinite(p.bounds))
    else:
        idx = np.zeros(0, dtype=int)
    da, db = idx, idx + n
    du2 = p.bounds[idx] ** 2 if idx.size else np.zeros(0)
    x0_feasible = p.max_violation(x0) <= tol_feas

    def finish(z, iters, status, resid):
        x = complexify(z, n)
        if x0_feasible and p.objective(x) < p.objective(x0):
            x = x0.copy()
        return SolveResult(x, p.objective(x), p.max_violation(x), resid, iters, status, history)

    if p.constraints == [] and idx.size == 0:
        z = np.linalg.lstsq(A0, -b0, rcond=None)[0] if np.any(A0) else realify_vec(x0)
        grad = 2.0 * (A0 @ z + b0)
        resid = float(np.linalg.norm(grad) / max(np.linalg.norm(b0), 1e-300))
        status = Status.OPTIMAL if resid <= tol_kkt else Status.MAX_ITERS
        history.append(dict(stage="direct", t=np.inf, newton=1, gap=0.0, stationarity=resid))
        return finish(z, 1, status, resid)

    z0 = realify_vec(x0)
    # normalise constraints so tolerances and phase-I slack are scale free
    zs = max(np.linalg.norm(z0), 1e-300)
    cscale = np.array([max(abs(cs[i]), abs(2 * bs[i] @ z0), abs(z0 @ As[i] @ z0),
                           2 * np.linalg.norm(bs[i]) * zs, np.linalg.norm(As[i], 2) * zs * zs, 1e-300)
                       for i in range(len(cs))])
    As_n = As / cscale[:, None, None] if len(cs) else As
    bs_n = bs / cscale[:, None] if len(cs) else bs
    cs_n = cs / cscale if len(cs) else cs
    dw = 1.0 / np.maximum(du2, 1e-300)

    main = _Barrier(A0, b0, c0, As_n, bs_n, cs_n, da, db, du2, dw)
    iters = 0
    z_start = z0
    if not main.strictly_feasible(z0):
        g, gd, _ = main.constraints(z0)
        s0 = max(g.max(initial=-np.inf), gd.max(initial=-np.inf)) + 1.0
        ph = _Barrier(None, None, None, As_n, bs_n, cs_n, da, db, du2, dw, phase1=True)
        y0 = np.append(z0, s0)
        target = -1e-6

        def reached(y):
            return y[-1] < target

        y, used, _, _ = _barrier_loop(ph, y0, 1.0, max_iters, lambda y: 1e-12, history, "phase1",
                                      stop=reached)
        iters += used
        z_int = y[:-1]
        if not main.strictly_feasible(z_int):
            z_fallback = z0 if x0_feasible else z_int
            status = Status.MAX_ITERS if x0_feasible else Status.INFEASIBLE
            return finish(z_fallback, iters, status, np.inf)
        # step back toward the warm start while staying strictly inside
        tau = 1.0
        for _ in range(10):
            cand = z0 + 0.5 * tau * (z_int - z0)
            if not main.strictly_feasible(cand):
                break
            tau *= 0.5
        z_start = z0 + tau * (z_int - z0)

    z_len = max(np.linalg.norm(z_start), np.sqrt(du2.sum()) if du2.size else 0.0, 1e-300)
    a_norm = np.linalg.norm(A0, 2)
    phi_scale = max(abs(main.objective(z_start)), abs(c0),
                    np.linalg.norm(main.objective_grad(z_start)) * z_len,
                    (b0 @ b0) / a_norm if a_norm > 0 else 0.0, 1e-300)
    t0 = _initial_t(main, z_start, phi_scale)

    def gap_tol(z):
        return rel_gap * max(abs(main.objective(z)), phi_scale)

    z, used, t, converged = _barrier_loop(main, z_start, t0, max(max_iters - iters, 1), gap_tol,
                                          history, "main")
    iters += used
    resid = main.kkt_residual(z, t)
    feas = p.max_violation(complexify(z, n))
    ok = converged and feas <= tol_feas and resid <= tol_kkt
    return finish(z, iters, Status.OPTIMAL if ok else Status.MAX_ITERS, resid)
