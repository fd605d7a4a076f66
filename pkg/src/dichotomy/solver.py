"""Two-point (dichotomous) solver for z' = A(w) z + g(w, z).

In split coordinates z = V_x x + V_y y the solution on [t1, t2] with stable
data x(t1) = x1 and unstable data y(t2) = y2 satisfies

    x(t) = T(t, t1) x1 + int_{t1}^{t} T(t, s) B1(s) ds
    y(t) = S(t, t2) y2 - int_{t}^{t2} S(t, s) B2(s) ds

where T is forward-stable on X and S backward-stable on Y.  The integrals are
discretized with trapezoid weights against exact propagators, and the fixed
point is found by Picard iteration.  No forward initial-value solver is
exposed for ill-posed problems.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg as sla
from scipy.integrate import cumulative_trapezoid
from scipy.signal import lfilter

from .correspondence import GeneratingCorrespondence
from .errors import (
    BoundaryDimensionMismatch,
    IllPosedProblem,
    MaxIterExceeded,
    NonContraction,
    NonUniformGrid,
)
from .io import write_csv
from .splitting import SpectralSplitting

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(6)


@dataclass(frozen=True)
class BaseDynamics:
    """Base flow on which the problem depends.

    kind:
      ``point``     autonomous; the phase is irrelevant
      ``periodic``  phase advances at unit speed and wraps modulo ``period``
      ``driver``    generator is a(phase) * A; phase advances at unit speed
      ``orbit``     phase is the time along a sampled orbit (no wrapping)
    """

    kind: str = "point"
    period: float | None = None
    driver: Callable[[np.ndarray], np.ndarray] | None = None

    def __post_init__(self):
        if self.kind not in ("point", "periodic", "driver", "orbit"):
            raise ValueError(f"unknown base kind {self.kind!r}")
        if self.kind == "periodic" and not self.period:
            raise ValueError("periodic base needs a period")
        if self.kind == "driver" and self.driver is None:
            raise ValueError("driver base needs a driver function")

    def shift(self, omega, t):
        """Base point reached from ``omega`` after time ``t``."""
        if self.kind == "point":
            return np.zeros_like(np.asarray(t, dtype=float) + omega)
        w = np.asarray(omega, dtype=float) + np.asarray(t, dtype=float)
        if self.period:
            w = np.mod(w, self.period)
        return w

    def time_change(self, omega: float, t_a, t_b) -> np.ndarray:
        """int_{t_a}^{t_b} a(omega + s) ds (equals t_b - t_a without a driver)."""
        t_a = np.asarray(t_a, dtype=float)
        t_b = np.asarray(t_b, dtype=float)
        if self.kind != "driver":
            return t_b - t_a
        mid = 0.5 * (t_a + t_b)
        half = 0.5 * (t_b - t_a)
        s = mid[..., None] + half[..., None] * _GL_NODES
        vals = np.asarray(self.driver(omega + s), dtype=float)
        return half * np.sum(vals * _GL_WEIGHTS, axis=-1)


@dataclass(frozen=True)
class EvolutionProblem:
    """Semilinear problem z' = a(w) A z + g(w, z) with a splitting of A.

    ``nonlinearity(omega, z)`` takes ``z`` of shape (..., d) and ``omega``
    broadcastable against ``z[..., 0]``.  ``eps`` is its Lipschitz bound in the
    Euclidean norm; ``eps_split = (eps_s, eps_u)`` are the bounds of its X/Y
    block components with respect to the max norm on block coordinates.
    """

    splitting: SpectralSplitting
    nonlinearity: Callable[[np.ndarray, np.ndarray], np.ndarray]
    eps: float
    base: BaseDynamics = field(default_factory=BaseDynamics)
    well_posed: bool = False
    eps_split: tuple[float, float] | None = None
    name: str = ""

    @property
    def dim(self) -> int:
        return self.splitting.dim_total

    @property
    def generator(self) -> np.ndarray:
        return self.splitting.reassemble()

    def block_eps(self) -> tuple[float, float]:
        if self.eps_split is not None:
            return self.eps_split
        s = self.splitting
        w = np.linalg.inv(s.basis)
        wx, wy = w[: s.dim_x], w[s.dim_x :]
        vnorm = (np.linalg.norm(s.basis_x, 2) if s.dim_x else 0.0) + (np.linalg.norm(s.basis_y, 2) if s.dim_y else 0.0)
        ex = self.eps * vnorm * (np.linalg.norm(wx, 2) if s.dim_x else 0.0)
        ey = self.eps * vnorm * (np.linalg.norm(wy, 2) if s.dim_y else 0.0)
        return float(ex), float(ey)

    def block_nonlinearity(self, omega, x, y) -> tuple[np.ndarray, np.ndarray]:
        s = self.splitting
        z = s.ambient(x, y)
        g = np.asarray(self.nonlinearity(omega, z), dtype=float)
        w = _inverse_basis(s)
        c = g @ w.T
        return c[..., : s.dim_x], c[..., s.dim_x :]


_INV_CACHE: dict[int, tuple[SpectralSplitting, np.ndarray]] = {}


def _inverse_basis(s: SpectralSplitting) -> np.ndarray:
    hit = _INV_CACHE.get(id(s))
    if hit is not None and hit[0] is s:
        return hit[1]
    w = np.linalg.inv(s.basis)
    _INV_CACHE[id(s)] = (s, w)
    return w


@dataclass
class DichotomousTrajectory:
    times: np.ndarray
    x: np.ndarray  # (N+1, [B,] p)
    y: np.ndarray  # (N+1, [B,] q)
    iteration_count: int
    picard_residual: float
    mild_residual: float
    kappa: float = 0.0
    omega: float = 0.0
    increments: list = field(default_factory=list)

    @property
    def z_values(self) -> np.ndarray:
        return np.concatenate([self.x, self.y], axis=-1)

    def ambient(self, p: EvolutionProblem) -> np.ndarray:
        return p.splitting.ambient(self.x, self.y)

    def select(self, b: int) -> "DichotomousTrajectory":
        """Single trajectory out of a batched solve."""
        return DichotomousTrajectory(
            self.times, self.x[:, b], self.y[:, b], self.iteration_count, self.picard_residual,
            self.mild_residual, self.kappa, self.omega, list(self.increments),
        )

    def report(self) -> dict:
        return {
            "kappa": self.kappa,
            "iterations": self.iteration_count,
            "picard_residual": self.picard_residual,
            "mild_residual": self.mild_residual,
            "grid_n": len(self.times) - 1,
            "t1": float(self.times[0]),
            "t2": float(self.times[-1]),
        }

    def to_csv(self, path, p: EvolutionProblem):
        if self.x.ndim != 2:
            raise ValueError("write one trajectory at a time (use select)")
        z = self.ambient(p)
        nx = np.linalg.norm(self.x, axis=-1)
        ny = np.linalg.norm(self.y, axis=-1)
        header = ["t"] + [f"z{i}" for i in range(z.shape[1])] + ["x_norm", "y_norm"]
        rows = (
            [float(t)] + [float(v) for v in zz] + [float(a), float(b)]
            for t, zz, a, b in zip(self.times, z, nx, ny)
        )
        return write_csv(path, header, rows)


# ---------------------------------------------------------------------------
# linear recurrences  u_n = E_n u_{n-1} + c_n


class _Recurrence:
    """Propagator for u_n = E_n u_{n-1} + c_n, n = 1..N, batched over trailing axes.

    Constant E with a well-conditioned eigenbasis is evaluated with lfilter in
    eigen-coordinates; otherwise a plain loop is used.
    """

    def __init__(self, ops: np.ndarray):
        self.ops = ops  # (p, p) constant or (N, p, p) per step
        self.const = ops.ndim == 2
        self.eig = None
        if self.const and ops.shape[0] > 0:
            lam, s = np.linalg.eig(ops)
            if np.linalg.cond(s) < 1e8:
                self.eig = (lam, s, np.linalg.inv(s))

    def op_norms(self, n: int) -> np.ndarray:
        if self.const:
            return np.full(n, np.linalg.norm(self.ops, 2) if self.ops.size else 0.0)
        return np.array([np.linalg.norm(m, 2) for m in self.ops])

    def apply_op(self, u: np.ndarray, n: int | slice | None = None) -> np.ndarray:
        """E_n u for stacked u of shape (M, B, p) (n is ignored for constant E)."""
        if self.const:
            return u @ self.ops.T
        e = self.ops if n is None else self.ops[n]
        return np.einsum("nij,nbj->nbi", e, u)

    def run(self, u0: np.ndarray, c: np.ndarray) -> np.ndarray:
        """u0: (B, p); c: (N, B, p) -> (N+1, B, p)."""
        n, p = c.shape[0], u0.shape[-1]
        out = np.empty((n + 1,) + u0.shape)
        out[0] = u0
        if p == 0 or n == 0:
            out[1:] = 0.0
            return out
        if self.eig is not None:
            lam, s, si = self.eig
            w0 = u0 @ si.T
            cw = c @ si.T
            res = np.empty((n,) + u0.shape, dtype=cw.dtype)
            for k in range(p):
                # time on the last, contiguous axis is much faster for lfilter
                sig = np.ascontiguousarray(np.moveaxis(cw[..., k], 0, -1))
                zi = (lam[k] * w0[..., k])[..., None]
                y, _ = lfilter([1.0], [1.0, -lam[k]], sig, axis=-1, zi=zi)
                res[..., k] = np.moveaxis(y, -1, 0)
            out[1:] = (res @ s.T).real
            return out
        u = u0
        for i in range(n):
            e = self.ops if self.const else self.ops[i]
            u = u @ e.T + c[i]
            out[i + 1] = u
        return out


def _conv_norm(norms: np.ndarray, h: float) -> float:
    """sup_n of the trapezoid convolution weights against the step-operator norms."""
    c = 0.0
    best = 0.0
    for e in norms:
        c = e * c + 0.5 * h * (e + 1.0)
        best = max(best, c)
    return best


@dataclass
class _Setup:
    times: np.ndarray
    h: float
    phases: np.ndarray
    fwd: _Recurrence
    bwd: _Recurrence  # operates on reversed time
    kappa: float


_SETUP_CACHE: dict = {}


def _setup(p: EvolutionProblem, t1: float, t2: float, grid_n: int, omega: float) -> _Setup:
    key = (id(p), float(t1), float(t2), int(grid_n), float(omega))
    hit = _SETUP_CACHE.get(key)
    if hit is not None and hit[0] is p:
        return hit[1]
    s = p.splitting
    times = np.linspace(t1, t2, grid_n + 1)
    h = (t2 - t1) / grid_n
    phases = p.base.shift(omega, times - t1)
    if p.base.kind == "driver":
        dt = p.base.time_change(omega, times[:-1] - t1, times[1:] - t1)
        ex = sla.expm(dt[:, None, None] * s.restricted_gen_x) if s.dim_x else np.zeros((grid_n, 0, 0))
        ey = sla.expm(-dt[:, None, None] * s.restricted_gen_y) if s.dim_y else np.zeros((grid_n, 0, 0))
        fwd = _Recurrence(ex)
        bwd = _Recurrence(ey[::-1].copy())
    else:
        ex = sla.expm(h * s.restricted_gen_x) if s.dim_x else np.zeros((0, 0))
        ey = sla.expm(-h * s.restricted_gen_y) if s.dim_y else np.zeros((0, 0))
        fwd = _Recurrence(ex)
        bwd = _Recurrence(ey)
    eps_s, eps_u = p.block_eps()
    kx = eps_s * _conv_norm(fwd.op_norms(grid_n), h) if s.dim_x else 0.0
    ky = eps_u * _conv_norm(bwd.op_norms(grid_n), h) if s.dim_y else 0.0
    st = _Setup(times, h, phases, fwd, bwd, max(kx, ky))
    if len(_SETUP_CACHE) > 64:
        _SETUP_CACHE.clear()
    _SETUP_CACHE[key] = (p, st)
    return st


def _block_norm(v: np.ndarray) -> np.ndarray:
    return np.linalg.norm(v, axis=-1) if v.shape[-1] else np.zeros(v.shape[:-1])


def solve_two_point(
    p: EvolutionProblem,
    x1,
    y2,
    t1: float,
    t2: float,
    grid_n: int = 200,
    tol: float = 1e-12,
    max_iter: int = 200,
    omega: float = 0.0,
    init: DichotomousTrajectory | None = None,
    mild: bool = True,
) -> DichotomousTrajectory:
    """Solve the two-point system with x(t1) = x1 and y(t2) = y2.

    ``x1``/``y2`` may be single vectors or batches of shape (B, dim); the
    trajectory arrays then carry the batch axis after the time axis.
    """
    s = p.splitting
    if not t1 < t2:
        raise ValueError("need t1 < t2")
    x1 = np.asarray(x1, dtype=float)
    y2 = np.asarray(y2, dtype=float)
    single = x1.ndim <= 1 and y2.ndim <= 1
    x1b = x1.reshape(-1, s.dim_x) if s.dim_x else np.zeros((max(1, y2.size // max(s.dim_y, 1)), 0))
    y2b = y2.reshape(-1, s.dim_y) if s.dim_y else np.zeros((x1b.shape[0], 0))
    if (x1.size and x1.shape[-1] != s.dim_x) or (y2.size and y2.shape[-1] != s.dim_y):
        raise BoundaryDimensionMismatch(
            f"boundary data shapes {x1.shape}, {y2.shape} do not match dims ({s.dim_x}, {s.dim_y})"
        )
    if x1b.shape[0] != y2b.shape[0]:
        if x1b.shape[0] == 1:
            x1b = np.repeat(x1b, y2b.shape[0], axis=0)
        elif y2b.shape[0] == 1:
            y2b = np.repeat(y2b, x1b.shape[0], axis=0)
        else:
            raise BoundaryDimensionMismatch("batch sizes of x1 and y2 differ")

    st = _setup(p, float(t1), float(t2), grid_n, float(omega))
    if st.kappa >= 1.0:
        raise NonContraction(st.kappa)
    n, h = grid_n, st.h
    ph = st.phases.reshape(-1, 1)
    zero_bx = np.zeros((n, x1b.shape[0], s.dim_x))
    zero_by = np.zeros((n, y2b.shape[0], s.dim_y))

    if init is not None and init.x.shape[0] == n + 1 and init.x.reshape(n + 1, -1, s.dim_x).shape[1] == x1b.shape[0]:
        x = init.x.reshape(n + 1, -1, s.dim_x).copy()
        y = init.y.reshape(n + 1, -1, s.dim_y).copy()
        x[0] = x1b
        y[-1] = y2b
    else:
        x = st.fwd.run(x1b, zero_bx)
        y = st.bwd.run(y2b, zero_by)[::-1]

    incs: list[float] = []
    it = 0
    inc = np.inf
    while it < max_iter:
        it += 1
        bx, by = p.block_nonlinearity(ph, x, y)
        cx = 0.5 * h * (st.fwd.apply_op(bx[:-1]) + bx[1:])
        byr = by[::-1]
        cy = -0.5 * h * (st.bwd.apply_op(byr[:-1]) + byr[1:])
        xn = st.fwd.run(x1b, cx)
        yn = st.bwd.run(y2b, cy)[::-1]
        dx = _block_norm(xn - x)
        dy = _block_norm(yn - y)
        inc = float(max(dx.max(initial=0.0), dy.max(initial=0.0)))
        incs.append(inc)
        x, y = xn, yn
        if inc <= tol:
            break
    else:
        raise MaxIterExceeded(f"Picard iteration did not reach tol {tol:g} in {max_iter} sweeps (last increment {inc:.3g})")

    if single:
        x, y = x[:, 0], y[:, 0]
    traj = DichotomousTrajectory(
        times=st.times, x=x, y=y, iteration_count=it, picard_residual=inc,
        mild_residual=float("nan"), kappa=st.kappa, omega=float(omega), increments=incs,
    )
    if mild:
        traj.mild_residual = verify_mild_solution(traj, p)
    return traj


def generating_cocycle_eval(p: EvolutionProblem, s: float, omega, x1, y2, grid_n: int | None = None, tol: float = 1e-12, **kw):
    """(F_{s,w}(x1, y2), G_{s,w}(x1, y2)) = (x(s), y(0)) of the two-point solution on [0, s]."""
    if s == 0:
        return np.array(x1, dtype=float), np.array(y2, dtype=float)
    if s < 0:
        raise ValueError("s must be >= 0")
    n = grid_n or max(50, int(np.ceil(200 * s)))
    tr = solve_two_point(p, x1, y2, 0.0, s, grid_n=n, tol=tol, omega=omega, mild=False, **kw)
    return tr.x[-1], tr.y[0]


def cocycle_correspondence(
    p: EvolutionProblem, t: float, omega: float = 0.0, grid_n: int | None = None, tol: float = 1e-13, warm: bool = True
) -> GeneratingCorrespondence:
    """H(t, omega) as a batched generating correspondence X_w x Y_w -> X_{tw} x Y_{tw}."""
    s = p.splitting
    n = grid_n or max(50, int(np.ceil(200 * t)))
    memo: dict[int, DichotomousTrajectory] = {}

    def both(x1, y2):
        x1 = np.asarray(x1, dtype=float).reshape(-1, s.dim_x)
        y2 = np.asarray(y2, dtype=float).reshape(-1, s.dim_y)
        if t == 0:
            return x1.copy(), y2.copy()
        b = max(x1.shape[0], y2.shape[0])
        init = memo.get(b) if warm else None
        tr = solve_two_point(p, x1, y2, 0.0, t, grid_n=n, tol=tol, omega=omega, init=init, mild=False)
        if warm:
            memo.clear()
            memo[b] = tr
        return tr.x[-1].copy(), tr.y[0].copy()

    return GeneratingCorrespondence(
        eval_f=lambda a, b: both(a, b)[0],
        eval_g=lambda a, b: both(a, b)[1],
        dims=(s.dim_x, s.dim_y, s.dim_x, s.dim_y),
        eval_both=both,
    )


def verify_mild_solution(traj: DichotomousTrajectory, p: EvolutionProblem, tol: float | None = None) -> float:
    """sup_t |z(t) - z(t1) - int a A z - int g(z)| using cumulative trapezoid quadrature."""
    t = np.asarray(traj.times)
    d = np.diff(t)
    if d.size and np.max(np.abs(d - d.mean())) > 1e-9 * max(1.0, abs(d.mean())):
        raise NonUniformGrid("mild-solution check needs a uniform grid")
    s = p.splitting
    z = s.ambient(traj.x, traj.y)
    a = p.generator
    phases = p.base.shift(traj.omega, t - t[0])
    ph = phases.reshape((-1,) + (1,) * (z.ndim - 2))
    lin = z @ a.T
    if p.base.kind == "driver":
        lin = lin * np.asarray(p.base.driver(phases), dtype=float).reshape(ph.shape + (1,))
    g = np.asarray(p.nonlinearity(ph, z), dtype=float)
    integral = cumulative_trapezoid(lin + g, t, axis=0, initial=0.0)
    res = z - z[0] - integral
    val = float(np.max(np.linalg.norm(res, axis=-1)))
    return val


def wellposed_cocycle_eval(
    p: EvolutionProblem, t: float, omega: float, x, grid_n: int | None = None, tol: float = 1e-13, max_iter: int = 200
) -> np.ndarray:
    """Forward solution operator U(t, omega) x for well-posed problems."""
    if not p.well_posed:
        raise IllPosedProblem(f"problem {p.name or '?'} is ill-posed; use the two-point solver")
    x = np.array(x, dtype=float)
    if t == 0:
        return x
    if t < 0:
        raise ValueError("t must be >= 0")
    a = p.generator
    n = grid_n or max(50, int(np.ceil(200 * t)))
    h = t / n
    times = np.linspace(0.0, t, n + 1)
    if p.base.kind == "driver":
        dt = p.base.time_change(omega, times[:-1], times[1:])
        ops = sla.expm(dt[:, None, None] * a)
    else:
        ops = np.broadcast_to(sla.expm(h * a), (n,) + a.shape)
    # subdivide so each chunk's Picard map contracts with factor <= 1/2
    norms = np.array([np.linalg.norm(m, 2) for m in ops])
    chunks = []
    start = 0
    c = 0.0
    for i in range(n):
        c = norms[i] * c + 0.5 * h * (norms[i] + 1.0)
        if p.eps * c > 0.5 and i > start:
            chunks.append((start, i))
            start, c = i, 0.5 * h * (norms[i] + 1.0)
    chunks.append((start, n))

    z0 = x.reshape(-1, a.shape[0])
    for lo, hi in chunks:
        m = hi - lo
        ph = p.base.shift(omega, times[lo : hi + 1]).reshape(-1, 1)
        e = ops[lo:hi]
        z = np.empty((m + 1,) + z0.shape)
        z[0] = z0
        for i in range(m):
            z[i + 1] = z[i] @ e[i].T
        for it in range(max_iter):
            g = np.asarray(p.nonlinearity(ph, z), dtype=float)
            zn = np.empty_like(z)
            zn[0] = z0
            for i in range(m):
                zn[i + 1] = zn[i] @ e[i].T + 0.5 * h * (g[i] @ e[i].T + g[i + 1])
            inc = float(np.max(np.abs(zn - z)))
            z = zn
            if inc <= tol:
                break
        else:
            raise MaxIterExceeded("forward Picard iteration did not converge")
        z0 = z[-1]
    return z0.reshape(x.shape)
