"""Invariant graphs by iterated pullback.

Graphs f_w : X_w -> Y_w are stored as node values on a uniform tensor grid
(at most three axes, optionally periodic) and evaluated by multilinear
interpolation.  One pullback through a correspondence H ~ (F, G) solves, at
every node x, the inner fixed point u = F(x, f2(u)) and sets
f1(x) = G(x, f2(u)).
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .certificates import ABCertificate, ABConstants
from .correspondence import GeneratingCorrespondence, dual
from .errors import (
    AngleConditionViolated,
    DomainEscape,
    GridTooCoarse,
    MaxIterExceeded,
    OrbitInconsistent,
    SigmaTooLarge,
    SpectralConditionViolated,
    ThetaNotContractive,
)
from .io import write_csv

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# grids


@dataclass(frozen=True)
class Grid:
    """Uniform tensor grid; periodic axes exclude their right endpoint."""

    lo: tuple[float, ...]
    hi: tuple[float, ...]
    n: tuple[int, ...]
    periodic: tuple[bool, ...] = ()

    def __post_init__(self):
        if not self.periodic:
            object.__setattr__(self, "periodic", (False,) * len(self.n))

    @classmethod
    def ball(cls, radius: float, dim: int, n: int, center: Sequence[float] | None = None) -> "Grid":
        c = np.zeros(dim) if center is None else np.asarray(center, dtype=float)
        return cls(tuple(c - radius), tuple(c + radius), (n,) * dim)

    @property
    def dim(self) -> int:
        return len(self.n)

    @property
    def axes(self) -> list[np.ndarray]:
        out = []
        for lo, hi, n, per in zip(self.lo, self.hi, self.n, self.periodic):
            out.append(np.linspace(lo, hi, n, endpoint=not per))
        return out

    @property
    def spacing(self) -> np.ndarray:
        return np.array(
            [(hi - lo) / (n if per else n - 1) for lo, hi, n, per in zip(self.lo, self.hi, self.n, self.periodic)]
        )

    def points(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    @property
    def size(self) -> int:
        return int(np.prod(self.n))

    def contains(self, q: np.ndarray, slack: float = 1e-12) -> np.ndarray:
        q = np.atleast_2d(q)
        ok = np.ones(q.shape[0], dtype=bool)
        for k in range(self.dim):
            if self.periodic[k]:
                continue
            ok &= (q[:, k] >= self.lo[k] - slack) & (q[:, k] <= self.hi[k] + slack)
        return ok

    def interpolate(self, values: np.ndarray, q: np.ndarray) -> tuple[np.ndarray, bool]:
        """Multilinear interpolation of node ``values`` (M, m) at queries (Q, dim).

        Queries outside a non-periodic axis are clamped; the flag reports it.
        """
        q = np.atleast_2d(np.asarray(q, dtype=float))
        vals = values.reshape(tuple(self.n) + values.shape[1:])
        idx = []
        frac = []
        escaped = False
        for k in range(self.dim):
            lo, hi, n, per = self.lo[k], self.hi[k], self.n[k], self.periodic[k]
            d = self.spacing[k]
            s = (q[:, k] - lo) / d
            if per:
                s = np.mod(s, n)
                i0 = np.floor(s).astype(int)
                f = s - i0
                i0 = np.mod(i0, n)
                i1 = np.mod(i0 + 1, n)
            else:
                if np.any(s < -1e-9) or np.any(s > n - 1 + 1e-9):
                    escaped = True
                s = np.clip(s, 0.0, n - 1)
                i0 = np.minimum(np.floor(s).astype(int), n - 2) if n > 1 else np.zeros_like(s, dtype=int)
                f = s - i0
                i1 = np.minimum(i0 + 1, n - 1)
            idx.append((i0, i1))
            frac.append(f)
        out = np.zeros((q.shape[0],) + values.shape[1:])
        for corner in itertools.product((0, 1), repeat=self.dim):
            w = np.ones(q.shape[0])
            ind = []
            for k, c in enumerate(corner):
                w = w * (frac[k] if c else 1.0 - frac[k])
                ind.append(idx[k][c])
            out += w.reshape((-1,) + (1,) * (values.ndim - 1)) * vals[tuple(ind)]
        return out, escaped

    def to_dict(self) -> dict:
        return {"lo": list(self.lo), "hi": list(self.hi), "n": list(self.n), "periodic": list(self.periodic)}


@dataclass
class Graph:
    """Single-fiber graph: node values plus interpolation."""

    grid: Grid
    values: np.ndarray  # (M, dim_y)

    def __call__(self, x) -> np.ndarray:
        v, esc = self.grid.interpolate(self.values, x)
        if esc:
            log.warning("graph queried outside its grid; values clamped")
        return v

    def lip(self) -> float:
        return node_lipschitz(self.grid, self.values)


def node_lipschitz(grid: Grid, values: np.ndarray) -> float:
    """Largest difference quotient between axis-adjacent nodes."""
    v = values.reshape(tuple(grid.n) + values.shape[1:])
    best = 0.0
    for k in range(grid.dim):
        if grid.n[k] < 2:
            continue
        d = np.diff(v, axis=k)
        if grid.periodic[k]:
            d = np.concatenate([d, np.take(v, [0], axis=k) - np.take(v, [-1], axis=k)], axis=k)
        nrm = np.linalg.norm(d, axis=-1) if d.ndim > grid.dim else np.abs(d)
        best = max(best, float(nrm.max()) / grid.spacing[k])
    return best


@dataclass
class GraphFamily:
    base_samples: np.ndarray
    grid: Grid
    values: np.ndarray  # (n_omega, M, dim_y)
    lip_estimate: float
    section_offset: np.ndarray
    invariance_residual: float
    eta_profile: dict | None = None
    x_maps: np.ndarray | None = None  # node images x_{t0, w}(x), (n_omega, M, dim_x)
    history: list = field(default_factory=list)
    theta: float | None = None
    t0: float | None = None
    meta: dict = field(default_factory=dict)

    def graph(self, k: int = 0) -> Graph:
        return Graph(self.grid, self.values[k])

    def __call__(self, x, k: int = 0) -> np.ndarray:
        return self.graph(k)(x)

    @property
    def contraction_ratios(self) -> list[float]:
        h = self.history
        return [h[i + 1] / h[i] for i in range(len(h) - 1) if h[i] > 0]

    def metadata(self) -> dict:
        return {
            "base_samples": self.base_samples,
            "grid": self.grid.to_dict(),
            "lip_estimate": self.lip_estimate,
            "section_offset": self.section_offset,
            "invariance_residual": self.invariance_residual,
            "theta": self.theta,
            "t0": self.t0,
            "outer_iterations": len(self.history),
            "increments": self.history,
            **self.meta,
        }

    def to_csv(self, path):
        pts = self.grid.points()
        dy = self.values.shape[-1]
        header = ["omega_id"] + [f"x{i}" for i in range(pts.shape[1])] + [f"y{i}" for i in range(dy)]
        rows = []
        for k in range(len(self.base_samples)):
            for p, v in zip(pts, self.values[k]):
                rows.append([k] + [float(a) for a in p] + [float(b) for b in v])
        return write_csv(path, header, rows)


# ---------------------------------------------------------------------------
# the basic pullback


def pullback_graph_step(
    h: GeneratingCorrespondence,
    f2: Graph,
    constants: ABConstants,
    tol: float = 1e-13,
    nodes: np.ndarray | None = None,
    max_iter: int = 200,
    strict_domain: bool = True,
    init: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Pull ``f2`` back through ``h``.

    Returns node values of f1 and the node images x1(x) (the induced map
    X1 -> X2).  ``nodes`` defaults to the grid of ``f2``.
    """
    beta_hat = min(f2.lip(), constants.beta)
    rate = constants.alpha * beta_hat
    if rate >= 1:
        raise AngleConditionViolated(f"alpha * beta_hat = {rate:.6g} >= 1")
    x = f2.grid.points() if nodes is None else np.atleast_2d(nodes)
    u = np.zeros((x.shape[0], h.dim_x2)) if init is None else np.array(init, dtype=float)
    escaped = False
    for _ in range(max_iter):
        v, escaped = f2.grid.interpolate(f2.values, u)
        u_new, y1 = h.evaluate(x, v)
        inc = float(np.max(np.abs(u_new - u))) if u.size else 0.0
        u = u_new
        if inc <= tol:
            break
    else:
        raise MaxIterExceeded(f"inner fixed point did not converge (last step {inc:.3g})")
    if escaped:
        if strict_domain:
            bad = ~f2.grid.contains(u, slack=1e-9)
            raise DomainEscape(f"{int(bad.sum())} node images left the grid of f2")
        log.warning("node images left the grid of f2 (clamped)")
    return y1, u


def displacement_bounds(constants: ABConstants, beta_hat: float, eta1: float, eta2: float, c2: float) -> tuple[float, float]:
    """Right-hand sides of the pullback displacement estimates for (f1, x1)."""
    d = 1.0 - constants.alpha * beta_hat
    return constants.lambda_u * (beta_hat * eta1 + c2) / d + eta2, (constants.alpha * c2 + eta1) / d


# ---------------------------------------------------------------------------
# cocycles over sampled bases


@dataclass
class SampledCocycle:
    """Time-t maps between the fibers of a finite base sample.

    ``corr(t, k)`` returns H(t, w_k) as a generating correspondence from fiber
    k into fiber ``target(t, k)``.  Base samples must be spaced by ``step`` so
    that t-multiples of ``step`` land exactly on samples (periodic bases wrap).
    """

    corr: Callable[[float, int], GeneratingCorrespondence]
    samples: np.ndarray
    step: float
    dim_x: int
    dim_y: int
    periodic: bool = True
    reversed_time: bool = False
    cert: Callable[[int], ABCertificate] | None = None

    def target(self, t: float, k: int) -> int:
        m = int(round(t / self.step))
        if abs(m * self.step - t) > 1e-9 * max(1.0, t):
            raise ValueError(f"t = {t} is not a multiple of the base step {self.step}")
        n = len(self.samples)
        j = k - m if self.reversed_time else k + m
        if self.periodic:
            return j % n
        return min(max(j, 0), n - 1)


def dual_cocycle(c: SampledCocycle) -> SampledCocycle:
    """Dual cocycle over the inverse base map.

    dual(H(t, w_{k-m})) maps fiber k (its X~ = Y at time t) back into fiber k-m.
    """

    def corr(t, k):
        m = int(round(t / c.step))
        n = len(c.samples)
        j = (k - m) % n if c.periodic else k - m
        if not c.periodic and j < 0:
            raise ValueError("dual step leaves the sampled orbit")
        return dual(c.corr(t, j))

    cert = None if c.cert is None else (lambda k: dual_certificate(c.cert(k)))
    return SampledCocycle(
        corr=corr,
        samples=c.samples,
        step=c.step,
        dim_x=c.dim_y,
        dim_y=c.dim_x,
        periodic=c.periodic,
        reversed_time=not c.reversed_time,
        cert=cert,
    )


def dual_certificate(cert: ABCertificate) -> ABCertificate:
    """Certificate of the dual: angles and rates trade places."""
    return ABCertificate(
        alpha_min=cert.beta_min,
        beta_min=cert.alpha_min,
        alpha=cert.beta,
        beta=cert.alpha,
        lambda_s=cert.lambda_u,
        lambda_u=cert.lambda_s,
        k_alpha=cert.k_beta,
        k_beta=cert.k_alpha,
        gap_sigma=cert.gap_sigma,
        eps1=cert.eps1,
        c=cert.c,
    )


@dataclass(frozen=True)
class SectionSpec:
    """Reference section i = (i_X, i_Y) with its error profile eta(t, w)."""

    mode: str = "invariant_zero"  # invariant_zero | pseudo_stable | y_bounded
    eta_fn: Callable[[float, int], float] | None = None
    eps_fn: Callable[[int], float] | None = None
    eps1_fn: Callable[[int], float] | None = None

    def __post_init__(self):
        if self.mode not in ("invariant_zero", "pseudo_stable", "y_bounded"):
            raise ValueError(f"unknown section mode {self.mode!r}")

    def eps1(self, k: int) -> float:
        if self.mode == "invariant_zero":
            return 0.0
        return 1.0 if self.eps1_fn is None else float(self.eps1_fn(k))


def theta_factor(cert: ABCertificate, t0: float, eps1: float) -> float:
    """(c^2 lu^t0 ls^t0 + c lu^t0 e1^t0) / (1 - alpha beta')."""
    c = cert.c
    lu, ls = cert.lambda_u**t0, cert.lambda_s**t0
    bp = cert.k_beta * cert.beta if t0 >= cert.eps1 else cert.beta
    return (c * c * lu * ls + c * lu * eps1**t0) / (1.0 - cert.alpha * bp)


def theta_bounded(cert: ABCertificate, t0: float, eps1: float) -> float:
    """Contraction of the pullback in the sup norm for Y-bounded sections."""
    bp = cert.k_beta * cert.beta if t0 >= cert.eps1 else cert.beta
    return cert.c * cert.lambda_u**t0 * max(eps1, 1.0) ** t0 / (1.0 - cert.alpha * bp)


def offset_constant(cert: ABCertificate, t0: float, eps1: float) -> float:
    """K = (l1 beta + 1) / (1 - l1), l1 = c lu^t0 e1^t0 / (1 - alpha beta')."""
    bp = cert.k_beta * cert.beta if t0 >= cert.eps1 else cert.beta
    l1 = cert.c * cert.lambda_u**t0 * eps1**t0 / (1.0 - cert.alpha * bp)
    if l1 >= 1:
        return math.inf
    return (l1 * cert.beta + 1.0) / (1.0 - l1)


def choose_t0(cert_fn, n: int, step: float, mode: str, eps1_of, cap: int = 50, even: bool = True) -> tuple[float, float]:
    """Smallest multiple of ``step`` (even multiples if requested) with theta < 0.9."""
    for m in range(1, cap + 1):
        if even and m % 2:
            continue
        t0 = m * step
        th = max(
            (theta_bounded if mode == "y_bounded" else theta_factor)(cert_fn(k), t0, eps1_of(k)) for k in range(n)
        )
        if th < 0.9:
            return t0, th
    raise ThetaNotContractive(f"theta >= 0.9 for every t0 up to {cap} base steps")


def _check_spectral(certs: Sequence[ABCertificate], section: SectionSpec) -> None:
    for k, c in enumerate(certs):
        e1 = section.eps1(k)
        bp = c.k_beta * c.beta
        if c.alpha * bp >= 1:
            raise AngleConditionViolated(f"alpha * beta' >= 1 at base sample {k}")
        if section.mode != "y_bounded" and c.lambda_u * c.lambda_s >= 1:
            raise SpectralConditionViolated(f"lambda_u * lambda_s >= 1 at base sample {k}")
        if c.lambda_u * e1 >= 1:
            raise SpectralConditionViolated(f"lambda_u * eps1 >= 1 at base sample {k}")


def _outer_iteration(cocycle, t0, grid, init_values, const, tol, max_iter, strict_domain, section_mode):
    n = len(cocycle.samples)
    f = init_values.copy()
    history = []
    x_maps = np.zeros((n, grid.size, cocycle.dim_x))
    maps = [cocycle.corr(t0, k) for k in range(n)]
    targets = [cocycle.target(t0, k) for k in range(n)]
    for it in range(max_iter):
        new = np.empty_like(f)
        for k in range(n):
            g2 = Graph(grid, f[targets[k]])
            new[k], x_maps[k] = pullback_graph_step(
                maps[k], g2, const[k], tol=tol * 1e-2, strict_domain=False, init=x_maps[k] if it else None
            )
        if section_mode == "invariant_zero":
            z = _zero_node(grid)
            if z is not None:
                new[:, z] = 0.0
        inc = float(np.max(np.abs(new - f)))
        history.append(inc)
        f = new
        if inc <= tol:
            break
    else:
        raise MaxIterExceeded(f"graph iteration did not converge in {max_iter} sweeps (last increment {inc:.3g})")
    if strict_domain:
        for k in range(n):
            if not np.all(grid.contains(x_maps[k], slack=1e-9)):
                raise DomainEscape(f"node images at base sample {k} leave the grid")
    return f, x_maps, history


def _zero_node(grid: Grid) -> int | None:
    """Index of the node at the origin, if the grid has one."""
    pts = grid.points()
    d = np.linalg.norm(pts, axis=1)
    i = int(np.argmin(d))
    return i if d[i] <= 1e-14 else None


def invariance_residual(cocycle: SampledCocycle, values: np.ndarray, grid: Grid, consts, t: float, tol: float = 1e-13) -> float:
    """sup over nodes of |G(x, f_{tw}(x_t(x))) - f_w(x)| for the time-t maps."""
    worst = 0.0
    for k in range(len(cocycle.samples)):
        h = cocycle.corr(t, k)
        j = cocycle.target(t, k)
        y1, _ = pullback_graph_step(h, Graph(grid, values[j]), consts[k], tol=tol, strict_domain=False)
        worst = max(worst, float(np.max(np.abs(y1 - values[k]))))
    return worst


def invariant_graph(
    cocycle: SampledCocycle,
    section: SectionSpec,
    certs: Sequence[ABCertificate],
    grid: Grid,
    t0: float | None = None,
    tol: float = 1e-12,
    max_iter: int = 200,
    init: np.ndarray | Callable | None = None,
    check_times: Sequence[float] | None = None,
    strict_domain: bool = True,
) -> GraphFamily:
    """Fixed point of repeated pullbacks across the base, from the zero graph.

    ``certs[k]`` is the certificate at base sample k (per unit time).
    """
    n = len(cocycle.samples)
    certs = list(certs)
    _check_spectral(certs, section)
    if t0 is None:
        t0, theta = choose_t0(lambda k: certs[k], n, cocycle.step, section.mode, section.eps1)
    else:
        f_theta = theta_bounded if section.mode == "y_bounded" else theta_factor
        theta = max(f_theta(certs[k], t0, section.eps1(k)) for k in range(n))
        if theta >= 1:
            raise ThetaNotContractive(f"theta = {theta:.6g} >= 1 at t0 = {t0}")
    const = [c.constants(t0) for c in certs]
    dim_y = cocycle.dim_y
    if init is None:
        f0 = np.zeros((n, grid.size, dim_y))
    elif callable(init):
        pts = grid.points()
        f0 = np.stack([np.asarray(init(pts, k), dtype=float).reshape(grid.size, dim_y) for k in range(n)])
    else:
        f0 = np.asarray(init, dtype=float).reshape(n, grid.size, dim_y)
    values, x_maps, history = _outer_iteration(
        cocycle, t0, grid, f0, const, tol, max_iter, strict_domain, section.mode
    )
    lip = max(node_lipschitz(grid, values[k]) for k in range(n))
    # section offsets: distance of the graph from the zero section
    z = _zero_node(grid)
    if section.mode == "y_bounded":
        offs = np.array([float(np.max(np.linalg.norm(values[k], axis=-1))) for k in range(n)])
    elif z is not None:
        offs = np.array([float(np.linalg.norm(values[k, z])) for k in range(n)])
    else:
        pts = grid.points()
        offs = np.array([float(np.linalg.norm(Graph(grid, values[k])(np.zeros((1, grid.dim)))[0])) for k in range(n)])
    times = list(check_times) if check_times is not None else [t0]
    res = 0.0
    for t in times:
        cs = [c.constants(t) for c in certs]
        res = max(res, invariance_residual(cocycle, values, grid, cs, t, tol=tol * 1e-2))
    eta = None
    if section.eta_fn is not None:
        eta = {"t0": [float(section.eta_fn(t0, k)) for k in range(n)]}
    fam = GraphFamily(
        base_samples=np.asarray(cocycle.samples, dtype=float),
        grid=grid,
        values=values,
        lip_estimate=lip,
        section_offset=offs,
        invariance_residual=res,
        eta_profile=eta,
        x_maps=x_maps,
        history=history,
        theta=theta,
        t0=t0,
        meta={"mode": section.mode, "check_times": times},
    )
    if section.mode in ("pseudo_stable", "y_bounded"):
        fam.meta["K"] = max(offset_constant(certs[k], t0, max(section.eps1(k), 1.0 if section.mode == "y_bounded" else 0.0)) for k in range(n))
    return fam


def local_stable_graph(
    cocycle: SampledCocycle,
    sigma0: float,
    certs: Sequence[ABCertificate],
    t0: float,
    tol: float = 1e-12,
    n_nodes: int = 101,
    section: SectionSpec | None = None,
    max_iter: int = 200,
) -> GraphFamily:
    """Invariant graphs restricted to the balls X_w(sigma0).

    Requires sup alpha beta' < 1/2 and sup lambda_s < 1; node images must stay
    in the sigma0-ball, otherwise :class:`SigmaTooLarge` is raised.
    """
    certs = list(certs)
    for k, c in enumerate(certs):
        if c.alpha * c.k_beta * c.beta >= 0.5:
            raise AngleConditionViolated(f"alpha * beta' >= 1/2 at base sample {k}")
        if c.lambda_s >= 1:
            raise SpectralConditionViolated(f"lambda_s >= 1 at base sample {k}")
    grid = Grid.ball(sigma0, cocycle.dim_x, n_nodes)
    sec = section or SectionSpec("invariant_zero")
    try:
        fam = invariant_graph(cocycle, sec, certs, grid, t0=t0, tol=tol, max_iter=max_iter)
    except DomainEscape as exc:
        raise SigmaTooLarge(str(exc)) from exc
    lam = max(c.c * c.lambda_s**t0 for c in certs)
    pts = grid.points()
    lips = []
    for k in range(len(cocycle.samples)):
        xm = fam.x_maps[k]
        lips.append(node_lipschitz(grid, xm))
    fam.meta["x_map_lip"] = float(max(lips))
    fam.meta["x_map_lip_bound"] = float(lam)
    fam.meta["sigma0"] = sigma0
    return fam


# ---------------------------------------------------------------------------
# strong stable fibers along an orbit


@dataclass
class FiberResult:
    family: GraphFamily
    points: np.ndarray  # fiber points in orbit-relative block coords (x, y) at time 0
    times: np.ndarray
    separations: np.ndarray  # (n_points, n_times)
    fitted_rate: float
    per_point_rates: np.ndarray


def fit_rate(times: np.ndarray, dist: np.ndarray) -> float:
    """exp(slope) of a least-squares fit of log(dist) against time."""
    ok = dist > 0
    if ok.sum() < 2:
        return 0.0
    slope = np.polyfit(times[ok], np.log(dist[ok]), 1)[0]
    return float(math.exp(slope))


def strong_stable_fiber(
    cocycle: SampledCocycle,
    orbit_check: Callable[[], float] | None,
    sigma0: float,
    certs: Sequence[ABCertificate],
    t0: float,
    tol: float = 1e-12,
    n_nodes: int = 41,
    n_probe: int = 8,
    orbit_tol: float = 1e-8,
) -> FiberResult:
    """Fiber through the base orbit point at sample 0, in orbit-relative coordinates.

    ``cocycle`` must be the cocycle of the difference z - z0(t) along the orbit
    (non-periodic samples 0, t0, 2 t0, ...).  The fiber is the local stable
    graph at sample 0; forward orbits of fiber points are followed through the
    induced maps x_{t0}, and the log-distance decay is fitted.
    """
    if orbit_check is not None:
        err = orbit_check()
        if err > orbit_tol:
            raise OrbitInconsistent(f"base orbit violates the cocycle by {err:.3g} > {orbit_tol:g}")
    certs = list(certs)
    grid = Grid.ball(sigma0, cocycle.dim_x, n_nodes)
    n = len(cocycle.samples)
    const = [c.constants(t0) for c in certs]
    # one backward sweep from the zero graph at the horizon; repeated until the
    # graph at sample 0 stops changing
    values = np.zeros((n, grid.size, cocycle.dim_y))
    history = []
    for sweep in range(50):
        old = values.copy()
        for k in range(n - 2, -1, -1):
            j = cocycle.target(t0, k)
            values[k], _ = pullback_graph_step(cocycle.corr(t0, k), Graph(grid, values[j]), const[k], tol=tol * 1e-2, strict_domain=True)
        inc = float(np.max(np.abs(values - old)))
        history.append(inc)
        if inc <= tol:
            break
    xs = np.linspace(-sigma0, sigma0, n_probe + 2)[1:-1] if cocycle.dim_x == 1 else grid.points()[:: max(1, grid.size // n_probe)][:n_probe]
    xs = np.atleast_2d(xs).reshape(-1, cocycle.dim_x)
    seps = []
    x = xs.copy()
    for k in range(n):
        y = Graph(grid, values[k])(x)
        seps.append(np.maximum(np.linalg.norm(x, axis=1), np.linalg.norm(y, axis=1)))
        if k == n - 1:
            break
        j = cocycle.target(t0, k)
        _, x = pullback_graph_step(cocycle.corr(t0, k), Graph(grid, values[j]), const[k], tol=tol * 1e-2, nodes=x, strict_domain=True)
    seps = np.array(seps).T
    times = np.arange(n) * t0
    rates = np.array([fit_rate(times, s) for s in seps])
    y0 = Graph(grid, values[0])(xs)
    fam = GraphFamily(
        base_samples=np.asarray(cocycle.samples, dtype=float),
        grid=grid,
        values=values,
        lip_estimate=max(node_lipschitz(grid, values[k]) for k in range(n)),
        section_offset=np.array([float(np.linalg.norm(Graph(grid, values[k])(np.zeros((1, grid.dim)))[0])) for k in range(n)]),
        invariance_residual=history[-1],
        history=history,
        t0=t0,
    )
    return FiberResult(fam, np.hstack([xs, y0]), times, seps, float(np.max(rates)), rates)


# ---------------------------------------------------------------------------
# smoothness


def smoothness_probe(g: GraphFamily, order="1", k: int = 0, axis: int = 0) -> dict:
    """Finite-difference regularity measurements.

    order ``1``: one-sided difference quotients along ``axis`` and their
    largest discrepancy (a C^1 indicator that shrinks with the spacing).
    order ``holder``: fitted Hoelder exponent of the node derivative field
    across the base samples.
    """
    grid = g.grid
    if min(grid.n) < 5:
        raise GridTooCoarse("need at least 5 nodes per axis")
    d = grid.spacing[axis]
    if str(order) == "1":
        v = g.values[k].reshape(tuple(grid.n) + (-1,))
        fwd = np.diff(v, axis=axis) / d
        sl_m = [slice(None)] * grid.dim
        sl_p = [slice(None)] * grid.dim
        sl_m[axis] = slice(0, -1)
        sl_p[axis] = slice(1, None)
        back = fwd[tuple(sl_m)]
        ahead = fwd[tuple(sl_p)]
        central = 0.5 * (back + ahead)
        disc = float(np.max(np.abs(ahead - back))) if ahead.size else 0.0
        return {"order": "1", "max_discrepancy": disc, "derivative": central, "spacing": float(d)}
    if order == "holder":
        ders = []
        for j in range(len(g.base_samples)):
            v = g.values[j].reshape(tuple(grid.n) + (-1,))
            ders.append(np.gradient(v, d, axis=axis).ravel())
        ders = np.array(ders)
        w = np.asarray(g.base_samples, dtype=float)
        period = g.meta.get("period")
        xs, ys = [], []
        for a in range(len(w)):
            for b in range(a + 1, len(w)):
                dw = abs(w[a] - w[b])
                if period:
                    dw = min(dw, period - dw)
                dd = float(np.max(np.abs(ders[a] - ders[b])))
                if dw > 0 and dd > 1e-14:
                    xs.append(math.log(dw))
                    ys.append(math.log(dd))
        if len(xs) < 2:
            return {"order": "holder", "exponent": float("inf"), "pairs": len(xs)}
        xs, ys = np.array(xs), np.array(ys)
        # exponent = slope of the upper envelope over small separations
        small = xs <= np.quantile(xs, 0.5)
        slope = float(np.polyfit(xs[small], ys[small], 1)[0])
        return {"order": "holder", "exponent": slope, "pairs": int(len(xs))}
    raise ValueError(f"unknown order {order!r}")
