"""Correspondences represented by generating maps, and the brute-force cone checker.

A correspondence H : X1 x Y1 -> X2 x Y2 is stored only through its
generating map (F, G): a pair (z1, z2) = ((x1, y1), (x2, y2)) lies in the
graph iff ``x2 = F(x1, y2)`` and ``y1 = G(x1, y2)``.  Evaluators are
batched: arguments have shape (B, dim) and so do results.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .certificates import ABConstants
from .errors import DimensionMismatch, MaxIterExceeded, SamplerExhausted

Evaluator = Callable[[np.ndarray, np.ndarray], np.ndarray]
BothEvaluator = Callable[[np.ndarray, np.ndarray], tuple[np.ndarray, np.ndarray]]


def _as_batch(a, dim: int) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    elif a.ndim == 1:
        a = a.reshape(-1, dim) if dim else a.reshape(0, 0)
    if a.shape[-1] != dim:
        raise DimensionMismatch(f"expected trailing dimension {dim}, got {a.shape}")
    return a


@dataclass(frozen=True)
class LipTable:
    f_in_y: float  # sup_x Lip F(x, .)
    f_in_x: float  # sup_y Lip F(., y)
    g_in_y: float  # sup_x Lip G(x, .)
    g_in_x: float  # sup_y Lip G(., y)


@dataclass(frozen=True)
class GeneratingCorrespondence:
    eval_f: Evaluator
    eval_g: Evaluator
    dims: tuple[int, int, int, int]  # (dim_x1, dim_y1, dim_x2, dim_y2)
    lip_table: LipTable | None = None
    eval_both: BothEvaluator | None = field(default=None, compare=False)
    # True for inversions: the x/y factors of each graph point are stored swapped.
    swapped: bool = False

    @property
    def dim_x1(self) -> int:
        return self.dims[0]

    @property
    def dim_y1(self) -> int:
        return self.dims[1]

    @property
    def dim_x2(self) -> int:
        return self.dims[2]

    @property
    def dim_y2(self) -> int:
        return self.dims[3]

    def evaluate(self, x1, y2) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(x2, y1) = (F(x1, y2), G(x1, y2))`` for batched arguments."""
        x1 = _as_batch(x1, self.dim_x1)
        y2 = _as_batch(y2, self.dim_y2)
        if x1.shape[0] != y2.shape[0]:
            x1, y2 = np.broadcast_arrays(x1, y2)
        if self.eval_both is not None:
            return self.eval_both(x1, y2)
        return self.eval_f(x1, y2), self.eval_g(x1, y2)

    def graph_points(self, x1, y2) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Graph points ``(x1, y1, x2, y2)`` in this correspondence's own factor labels."""
        x1 = _as_batch(x1, self.dim_x1)
        y2 = _as_batch(y2, self.dim_y2)
        x2, y1 = self.evaluate(x1, y2)
        return x1, y1, x2, y2

    def ambient_points(self, x1, y2) -> tuple[np.ndarray, np.ndarray]:
        """Graph points as concatenated (z_in, z_out), undoing the factor swap of inversions."""
        a1, b1, a2, b2 = self.graph_points(x1, y2)
        if self.swapped:
            return np.hstack([b1, a1]), np.hstack([b2, a2])
        return np.hstack([a1, b1]), np.hstack([a2, b2])


def identity_correspondence(dim_x: int, dim_y: int) -> GeneratingCorrespondence:
    return GeneratingCorrespondence(
        eval_f=lambda x, y: np.array(x, dtype=float),
        eval_g=lambda x, y: np.array(y, dtype=float),
        dims=(dim_x, dim_y, dim_x, dim_y),
        lip_table=LipTable(0.0, 1.0, 1.0, 0.0),
    )


def linear_correspondence(fx, fy, gx, gy) -> GeneratingCorrespondence:
    """F(x, y) = fx x + fy y, G(x, y) = gx x + gy y for matrices (or scalars)."""
    fx, fy, gx, gy = (np.atleast_2d(np.asarray(m, dtype=float)) for m in (fx, fy, gx, gy))
    dims = (fx.shape[1], gx.shape[0], fx.shape[0], fy.shape[1])

    def f(x, y):
        return x @ fx.T + y @ fy.T

    def g(x, y):
        return x @ gx.T + y @ gy.T

    n = lambda m: float(np.linalg.norm(m, 2))
    return GeneratingCorrespondence(f, g, dims, LipTable(n(fy), n(fx), n(gy), n(gx)))


def dual(h: GeneratingCorrespondence) -> GeneratingCorrespondence:
    """F~(a, b) = G(b, a), G~(a, b) = F(b, a); spaces X~1 = Y2, Y~1 = X2, X~2 = Y1, Y~2 = X1."""
    dx1, dy1, dx2, dy2 = h.dims
    both = None
    if h.eval_both is not None:
        inner = h.eval_both

        def both(a, b):
            x2, y1 = inner(b, a)
            return y1, x2

    lt = h.lip_table
    return GeneratingCorrespondence(
        eval_f=_swap_args(h.eval_g),
        eval_g=_swap_args(h.eval_f),
        dims=(dy2, dx2, dy1, dx1),
        lip_table=None if lt is None else LipTable(lt.g_in_x, lt.g_in_y, lt.f_in_x, lt.f_in_y),
        eval_both=both,
        swapped=h.swapped,
    )


class _swap_args:
    """Argument-swapping wrapper; unwraps itself so double swaps return the original."""

    def __new__(cls, fn):
        if isinstance(fn, _swap_args):
            return fn.fn
        obj = super().__new__(cls)
        obj.fn = fn
        return obj

    def __call__(self, a, b):
        return self.fn(b, a)


def invert(h: GeneratingCorrespondence) -> GeneratingCorrespondence:
    """The inverse relation, written with its factors relabelled.

    (z2, z1) lies in the graph of ``invert(h)`` iff (z1, z2) lies in the graph of
    ``h``.  The generating map is the role-swapped one, and ``swapped`` records
    that every factor pair is stored as (y, x).
    """
    d = dual(h)
    return GeneratingCorrespondence(
        eval_f=d.eval_f,
        eval_g=d.eval_g,
        dims=d.dims,
        lip_table=d.lip_table,
        eval_both=d.eval_both,
        swapped=not h.swapped,
    )


@dataclass(frozen=True)
class GraphSamples:
    """Composed graph points with the intermediate point that witnesses membership."""

    x1: np.ndarray
    y1: np.ndarray
    x_mid: np.ndarray
    y_mid: np.ndarray
    x3: np.ndarray
    y3: np.ndarray
    residual: float


def compose_on_samples(
    h2: GeneratingCorrespondence,
    h1: GeneratingCorrespondence,
    samples: tuple[np.ndarray, np.ndarray],
    tol: float = 1e-12,
    max_iter: int = 500,
    verify_tol: float = 1e-9,
) -> GraphSamples:
    """Evaluate h2 o h1 at arguments ``samples = (x1, y3)``.

    The intermediate y-coordinate solves y_mid = G2(F1(x1, y_mid), y3), a contraction
    whenever Lip G2 * Lip F1 < 1 (which the cone conditions guarantee).
    """
    if h1.dim_x2 != h2.dim_x1 or h1.dim_y2 != h2.dim_y1:
        raise DimensionMismatch(f"cannot compose dims {h2.dims} after {h1.dims}")
    x1 = _as_batch(samples[0], h1.dim_x1)
    y3 = _as_batch(samples[1], h2.dim_y2)
    ym = np.zeros((x1.shape[0], h1.dim_y2))
    for _ in range(max_iter):
        xm, _ = h1.evaluate(x1, ym)
        _, ym_new = h2.evaluate(xm, y3)
        step = float(np.max(np.abs(ym_new - ym))) if ym.size else 0.0
        ym = ym_new
        if step <= tol:
            break
    else:
        raise MaxIterExceeded("composition fixed point did not converge")
    xm, y1 = h1.evaluate(x1, ym)
    x3, ym_chk = h2.evaluate(xm, y3)
    res = float(np.max(np.abs(ym_chk - ym))) if ym.size else 0.0
    if res > verify_tol:
        raise MaxIterExceeded(f"intermediate point residual {res:.3g} exceeds {verify_tol:g}")
    return GraphSamples(x1, y1, xm, ym, x3, y3, res)


def compose(h2: GeneratingCorrespondence, h1: GeneratingCorrespondence, tol: float = 1e-12) -> GeneratingCorrespondence:
    """h2 o h1 as a generating correspondence (evaluated by :func:`compose_on_samples`)."""

    def both(x1, y3):
        s = compose_on_samples(h2, h1, (x1, y3), tol=tol)
        return s.x3, s.y1

    return GeneratingCorrespondence(
        eval_f=lambda x, y: both(x, y)[0],
        eval_g=lambda x, y: both(x, y)[1],
        dims=(h1.dim_x1, h1.dim_y1, h2.dim_x2, h2.dim_y2),
        eval_both=both,
    )


# ---------------------------------------------------------------------------
# sampling and the empirical (A)(B) checker


def _ball(rng: np.random.Generator, n: int, dim: int, radius: float) -> np.ndarray:
    if dim == 0:
        return np.zeros((n, 0))
    g = rng.standard_normal((n, dim))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    r = radius * rng.random(n) ** (1.0 / dim)
    return g * r[:, None]


@dataclass
class BallSampler:
    """Uniform pairs of generating-map arguments from a product of balls.

    Yields ``(x1, y2, x1', y2')`` batches.  ``limit`` makes the sampler finite.
    """

    dim_x: int
    dim_y: int
    radius_x: float
    radius_y: float
    seed: int = 0
    limit: int | None = None
    center_x: np.ndarray | None = None
    center_y: np.ndarray | None = None

    def draw(self, n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        if self.limit is not None and n > self.limit:
            raise SamplerExhausted(f"sampler holds {self.limit} pairs, {n} requested")
        rng = np.random.default_rng(self.seed)
        cx = np.zeros(self.dim_x) if self.center_x is None else np.asarray(self.center_x, dtype=float)
        cy = np.zeros(self.dim_y) if self.center_y is None else np.asarray(self.center_y, dtype=float)
        a = _ball(rng, n, self.dim_x, self.radius_x) + cx
        b = _ball(rng, n, self.dim_y, self.radius_y) + cy
        a2 = _ball(rng, n, self.dim_x, self.radius_x) + cx
        b2 = _ball(rng, n, self.dim_y, self.radius_y) + cy
        return a, b, a2, b2


@dataclass(frozen=True)
class ConditionReport:
    condition: str
    count: int
    worst_margin: float
    seed: int
    n_pairs: int
    n_premise: int = 0


@dataclass(frozen=True)
class ViolationReport:
    reports: tuple[ConditionReport, ...]
    margins: dict | None = None

    def __getitem__(self, name: str) -> ConditionReport:
        for r in self.reports:
            if r.condition == name:
                return r
        raise KeyError(name)

    @property
    def total(self) -> int:
        return sum(r.count for r in self.reports)

    def to_json(self) -> list[dict]:
        return [
            {"condition": r.condition, "count": r.count, "worst_margin": r.worst_margin, "seed": r.seed, "n_pairs": r.n_pairs}
            for r in self.reports
        ]


def _norm(v: np.ndarray) -> np.ndarray:
    return np.linalg.norm(v, axis=-1) if v.shape[-1] else np.zeros(v.shape[:-1])


def cone_margins(h: GeneratingCorrespondence, c: ABConstants, args) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """Per-pair (premise mask, margin) for each of A1, A2, B1, B2.

    A positive margin on a pair satisfying the premise is a violation.
    """
    a, b, a2, b2 = args
    x1, y1, x2, y2 = h.graph_points(a, b)
    u1, v1, u2, v2 = h.graph_points(a2, b2)
    dx1, dy1, dx2, dy2 = _norm(x1 - u1), _norm(y1 - v1), _norm(x2 - u2), _norm(y2 - v2)
    pa = dx1 <= c.alpha * dy1
    pb = dy2 <= c.beta * dx2
    return {
        "A1": (pa, dx2 - c.alpha_prime * dy2),
        "A2": (pa, dy1 - c.lambda_u * dy2),
        "B1": (pb, dy1 - c.beta_prime * dx1),
        "B2": (pb, dx2 - c.lambda_s * dx1),
    }


def empirical_ab_check(
    h: GeneratingCorrespondence,
    constants: ABConstants,
    sampler: BallSampler,
    n_pairs: int,
    tol: float = 1e-9,
    threads: int = 1,
    chunk: int = 2048,
    keep_margins: bool = False,
) -> ViolationReport:
    """Brute-force test of the cone conditions on sampled pairs of graph points."""
    if n_pairs < 1:
        raise ValueError("n_pairs must be >= 1")
    args = sampler.draw(n_pairs)
    starts = list(range(0, n_pairs, chunk))

    def job(s):
        return cone_margins(h, constants, tuple(x[s : s + chunk] for x in args))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(job, starts))
    else:
        parts = [job(s) for s in starts]
    reports = []
    merged = {}
    for name in ("A1", "A2", "B1", "B2"):
        prem = np.concatenate([p[name][0] for p in parts])
        marg = np.concatenate([p[name][1] for p in parts])
        merged[name] = (prem, marg)
        active = marg[prem]
        worst = float(active.max()) if active.size else float("-inf")
        reports.append(
            ConditionReport(
                condition=name,
                count=int(np.sum(active > tol)),
                worst_margin=worst,
                seed=sampler.seed,
                n_pairs=n_pairs,
                n_premise=int(prem.sum()),
            )
        )
    return ViolationReport(tuple(reports), merged if keep_margins else None)


def estimate_lipschitz(
    h: GeneratingCorrespondence, sampler: BallSampler, n_pairs: int = 1000, ord: float = 2
) -> LipTable:
    """Finite-difference Lipschitz estimates, varying one argument at a time."""
    a, b, a2, b2 = sampler.draw(n_pairs)
    f0, g0 = h.evaluate(a, b)
    fa, ga = h.evaluate(a2, b)  # vary x
    fb, gb = h.evaluate(a, b2)  # vary y

    def ratio(num, den):
        n = np.linalg.norm(num, ord=ord, axis=-1) if num.shape[-1] else np.zeros(len(num))
        d = np.linalg.norm(den, ord=ord, axis=-1) if den.shape[-1] else np.zeros(len(den))
        ok = d > 1e-14
        return float(np.max(n[ok] / d[ok])) if np.any(ok) else 0.0

    return LipTable(
        f_in_y=ratio(fb - f0, b2 - b),
        f_in_x=ratio(fa - f0, a2 - a),
        g_in_y=ratio(gb - g0, b2 - b),
        g_in_x=ratio(ga - g0, a2 - a),
    )

