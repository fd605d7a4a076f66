"""Glue between evolution problems, certificates and sampled cocycles."""

from __future__ import annotations

import numpy as np

from .certificates import ABCertificate, gap_certificate
from .graphs import SampledCocycle
from .solver import EvolutionProblem, cocycle_correspondence


def effective_rates(p: EvolutionProblem) -> tuple[float, float]:
    """Block rates after the worst case of a scalar driver a(.) > 0."""
    s = p.splitting
    mu_s, mu_u = s.mu_s, s.mu_u
    if p.base.kind != "driver":
        return mu_s, mu_u
    th = np.linspace(0.0, p.base.period or 2 * np.pi, 4097)
    a = np.asarray(p.base.driver(th), dtype=float)
    lo, hi = float(a.min()), float(a.max())
    if lo <= 0:
        raise ValueError("driver must stay positive")
    ms = mu_s * (lo if mu_s < 0 else hi)
    mu = mu_u * (lo if mu_u > 0 else hi)
    return ms, mu


def problem_certificate(p: EvolutionProblem, eps1: float = 1.0, alpha=None, beta=None) -> ABCertificate:
    ms, mu = effective_rates(p)
    es, eu = p.block_eps()
    return gap_certificate(ms, mu, es, eu, alpha=alpha, beta=beta, eps1=eps1)


def problem_cocycle(
    p: EvolutionProblem,
    samples=None,
    step: float = 0.25,
    steps_per_unit: int = 200,
    tol: float = 1e-13,
) -> SampledCocycle:
    """Sampled cocycle of the two-point solver.

    For a point base ``samples`` defaults to [0]; for periodic or driver bases
    the samples are multiples of ``step`` covering one period.
    """
    if samples is None:
        if p.base.kind in ("periodic", "driver") and p.base.period:
            n = int(round(p.base.period / step))
            step = p.base.period / n
            samples = np.arange(n) * step
        else:
            samples = np.zeros(1)
    samples = np.asarray(samples, dtype=float)
    cache: dict = {}

    def corr(t, k):
        key = (round(t, 12), k)
        if key not in cache:
            n = max(20, int(np.ceil(steps_per_unit * t)))
            cache[key] = cocycle_correspondence(p, t, float(samples[k]), grid_n=n, tol=tol)
        return cache[key]

    cert = problem_certificate(p)
    return SampledCocycle(
        corr=corr,
        samples=samples,
        step=step,
        dim_x=p.splitting.dim_x,
        dim_y=p.splitting.dim_y,
        periodic=p.base.kind != "orbit",
        cert=lambda k: cert,
    )


def orbit_problem(p: EvolutionProblem, times: np.ndarray, z: np.ndarray) -> EvolutionProblem:
    """Difference problem w = z - z0(t) along a sampled orbit (ambient states ``z``).

    The orbit is interpolated by a cubic spline; the base becomes the orbit
    time itself, so phases are absolute times along the orbit.
    """
    from dataclasses import replace

    from scipy.interpolate import CubicSpline

    from .solver import BaseDynamics

    spline = CubicSpline(np.asarray(times, dtype=float), np.asarray(z, dtype=float), axis=0)
    g = p.nonlinearity
    base = p.base

    def g_rel(phase, w):
        w = np.asarray(w, dtype=float)
        ph = np.broadcast_to(np.asarray(phase, dtype=float), w.shape[:-1])
        z0 = spline(ph)
        src = base.shift(0.0, ph) if base.kind != "point" else ph
        return np.asarray(g(src, z0 + w), dtype=float) - np.asarray(g(src, z0), dtype=float)

    return replace(p, nonlinearity=g_rel, base=BaseDynamics("orbit"), name=f"{p.name}@orbit")


def orbit_consistency(p: EvolutionProblem, times: np.ndarray, x: np.ndarray, y: np.ndarray, steps_per_unit: int = 400) -> float:
    """Largest mismatch of consecutive orbit samples with the generating maps."""
    from .solver import generating_cocycle_eval

    worst = 0.0
    for k in range(len(times) - 1):
        dt = times[k + 1] - times[k]
        f, g = generating_cocycle_eval(
            p, dt, times[k], x[k], y[k + 1], grid_n=max(20, int(np.ceil(steps_per_unit * dt)))
        )
        worst = max(worst, float(np.max(np.abs(f - x[k + 1]))), float(np.max(np.abs(g - y[k]))))
    return worst


def orbit_cocycle(p: EvolutionProblem, t0: float, n: int, steps_per_unit: int = 200, tol: float = 1e-13) -> SampledCocycle:
    """Cocycle of an orbit difference problem sampled at 0, t0, ..., (n-1) t0."""
    samples = np.arange(n) * t0
    cache: dict = {}

    def corr(t, k):
        key = (round(t, 12), k)
        if key not in cache:
            m = max(20, int(np.ceil(steps_per_unit * t)))
            cache[key] = cocycle_correspondence(p, t, float(samples[k]), grid_n=m, tol=tol)
        return cache[key]

    return SampledCocycle(
        corr=corr,
        samples=samples,
        step=t0,
        dim_x=p.splitting.dim_x,
        dim_y=p.splitting.dim_y,
        periodic=False,
    )
