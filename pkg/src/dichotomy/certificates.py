"""Closed-form cone constants for dichotomic systems.

Everything here is a pure evaluation of explicit formulas: thresholds for the
cone angles, the rates lambda_s / lambda_u, the sharpened factors k_alpha /
k_beta for elapsed times t >= eps1, the uniform gap clause for cocycle
tables, and the constants of the Gronwall-type lemma for integrated
semigroups (the "MR" profile).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import AlphaBelowThreshold, EmptyTable, GapViolated, NoAdmissibleEpsHat


@dataclass(frozen=True)
class ABConstants:
    """Constants of one cone condition (A)(alpha; alpha', lambda_u) (B)(beta; beta', lambda_s)."""

    alpha: float
    alpha_prime: float
    beta: float
    beta_prime: float
    lambda_s: float
    lambda_u: float

    def __post_init__(self):
        if not (0 <= self.alpha_prime <= self.alpha * (1 + 1e-15) + 1e-300):
            raise ValueError("need 0 <= alpha' <= alpha")
        if not (0 <= self.beta_prime <= self.beta * (1 + 1e-15) + 1e-300):
            raise ValueError("need 0 <= beta' <= beta")
        if self.lambda_s <= 0 or self.lambda_u <= 0:
            raise ValueError("lambda_s and lambda_u must be positive")


@dataclass(frozen=True)
class ABCertificate:
    alpha_min: float
    beta_min: float
    alpha: float
    beta: float
    lambda_s: float
    lambda_u: float
    k_alpha: float
    k_beta: float
    gap_sigma: float
    eps1: float
    c: float = 1.0

    def constants(self, t: float = 1.0) -> ABConstants:
        """Constants for the time-t correspondence (rates raised to the power t)."""
        sharp = t >= self.eps1
        ka = self.k_alpha if sharp else 1.0
        kb = self.k_beta if sharp else 1.0
        return ABConstants(
            alpha=self.alpha,
            alpha_prime=ka * self.alpha,
            beta=self.beta,
            beta_prime=kb * self.beta,
            lambda_s=self.lambda_s**t,
            lambda_u=self.lambda_u**t,
        )


def k_factor(sigma: float, eps_h: float, h: float, eps1: float) -> float:
    """((sigma - eps_h/h) e^{-sigma eps1} + eps_h/h) / sigma."""
    r = eps_h / h if h > 0 else 0.0
    return ((sigma - r) * math.exp(-sigma * eps1) + r) / sigma


def _default_angle(threshold: float) -> float:
    # geometric midpoint of [threshold, 1); 0.5 when the threshold vanishes
    return math.sqrt(threshold) if threshold > 0 else 0.5


def gap_certificate(
    mu_s: float,
    mu_u: float,
    eps_s: float,
    eps_u: float,
    alpha: float | None = None,
    beta: float | None = None,
    eps1: float = 1.0,
) -> ABCertificate:
    """Cone constants for x' = A_s x + B1, y' = A_u y + B2 with Lip B1 <= eps_s, Lip B2 <= eps_u.

    Raises
    ------
    GapViolated
        if ``mu_u - mu_s - eps_s - eps_u <= 0``; the deficit is attached.
    AlphaBelowThreshold
        if a supplied angle is not strictly inside (threshold, 1).
    """
    gap = mu_u - mu_s - eps_s - eps_u
    if not gap > 0:
        raise GapViolated(-gap)
    sig_a = mu_u - mu_s - eps_u
    sig_b = mu_u - mu_s - eps_s
    a_min = eps_s / sig_a
    b_min = eps_u / sig_b
    for name, val, lo in (("alpha", alpha, a_min), ("beta", beta, b_min)):
        if val is not None and not (lo < val < 1):
            raise AlphaBelowThreshold(f"{name} = {val!r} must lie strictly in ({lo!r}, 1)")
    alpha = _default_angle(a_min) if alpha is None else float(alpha)
    beta = _default_angle(b_min) if beta is None else float(beta)
    return ABCertificate(
        alpha_min=a_min,
        beta_min=b_min,
        alpha=alpha,
        beta=beta,
        lambda_s=math.exp(mu_s + eps_s),
        lambda_u=math.exp(-mu_u + eps_u),
        k_alpha=k_factor(sig_a, eps_s, alpha, eps1),
        k_beta=k_factor(sig_b, eps_u, beta, eps1),
        gap_sigma=gap,
        eps1=float(eps1),
    )


@dataclass(frozen=True)
class UniformSummary:
    holds: bool
    c: float
    min_margin: float
    alpha: float | None = None
    beta: float | None = None
    k_alpha: float | None = None
    k_beta: float | None = None
    sup_lambda_product: float | None = None
    failing_index: int | None = None
    failing_clause: str | None = None


@dataclass(frozen=True)
class CocycleCertificate:
    mode: str
    c1: float
    per_omega: list = field(default_factory=list)
    summary: UniformSummary | None = None


def cocycle_gap_certificate(
    rates: Sequence[tuple[float, float, float]],
    c1: float = 1.0,
    mode: str = "bi_semigroup",
    c: float = 2.0,
    eps1: float = 1.0,
) -> CocycleCertificate:
    """Per-base-point certificates and, when possible, uniform constants.

    ``mode='bi_semigroup'`` scales eps by 2*c1; ``'max_norm_cocycle'`` uses it raw.
    The uniform clause is inf (mu_u - mu_s - (1+c) eps') > 0 with c > 1; when it
    holds, alpha = beta = 1/c is admissible everywhere.
    """
    rates = list(rates)
    if not rates:
        raise EmptyTable("rate table is empty")
    if mode not in ("bi_semigroup", "max_norm_cocycle"):
        raise ValueError(f"unknown mode {mode!r}")
    scale = 2.0 * c1 if mode == "bi_semigroup" else 1.0
    per = []
    margins = []
    for mu_s, mu_u, eps in rates:
        e = scale * eps
        try:
            per.append(gap_certificate(mu_s, mu_u, e, e, eps1=eps1))
        except GapViolated as exc:
            per.append(exc)
        margins.append(mu_u - mu_s - (1 + c) * e)
    bad = [i for i, m in enumerate(margins) if not m > 0]
    if bad:
        summary = UniformSummary(
            holds=False,
            c=c,
            min_margin=min(margins),
            failing_index=bad[0],
            failing_clause=f"inf(mu_u - mu_s - (1+c) eps') > 0 fails at index {bad[0]}",
        )
        return CocycleCertificate(mode=mode, c1=c1, per_omega=per, summary=summary)
    a = 1.0 / c
    ka = kb = 0.0
    lam = 0.0
    for (mu_s, mu_u, eps) in rates:
        e = scale * eps
        sig = mu_u - mu_s - e
        ka = max(ka, k_factor(sig, e, a, eps1))
        lam = max(lam, math.exp(mu_s + e) * math.exp(-mu_u + e))
    kb = ka
    summary = UniformSummary(
        holds=True,
        c=c,
        min_margin=min(margins),
        alpha=a,
        beta=a,
        k_alpha=ka,
        k_beta=kb,
        sup_lambda_product=lam,
    )
    return CocycleCertificate(mode=mode, c1=c1, per_omega=per, summary=summary)


@dataclass(frozen=True)
class MRProfile:
    delta_fn: Callable[[float], float]
    mu: float
    beta: float
    sigma: float = 0.5

    def check(self) -> None:
        if not (0 < self.sigma <= 0.5):
            raise ValueError("sigma must lie in (0, 1/2]")
        grid = np.geomspace(1e-6, 10.0, 200)
        vals = np.array([self.delta_fn(t) for t in grid])
        if np.any(np.diff(vals) < -1e-15):
            raise ValueError("delta must be increasing")
        small = np.array([self.delta_fn(t) for t in (1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6)])
        if np.any(np.diff(small) > 0) or small[-1] > 1e-2 * max(small[0], 1e-300) + 1e-3:
            raise ValueError("delta(t) does not tend to 0 as t -> 0")


def _case_a(delta_fn) -> bool:
    return all(abs(delta_fn(t) / t - 1.0) <= 0.01 for t in (1e-4, 1e-5, 1e-6))


def keylem_constants(profile: MRProfile, n_scan: int = 64) -> tuple[float, float, float]:
    """Return ``(lam, k, eps_hat)`` for the Gronwall-type bound |y(t)| <= e^{(mu+lam)t} k a.

    Case (a), delta(t)/t -> 1 (tested within 1% for t <= 1e-4): ``(beta, 1, 0)``.
    Otherwise the largest eps_hat in (0, 10] is located such that
    sigma > K(eps) = e^sigma delta(eps) beta max(e^{-mu eps}, 1) and beta delta(eps) < 1
    for eps in [eps_hat, 2 eps_hat].
    """
    profile.check()
    d, mu, beta, sigma = profile.delta_fn, profile.mu, profile.beta, profile.sigma
    if beta == 0:
        return 0.0, 1.0, 0.0
    if _case_a(d):
        return float(beta), 1.0, 0.0

    def K(e):
        return math.exp(sigma) * d(e) * beta * max(math.exp(-mu * e), 1.0)

    def ok(eh):
        for e in np.linspace(eh, 2 * eh, n_scan):
            if not (sigma > K(e) and beta * d(e) < 1):
                return False
        return True

    hi = 10.0
    if ok(hi):
        eh = hi
    else:
        lo = hi
        while not ok(lo):
            lo *= 0.5
            if lo < 1e-12:
                raise NoAdmissibleEpsHat("no eps_hat in (0, 10] satisfies the key-lemma conditions")
        hi = 2 * lo
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if ok(mid):
                lo = mid
            else:
                hi = mid
        eh = lo
    lam = max(K(e) / e for e in np.linspace(eh, 2 * eh, n_scan))
    k = max(1.0, math.exp(-mu * eh)) / (1.0 - beta * d(eh))
    return float(lam), float(k), float(eh)


def prelem_bound(b: float, mu_hat: float, mu: float, delta_eps1: float, n: int, eps1: float = 1.0) -> float:
    """Geometric-sum bound on |(S<>x)(n eps1)| for |x(t)| <= e^{mu_hat t} b."""
    if n < 1:
        raise ValueError("n must be >= 1")
    c0 = b * max(1.0, math.exp(mu_hat * eps1)) * delta_eps1
    d = (mu_hat - mu) * eps1
    if d == 0.0:
        geo = float(n)
    else:
        geo = math.expm1(d * n) / math.expm1(d)
    return c0 * math.exp(mu * (n - 1) * eps1) * geo


def prelem_recursion(b: float, mu_hat: float, mu: float, delta_eps1: float, n: int, eps1: float = 1.0) -> float:
    """Direct recursion K_m = e^{mu eps1} K_{m-1} + c0 e^{mu_hat (m-1) eps1}, K_0 = 0."""
    c0 = b * max(1.0, math.exp(mu_hat * eps1)) * delta_eps1
    k = 0.0
    for m in range(1, n + 1):
        k = math.exp(mu * eps1) * k + c0 * math.exp(mu_hat * (m - 1) * eps1)
    return k

