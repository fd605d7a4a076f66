"""Catalog of finite-dimensional problem instances.

Each entry is a semilinear system z' = a(w) A z + g(w, z) with a declared
Lipschitz bound for g, a spectral cut for the splitting, base dynamics, and
closed-form oracle data where one exists.  Nonlinearities that are not
globally Lipschitz are cut off by radial retraction onto a ball, applied to
the coordinate blocks they act on.

Ids: scalar_saddle, elliptic_cylinder, spatial_rd, nonauto_scalar,
nhim_circle, boussinesq_trunc.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.fft import dst

from .errors import ParamOutOfRange, UnknownProblem
from .solver import BaseDynamics, EvolutionProblem
from .splitting import SpectralSplitting, eigen_reweight, spectral_split, subspace_splitting


def radial_retraction(v, radius: float) -> np.ndarray:
    """v * min(1, radius / |v|) along the last axis."""
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(n > radius, radius / np.where(n > 0, n, 1.0), 1.0)
    return v * s


def _clip(v, radius: float) -> np.ndarray:
    return np.clip(v, -radius, radius)


def series_unstable(c: float, order: int = 40) -> np.ndarray:
    """Taylor coefficients of y = h(x) invariant under x' = x + c y^2, y' = -y + x^2."""
    b = np.zeros(order + 1)
    for n in range(2, order + 1):
        hp = np.polynomial.polynomial.polyder(b[:n])
        acc = np.polynomial.polynomial.polymul(hp, np.polynomial.polynomial.polymul(b[:n], b[:n]))
        term = acc[n] if n < len(acc) else 0.0
        b[n] = ((1.0 if n == 2 else 0.0) - c * term) / (n + 1)
    return b


def series_stable(c: float, order: int = 40) -> np.ndarray:
    """Taylor coefficients of x = k(y) invariant under the same system."""
    a = np.zeros(order + 1)
    for n in range(2, order + 1):
        kp = np.polynomial.polynomial.polyder(a[:n])
        acc = np.polynomial.polynomial.polymul(kp, np.polynomial.polynomial.polymul(a[:n], a[:n]))
        term = acc[n] if n < len(acc) else 0.0
        a[n] = (term - (c if n == 2 else 0.0)) / (n + 1)
    return a


@dataclass(frozen=True)
class ProblemDescriptor:
    id: str
    params: dict
    generator: np.ndarray
    nonlinearity: Callable
    eps: float
    cut: float = 0.0
    base: BaseDynamics = field(default_factory=BaseDynamics)
    well_posed: bool = False
    eps_split: tuple[float, float] | None = None
    oracle: dict = field(default_factory=dict)
    truncation: dict = field(default_factory=dict)
    reweight: bool = False
    sample_radius: float = 0.5
    notes: str = ""
    # g = E phi(D z) with Lip phi <= phi_lip: (D, E, phi_lip); sharpens block bounds
    io_maps: tuple | None = None
    # named splittings: name -> (basis_x, basis_y, (eps_s, eps_u))
    named_splits: dict = field(default_factory=dict)

    def splitting(self, cut: float | None = None) -> SpectralSplitting:
        s = spectral_split(self.generator, self.cut if cut is None else cut)
        return eigen_reweight(s) if self.reweight else s

    def block_lipschitz(self, s: SpectralSplitting) -> tuple[float, float] | None:
        """(eps_s, eps_u) in block coordinates from the input/output structure."""
        if self.io_maps is None:
            return None
        d_in, e_out, lip = self.io_maps
        w = np.linalg.inv(s.basis)
        wx, wy = w[: s.dim_x], w[s.dim_x :]
        spread = (np.linalg.norm(d_in @ s.basis_x, 2) if s.dim_x else 0.0) + (
            np.linalg.norm(d_in @ s.basis_y, 2) if s.dim_y else 0.0
        )
        ex = np.linalg.norm(wx @ e_out, 2) * lip * spread if s.dim_x else 0.0
        ey = np.linalg.norm(wy @ e_out, 2) * lip * spread if s.dim_y else 0.0
        return float(ex), float(ey)

    def to_problem(
        self, cut: float | None = None, eps_split: tuple[float, float] | None = None, split_name: str | None = None
    ) -> EvolutionProblem:
        if split_name is not None:
            try:
                bx, by, es0 = self.named_splits[split_name]
            except KeyError:
                raise ValueError(f"{self.id} has no splitting named {split_name!r}") from None
            return EvolutionProblem(
                splitting=subspace_splitting(self.generator, bx, by),
                nonlinearity=self.nonlinearity,
                eps=self.eps,
                base=self.base,
                well_posed=self.well_posed,
                eps_split=eps_split or es0,
                name=f"{self.id}:{split_name}",
            )
        es = eps_split if eps_split is not None else (self.eps_split if cut is None else None)
        split = self.splitting(cut)
        if es is None:
            es = self.block_lipschitz(split)
        return EvolutionProblem(
            splitting=split,
            nonlinearity=self.nonlinearity,
            eps=self.eps,
            base=self.base,
            well_posed=self.well_posed,
            eps_split=es,
            name=self.id,
        )

    def mode_rates(self) -> list[np.ndarray]:
        """Eigenvalues of each retained mode block (empty when not modal)."""
        size = self.truncation.get("block_size")
        if not size:
            return []
        a = self.generator
        return [
            np.sort_complex(np.linalg.eigvals(a[i : i + size, i : i + size]))
            for i in range(0, a.shape[0], size)
        ]

    def summary(self) -> dict:
        return {
            "id": self.id,
            "params": self.params,
            "dim": int(self.generator.shape[0]),
            "eps": self.eps,
            "eps_split": list(self.eps_split) if self.eps_split else None,
            "cut": self.cut,
            "base": self.base.kind,
            "well_posed": self.well_posed,
            "notes": self.notes,
        }


# ---------------------------------------------------------------------------
# individual problems


def _range(name, val, lo, hi, lo_open=False, hi_open=False):
    bad = val < lo or val > hi or (lo_open and val == lo) or (hi_open and val == hi)
    if bad:
        raise ParamOutOfRange(f"{name} = {val!r} outside {'(' if lo_open else '['}{lo}, {hi}{')' if hi_open else ']'}")


def _scalar_saddle(radius: float = 0.5, c: float = 0.0) -> ProblemDescriptor:
    _range("radius", radius, 0.0, 0.5, lo_open=True)
    _range("c", c, -1.0, 1.0)
    if radius * (1 + abs(c)) >= 1:
        raise ParamOutOfRange("gap fails: need radius * (1 + |c|) < 1")

    def g(omega, z):
        z = np.asarray(z, dtype=float)
        x, y = _clip(z[..., 0], radius), _clip(z[..., 1], radius)
        return np.stack([c * y * y, x * x], axis=-1)

    # stable block = ambient y (gets x^2), unstable block = ambient x (gets c y^2)
    eps_s, eps_u = 2 * radius, 2 * abs(c) * radius
    ub = series_unstable(c)
    sb = series_stable(c)
    return ProblemDescriptor(
        id="scalar_saddle",
        params={"radius": radius, "c": c},
        generator=np.diag([1.0, -1.0]),
        nonlinearity=g,
        eps=math.hypot(eps_s, eps_u),
        eps_split=(eps_s, eps_u),
        well_posed=True,
        oracle={
            "unstable_manifold": lambda x: np.polynomial.polynomial.polyval(x, ub),
            "unstable_series": ub,
            "stable_manifold": lambda y: np.polynomial.polynomial.polyval(y, sb),
            "stable_series": sb,
        },
        truncation={"radius": radius},
        sample_radius=radius,
        notes="x' = x + c r(y)^2, y' = -y + r(x)^2 with r the clip to [-radius, radius]",
    )


def _companion_modes(rates2: np.ndarray) -> np.ndarray:
    """Block-diagonal of [[0, 1], [r, 0]] for each r in ``rates2``."""
    n = len(rates2)
    a = np.zeros((2 * n, 2 * n))
    for k, r in enumerate(rates2):
        a[2 * k, 2 * k + 1] = 1.0
        a[2 * k + 1, 2 * k] = r
    return a


def _modal_io(n: int, out_scale: np.ndarray, lip: float):
    """Input map picks the u-components, output map writes scaled v-components."""
    d_in = np.zeros((n, 2 * n))
    e_out = np.zeros((2 * n, n))
    for j in range(n):
        d_in[j, 2 * j] = 1.0
        e_out[2 * j + 1, j] = out_scale[j]
    return d_in, e_out, lip


def _elliptic_cylinder(n_modes: int = 3, eps: float = 0.2) -> ProblemDescriptor:
    n_modes = int(n_modes)
    _range("n_modes", n_modes, 1, 64)
    _range("eps", eps, 0.0, 1.0)
    k = np.arange(1, n_modes + 1)
    a = _companion_modes((k * np.pi) ** 2)

    def g(omega, z):
        z = np.asarray(z, dtype=float)
        u = z[..., 0::2]
        nodes = dst(u, type=1, norm="ortho", axis=-1)
        coef = dst(eps * np.sin(nodes), type=1, norm="ortho", axis=-1)
        out = np.zeros_like(z)
        out[..., 1::2] = coef
        return out

    return ProblemDescriptor(
        id="elliptic_cylinder",
        params={"n_modes": n_modes, "eps": eps},
        generator=a,
        nonlinearity=g,
        eps=eps,
        reweight=True,
        truncation={"n_modes": n_modes, "block_size": 2, "domain": [0.0, 1.0]},
        oracle={"mode_rates": k * np.pi},
        io_maps=_modal_io(n_modes, np.ones(n_modes), eps),
        sample_radius=1.0,
        notes="u_tt + u_xx = eps sin(u) on [0,1] (Dirichlet), sine-Galerkin modes",
    )


def _fourier_matrix(m: int) -> np.ndarray:
    t = 2 * np.pi * np.arange(m) / m
    cols = [np.full(m, 1 / math.sqrt(m))]
    for l in range(1, (m - 1) // 2 + 1):
        cols.append(math.sqrt(2 / m) * np.cos(l * t))
        cols.append(math.sqrt(2 / m) * np.sin(l * t))
    return np.stack(cols, axis=1)


def _spatial_rd(n_modes: int = 5, d: float = 1.0, c: float = 0.5, m0: float = 1.0, eps: float = 0.1) -> ProblemDescriptor:
    n_modes = int(n_modes)
    _range("n_modes", n_modes, 1, 32)
    _range("d", d, 0.1, 10.0)
    _range("m0", m0, 0.0, 10.0, lo_open=True)
    _range("c", c, -5.0, 5.0)
    _range("eps", eps, 0.0, 1.0)
    m = 2 * n_modes - 1
    # coefficient order: [a0, a1, b1, a2, b2, ...]; u_t acts as K
    kmat = np.zeros((m, m))
    kmat[0, 0] = m0
    for l in range(1, n_modes):
        i = 2 * l - 1
        kmat[i : i + 2, i : i + 2] = [[m0, l], [-l, m0]]
    a = np.zeros((2 * m, 2 * m))
    a[:m, m:] = np.eye(m)
    a[m:, :m] = kmat / d
    a[m:, m:] = -c / d * np.eye(m)
    phi = _fourier_matrix(m)

    def g(omega, z):
        z = np.asarray(z, dtype=float)
        u = z[..., :m]
        vals = u @ phi.T
        coef = (eps * np.sin(vals)) @ phi
        out = np.zeros_like(z)
        out[..., m:] = -coef / d
        return out

    return ProblemDescriptor(
        id="spatial_rd",
        params={"n_modes": n_modes, "d": d, "c": c, "m0": m0, "eps": eps},
        generator=a,
        nonlinearity=g,
        eps=eps / d,
        reweight=True,
        truncation={"n_modes": n_modes, "collocation_nodes": m},
        io_maps=(np.hstack([np.eye(m), np.zeros((m, m))]), np.vstack([np.zeros((m, m)), -np.eye(m) / d]), eps),
        sample_radius=1.0,
        notes="d u_xx + c u_x = u_t + m0 u - eps sin(u), 2pi-periodic in t; x is the evolution variable",
    )


def _nonauto_scalar(amp: float = 0.5, eps: float = 0.1, forcing: float = 0.0) -> ProblemDescriptor:
    _range("amp", amp, 0.0, 0.9)
    _range("eps", eps, 0.0, 1.0)
    _range("forcing", forcing, -1.0, 1.0)
    if eps >= 1 - amp:
        raise ParamOutOfRange("gap fails: need eps < 1 - amp")

    def drv(theta):
        return 1.0 + amp * np.sin(theta)

    def g(omega, z):
        z = np.asarray(z, dtype=float)
        out = eps * np.sin(z)
        if forcing:
            ph = np.broadcast_to(np.asarray(omega, dtype=float), z.shape[:-1])
            out = out + forcing * np.stack([np.sin(ph), np.cos(ph)], axis=-1)
        return out

    return ProblemDescriptor(
        id="nonauto_scalar",
        params={"amp": amp, "eps": eps, "forcing": forcing},
        generator=np.diag([-1.0, 1.0]),
        nonlinearity=g,
        eps=eps,
        eps_split=(eps, eps),
        base=BaseDynamics("driver", period=2 * np.pi, driver=drv),
        well_posed=True,
        oracle={"a_min": 1.0 - amp, "a_max": 1.0 + amp},
        sample_radius=1.0,
        notes="z' = a(t) diag(-1, 1) z + eps sin(z) + forcing (sin t, cos t), a(t) = 1 + amp sin t",
    )


def _nhim_circle(eta: float = 1e-2, shear: float = 0.0, nu: float = 0.0, variant: str = "trichotomy", radius: float = 0.25) -> ProblemDescriptor:
    _range("eta", eta, 0.0, 0.1)
    _range("shear", shear, -1.0, 1.0)
    _range("nu", nu, -1.0, 1.0)
    _range("radius", radius, 0.0, 0.5, lo_open=True)
    if variant not in ("trichotomy", "attracting"):
        raise ParamOutOfRange(f"variant {variant!r} not in (trichotomy, attracting)")
    lz = 4.0 if variant == "trichotomy" else -4.0
    # tubular coordinates (theta, rho, z); rho = r - 1
    a = np.array([[0.0, shear, 0.0], [0.0, -2.0, 0.0], [0.0, 0.0, lz]])

    def g(omega, w):
        w = np.asarray(w, dtype=float)
        th, rho = w[..., 0], _clip(w[..., 1], radius)
        return np.stack([np.ones_like(th), nu * rho * rho, eta * np.cos(th)], axis=-1)

    def ambient_field(p):
        """Vector field of the same system in R^3 (valid off the axis r = 0)."""
        p = np.asarray(p, dtype=float)
        x, y, z = p[..., 0], p[..., 1], p[..., 2]
        r = np.hypot(x, y)
        rho = r - 1.0
        rdot = -2.0 * rho + nu * _clip(rho, radius) ** 2
        thdot = 1.0 + shear * rho
        c, s = x / r, y / r
        return np.stack([rdot * c - r * thdot * s, rdot * s + r * thdot * c, lz * z + eta * c], axis=-1)

    def to_tubular(p):
        p = np.asarray(p, dtype=float)
        return np.stack([np.arctan2(p[..., 1], p[..., 0]), np.hypot(p[..., 0], p[..., 1]) - 1.0, p[..., 2]], axis=-1)

    def to_ambient(w):
        w = np.asarray(w, dtype=float)
        r = 1.0 + w[..., 1]
        return np.stack([r * np.cos(w[..., 0]), r * np.sin(w[..., 0]), w[..., 2]], axis=-1)

    eps_cs = (2 * abs(nu) * radius, eta)
    e = np.eye(3)
    rho_dir = np.array([-shear / 2.0, 1.0, 0.0])
    if variant == "trichotomy":
        named = {
            # X = (theta, rho), Y = z
            "cs": (e[:, :2], e[:, 2:], eps_cs),
            # X = rho direction, Y = (theta, z)
            "s": (rho_dir[:, None], e[:, [0, 2]], (2 * abs(nu) * radius, eta + abs(shear * nu) * radius)),
        }
    else:
        rho_z = np.stack([rho_dir, e[:, 2] * 1.0], axis=1)
        named = {
            "cs": (e, np.zeros((3, 0)), (2 * abs(nu) * radius + eta, 0.0)),
            # X = (rho, z), Y = theta
            "s": (rho_z, e[:, :1], (2 * abs(nu) * radius + eta, abs(shear * nu) * radius)),
        }
    return ProblemDescriptor(
        id="nhim_circle",
        params={"eta": eta, "shear": shear, "nu": nu, "variant": variant, "radius": radius},
        generator=a,
        nonlinearity=g,
        eps=math.hypot(2 * abs(nu) * radius, eta),
        cut=2.0 if variant == "trichotomy" else -1.0,
        eps_split=eps_cs if (shear == 0.0 and variant == "trichotomy") else None,
        base=BaseDynamics("point"),
        well_posed=True,
        oracle={
            "center_z": lambda th: eta * (np.sin(th) - 4.0 * np.cos(th)) / 17.0 if variant == "trichotomy" else eta * (-np.sin(th) + 4.0 * np.cos(th)) / 17.0,
            "amplitude": eta / math.sqrt(17.0),
            "radial_rate": math.exp(-2.0),
            "ambient_field": ambient_field,
            "to_tubular": to_tubular,
            "to_ambient": to_ambient,
            "z_rate": lz,
        },
        truncation={"radius": radius, "periodic_axes": [0]},
        named_splits=named,
        sample_radius=radius,
        notes="theta' = 1 + shear rho, rho' = -2 rho + nu r(rho)^2, z' = +-4 z + eta cos(theta)",
    )


def _boussinesq_trunc(n_modes: int = 3, alpha: float = 0.2, radius: float = 0.02) -> ProblemDescriptor:
    n_modes = int(n_modes)
    _range("n_modes", n_modes, 1, 32)
    _range("alpha", alpha, 0.0, 1.0, lo_open=True)
    _range("radius", radius, 0.0, 0.1, lo_open=True)
    k = np.arange(1, n_modes + 1, dtype=float)
    lam = alpha * k**4 - k**2
    if np.any(np.abs(lam) < 1e-9):
        raise ParamOutOfRange("a mode sits exactly at alpha k^4 = k^2 (non-semisimple zero)")
    a = _companion_modes(lam)

    def g(omega, z):
        z = np.asarray(z, dtype=float)
        u = radial_retraction(z[..., 0::2], radius)
        nodes = dst(u, type=1, norm="ortho", axis=-1)
        coef = dst(nodes * nodes, type=1, norm="ortho", axis=-1)
        out = np.zeros_like(z)
        out[..., 1::2] = -(k**2) * coef
        return out

    hyper = [int(kk) for kk, l in zip(k, lam) if l > 0]
    center = [int(kk) for kk, l in zip(k, lam) if l < 0]
    gap = float(np.sqrt(lam[lam > 0]).min()) if hyper else 0.0
    return ProblemDescriptor(
        id="boussinesq_trunc",
        params={"n_modes": n_modes, "alpha": alpha, "radius": radius},
        generator=a,
        nonlinearity=g,
        eps=2 * radius * n_modes**2,
        cut=0.5 * gap if hyper else 0.0,
        reweight=True,
        truncation={"n_modes": n_modes, "block_size": 2, "hyperbolic_modes": hyper, "center_modes": center},
        oracle={"mode_lambda": lam, "hyperbolic_rates": np.sqrt(np.maximum(lam, 0.0))},
        io_maps=_modal_io(n_modes, -(k**2), 2 * radius),
        sample_radius=radius,
        notes="u_tt = u_xx + alpha u_xxxx + (u^2)_xx on [0, pi] (Dirichlet); cut separates center+stable from unstable",
    )


_CATALOG: dict[str, tuple[Callable[..., ProblemDescriptor], str]] = {
    "scalar_saddle": (_scalar_saddle, "planar saddle with analytic manifolds; radius in (0, 0.5], |c| <= 1, radius(1+|c|) < 1"),
    "elliptic_cylinder": (_elliptic_cylinder, "elliptic PDE on a cylinder, sine modes; n_modes in [1, 64], eps in [0, 1]"),
    "spatial_rd": (_spatial_rd, "reaction-diffusion as spatial dynamics over temporal Fourier modes; n_modes in [1, 32]"),
    "nonauto_scalar": (_nonauto_scalar, "z' = a(t) A z + eps sin z; amp in [0, 0.9], eps < 1 - amp"),
    "nhim_circle": (_nhim_circle, "circle in R^3 with radial contraction and z-expansion (or contraction); eta in [0, 0.1]"),
    "boussinesq_trunc": (_boussinesq_trunc, "truncated Boussinesq modes with center/hyperbolic classification; alpha in (0, 1]"),
}


def catalog() -> list[dict]:
    return [{"id": k, "description": v[1]} for k, v in _CATALOG.items()]


def instantiate(problem_id: str, params: dict | None = None) -> ProblemDescriptor:
    try:
        fn = _CATALOG[problem_id][0]
    except KeyError:
        raise UnknownProblem(f"unknown problem id {problem_id!r}") from None
    params = dict(params or {})
    try:
        return fn(**params)
    except TypeError as exc:
        raise ParamOutOfRange(f"bad parameters for {problem_id}: {exc}") from exc
