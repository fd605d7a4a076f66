"""Spectral splittings of square matrices.

A splitting Z = X + Y is built from an ordered real Schur form: the leading
Schur vectors span X (eigenvalues left of the cut) and a Sylvester solve
produces a basis for the complementary invariant subspace Y.  Rates are
logarithmic norms of the restricted generators, which gives growth bounds
with constant 1 in the Euclidean norm of the chosen bases.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .errors import EigenvalueOnCut, NegativeTime, NonConvergence

CUT_TOL = 1e-8


def log_norm_rate(a_sub) -> float:
    """Largest eigenvalue of the symmetric part of ``a_sub``.

    This is the logarithmic 2-norm, so ``||exp(t a_sub)|| <= exp(rate t)``
    for every t >= 0.  An empty matrix returns ``-inf``.
    """
    a_sub = np.atleast_2d(np.asarray(a_sub, dtype=float))
    if a_sub.size == 0:
        return -np.inf
    if a_sub.shape[0] != a_sub.shape[1]:
        raise ValueError("log_norm_rate expects a square matrix")
    sym = 0.5 * (a_sub + a_sub.T)
    return float(np.linalg.eigvalsh(sym)[-1])


@dataclass(frozen=True)
class SpectralSplitting:
    dim_total: int
    basis_x: np.ndarray
    basis_y: np.ndarray
    projection_p: np.ndarray
    restricted_gen_x: np.ndarray
    restricted_gen_y: np.ndarray
    mu_s: float
    mu_u: float
    c1: float
    # Lyapunov weights (x' = weight_x @ x); None when the plain Schur basis is used.
    weight_x: np.ndarray | None = field(default=None)
    weight_y: np.ndarray | None = field(default=None)

    @property
    def dim_x(self) -> int:
        return self.basis_x.shape[1]

    @property
    def dim_y(self) -> int:
        return self.basis_y.shape[1]

    @property
    def basis(self) -> np.ndarray:
        return np.hstack([self.basis_x, self.basis_y])

    def coords(self, z) -> tuple[np.ndarray, np.ndarray]:
        """Split ambient vectors (..., d) into block coordinates (x, y)."""
        w = np.linalg.inv(self.basis)
        c = np.asarray(z, dtype=float) @ w.T
        return c[..., : self.dim_x], c[..., self.dim_x :]

    def ambient(self, x, y) -> np.ndarray:
        return np.asarray(x, dtype=float) @ self.basis_x.T + np.asarray(y, dtype=float) @ self.basis_y.T

    def reassemble(self) -> np.ndarray:
        """basis @ blockdiag(gen_x, gen_y) @ basis^-1."""
        v = self.basis
        blk = sla.block_diag(self.restricted_gen_x, self.restricted_gen_y)
        return v @ blk @ np.linalg.inv(v)

    def to_dict(self) -> dict:
        d = {
            "dim_total": self.dim_total,
            "basis_x": self.basis_x,
            "basis_y": self.basis_y,
            "projection_p": self.projection_p,
            "restricted_gen_x": self.restricted_gen_x,
            "restricted_gen_y": self.restricted_gen_y,
            "mu_s": self.mu_s,
            "mu_u": self.mu_u,
            "c1": self.c1,
        }
        if self.weight_x is not None:
            d["weight_x"] = self.weight_x
            d["weight_y"] = self.weight_y
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SpectralSplitting":
        n = int(d["dim_total"])

        def mat(key, rows, cols=None):
            a = np.asarray(d[key], dtype=float)
            if a.size == 0:
                return np.zeros((rows, cols if cols is not None else rows))
            return a.reshape(rows, -1)

        bx = mat("basis_x", n, 0)
        by = mat("basis_y", n, 0)
        p, q = bx.shape[1], by.shape[1]
        wx = d.get("weight_x")
        wy = d.get("weight_y")
        return cls(
            dim_total=n,
            basis_x=bx,
            basis_y=by,
            projection_p=mat("projection_p", n),
            restricted_gen_x=np.asarray(d["restricted_gen_x"], dtype=float).reshape(p, p),
            restricted_gen_y=np.asarray(d["restricted_gen_y"], dtype=float).reshape(q, q),
            mu_s=float(d["mu_s"]),
            mu_u=float(d["mu_u"]),
            c1=float(d["c1"]),
            weight_x=None if wx is None else np.asarray(wx, dtype=float).reshape(p, p),
            weight_y=None if wy is None else np.asarray(wy, dtype=float).reshape(q, q),
        )


def _rates(gx: np.ndarray, gy: np.ndarray) -> tuple[float, float]:
    mu_s = log_norm_rate(gx) if gx.size else -np.inf
    mu_u = -log_norm_rate(-gy) if gy.size else np.inf
    return mu_s, mu_u


def spectral_split(a, cut: float = 0.0, cut_tol: float = CUT_TOL) -> SpectralSplitting:
    """Split ``a`` into the invariant subspaces left (X) and right (Y) of ``Re = cut``."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    n = a.shape[0]
    if a.shape != (n, n):
        raise ValueError("spectral_split expects a square matrix")
    eig = np.linalg.eigvals(a)
    close = np.abs(eig.real - cut) <= cut_tol
    if np.any(close):
        raise EigenvalueOnCut(
            f"eigenvalue {eig[close][0]!r} within {cut_tol:g} of cut {cut:g}"
        )
    n_stable = int(np.sum(eig.real < cut))
    try:
        t, q, sdim = sla.schur(a, output="real", sort=lambda re, im: re < cut)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NonConvergence(f"ordered Schur decomposition failed: {exc}") from exc
    if sdim != n_stable:
        raise NonConvergence(f"Schur reordering placed {sdim} eigenvalues left of the cut, expected {n_stable}")

    # fix the sign of each Schur vector (largest entry positive); T -> D T D
    if n:
        piv = q[np.argmax(np.abs(q), axis=0), np.arange(n)]
        sgn = np.where(piv < 0, -1.0, 1.0)
        q = q * sgn
        t = t * sgn[:, None] * sgn[None, :]
    p = n_stable
    q1, q2 = q[:, :p], q[:, p:]
    t11, t12, t22 = t[:p, :p], t[:p, p:], t[p:, p:]
    if 0 < p < n:
        # A (Q1 R + Q2) = (Q1 R + Q2) T22  <=>  T11 R - R T22 = -T12
        r = sla.solve_sylvester(t11, -t22, -t12)
    else:
        r = np.zeros((p, n - p))
    basis_x = q1.copy()
    basis_y = q1 @ r + q2
    # P = V diag(I, 0) V^-1 with V = Q [[I, R], [0, I]]
    proj = q1 @ (q1.T - r @ q2.T)
    eye = np.eye(n)
    c1 = max(1.0, np.linalg.norm(proj, 2) if n else 1.0, np.linalg.norm(eye - proj, 2) if n else 1.0)
    gx, gy = t11.copy(), t22.copy()
    mu_s, mu_u = _rates(gx, gy)
    return SpectralSplitting(
        dim_total=n,
        basis_x=basis_x,
        basis_y=basis_y,
        projection_p=proj,
        restricted_gen_x=gx,
        restricted_gen_y=gy,
        mu_s=mu_s,
        mu_u=mu_u,
        c1=float(c1),
    )


def _lyapunov_weight(g: np.ndarray, margin: float) -> np.ndarray:
    """Weight L with lognorm(L g L^-1) <= abscissa(g) + margin."""
    k = g.shape[0]
    if k == 0:
        return np.zeros((0, 0))
    shift = float(np.max(np.linalg.eigvals(g).real)) + margin
    m = g - shift * np.eye(k)
    # m^T P + P m = -I
    pmat = sla.solve_continuous_lyapunov(m.T, -np.eye(k))
    pmat = 0.5 * (pmat + pmat.T)
    w, v = np.linalg.eigh(pmat)
    return (v * np.sqrt(w)) @ v.T


def lyapunov_reweight(s: SpectralSplitting, margin: float = 1e-3) -> SpectralSplitting:
    """Change the block bases so the log-norm rates approach the spectral abscissae.

    The subspaces, and therefore the projection, are unchanged.  The X block
    gets rate <= abscissa + margin and the Y block rate >= min Re - margin.
    """
    lx = _lyapunov_weight(s.restricted_gen_x, margin)
    ly = _lyapunov_weight(-s.restricted_gen_y, margin)
    gx = lx @ s.restricted_gen_x @ np.linalg.inv(lx) if s.dim_x else s.restricted_gen_x
    gy = ly @ s.restricted_gen_y @ np.linalg.inv(ly) if s.dim_y else s.restricted_gen_y
    bx = s.basis_x @ np.linalg.inv(lx) if s.dim_x else s.basis_x
    by = s.basis_y @ np.linalg.inv(ly) if s.dim_y else s.basis_y
    mu_s, mu_u = _rates(gx, gy)
    return SpectralSplitting(
        dim_total=s.dim_total,
        basis_x=bx,
        basis_y=by,
        projection_p=s.projection_p,
        restricted_gen_x=gx,
        restricted_gen_y=gy,
        mu_s=mu_s,
        mu_u=mu_u,
        c1=s.c1,
        weight_x=lx,
        weight_y=ly,
    )


def propagate(s: SpectralSplitting, t: float) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(exp(t A_x), exp(-t A_y))`` in the block bases."""
    t = float(t)
    if t < 0:
        raise NegativeTime(f"propagate needs t >= 0, got {t}")
    op_x = sla.expm(t * s.restricted_gen_x) if s.dim_x else np.zeros((0, 0))
    op_y = sla.expm(-t * s.restricted_gen_y) if s.dim_y else np.zeros((0, 0))
    return op_x, op_y


def check_invariants(s: SpectralSplitting, a=None) -> dict[str, float]:
    """Measure every splitting invariant; returns the raw residuals."""
    n = s.dim_total
    p = s.projection_p
    eye = np.eye(n)
    out = {
        "idempotency": float(np.linalg.norm(p @ p - p, 2)) if n else 0.0,
        "rank_sum": int(np.linalg.matrix_rank(p, tol=1e-8) + np.linalg.matrix_rank(eye - p, tol=1e-8)) if n else 0,
        "norm_p": float(np.linalg.norm(p, 2)) if n else 0.0,
        "norm_q": float(np.linalg.norm(eye - p, 2)) if n else 0.0,
    }
    if a is not None:
        a = np.asarray(a, dtype=float)
        na = max(np.linalg.norm(a, 2), 1e-300)
        out["leak_xy"] = float(np.linalg.norm((eye - p) @ a @ p, 2) / na)
        out["leak_yx"] = float(np.linalg.norm(p @ a @ (eye - p), 2) / na)
    worst = 0.0
    for t in (0.1, 0.5, 1.0, 2.0):
        ox, oy = propagate(s, t)
        if s.dim_x:
            worst = max(worst, np.linalg.norm(ox, 2) / np.exp(s.mu_s * t) - 1.0)
        if s.dim_y:
            worst = max(worst, np.linalg.norm(oy, 2) / np.exp(-s.mu_u * t) - 1.0)
    out["rate_excess"] = float(worst)
    return out


def _real_eigenbasis(g: np.ndarray, cond_max: float) -> tuple[np.ndarray, np.ndarray] | None:
    """Real basis V with V^-1 g V block diagonal of [[a, b], [-b, a]] / [a]; None if ill-conditioned."""
    k = g.shape[0]
    if k == 0:
        return np.zeros((0, 0)), np.zeros((0, 0))
    w, v = np.linalg.eig(g)
    cols = []
    done = np.zeros(k, dtype=bool)
    for i in np.argsort(-w.real, kind="stable"):
        if done[i]:
            continue
        done[i] = True
        if abs(w[i].imag) <= 1e-12 * max(1.0, abs(w[i])):
            c = v[:, i].real
            cols.append(c / np.linalg.norm(c))
        else:
            j = int(np.argmin(np.abs(w - np.conj(w[i])) + done * 1e300))
            done[j] = True
            vi = v[:, i] if w[i].imag > 0 else v[:, j]
            nrm = np.linalg.norm(vi)
            cols.extend([vi.real / nrm * np.sqrt(2), vi.imag / nrm * np.sqrt(2)])
    basis = np.stack(cols, axis=1)
    if np.linalg.cond(basis) > cond_max:
        return None
    gen = np.linalg.solve(basis, g @ basis)
    return basis, gen


def eigen_reweight(s: SpectralSplitting, cond_max: float = 1e6) -> SpectralSplitting:
    """Change each block basis to a real eigenbasis so the rates equal the spectral abscissae.

    Falls back to :func:`lyapunov_reweight` for (nearly) defective blocks.
    """
    rx = _real_eigenbasis(s.restricted_gen_x, cond_max)
    ry = _real_eigenbasis(s.restricted_gen_y, cond_max)
    if rx is None or ry is None:
        return lyapunov_reweight(s)
    (vx, gx), (vy, gy) = rx, ry
    bx = s.basis_x @ vx if s.dim_x else s.basis_x
    by = s.basis_y @ vy if s.dim_y else s.basis_y
    mu_s, mu_u = _rates(gx, gy)
    return SpectralSplitting(
        dim_total=s.dim_total,
        basis_x=bx,
        basis_y=by,
        projection_p=s.projection_p,
        restricted_gen_x=gx,
        restricted_gen_y=gy,
        mu_s=mu_s,
        mu_u=mu_u,
        c1=s.c1,
        weight_x=np.linalg.inv(vx) if s.dim_x else vx,
        weight_y=np.linalg.inv(vy) if s.dim_y else vy,
    )


def subspace_splitting(a, basis_x, basis_y, tol: float = 1e-10) -> SpectralSplitting:
    """Splitting from caller-supplied bases of two complementary invariant subspaces.

    Block coordinates are then exactly the coefficients in these bases, which
    keeps distinguished coordinates (e.g. a periodic angle) axis-aligned.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    bx = np.asarray(basis_x, dtype=float).reshape(a.shape[0], -1)
    by = np.asarray(basis_y, dtype=float).reshape(a.shape[0], -1)
    v = np.hstack([bx, by])
    if v.shape[1] != a.shape[0] or np.linalg.matrix_rank(v) < a.shape[0]:
        raise ValueError("bases do not span the space")
    blk = np.linalg.solve(v, a @ v)
    p = bx.shape[1]
    leak = max(np.abs(blk[p:, :p]).max(initial=0.0), np.abs(blk[:p, p:]).max(initial=0.0))
    if leak > tol * max(1.0, np.abs(a).max()):
        raise ValueError(f"supplied subspaces are not invariant (leak {leak:.3g})")
    gx, gy = blk[:p, :p], blk[p:, p:]
    w = np.linalg.inv(v)
    proj = bx @ w[:p]
    n = a.shape[0]
    c1 = max(1.0, np.linalg.norm(proj, 2), np.linalg.norm(np.eye(n) - proj, 2))
    mu_s, mu_u = _rates(gx, gy)
    return SpectralSplitting(
        dim_total=n, basis_x=bx, basis_y=by, projection_p=proj,
        restricted_gen_x=gx, restricted_gen_y=gy, mu_s=mu_s, mu_u=mu_u, c1=float(c1),
    )
