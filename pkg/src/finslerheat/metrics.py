"""Minkowski norms on flat tori: families, duals, and Legendre maps.

Supported families
------------------
``EuclideanNorm``
    F(y) = |y|.
``RiemannianNorm``
    F(y) = sqrt(y . a y) for a constant symmetric positive definite ``a``.
``RandersNorm``
    F(y) = sqrt(y . a y) + b . y with the a-dual norm of the covector ``b``
    strictly below one. Genuinely asymmetric: F(-y) != F(y).
``Asym1DNorm``
    One-dimensional piecewise linear norm with slopes ``p_plus`` on y > 0
    and ``p_minus`` on y < 0.

All descriptor methods broadcast over leading axes; vectors and covectors
are arrays of shape ``(..., dim)``.

The fundamental tensor at a direction ``v`` is half the second derivative
of F^2, the Legendre map sends a covector ``xi`` to the unique vector ``y``
with F(y) = F*(xi) and xi(y) = F(y)^2, and ``legendre_inverse`` is its
inverse y -> g_y(y, .) = d(F^2)/2.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateVector, NoConvergence, UnsupportedFamily
from .numerics import golden_section_max

#: degeneracy threshold, scaled by the descriptor's length scale
EPS_DEGENERATE = 1e-12


def _sym2(mat: np.ndarray) -> np.ndarray:
    return 0.5 * (mat + mat.T)


class MinkowskiNorm:
    """Base class for constant-coefficient Minkowski norm descriptors."""

    dim: int
    family: str

    # -- interface -------------------------------------------------------

    def norm(self, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def dual_norm(self, xi: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def fundamental_tensor(self, v: np.ndarray) -> np.ndarray:
        """g_ij(v) = (1/2) d^2(F^2)/dy^i dy^j, shape ``(..., d, d)``."""
        raise NotImplementedError

    def legendre(self, xi: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def legendre_inverse(self, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def riemannian_part(self) -> np.ndarray:
        """Symmetric positive definite tensor used at degenerate nodes."""
        raise NotImplementedError

    # -- shared helpers --------------------------------------------------

    @property
    def length_scale(self) -> float:
        a = self.riemannian_part()
        return float(np.sqrt(np.trace(a) / a.shape[0]))

    def degenerate_mask(self, y: np.ndarray, scale: float | None = None) -> np.ndarray:
        """True where ``y`` is numerically indistinguishable from zero."""
        mag = np.linalg.norm(np.atleast_2d(y), axis=-1)
        threshold = EPS_DEGENERATE * self.length_scale * (scale if scale else 1.0)
        return (mag <= threshold).reshape(np.shape(y)[:-1])

    def _require_nondegenerate(self, y: np.ndarray) -> None:
        if np.any(self.degenerate_mask(y)):
            raise DegenerateVector(
                f"{self.family}: vector magnitude below {EPS_DEGENERATE} x scale"
            )

    def inverse_tensor_field(
        self, v: np.ndarray, fallback: np.ndarray | None = None
    ) -> tuple[np.ndarray, np.ndarray]:
        """Inverse fundamental tensor per row of ``v`` with degenerate fallback.

        Returns ``(ginv, mask)`` where ``mask`` flags rows that received the
        fallback tensor (the inverse of :meth:`riemannian_part` unless a
        custom symmetric positive definite ``fallback`` is supplied).
        """
        v = np.asarray(v, dtype=float)
        mask = self.degenerate_mask(v)
        safe = np.where(mask[..., None], self._unit_substitute(), v)
        g = self.fundamental_tensor_unchecked(safe)
        ginv = _invert_spd(g)
        fb = self.riemannian_part() if fallback is None else np.asarray(fallback, float)
        fbinv = _invert_spd(fb[None, ...])[0]
        ginv[mask] = fbinv
        return ginv, mask

    def fundamental_tensor_unchecked(self, v: np.ndarray) -> np.ndarray:
        return self.fundamental_tensor(v)

    def _unit_substitute(self) -> np.ndarray:
        e = np.zeros(self.dim)
        e[0] = 1.0
        return e


def _invert_spd(g: np.ndarray) -> np.ndarray:
    """Invert a stack of 1x1 or 2x2 symmetric matrices."""
    if g.shape[-1] == 1:
        return 1.0 / g
    a, b, c = g[..., 0, 0], g[..., 0, 1], g[..., 1, 1]
    det = a * c - b * b
    out = np.empty_like(g)
    out[..., 0, 0] = c / det
    out[..., 1, 1] = a / det
    out[..., 0, 1] = -b / det
    out[..., 1, 0] = -b / det
    return out


@dataclass(frozen=True)
class EuclideanNorm(MinkowskiNorm):
    dim: int = 1
    family: str = field(default="euclidean", init=False)

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise UnsupportedFamily(f"dimension {self.dim} not supported")

    def norm(self, y):
        return np.linalg.norm(np.asarray(y, float), axis=-1)

    def dual_norm(self, xi):
        return np.linalg.norm(np.asarray(xi, float), axis=-1)

    def fundamental_tensor(self, v):
        v = np.asarray(v, float)
        self._require_nondegenerate(v)
        return self.fundamental_tensor_unchecked(v)

    def fundamental_tensor_unchecked(self, v):
        v = np.asarray(v, float)
        eye = np.eye(self.dim)
        return np.broadcast_to(eye, v.shape[:-1] + (self.dim, self.dim)).copy()

    def legendre(self, xi):
        return np.asarray(xi, dtype=float).copy()

    def legendre_inverse(self, y):
        return np.asarray(y, dtype=float).copy()

    def riemannian_part(self):
        return np.eye(self.dim)


@dataclass(frozen=True)
class RiemannianNorm(MinkowskiNorm):
    """Constant symmetric positive definite ``a`` on a flat torus."""

    a: np.ndarray
    family: str = field(default="riemannian", init=False)

    def __post_init__(self):
        a = _sym2(np.atleast_2d(np.asarray(self.a, dtype=float)))
        if a.shape[0] not in (1, 2) or a.shape[0] != a.shape[1]:
            raise UnsupportedFamily(f"bad tensor shape {a.shape}")
        if np.any(np.linalg.eigvalsh(a) <= 0):
            raise UnsupportedFamily("tensor must be positive definite")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "a_inv", np.linalg.inv(a))

    @property
    def dim(self):
        return self.a.shape[0]

    def norm(self, y):
        y = np.asarray(y, float)
        return np.sqrt(np.einsum("...i,ij,...j->...", y, self.a, y))

    def dual_norm(self, xi):
        xi = np.asarray(xi, float)
        return np.sqrt(np.einsum("...i,ij,...j->...", xi, self.a_inv, xi))

    def fundamental_tensor(self, v):
        v = np.asarray(v, float)
        self._require_nondegenerate(v)
        return self.fundamental_tensor_unchecked(v)

    def fundamental_tensor_unchecked(self, v):
        v = np.asarray(v, float)
        return np.broadcast_to(self.a, v.shape[:-1] + self.a.shape).copy()

    def legendre(self, xi):
        return np.einsum("ij,...j->...i", self.a_inv, np.asarray(xi, float))

    def legendre_inverse(self, y):
        return np.einsum("ij,...j->...i", self.a, np.asarray(y, float))

    def riemannian_part(self):
        return self.a.copy()


@dataclass(frozen=True)
class RandersNorm(MinkowskiNorm):
    """F(y) = sqrt(y . a y) + b . y with |b|_a < 1.

    The drift covector ``b`` tilts the unit ball; reversibility
    sup F(-y)/F(y) equals (1 + |b|_a)/(1 - |b|_a).
    """

    a: np.ndarray
    b: np.ndarray
    family: str = field(default="randers", init=False)

    def __post_init__(self):
        a = _sym2(np.atleast_2d(np.asarray(self.a, dtype=float)))
        b = np.atleast_1d(np.asarray(self.b, dtype=float))
        if a.shape[0] not in (1, 2) or a.shape[0] != a.shape[1] or b.shape != (a.shape[0],):
            raise UnsupportedFamily(f"bad shapes a={a.shape}, b={b.shape}")
        if np.any(np.linalg.eigvalsh(a) <= 0):
            raise UnsupportedFamily("tensor must be positive definite")
        a_inv = np.linalg.inv(a)
        b_norm_sq = float(b @ a_inv @ b)
        if b_norm_sq >= 1.0:
            raise UnsupportedFamily(
                f"drift covector too large: |b|_a^2 = {b_norm_sq:.6f} >= 1"
            )
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "a_inv", a_inv)
        object.__setattr__(self, "b_norm_sq", b_norm_sq)

    @property
    def dim(self):
        return self.a.shape[0]

    def norm(self, y):
        y = np.asarray(y, float)
        alpha = np.sqrt(np.einsum("...i,ij,...j->...", y, self.a, y))
        return alpha + y @ self.b

    def dual_norm(self, xi):
        # dual of a Randers norm is again Randers-type in the covector
        xi = np.asarray(xi, float)
        lam = 1.0 - self.b_norm_sq
        q = np.einsum("...i,ij,...j->...", xi, self.a_inv, xi)
        m = np.einsum("...i,ij,j->...", xi, self.a_inv, self.b)
        return (np.sqrt(lam * q + m * m) - m) / lam

    def fundamental_tensor(self, v):
        v = np.asarray(v, float)
        self._require_nondegenerate(v)
        return self.fundamental_tensor_unchecked(v)

    def fundamental_tensor_unchecked(self, v):
        v = np.asarray(v, float)
        av = np.einsum("ij,...j->...i", self.a, v)
        alpha = np.sqrt(np.einsum("...i,...i->...", v, av))
        ell = av / alpha[..., None]
        f_over_alpha = 1.0 + (v @ self.b) / alpha
        lb = ell + self.b
        g = f_over_alpha[..., None, None] * (
            self.a - ell[..., :, None] * ell[..., None, :]
        ) + lb[..., :, None] * lb[..., None, :]
        return g

    def legendre_inverse(self, y):
        y = np.asarray(y, float)
        self._require_nondegenerate(y)
        av = np.einsum("ij,...j->...i", self.a, y)
        alpha = np.sqrt(np.einsum("...i,...i->...", y, av))
        fval = alpha + y @ self.b
        # d(F^2)/2 = F dF with dF = a y/alpha + b
        return fval[..., None] * (av / alpha[..., None] + self.b)

    def legendre(self, xi, max_iter: int = 50, tol: float = 1e-12):
        """Damped Newton solve of g_y(y, .) = xi, seeded from the
        Riemannian part. Residuals are measured in the Euclidean norm
        relative to |xi|."""
        xi = np.asarray(xi, dtype=float)
        single = xi.ndim == 1
        xi2 = np.atleast_2d(xi)
        y = np.einsum("ij,...j->...i", self.a_inv, xi2)
        zero = self.degenerate_mask(xi2)
        active = ~zero
        if np.any(active):
            target = tol * np.maximum(1.0, np.linalg.norm(xi2, axis=-1))
            res = self._legendre_residual(y, xi2, active)
            for _ in range(max_iter):
                live = active & (res > target)
                if not np.any(live):
                    break
                g = self.fundamental_tensor_unchecked(y[live])
                rhs = self.legendre_inverse(y[live]) - xi2[live]
                step = np.einsum("...ij,...j->...i", _invert_spd(g), rhs)
                scale = np.ones(step.shape[0])
                y_new = y[live] - step
                res_new = self._rows_residual(y_new, xi2[live])
                for _ in range(30):
                    worse = res_new > res[live]
                    if not np.any(worse):
                        break
                    scale[worse] *= 0.5
                    y_new[worse] = y[live][worse] - scale[worse, None] * step[worse]
                    res_new[worse] = self._rows_residual(y_new[worse], xi2[live][worse])
                y[live] = y_new
                res[live] = res_new
            else:
                raise NoConvergence("Randers Legendre Newton exhausted iterations")
        y[zero] = 0.0
        return y[0] if single else y.reshape(xi.shape)

    def _rows_residual(self, y, xi):
        if y.shape[0] == 0:
            return np.zeros(0)
        return np.linalg.norm(self.legendre_inverse(y) - xi, axis=-1)

    def _legendre_residual(self, y, xi, active):
        res = np.zeros(y.shape[0])
        res[active] = self._rows_residual(y[active], xi[active])
        return res

    def riemannian_part(self):
        return self.a.copy()


@dataclass(frozen=True)
class Asym1DNorm(MinkowskiNorm):
    """One-dimensional norm with distinct forward/backward slopes.

    F(y) = p_plus * y for y >= 0 and -p_minus * y for y < 0. Equivalent to a
    1-d Randers norm with sqrt(a) = (p_plus + p_minus)/2 and
    b = (p_plus - p_minus)/2.
    """

    p_plus: float
    p_minus: float
    family: str = field(default="asym1d", init=False)
    dim: int = field(default=1, init=False)

    def __post_init__(self):
        if self.p_plus <= 0 or self.p_minus <= 0:
            raise UnsupportedFamily("slopes must be positive")

    def _slope(self, y):
        return np.where(np.asarray(y) >= 0, self.p_plus, self.p_minus)

    def norm(self, y):
        y = np.asarray(y, float)[..., 0]
        return np.abs(y) * self._slope(y)

    def dual_norm(self, xi):
        # sup xi(y)/F(y): forward covectors see 1/p_plus, backward 1/p_minus
        xi = np.asarray(xi, float)[..., 0]
        return np.abs(xi) / self._slope(xi)

    def fundamental_tensor(self, v):
        v = np.asarray(v, float)
        self._require_nondegenerate(v)
        return self.fundamental_tensor_unchecked(v)

    def fundamental_tensor_unchecked(self, v):
        v = np.asarray(v, float)[..., 0]
        return (self._slope(v) ** 2)[..., None, None]

    def legendre(self, xi):
        xi = np.asarray(xi, float)
        return xi / self._slope(xi[..., 0])[..., None] ** 2

    def legendre_inverse(self, y):
        y = np.asarray(y, float)
        return y * self._slope(y[..., 0])[..., None] ** 2

    def riemannian_part(self):
        return np.array([[0.25 * (self.p_plus + self.p_minus) ** 2]])


# ---------------------------------------------------------------------------
# module-level operations (thin wrappers over descriptor methods)
# ---------------------------------------------------------------------------


def norm(desc: MinkowskiNorm, y) -> np.ndarray:
    """Evaluate F(y)."""
    return desc.norm(np.asarray(y, float))


def dual_norm(desc: MinkowskiNorm, xi) -> np.ndarray:
    """Evaluate F*(xi) = sup_{F(y)=1} xi(y)."""
    return desc.dual_norm(np.asarray(xi, float))


def dual_norm_sampled(desc: MinkowskiNorm, xi, samples: int = 4096) -> float:
    """Generic dual norm by dense direction sampling plus golden-section
    polish; slow, used to cross-check the closed forms."""
    xi = np.asarray(xi, dtype=float)
    if desc.dim == 1:
        cands = np.array([[1.0], [-1.0]])
        vals = (cands @ xi) / desc.norm(cands)
        return float(np.max(vals))
    theta = np.linspace(0.0, 2.0 * np.pi, samples, endpoint=False)
    dirs = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
    vals = (dirs @ xi) / desc.norm(dirs)
    k = int(np.argmax(vals))
    span = 2.0 * np.pi / samples

    def objective(th):
        d = np.array([np.cos(th), np.sin(th)])
        return float((d @ xi) / desc.norm(d))

    _, best = golden_section_max(objective, theta[k] - span, theta[k] + span)
    return best


def fundamental_tensor(desc: MinkowskiNorm, v) -> np.ndarray:
    """Fundamental tensor g_ij(v); raises DegenerateVector near v = 0."""
    return desc.fundamental_tensor(np.asarray(v, float))


def legendre(desc: MinkowskiNorm, xi) -> np.ndarray:
    """Covector-to-vector Legendre map; maps 0 to 0."""
    return desc.legendre(np.asarray(xi, float))


def legendre_inverse(desc: MinkowskiNorm, y) -> np.ndarray:
    """Vector-to-covector Legendre map y -> g_y(y, .)."""
    return desc.legendre_inverse(np.asarray(y, float))


@dataclass(frozen=True)
class MetricConstants:
    """Sampled metric constants of a Minkowski norm.

    ``reversibility`` is sup F(-y)/F(y); ``kappa`` and ``kappa_star`` are the
    extreme ratios g_V(y, y) / F(y)^2 over direction pairs (uniform
    smoothness from above, uniform convexity from below). They always satisfy
    1 <= reversibility <= min(sqrt(kappa), sqrt(1/kappa_star)) up to sampling
    resolution.
    """

    reversibility: float
    kappa: float
    kappa_star: float
    samples: int


def metric_constants(metric, samples: int = 4096) -> MetricConstants:
    """Estimate reversibility and uniform smoothness/convexity constants.

    ``metric`` may be a descriptor or a :class:`MetricField`. Quadratic
    families short-circuit to the exact constants; asymmetric families use
    dense direction sampling with golden-section polish.
    """
    desc = getattr(metric, "descriptor", metric)
    if samples < 16:
        raise ValueError("need at least 16 direction samples")
    if desc.family in ("euclidean", "riemannian"):
        return MetricConstants(1.0, 1.0, 1.0, samples)
    if desc.family == "asym1d":
        lam = max(desc.p_plus / desc.p_minus, desc.p_minus / desc.p_plus)
        return MetricConstants(lam, lam**2, lam**-2, samples)

    # Randers: reversibility has a closed form but is still sampled + polished
    # to keep the code path exercised; the closed form is asserted in tests.
    theta = np.linspace(0.0, 2.0 * np.pi, samples, endpoint=False)
    dirs = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
    if desc.dim == 1:
        dirs = np.array([[1.0], [-1.0]])
        ratios = desc.norm(-dirs) / desc.norm(dirs)
        lam = float(np.max(ratios))
    else:
        ratios = desc.norm(-dirs) / desc.norm(dirs)
        k = int(np.argmax(ratios))
        span = 2.0 * np.pi / samples

        def rev_obj(th):
            d = np.array([np.cos(th), np.sin(th)])
            return float(desc.norm(-d) / desc.norm(d))

        _, lam = golden_section_max(rev_obj, theta[k] - span, theta[k] + span)

    if desc.dim == 1:
        vs = np.array([[1.0], [-1.0]])
        ys = vs
        gv = desc.fundamental_tensor(vs)
        quad = np.einsum("vij,yi,yj->vy", gv, ys, ys)
        ratio = quad / desc.norm(ys)[None, :] ** 2
        return MetricConstants(lam, float(ratio.max()), float(ratio.min()), samples)

    n_pair = min(samples, 256)
    ang = np.linspace(0.0, 2.0 * np.pi, n_pair, endpoint=False)
    dirs_p = np.stack([np.cos(ang), np.sin(ang)], axis=-1)
    gv = desc.fundamental_tensor(dirs_p)
    quad = np.einsum("vij,yi,yj->vy", gv, dirs_p, dirs_p)
    ratio = quad / (desc.norm(dirs_p)[None, :] ** 2)

    def polish(extreme: str) -> float:
        pick = np.argmax(ratio) if extreme == "max" else np.argmin(ratio)
        iv, iy = np.unravel_index(pick, ratio.shape)
        th_v, th_y = ang[iv], ang[iy]
        sign = 1.0 if extreme == "max" else -1.0
        span = 2.0 * np.pi / n_pair

        def val(tv, ty):
            v = np.array([np.cos(tv), np.sin(tv)])
            y = np.array([np.cos(ty), np.sin(ty)])
            g = desc.fundamental_tensor(v)
            return sign * float(y @ g @ y) / float(desc.norm(y)) ** 2

        for _ in range(6):  # alternate 1-d polish until both angles settle
            th_v, _ = golden_section_max(
                lambda t: val(t, th_y), th_v - span, th_v + span
            )
            th_y, _ = golden_section_max(
                lambda t: val(th_v, t), th_y - span, th_y + span
            )
            span *= 0.25
        return sign * val(th_v, th_y)

    return MetricConstants(lam, polish("max"), polish("min"), samples)


@dataclass(frozen=True)
class MetricField:
    """A Minkowski norm attached to every node of a torus grid.

    All supported families are constant in space, so a single descriptor is
    shared; the grid reference fixes dimensions and wrap-around conventions
    for the operations that consume the field.
    """

    grid: "TorusGrid"  # noqa: F821 (geometry imports this module, not vice versa)
    descriptor: MinkowskiNorm

    def __post_init__(self):
        if self.descriptor.dim != self.grid.dim:
            raise UnsupportedFamily(
                f"descriptor dim {self.descriptor.dim} != grid dim {self.grid.dim}"
            )

    @property
    def dim(self) -> int:
        return self.grid.dim
