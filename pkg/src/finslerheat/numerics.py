"""Small deterministic numeric primitives used throughout the package.

These are deliberately hand-rolled where the behavior is part of the
contract (tolerances, iteration caps, endpoint handling); anything generic
beyond that is delegated to numpy/scipy by the callers.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .errors import NoConvergence, SolverDivergence

#: golden ratio section used by the 1-d maximizer
_INVPHI = (np.sqrt(5.0) - 1.0) / 2.0


def adaptive_simpson(
    f: Callable[[float], float],
    a: float,
    b: float,
    rel_tol: float = 1e-10,
    max_depth: int = 48,
) -> float:
    """Adaptive Simpson quadrature of ``f`` on ``[a, b]``.

    The tolerance is relative to the accumulated integral (with an absolute
    floor of ``rel_tol`` so integrals near zero terminate). Raises
    :class:`NoConvergence` when the recursion depth is exhausted before the
    local error estimate falls under tolerance.
    """
    if a == b:
        return 0.0

    def simpson(x0, x2, f0, f1, f2):
        return (x2 - x0) / 6.0 * (f0 + 4.0 * f1 + f2)

    scale = abs(b - a) * max(abs(f(a)), abs(f(b)), 1e-300)

    def recurse(x0, x2, f0, f1, f2, whole, depth):
        xm = 0.5 * (x0 + x2)
        xl = 0.5 * (x0 + xm)
        xr = 0.5 * (xm + x2)
        fl = f(xl)
        fr = f(xr)
        left = simpson(x0, xm, f0, fl, f1)
        right = simpson(xm, x2, f1, fr, f2)
        err = left + right - whole
        tol = rel_tol * max(abs(whole), scale * 1e-3, 1e-300)
        if abs(err) <= 15.0 * tol or depth >= max_depth:
            if depth >= max_depth and abs(err) > 1e6 * tol:
                raise NoConvergence(
                    f"adaptive Simpson stalled on [{x0}, {x2}], err={err:.3e}"
                )
            return left + right + err / 15.0
        return recurse(x0, xm, f0, fl, f1, left, depth + 1) + recurse(
            xm, x2, f1, fr, f2, right, depth + 1
        )

    fa, fm, fb = f(a), f(0.5 * (a + b)), f(b)
    whole = simpson(a, b, fa, fm, fb)
    return recurse(a, b, fa, fm, fb, whole, 0)


def golden_section_max(
    f: Callable[[float], float],
    a: float,
    b: float,
    tol: float = 1e-10,
) -> tuple[float, float]:
    """Maximize a unimodal ``f`` on ``[a, b]`` by golden-section search.

    Returns ``(x_star, f(x_star))``. ``tol`` is an absolute tolerance on the
    bracket width, relative to ``max(1, |a|, |b|)``.
    """
    lo, hi = (a, b) if a <= b else (b, a)
    width_tol = tol * max(1.0, abs(lo), abs(hi))
    c = hi - _INVPHI * (hi - lo)
    d = lo + _INVPHI * (hi - lo)
    fc, fd = f(c), f(d)
    while hi - lo > width_tol:
        if fc >= fd:
            hi, d, fd = d, c, fc
            c = hi - _INVPHI * (hi - lo)
            fc = f(c)
        else:
            lo, c, fc = c, d, fd
            d = lo + _INVPHI * (hi - lo)
            fd = f(d)
    x = 0.5 * (lo + hi)
    return x, f(x)


def expand_bracket_max(
    f: Callable[[float], float],
    start: float,
    step: float,
    max_expand: int = 200,
) -> tuple[float, float]:
    """Find ``[start, hi]`` containing the maximum of a concave ``f``.

    Marches right with geometrically growing steps until the function value
    drops below an earlier one, which brackets the maximizer for concave
    objectives. Raises :class:`NoConvergence` if no decrease is seen.
    """
    xs = [start, start + step]
    vals = [f(xs[0]), f(xs[1])]
    for _ in range(max_expand):
        if vals[-1] < vals[-2]:
            return xs[0], xs[-1]
        step *= 2.0
        xs.append(xs[-1] + step)
        vals.append(f(xs[-1]))
    raise NoConvergence("could not bracket maximum; objective keeps increasing")


def bisect_root(
    f: Callable[[float], float],
    lo: float,
    hi: float,
    tol: float = 1e-12,
    max_iter: int = 400,
) -> float:
    """Bisection for a sign change of ``f`` on ``[lo, hi]``.

    ``tol`` is relative to ``max(1, |x|)``. The endpoints must straddle a
    sign change, otherwise ``ValueError`` is raised.
    """
    flo, fhi = f(lo), f(hi)
    if flo == 0.0:
        return lo
    if fhi == 0.0:
        return hi
    if np.sign(flo) == np.sign(fhi):
        raise ValueError(f"no sign change on bracket [{lo}, {hi}]")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        fmid = f(mid)
        if fmid == 0.0:
            return mid
        if np.sign(fmid) == np.sign(flo):
            lo, flo = mid, fmid
        else:
            hi, fhi = mid, fmid
        if hi - lo <= tol * max(1.0, abs(mid)):
            return 0.5 * (lo + hi)
    return 0.5 * (lo + hi)


def cg_measure(
    apply_op: Callable[[np.ndarray], np.ndarray],
    rhs: np.ndarray,
    sigma: np.ndarray,
    x0: np.ndarray | None = None,
    rel_tol: float = 1e-13,
    max_iter: int | None = None,
) -> np.ndarray:
    """Conjugate gradient for an operator self-adjoint in the measure inner
    product ``<u, v> = sum(u * v * sigma)``.

    ``apply_op`` must be positive definite with respect to that inner product.
    Convergence is declared when the measure-norm residual drops below
    ``rel_tol`` times the measure norm of ``rhs`` (with a machine-precision
    floor). Raises :class:`SolverDivergence` after ``max_iter`` iterations
    (default ``10 * n``).
    """
    n = rhs.shape[0]
    if max_iter is None:
        max_iter = 10 * n
    x = rhs.copy() if x0 is None else x0.copy()

    def inner(u, v):
        return float(np.dot(u * sigma, v))

    r = rhs - apply_op(x)
    rr = inner(r, r)
    target = max(rel_tol, 64.0 * np.finfo(float).eps) ** 2 * max(
        inner(rhs, rhs), 1e-300
    )
    if rr <= target:
        return x
    p = r.copy()
    stagnation = 0
    best_rr = rr
    for _ in range(max_iter):
        ap = apply_op(p)
        alpha = rr / inner(p, ap)
        x = x + alpha * p
        r = r - alpha * ap
        rr_new = inner(r, r)
        if rr_new <= target:
            return x
        if rr_new >= best_rr:
            stagnation += 1
            # round-off floor reached; the iterate cannot improve further
            if stagnation >= 20:
                return x
        else:
            best_rr = rr_new
            stagnation = 0
        p = r + (rr_new / rr) * p
        rr = rr_new
    raise SolverDivergence(
        f"measure-CG exceeded {max_iter} iterations (residual^2 {rr:.3e})"
    )
