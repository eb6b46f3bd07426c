"""Parabolic gradient-bound engine.

Everything here feeds one inequality family: pointwise bounds of the form
F^2(grad log u) - alpha(t) dtlog u <= phi(t) for positive solutions, their
sharp concave envelope Psi, and the entropy functionals used by the weak
log-Sobolev checks.

Numerical conventions shared by the module:

* the time derivative of log u is always the frozen spatial operator
  applied to u divided by u, never a time difference;
* squared gradients on trajectories come from the recorded assemblies'
  carre du champ;
* the trigonometric kernels T(w) = sqrt(w) cot(sqrt(w)) and
  S(w) = sin(sqrt(w))/sqrt(w) are evaluated through a single signed
  argument w, which makes every formula branch-free in the sign of the
  curvature bound and continuous across w = 0 via short Taylor windows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.interpolate import PchipInterpolator

from .errors import (
    DomainError,
    NoConvergence,
    NoRoot,
    ProfileInadmissible,
)
from .geometry import ScalarField
from .heat import Trajectory
from .metrics import EuclideanNorm
from .numerics import adaptive_simpson, bisect_root
from .reporting import InequalityReport, compare, discretization_tolerance

#: half-width of the Taylor window on w; cot/coth cancellation is
#: catastrophic closer to the removable singularity
SERIES_WINDOW = 1e-4

#: outside this radius coth saturates to 1 in double precision
_COTH_SATURATION = 350.0


def _t_kernel(w):
    """sqrt(w) cot(sqrt(w)) continued through w <= 0 as r coth(r)."""
    if np.ndim(w) == 0:
        # scalar lane: the conjugate searches hammer this with floats
        wf = float(w)
        if abs(wf) <= SERIES_WINDOW:
            return 1.0 - wf / 3.0 - wf**2 / 45.0 - 2.0 * wf**3 / 945.0 - wf**4 / 4725.0
        if wf > 0.0:
            s = math.sqrt(wf)
            return s * math.cos(s) / math.sin(s)
        r = math.sqrt(-wf)
        return r / math.tanh(r)
    w = np.asarray(w, dtype=float)
    out = np.empty_like(w)
    small = np.abs(w) <= SERIES_WINDOW
    if np.any(small):
        ws = w[small]
        out[small] = 1.0 - ws / 3.0 - ws**2 / 45.0 - 2.0 * ws**3 / 945.0 - ws**4 / 4725.0
    pos = w > SERIES_WINDOW
    if np.any(pos):
        s = np.sqrt(w[pos])
        out[pos] = s * np.cos(s) / np.sin(s)
    neg = w < -SERIES_WINDOW
    if np.any(neg):
        r = np.sqrt(-w[neg])
        out[neg] = r / np.tanh(r)
    return out


def _t_kernel_prime(w):
    if np.ndim(w) == 0:
        wf = float(w)
        if abs(wf) <= SERIES_WINDOW:
            return -1.0 / 3.0 - 2.0 * wf / 45.0 - 2.0 * wf**2 / 315.0 - 4.0 * wf**3 / 4725.0
        if wf > 0.0:
            s = math.sqrt(wf)
            return math.cos(s) / (2.0 * s * math.sin(s)) - 0.5 / math.sin(s) ** 2
        r = math.sqrt(-wf)
        if r > _COTH_SATURATION:
            return -0.5 / r
        return -1.0 / (2.0 * r * math.tanh(r)) + 0.5 / math.sinh(r) ** 2
    w = np.asarray(w, dtype=float)
    out = np.empty_like(w)
    small = np.abs(w) <= SERIES_WINDOW
    if np.any(small):
        ws = w[small]
        out[small] = -1.0 / 3.0 - 2.0 * ws / 45.0 - 2.0 * ws**2 / 315.0 - 4.0 * ws**3 / 4725.0
    pos = w > SERIES_WINDOW
    if np.any(pos):
        s = np.sqrt(w[pos])
        out[pos] = np.cos(s) / (2.0 * s * np.sin(s)) - 0.5 / np.sin(s) ** 2
    neg = w < -SERIES_WINDOW
    if np.any(neg):
        r = np.sqrt(-w[neg])
        val = np.empty_like(r)
        sat = r > _COTH_SATURATION
        val[sat] = -0.5 / r[sat]
        mod = ~sat
        rm = r[mod]
        val[mod] = -1.0 / (2.0 * rm * np.tanh(rm)) + 0.5 / np.sinh(rm) ** 2
        out[neg] = val
    return out


def _s_kernel(w: float) -> float:
    """sin(sqrt(w))/sqrt(w), continued as sinh(sqrt(-w))/sqrt(-w)."""
    if abs(w) <= SERIES_WINDOW:
        return 1.0 - w / 6.0 + w * w / 120.0
    if w > 0:
        s = math.sqrt(w)
        return math.sin(s) / s
    r = math.sqrt(-w)
    return math.sinh(r) / r


def _segmented_simpson(fn, lo: float, hi: float, interior, rel_tol: float = 1e-12) -> float:
    """Adaptive Simpson summed over segments split at the given interior
    points. Needed for piecewise-smooth integrands: the Richardson error
    estimate silently underestimates across derivative kinks."""
    pts = [lo, *(p for p in interior if lo < p < hi), hi]
    return sum(adaptive_simpson(fn, a, b, rel_tol=rel_tol) for a, b in zip(pts, pts[1:]))


def _interior_knots(profile: "LiYauProfile", lo: float, hi: float):
    if profile.variant != "table":
        return ()
    kn = profile.table_times
    return tuple(float(k) for k in kn[(kn > lo) & (kn < hi)])


def tau_lambda(lam: float, s: float, t: float) -> float:
    """Normalized oscillator quotient: sin/linear/sinh by the sign of lam."""
    if t <= 0 or not 0.0 <= s <= t:
        raise DomainError("need 0 <= s <= t with t > 0")
    if lam >= math.pi**2 / t**2:
        raise DomainError("lam at or beyond the first Dirichlet eigenvalue")
    if abs(lam) * t * t <= 1e-8:
        return (s / t) * (1.0 + lam * (t * t - s * s) / 6.0)
    if lam > 0:
        root = math.sqrt(lam)
        return math.sin(s * root) / math.sin(t * root)
    root = math.sqrt(-lam)
    if t * root > _COTH_SATURATION:
        # sinh quotient via exponentials to dodge overflow
        return math.exp((s - t) * root) * (1.0 - math.exp(-2.0 * s * root)) / (
            1.0 - math.exp(-2.0 * t * root)
        )
    return math.sinh(s * root) / math.sinh(t * root)


# ---------------------------------------------------------------------------
# profiles and their induced coefficients


@dataclass(frozen=True)
class LiYauProfile:
    """Time profile a(t) generating a coefficient pair (alpha, phi).

    Only the shape matters: rescaling a by a positive constant leaves both
    coefficients unchanged, so the preset normalizations are cosmetic.
    """

    variant: str
    tau: float = 0.0
    table_times: np.ndarray | None = None
    table_values: np.ndarray | None = None
    _interp: object = field(default=None, repr=False, compare=False)
    _interp_prime: object = field(default=None, repr=False, compare=False)

    @classmethod
    def quadratic(cls) -> "LiYauProfile":
        return cls("quadratic")

    @classmethod
    def sine(cls, tau1: float) -> "LiYauProfile":
        if tau1 <= 0:
            raise ProfileInadmissible("sine profile needs tau1 > 0")
        return cls("sine", tau=tau1)

    @classmethod
    def sinh_profile(cls, tau2: float) -> "LiYauProfile":
        if tau2 <= 0:
            raise ProfileInadmissible("sinh profile needs tau2 > 0")
        return cls("sinh", tau=tau2)

    @classmethod
    def lixu(cls, K: float) -> "LiYauProfile":
        if K == 0:
            raise ProfileInadmissible("the lixu profile needs K != 0")
        return cls("lixu", tau=abs(K))

    @classmethod
    def from_table(cls, times, values) -> "LiYauProfile":
        """Monotone-cubic interpolant of sampled profile values.

        The profile IS the interpolant; admissibility is checked on it,
        not on whatever produced the samples. Uniformly sampled smooth
        profiles often fail the integrability check because the edge
        derivative estimate is O(h^2) away from zero, which turns the
        leading behavior linear; grade the sample times toward zero
        (e.g. quadratically) to avoid that.
        """
        times = np.asarray(times, dtype=float)
        values = np.asarray(values, dtype=float)
        if times.ndim != 1 or times.shape != values.shape or times.size < 4:
            raise ProfileInadmissible("table needs matching 1-d arrays, >= 4 samples")
        if np.any(np.diff(times) <= 0):
            raise ProfileInadmissible("table times must increase strictly")
        if times[0] != 0.0 or values[0] != 0.0:
            raise ProfileInadmissible("table must start at a(0) = 0")
        if np.any(values[1:] <= 0):
            raise ProfileInadmissible("table values must be positive after 0")
        prof = cls("table", table_times=times, table_values=values)
        interp = PchipInterpolator(times, values)
        object.__setattr__(prof, "_interp", interp)
        object.__setattr__(prof, "_interp_prime", interp.derivative())
        return prof

    def horizon(self) -> float:
        """Largest time the profile stays positive (open upper end)."""
        if self.variant == "sine":
            return math.pi / self.tau
        if self.variant == "table":
            return float(self.table_times[-1])
        return math.inf

    def value(self, t):
        t = np.asarray(t, dtype=float)
        if self.variant == "quadratic":
            return t * t
        if self.variant == "sine":
            return 4.0 * self.tau * np.sin(self.tau * t) ** 2
        if self.variant in ("sinh", "lixu"):
            return 4.0 * self.tau * np.sinh(self.tau * t) ** 2
        return self._interp(t)

    def derivative(self, t):
        t = np.asarray(t, dtype=float)
        if self.variant == "quadratic":
            return 2.0 * t
        if self.variant == "sine":
            return 4.0 * self.tau**2 * np.sin(2.0 * self.tau * t)
        if self.variant in ("sinh", "lixu"):
            return 4.0 * self.tau**2 * np.sinh(2.0 * self.tau * t)
        return self._interp_prime(t)

    def integral(self, t: float) -> float:
        """Closed-form running integral of a for the presets."""
        if self.variant == "quadratic":
            return t**3 / 3.0
        if self.variant == "sine":
            return 2.0 * self.tau * t - math.sin(2.0 * self.tau * t)
        if self.variant in ("sinh", "lixu"):
            return math.sinh(2.0 * self.tau * t) - 2.0 * self.tau * t
        raise ProfileInadmissible("tables have no closed-form integral")

    def integral_quotient(self, t: float) -> float:
        """Closed-form running integral of a'(s)^2 / a(s)."""
        if self.variant == "quadratic":
            return 4.0 * t
        if self.variant == "sine":
            return 8.0 * self.tau**3 * t + 4.0 * self.tau**2 * math.sin(2.0 * self.tau * t)
        if self.variant in ("sinh", "lixu"):
            return 8.0 * self.tau**3 * t + 4.0 * self.tau**2 * math.sinh(2.0 * self.tau * t)
        raise ProfileInadmissible("tables have no closed-form integral")

    def check_admissible(self, t_hi: float) -> None:
        """Numeric admissibility of a user table over (0, t_hi].

        The vanishing-ratio condition is checked on a dyadic ladder toward
        zero; integrability of a'^2/a by shrinking the quadrature cutoff
        and demanding the integral stabilizes.
        """
        if self.variant != "table":
            return
        if t_hi > self.horizon():
            raise ProfileInadmissible("requested horizon beyond the table range")
        t_ref = float(self.table_times[1])
        ladder = t_ref * 0.5 ** np.arange(0, 11)
        a = self.value(ladder)
        ap = self.derivative(ladder)
        if np.any(ap <= 0) or np.any(a <= 0):
            raise ProfileInadmissible("profile or slope not positive near 0")
        ratio = a / ap
        if not ratio[-1] <= 0.05 * ratio[0] + 1e-14:
            raise ProfileInadmissible("a/a' does not vanish toward 0")

        def quot(s):
            return float(self.derivative(s) ** 2 / self.value(s))

        cut = 1e-8 * t_hi
        knots = _interior_knots(self, cut / 16.0, t_hi)
        coarse = _segmented_simpson(quot, cut, t_hi, knots, rel_tol=1e-10)
        fine = _segmented_simpson(quot, cut / 16.0, t_hi, knots, rel_tol=1e-10)
        if abs(fine - coarse) > max(1e-6 * abs(fine), 1e-8):
            raise ProfileInadmissible("a'^2/a fails the integrability check near 0")


@dataclass(frozen=True)
class LiYauCoefficients:
    """Evaluator pair (alpha, phi) with its construction provenance."""

    alpha: Callable[[float], float]
    phi: Callable[[float], float]
    provenance: str
    K: float
    N: float
    horizon: float


def _verify_coefficient_odes(profile, coeffs, K, N, horizon):
    """Finite-difference check of the two defining identities.

    The step is 1e-4 of the distance to the nearest domain end, which
    keeps the second-order difference error bounded even where the
    coefficients blow up toward a profile degeneration, while staying
    coarse enough that quadrature noise in the provenance='quadrature'
    path is negligible against the 1e-6 threshold.
    """
    times = np.linspace(0.05 * horizon, 0.95 * horizon, 20)
    sing = profile.horizon()
    knots = profile.table_times if profile.variant == "table" else None
    for t in times:
        t = float(t)
        gap = min(t, sing - t) if math.isfinite(sing) else t
        delta = min(1e-4 * gap, 0.5 * (horizon - t) + 1e-300)
        if knots is not None:
            # interpolants are only piecewise smooth; difference inside
            # one knot interval, centered where it is widest
            j = int(np.clip(np.searchsorted(knots, t), 1, len(knots) - 1))
            t = 0.5 * (knots[j - 1] + knots[j])
            delta = min(delta, 0.25 * (knots[j] - knots[j - 1]))
        a = float(profile.value(t))
        ap = float(profile.derivative(t))
        loga_p = ap / a
        al = coeffs.alpha(t)
        al_fd = (coeffs.alpha(t + delta) - coeffs.alpha(t - delta)) / (2.0 * delta)
        res1 = al_fd + loga_p * (al - 1.0) + 2.0 * K
        scale1 = max(1.0, abs(2.0 * K), abs(loga_p * (al - 1.0)))
        ph = coeffs.phi(t)
        ph_fd = (coeffs.phi(t + delta) - coeffs.phi(t - delta)) / (2.0 * delta)
        drive = (N / 8.0) * (loga_p - 2.0 * K) ** 2
        res2 = ph_fd + loga_p * ph - drive
        scale2 = max(1.0, abs(drive), abs(loga_p * ph))
        if abs(res1) > 1e-6 * scale1 or abs(res2) > 1e-6 * scale2:
            raise NoConvergence(
                f"coefficient identities fail at t={t:.4g}: "
                f"{res1:.2e} / {res2:.2e}"
            )


def alpha_phi(
    profile: LiYauProfile,
    K: float,
    N: float,
    horizon: float,
    force_quadrature: bool = False,
) -> LiYauCoefficients:
    """Coefficient pair induced by a profile on (0, horizon].

    Presets use closed-form integrals; tables (or force_quadrature) go
    through adaptive Simpson with a shifted lower endpoint for the
    singular quotient integral. Both defining identities are verified at
    20 sample times before the evaluators are handed out.
    """
    if horizon <= 0:
        raise DomainError("horizon must be positive")
    if horizon >= profile.horizon():
        raise ProfileInadmissible("profile degenerates before the requested horizon")
    if N <= 0:
        raise DomainError("dimension parameter must be positive")
    profile.check_admissible(horizon)
    use_quadrature = force_quadrature or profile.variant == "table"

    if use_quadrature:
        if profile.variant == "table":
            # the antiderivative of the interpolant is exact piecewise
            anti = profile._interp.antiderivative()

            def int_a(t: float) -> float:
                return float(anti(t))

        else:

            def int_a(t: float) -> float:
                return adaptive_simpson(
                    lambda s: float(profile.value(s)), 0.0, t, rel_tol=1e-12
                )

        def int_q(t: float) -> float:
            # the quotient is bounded for admissible profiles but its
            # integrand has no value at 0; a tiny cutoff plus the rectangle
            # tail keeps the result exact to rounding for quadratic starts
            cut = 1e-12 * t

            def quot(s: float) -> float:
                return float(profile.derivative(s) ** 2 / profile.value(s))

            body = _segmented_simpson(quot, cut, t, _interior_knots(profile, cut, t))
            return body + quot(cut) * cut

    else:
        int_a = profile.integral
        int_q = profile.integral_quotient

    def alpha(t: float) -> float:
        if not 0.0 < t <= horizon:
            raise DomainError(f"time {t} outside (0, {horizon}]")
        return 1.0 - 2.0 * K * int_a(t) / float(profile.value(t))

    def phi(t: float) -> float:
        if not 0.0 < t <= horizon:
            raise DomainError(f"time {t} outside (0, {horizon}]")
        a = float(profile.value(t))
        return -N * K / 2.0 + N * K * K * int_a(t) / (2.0 * a) + N * int_q(t) / (8.0 * a)

    coeffs = LiYauCoefficients(
        alpha=alpha,
        phi=phi,
        provenance="quadrature" if use_quadrature else "closed_form",
        K=K,
        N=N,
        horizon=horizon,
    )
    _verify_coefficient_odes(profile, coeffs, K, N, horizon)
    return coeffs


# ---------------------------------------------------------------------------
# the concave envelope


@dataclass(frozen=True)
class PsiEvaluator:
    """Concave envelope at fixed (N, K, t), K nonzero.

    Defined on (-inf, x_max) with x_max = 1 + pi^2/(K t)^2; evaluation is
    branch-free in the sign of K through the signed argument
    w = (K t)^2 (x - 1).
    """

    N: float
    K: float
    t: float

    def __post_init__(self):
        if self.K == 0.0:
            raise DomainError("zero curvature bound has no envelope; use the limit forms")
        if self.t <= 0 or self.N <= 0:
            raise DomainError("need t > 0 and N > 0")

    @property
    def x_max(self) -> float:
        return 1.0 + math.pi**2 / (self.K * self.t) ** 2

    def _w(self, x: np.ndarray) -> np.ndarray:
        return (self.K * self.t) ** 2 * (np.asarray(x, dtype=float) - 1.0)

    def _check_domain(self, x):
        if np.any(np.asarray(x, dtype=float) >= self.x_max):
            raise DomainError(f"argument at or beyond the domain end {self.x_max:.6g}")

    def psi(self, x):
        if np.ndim(x) == 0:
            xf = float(x)
            if xf >= self.x_max:
                raise DomainError(f"argument at or beyond the domain end {self.x_max:.6g}")
            w = (self.K * self.t) ** 2 * (xf - 1.0)
            return 0.5 * self.K * (xf - 2.0) + _t_kernel(w) / self.t
        self._check_domain(x)
        x = np.asarray(x, dtype=float)
        return 0.5 * self.K * (x - 2.0) + _t_kernel(self._w(x)) / self.t

    def psi_prime(self, x):
        if np.ndim(x) == 0:
            xf = float(x)
            if xf >= self.x_max:
                raise DomainError(f"argument at or beyond the domain end {self.x_max:.6g}")
            w = (self.K * self.t) ** 2 * (xf - 1.0)
            return 0.5 * self.K + self.K**2 * self.t * _t_kernel_prime(w)
        self._check_domain(x)
        return 0.5 * self.K + self.K**2 * self.t * _t_kernel_prime(self._w(x))

    def psi_tilde(self, x):
        x = np.asarray(x, dtype=float)
        out = self.psi(x) - self.K * x + 2.0 * self.K
        return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class PsiRoots:
    """Certified zeros of the envelope, tagged by curvature sign."""

    mode: str  # "negative" or "positive"
    chi0: float | None = None
    chi1: float | None = None
    chi2: float | None = None


def psi_roots(evaluator: PsiEvaluator) -> PsiRoots:
    """Bracket and bisect the envelope zeros.

    Negative bound: a single zero to the right of 1. Positive bound:
    one negative zero and one in (0, 1], provided t >= 2/K; earlier times
    have no zero and that is reported as NoRoot.
    """
    ev = evaluator
    if ev.K < 0:
        x_hi = ev.x_max
        hi = None
        for j in range(1, 60):
            cand = x_hi - (x_hi - 1.0) * 0.5**j
            if ev.psi(cand) < 0.0:
                hi = cand
                break
        if hi is None:
            raise NoRoot("no sign change left of the domain end")
        chi0 = bisect_root(ev.psi, 1.0, hi, tol=1e-12)
        return PsiRoots(mode="negative", chi0=chi0)

    if ev.t < 2.0 / ev.K:
        raise NoRoot("positive-curvature roots need t >= 2/K")
    at_one = ev.psi(1.0)
    if at_one == 0.0:
        chi2 = 1.0
    else:
        chi2 = bisect_root(ev.psi, 0.0, 1.0, tol=1e-12)
    lo = -1.0
    for _ in range(200):
        if ev.psi(lo) < 0.0:
            break
        lo *= 2.0
    else:
        raise NoRoot("left zero bracket not found")
    chi1 = bisect_root(ev.psi, lo, 0.0, tol=1e-12)
    return PsiRoots(mode="positive", chi1=chi1, chi2=chi2)


def linearize_psi(evaluator: PsiEvaluator, x_bar: float):
    """Tangent line of the envelope at x_bar, packaged in coefficient form.

    Returns (alpha_fn, phi_fn) as functions of time with the evaluator's
    (N, K) held fixed; every tangent reproduces one of the trigonometric
    coefficient families.
    """
    evaluator._check_domain(x_bar)
    N, K = evaluator.N, evaluator.K

    def alpha_fn(t: float) -> float:
        ev = PsiEvaluator(N, K, t)
        return (2.0 / K) * ev.psi_prime(x_bar)

    def phi_fn(t: float) -> float:
        ev = PsiEvaluator(N, K, t)
        return (N / 2.0) * (ev.psi(x_bar) - x_bar * ev.psi_prime(x_bar))

    return alpha_fn, phi_fn


# ---------------------------------------------------------------------------
# residuals on trajectories


def _log_state(traj: Trajectory, index: int):
    u = traj.fields[index]
    if np.min(u) <= 0.0:
        raise DomainError("solution must stay strictly positive")
    assembly = traj.assembly_at(index)
    f2 = assembly.carre_du_champ(np.log(u))
    dt_log = assembly.apply(u) / u
    return u, f2, dt_log


def _traj_meta(traj: Trajectory, extra: dict | None = None) -> dict:
    meta = {
        "h": traj.grid.h,
        "dt": traj.dt,
        "dim": traj.grid.dim,
        "nodes_per_axis": traj.grid.nodes_per_axis,
        "family": traj.metric.descriptor.family,
    }
    if extra:
        meta.update(extra)
    return meta


def residual_linear(
    traj: Trajectory, t: float, coeffs: LiYauCoefficients
) -> InequalityReport:
    """Pointwise linear-form residual at a recorded time."""
    index = traj.index_of(t)
    _, f2, dt_log = _log_state(traj, index)
    lhs = f2 - coeffs.alpha(t) * dt_log
    rhs = np.full_like(lhs, coeffs.phi(t))
    scale = max(1.0, float(np.max(np.abs(lhs))), abs(coeffs.phi(t)))
    tol = discretization_tolerance(traj.grid.h, traj.dt, scale)
    return compare(
        "li-yau-linear",
        lhs,
        rhs,
        tol,
        "max(10h^2, 10dt) * residual scale",
        grid_meta=_traj_meta(traj, {"t": t, "provenance": coeffs.provenance}),
    )


def residual_psi(traj: Trajectory, t: float, N: float, K: float) -> InequalityReport:
    """Sharp-envelope residual; falls back to the flat form when K = 0.

    The envelope argument must stay inside the domain at every node; a
    violation is itself reported as a failing check rather than raising,
    since it falsifies the same theorem.
    """
    index = traj.index_of(t)
    _, f2, dt_log = _log_state(traj, index)
    meta = _traj_meta(traj, {"t": t, "N": N, "K": K})
    if abs(K) < 1e-10:
        lhs = f2 - dt_log
        rhs = np.full_like(lhs, N / (2.0 * t))
        scale = max(1.0, float(np.max(np.abs(lhs))), N / (2.0 * t))
        tol = discretization_tolerance(traj.grid.h, traj.dt, scale)
        return compare(
            "li-yau-envelope",
            lhs,
            rhs,
            tol,
            "max(10h^2, 10dt) * residual scale",
            grid_meta=meta,
        )
    ev = PsiEvaluator(N, K, t)
    x_field = 4.0 / (N * K) * dt_log
    margin = float(np.max(x_field) - ev.x_max)
    if margin >= 0.0:
        return compare(
            "li-yau-envelope-domain",
            np.asarray([margin]),
            np.asarray([0.0]),
            0.0,
            "envelope argument must stay below the domain end",
            grid_meta=meta,
        )
    lhs = f2
    rhs = (N / 2.0) * ev.psi(x_field)
    scale = max(1.0, float(np.max(np.abs(rhs))))
    tol = discretization_tolerance(traj.grid.h, traj.dt, scale)
    return compare(
        "li-yau-envelope",
        lhs,
        rhs,
        tol,
        "max(10h^2, 10dt) * residual scale",
        grid_meta=meta,
    )


def kernel_equality_residual(dim: int, t: float, points: np.ndarray) -> np.ndarray:
    """Sharpness witness: the free-space Gaussian makes the flat-form
    residual vanish identically.

    All ingredients are evaluated from closed forms (the dual norm through
    the metric layer, the others symbolically), so the returned residual
    is pure roundoff.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if points.shape[1] != dim:
        raise DomainError(f"points must have {dim} columns")
    metric = EuclideanNorm(dim)
    xi = -points / (2.0 * t)
    f2 = metric.dual_norm(xi) ** 2
    sq = np.sum(points * points, axis=1)
    dt_log = -dim / (2.0 * t) + sq / (4.0 * t * t)
    return f2 - dt_log - dim / (2.0 * t)


# ---------------------------------------------------------------------------
# entropy functionals


def _transport_values(traj: Trajectory, i0: int, i1: int, values: np.ndarray):
    x = np.array(values, dtype=float, copy=True)
    for k in range(i0, i1):
        x = traj.assemblies[k].advance(x)
    return x


def _entropy_state(traj: Trajectory, s: float, t: float, phi: ScalarField):
    if not 0.0 <= s <= t:
        raise DomainError("need 0 <= s <= t")
    if np.min(phi.values) < 0.0:
        raise DomainError("test field must be nonnegative")
    src = traj.index_of(t - s)
    dst = traj.index_of(t)
    u = traj.fields[src]
    if np.min(u) < 1e-8 * np.max(u):
        raise DomainError("entropy checks need min u >= 1e-8 max u")
    return src, dst, u


def entropy_H(traj: Trajectory, s: float, t: float, phi: ScalarField) -> float:
    """Transported-entropy functional; the source time is t - s.

    Non-increasing in the source time; its source-time derivative is minus
    entropy_production at the same arguments.
    """
    src, dst, u = _entropy_state(traj, s, t, phi)
    moved = _transport_values(traj, src, dst, u * np.log(u))
    return float(np.sum(phi.values * moved * traj.measure.sigma))


def entropy_production(traj: Trajectory, s: float, t: float, phi: ScalarField) -> float:
    """Dissipation integrand of entropy_H, from the recorded assemblies."""
    src, dst, u = _entropy_state(traj, s, t, phi)
    gamma_log = traj.assembly_at(src).carre_du_champ(np.log(u))
    moved = _transport_values(traj, src, dst, u * gamma_log)
    return float(np.sum(phi.values * moved * traj.measure.sigma))


def _u_lap_log(traj: Trajectory, index: int) -> np.ndarray:
    """u times the frozen operator acting on log u, through the identity
    with the time derivative and the squared gradient."""
    u = traj.fields[index]
    assembly = traj.assembly_at(index)
    return assembly.apply(u) - u * assembly.carre_du_champ(np.log(u))


def check_exp_uu(
    traj: Trajectory, s: float, t: float, phi: ScalarField, N: float
) -> InequalityReport:
    """Exponential entropy-gap triple for certified flat configurations.

    Three scalar inequalities tied together by the normalization
    zeta = 2 / (N integral of phi u_t): two exponential bounds on the
    weighted entropy gap and the resulting quadratic relation between the
    endpoint dissipation integrals.
    """
    src = traj.index_of(s)
    dst = traj.index_of(t)
    if src >= dst:
        raise DomainError("need s < t")
    u_s = traj.fields[src]
    u_t = traj.fields[dst]
    if np.min(u_s) <= 0.0 or np.min(u_t) <= 0.0:
        raise DomainError("needs strictly positive solutions")
    sig = traj.measure.sigma
    w = phi.values
    delta = t - s
    mass_t = float(np.sum(w * u_t * sig))
    zeta = 2.0 / (N * mass_t)
    lap_t = traj.assembly_at(dst).apply(u_t)
    int_t = float(np.sum(w * _u_lap_log(traj, dst) * sig))
    moved = _transport_values(traj, src, dst, _u_lap_log(traj, src))
    int_s = float(np.sum(w * moved * sig))
    ent_moved = _transport_values(traj, src, dst, u_s * np.log(u_s))
    exponent = zeta * float(
        np.sum(w * (u_t * np.log(u_t) - ent_moved + delta * lap_t) * sig)
    )

    r1 = math.exp(exponent) - (1.0 + delta * zeta * int_t)
    r2 = math.exp(-exponent) - (1.0 - delta * zeta * int_s)
    r3 = int_s * (1.0 + zeta * delta * int_t) - int_t
    lhs = np.asarray([r1, r2, r3])
    scale = max(
        1.0,
        abs(exponent),
        abs(delta * zeta * int_t),
        abs(delta * zeta * int_s),
        abs(int_t),
        abs(int_s),
    )
    tol = discretization_tolerance(traj.grid.h, traj.dt, scale)
    meta = _traj_meta(traj, {"s": s, "t": t, "zeta": zeta, "N": N})
    return compare(
        "exp-entropy-gap",
        lhs,
        np.zeros(3),
        tol,
        "max(10h^2, 10dt) * functional scale",
        grid_meta=meta,
    )


def check_log_sob_weak(
    traj: Trajectory, t: float, phi: ScalarField, K: float, N: float
) -> InequalityReport:
    """Weak log-Sobolev pair on [0, t] for a certified nonzero bound.

    The branch parameter chi is formed from weighted averages of the time
    derivative; both exponential inequalities are evaluated with the
    oscillator prefactor written through the signed kernel, which is
    continuous across chi = 1.
    """
    if abs(K) < 1e-10:
        raise DomainError("zero bound: use the exponential entropy-gap triple")
    dst = traj.index_of(t)
    if dst == 0:
        raise DomainError("need t > 0 on the recorded grid")
    u_t = traj.fields[dst]
    u_0 = traj.fields[0]
    if np.min(u_t) <= 0.0 or np.min(u_0) <= 0.0:
        raise DomainError("needs strictly positive solutions")
    sig = traj.measure.sigma
    w = phi.values
    mass_t = float(np.sum(w * u_t * sig))
    zeta = 2.0 / (N * mass_t)
    ddt = traj.assembly_at(dst).apply(u_t)
    chi = 4.0 / (N * K) * float(np.sum(w * ddt * sig)) / mass_t
    ev = PsiEvaluator(N, K, t)
    meta = _traj_meta(traj, {"t": t, "K": K, "N": N, "chi": chi, "zeta": zeta})
    if chi >= ev.x_max:
        return compare(
            "weak-log-sobolev-domain",
            np.asarray([chi - ev.x_max]),
            np.asarray([0.0]),
            0.0,
            "branch parameter must stay below the domain end",
            grid_meta=meta,
        )
    prefactor = t * _s_kernel((K * t) ** 2 * (chi - 1.0))

    ent_moved = _transport_values(traj, 0, dst, u_0 * np.log(u_0))
    ent_gap = float(np.sum(w * (u_t * np.log(u_t) - ent_moved) * sig))
    grad_t = float(
        np.sum(w * u_t * traj.assembly_at(dst).carre_du_champ(np.log(u_t)) * sig)
    )
    grad_0 = traj.fields[0] * traj.assembly_at(0).carre_du_champ(np.log(u_0))
    grad_0_moved = float(np.sum(w * _transport_values(traj, 0, dst, grad_0) * sig))

    lhs1 = math.exp(zeta * ent_gap + 0.5 * K * t * chi - K * t)
    rhs1 = prefactor * (-zeta * grad_t + ev.psi(chi))
    lhs2 = math.exp(-zeta * ent_gap - 0.5 * K * t * chi + K * t)
    rhs2 = prefactor * (zeta * grad_0_moved + ev.psi_tilde(chi))
    lhs = np.asarray([lhs1, lhs2])
    rhs = np.asarray([rhs1, rhs2])
    scale = max(1.0, float(np.max(np.abs(lhs))), float(np.max(np.abs(rhs))))
    tol = discretization_tolerance(traj.grid.h, traj.dt, scale)
    return compare(
        "weak-log-sobolev",
        lhs,
        rhs,
        tol,
        "max(10h^2, 10dt) * functional scale",
        grid_meta=meta,
    )
