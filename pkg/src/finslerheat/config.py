"""Experiment configuration.

INI-style files with a small fixed schema. The only expression language
is a whitelist: sums of constants and single-mode trigonometric terms,
written like ``1 + 0.5*cos(1)`` (1-d) or ``0.2*cos(1,2,0.5)`` (2-d with a
phase). Modes must be integers so every term is periodic on the torus.
Subtraction is spelled as a negative coefficient after a ``+``.

Sections and keys:

* ``[grid]``: dim, nodes, period
* ``[metric]``: family plus its parameters (a, b, p_plus, p_minus)
* ``[measure]``: f (log-density expression, default 0)
* ``[initial]``: u (expression)
* ``[time]``: dt, t_final, scheme
* ``[checks]``: names (comma list), N, K (number or auto), profile, seed,
  n_fields, s, phi, harnack_pairs, harnack_mode
* ``[output]``: dir
* ``[ladder]``: levels as ``nodes,dt`` pairs joined by ``;``
"""

from __future__ import annotations

import configparser
import hashlib
import math
import re
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, FinslerHeatError
from .geometry import MeasureField, ScalarField, TorusGrid
from .heat import SCHEMES
from .metrics import (
    Asym1DNorm,
    EuclideanNorm,
    MetricField,
    MinkowskiNorm,
    RandersNorm,
    RiemannianNorm,
)

KNOWN_CHECKS = (
    "conservative",
    "duality",
    "semigroup_law",
    "positivity",
    "contraction",
    "order_bounds",
    "cauchy_schwarz",
    "variance",
    "laplacian_commutation",
    "gradient_estimate",
    "local_logsob",
    "lipschitz",
    "liyau_linear",
    "liyau_envelope",
    "exp_entropy",
    "weak_logsob",
    "harnack",
    "bochner",
)

_NUMBER = r"[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?"
_TERM_RE = re.compile(
    rf"^(?:(?P<coef>{_NUMBER})\*)?(?P<fn>cos|sin)\((?P<args>[^()]*)\)$"
)


def _parse_term(term: str, dim: int):
    """One whitelist term -> (kind, payload). Raises ConfigError."""
    term = term.strip()
    if not term:
        raise ConfigError("empty term in expression")
    try:
        return "const", float(term)
    except ValueError:
        pass
    m = _TERM_RE.match(term.replace(" ", ""))
    if m is None:
        raise ConfigError(f"term {term!r} not in the expression whitelist")
    coef = float(m.group("coef")) if m.group("coef") else 1.0
    fn = m.group("fn")
    try:
        args = [float(a) for a in m.group("args").split(",")]
    except ValueError:
        raise ConfigError(f"bad arguments in term {term!r}")
    if dim == 1:
        if len(args) == 1:
            modes, phase = args, 0.0
        elif len(args) == 2:
            modes, phase = args[:1], args[1]
        else:
            raise ConfigError(f"1-d trig term takes (mode) or (mode, phase): {term!r}")
    else:
        if len(args) == 2:
            modes, phase = args, 0.0
        elif len(args) == 3:
            modes, phase = args[:2], args[2]
        else:
            raise ConfigError(
                f"2-d trig term takes (m1, m2) or (m1, m2, phase): {term!r}"
            )
    for mode in modes:
        if mode != round(mode):
            raise ConfigError(f"mode {mode} is not an integer; term not periodic")
    return "trig", (coef, fn, np.asarray(modes, dtype=float), phase)


def parse_expression(text: str, dim: int, period: float):
    """Whitelisted expression -> vectorized callable on point arrays."""
    parsed = [_parse_term(t, dim) for t in text.split("+")]

    def evaluate(points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.zeros(pts.shape[0])
        for kind, payload in parsed:
            if kind == "const":
                out += payload
            else:
                coef, fn, modes, phase = payload
                angle = 2.0 * np.pi / period * (pts @ modes) + phase
                out += coef * (np.cos(angle) if fn == "cos" else np.sin(angle))
        return out

    return evaluate


def _floats(text: str) -> list[float]:
    try:
        return [float(p) for p in text.split(",")]
    except ValueError:
        raise ConfigError(f"expected comma-separated numbers, got {text!r}")


def _build_descriptor(dim, family, section) -> MinkowskiNorm:
    """Construct the norm descriptor, converting admissibility failures
    into configuration errors so they surface before any solve."""
    try:
        if family == "euclidean":
            return EuclideanNorm(dim)
        if family == "riemannian":
            entries = _floats(section.get("a", "1"))
            if dim == 1:
                a = np.asarray([[entries[0]]])
            else:
                if len(entries) != 3:
                    raise ConfigError("2-d tensor needs a = a11,a12,a22")
                a = np.asarray([[entries[0], entries[1]], [entries[1], entries[2]]])
            return RiemannianNorm(a)
        if family == "randers":
            entries = _floats(section.get("a", "1"))
            if dim == 1:
                a = np.asarray([[entries[0]]])
            else:
                if len(entries) != 3:
                    raise ConfigError("2-d tensor needs a = a11,a12,a22")
                a = np.asarray([[entries[0], entries[1]], [entries[1], entries[2]]])
            b = np.asarray(_floats(section.get("b", "0")))
            if b.shape != (dim,):
                raise ConfigError(f"drift must have {dim} components")
            return RandersNorm(a, b)
        if family == "asym1d":
            if dim != 1:
                raise ConfigError("asym1d is one-dimensional")
            return Asym1DNorm(
                float(section.get("p_plus", "1")), float(section.get("p_minus", "1"))
            )
    except ConfigError:
        raise
    except FinslerHeatError as exc:
        raise ConfigError(f"inadmissible metric: {exc}") from exc
    raise ConfigError(f"unknown metric family {family!r}")


@dataclass(frozen=True)
class ExperimentConfig:
    dim: int
    nodes: int
    period: float
    family: str
    descriptor: MinkowskiNorm
    f_expr: str
    u0_expr: str
    dt: float
    t_final: float
    scheme: str
    checks: tuple[str, ...]
    N: float
    K: float | None  # None: resolve from the certified curvature bound
    profile: str
    seed: int
    n_fields: int
    s_time: float
    phi_expr: str
    harnack_pairs: tuple[tuple[int, float, int, float], ...]
    harnack_mode: str
    out_dir: str
    ladder: tuple[tuple[int, float], ...]
    digest: str

    def build_grid(self, nodes: int | None = None) -> TorusGrid:
        return TorusGrid(self.dim, nodes or self.nodes, self.period)

    def build_metric(self, grid: TorusGrid) -> MetricField:
        return MetricField(grid, self.descriptor)

    def build_measure(self, grid: TorusGrid) -> MeasureField:
        fn = parse_expression(self.f_expr, self.dim, self.period)
        return MeasureField(grid, fn(grid.coordinates()))

    def build_initial(self, grid: TorusGrid) -> ScalarField:
        fn = parse_expression(self.u0_expr, self.dim, self.period)
        return ScalarField(grid, fn(grid.coordinates()))

    def build_phi(self, grid: TorusGrid) -> ScalarField:
        fn = parse_expression(self.phi_expr, self.dim, self.period)
        return ScalarField(grid, fn(grid.coordinates()))


def config_hash(text: str) -> str:
    return hashlib.sha256(text.replace("\r\n", "\n").encode()).hexdigest()


def _parse_pairs(text: str):
    pairs = []
    for chunk in filter(None, (c.strip() for c in text.split(";"))):
        parts = chunk.split(",")
        if len(parts) != 4:
            raise ConfigError(f"harnack pair needs x1,t1,x2,t2: {chunk!r}")
        pairs.append(
            (int(parts[0]), float(parts[1]), int(parts[2]), float(parts[3]))
        )
    return tuple(pairs)


def _parse_ladder(text: str):
    levels = []
    for chunk in filter(None, (c.strip() for c in text.split(";"))):
        parts = chunk.split(",")
        if len(parts) != 2:
            raise ConfigError(f"ladder level needs nodes,dt: {chunk!r}")
        levels.append((int(parts[0]), float(parts[1])))
    for (n0, d0), (n1, d1) in zip(levels, levels[1:]):
        if n1 <= n0 or d1 > d0:
            raise ConfigError("ladder must refine: nodes up, dt not up")
    return tuple(levels)


def load_config(path: str) -> ExperimentConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    with open(path) as fh:
        text = fh.read()
    parser.read_string(text)
    if "grid" not in parser or "time" not in parser:
        raise ConfigError("config needs [grid] and [time] sections")
    grid_sec = parser["grid"]
    try:
        dim = grid_sec.getint("dim", 1)
        nodes = grid_sec.getint("nodes", 64)
        period = grid_sec.getfloat("period", 1.0)
    except ValueError as exc:
        raise ConfigError(f"bad [grid] value: {exc}") from exc
    if dim not in (1, 2):
        raise ConfigError("dim must be 1 or 2")
    if nodes < 8:
        raise ConfigError("need at least 8 nodes per axis")
    if period <= 0:
        raise ConfigError("period must be positive")

    metric_sec = parser["metric"] if "metric" in parser else {"family": "euclidean"}
    family = metric_sec.get("family", "euclidean").strip().lower()
    descriptor = _build_descriptor(dim, family, metric_sec)

    time_sec = parser["time"]
    try:
        dt = time_sec.getfloat("dt")
        t_final = time_sec.getfloat("t_final")
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"bad [time] value: {exc}") from exc
    if dt is None or t_final is None:
        raise ConfigError("[time] needs dt and t_final")
    if not 0.0 < dt <= t_final:
        raise ConfigError("need 0 < dt <= t_final")
    scheme = time_sec.get("scheme", "implicit_euler").strip()
    if scheme not in SCHEMES:
        raise ConfigError(f"scheme must be one of {SCHEMES}")

    checks_sec = parser["checks"] if "checks" in parser else {}
    names_raw = checks_sec.get("names", "").strip()
    checks = tuple(
        n.strip() for n in names_raw.split(",") if n.strip()
    ) if names_raw else ()
    for name in checks:
        if name not in KNOWN_CHECKS:
            raise ConfigError(f"unknown check {name!r}; known: {KNOWN_CHECKS}")
    n_text = str(checks_sec.get("N", "inf")).strip().lower()
    if n_text in ("inf", "infinity", "auto"):
        n_eff = math.inf
    else:
        n_eff = float(n_text)
        if n_eff < dim:
            raise ConfigError("effective dimension below the actual dimension")
    k_text = str(checks_sec.get("K", "auto")).strip().lower()
    k_val = None if k_text == "auto" else float(k_text)
    profile = str(checks_sec.get("profile", "quadratic")).strip()
    seed = int(str(checks_sec.get("seed", "1234")))
    n_fields = int(str(checks_sec.get("n_fields", "20")))
    s_time = float(str(checks_sec.get("s", "0.0")))
    phi_expr = str(checks_sec.get("phi", "1"))
    harnack_pairs = _parse_pairs(str(checks_sec.get("harnack_pairs", "")))
    harnack_mode = str(checks_sec.get("harnack_mode", "lf")).strip()
    if harnack_mode not in ("lf", "integral"):
        raise ConfigError("harnack_mode must be lf or integral")

    f_expr = parser["measure"].get("f", "0") if "measure" in parser else "0"
    u0_expr = parser["initial"].get("u", "1") if "initial" in parser else "1"
    out_dir = parser["output"].get("dir", "runs") if "output" in parser else "runs"
    ladder = (
        _parse_ladder(parser["ladder"].get("levels", ""))
        if "ladder" in parser
        else ()
    )

    # surface expression problems now, not at solve time
    for expr in (f_expr, u0_expr, phi_expr):
        parse_expression(expr, dim, period)

    return ExperimentConfig(
        dim=dim,
        nodes=nodes,
        period=period,
        family=family,
        descriptor=descriptor,
        f_expr=f_expr,
        u0_expr=u0_expr,
        dt=dt,
        t_final=t_final,
        scheme=scheme,
        checks=checks,
        N=n_eff,
        K=k_val,
        profile=profile,
        seed=seed,
        n_fields=n_fields,
        s_time=s_time,
        phi_expr=phi_expr,
        harnack_pairs=harnack_pairs,
        harnack_mode=harnack_mode,
        out_dir=out_dir,
        ladder=ladder,
        digest=config_hash(text),
    )
