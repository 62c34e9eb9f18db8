"""Reaction terms f, their primitives, and the alpha-regularized surrogates.

Two families are supported: finite power sums

    f(t) = sum_i a_i (t+)^(r_i - 1),

and the logarithmic family

    f(t) = d/dt ( (t+)^r log(a + t+) ).

All evaluators are vectorized over ``t`` and return numpy arrays (or floats
for scalar input).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

POWER_SUM = "power_sum"
LOG_TYPE = "log_type"

# pointwise tolerance used by all sign tests, relative to the size of the terms
_SIGN_RTOL = 1e-12


def critical_exponent(p: float, dimension: int) -> float:
    """Sobolev exponent p* = Np/(N-p), or +inf when N <= p."""
    if dimension > p:
        return dimension * p / (dimension - p)
    return math.inf


@dataclass(frozen=True)
class NonlinearitySpec:
    """An admissible reaction term together with its structural constants.

    ``terms`` holds ``(a_i, r_i)`` pairs for the power-sum family; ``r`` and
    ``shift`` parametrize the logarithmic family. The growth constant ``c``
    is derived on construction (see :func:`growth_constant`).
    """

    kind: str
    p: float
    q: float
    theta: float
    s: float
    dimension: int = 2
    terms: tuple[tuple[float, float], ...] = ()
    r: float | None = None
    shift: float | None = None
    c: float = field(init=False, compare=False)

    def __post_init__(self):
        p, q = self.p, self.q
        if not 1.0 < p < 2.0:
            raise ValueError(f"p must lie in (1, 2), got {p}")
        if self.dimension < 1:
            raise ValueError("dimension must be >= 1")
        pstar = critical_exponent(p, self.dimension)
        if not p < q < pstar:
            raise ValueError(f"need p < q < p* = {pstar}, got q = {q}")
        if not 0.0 < self.theta < 1.0 / p:
            raise ValueError(f"theta must lie in (0, 1/p), got {self.theta}")
        if not self.s > max(2.0, 2.0 * q - 1.0):
            raise ValueError(f"s must exceed max(2, 2q-1) = {max(2.0, 2 * q - 1)}")
        if self.kind == POWER_SUM:
            if not self.terms:
                raise ValueError("power_sum needs at least one term")
            exps = [r for _, r in self.terms]
            if any(a <= 0 for a, _ in self.terms):
                raise ValueError("power_sum coefficients must be positive")
            if any(b <= a for a, b in zip(exps, exps[1:])):
                raise ValueError("power_sum exponents must be strictly increasing")
            if exps[0] <= 1.0 or exps[-1] >= pstar:
                raise ValueError("power_sum exponents must lie in (1, p*)")
        elif self.kind == LOG_TYPE:
            if self.r is None or self.shift is None:
                raise ValueError("log_type needs r and shift")
            if not p < self.r < pstar:
                raise ValueError("log_type exponent r must lie in (p, p*)")
            if self.shift <= 0:
                raise ValueError("log_type shift must be positive")
        else:
            raise ValueError(f"unknown nonlinearity kind {self.kind!r}")
        object.__setattr__(self, "c", growth_constant(self))

    # -- constructors -------------------------------------------------------

    @classmethod
    def power_sum(cls, terms, p, q=None, theta=None, s=None, dimension=2):
        terms = tuple((float(a), float(r)) for a, r in terms)
        rmax = max(r for _, r in terms)
        q = rmax if q is None else float(q)
        # F <= theta t f(t) termwise needs theta >= 1/r for every exponent
        theta = 1.0 / min(r for _, r in terms) if theta is None else float(theta)
        s = default_s(q) if s is None else float(s)
        return cls(POWER_SUM, float(p), q, theta, s, int(dimension), terms=terms)

    @classmethod
    def homogeneous(cls, q, p, s=None, dimension=2):
        """f(t) = (t+)^(q-1)."""
        return cls.power_sum([(1.0, q)], p, q=q, s=s, dimension=dimension)

    @classmethod
    def log_type(cls, r, shift, p, q=None, theta=None, s=None, dimension=2):
        pstar = critical_exponent(p, dimension)
        if q is None:
            q = min(r + 0.5, 0.5 * (r + pstar)) if math.isfinite(pstar) else r + 0.5
        theta = 1.0 / r if theta is None else float(theta)
        s = default_s(q) if s is None else float(s)
        return cls(LOG_TYPE, float(p), float(q), theta, s, int(dimension),
                   r=float(r), shift=float(shift))

    # -- serialization ------------------------------------------------------

    @property
    def pstar(self) -> float:
        return critical_exponent(self.p, self.dimension)

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.kind == POWER_SUM:
            d["terms"] = [{"a": a, "r": r} for a, r in self.terms]
        else:
            d["r"] = self.r
            d["a"] = self.shift
        d.update(p=self.p, q=self.q, theta=self.theta, s=self.s, dimension=self.dimension)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NonlinearitySpec":
        kind = d["kind"]
        common = dict(p=float(d["p"]), q=float(d["q"]), theta=float(d["theta"]),
                      s=float(d["s"]), dimension=int(d.get("dimension", 2)))
        if kind == POWER_SUM:
            terms = tuple((float(t["a"]), float(t["r"])) for t in d["terms"])
            return cls(POWER_SUM, terms=terms, **common)
        if kind == LOG_TYPE:
            return cls(LOG_TYPE, r=float(d["r"]), shift=float(d["a"]), **common)
        raise ValueError(f"unknown nonlinearity kind {kind!r}")

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "NonlinearitySpec":
        return cls.from_dict(json.loads(text))


def default_s(q: float) -> float:
    return max(2.0, 2.0 * q - 1.0) + 1.0


def _out(x, like):
    return float(x) if np.ndim(like) == 0 else x


# -- f, F, f' ---------------------------------------------------------------

def eval_f(spec: NonlinearitySpec, t):
    tt = np.asarray(t, dtype=float)
    tp = np.maximum(tt, 0.0)
    if spec.kind == POWER_SUM:
        val = sum(a * tp ** (r - 1.0) for a, r in spec.terms)
    else:
        r, a = spec.r, spec.shift
        val = r * tp ** (r - 1.0) * np.log(a + tp) + tp ** r / (a + tp)
    return _out(np.asarray(val, dtype=float), t)


def eval_F(spec: NonlinearitySpec, t):
    tt = np.asarray(t, dtype=float)
    tp = np.maximum(tt, 0.0)
    if spec.kind == POWER_SUM:
        val = sum(a * tp ** r / r for a, r in spec.terms)
    else:
        val = tp ** spec.r * np.log(spec.shift + tp)
    return _out(np.asarray(val, dtype=float), t)


def _fprime_pos(spec: NonlinearitySpec, t: np.ndarray) -> np.ndarray:
    # exact derivative for t > 0
    if spec.kind == POWER_SUM:
        return sum(a * (r - 1.0) * t ** (r - 2.0) for a, r in spec.terms)
    r, a = spec.r, spec.shift
    return (r * (r - 1.0) * t ** (r - 2.0) * np.log(a + t)
            + 2.0 * r * t ** (r - 1.0) / (a + t) - t ** r / (a + t) ** 2)


def eval_fprime(spec: NonlinearitySpec, t):
    """Exact f'(t) for t != 0; f need not be differentiable at the origin."""
    tt = np.asarray(t, dtype=float)
    if np.any(tt == 0.0):
        raise ValueError("f' is not defined at t = 0 (f may fail to be C^1 there)")
    out = np.zeros_like(tt)
    pos = tt > 0
    out[pos] = _fprime_pos(spec, tt[pos])
    return _out(out, t)


# -- regularized surrogates -------------------------------------------------

def eval_G_alpha(p: float, alpha: float, t):
    tt = np.asarray(t, dtype=float)
    return _out((alpha + tt * tt) ** (p / 2.0) / p, t)


def eval_Gprime_alpha(p: float, alpha: float, t):
    """t (alpha + t^2)^((p-2)/2), continuously extended by 0 at alpha = t = 0."""
    tt = np.asarray(t, dtype=float)
    base = alpha + tt * tt
    with np.errstate(divide="ignore", invalid="ignore"):
        val = np.where(base > 0, tt * base ** ((p - 2.0) / 2.0), 0.0)
    return _out(val, t)


def eval_Gsecond_alpha(p: float, alpha: float, t):
    """(alpha + (p-1) t^2) (alpha + t^2)^((p-4)/2); unbounded at alpha = t = 0."""
    tt = np.asarray(t, dtype=float)
    base = alpha + tt * tt
    with np.errstate(divide="ignore"):
        val = (alpha + (p - 1.0) * tt * tt) * base ** ((p - 4.0) / 2.0)
    return _out(val, t)


def _smooth_arg(spec, alpha, tp):
    return (alpha + tp ** spec.s) ** (1.0 / spec.s)


def eval_F_alpha(spec: NonlinearitySpec, alpha: float, t):
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    if alpha == 0:
        return eval_F(spec, t)
    tp = np.maximum(np.asarray(t, dtype=float), 0.0)
    return _out(np.asarray(eval_F(spec, _smooth_arg(spec, alpha, tp))), t)


def eval_f_alpha(spec: NonlinearitySpec, alpha: float, t):
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    if alpha == 0:
        return eval_f(spec, t)
    s = spec.s
    tp = np.maximum(np.asarray(t, dtype=float), 0.0)
    w = _smooth_arg(spec, alpha, tp)
    val = np.asarray(eval_f(spec, w)) * tp ** (s - 1.0) * w ** (1.0 - s)
    return _out(val, t)


def fprime_alpha_terms(spec: NonlinearitySpec, alpha: float, t):
    """The two summands of F_alpha'' (alpha > 0): the f' part and the f part."""
    if alpha <= 0:
        raise ValueError("F_alpha'' is only available for alpha > 0")
    s = spec.s
    tp = np.maximum(np.asarray(t, dtype=float), 0.0)
    w = _smooth_arg(spec, alpha, tp)
    first = _fprime_pos(spec, w) * tp ** (2 * s - 2) * w ** (2 - 2 * s)
    second = np.asarray(eval_f(spec, w)) * alpha * (s - 1) * tp ** (s - 2) * w ** (1 - 2 * s)
    return _out(first, t), _out(second, t)


def eval_fprime_alpha(spec: NonlinearitySpec, alpha: float, t):
    """Second derivative of F_alpha, defined for alpha > 0."""
    first, second = fprime_alpha_terms(spec, alpha, t)
    return first + second


# -- constants --------------------------------------------------------------

def growth_constant(spec: NonlinearitySpec, grid=None) -> float:
    """Smallest grid-certified c in the three growth bounds, doubled.

    The bounds are t f'(t) <= (p-1)/2 t^(p-1) + c t^(q-1),
    f(t) <= t^(p-1)/2 + c t^(q-1) and F(t) <= t^p/(2p) + c t^q.
    """
    p, q = spec.p, spec.q
    t = np.logspace(-8, 8, 2001) if grid is None else np.asarray(grid, dtype=float)
    f = np.asarray(eval_f(spec, t))
    F = np.asarray(eval_F(spec, t))
    tf1 = t * _fprime_pos(spec, t)
    ratios = (
        (tf1 - 0.5 * (p - 1.0) * t ** (p - 1.0)) / t ** (q - 1.0),
        (f - 0.5 * t ** (p - 1.0)) / t ** (q - 1.0),
        (F - t ** p / (2.0 * p)) / t ** q,
    )
    worst = max(float(np.max(r)) for r in ratios)
    return 2.0 * max(worst, 0.0) or 1e-12


# -- assumption and approximation checks ------------------------------------

@dataclass
class CheckResult:
    name: str
    passed: bool
    slack: float
    witness: float | None = None
    detail: str = ""

    def to_dict(self):
        return {"name": self.name, "passed": self.passed, "slack": self.slack,
                "witness": self.witness, "detail": self.detail}


@dataclass
class AssumptionReport:
    results: dict[str, CheckResult]

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results.values())

    def __getitem__(self, key) -> CheckResult:
        return self.results[key]

    def to_dict(self):
        return {"passed": self.passed, "results": {k: v.to_dict() for k, v in self.results.items()}}


def _first_violation(bad, t):
    idx = np.flatnonzero(bad)
    return float(t[idx[0]]) if idx.size else None


def check_assumptions(spec: NonlinearitySpec, grid) -> AssumptionReport:
    """Pointwise check of (f1)-(f5) on a positive grid.

    (f1) is tested non-strictly at the stored q: if d/dt f/t^(q-1) <= 0 then
    f/t^(q'-1) is strictly decreasing for every q' in (q, p*), which is what
    the assumption asks for. (f3) has no such freedom and is tested strictly.
    """
    t = np.asarray(grid, dtype=float)
    if t.size == 0:
        raise ValueError("grid must be nonempty")
    if np.any(t <= 0) or np.any(np.diff(t) <= 0):
        raise ValueError("grid must be strictly positive and increasing")
    p, q, theta = spec.p, spec.q, spec.theta
    f = np.asarray(eval_f(spec, t))
    F = np.asarray(eval_F(spec, t))
    tfp = t * _fprime_pos(spec, t)
    res = {}

    # slacks below are reported relative to the size of the compared terms
    scale = np.abs(tfp) + (q - 1.0) * np.abs(f)
    d1 = tfp - (q - 1.0) * f
    bad = d1 > _SIGN_RTOL * scale
    res["f1"] = CheckResult("f1", not bad.any(), float(np.min(-d1 / scale)),
                            _first_violation(bad, t),
                            "sign of t f' - (q-1) f; nonpositive on grid")

    scale = np.abs(F) + theta * t * np.abs(f)
    d2 = theta * t * f - F
    bad = d2 < -_SIGN_RTOL * scale
    res["f2"] = CheckResult("f2", not bad.any(), float(np.min(d2 / scale)), _first_violation(bad, t),
                            "theta t f(t) - F(t) >= 0")

    scale = np.abs(tfp) + (p - 1.0) * np.abs(f)
    d3 = tfp - (p - 1.0) * f
    bad = d3 <= _SIGN_RTOL * scale
    res["f3"] = CheckResult("f3", not bad.any(), float(np.min(d3 / scale)), _first_violation(bad, t),
                            "sign of t f' - (p-1) f; strictly positive on grid")

    tail = 10.0 ** -np.arange(1, 9)
    g = np.abs(tail ** (2.0 - p) * _fprime_pos(spec, tail))
    decreasing = bool(np.all(np.diff(g) < 0))
    slope = float(np.log10(g[-2] / g[-1])) if g[-1] > 0 else math.inf
    ok4 = decreasing and slope > 1e-3
    res["f4"] = CheckResult("f4", ok4, slope, None if ok4 else float(tail[-1]),
                            "t^(2-p) f'(t) decreases to 0 along t = 10^-k, k = 1..8")

    fneg = np.asarray(eval_f(spec, -t))
    bad = fneg != 0.0
    res["f5"] = CheckResult("f5", not bad.any(), -float(np.max(np.abs(fneg))),
                            None if not bad.any() else -float(t[np.flatnonzero(bad)[0]]),
                            "f(t) = 0 for t < 0")
    return AssumptionReport(res)


@dataclass
class BoundReport:
    alpha: float
    results: dict[str, CheckResult]
    tol: float = 1e-12

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results.values())

    def to_dict(self):
        return {"alpha": self.alpha, "tol": self.tol, "passed": self.passed,
                "results": {k: v.to_dict() for k, v in self.results.items()}}


def verify_approx_bounds(spec: NonlinearitySpec, alpha: float, tgrid, tol: float = 1e-12,
                         assumption_grid=None) -> BoundReport:
    """Minimal slack of the four closeness bounds between the regularized and
    exact kernels over ``tgrid``."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    grid = np.logspace(-6, 6, 241) if assumption_grid is None else assumption_grid
    rep = check_assumptions(spec, grid)
    if not rep.passed:
        failed = [k for k, v in rep.results.items() if not v.passed]
        raise ValueError(f"nonlinearity fails assumptions {failed}; bounds do not apply")
    p, s = spec.p, spec.s
    t = np.asarray(tgrid, dtype=float)
    a_s = alpha ** (1.0 / s)
    out = {}

    def record(name, lhs, bound, mask=None):
        slack = bound - lhs
        if mask is not None:
            slack = slack[mask]
            tt = t[mask]
        else:
            tt = t
        i = int(np.argmin(slack))
        out[name] = CheckResult(name, bool(slack[i] >= -tol), float(slack[i]), float(tt[i]))

    G0 = np.asarray(eval_G_alpha(p, 0.0, t))
    Ga = np.asarray(eval_G_alpha(p, alpha, t))
    record("ga", np.abs(Ga - G0), np.full_like(t, alpha ** (p / 2.0) / p))

    dG0 = np.sign(t) * np.abs(t) ** (p - 1.0)
    dGa = np.asarray(eval_Gprime_alpha(p, alpha, t))
    if p <= 1.5:
        bound = np.full_like(t, alpha ** ((p - 1.0) / 2.0))
    else:
        with np.errstate(divide="ignore"):
            bound = alpha ** ((2.0 - p) / 2.0) * np.abs(t) ** (2.0 * p - 3.0)
    record("g1a", np.abs(dG0 - dGa), bound)

    Fa = np.asarray(eval_F_alpha(spec, alpha, t))
    F = np.asarray(eval_F(spec, t))
    record("fa", np.abs(Fa - F), a_s * np.asarray(eval_f(spec, np.abs(t) + a_s)))

    fa = np.asarray(eval_f_alpha(spec, alpha, t))
    f = np.asarray(eval_f(spec, t))
    record("f1a", np.abs(f - fa), np.full_like(t, eval_f(spec, a_s)), mask=t >= 0)
    return BoundReport(alpha, out, tol)


def k_transform(spec: NonlinearitySpec, t):
    """k(t) = t^((s-1)/s) / f(t^(1/s)), the auxiliary map behind the f' bound."""
    tt = np.asarray(t, dtype=float)
    s = spec.s
    return _out(tt ** ((s - 1.0) / s) / np.asarray(eval_f(spec, tt ** (1.0 / s))), t)
