"""Sampled verification of the structural inequalities behind the
compactness arguments: the (S)+ estimates for the regularized operator and
the coercivity estimate used for Palais-Smale sequences."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from ..energy import ProblemParams, energy, gradient
from ..mesh import DomainSpec, build_mesh, norm_eps
from ..nonlinearity import (
    POWER_SUM,
    eval_F_alpha,
    eval_f,
    eval_f_alpha,
    eval_Gprime_alpha,
)


@dataclass
class Check:
    name: str
    min_slack: float
    samples: int
    passed: bool
    witness: list | None = None
    constants: dict = field(default_factory=dict)

    def to_dict(self):
        return {"name": self.name, "min_slack": self.min_slack, "samples": self.samples,
                "passed": self.passed, "witness": self.witness, "constants": self.constants}


@dataclass
class CertificateReport:
    kind: str
    p: float
    alpha: float
    eps: float
    checks: dict

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks.values())

    def __getitem__(self, key) -> Check:
        return self.checks[key]

    def to_dict(self):
        return {"kind": self.kind, "p": self.p, "alpha": self.alpha, "eps": self.eps,
                "passed": self.passed, "checks": {k: c.to_dict() for k, c in self.checks.items()}}


def _check(name, slack, witnesses, tol=0.0, strict=False, constants=None):
    slack = np.asarray(slack, dtype=float)
    i = int(np.argmin(slack))
    m = float(slack[i])
    ok = m > tol if strict else m >= tol
    w = np.asarray(witnesses[i]).tolist() if witnesses is not None else None
    return Check(name, m, int(slack.size), bool(ok), w, constants or {})


def gamma_alpha(p: float, alpha: float) -> float:
    """Threshold above which the regularized flux dominates half the p-flux."""
    return math.sqrt(alpha / (2.0 ** (2.0 / (2.0 - p)) - 1.0))


def flux(xi: np.ndarray, p: float, alpha: float, eps: float) -> np.ndarray:
    """eps^p xi (alpha + |xi|^2)^((p-2)/2), zero at xi = 0 when alpha = 0."""
    n2 = np.sum(xi * xi, axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        coef = np.where(alpha + n2 > 0, (alpha + n2) ** ((p - 2.0) / 2.0), 0.0)
    return eps ** p * coef[..., None] * xi


def b_alpha(spec, alpha, s):
    return np.asarray(eval_Gprime_alpha(spec.p, alpha, s)) - np.asarray(eval_f_alpha(spec, alpha, s))


def u2_constant(spec) -> float:
    """C with |b_alpha(s)| <= C (1 + |s|^(p*-1)) for all alpha in [0, 1].

    Uses |b| <= |s|^(p-1) + f(1 + |s|). For power sums the bound is explicit;
    for the logarithmic family the sup of f(1+x)/(1+x^(p*-1)) is taken on a
    wide grid and doubled.
    """
    ps = spec.pstar
    if spec.kind == POWER_SUM:
        # (1+x)^k <= max(1, 2^(k-1)) (1 + x^k) and x^k <= 1 + x^(p*-1) for k < p*-1
        return 1.0 + 2.0 * sum(a * max(1.0, 2.0 ** (r - 2.0)) for a, r in spec.terms)
    x = np.logspace(-8, 8, 4001)
    ratio = np.asarray(eval_f(spec, 1.0 + x)) / (1.0 + x ** (ps - 1.0))
    return 1.0 + 2.0 * float(np.max(ratio))


def u4_constant(spec) -> float:
    """c1 with |t b_alpha(t)| <= c1 (1 + |t|^p + |t|^q) for all alpha in [0, 1].

    From |t G'_alpha(t)| <= |t|^p and t f_alpha(t) <= t^2 f(w)/w with
    t <= w <= t + 1, combined with f(w) <= w^(p-1)/2 + c w^(q-1).
    """
    q = spec.q
    K = 2.0 * max(1.0, 2.0 ** (q - 3.0)) if q > 2 else 1.0
    return 1.5 + spec.c * K


def c_delta(spec, delta: float, c1: float) -> float:
    """min over t >= 0 of delta t^(p*) - c1 (1 + t^p + t^q)."""
    p, q, ps = spec.p, spec.q, spec.pstar

    def g(t):
        return delta * t ** ps - c1 * (1.0 + t ** p + t ** q)

    # the minimizer lies below the point where delta t^(p*) = 3 c1 max(1, t^q)
    hi = max(1.0, (3.0 * c1 / delta) ** (1.0 / (ps - q)), (3.0 * c1 / delta) ** (1.0 / ps))
    grid = np.linspace(0.0, hi, 4001)
    vals = g(grid)
    j = int(np.argmin(vals))
    lo_t, hi_t = grid[max(j - 1, 0)], grid[min(j + 1, grid.size - 1)]
    res = minimize_scalar(g, bounds=(lo_t, hi_t), method="bounded",
                          options={"xatol": 1e-12 * max(hi_t, 1.0)})
    return float(min(res.fun, vals[j]))


def _sample_vectors(rng, n, dim=2, lo=-6.0, hi=6.0):
    mag = 10.0 ** rng.uniform(lo, hi, n)
    d = rng.standard_normal((n, dim))
    d /= np.linalg.norm(d, axis=1)[:, None]
    return mag[:, None] * d


def verify_splus(params: ProblemParams, sample_count: int = 10_000, seed: int = 0,
                 deltas=(1e-3, 1e-1, 1.0, 10.0)) -> CertificateReport:
    """Sampled check of the five (S)+ estimates with explicit constants."""
    spec, p, a, eps = params.spec, params.p, params.alpha, params.eps
    if not 0.0 <= a <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    n = int(sample_count)
    xi = _sample_vectors(rng, n)
    eta = _sample_vectors(rng, n)
    s = np.concatenate([-(10.0 ** rng.uniform(-6, 4, n // 2)), 10.0 ** rng.uniform(-6, 4, n - n // 2)])
    checks = {}

    fx = flux(xi, p, a, eps)
    nxi = np.linalg.norm(xi, axis=1)
    lhs = np.linalg.norm(fx, axis=1)
    rhs = eps ** p * nxi ** (p - 1.0)
    checks["u1"] = _check("u1", (rhs - lhs) / rhs, xi, tol=-1e-12)

    C2 = u2_constant(spec)
    b = b_alpha(spec, a, s)
    rhs2 = C2 * (1.0 + np.abs(s) ** (spec.pstar - 1.0))
    checks["u2"] = _check("u2", (rhs2 - np.abs(b)) / rhs2, s[:, None], constants={"C": C2})

    g1 = gamma_alpha(p, 1.0)
    C3 = 0.5 * eps ** p * g1 ** p
    lhs3 = np.sum(fx * xi, axis=1)
    rhs3 = 0.5 * eps ** p * nxi ** p - C3
    scale3 = np.maximum(np.abs(lhs3), np.abs(rhs3)) + C3
    checks["u3"] = _check("u3", (lhs3 - rhs3) / scale3, xi, tol=-1e-12,
                          constants={"C": C3, "gamma_1": g1, "gamma_alpha": gamma_alpha(p, a)})

    c1 = u4_constant(spec)
    worst, wit, consts = math.inf, None, {"c1": c1}
    for delta in deltas:
        cd = c_delta(spec, delta, c1)
        consts[f"c({delta:g})"] = cd
        lhs4 = b * s
        rhs4 = -delta * np.abs(s) ** spec.pstar + cd
        sl = (lhs4 - rhs4) / (np.abs(lhs4) + np.abs(rhs4) + 1.0)
        j = int(np.argmin(sl))
        if sl[j] < worst:
            worst, wit = float(sl[j]), [float(s[j]), delta]
    checks["u4"] = Check("u4", worst, n * len(deltas), worst >= -1e-12, wit, consts)

    fe = flux(eta, p, a, eps)
    mono = np.sum((fx - fe) * (xi - eta), axis=1)
    checks["u5"] = _check("u5", mono, np.hstack([xi, eta]), strict=True)
    return CertificateReport("splus", p, a, eps, checks)


def random_fields(mesh, count: int, rng, amplitude: float = 3.0):
    """Smooth random fields vanishing on the boundary: sums of a few bumps."""
    inside = mesh.nodes[mesh.interior]
    out = []
    for _ in range(count):
        u = np.zeros(mesh.n_nodes)
        for _ in range(int(rng.integers(1, 4))):
            c = inside[rng.integers(len(inside))]
            w = rng.uniform(0.1, 0.5)
            x = mesh.nodes - c
            u += rng.uniform(-0.5, 1.0) * amplitude * np.exp(-np.sum(x * x, axis=1) / (2 * w * w))
        u += 0.05 * amplitude * rng.standard_normal(mesh.n_nodes)
        u[mesh.boundary] = 0.0
        out.append(u)
    return out


def lp_norm(mesh, v, r: float) -> float:
    fem = mesh.fem
    return float(np.sum(fem.qweights * np.abs(fem.at_qp(v)) ** r)) ** (1.0 / r)


def verify_ps(params: ProblemParams, sample_count: int = 50, seed: int = 0, mesh=None,
              grid=None, tol: float = 1e-10) -> CertificateReport:
    """Pointwise F_alpha estimate on a grid and the coercivity estimate on fields.

    With a forcing h the constant c1 is the quadrature L^(p') norm of h,
    which bounds int h u by c1 ||u||_eps through Hoelder's inequality.
    """
    spec, p, a, eps = params.spec, params.p, params.alpha, params.eps
    theta, s = spec.theta, spec.s
    t = np.linspace(-10.0, 10.0, 2001) if grid is None else np.asarray(grid, dtype=float)
    shift = a ** (1.0 / s) if a > 0 else 0.0
    bound = theta * shift * float(eval_f(spec, shift)) if a > 0 else 0.0
    lhs = np.asarray(eval_F_alpha(spec, a, t)) - theta * np.asarray(eval_f_alpha(spec, a, t)) * t
    checks = {"F_theta": _check("F_theta", bound - lhs, t[:, None], tol=-1e-12,
                                constants={"bound": bound})}

    if mesh is None:
        mesh = build_mesh(DomainSpec.disk(1.0), 0.2)
    rng = np.random.default_rng(seed)
    if params.h is not None:
        c1 = lp_norm(mesh, params.h, p / (p - 1.0))
    else:
        c1 = 0.0
    area = float(np.sum(mesh.fem.volume))
    slacks, wits = [], []
    for k, u in enumerate(random_fields(mesh, sample_count, rng)):
        nu = norm_eps(mesh, u, p, eps)
        J = energy(mesh, u, params)
        pair = float(gradient(mesh, u, params) @ u)
        rhs = J - theta * pair + bound * area + (1.0 - theta) * c1 * nu
        slacks.append(rhs - (1.0 / p - theta) * nu ** p)
        wits.append([k])
    checks["coercivity"] = _check("coercivity", slacks, wits, tol=-tol, constants={"c1": c1})
    return CertificateReport("ps", p, a, eps, checks)
