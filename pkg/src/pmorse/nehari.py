"""Nehari scaling, projection, and constrained minimization."""
from __future__ import annotations

import math

import numpy as np
import scipy.optimize as so
import scipy.sparse.linalg as spla

from .energy import ProblemParams, A_eps, energy, gradient, sobolev_ratio, values_of
from .mesh import DomainSpec, Mesh, build_mesh, norm_eps
from .morse import second_variation
from .nonlinearity import eval_f, growth_constant
from .records import BUDGET, CONVERGED, SolutionRecord

TOL_RES = 1e-8
POSITIVE_TERMS = ("gradient", "gradient_rank_one", "mass")
HESSIAN_FLOOR = 1e-60


class NehariInfeasible(ValueError):
    """Raised when a direction has no positive part, so no scaling exists."""


def _check_unforced(params: ProblemParams):
    if params.alpha != 0 or params.h is not None:
        raise ValueError("the Nehari constraint is defined for alpha = 0 and h = 0")


def nehari_scale(mesh: Mesh, v, params: ProblemParams) -> float:
    """The unique t > 0 with A_eps(t v) = 0."""
    _check_unforced(params)
    v = values_of(v)
    fem = mesh.fem
    vq = fem.at_qp(v)
    pos = vq > 0
    if not np.any(pos):
        raise NehariInfeasible("direction has no positive part")
    w = fem.qweights[pos]
    vp = vq[pos]
    p = params.p
    npow = norm_eps(mesh, v, p, params.eps) ** p

    # A(tv) / t^p = ||v||^p - t^(1-p) int f(t v) v, increasing-to-decreasing in t
    def phi(logt):
        t = math.exp(logt)
        return npow - t ** (1.0 - p) * float(np.sum(w * np.asarray(eval_f(params.spec, t * vp)) * vp))

    lo, hi = 0.0, 0.0
    while phi(lo) <= 0:
        lo -= 2.0
        if lo < -700:
            raise NehariInfeasible("no sign change near zero")
    while phi(hi) >= 0:
        hi += 2.0
        if hi > 700:
            raise NehariInfeasible("no sign change at large scale")
    return math.exp(so.brentq(phi, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200))


def project(mesh: Mesh, v, params: ProblemParams) -> np.ndarray:
    v = values_of(v)
    return nehari_scale(mesh, v, params) * v


def energy_floor(spec, eps, sobolev: float) -> float:
    """max_t (t^p/(2p) - c_eps t^q) with c_eps = c * sobolev."""
    p, q = spec.p, spec.q
    c_eps = growth_constant(spec) * sobolev
    t = (1.0 / (2.0 * c_eps * q)) ** (1.0 / (q - p))
    return t ** p / (2.0 * p) - c_eps * t ** q


def norm_floor(spec, sobolev: float) -> float:
    """Lower bound (1/(2 c_eps))^(1/(q-p)) for the norm of Nehari points."""
    c_eps = growth_constant(spec) * sobolev
    return (1.0 / (2.0 * c_eps)) ** (1.0 / (spec.q - spec.p))


def homogeneous_step(u: np.ndarray, du: np.ndarray, p: float):
    """Map a linearized step du through the variable w = sign(u)|u|^(p-1).

    In w the absorption term sign(u)|u|^(p-1) is linear, so Newton does not
    overshoot through zero on nodes where u is tiny. Returns lam -> u(lam).
    """
    k = 1.0 / (p - 1.0)
    w = np.sign(u) * np.abs(u) ** (p - 1.0)
    dphi = k * np.abs(w) ** (k - 1.0)
    # nodes far below the amplitude keep the plain linear step
    tiny = np.abs(u) <= 1e-10 * max(float(np.max(np.abs(u))), 1e-300)
    dw = np.where(tiny, 0.0, du / np.where(tiny, 1.0, dphi))

    def at(lam):
        wn = w + lam * dw
        out = np.sign(wn) * np.abs(wn) ** k
        lin = u[tiny] + lam * du[tiny]
        # tail values are far below what the residual resolves; a linear
        # step that would cross zero halves the value instead
        flip = lin * u[tiny] < 0
        out[tiny] = np.where(flip, 0.5 * u[tiny], lin)
        return out

    return at


def newton_polish(mesh: Mesh, u, params: ProblemParams, budget: int = 40,
                  tol_res: float = TOL_RES, floor: float = HESSIAN_FLOOR, reproject: bool = False):
    """Newton iteration for the alpha = 0 gradient with a floored Jacobian.

    Steps are applied in the homogeneous variable (see homogeneous_step) and
    damped by backtracking on the residual norm. Returns (u, residual trace).
    """
    fem = mesh.fem
    u = values_of(u).copy()
    r = fem.dual_norm(gradient(mesh, u, params)[mesh.interior])
    trace = [r]
    for _ in range(budget):
        if r <= tol_res:
            break
        g = gradient(mesh, u, params)[mesh.interior]
        H = second_variation(mesh, u, params, floor=floor)
        try:
            step = spla.splu(H.tocsc()).solve(-g)
        except RuntimeError:
            step = -fem.stiffness_solver.solve(g)
        path = homogeneous_step(u[mesh.interior], step, params.p)
        lam = 1.0
        while lam > 1e-6:
            cand = fem.extend(path(lam))
            if reproject:
                try:
                    cand = project(mesh, cand, params)
                except NehariInfeasible:
                    lam *= 0.5
                    continue
            rc = fem.dual_norm(gradient(mesh, cand, params)[mesh.interior])
            if rc < (1 - 1e-4 * lam) * r:
                break
            lam *= 0.5
        else:
            break
        u, r = cand, rc
        trace.append(r)
    return u, trace


def minimize_on_nehari(mesh: Mesh, params: ProblemParams, init, budget: int = 400,
                       tol_res: float = TOL_RES, switch_res: float = 1e-3) -> SolutionRecord:
    """Minimize the energy over the Nehari set starting from ``init``.

    Descent phase: Armijo line search along the gradient preconditioned by
    the positive part of the floored second variation (p-Laplace and
    absorption kernels), with steps mapped through the homogeneous variable
    and projected back onto the constraint. Once the residual drops below
    ``switch_res`` a Newton polish is attempted; if it fails, descent resumes
    with a tenfold smaller switch level.
    """
    _check_unforced(params)
    fem = mesh.fem
    u = project(mesh, init, params)
    E = energy(mesh, u, params)

    def direction(u):
        g = gradient(mesh, u, params)[mesh.interior]
        P = second_variation(mesh, u, params, terms=POSITIVE_TERMS, floor=HESSIAN_FLOOR)
        return -spla.splu(P.tocsc()).solve(g), fem.dual_norm(g), g

    d, r, g = direction(u)
    trace = [r]
    tau = 1.0
    it = 0
    while it < budget and r > tol_res:
        if r <= switch_res:
            un, tr = newton_polish(mesh, u, params, budget=min(30, budget - it), tol_res=tol_res,
                                   reproject=True)
            it += len(tr) - 1
            trace.extend(tr[1:])
            if tr[-1] <= tol_res:
                u, r = un, tr[-1]
                break
            if tr[-1] < r:
                u = un
                E = energy(mesh, u, params)
                d, r, g = direction(u)
            switch_res *= 0.1
            continue
        it += 1
        path = homogeneous_step(u[mesh.interior], d, params.p)
        while True:
            try:
                cand = project(mesh, fem.extend(path(tau)), params)
                Ec = energy(mesh, cand, params)
            except NehariInfeasible:
                Ec = np.inf
            if Ec <= E + 1e-4 * tau * (g @ d) or tau < 1e-12:
                break
            tau *= 0.5
        if not np.isfinite(Ec) or Ec > E:
            break
        u, E = cand, Ec
        d, r, g = direction(u)
        trace.append(r)
        tau = min(2.0 * tau, 1.0)
    status = CONVERGED if r <= tol_res else BUDGET
    return SolutionRecord(u, energy(mesh, u, params), r, A_eps(mesh, u, params), it, status,
                          alpha=0.0, trace=trace)


def bump(mesh: Mesh, center, width: float, amplitude: float = 1.0) -> np.ndarray:
    """Gaussian bump vanishing on the Dirichlet nodes."""
    x = mesh.nodes - np.asarray(center, dtype=float)[: mesh.dim]
    u = amplitude * np.exp(-np.sum(x * x, axis=1) / (2.0 * width ** 2))
    u[mesh.boundary] = 0.0
    return u


def m_of_ball(params: ProblemParams, r: float, h: float, center=(0.0, 0.0),
              budget: int = 400) -> SolutionRecord:
    """Nehari minimum on a fresh disk mesh of radius ``r``."""
    if not r > 0:
        raise ValueError("radius must be positive")
    mesh = build_mesh(DomainSpec.disk(r, center), h)
    init = bump(mesh, center, max(params.eps, 0.25 * r))
    rec = minimize_on_nehari(mesh, params, init, budget=budget)
    rec.meta["mesh"] = mesh
    return rec


def nehari_floors(mesh: Mesh, params: ProblemParams, fields) -> dict:
    """Empirical embedding ratio over ``fields`` and the derived floors."""
    S = max(sobolev_ratio(mesh, u, params.p, params.spec.q, params.eps) for u in fields)
    return {"sobolev": S, "K_eps": energy_floor(params.spec, params.eps, S),
            "sigma": norm_floor(params.spec, S)}
