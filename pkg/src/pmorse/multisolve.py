"""Deflated Newton search, continuation in alpha, and the forced-problem study."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .energy import A_eps, ProblemParams, energy, gradient, sobolev_ratio, values_of
from .mesh import DiscreteField, Mesh, c1_norm, norm_eps
from .morse import nondegeneracy_certificate, second_variation
from .nehari import (
    HESSIAN_FLOOR,
    TOL_RES,
    bump,
    homogeneous_step,
    minimize_on_nehari,
    nehari_scale,
    norm_floor,
)
from .records import BUDGET, CONVERGED, STALLED, SolutionRecord


# -- Newton -----------------------------------------------------------------

class Deflation:
    """M(u) = prod_j (||u - u_j||^-power + shift) in the H^1_0 seminorm."""

    def __init__(self, mesh: Mesh, roots=(), power: float = 2.0, shift: float = 1.0):
        self.mesh = mesh
        self.power = power
        self.shift = shift
        self.roots = [values_of(r)[mesh.interior].copy() for r in roots]

    def add(self, u):
        self.roots.append(values_of(u)[self.mesh.interior].copy())

    def __len__(self):
        return len(self.roots)

    def factor(self, ui: np.ndarray) -> float:
        S = self.mesh.fem.stiffness
        out = 1.0
        for r in self.roots:
            d = ui - r
            n2 = float(d @ (S @ d))
            out *= n2 ** (-self.power / 2.0) + self.shift if n2 > 0 else np.inf
        return out

    def grad_log(self, ui: np.ndarray) -> np.ndarray:
        S = self.mesh.fem.stiffness
        out = np.zeros_like(ui)
        for r in self.roots:
            d = ui - r
            n2 = float(d @ (S @ d))
            a = n2 ** (-self.power / 2.0)
            out += -self.power * a / (n2 * (a + self.shift)) * (S @ d)
        return out


def _jacobian(mesh, u, params):
    if params.alpha > 0:
        return second_variation(mesh, u, params)
    return second_variation(mesh, u, params, floor=HESSIAN_FLOOR)


LM_SHIFTS = (1e-8, 1e-6, 1e-4, 1e-2, 1.0)
# stop when the merit has dropped by less than 1% over this many iterations
STALL_WINDOW = 10
STALL_FACTOR = 0.99


def _line_search(path, merit, phi, lam_min):
    lam = 1.0
    while lam >= lam_min:
        cand = path(lam)
        rc, phic, gc = merit(cand)
        if np.isfinite(phic) and phic < (1.0 - 1e-4 * lam) * phi:
            return True, cand, rc, phic, gc
        lam *= 0.5
    return False, None, None, None, None


def _lm_step(J, S, g, mu):
    """Minimizer of |g + J d|^2_{S^-1} + mu |d|^2_S, via the bordered system
    [[S, -J], [J, mu S]] [w; d] = [g; 0]."""
    n = S.shape[0]
    K = sp.bmat([[S, -J], [J, mu * S]]).tocsc()
    sol = spla.splu(K).solve(np.concatenate([g, np.zeros(n)]))
    return sol[n:]


def newton_solve(mesh: Mesh, u0, params: ProblemParams, budget: int = 50,
                 tol_res: float = TOL_RES, deflation: Deflation | None = None,
                 max_step: float | None = None) -> SolutionRecord:
    """Damped Newton for J'(u) = 0, optionally deflated.

    At alpha = 0 the Jacobian is the floored second variation and steps are
    applied in the homogeneous variable. Line search: backtracking on the
    (deflated) residual norm. A singular Jacobian falls back to a
    preconditioned gradient step.
    """
    fem = mesh.fem
    u = values_of(u0).copy()
    u[mesh.boundary] = 0.0

    def merit(ui):
        g = gradient(mesh, fem.extend(ui), params)[mesh.interior]
        r = fem.dual_norm(g)
        return r, (r * deflation.factor(ui) if deflation is not None and len(deflation) else r), g

    ui = u[mesh.interior]
    r, phi, g = merit(ui)
    trace = [r]
    merits = [phi]
    status = BUDGET
    it = 0
    for it in range(1, budget + 1):
        if r <= tol_res:
            status = CONVERGED
            it -= 1
            break
        try:
            lu = spla.splu(_jacobian(mesh, fem.extend(ui), params).tocsc())
            step = lu.solve(-g)
            if not np.all(np.isfinite(step)):
                raise RuntimeError("singular")
        except RuntimeError:
            step = -fem.stiffness_solver.solve(g)
        if deflation is not None and len(deflation):
            denom = 1.0 - float(deflation.grad_log(ui) @ step)
            if denom > 1e-8:
                step = step / denom
        if max_step is not None:
            n = float(np.max(np.abs(step)))
            if n > max_step:
                step *= max_step / n
        def make_path(step, ui=ui):
            if params.alpha == 0:
                return homogeneous_step(ui, step, params.p)
            return lambda lam: ui + lam * step

        accepted, cand, rc, phic, gc = _line_search(make_path(step), merit, phi, 1e-8)
        if not accepted and phi <= 2.0 * r:
            # near-singular Jacobian: Levenberg-Marquardt steps on the residual norm.
            # Skipped when the deflation factor exceeds 2: the iterate is then
            # close to a known root and is being pushed away from it.
            J = _jacobian(mesh, fem.extend(ui), params)
            for mu in LM_SHIFTS:
                lm = _lm_step(J, fem.stiffness, g, mu)
                accepted, cand, rc, phic, gc = _line_search(make_path(lm), merit, phi, 1e-3)
                if accepted:
                    break
        if not accepted:
            status = STALLED
            break
        ui, r, phi, g = cand, rc, phic, gc
        trace.append(r)
        merits.append(phi)
        if len(merits) > STALL_WINDOW and phi > STALL_FACTOR * merits[-1 - STALL_WINDOW]:
            status = STALLED
            break
    else:
        if r <= tol_res:
            status = CONVERGED
    u = fem.extend(ui)
    return SolutionRecord(u, energy(mesh, u, params), r, A_eps(mesh, u, params), it, status,
                          alpha=params.alpha, trace=trace)


# -- solution sets ----------------------------------------------------------

def linf_distance(a, b) -> float:
    return float(np.max(np.abs(values_of(a) - values_of(b))))


@dataclass
class SolutionSet:
    solutions: list = field(default_factory=list)
    trivial: np.ndarray | None = None
    distinct_rel: float = 1e-3
    attempts: int = 0

    def __len__(self):
        return len(self.solutions)

    def __iter__(self):
        return iter(self.solutions)

    def distinct_tol(self, u) -> float:
        amp = max([float(np.max(np.abs(s.u))) for s in self.solutions] + [float(np.max(np.abs(u)))])
        return self.distinct_rel * amp

    def is_new(self, u) -> bool:
        tol = self.distinct_tol(u)
        return all(linf_distance(u, s.u) > tol for s in self.solutions)

    def min_pairwise_distance(self) -> float:
        d = [linf_distance(a.u, b.u) for i, a in enumerate(self.solutions)
             for b in self.solutions[i + 1:]]
        return min(d) if d else math.inf

    def energies(self):
        return [s.energy for s in self.solutions]


def is_nontrivial(mesh: Mesh, u, params: ProblemParams, trivial=None) -> bool:
    """Norm floor test: ||u - u_triv||_eps above half the Nehari norm bound."""
    u = values_of(u)
    base = np.zeros_like(u) if trivial is None else values_of(trivial)
    d = u - base
    if float(np.max(d)) <= 0:
        return False
    S = sobolev_ratio(mesh, d, params.p, params.spec.q, params.eps)
    if S == 0:
        return False
    return norm_eps(mesh, d, params.p, params.eps) >= 0.5 * norm_floor(params.spec, S)


def trivial_solution(mesh: Mesh, params: ProblemParams, budget: int = 50) -> np.ndarray:
    """The critical point on the trivial branch: 0 without forcing, else Newton from 0."""
    if params.h is None:
        return np.zeros(mesh.n_nodes)
    rec = newton_solve(mesh, np.zeros(mesh.n_nodes), params, budget=budget)
    return rec.u


def deflated_search(mesh: Mesh, params: ProblemParams, seeds, k_max: int = 50,
                    budget: int = 50, tol_res: float = TOL_RES, retries: int = 2,
                    distinct_rel: float = 1e-3) -> SolutionSet:
    """Collect distinct nontrivial critical points by deflated Newton.

    Each seed is retried (with all found roots deflated) until it stops
    producing new solutions, at most ``retries`` extra times.
    """
    if params.alpha <= 0:
        raise ValueError("deflated search runs on the regularized problem (alpha > 0)")
    triv = trivial_solution(mesh, params)
    out = SolutionSet(trivial=triv, distinct_rel=distinct_rel)
    defl = Deflation(mesh, [triv])
    for seed in seeds:
        if len(out) >= k_max:
            break
        for _ in range(retries + 1):
            if len(out) >= k_max:
                break
            out.attempts += 1
            rec = newton_solve(mesh, seed, params, budget=budget, tol_res=tol_res, deflation=defl)
            if not rec.converged:
                break
            # the undeflated residual is what counts
            if rec.residual > tol_res or not is_nontrivial(mesh, rec.u, params, triv):
                break
            if not out.is_new(rec.u) or linf_distance(rec.u, triv) <= out.distinct_tol(rec.u):
                break
            rec.meta["seed_index"] = out.attempts - 1
            out.solutions.append(rec)
            defl.add(rec.u)
    return out


# -- seeds ------------------------------------------------------------------

def to_nehari(mesh: Mesh, params: ProblemParams, u) -> np.ndarray:
    """Rescale a positive field onto the Nehari set of the unforced exact problem."""
    base = ProblemParams(params.spec, params.eps)
    return nehari_scale(mesh, u, base) * values_of(u)


def nehari_bumps(mesh: Mesh, params: ProblemParams, centers, width=None, amplitude=None):
    """Gaussian bumps of width eps, rescaled onto the Nehari set unless an
    amplitude is given."""
    w = params.eps if width is None else width
    if amplitude is not None:
        return [bump(mesh, c, w, amplitude) for c in centers]
    return [to_nehari(mesh, params, bump(mesh, c, w)) for c in centers]


def polish_seeds(mesh: Mesh, params: ProblemParams, seeds, budget: int = 40) -> list:
    """A few Nehari descent steps per seed; moves bumps off residual plateaus
    and into the basin of a nearby critical point."""
    base = ProblemParams(params.spec, params.eps)
    return [minimize_on_nehari(mesh, base, u, budget=budget).u for u in seeds]


def random_seeds(mesh: Mesh, params: ProblemParams, count: int, seed: int, width_range=(1.0, 3.0)):
    """Random positive fields on the Nehari set: sums of one to three bumps at
    random points."""
    rng = np.random.default_rng(seed)
    inside = mesh.nodes[mesh.interior]
    out = []
    for _ in range(count):
        u = np.zeros(mesh.n_nodes)
        for _ in range(int(rng.integers(1, 4))):
            c = inside[rng.integers(len(inside))]
            w = params.eps * rng.uniform(*width_range)
            u += bump(mesh, c, w, rng.uniform(0.5, 2.0))
        out.append(to_nehari(mesh, params, u))
    return out


# -- continuation -----------------------------------------------------------

@dataclass
class ContinuationSchedule:
    alphas: tuple = tuple(1e-2 * 2.0 ** -k for k in range(21))
    final_zero: bool = True
    stage_budget: int = 30

    def __post_init__(self):
        a = np.asarray(self.alphas, dtype=float)
        if len(a) == 0:
            raise ValueError("schedule needs at least one stage")
        if np.any(np.diff(a) >= 0):
            raise ValueError("alpha schedule must be strictly decreasing")
        if a[0] > 1 or a[-1] < 0:
            raise ValueError("alpha values must lie in [0, 1]")
        self.alphas = tuple(float(x) for x in a)

    @property
    def head(self) -> float:
        return self.alphas[0]

    def stages(self):
        out = list(self.alphas)
        if self.final_zero and out[-1] != 0.0:
            out.append(0.0)
        return out

    def to_dict(self):
        return {"alphas": list(self.alphas), "final_zero": self.final_zero,
                "stage_budget": self.stage_budget}


def continue_alpha(mesh: Mesh, record: SolutionRecord, params: ProblemParams,
                   schedule: ContinuationSchedule, tol_res: float = TOL_RES) -> list:
    """Warm-started Newton along the schedule; each record carries the
    discrete C^1 increment from the previous stage in meta['increment']."""
    stages = schedule.stages()
    path = []
    prev = record.u
    for k, a in enumerate(stages):
        if k == 0 and abs(a - record.alpha) == 0 and record.converged:
            rec = record
        else:
            rec = newton_solve(mesh, prev, params.with_alpha(a), budget=schedule.stage_budget,
                               tol_res=tol_res)
        rec.meta["stage"] = k
        rec.meta["increment"] = c1_norm(mesh, rec.u - prev) if k else 0.0
        path.append(rec)
        if not rec.converged:
            rec.meta["failed_stage"] = k
            break
        prev = rec.u
    return path


# -- perturbations ----------------------------------------------------------

def laplace_modes(mesh: Mesh, count: int) -> np.ndarray:
    """Lowest discrete Dirichlet Laplace eigenfields (zero on the boundary)."""
    fem = mesh.fem
    k = min(count, fem.n_int - 2)
    _, vecs = spla.eigsh(fem.stiffness.tocsc(), k=k, M=fem.mass.tocsc(), sigma=0.0, which="LM",
                         v0=np.ones(fem.n_int))
    out = np.zeros((mesh.n_nodes, k))
    out[mesh.interior] = vecs
    # fix the sign convention so the result does not depend on ARPACK internals
    for j in range(k):
        i = int(np.argmax(np.abs(out[:, j])))
        if out[i, j] < 0:
            out[:, j] *= -1
    return out


def gen_perturbation(mesh: Mesh, n: int, seed: int, basis_dim: int = 8) -> DiscreteField:
    """Random combination of low Laplace modes with c1_norm exactly 1/(2n)."""
    if basis_dim < 1 or n < 1:
        raise ValueError("need n >= 1 and basis_dim >= 1")
    modes = laplace_modes(mesh, basis_dim)
    rng = np.random.default_rng([seed, n])
    h = modes @ rng.standard_normal(modes.shape[1])
    h *= (1.0 / (2.0 * n)) / c1_norm(mesh, h)
    return DiscreteField(mesh, h, free_boundary=True)


@dataclass
class PerturbationRow:
    n: int
    alpha: float
    h_c1norm: float
    count: int
    target: int
    matches: list
    all_within_R: bool
    all_nondegenerate: bool
    morse: list

    def to_dict(self):
        return {"n": self.n, "alpha": self.alpha, "h_c1norm": self.h_c1norm, "count": self.count,
                "target": self.target, "matches": self.matches, "all_within_R": self.all_within_R,
                "all_nondegenerate": self.all_nondegenerate, "morse": self.morse}


def default_alpha_n(n: int) -> float:
    return 1e-3 / n


def scaled_linf(u, ref) -> float:
    ref = values_of(ref)
    return linf_distance(u, ref) / float(np.max(np.abs(ref)))


def pn_study(mesh: Mesh, params: ProblemParams, baseline: list, n_list, R: float = 0.5,
             seeds=(), seed: int = 0, target: int = 1, alpha_of_n=default_alpha_n,
             basis_dim: int = 8, k_max: int = 50, budget: int = 50) -> list:
    """For each n solve the forced, regularized problem and match to the baseline.

    ``baseline`` holds nodal vectors of the unperturbed solutions.
    """
    rows = []
    for n in n_list:
        a = alpha_of_n(n)
        h = gen_perturbation(mesh, n, seed, basis_dim)
        pn = ProblemParams(params.spec, params.eps, a, h.values)
        # baseline solutions are the natural seeds, followed by the extra ones
        found = deflated_search(mesh, pn, list(baseline) + list(seeds), k_max=k_max,
                                budget=budget)
        matches, morse = [], []
        ok_nd = True
        for rec in found:
            dists = [scaled_linf(rec.u, b) for b in baseline]
            j = int(np.argmin(dists))
            matches.append({"baseline": j, "dist": dists[j]})
            passed, rep = nondegeneracy_certificate(mesh, rec.u, pn)
            ok_nd &= passed
            morse.append(rep.to_dict())
        rows.append(PerturbationRow(n, a, c1_norm(mesh, h.values), len(found), target, matches,
                                    all(m["dist"] <= R for m in matches), ok_nd, morse))
    return rows


# -- positivity -------------------------------------------------------------

@dataclass
class PositivityCertificate:
    min_interior: float
    min_inward_slope: float
    witness_node: int
    passed: bool

    def to_dict(self):
        return {"min_interior": self.min_interior, "min_inward_slope": self.min_inward_slope,
                "witness_node": self.witness_node, "passed": self.passed}


def positivity_check(mesh: Mesh, u) -> PositivityCertificate:
    """Minimum interior value and minimum inward difference quotient along
    edges joining a boundary node to an interior node."""
    u = values_of(u)
    inner = mesh.interior
    i_min = int(inner[np.argmin(u[inner])])
    min_int = float(u[i_min])
    e = mesh.edges()
    b = mesh.boundary
    cross = b[e[:, 0]] != b[e[:, 1]]
    e = e[cross]
    bi = np.where(b[e[:, 0]], e[:, 0], e[:, 1])
    ii = np.where(b[e[:, 0]], e[:, 1], e[:, 0])
    length = np.linalg.norm(mesh.nodes[ii] - mesh.nodes[bi], axis=1)
    slopes = (u[ii] - u[bi]) / length
    j = int(np.argmin(slopes))
    min_slope = float(slopes[j])
    witness = i_min if min_int <= 0 or min_slope > 0 else int(ii[j])
    return PositivityCertificate(min_int, min_slope, witness, min_int > 0 and min_slope > 0)
