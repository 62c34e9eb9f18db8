"""Acceptance suite: one test per criterion, each printing a single PASS/FAIL line."""
import math
import time

import numpy as np
import pytest

from pmorse.energy import ProblemParams, energy, gradient
from pmorse.harness.certificates import gamma_alpha, verify_ps, verify_splus
from pmorse.harness.experiments import (
    config_for,
    perturbation_experiment,
    solve_cell,
    topology_experiment,
)
from pmorse.mesh import DomainSpec, build_mesh
from pmorse.morse import (
    assemble_B,
    morse_index,
    reduce_LS,
    second_variation,
    split_VW,
    tube_certificate,
)
from pmorse.multisolve import newton_solve
from pmorse.nehari import m_of_ball, nehari_scale, project
from pmorse.nonlinearity import NonlinearitySpec, verify_approx_bounds

SPEC = NonlinearitySpec.homogeneous(3.0, 1.5)
DISK = DomainSpec.disk(1.0)
ANNULUS = DomainSpec.annulus(1.0, 2.0)


@pytest.fixture
def verdict(capsys):
    """Print one line per criterion to the terminal, then assert."""
    def emit(k, ok, elapsed, limit, detail):
        passed = bool(ok) and elapsed < limit
        with capsys.disabled():
            print(f"\n[criterion {k:2d}] {'PASS' if passed else 'FAIL'} "
                  f"({elapsed:.1f} s, limit {limit:g} s) {detail}")
        assert ok, detail
        assert elapsed < limit, f"runtime {elapsed:.1f} s exceeds {limit} s"
    return emit


def homogeneous_for(p):
    # q = 3 needs p* > 3, which fails at p = 1.2 in the plane (p* = 3)
    return NonlinearitySpec.homogeneous(3.0 if 2 * p / (2 - p) > 3 else 2.5, p)


def smooth_field(mesh, rng, amp=2.0):
    x = mesh.nodes
    u = np.zeros(mesh.n_nodes)
    for _ in range(3):
        c = rng.uniform(-0.5, 0.5, 2)
        u += rng.uniform(-0.5, 1.0) * amp * np.exp(-np.sum((x - c) ** 2, axis=1) / 0.1)
    u += 0.1 * rng.standard_normal(mesh.n_nodes)
    u[mesh.boundary] = 0.0
    return u


# -- 1 ----------------------------------------------------------------------

def test_criterion_01_bound_suite(verdict):
    t0 = time.perf_counter()
    grid = np.linspace(-10.0, 10.0, 2001)
    worst, failed = math.inf, []
    for p in (1.2, 1.4, 1.5, 1.8):
        spec = homogeneous_for(p)
        for a in (1e-2, 1e-4):
            rep = verify_approx_bounds(spec, a, grid, tol=1e-12)
            assert set(rep.results) == {"ga", "g1a", "fa", "f1a"}
            worst = min(worst, min(r.slack for r in rep.results.values()))
            failed += [(p, a, k) for k, r in rep.results.items() if not r.passed]
    verdict(1, not failed and worst >= -1e-12, time.perf_counter() - t0, 5,
            f"min slack {worst:.3e} over 8 (p, alpha) pairs; failures {failed}")


# -- 2 ----------------------------------------------------------------------

def test_criterion_02_splus(verdict):
    t0 = time.perf_counter()
    g1 = gamma_alpha(1.5, 1.0)
    ok = abs(g1 - 0.258199) < 1e-6
    u5 = math.inf
    bad = []
    for p in (1.2, 1.5, 1.8):
        for a in (1e-4, 1e-2, 1.0):
            rep = verify_splus(ProblemParams(homogeneous_for(p), 0.3, a), sample_count=10_000, seed=7)
            u5 = min(u5, rep["u5"].min_slack)
            bad += [(p, a, k) for k, c in rep.checks.items() if not c.passed]
            ok &= rep["u3"].constants["C"] == pytest.approx(0.5 * 0.3 ** p * gamma_alpha(p, 1.0) ** p)
    ok &= not bad and u5 > 0
    verdict(2, ok, time.perf_counter() - t0, 10,
            f"gamma_1 = {g1:.6f}, min (u5) value {u5:.3e}, failures {bad}")


# -- 3 ----------------------------------------------------------------------

def test_criterion_03_coercivity(verdict):
    t0 = time.perf_counter()
    mesh = build_mesh(DISK, 0.2)
    worst, ok = math.inf, True
    cases = [(1e-3, None), (1e-2, None), (1e-1, None), (1e-2, 0.05 * np.cos(2 * mesh.nodes[:, 0]))]
    for a, h in cases:
        rep = verify_ps(ProblemParams(SPEC, 0.3, a, h), sample_count=50, seed=3, mesh=mesh)
        ok &= rep.passed and rep["F_theta"].samples == 2001 and rep["coercivity"].samples == 50
        worst = min(worst, rep["F_theta"].min_slack, rep["coercivity"].min_slack)
    verdict(3, ok and worst >= -1e-10, time.perf_counter() - t0, 10,
            f"min slack {worst:.3e} over {len(cases)} parameter sets")


# -- 4 ----------------------------------------------------------------------

def test_criterion_04_derivatives(verdict):
    t0 = time.perf_counter()
    mesh = build_mesh(DISK, 0.2)
    rng = np.random.default_rng(4)
    worst_g = 0.0
    for _ in range(50):
        a = float(10.0 ** rng.uniform(-6, -1))
        P = ProblemParams(SPEC, float(rng.uniform(0.1, 1.0)), a)
        u, v = smooth_field(mesh, rng), smooth_field(mesh, rng)
        t = 1e-6
        fd = (energy(mesh, u + t * v, P) - energy(mesh, u - t * v, P)) / (2 * t)
        an = float(gradient(mesh, u, P) @ v)
        worst_g = max(worst_g, abs(an - fd) / abs(fd))
    worst_b = 0.0
    for _ in range(20):
        a = float(10.0 ** rng.uniform(-6, -1))
        P = ProblemParams(SPEC, float(rng.uniform(0.2, 1.0)), a)
        u, z = smooth_field(mesh, rng), smooth_field(mesh, rng)
        t = 1e-5
        dg = (gradient(mesh, u + t * z, P) - gradient(mesh, u - t * z, P)) / (2 * t)
        zi = z[mesh.interior]
        fd = float(dg[mesh.interior] @ zi)
        an = float(zi @ (second_variation(mesh, u, P) @ zi))
        worst_b = max(worst_b, abs(an - fd) / abs(fd))
    verdict(4, worst_g <= 1e-5 and worst_b <= 1e-3, time.perf_counter() - t0, 30,
            f"worst relative error: gradient {worst_g:.2e}, second variation {worst_b:.2e}")


# -- 5 ----------------------------------------------------------------------

def test_criterion_05_nehari_scale(verdict):
    t0 = time.perf_counter()
    mesh = build_mesh(DISK, 0.25)
    P = ProblemParams(SPEC, 0.3)
    rng = np.random.default_rng(5)
    worst, worst_idem = 0.0, 0.0
    for _ in range(100):
        v = rng.standard_normal(mesh.n_nodes) + rng.uniform(0.0, 2.0)
        v[mesh.boundary] = 0.0
        xi = nehari_scale(mesh, v, P)
        # dense-scan argmax of t -> I(t v) in log t, refined on shrinking windows
        lo, hi = -6.0, 6.0
        for _ in range(4):
            s = np.linspace(lo, hi, 101)
            vals = [energy(mesh, math.exp(x) * v, P) for x in s]
            j = int(np.argmax(vals))
            lo, hi = s[max(j - 1, 0)], s[min(j + 1, 100)]
        worst = max(worst, abs(math.exp(s[j]) - xi) / xi)
        u = project(mesh, v, P)
        worst_idem = max(worst_idem, float(np.max(np.abs(project(mesh, u, P) - u) / np.max(np.abs(u)))))
    verdict(5, worst <= 1e-6 and worst_idem <= 1e-10, time.perf_counter() - t0, 20,
            f"scale vs scan {worst:.2e}, projection idempotence {worst_idem:.2e}")


# -- 6 ----------------------------------------------------------------------

def test_criterion_06_ball_invariance(verdict):
    t0 = time.perf_counter()
    P = ProblemParams(SPEC, 0.2)
    a = m_of_ball(P, 0.5, 1.0 / 32, center=(0.0, 0.0))
    b = m_of_ball(P, 0.5, 1.0 / 32, center=(1.3, -0.7))
    rel = abs(a.energy - b.energy) / abs(a.energy)
    verdict(6, a.converged and b.converged and rel <= 1e-4, time.perf_counter() - t0, 120,
            f"m = {a.energy:.10f} vs {b.energy:.10f}, relative difference {rel:.2e}")


# -- 7, 9, 11 share the disk cell -------------------------------------------

@pytest.fixture(scope="module")
def disk_cell():
    t0 = time.perf_counter()
    # 40 seeds: the polished centre bump, the raw bump and 38 random fields
    cfg = config_for(DISK, SPEC, [0.1], 1.0 / 32, n_random=38)
    cell = solve_cell(cfg, 0.1)
    return cfg, cell, time.perf_counter() - t0


def test_criterion_07_disk_count(disk_cell, verdict):
    cfg, cell, elapsed = disk_cell
    sols = [s for s in cell["solutions"] if s.get("positivity", {}).get("passed")]
    ok = cell["count"] == 1 and len(sols) >= 1
    if ok:
        ok = all(s["morse"]["m"] == s["morse"]["m_star"] == 1 for s in sols)
    morse = [(s["morse"]["m"], s["morse"]["m_star"]) for s in sols]
    verdict(7, ok, elapsed, 600,
            f"{cell['count']} distinct positive solution(s) from {cell['search_count']} "
            f"found at alpha = {cell['search_alpha']}; (m, m*) = {morse}")


def test_criterion_09_perturbation(disk_cell, verdict):
    cfg, cell, _ = disk_cell
    t0 = time.perf_counter()
    rep = perturbation_experiment(cfg, 0.1, cell)
    counts = [r["count"] for r in rep["rows"]]
    ok = (rep["baseline_count"] >= 1 and rep["all_within_R"] and rep["never_below_baseline"]
          and rep["all_nondegenerate"] and [r["n"] for r in rep["rows"]] == [2, 4, 8, 16])
    dists = [m["dist"] for r in rep["rows"] for m in r["matches"]]
    verdict(9, ok, time.perf_counter() - t0, 1200,
            f"counts {counts} vs baseline {rep['baseline_count']}, max scaled distance "
            f"{max(dists) if dists else float('nan'):.3f}, nondegenerate {rep['all_nondegenerate']}")


def test_criterion_11_reduction(disk_cell, verdict):
    cfg, cell, _ = disk_cell
    t0 = time.perf_counter()
    mesh = cell["_mesh"]
    ok, details = bool(cell["_fields"]), []
    for u0 in cell["_fields"].values():
        # a regularized stage near alpha = 0, reached by continuation from the exact solution
        P = ProblemParams(SPEC, 0.1, 1e-4)
        rec = newton_solve(mesh, u0, P)
        ok &= rec.converged
        sp = split_VW(assemble_B(mesh, rec.u, P))
        ok &= sp.delta_hat > 0 and sp.V.shape[1] >= 1
        scale = float(np.sqrt(rec.u[mesh.interior] @ (mesh.fem.mass @ rec.u[mesh.interior])))
        worst_fd, worst_tube = 0.0, math.inf
        tau = 3e-4 * scale
        # samples stay inside the small V-ball where the tube bound is asserted;
        # the W-restricted minimum drifts linearly in c and reaches delta_hat / 2
        # near |c| = 6e-3 scale at the ground state
        for j, e in enumerate(np.eye(sp.V.shape[1])):
            for c in (-1e-3, -1e-4, 1e-4, 1e-3):
                c = c * scale * e
                res = reduce_LS(mesh, rec.u, sp, c, P)
                E = [reduce_LS(mesh, rec.u, sp, c + k * tau * e, P, psi0=res.psi).reduced_energy
                     for k in (-2, -1, 1, 2)]
                fd = (E[0] - 8 * E[1] + 8 * E[2] - E[3]) / (12 * tau)
                g = res.reduced_gradient[j]
                worst_fd = max(worst_fd, abs(fd - g) / abs(g))
                worst_tube = min(worst_tube, tube_certificate(mesh, rec.u, sp, c, P, res))
        ok &= worst_fd <= 1e-5 and worst_tube >= sp.delta_hat / 2 > 0
        details.append(f"fd {worst_fd:.2e}, tube min {worst_tube:.3e} vs delta/2 {sp.delta_hat / 2:.3e}")
    verdict(11, ok, time.perf_counter() - t0, 300, "; ".join(details))


# -- 8 ----------------------------------------------------------------------

def test_criterion_08_annulus_count(verdict):
    t0 = time.perf_counter()
    cfg = config_for(ANNULUS, SPEC, [0.4, 0.2, 0.1, 0.05], 1.0 / 32)
    rep = topology_experiment(cfg)
    rows = sorted(rep["rows"], key=lambda r: -r["eps"])
    counts = {r["eps"]: r["count"] for r in rows}
    feasible = [r for r in rows if r["count"] > 0]
    smallest = feasible[-1] if feasible else None
    ok = smallest is not None and smallest["count"] >= 3 and rep["counts_nondecreasing"]
    verdict(8, ok, time.perf_counter() - t0, 2700,
            f"counts by eps {counts}; smallest converging eps "
            f"{smallest['eps'] if smallest else None}; nondecreasing {rep['counts_nondecreasing']}")


# -- 10 ---------------------------------------------------------------------

def test_criterion_10_morse_oracle(coarse_disk_path, verdict):
    t0 = time.perf_counter()
    mesh, params, path = coarse_disk_path
    assert mesh.fem.n_int <= 400
    rng = np.random.default_rng(10)
    pairs = [assemble_B(mesh, r.u, params.with_alpha(r.alpha)) for r in path[::2]]
    while len(pairs) < 20:
        u = 3.0 * smooth_field(mesh, rng)
        a = float(10.0 ** rng.uniform(-6, -1))
        pairs.append(assemble_B(mesh, u, ProblemParams(SPEC, float(rng.uniform(0.2, 0.6)), a)))
    mismatches, indices = [], []
    for k, pair in enumerate(pairs):
        d, it = morse_index(pair, method="dense"), morse_index(pair, method="iterative")
        indices.append(d.m)
        if (d.m, d.m_star) != (it.m, it.m_star):
            mismatches.append((k, (d.m, d.m_star), (it.m, it.m_star)))
    verdict(10, len(pairs) == 20 and not mismatches, time.perf_counter() - t0, 300,
            f"20 forms, dense indices {sorted(set(indices))}, mismatches {mismatches}")
