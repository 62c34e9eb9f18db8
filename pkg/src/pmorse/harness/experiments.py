"""Experiment configuration and orchestration."""
from __future__ import annotations

import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from ..energy import ProblemParams
from ..mesh import ANNULUS, DISK, INTERVAL, RECTANGLE, DomainSpec, Mesh, build_mesh
from ..morse import nondegeneracy_certificate
from ..multisolve import (
    ContinuationSchedule,
    continue_alpha,
    deflated_search,
    linf_distance,
    nehari_bumps,
    pn_study,
    polish_seeds,
    positivity_check,
    random_seeds,
)
from ..nonlinearity import NonlinearitySpec


@dataclass
class ExperimentConfig:
    domain: DomainSpec
    spec: NonlinearitySpec
    eps_list: list
    h_mesh: float
    poincare_1: int
    category: int
    schedule: ContinuationSchedule = field(default_factory=ContinuationSchedule)
    k_max: int = 50
    n_random: int = 20
    newton_budget: int = 50
    n_list: list = field(default_factory=lambda: [2, 4, 8, 16])
    radius_R: float = 0.5
    seed: int = 0
    out_dir: str | None = None

    def __post_init__(self):
        if self.poincare_1 is None or self.category is None:
            raise ValueError("expected topological counts must be supplied")
        if self.poincare_1 < 1 or self.category < 1:
            raise ValueError("Poincare value and category must be positive")
        if not self.eps_list:
            raise ValueError("eps list must be nonempty")
        if any(e <= 0 for e in self.eps_list):
            raise ValueError("eps values must be positive")
        if not self.h_mesh > 0:
            raise ValueError("mesh size must be positive")

    @property
    def target_poincare(self) -> int:
        return 2 * self.poincare_1 - 1

    @property
    def target_category(self) -> int | None:
        """cat + 1, which is only a lower bound when the category exceeds 1."""
        return self.category + 1 if self.category > 1 else None

    @property
    def target(self) -> int:
        return max(t for t in (self.target_poincare, self.target_category) if t is not None)

    def to_dict(self):
        return {"domain": self.domain.to_dict(), "spec": self.spec.to_dict(),
                "eps_list": list(self.eps_list), "h_mesh": self.h_mesh,
                "poincare_1": self.poincare_1, "category": self.category,
                "schedule": self.schedule.to_dict(), "k_max": self.k_max,
                "n_random": self.n_random, "newton_budget": self.newton_budget,
                "n_list": list(self.n_list), "radius_R": self.radius_R, "seed": self.seed}

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["domain"] = DomainSpec.from_dict(d["domain"])
        d["spec"] = NonlinearitySpec.from_dict(d["spec"])
        if "schedule" in d:
            d["schedule"] = ContinuationSchedule(**d["schedule"])
        d.pop("out_dir", None)
        return cls(**d)


# standard topological data of the shipped domains
TOPOLOGY = {INTERVAL: (1, 1), RECTANGLE: (1, 1), DISK: (1, 1), ANNULUS: (2, 2)}


def feature_points(domain: DomainSpec):
    """Seed locations: one per topological feature of the domain."""
    if domain.shape == INTERVAL:
        return [(0.5 * sum(domain.size),)]
    if domain.shape == RECTANGLE:
        (w, h), (ox, oy) = domain.size, domain.center
        return [(ox + w / 2, oy + h / 2)]
    if domain.shape == DISK:
        return [domain.center]
    r0, r1 = domain.size
    cx, cy = domain.center
    return [(cx + r * math.cos(a), cy + r * math.sin(a))
            for r in (r0 + 0.35 * (r1 - r0), r0 + 0.65 * (r1 - r0))
            for a in np.arange(4) * math.pi / 2]


def make_seeds(mesh: Mesh, params: ProblemParams, domain: DomainSpec, n_random: int, seed: int):
    """Polished feature bumps first, then the raw bumps, then random fields."""
    bumps = nehari_bumps(mesh, params, feature_points(domain))
    return (polish_seeds(mesh, params, bumps) + bumps
            + random_seeds(mesh, params, n_random, seed))


def worker_cap() -> int:
    try:
        return max(1, int(os.environ.get("PMORSE_WORKERS", "1")))
    except ValueError:
        return 1


def solve_cell(config: ExperimentConfig, eps: float, mesh: Mesh | None = None) -> dict:
    """Search, continue to alpha = 0, and certify every solution for one eps."""
    if mesh is None:
        mesh = build_mesh(config.domain, config.h_mesh)
    params = ProblemParams(config.spec, eps, config.schedule.head)
    clock = time.perf_counter()
    seeds = make_seeds(mesh, params, config.domain, config.n_random, config.seed)
    t_seeds = time.perf_counter() - clock
    found = deflated_search(mesh, params, seeds, k_max=config.k_max, budget=config.newton_budget)
    t_search = time.perf_counter() - clock - t_seeds
    sols = []
    finals = []
    for k, rec in enumerate(found):
        path = continue_alpha(mesh, rec, params, config.schedule)
        last = path[-1]
        entry = {"index": k, "search_energy": rec.energy, "seed_index": rec.meta.get("seed_index"),
                 "stages": len(path), "converged": last.converged and len(path) == len(config.schedule.stages()),
                 "energy": last.energy, "residual": last.residual, "alpha_final": last.alpha,
                 "increments": [r.meta["increment"] for r in path]}
        if entry["converged"]:
            pos = positivity_check(mesh, last.u)
            entry["positivity"] = pos.to_dict()
            reg = [r for r in path if r.alpha > 0][-1]
            ok, rep = nondegeneracy_certificate(mesh, reg.u, params.with_alpha(reg.alpha))
            entry["morse"] = rep.to_dict()
            entry["morse_alpha"] = reg.alpha
            entry["nondegenerate"] = ok
            if pos.passed:
                finals.append((k, last.u))
        else:
            entry["failed_stage"] = last.meta.get("failed_stage")
        sols.append(entry)
    # distinctness after continuation
    distinct = []
    for k, u in finals:
        amp = max([float(np.max(np.abs(u)))] + [float(np.max(np.abs(v))) for _, v in distinct])
        if all(linf_distance(u, v) > 1e-3 * amp for _, v in distinct):
            distinct.append((k, u))
    count = len(distinct)
    mult = sum(1 for s in sols if s.get("nondegenerate") and s.get("positivity", {}).get("passed"))
    return {"eps": eps, "h_mesh": config.h_mesh, "n_nodes": mesh.n_nodes,
            "search_alpha": params.alpha, "search_count": len(found), "count": count,
            "certified_multiplicity_sum": mult,
            "target_poincare": config.target_poincare, "target_category": config.target_category,
            "passed": count >= config.target,
            "solutions": sols,
            "timing": {"seeds": t_seeds, "search": t_search,
                       "total": time.perf_counter() - clock},
            "_fields": {k: u for k, u in distinct}, "_mesh": mesh}


def _cell_safe(args):
    config, eps = args
    try:
        return solve_cell(config, eps)
    except Exception as exc:  # noqa: BLE001 - report per-cell failure, keep going
        return {"eps": eps, "h_mesh": config.h_mesh, "count": 0, "passed": False,
                "error": f"{type(exc).__name__}: {exc}", "solutions": []}


def topology_experiment(config: ExperimentConfig) -> dict:
    """Count positive solutions for each eps and compare to the topological targets."""
    cells = [(config, e) for e in config.eps_list]
    workers = min(worker_cap(), len(cells))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            rows = list(ex.map(_cell_safe, cells))
    else:
        rows = [_cell_safe(c) for c in cells]
    counts = [r["count"] for r in sorted(rows, key=lambda r: -r["eps"])]
    monotone = all(b >= a for a, b in zip(counts, counts[1:]))
    return {"rows": rows, "counts_nondecreasing": monotone,
            "best_count": max(counts) if counts else 0}


def perturbation_experiment(config: ExperimentConfig, eps: float, baseline_cell: dict | None = None):
    """Baseline solutions at alpha = 0 followed by the forced study over n."""
    if baseline_cell is None:
        baseline_cell = solve_cell(config, eps)
    mesh = baseline_cell["_mesh"]
    baseline = list(baseline_cell["_fields"].values())
    params = ProblemParams(config.spec, eps, 0.0)
    extra = random_seeds(mesh, params, config.n_random, config.seed + 1)
    rows = pn_study(mesh, params, baseline, config.n_list, R=config.radius_R, seeds=extra,
                    seed=config.seed, target=config.target_poincare, k_max=config.k_max,
                    budget=config.newton_budget)
    counts = [r.count for r in rows]
    return {"eps": eps, "baseline_count": len(baseline),
            "rows": [r.to_dict() for r in rows],
            "all_within_R": all(r.all_within_R for r in rows),
            "all_nondegenerate": all(r.all_nondegenerate for r in rows),
            "never_below_baseline": all(c >= len(baseline) for c in counts)}


def config_for(domain: DomainSpec, spec: NonlinearitySpec, eps_list, h_mesh, **kw) -> ExperimentConfig:
    p1, cat = TOPOLOGY[domain.shape]
    kw.setdefault("poincare_1", p1)
    kw.setdefault("category", cat)
    return ExperimentConfig(domain, spec, list(eps_list), h_mesh, **kw)


def with_overrides(config: ExperimentConfig, **kw) -> ExperimentConfig:
    return replace(config, **{k: v for k, v in kw.items() if v is not None})
