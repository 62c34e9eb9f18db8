import pytest

from pmorse.energy import ProblemParams
from pmorse.mesh import DomainSpec, build_mesh
from pmorse.multisolve import ContinuationSchedule, continue_alpha, nehari_bumps, newton_solve
from pmorse.nonlinearity import NonlinearitySpec

SPEC = NonlinearitySpec.homogeneous(3.0, 1.5)


@pytest.fixture(scope="session")
def coarse_disk_path():
    """Ground-state branch on a coarse disk (383 interior nodes), alpha = 1e-2 ... 1e-2/2^10."""
    mesh = build_mesh(DomainSpec.disk(1.0), 0.1)
    params = ProblemParams(SPEC, 0.3, 1e-2)
    rec = newton_solve(mesh, nehari_bumps(mesh, params, [(0.0, 0.0)])[0], params)
    sched = ContinuationSchedule(alphas=tuple(1e-2 * 2.0 ** -k for k in range(11)), final_zero=False)
    path = continue_alpha(mesh, rec, params, sched)
    assert all(r.converged for r in path)
    return mesh, params, path
