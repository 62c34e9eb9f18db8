import numpy as np
import pytest
from scipy.optimize import brentq
from hypothesis import given, settings
from hypothesis import strategies as st

from pmorse.energy import A_eps, ProblemParams, energy, values_of
from pmorse.mesh import DomainSpec, build_mesh, norm_eps
from pmorse.nehari import (
    NehariInfeasible,
    bump,
    m_of_ball,
    minimize_on_nehari,
    nehari_floors,
    nehari_scale,
    project,
)
from pmorse.nonlinearity import NonlinearitySpec

SPEC = NonlinearitySpec.homogeneous(3.0, 1.5)
MESH = build_mesh(DomainSpec.disk(1.0), 0.2)


def direction(seed, mesh=MESH):
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(mesh.n_nodes) + rng.uniform(0.0, 2.0)
    v[mesh.boundary] = 0.0
    return v


def closed_form_scale(mesh, v, p, q, eps):
    vq = np.maximum(mesh.fem.at_qp(v), 0.0)
    return (norm_eps(mesh, v, p, eps) ** p / float(np.sum(mesh.fem.qweights * vq ** q))) ** (1 / (q - p))


def scan_argmax(fun, lo=-6.0, hi=6.0, n=2001, zooms=6):
    """Argmax of fun(exp(s)) by repeated dense scans on shrinking windows."""
    for _ in range(zooms):
        s = np.linspace(lo, hi, n)
        vals = np.array([fun(np.exp(x)) for x in s])
        j = int(np.argmax(vals))
        lo, hi = s[max(j - 2, 0)], s[min(j + 2, n - 1)]
    return float(np.exp(s[j]))


def test_scale_for_unit_direction_with_half_moment():
    # ||v||_eps = 1 and int (v+)^3 = 1/2 give xi = 2^(2/3); the moment is set by
    # scaling and the unit norm by choosing eps
    w = np.abs(direction(0))
    fem = MESH.fem
    w *= (0.5 / float(np.sum(fem.qweights * fem.at_qp(w) ** 3))) ** (1 / 3)
    eps = brentq(lambda e: norm_eps(MESH, w, 1.5, e) - 1.0, 1e-6, 10.0, xtol=1e-15)
    xi = nehari_scale(MESH, w, ProblemParams(SPEC, eps))
    assert xi == pytest.approx(2.0 ** (2.0 / 3.0), rel=1e-10)


@pytest.mark.parametrize("seed", range(5))
def test_scale_is_argmax_of_fiber(seed):
    P = ProblemParams(SPEC, 0.3)
    v = direction(seed)
    xi = nehari_scale(MESH, v, P)
    scan = scan_argmax(lambda t: energy(MESH, t * v, P))
    assert xi == pytest.approx(scan, rel=1e-6)
    assert xi == pytest.approx(closed_form_scale(MESH, v, 1.5, 3.0, 0.3), rel=1e-10)


def test_scale_of_projected_point_recovers_norm():
    P = ProblemParams(SPEC, 0.3)
    u = project(MESH, direction(9), P)
    n = norm_eps(MESH, u, 1.5, 0.3)
    assert nehari_scale(MESH, u / n, P) == pytest.approx(n, rel=1e-10)
    assert abs(A_eps(MESH, u, P)) <= 1e-10 * n ** 1.5


def test_scale_refuses_nonpositive_direction():
    P = ProblemParams(SPEC, 0.3)
    with pytest.raises(NehariInfeasible):
        nehari_scale(MESH, -np.abs(direction(1)), P)
    with pytest.raises(ValueError):
        nehari_scale(MESH, direction(1), P.with_alpha(1e-2))


def test_power_sum_scale_is_unique_root():
    spec = NonlinearitySpec.power_sum([(1.0, 2.5), (0.5, 3.5)], 1.5)
    P = ProblemParams(spec, 0.3)
    v = direction(4)
    ts = np.logspace(-4, 4, 801)
    vals = np.array([A_eps(MESH, t * v, P) for t in ts])
    assert int(np.sum(np.diff(np.sign(vals)) != 0)) == 1
    xi = nehari_scale(MESH, v, P)
    assert abs(A_eps(MESH, xi * v, P)) <= 1e-10 * norm_eps(MESH, xi * v, 1.5, 0.3) ** 1.5


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 100_000))
def test_projection_idempotent(seed):
    P = ProblemParams(SPEC, 0.4)
    u = project(MESH, direction(seed), P)
    assert np.allclose(project(MESH, u, P), u, rtol=1e-10, atol=0)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 100_000))
def test_fiber_has_unique_maximum(seed):
    P = ProblemParams(SPEC, 0.4)
    v = direction(seed)
    ts = np.logspace(-4, 4, 801)
    e = np.array([energy(MESH, t * v, P) for t in ts])
    d = np.sign(np.diff(e))
    assert int(np.sum(d[1:] != d[:-1])) == 1
    j = int(np.argmax(e))
    xi = nehari_scale(MESH, v, P)
    assert ts[j - 1] <= xi <= ts[j + 1]


@pytest.fixture(scope="module")
def ground_state():
    mesh = build_mesh(DomainSpec.disk(1.0), 1.0 / 16)
    P = ProblemParams(SPEC, 0.2)
    rec = minimize_on_nehari(mesh, P, bump(mesh, (0.0, 0.0), 0.25))
    return mesh, P, rec


def test_ground_state_converges_centered(ground_state):
    mesh, P, rec = ground_state
    assert rec.converged and rec.residual <= 1e-8
    peak = mesh.nodes[int(np.argmax(rec.u))]
    assert np.linalg.norm(peak) <= mesh.h_mesh
    assert abs(rec.constraint) <= 1e-10 * norm_eps(mesh, rec.u, 1.5, 0.2) ** 1.5 + 1e-9
    assert rec.to_dict()["status"] == "converged"


def test_ground_state_below_multistart(ground_state):
    mesh, P, rec = ground_state
    rng = np.random.default_rng(2024)
    energies = []
    for _ in range(20):
        init = bump(mesh, rng.uniform(-0.5, 0.5, 2), rng.uniform(0.1, 0.4))
        init += 0.1 * np.abs(rng.standard_normal(mesh.n_nodes))
        init[mesh.boundary] = 0.0
        energies.append(minimize_on_nehari(mesh, P, init, budget=60).energy)
    # every Nehari point is an upper bound for the infimum
    assert rec.energy <= min(energies) + 1e-9


def test_energy_and_norm_floors(ground_state):
    mesh, P, rec = ground_state
    fl = nehari_floors(mesh, P, [rec.u])
    assert rec.energy >= fl["K_eps"] > 0
    assert norm_eps(mesh, rec.u, 1.5, 0.2) >= fl["sigma"] > 0


def test_ball_radius_and_eps_monotone():
    P = ProblemParams(SPEC, 0.2)
    small = m_of_ball(P, 0.5, 1.0 / 16)
    big = m_of_ball(P, 1.0, 1.0 / 16)
    assert small.converged and big.converged
    assert small.energy >= big.energy
    low_eps = m_of_ball(ProblemParams(SPEC, 0.15), 1.0, 1.0 / 16)
    assert low_eps.converged and low_eps.energy < big.energy


def test_ball_on_own_domain_matches_direct(ground_state):
    mesh, P, rec = ground_state
    ball = m_of_ball(P, 1.0, 1.0 / 16)
    assert ball.energy == pytest.approx(rec.energy, rel=1e-9)
    assert values_of(ball.u).shape == rec.u.shape


def test_ball_radius_validation():
    with pytest.raises(ValueError):
        m_of_ball(ProblemParams(SPEC, 0.2), 0.0, 0.1)
