import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pmorse.energy import (
    A_eps,
    A_grad_pairing,
    ProblemParams,
    energy,
    gradient,
    residual_norm,
    sobolev_ratio,
)
from pmorse.mesh import DomainSpec, build_mesh, norm_eps
from pmorse.nonlinearity import NonlinearitySpec, eval_F, growth_constant

SPEC = NonlinearitySpec.homogeneous(3.0, 1.5)
MESH = build_mesh(DomainSpec.disk(1.0), 0.2)
AREA = float(np.sum(MESH.fem.volume))


def smooth_field(seed, mesh=MESH, amp=2.0):
    rng = np.random.default_rng(seed)
    x = mesh.nodes
    u = np.zeros(mesh.n_nodes)
    for _ in range(3):
        c = rng.uniform(-0.5, 0.5, 2)
        u += rng.uniform(-0.5, 1.0) * amp * np.exp(-np.sum((x - c) ** 2, axis=1) / 0.1)
    u += 0.1 * rng.standard_normal(mesh.n_nodes)
    u[mesh.boundary] = 0.0
    return u


def test_energy_at_zero():
    P = ProblemParams(SPEC, 0.3)
    assert energy(MESH, np.zeros(MESH.n_nodes), P) == 0.0


def test_energy_of_nonpositive_field():
    P = ProblemParams(SPEC, 0.3)
    u = -np.abs(smooth_field(1))
    assert energy(MESH, u, P) == pytest.approx(norm_eps(MESH, u, 1.5, 0.3) ** 1.5 / 1.5, rel=1e-13)


def test_regularized_energy_at_zero():
    a, eps, p = 1e-2, 0.3, 1.5
    P = ProblemParams(SPEC, eps, a)
    expected = (1 + eps ** p) * AREA * a ** (p / 2) / p - AREA * eval_F(SPEC, a ** (1 / SPEC.s))
    assert energy(MESH, np.zeros(MESH.n_nodes), P) == pytest.approx(expected, rel=1e-13)


def test_gradient_at_zero():
    P = ProblemParams(SPEC, 0.3)
    assert np.all(gradient(MESH, np.zeros(MESH.n_nodes), P) == 0.0)


def test_gradient_at_zero_with_forcing():
    rng = np.random.default_rng(3)
    h = rng.standard_normal(MESH.n_nodes)
    P = ProblemParams(SPEC, 0.3, 0.0, h=h)
    g = gradient(MESH, np.zeros(MESH.n_nodes), P)
    expected = -(MESH.fem.mass_full @ h)
    expected[MESH.boundary] = 0.0
    assert np.allclose(g, expected, atol=1e-14)
    # and the difference quotient of the energy agrees
    v = smooth_field(4)
    t = 1e-6
    fd = (energy(MESH, t * v, P) - energy(MESH, -t * v, P)) / (2 * t)
    assert fd == pytest.approx(float(g @ v), rel=1e-6)


@pytest.mark.parametrize("seed", range(10))
def test_gradient_central_difference(seed):
    rng = np.random.default_rng(seed)
    alpha = float(10.0 ** rng.uniform(-6, -1))
    h = rng.standard_normal(MESH.n_nodes) * 0.3 if seed % 2 else None
    P = ProblemParams(SPEC, float(rng.uniform(0.1, 1.0)), alpha, h=h)
    u, v = smooth_field(seed), smooth_field(seed + 100)
    t = 1e-6
    fd = (energy(MESH, u + t * v, P) - energy(MESH, u - t * v, P)) / (2 * t)
    assert float(gradient(MESH, u, P) @ v) == pytest.approx(fd, rel=1e-5)


def test_A_eps_closed_form_and_single_sign_change():
    P = ProblemParams(SPEC, 0.4)
    v = np.abs(smooth_field(7))
    nv = norm_eps(MESH, v, 1.5, 0.4) ** 1.5
    vq = np.maximum(MESH.fem.at_qp(v), 0)
    m3 = float(np.sum(MESH.fem.qweights * vq ** 3))
    ts = np.logspace(-3, 3, 601)
    vals = np.array([A_eps(MESH, t * v, P) for t in ts])
    assert np.allclose(vals, ts ** 1.5 * nv - ts ** 3 * m3, rtol=1e-10, atol=1e-12)
    assert int(np.sum(np.diff(np.sign(vals)) != 0)) == 1
    assert A_eps(MESH, np.zeros(MESH.n_nodes), P) == 0.0


@pytest.mark.parametrize("seed", range(4))
def test_A_grad_pairing_difference(seed):
    P = ProblemParams(SPEC, 0.5)
    u, v = smooth_field(seed), smooth_field(seed + 50)
    t = 1e-6
    fd = (A_eps(MESH, u + t * v, P) - A_eps(MESH, u - t * v, P)) / (2 * t)
    assert A_grad_pairing(MESH, u, v, P) == pytest.approx(fd, rel=1e-5)


def test_invalid_params():
    with pytest.raises(ValueError):
        ProblemParams(SPEC, 0.0)
    with pytest.raises(ValueError):
        ProblemParams(SPEC, 0.1, -1.0)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.floats(1e-3, 1.0), st.floats(0.1, 1.0))
def test_local_minimum_inequality(seed, scale, eps):
    P = ProblemParams(SPEC, eps)
    u = scale * smooth_field(seed)
    n = norm_eps(MESH, u, 1.5, eps)
    c_eps = growth_constant(SPEC) * sobolev_ratio(MESH, u, 1.5, 3.0, eps)
    assert energy(MESH, u, P) >= n ** 1.5 / 3.0 - c_eps * n ** 3 - 1e-13 * max(1.0, n ** 1.5)


def test_regularized_functional_approaches_exact_one():
    rng = np.random.default_rng(11)
    fields = []
    while len(fields) < 100:
        u = smooth_field(int(rng.integers(1 << 30)))
        if norm_eps(MESH, u, 1.5, 0.3) <= 10:
            fields.append(u)
    I = ProblemParams(SPEC, 0.3)
    prev_e, prev_g = np.inf, np.inf
    for a in [1e-1, 1e-2, 1e-3, 1e-4]:
        J = I.with_alpha(a)
        de = max(abs(energy(MESH, u, J) - energy(MESH, u, I)) for u in fields)
        dg = max(MESH.fem.dual_norm((gradient(MESH, u, J) - gradient(MESH, u, I))[MESH.interior])
                 for u in fields)
        assert de < prev_e and dg < prev_g
        prev_e, prev_g = de, dg


def test_residual_norm_zero_at_origin():
    assert residual_norm(MESH, np.zeros(MESH.n_nodes), ProblemParams(SPEC, 0.2)) == 0.0
