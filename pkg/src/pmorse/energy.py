"""Discrete energies, first variations, and the Nehari functional.

Every function takes a mesh, a full nodal vector (or DiscreteField) and a
ProblemParams. Energy and gradient share one quadrature rule, so central
differences of the energy reproduce the gradient up to rounding.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .mesh import DiscreteField, Mesh, norm_eps
from .nonlinearity import (
    NonlinearitySpec,
    eval_F_alpha,
    eval_f,
    eval_f_alpha,
    eval_fprime,
    eval_G_alpha,
    eval_Gprime_alpha,
)


@dataclass(frozen=True, eq=False)
class ProblemParams:
    spec: NonlinearitySpec
    eps: float
    alpha: float = 0.0
    h: np.ndarray | None = None  # nodal values of the forcing, free boundary

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.alpha < 0:
            raise ValueError("alpha must be nonnegative")
        if self.h is not None:
            h = self.h.values if isinstance(self.h, DiscreteField) else self.h
            object.__setattr__(self, "h", np.asarray(h, dtype=float))

    @property
    def p(self) -> float:
        return self.spec.p

    def with_alpha(self, alpha: float) -> "ProblemParams":
        return replace(self, alpha=float(alpha))

    def with_h(self, h) -> "ProblemParams":
        return replace(self, h=h)

    def to_dict(self):
        return {"spec": self.spec.to_dict(), "eps": self.eps, "alpha": self.alpha,
                "has_h": self.h is not None}


def values_of(u) -> np.ndarray:
    return u.values if isinstance(u, DiscreteField) else np.asarray(u, dtype=float)


def flux_coefficient(grad_sq, p, alpha):
    """(alpha + |g|^2)^((p-2)/2), set to 0 where alpha = 0 and g = 0."""
    if alpha > 0:
        return (alpha + grad_sq) ** ((p - 2.0) / 2.0)
    out = np.zeros_like(grad_sq)
    nz = grad_sq > 0
    out[nz] = grad_sq[nz] ** ((p - 2.0) / 2.0)
    return out


def energy_parts(mesh: Mesh, u, params: ProblemParams) -> dict:
    """Separate contributions of the discrete energy."""
    u = values_of(u)
    fem = mesh.fem
    p, a = params.p, params.alpha
    g = fem.grad(u)
    gnorm = np.sqrt(np.sum(g * g, axis=1))
    uq = fem.at_qp(u)
    w = fem.qweights
    parts = {
        "gradient": params.eps ** p * float(np.sum(fem.volume * eval_G_alpha(p, a, gnorm))),
        "mass": float(np.sum(w * eval_G_alpha(p, a, uq))),
        "nonlinear": float(np.sum(w * eval_F_alpha(params.spec, a, uq))),
        "forcing": 0.0,
    }
    if params.h is not None:
        parts["forcing"] = float(np.sum(w * fem.at_qp(params.h) * uq))
    return parts


def energy(mesh: Mesh, u, params: ProblemParams) -> float:
    """I_eps at alpha = 0 without forcing, otherwise J_{eps,alpha,h}."""
    d = energy_parts(mesh, u, params)
    return d["gradient"] + d["mass"] - d["nonlinear"] - d["forcing"]


def _reaction_qp(mesh, uq, params):
    b = eval_Gprime_alpha(params.p, params.alpha, uq) - eval_f_alpha(params.spec, params.alpha, uq)
    if params.h is not None:
        b = b - mesh.fem.at_qp(params.h)
    return b


def gradient(mesh: Mesh, u, params: ProblemParams) -> np.ndarray:
    """Nodal dual coefficients <J'(u), phi_i>; Dirichlet entries set to 0."""
    u = values_of(u)
    fem = mesh.fem
    p = params.p
    g = fem.grad(u)
    coef = flux_coefficient(np.sum(g * g, axis=1), p, params.alpha)
    flux = params.eps ** p * coef[:, None] * g
    local = fem.volume[:, None] * np.einsum("ekd,ed->ek", fem.grads, flux)
    b = _reaction_qp(mesh, fem.at_qp(u), params)
    local += (fem.qweights * b) @ fem.phi
    out = fem.assemble_vector(local)
    out[mesh.boundary] = 0.0
    return out


def pairing(mesh: Mesh, grad_vec: np.ndarray, v) -> float:
    return float(grad_vec @ values_of(v))


def residual_norm(mesh: Mesh, u, params: ProblemParams) -> float:
    """Discrete H^1_0-dual norm of the first variation."""
    g = gradient(mesh, u, params)
    return mesh.fem.dual_norm(g[mesh.interior])


def A_eps(mesh: Mesh, u, params: ProblemParams) -> float:
    """<J'(u), u>; at alpha = 0 and h = 0 this is ||u||^p - int f(u) u."""
    u = values_of(u)
    return float(gradient(mesh, u, params) @ u)


def A_grad_pairing(mesh: Mesh, u, v, params: ProblemParams) -> float:
    """<A'(u), v> for the unregularized functional.

    f' is evaluated only where u > 0; the factors |grad u|^(p-2) and
    |u|^(p-2) are extended by 0 where their arguments vanish.
    """
    u, v = values_of(u), values_of(v)
    fem = mesh.fem
    p, eps, spec = params.p, params.eps, params.spec
    gu, gv = fem.grad(u), fem.grad(v)
    coef = flux_coefficient(np.sum(gu * gu, axis=1), p, 0.0)
    grad_term = p * eps ** p * float(np.sum(fem.volume * coef * np.sum(gu * gv, axis=1)))
    uq, vq = fem.at_qp(u), fem.at_qp(v)
    absu = np.abs(uq)
    mass_coef = np.zeros_like(uq)
    nz = absu > 0
    mass_coef[nz] = absu[nz] ** (p - 2.0)
    fp = np.zeros_like(uq)
    pos = uq > 0
    fp[pos] = eval_fprime(spec, uq[pos])
    integrand = p * mass_coef * uq * vq - (fp * uq + np.asarray(eval_f(spec, uq))) * vq
    return grad_term + float(np.sum(fem.qweights * integrand))


def sobolev_ratio(mesh: Mesh, u, p: float, q: float, eps: float) -> float:
    """int (u^+)^q / ||u||_eps^q, the embedding ratio used for energy floors."""
    u = values_of(u)
    n = norm_eps(mesh, u, p, eps)
    if n == 0:
        return 0.0
    uq = np.maximum(mesh.fem.at_qp(u), 0.0)
    return float(np.sum(mesh.fem.qweights * uq ** q)) / n ** q
