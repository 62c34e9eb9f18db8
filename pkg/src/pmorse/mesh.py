"""Structured simplicial meshes, P1 quadrature, and discrete norms."""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

INTERVAL = "interval"
RECTANGLE = "rectangle"
DISK = "disk"
ANNULUS = "annulus"

# Degree-4 rule on the reference triangle (6 points), barycentric coordinates.
_TRI_A, _TRI_B = 0.445948490915965, 0.091576213509771
_TRI_PTS = np.array([
    [1 - 2 * _TRI_A, _TRI_A, _TRI_A],
    [_TRI_A, 1 - 2 * _TRI_A, _TRI_A],
    [_TRI_A, _TRI_A, 1 - 2 * _TRI_A],
    [1 - 2 * _TRI_B, _TRI_B, _TRI_B],
    [_TRI_B, 1 - 2 * _TRI_B, _TRI_B],
    [_TRI_B, _TRI_B, 1 - 2 * _TRI_B],
])
_TRI_W = np.array([0.223381589678011] * 3 + [0.109951743655322] * 3)

# 3-point Gauss-Legendre on [0, 1] (exact to degree 5)
_g = math.sqrt(3.0 / 5.0) / 2.0
_SEG_PTS = np.array([[0.5 + _g, 0.5 - _g], [0.5, 0.5], [0.5 - _g, 0.5 + _g]])
_SEG_W = np.array([5.0, 8.0, 5.0]) / 18.0


@dataclass(frozen=True)
class DomainSpec:
    shape: str
    size: tuple[float, ...]
    center: tuple[float, ...] = (0.0, 0.0)

    def __post_init__(self):
        n = {INTERVAL: 2, RECTANGLE: 2, DISK: 1, ANNULUS: 2}.get(self.shape)
        if n is None:
            raise ValueError(f"unknown domain shape {self.shape!r}")
        if len(self.size) != n:
            raise ValueError(f"{self.shape} takes {n} size parameters")
        if self.shape == INTERVAL:
            a, b = self.size
            if not b > a:
                raise ValueError("interval needs a < b")
        elif self.shape == ANNULUS:
            r0, r1 = self.size
            if not 0 < r0 < r1:
                raise ValueError(f"annulus needs 0 < r0 < r1, got {self.size}")
        elif min(self.size) <= 0:
            raise ValueError("domain lengths must be positive")

    @classmethod
    def interval(cls, a=0.0, b=1.0):
        return cls(INTERVAL, (float(a), float(b)), (0.0,))

    @classmethod
    def rectangle(cls, width, height, origin=(0.0, 0.0)):
        return cls(RECTANGLE, (float(width), float(height)), tuple(map(float, origin)))

    @classmethod
    def disk(cls, radius=1.0, center=(0.0, 0.0)):
        return cls(DISK, (float(radius),), tuple(map(float, center)))

    @classmethod
    def annulus(cls, r0, r1, center=(0.0, 0.0)):
        return cls(ANNULUS, (float(r0), float(r1)), tuple(map(float, center)))

    @property
    def dim(self) -> int:
        return 1 if self.shape == INTERVAL else 2

    @property
    def measure(self) -> float:
        if self.shape == INTERVAL:
            return self.size[1] - self.size[0]
        if self.shape == RECTANGLE:
            return self.size[0] * self.size[1]
        if self.shape == DISK:
            return math.pi * self.size[0] ** 2
        return math.pi * (self.size[1] ** 2 - self.size[0] ** 2)

    @property
    def diameter(self) -> float:
        if self.shape == INTERVAL:
            return self.size[1] - self.size[0]
        if self.shape == RECTANGLE:
            return math.hypot(*self.size)
        return 2.0 * self.size[-1]

    def to_dict(self):
        return {"shape": self.shape, "size": list(self.size), "center": list(self.center)}

    @classmethod
    def from_dict(cls, d):
        return cls(d["shape"], tuple(map(float, d["size"])),
                   tuple(map(float, d.get("center", (0.0, 0.0)))))


@dataclass(frozen=True, eq=False)
class Mesh:
    nodes: np.ndarray
    elements: np.ndarray
    boundary: np.ndarray
    domain: DomainSpec | None = None

    @property
    def dim(self) -> int:
        return self.nodes.shape[1]

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @cached_property
    def interior(self) -> np.ndarray:
        return np.flatnonzero(~self.boundary)

    @cached_property
    def h_mesh(self) -> float:
        X = self.nodes[self.elements]
        k = X.shape[1]
        diam = 0.0
        for i in range(k):
            for j in range(i + 1, k):
                diam = max(diam, float(np.max(np.linalg.norm(X[:, i] - X[:, j], axis=1))))
        return diam

    @cached_property
    def mesh_hash(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.nodes, dtype=float).tobytes())
        h.update(np.ascontiguousarray(self.elements, dtype=np.int64).tobytes())
        return h.hexdigest()[:16]

    @cached_property
    def fem(self) -> "P1Space":
        return P1Space(self)

    def to_dict(self):
        return {"nodes": self.nodes.tolist(), "elements": self.elements.tolist(),
                "boundary": np.flatnonzero(self.boundary).tolist()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d, domain=None):
        nodes = np.asarray(d["nodes"], dtype=float)
        if nodes.ndim == 1:
            nodes = nodes[:, None]
        bnd = np.zeros(len(nodes), dtype=bool)
        bnd[np.asarray(d["boundary"], dtype=int)] = True
        return cls(nodes, np.asarray(d["elements"], dtype=np.int64), bnd, domain)

    def edges(self) -> np.ndarray:
        """Unique undirected edges as sorted node pairs."""
        e = self.elements
        k = e.shape[1]
        pairs = np.concatenate([e[:, [i, j]] for i in range(k) for j in range(i + 1, k)])
        pairs.sort(axis=1)
        return np.unique(pairs, axis=0)


@dataclass
class DiscreteField:
    """Nodal coefficients of a P1 function on ``mesh``.

    Unless ``free_boundary`` is set, the Dirichlet entries must vanish.
    """

    mesh: Mesh
    values: np.ndarray
    free_boundary: bool = False

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.mesh.n_nodes,):
            raise ValueError("field length must equal the node count")
        if not self.free_boundary and np.any(self.values[self.mesh.boundary] != 0.0):
            raise ValueError("Dirichlet entries of a constrained field must be exactly 0")

    def to_dict(self):
        return {"mesh_hash": self.mesh.mesh_hash, "values": self.values.tolist()}


def build_mesh(domain: DomainSpec, target_h: float) -> Mesh:
    """Deterministic conforming mesh with max element diameter <= 1.5 target_h."""
    if not 0 < target_h < domain.diameter:
        raise ValueError("target_h must be positive and smaller than the domain diameter")
    builder = {INTERVAL: _interval, RECTANGLE: _rectangle, DISK: _disk, ANNULUS: _annulus}
    nodes, elements, boundary = builder[domain.shape](domain, target_h)
    elements = _orient(nodes, np.asarray(elements, dtype=np.int64))
    return Mesh(nodes, elements, boundary, domain)


def _orient(nodes, elements):
    if nodes.shape[1] != 2:
        return elements
    X = nodes[elements]
    det = ((X[:, 1, 0] - X[:, 0, 0]) * (X[:, 2, 1] - X[:, 0, 1])
           - (X[:, 1, 1] - X[:, 0, 1]) * (X[:, 2, 0] - X[:, 0, 0]))
    flip = det < 0
    elements = elements.copy()
    elements[flip, 1], elements[flip, 2] = elements[flip, 2], elements[flip, 1].copy()
    return elements


def _interval(domain, h):
    a, b = domain.size
    n = int(math.ceil((b - a) / h - 1e-12))
    x = np.linspace(a, b, n + 1)
    elements = np.column_stack([np.arange(n), np.arange(1, n + 1)])
    boundary = np.zeros(n + 1, dtype=bool)
    boundary[[0, n]] = True
    return x[:, None], elements, boundary


def _rectangle(domain, h):
    w, ht = domain.size
    ox, oy = domain.center
    nx = int(math.ceil(w / h - 1e-12))
    ny = int(math.ceil(ht / h - 1e-12))
    xs = ox + np.linspace(0.0, w, nx + 1)
    ys = oy + np.linspace(0.0, ht, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    nodes = np.column_stack([X.ravel(), Y.ravel()])
    idx = np.arange((nx + 1) * (ny + 1)).reshape(ny + 1, nx + 1)
    a, b = idx[:-1, :-1].ravel(), idx[:-1, 1:].ravel()
    c, d = idx[1:, 1:].ravel(), idx[1:, :-1].ravel()
    elements = np.concatenate([np.column_stack([a, b, c]), np.column_stack([a, c, d])])
    boundary = np.zeros(len(nodes), dtype=bool)
    boundary[idx[0]] = boundary[idx[-1]] = boundary[idx[:, 0]] = boundary[idx[:, -1]] = True
    return nodes, elements, boundary


def _ring(center, r, n):
    th = 2.0 * np.pi * np.arange(n) / n
    return np.column_stack([center[0] + r * np.cos(th), center[1] + r * np.sin(th)])


def _zipper(inner, outer):
    """Triangulate the strip between two closed rings of node indices."""
    ni, no = len(inner), len(outer)
    tris = []
    i = j = 0
    while i < ni or j < no:
        next_in = (i + 1) / ni
        next_out = (j + 1) / no
        if j < no and (i >= ni or next_out <= next_in):
            tris.append((inner[i % ni], outer[j % no], outer[(j + 1) % no]))
            j += 1
        else:
            tris.append((inner[i % ni], outer[j % no], inner[(i + 1) % ni]))
            i += 1
    return tris


def _disk(domain, h):
    (R,), c = domain.size, domain.center
    K = int(math.ceil(R / h - 1e-12))
    pts = [np.array([c])]
    rings = [np.array([0])]
    count = 1
    for k in range(1, K + 1):
        # angular spacing 0.75 dr keeps the polygonal area error well below dr^2
        n = max(6, int(math.ceil(2.0 * np.pi * k / 0.75)))
        pts.append(_ring(c, R * k / K, n))
        rings.append(np.arange(count, count + n))
        count += n
    nodes = np.concatenate(pts)
    tris = [(0, rings[1][j], rings[1][(j + 1) % len(rings[1])]) for j in range(len(rings[1]))]
    for k in range(2, K + 1):
        tris.extend(_zipper(rings[k - 1], rings[k]))
    boundary = np.zeros(len(nodes), dtype=bool)
    boundary[rings[K]] = True
    return nodes, np.array(tris), boundary


def _annulus(domain, h):
    (r0, r1), c = domain.size, domain.center
    nth = int(math.ceil(2.0 * np.pi * r1 / h - 1e-12))
    nr = int(math.ceil((r1 - r0) / h - 1e-12))
    nodes = np.concatenate([_ring(c, r0 + (r1 - r0) * k / nr, nth) for k in range(nr + 1)])
    idx = np.arange((nr + 1) * nth).reshape(nr + 1, nth)
    a = idx[:-1].ravel()
    b = idx[1:].ravel()
    bn = np.roll(idx[1:], -1, axis=1).ravel()
    an = np.roll(idx[:-1], -1, axis=1).ravel()
    elements = np.concatenate([np.column_stack([a, b, bn]), np.column_stack([a, bn, an])])
    boundary = np.zeros(len(nodes), dtype=bool)
    boundary[idx[0]] = boundary[idx[-1]] = True
    return nodes, elements, boundary


def rotation_permutation(mesh: Mesh, steps: int = 1) -> np.ndarray:
    """Node permutation realizing rotation by ``steps`` angular periods of an
    annulus mesh: ``u_rot = u[perm]``."""
    d = mesh.domain
    if d is None or d.shape != ANNULUS:
        raise ValueError("rotation permutation is only defined for annulus meshes")
    # nodes are stored ring by ring with a common angular count
    xy = mesh.nodes - np.asarray(d.center)
    radii = np.round(np.hypot(xy[:, 0], xy[:, 1]), 12)
    nth = int(np.sum(radii == radii[0]))
    nrings = mesh.n_nodes // nth
    idx = np.arange(mesh.n_nodes).reshape(nrings, nth)
    return np.roll(idx, steps, axis=1).ravel()


class P1Space:
    """Per-mesh P1 data: basis gradients, quadrature, and sparse patterns."""

    def __init__(self, mesh: Mesh):
        self.mesh = mesh
        nodes, el = mesh.nodes, mesh.elements
        d = mesh.dim
        X = nodes[el]  # (ne, d+1, d)
        J = np.transpose(X[:, 1:, :] - X[:, :1, :], (0, 2, 1))  # columns = edge vectors
        det = np.linalg.det(J)
        if np.any(np.abs(det) <= 0):
            raise ValueError("degenerate element")
        self.volume = np.abs(det) / math.factorial(d)
        ref = np.vstack([-np.ones((1, d)), np.eye(d)])  # (d+1, d)
        self.grads = ref[None, :, :] @ np.linalg.inv(J)  # (ne, d+1, d)
        if d == 1:
            self.phi, w = _SEG_PTS, _SEG_W
        else:
            self.phi, w = _TRI_PTS, _TRI_W
        self.qweights = self.volume[:, None] * w[None, :]  # (ne, nq)
        self.qpoints = np.einsum("qk,ekd->eqd", self.phi, X)
        self.n = mesh.n_nodes
        self.interior = mesh.interior
        self._build_pattern()

    # -- evaluation -------------------------------------------------------

    def at_qp(self, u: np.ndarray) -> np.ndarray:
        return u[self.mesh.elements] @ self.phi.T

    def grad(self, u: np.ndarray) -> np.ndarray:
        return np.einsum("ekd,ek->ed", self.grads, u[self.mesh.elements])

    # -- assembly ---------------------------------------------------------

    def _build_pattern(self):
        el = self.mesh.elements
        k = el.shape[1]
        full_index = -np.ones(self.n, dtype=np.int64)
        full_index[self.interior] = np.arange(len(self.interior))
        rows = np.repeat(el[:, :, None], k, axis=2)
        cols = np.repeat(el[:, None, :], k, axis=1)
        ri, ci = full_index[rows].ravel(), full_index[cols].ravel()
        keep = (ri >= 0) & (ci >= 0)
        ni = len(self.interior)
        key = ri[keep] * ni + ci[keep]
        uniq, inv = np.unique(key, return_inverse=True)
        self._keep = keep
        self._inv = inv
        self._nnz = len(uniq)
        r_u, c_u = uniq // ni, uniq % ni
        self._indices = c_u.astype(np.int32)
        self._indptr = np.searchsorted(r_u, np.arange(ni + 1)).astype(np.int32)
        self.n_int = ni

    def assemble_matrix(self, local: np.ndarray) -> sp.csr_matrix:
        """Sum element matrices (ne, k, k) into the interior-node CSR matrix."""
        data = np.bincount(self._inv, weights=local.ravel()[self._keep], minlength=self._nnz)
        return sp.csr_matrix((data, self._indices, self._indptr), shape=(self.n_int, self.n_int))

    def assemble_vector(self, local: np.ndarray) -> np.ndarray:
        """Sum element vectors (ne, k) into a full nodal vector."""
        return np.bincount(self.mesh.elements.ravel(), weights=local.ravel(), minlength=self.n)

    def mass_local(self, coef_qp: np.ndarray) -> np.ndarray:
        """Element matrices of int coef * phi_a phi_b with coefficient at quadrature points."""
        return np.einsum("eq,qa,qb->eab", self.qweights * coef_qp, self.phi, self.phi)

    @cached_property
    def stiffness(self) -> sp.csr_matrix:
        local = self.volume[:, None, None] * np.einsum("ead,ebd->eab", self.grads, self.grads)
        return self.assemble_matrix(local)

    @cached_property
    def mass(self) -> sp.csr_matrix:
        return self.assemble_matrix(self.mass_local(np.ones_like(self.qweights)))

    @cached_property
    def mass_full(self) -> sp.csr_matrix:
        local = self.mass_local(np.ones_like(self.qweights))
        k = local.shape[1]
        el = self.mesh.elements
        rows = np.repeat(el[:, :, None], k, axis=2).ravel()
        cols = np.repeat(el[:, None, :], k, axis=1).ravel()
        return sp.coo_matrix((local.ravel(), (rows, cols)), shape=(self.n, self.n)).tocsr()

    @cached_property
    def stiffness_solver(self):
        return spla.splu(self.stiffness.tocsc())

    def dual_norm(self, g_int: np.ndarray) -> float:
        """H^1_0-dual norm sqrt(g^T S^{-1} g) of interior dual coefficients."""
        return math.sqrt(max(float(g_int @ self.stiffness_solver.solve(g_int)), 0.0))

    def h1_norm(self, u_int: np.ndarray) -> float:
        return math.sqrt(max(float(u_int @ (self.stiffness @ u_int)), 0.0))

    def restrict(self, u: np.ndarray) -> np.ndarray:
        return u[self.interior]

    def extend(self, u_int: np.ndarray) -> np.ndarray:
        out = np.zeros(self.n)
        out[self.interior] = u_int
        return out


def integrate(mesh: Mesh, integrand) -> float:
    """Quadrature of ``integrand`` over the mesh.

    ``integrand`` receives quadrature points of shape (ne, nq, dim) and
    returns values of shape (ne, nq) (or a broadcastable scalar).
    """
    fem = mesh.fem
    vals = np.broadcast_to(np.asarray(integrand(fem.qpoints), dtype=float), fem.qweights.shape)
    return float(np.sum(fem.qweights * vals))


def norm_eps(mesh: Mesh, u: np.ndarray, p: float, eps: float) -> float:
    fem = mesh.fem
    gu = fem.grad(u)
    grad_part = np.sum(fem.volume * np.sum(gu * gu, axis=1) ** (p / 2.0))
    mass_part = np.sum(fem.qweights * np.abs(fem.at_qp(u)) ** p)
    return float((eps ** p * grad_part + mass_part) ** (1.0 / p))


def c1_norm(mesh: Mesh, h: np.ndarray) -> float:
    """Nodal max of |h| plus element max of |grad h|."""
    gh = mesh.fem.grad(np.asarray(h, dtype=float))
    return float(np.max(np.abs(h)) + np.max(np.linalg.norm(gh, axis=1)))


def field_dump(mesh: Mesh, values: np.ndarray) -> dict:
    return {"mesh_hash": mesh.mesh_hash, "values": np.asarray(values, dtype=float).tolist()}
