"""Second variation, Morse indices, and the Lyapunov-Schmidt reduction."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .energy import ProblemParams, energy, gradient, values_of
from .mesh import Mesh
from .nonlinearity import eval_fprime, eval_Gsecond_alpha, fprime_alpha_terms

TERMS = ("gradient", "gradient_rank_one", "mass", "f_prime", "f_alpha")
DENSE_LIMIT = 1200


class TrustRadiusExceeded(RuntimeError):
    pass


# -- assembly ---------------------------------------------------------------

def _kernels(mesh, u, params, floor=None):
    """Quadrature kernels of the second variation.

    With ``floor`` set, the unregularized kernels are used with |grad u|^2
    and u^2 bounded below by ``floor``; this gives a usable Jacobian at
    alpha = 0 away from the singular set.
    """
    fem = mesh.fem
    p, a, spec = params.p, params.alpha, params.spec
    g = fem.grad(u)
    g2 = np.sum(g * g, axis=1)
    uq = fem.at_qp(u)
    if floor is None:
        base = a + g2
        c1 = base ** ((p - 2.0) / 2.0)
        c2 = -(2.0 - p) * base ** ((p - 4.0) / 2.0)
        mass = eval_Gsecond_alpha(p, a, uq)
        fp1, fp2 = fprime_alpha_terms(spec, a, uq)
    else:
        base = np.maximum(g2, floor)
        c1 = base ** ((p - 2.0) / 2.0)
        c2 = -(2.0 - p) * base ** ((p - 4.0) / 2.0)
        mass = (p - 1.0) * np.maximum(uq * uq, floor) ** ((p - 2.0) / 2.0)
        fp1 = np.zeros_like(uq)
        pos = uq > 0
        fp1[pos] = eval_fprime(spec, np.maximum(uq[pos], np.sqrt(floor)))
        fp2 = np.zeros_like(uq)
    return g, c1, c2, mass, np.asarray(fp1), np.asarray(fp2)


def second_variation(mesh: Mesh, u, params: ProblemParams, terms=TERMS,
                     floor: float | None = None) -> sp.csr_matrix:
    """Interior-node matrix of the second variation with selectable terms."""
    u = values_of(u)
    unknown = set(terms) - set(TERMS)
    if unknown:
        raise ValueError(f"unknown terms {sorted(unknown)}")
    fem = mesh.fem
    eps_p = params.eps ** params.p
    g, c1, c2, mass, fp1, fp2 = _kernels(mesh, u, params, floor)
    k = mesh.elements.shape[1]
    local = np.zeros((len(mesh.elements), k, k))
    if "gradient" in terms:
        local += (eps_p * fem.volume * c1)[:, None, None] * np.einsum(
            "ead,ebd->eab", fem.grads, fem.grads)
    if "gradient_rank_one" in terms:
        proj = np.einsum("ead,ed->ea", fem.grads, g)
        local += (eps_p * fem.volume * c2)[:, None, None] * proj[:, :, None] * proj[:, None, :]
    coef = np.zeros_like(mass)
    if "mass" in terms:
        coef += mass
    if "f_prime" in terms:
        coef -= fp1
    if "f_alpha" in terms:
        coef -= fp2
    if any(t in terms for t in ("mass", "f_prime", "f_alpha")):
        local += fem.mass_local(coef)
    B = fem.assemble_matrix(local)
    return ((B + B.T) * 0.5).tocsr()


@dataclass(eq=False)
class QuadFormPair:
    B: sp.csr_matrix
    S: sp.csr_matrix
    M: sp.csr_matrix
    mesh: Mesh
    u: np.ndarray
    alpha: float
    # pointwise bound: B >= -neg_mass * M
    neg_mass: float = 0.0

    @property
    def dim(self) -> int:
        return self.B.shape[0]


def assemble_B(mesh: Mesh, u, params: ProblemParams, terms=TERMS) -> QuadFormPair:
    if params.alpha <= 0:
        raise ValueError("the second variation is only assembled for alpha > 0")
    u = values_of(u)
    B = second_variation(mesh, u, params, terms)
    _, _, _, mass, fp1, fp2 = _kernels(mesh, u, params)
    neg = float(max(0.0, np.max(fp1 + fp2 - mass)))
    fem = mesh.fem
    return QuadFormPair(B, fem.stiffness, fem.mass, mesh, u.copy(), params.alpha, neg)


# -- spectra ----------------------------------------------------------------

@dataclass
class MorseReport:
    m: int
    m_star: int
    degeneracy_tol: float
    eigenvalues: list = field(default_factory=list)  # lowest generalized eigenvalues
    delta_hat: float | None = None
    method: str = "dense"

    @property
    def gap(self) -> int:
        return self.m_star - self.m

    @property
    def predicted_poly(self):
        return predict_critical_groups(self)

    def to_dict(self):
        return {"m": self.m, "m_star": self.m_star, "delta_hat": self.delta_hat,
                "degeneracy_tol": self.degeneracy_tol, "predicted_poly": self.predicted_poly}


def _start(n: int) -> np.ndarray:
    """Fixed ARPACK start vector, so repeated runs give identical reports."""
    return np.ones(n)


def _lowest_stiffness_eig(pair) -> float:
    lam = spla.eigsh(pair.S.tocsc(), k=1, M=pair.M.tocsc(), sigma=0.0, which="LM",
                     return_eigenvectors=False, v0=_start(pair.dim))
    return float(lam[0])


def _shift_below(pair) -> float:
    """A shift strictly below every eigenvalue of (B, S)."""
    lam1 = _lowest_stiffness_eig(pair)
    return -1.01 * pair.neg_mass / lam1 - 1e-3


def spectral_scale(pair) -> float:
    """Largest generalized eigenvalue of (B, S)."""
    n = pair.dim
    if n <= DENSE_LIMIT:
        return float(sla.eigh(pair.B.toarray(), pair.S.toarray(), eigvals_only=True,
                              subset_by_index=[n - 1, n - 1])[0])
    lu = spla.splu(pair.S.tocsc())
    Minv = spla.LinearOperator((n, n), matvec=lu.solve, dtype=float)
    lam = spla.eigsh(pair.B, k=1, M=pair.S, Minv=Minv, which="LA", return_eigenvectors=False,
                     tol=1e-6, v0=_start(n))
    return float(lam[0])


def generalized_eigs_dense(pair) -> np.ndarray:
    return sla.eigh(pair.B.toarray(), pair.S.toarray(), eigvals_only=True)


def lowest_generalized_eigs(pair, tol: float, k0: int = 6):
    """Eigenvalues of (B, S) from the bottom up, until one exceeds ``tol``."""
    n = pair.dim
    sigma = _shift_below(pair)
    lu = spla.splu((pair.B - sigma * pair.S).tocsc())
    OPinv = spla.LinearOperator((n, n), matvec=lu.solve, dtype=float)
    k = min(k0, n - 2)
    while True:
        lam = np.sort(spla.eigsh(pair.B, k=k, M=pair.S, sigma=sigma, OPinv=OPinv, which="LM",
                                 return_eigenvectors=False, tol=1e-12, v0=_start(n)))
        if lam[-1] > tol or k >= n - 2:
            return lam
        k = min(2 * k, n - 2)


def morse_index(pair: QuadFormPair, method: str = "auto", tol: float | None = None) -> MorseReport:
    """Counts of generalized eigenvalues of (B, S) below -tol (m) and at most +tol (m*)."""
    if method == "auto":
        method = "dense" if pair.dim <= DENSE_LIMIT else "iterative"
    if method == "dense":
        lam = generalized_eigs_dense(pair)
        if tol is None:
            tol = 1e-8 * float(np.max(np.abs(lam)))
    elif method == "iterative":
        if tol is None:
            tol = 1e-8 * abs(spectral_scale(pair))
        lam = lowest_generalized_eigs(pair, tol)
    else:
        raise ValueError(f"unknown method {method!r}")
    m = int(np.sum(lam < -tol))
    m_star = int(np.sum(lam <= tol))
    return MorseReport(m, m_star, tol, [float(x) for x in lam[:max(m_star + 3, 3)]], method=method)


def predict_critical_groups(report: MorseReport):
    """Coefficients of t^m when m = m*, else None (degenerate)."""
    if report.m != report.m_star:
        return None
    return [0] * report.m + [1]


# -- V / W splitting and the reduction --------------------------------------

@dataclass(eq=False)
class Splitting:
    V: np.ndarray  # (n, m*) L2-orthonormal columns
    U: np.ndarray  # M V: w lies in W iff U^T w = 0
    delta_hat: float
    pair: QuadFormPair

    def project_W(self, z: np.ndarray) -> np.ndarray:
        return z - self.V @ (self.U.T @ z)

    def max_l2_coupling(self, W_samples: np.ndarray) -> float:
        return float(np.max(np.abs(self.U.T @ W_samples))) if self.V.size else 0.0


def _kkt_solver(A, U):
    n, k = U.shape
    if k == 0:
        lu = spla.splu(A.tocsc())
        return lambda rhs: lu.solve(rhs)
    K = sp.bmat([[A, sp.csr_matrix(U)], [sp.csr_matrix(U.T), None]]).tocsc()
    lu = spla.splu(K)
    return lambda rhs: lu.solve(np.concatenate([rhs, np.zeros(k)]))[:n]


def w_restricted_min(pair: QuadFormPair, U: np.ndarray) -> float:
    """min over {U^T w = 0} of B(w, w) / S(w, w)."""
    n, k = U.shape
    if n - k <= DENSE_LIMIT:
        Z = sla.null_space(U.T) if k else np.eye(n)
        Bd, Sd = pair.B.toarray(), pair.S.toarray()
        return float(sla.eigh(Z.T @ Bd @ Z, Z.T @ Sd @ Z, eigvals_only=True,
                              subset_by_index=[0, 0])[0])
    sigma = _shift_below(pair)
    solve = _kkt_solver(pair.B - sigma * pair.S, U)
    # the bordered solve maps every right-hand side into W, so shift-invert
    # only sees the constrained spectrum
    OPinv = spla.LinearOperator((n, n), matvec=solve, dtype=float)
    lam = spla.eigsh(pair.B, k=1, M=pair.S, sigma=sigma, OPinv=OPinv, which="LM",
                     return_eigenvectors=False, tol=1e-10, v0=_start(n))
    return float(lam[0])


def split_VW(pair: QuadFormPair, report: MorseReport | None = None) -> Splitting:
    """V: lowest m* eigenvectors of B relative to the L2 mass, L2-orthonormal.

    W is the L2-orthogonal complement; ``delta_hat`` is the smallest
    Rayleigh quotient B(w, w) / S(w, w) over W.
    """
    if report is None:
        report = morse_index(pair)
    k = report.m_star
    n = pair.dim
    if k == 0:
        V = np.zeros((n, 0))
    elif n <= DENSE_LIMIT:
        _, vecs = sla.eigh(pair.B.toarray(), pair.M.toarray(), subset_by_index=[0, k - 1])
        V = vecs
    else:
        sigma = -1.01 * pair.neg_mass - 1e-3
        _, vecs = spla.eigsh(pair.B, k=k, M=pair.M, sigma=sigma, which="LM", tol=1e-12,
                               v0=_start(n))
        V = vecs
    if k:
        # re-orthonormalize in the mass inner product
        G = V.T @ (pair.M @ V)
        L = np.linalg.cholesky(G)
        V = np.linalg.solve(L, V.T).T
    U = pair.M @ V if k else np.zeros((n, 0))
    delta = w_restricted_min(pair, U)
    report.delta_hat = delta
    return Splitting(V, np.asarray(U), delta, pair)


@dataclass
class ReductionResult:
    psi: np.ndarray  # interior coefficients, lies in W
    reduced_energy: float
    reduced_gradient: np.ndarray
    iterations: int
    w_residual: float


def reduce_LS(mesh: Mesh, u_i, split: Splitting, v_coords, params: ProblemParams,
              budget: int = 30, tol: float = 1e-11, psi0=None) -> ReductionResult:
    """Solve the W-restricted stationarity for psi and evaluate the reduced map.

    u = u_i + V c + psi with psi in W; Newton steps use the bordered system
    [[B, U], [U^T, 0]].
    """
    u_i = values_of(u_i)
    fem = mesh.fem
    c = np.atleast_1d(np.asarray(v_coords, dtype=float))
    V, U = split.V, split.U
    base = u_i[mesh.interior] + (V @ c if V.size else 0.0)
    psi = np.zeros(fem.n_int) if psi0 is None else np.array(psi0, dtype=float)
    r_w = np.inf
    for it in range(budget + 1):
        full = fem.extend(base + psi)
        g = gradient(mesh, full, params)[mesh.interior]
        r_w = _w_residual(fem, g, U)
        if r_w <= tol:
            break
        if it == budget:
            raise TrustRadiusExceeded(f"W-restricted Newton did not converge (residual {r_w:.3e})")
        B = second_variation(mesh, full, params)
        step = _kkt_solver(B, U)(-g)
        psi = psi + step
        if not np.all(np.isfinite(psi)):
            raise TrustRadiusExceeded("W-restricted Newton diverged")
    full = fem.extend(base + psi)
    g = gradient(mesh, full, params)[mesh.interior]
    red_grad = V.T @ g if V.size else np.zeros(0)
    return ReductionResult(psi, energy(mesh, full, params), red_grad, it, r_w)


def _w_residual(fem, g, U):
    """Dual norm of the first variation restricted to W."""
    if U.shape[1] == 0:
        return fem.dual_norm(g)
    SinvU = np.column_stack([fem.stiffness_solver.solve(U[:, j]) for j in range(U.shape[1])])
    Sinvg = fem.stiffness_solver.solve(g)
    coef = np.linalg.solve(U.T @ SinvU, U.T @ Sinvg)
    r = g - U @ coef
    return fem.dual_norm(r)


def tube_certificate(mesh: Mesh, u_i, split: Splitting, v_coords, params: ProblemParams,
                     result: ReductionResult | None = None) -> float:
    """Smallest Rayleigh quotient B/S over W at u_i + V c + psi(c)."""
    if result is None:
        result = reduce_LS(mesh, u_i, split, v_coords, params)
    fem = mesh.fem
    c = np.atleast_1d(np.asarray(v_coords, dtype=float))
    base = values_of(u_i)[mesh.interior] + (split.V @ c if split.V.size else 0.0)
    full = fem.extend(base + result.psi)
    pair = assemble_B(mesh, full, params)
    return w_restricted_min(pair, split.U)


def nondegeneracy_certificate(mesh: Mesh, u, params: ProblemParams) -> tuple[bool, MorseReport]:
    """Pass iff no generalized eigenvalue lies within the degeneracy band."""
    report = morse_index(assemble_B(mesh, u, params))
    return report.m == report.m_star, report
