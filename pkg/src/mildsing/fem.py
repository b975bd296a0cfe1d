"""P1 Galerkin assembly, preconditioned CG, discrete norms and the first eigenpair.

Stiffness and mass matrices use exact quadrature (P1 gradients are constant
per element).  Dirichlet conditions are imposed by row/column elimination,
which keeps the operator SPD and hole-node values exactly zero.  The linear
solver is Jacobi-preconditioned conjugate gradients: deterministic and
dependency-free.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp

from .mesh import FieldFunction, Mesh, h1_seminorm

__all__ = [
    "Coefficient",
    "SparseOperator",
    "CGStats",
    "Norms",
    "ConvergenceError",
    "IndefiniteOperatorError",
    "assemble_stiffness",
    "assemble_mass",
    "stiffness_csr",
    "mass_csr",
    "lumped_mass",
    "solve_cg",
    "solve_dirichlet",
    "first_eigenpair",
    "norms",
    "l2_norm",
    "energy_product",
    "dump_operator",
]


class ConvergenceError(RuntimeError):
    """An iteration failed to reach its tolerance; carries diagnostics."""

    def __init__(self, message: str, *, iterations: int = 0, residual: float = float("nan"),
                 history: list | None = None):
        super().__init__(message)
        self.iterations = iterations
        self.residual = residual
        self.history = history or []


class IndefiniteOperatorError(RuntimeError):
    """CG met nonpositive curvature: the operator is not positive definite."""


def _sym_eig_min(mats: np.ndarray) -> np.ndarray:
    """Smallest eigenvalue of the symmetric part, elementwise over ``(n, d, d)``."""
    sym = 0.5 * (mats + np.swapaxes(mats, 1, 2))
    if mats.shape[1] == 1:
        return sym[:, 0, 0]
    tr = sym[:, 0, 0] + sym[:, 1, 1]
    det = sym[:, 0, 0] * sym[:, 1, 1] - sym[:, 0, 1] * sym[:, 1, 0]
    disc = np.sqrt(np.maximum(tr * tr - 4.0 * det, 0.0))
    return 0.5 * (tr - disc)


@dataclass(frozen=True)
class Coefficient:
    """Per-element diffusivity matrices with a verified coercivity constant."""

    matrices: np.ndarray
    alpha: float
    linf: float

    def __post_init__(self) -> None:
        self.matrices.setflags(write=False)

    @classmethod
    def from_matrices(cls, mesh: Mesh, mats: np.ndarray) -> "Coefficient":
        mats = np.asarray(mats, dtype=float)
        expected = (mesh.n_elements, mesh.dim, mesh.dim)
        if mats.shape != expected:
            raise ValueError(f"coefficient shape {mats.shape} != {expected}")
        alpha = float(_sym_eig_min(mats).min())
        if alpha <= 0.0:
            raise ValueError(f"coefficient is not coercive: min eigenvalue {alpha!r} <= 0")
        return cls(mats, alpha, float(np.abs(mats).max()))

    @classmethod
    def isotropic(cls, mesh: Mesh, a: float = 1.0) -> "Coefficient":
        mats = np.broadcast_to(a * np.eye(mesh.dim), (mesh.n_elements, mesh.dim, mesh.dim)).copy()
        return cls.from_matrices(mesh, mats)

    @classmethod
    def identity(cls, mesh: Mesh) -> "Coefficient":
        return cls.isotropic(mesh, 1.0)

    @classmethod
    def constant(cls, mesh: Mesh, mat: np.ndarray) -> "Coefficient":
        mat = np.asarray(mat, dtype=float)
        mats = np.broadcast_to(mat, (mesh.n_elements, mesh.dim, mesh.dim)).copy()
        return cls.from_matrices(mesh, mats)

    @property
    def is_symmetric(self) -> bool:
        return bool(np.array_equal(self.matrices, np.swapaxes(self.matrices, 1, 2)))


@dataclass
class SparseOperator:
    """Symmetric sparse matrix over the free (non-Dirichlet, non-hole) nodes."""

    matrix: sp.csr_matrix
    free: np.ndarray
    mesh: Mesh

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return self.matrix @ x

    def scatter(self, x_free: np.ndarray) -> np.ndarray:
        """Embed a free-node vector into the full nodal vector (zeros elsewhere)."""
        full = np.zeros(self.mesh.n_nodes)
        full[self.free] = x_free
        return full

    def restrict(self, values: np.ndarray) -> np.ndarray:
        return values[self.free]


def stiffness_csr(mesh: Mesh, coeff: Coefficient) -> sp.csr_matrix:
    """Full stiffness matrix ``K_ij = sum_T |T| (A grad phi_j) . grad phi_i``."""
    grads = mesh.grads
    local = np.einsum("e,evd,edc,ewc->evw", mesh.areas, grads, coeff.matrices, grads)
    if coeff.is_symmetric:
        # contraction order is not symmetry-preserving at the last ulp
        local = 0.5 * (local + local.transpose(0, 2, 1))
    nv = mesh.dim + 1
    rows = np.repeat(mesh.elements, nv, axis=1).ravel()
    cols = np.tile(mesh.elements, (1, nv)).ravel()
    K = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(mesh.n_nodes, mesh.n_nodes))
    return K.tocsr()


def mass_csr(mesh: Mesh) -> sp.csr_matrix:
    """Full consistent P1 mass matrix (exact quadrature)."""
    nv = mesh.dim + 1
    local_unit = (np.ones((nv, nv)) + np.eye(nv)) / ((nv) * (nv + 1))
    local = mesh.areas[:, None, None] * local_unit
    rows = np.repeat(mesh.elements, nv, axis=1).ravel()
    cols = np.tile(mesh.elements, (1, nv)).ravel()
    M = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(mesh.n_nodes, mesh.n_nodes))
    return M.tocsr()


def lumped_mass(mesh: Mesh) -> np.ndarray:
    """Diagonal (vertex-quadrature) mass: ``|T| / (dim + 1)`` scattered to vertices."""
    nv = mesh.dim + 1
    out = np.zeros(mesh.n_nodes)
    np.add.at(out, mesh.elements.ravel(), np.repeat(mesh.areas / nv, nv))
    return out


def _restrict(mat: sp.csr_matrix, free: np.ndarray) -> sp.csr_matrix:
    return mat[free][:, free].tocsr()


def assemble_stiffness(mesh: Mesh, coeff: Coefficient) -> SparseOperator:
    """Stiffness operator over the free nodes (Dirichlet/hole rows eliminated)."""
    free = mesh.free_nodes
    return SparseOperator(_restrict(stiffness_csr(mesh, coeff), free), free, mesh)


def assemble_mass(mesh: Mesh, lumped: bool = False) -> SparseOperator:
    """Mass operator over the free nodes; ``lumped=True`` gives the diagonal variant."""
    free = mesh.free_nodes
    if lumped:
        mat = sp.diags(lumped_mass(mesh)[free]).tocsr()
        return SparseOperator(mat, free, mesh)
    return SparseOperator(_restrict(mass_csr(mesh), free), free, mesh)


@dataclass
class CGStats:
    iterations: int
    relative_residual: float
    converged: bool


def solve_cg(op: SparseOperator, rhs: np.ndarray, tol: float = 1e-10,
             maxit: int | None = None, x0: np.ndarray | None = None) -> tuple[np.ndarray, CGStats]:
    """Jacobi-preconditioned CG on the free-node system.

    Returns ``x`` with ``|op x - rhs| <= tol * |rhs|``.  Raises
    ``ConvergenceError`` after ``maxit`` (default ``50 * sqrt(n)``) and
    ``IndefiniteOperatorError`` on negative curvature.  Deterministic.
    """
    A = op.matrix
    n = A.shape[0]
    rhs = np.asarray(rhs, dtype=float)
    if maxit is None:
        maxit = max(100, int(50.0 * np.sqrt(n)) + 1)
    bnorm = float(np.linalg.norm(rhs))
    if bnorm == 0.0:
        return np.zeros(n), CGStats(0, 0.0, True)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    r = rhs - A @ x
    res = float(np.linalg.norm(r))
    if res <= tol * bnorm:
        return x, CGStats(0, res / bnorm, True)
    dinv = 1.0 / A.diagonal()
    z = dinv * r
    p = z.copy()
    rz = float(r @ z)
    for it in range(1, maxit + 1):
        Ap = A @ p
        pAp = float(p @ Ap)
        if pAp <= 0.0:
            raise IndefiniteOperatorError(
                f"nonpositive curvature {pAp!r} at CG iteration {it}"
            )
        a = rz / pAp
        x += a * p
        r -= a * Ap
        res = float(np.linalg.norm(r))
        if res <= tol * bnorm:
            return x, CGStats(it, res / bnorm, True)
        z = dinv * r
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise ConvergenceError(
        f"CG stalled after {maxit} iterations at relative residual {res / bnorm:.3e}",
        iterations=maxit,
        residual=res / bnorm,
    )


def solve_dirichlet(mesh: Mesh, coeff: Coefficient, fixed_mask: np.ndarray,
                    fixed_values: np.ndarray, load: np.ndarray | None = None,
                    tol: float = 1e-10) -> tuple[FieldFunction, CGStats]:
    """Solve ``-div A Du = load`` with arbitrary Dirichlet data via lifting."""
    K = stiffness_csr(mesh, coeff)
    free = np.flatnonzero(~fixed_mask)
    fixed = np.flatnonzero(fixed_mask)
    lift = np.zeros(mesh.n_nodes)
    lift[fixed] = fixed_values[fixed]
    rhs = -np.asarray((K @ lift)[free])
    if load is not None:
        rhs = rhs + load[free]
    op = SparseOperator(_restrict(K, free), free, mesh)
    x, stats = solve_cg(op, rhs, tol=tol)
    full = lift.copy()
    full[free] = x
    return FieldFunction(mesh, full), stats


def _check_symmetric(mat: sp.csr_matrix) -> None:
    diff = (mat - mat.T).tocoo()
    if diff.nnz and float(np.abs(diff.data).max()) > 0.0:
        raise ValueError("operator is not symmetric")


def first_eigenpair(K: SparseOperator, M: SparseOperator, tol: float = 1e-10,
                    maxit: int = 500) -> tuple[float, FieldFunction]:
    """Smallest eigenpair of ``K x = lambda M x`` by inverse power iteration.

    The eigenvector is normalized to ``x' M x = 1`` with its sign fixed so the
    largest-magnitude entry is positive.  Non-convergence raises
    ``ConvergenceError`` carrying the Rayleigh-quotient history.
    """
    _check_symmetric(K.matrix)
    x = np.ones(K.n)
    x /= np.sqrt(float(x @ (M.matrix @ x)))
    lam = float(x @ (K.matrix @ x))
    history = [lam]
    y = x / lam
    for _ in range(maxit):
        y, _ = solve_cg(K, M.matrix @ x, tol=1e-12, x0=y)
        y /= np.sqrt(float(y @ (M.matrix @ y)))
        lam_new = float(y @ (K.matrix @ y))
        history.append(lam_new)
        done = abs(lam_new - lam) <= tol * abs(lam_new)
        x, lam = y, lam_new
        y = x / lam
        if done:
            break
    else:
        raise ConvergenceError(
            f"inverse power iteration stalled after {maxit} iterations",
            iterations=maxit,
            history=history,
        )
    if x[int(np.argmax(np.abs(x)))] < 0:
        x = -x
    return lam, FieldFunction(K.mesh, K.scatter(x))


class Norms(NamedTuple):
    l2: float
    h1semi: float
    linf: float
    energy: float


def l2_norm(u: FieldFunction) -> float:
    """L2 norm via the consistent mass matrix (exact for P1 fields)."""
    return _l2_norm(u.mesh, u.values)


def _l2_norm(mesh: Mesh, values: np.ndarray) -> float:
    nv = mesh.dim + 1
    uv = values[mesh.elements]
    per_el = (uv.sum(axis=1) ** 2 + (uv * uv).sum(axis=1)) / (nv * (nv + 1))
    return float(np.sqrt(np.sum(mesh.areas * per_el)))


def energy_product(u: FieldFunction, coeff: Coefficient, v: FieldFunction | None = None) -> float:
    """``sum_T |T| (A Du) . Dv`` over all elements (``v = u`` by default)."""
    mesh = u.mesh
    gu = np.einsum("evd,ev->ed", mesh.grads, u.values[mesh.elements])
    gv = gu if v is None else np.einsum("evd,ev->ed", mesh.grads, v.values[mesh.elements])
    return float(np.sum(mesh.areas * np.einsum("ed,edc,ec->e", gu, coeff.matrices, gv)))


def norms(u: FieldFunction, coeff: Coefficient) -> Norms:
    """L2 (consistent mass), H1 seminorm, nodal L-infinity and the A-energy ``int A Du.Du``."""
    return Norms(
        l2=_l2_norm(u.mesh, u.values),
        h1semi=h1_seminorm(u),
        linf=float(np.abs(u.values).max()) if u.mesh.n_nodes else 0.0,
        energy=energy_product(u, coeff),
    )


def dump_operator(op: SparseOperator, path) -> None:
    """Coordinate-format text dump ``row col value`` for debugging."""
    coo = op.matrix.tocoo()
    with open(path, "w") as fh:
        for i, j, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{i} {j} {v:.17g}\n")
