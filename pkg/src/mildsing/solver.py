"""Truncated fixed-point solver for ``-div A(x) Du (+ mu u) = F(x, u)``.

The level-``n`` problem caps the right-hand side at height ``n`` and is
solved by a damped Picard iteration

    ``u <- (1 - theta) u + theta K^-1 (m .* min(F(x, u+), n))``

with nodal (vertex) quadrature ``m`` for the load, so the possibly singular
``F`` is only ever evaluated at nodes and the cap keeps every value finite.
Levels follow a doubling schedule with warm starts; the outer iteration
stops when consecutive levels are Cauchy in the H1 seminorm.  The optional
``mu`` adds a zeroth-order absorption ``mu u`` (lumped), which is the limit
operator produced by shrinking perforations.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .cutoffs import gk, z_delta
from .fem import (
    Coefficient,
    ConvergenceError,
    SparseOperator,
    assemble_stiffness,
    energy_product,
    lumped_mass,
    solve_cg,
)
from .mesh import FieldFunction, Mesh, h1_seminorm
from .nonlinearity import Nonlinearity

__all__ = [
    "SolverConfig",
    "LevelStats",
    "SolveReport",
    "truncated_rhs",
    "solve_level",
    "solve_singular",
    "singular_mass_certificate",
    "zero_set_diagnostics",
    "ZeroSetReport",
    "levelset_energy_certificate",
]


@dataclass(frozen=True)
class SolverConfig:
    """Tolerances and limits for the inner (Picard) and outer (level) loops.

    ``inner_tol`` bounds the undamped fixed-point residual
    ``|K^-1 load(u) - u|_H1`` relative to ``|u|_H1`` (plus the absolute
    floor); ``outer_tol`` bounds the level-to-level gap the same way.
    """

    inner_tol: float = 1e-8
    inner_tol_abs: float = 1e-12
    max_inner: int = 800
    outer_tol: float = 1e-6
    outer_tol_abs: float = 1e-10
    max_levels: int = 24
    n_start: float = 1.0
    theta0: float = 0.5
    slope_damping: float = 2.0
    cg_tol: float = 1e-11
    cg_maxit: int | None = None


@dataclass
class LevelStats:
    n: float
    iterations: int
    residual: float
    converged: bool
    theta: float
    cg_iterations: int


@dataclass
class SolveReport:
    """Converged solution plus the scheme's own bookkeeping."""

    u: FieldFunction
    n_final: float
    outer_iters: int
    inner_iters: int
    energy_identity_residual: float
    history: list[float]
    h1_norms: list[float]
    level_stats: list[LevelStats] = field(repr=False, default_factory=list)
    mu: float = 0.0
    converged: bool = True

    @property
    def final_gap(self) -> float:
        return self.history[-1] if self.history else 0.0


@dataclass
class _System:
    """Assembled operator shared across levels of one solve."""

    op: SparseOperator
    ml: np.ndarray
    mu: float


def _build_system(mesh: Mesh, coeff: Coefficient, mu: float) -> _System:
    K = assemble_stiffness(mesh, coeff)
    ml = lumped_mass(mesh)
    if mu != 0.0:
        mat = (K.matrix + sp.diags(mu * ml[K.free])).tocsr()
        op = SparseOperator(mat, K.free, mesh)
    else:
        op = K
    return _System(op, ml, mu)


def truncated_rhs(F: Nonlinearity, u: FieldFunction, n: float) -> FieldFunction:
    """Nodal ``min(F(x, max(u, 0)), n)``: finite by construction, even at ``u = 0``."""
    if not n >= 1.0:
        raise ValueError(f"truncation level must be >= 1, got {n!r}")
    vals = np.minimum(F.evaluate(np.maximum(u.values, 0.0)), float(n))
    return FieldFunction(u.mesh, vals)


def _slope_weights(F: Nonlinearity, u_full: np.ndarray, n: float, sys_: _System,
                   c0: float) -> np.ndarray:
    """Per-node damping weights ``1 / (1 + c0 m_i |dF/ds| / K_ii)``.

    Oscillating nonlinearities carry slopes of either sign that dwarf the
    local operator stiffness in the thin band where the solution is small;
    a single global damping factor provably cannot stabilize those nodes
    (the fixed-point Jacobian acquires eigenvalues beyond 1), while
    slope-scaled local damping lets each such node settle into an
    attracting branch.  The slope of the capped right-hand side is probed
    by differences small enough to resolve the oscillation scale ``s**2``.
    """
    free = sys_.op.free
    s = np.maximum(u_full, 0.0)
    eps = np.minimum(1e-3 * np.maximum(s, 1e-8), 0.02 * s * s) + 1e-14
    up = np.minimum(F.evaluate(s + eps), n)
    dn = np.minimum(F.evaluate(np.maximum(s - eps, 0.0)), n)
    slope = np.abs(up - dn)[free] / (2.0 * eps[free])
    kdiag = sys_.op.matrix.diagonal()
    return 1.0 / (1.0 + c0 * sys_.ml[free] * slope / kdiag)


def solve_level(mesh: Mesh, coeff: Coefficient, F: Nonlinearity, n: float,
                cfg: SolverConfig = SolverConfig(), u0: FieldFunction | None = None,
                mu: float = 0.0, system: _System | None = None
                ) -> tuple[FieldFunction, LevelStats]:
    """Damped Picard iteration for the level-``n`` capped problem.

    Non-convergence is reported in the returned stats (``converged=False``
    with the residual oscillation amplitude), not raised: near-degenerate
    right-hand sides legitimately stall and the caller decides.
    """
    sys_ = system or _build_system(mesh, coeff, mu)
    free = sys_.op.free
    mlf = sys_.ml[free]

    u_full = np.zeros(mesh.n_nodes)
    if u0 is not None:
        u_full[free] = u0.values[free]
    x = u_full[free].copy()

    theta = cfg.theta0
    res_prev = np.inf
    res = np.inf
    cg_total = 0
    k = 0
    converged = False
    dvals = np.zeros(mesh.n_nodes)
    d_prev = None
    for k in range(1, cfg.max_inner + 1):
        u_full[free] = x
        rhs = truncated_rhs(F, FieldFunction(mesh, u_full.copy()), n)
        v, cg = solve_cg(sys_.op, mlf * rhs.values[free], tol=cfg.cg_tol,
                         maxit=cfg.cg_maxit, x0=x)
        cg_total += cg.iterations
        d = v - x
        dvals[free] = d
        res = h1_seminorm(dvals, mesh)
        theta_cap = 1.0
        if cfg.slope_damping > 0.0:
            u_full[free] = x
            w = _slope_weights(F, u_full, n, sys_, cfg.slope_damping)
            if float(w.min(initial=1.0)) < 0.9:
                # stiff nodes present: full steps eject them from the
                # attracting branches they settle into at moderate damping
                theta_cap = cfg.theta0
            x = x + theta * (w * d)
        else:
            x = x + theta * d
        u_full[free] = x
        unorm = h1_seminorm(u_full, mesh)
        if res <= cfg.inner_tol * unorm + cfg.inner_tol_abs:
            converged = True
            break
        oscillatory = d_prev is not None and float(d @ d_prev) < 0.0
        if cfg.slope_damping > 0.0:
            # weights already stabilize stiff nodes; only back off on gross
            # divergence or a sign-flipping near-neutral mode, and never
            # freeze (the capture of oscillatory nodes needs sustained steps)
            if res > 1.5 * res_prev:
                theta = max(0.5 * theta, 0.1 * cfg.theta0)
            elif res > 0.97 * res_prev and oscillatory:
                theta = max(0.5 * theta, 0.5 * cfg.theta0)
            else:
                theta = min(1.2 * theta, theta_cap)
        else:
            if res > res_prev:
                theta = max(0.5 * theta, 1e-3)
            elif res > 0.97 * res_prev and oscillatory:
                # near-neutral sign-flipping mode (marginal at gamma = 1):
                # damping is the remedy, growth would stall the iteration
                theta = max(0.5 * theta, 1e-3)
            else:
                theta = min(1.2 * theta, theta_cap)
        res_prev = res
        d_prev = d

    out = np.zeros(mesh.n_nodes)
    out[free] = x
    stats = LevelStats(n=n, iterations=k, residual=float(res), converged=converged,
                       theta=theta, cg_iterations=cg_total)
    return FieldFunction(mesh, out), stats


def _energy_identity_residual(u: FieldFunction, coeff: Coefficient, F: Nonlinearity,
                              cap: float, ml: np.ndarray, mu: float) -> float:
    rhs_vals = np.minimum(F.evaluate(np.maximum(u.values, 0.0)), cap)
    rhs_e = float(np.sum(ml * rhs_vals * u.values))
    lhs_e = energy_product(u, coeff)
    if mu != 0.0:
        lhs_e += mu * float(np.sum(ml * u.values * u.values))
    return abs(lhs_e - rhs_e) / max(abs(lhs_e), 1e-300)


def solve_singular(mesh: Mesh, coeff: Coefficient, F: Nonlinearity,
                   cfg: SolverConfig = SolverConfig(), u0: FieldFunction | None = None,
                   mu: float = 0.0) -> SolveReport:
    """Doubling truncation schedule with warm starts until levels are Cauchy in H1.

    Raises ``ConvergenceError`` when an inner iteration stalls or the level
    sequence is not Cauchy within ``cfg.max_levels``.
    """
    sys_ = _build_system(mesh, coeff, mu)
    u = u0
    n = cfg.n_start
    history: list[float] = []
    h1_norms: list[float] = []
    stats_list: list[LevelStats] = []
    inner_total = 0
    h1_prev = 0.0
    converged = False
    for level in range(cfg.max_levels):
        u_new, st = solve_level(mesh, coeff, F, n, cfg, u0=u, mu=mu, system=sys_)
        stats_list.append(st)
        inner_total += st.iterations
        if not st.converged:
            raise ConvergenceError(
                f"fixed point at truncation level {n} stalled with residual {st.residual:.3e}",
                iterations=st.iterations,
                residual=st.residual,
            )
        h1n = h1_seminorm(u_new)
        h1_norms.append(h1n)
        if level > 0:
            gap = h1_seminorm(u_new - u)
            history.append(gap)
            if gap <= cfg.outer_tol * h1_prev + cfg.outer_tol_abs:
                u = u_new
                converged = True
                break
        u = u_new
        h1_prev = h1n
        n *= 2.0
    if not converged:
        raise ConvergenceError(
            f"truncation levels not Cauchy after {cfg.max_levels} levels",
            history=history,
        )
    resid = _energy_identity_residual(u, coeff, F, n, sys_.ml, mu)
    return SolveReport(
        u=u,
        n_final=n,
        outer_iters=len(stats_list),
        inner_iters=inner_total,
        energy_identity_residual=resid,
        history=history,
        h1_norms=h1_norms,
        level_stats=stats_list,
        mu=mu,
    )


def singular_mass_certificate(report: SolveReport, F: Nonlinearity, coeff: Coefficient,
                              phi: FieldFunction, delta: float) -> tuple[float, float]:
    """Both sides of the near-zero mass bound for a converged solution.

    lhs: nodal quadrature of ``F(x, u) phi`` over the nodes with ``u <= delta``
    (``F`` capped at the solve's final truncation level).  rhs: elementwise
    ``int A Du . Dphi z_delta(u_bar)`` with ``u_bar`` the element mean.
    The continuum statement is ``lhs <= rhs``; the discrete gap is the
    caller's discretization slack.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    if np.any(phi.values < 0.0):
        raise ValueError("phi must be nonnegative")
    u = report.u
    mesh = u.mesh
    ml = lumped_mass(mesh)
    mask = u.values <= delta
    capped = np.minimum(F.evaluate(np.maximum(u.values, 0.0)), report.n_final)
    lhs = float(np.sum(ml[mask] * capped[mask] * phi.values[mask]))

    gu = np.einsum("evd,ev->ed", mesh.grads, u.values[mesh.elements])
    gp = np.einsum("evd,ev->ed", mesh.grads, phi.values[mesh.elements])
    flux = mesh.areas * np.einsum("ed,edc,ec->e", gu, coeff.matrices, gp)
    weights = z_delta(mesh.element_means(u.values), delta)
    rhs = float(np.sum(flux * weights))
    return lhs, rhs


@dataclass
class ZeroSetReport:
    tol_zero: float
    nodes: np.ndarray
    u_values: np.ndarray
    F_values: np.ndarray
    f_values: np.ndarray
    violation: bool


def zero_set_diagnostics(report: SolveReport, F: Nonlinearity,
                         tol_zero: float | None = None) -> ZeroSetReport:
    """Inspect the free nodes where the solution (numerically) vanishes.

    On ``{u <= tol_zero}`` the converged problem requires ``F(x, 0) = 0``;
    the report flags a violation whenever ``f > 0`` persists there.
    ``tol_zero`` defaults to ``1e-8 * |u|_inf``.
    """
    u = report.u
    linf = float(np.abs(u.values).max())
    if tol_zero is None:
        tol_zero = 1e-8 * linf
    free = u.mesh.free_nodes
    zs = free[u.values[free] <= tol_zero]
    capped_arg = np.maximum(u.values, tol_zero)
    F_vals = F.evaluate(capped_arg)[zs]
    f_vals = F.f[zs]
    return ZeroSetReport(
        tol_zero=float(tol_zero),
        nodes=zs,
        u_values=u.values[zs],
        F_values=F_vals,
        f_values=f_vals,
        violation=bool(np.any(f_vals > 0.0)),
    )


def levelset_energy_certificate(u: FieldFunction | SolveReport, F: Nonlinearity,
                                coeff: Coefficient, j_list,
                                h_field: np.ndarray | None = None,
                                alpha: float | None = None) -> list[tuple[float, float]]:
    """Per level ``j``: ``(alpha |D excess_{j+1}(u)|_2^2, 2 int h excess_{j+1}(u))``.

    The excess above height ``j + 1`` of a converged solution satisfies the
    first component <= the second in the continuum; discretization slack is
    the caller's to judge.
    """
    if isinstance(u, SolveReport):
        u = u.u
    mesh = u.mesh
    if h_field is None:
        h_field = F.h
    if alpha is None:
        alpha = coeff.alpha
    ml = lumped_mass(mesh)
    out = []
    for j in j_list:
        G = gk(u.values, float(j) + 1.0)
        lhs = alpha * h1_seminorm(G, mesh) ** 2
        rhs = 2.0 * float(np.sum(ml * h_field * G))
        out.append((float(lhs), rhs))
    return out
