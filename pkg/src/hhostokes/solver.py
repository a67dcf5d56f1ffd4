"""Global assembly and damped Newton solver for the discrete generalized Stokes problem.

Cells with the same number of faces are stacked into batches so that the
nonlinear element loops become array operations. The global vector layout
is the one of :class:`hhostokes.hho.DofLayout`; boundary face unknowns are
kept in the state (holding the projected Dirichlet data) but are never
solved for.
"""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import rheology
from .hho import (
    DEFAULT_QUAD_BOOST,
    DofLayout,
    ElementOperators,
    _power_flux,
    _power_flux_tangent,
    build_element_operators,
    face_projection,
)
from .mesh import Mesh
from .rheology import FlowLaw, LawConstants, law_constants

log = logging.getLogger(__name__)

Field = Callable[[np.ndarray], np.ndarray]


class SolverError(RuntimeError):
    pass


def default_gamma(constants: LawConstants) -> float:
    g = math.sqrt(constants.sigma_sm * constants.sigma_hc)
    return min(max(g, constants.sigma_sm), constants.sigma_hc)


@dataclass
class Batch:
    """Stacked operators of all cells that have the same number of faces."""

    cells: np.ndarray  # (nc,)
    vdofs: np.ndarray  # (nc, ndof) global velocity indices
    pdofs: np.ndarray  # (nc, nk) global pressure indices
    w: np.ndarray  # (nc, nq)
    points: np.ndarray  # (nc, nq, 2)
    Gq: np.ndarray  # (nc, nq, 3, ndof)
    Eq: np.ndarray  # (nc, nq, 3, ndof)
    Vq: np.ndarray  # (nc, nq, 2, ndof)
    Dq: np.ndarray  # (nc, nf, nqf, 2, ndof), unscaled
    Jq: np.ndarray  # (nc, nf, nqf, 2, ndof)
    fw: np.ndarray  # (nc, nf, nqf)
    h_F: np.ndarray  # (nc, nf)
    B: np.ndarray  # (nc, nk, ndof)
    mean: np.ndarray  # (nc, nk)
    area: np.ndarray  # (nc,)
    nk: int

    def scaled_Dq(self, r: float) -> np.ndarray:
        s = self.h_F ** (-(r - 1.0) / r)
        return self.Dq * s[:, :, None, None, None]

    def pressure_values(self) -> np.ndarray:
        """(nc, nq, nk) pressure basis values at the cell quadrature points."""
        return self.Vq[:, :, 0, : self.nk]


def _make_batches(mesh: Mesh, layout: DofLayout, ops: list[ElementOperators]) -> list[Batch]:
    groups: dict[int, list[int]] = {}
    for c, cell in enumerate(mesh.cells):
        groups.setdefault(cell.n_faces, []).append(c)
    batches = []
    for nf in sorted(groups):
        cells = np.array(groups[nf])
        sel = [ops[c] for c in cells]
        batches.append(
            Batch(
                cells=cells,
                vdofs=np.array([layout.local_dofs(mesh, c) for c in cells]),
                pdofs=np.array([layout.pressure_dofs(c) for c in cells]),
                w=np.array([o.cell_quad.weights for o in sel]),
                points=np.array([o.cell_quad.points for o in sel]),
                Gq=np.array([o.Gq for o in sel]),
                Eq=np.array([o.Eq for o in sel]),
                Vq=np.array([o.Vq for o in sel]),
                Dq=np.array([o.Dq for o in sel]),
                Jq=np.array([o.Jq for o in sel]),
                fw=np.array([o.face_weights for o in sel]),
                h_F=np.array([o.h_F for o in sel]),
                B=np.array([o.B for o in sel]),
                mean=np.array([o.pressure_mean for o in sel]),
                area=np.array([o.area for o in sel]),
                nk=layout.pressure_size,
            )
        )
    return batches


@dataclass
class Discretization:
    """Law-independent part of a problem: mesh, layout and element operators."""

    mesh: Mesh
    k: int
    quad_boost: int = DEFAULT_QUAD_BOOST
    threads: int = 1
    layout: DofLayout = field(init=False)
    ops: list = field(init=False, repr=False)
    batches: list = field(init=False, repr=False)

    def __post_init__(self):
        self.layout = DofLayout.for_mesh(self.mesh, self.k)

        def build(c):
            return build_element_operators(self.mesh, c, self.k, 2.0, self.quad_boost)

        cells = range(self.mesh.n_cells)
        if self.threads > 1:
            with ThreadPoolExecutor(self.threads) as pool:
                self.ops = list(pool.map(build, cells))
        else:
            self.ops = [build(c) for c in cells]
        self.batches = _make_batches(self.mesh, self.layout, self.ops)


@dataclass
class DiscreteState:
    velocity: np.ndarray  # all velocity unknowns, boundary faces included
    pressure: np.ndarray
    multiplier: float = 0.0

    @classmethod
    def zeros(cls, layout: DofLayout) -> DiscreteState:
        return cls(np.zeros(layout.n_velocity), np.zeros(layout.n_pressure), 0.0)

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.velocity, self.pressure, [self.multiplier]])

    @classmethod
    def from_vector(cls, layout: DofLayout, x: np.ndarray) -> DiscreteState:
        nv, npr = layout.n_velocity, layout.n_pressure
        return cls(x[:nv].copy(), x[nv : nv + npr].copy(), float(x[nv + npr]))

    def copy(self) -> DiscreteState:
        return DiscreteState(self.velocity.copy(), self.pressure.copy(), self.multiplier)


@dataclass
class DiscreteProblem:
    disc: Discretization
    law: FlowLaw
    load: Field
    dirichlet: Optional[Field] = None
    gamma: Optional[float] = None
    # rebuilds the load for another law (used by continuation in r)
    load_factory: Optional[Callable[[FlowLaw], Field]] = None
    dirichlet_factory: Optional[Callable[[FlowLaw], Field]] = None
    constants: LawConstants = field(init=False)
    _load_cache: Optional[list] = field(default=None, init=False, repr=False)

    def __post_init__(self):
        self.constants = law_constants(self.law)
        if self.gamma is None:
            self.gamma = default_gamma(self.constants)
        c = self.constants
        tol = 1e-12 * c.sigma_hc
        if not (c.sigma_sm - tol <= self.gamma <= c.sigma_hc + tol):
            raise ValueError(
                f"gamma={self.gamma:g} outside the admissible interval "
                f"[sigma_sm, sigma_hc] = [{c.sigma_sm:g}, {c.sigma_hc:g}]"
            )

    @property
    def mesh(self) -> Mesh:
        return self.disc.mesh

    @property
    def layout(self) -> DofLayout:
        return self.disc.layout

    @property
    def r(self) -> float:
        return self.law.r

    def with_law(self, law: FlowLaw, gamma: Optional[float] = None) -> DiscreteProblem:
        load = self.load_factory(law) if self.load_factory else self.load
        g = self.dirichlet
        if self.dirichlet_factory is not None:
            g = self.dirichlet_factory(law)
        return DiscreteProblem(
            self.disc, law, load, g, gamma, self.load_factory, self.dirichlet_factory
        )

    def local_loads(self) -> list[np.ndarray]:
        """Per batch (nc, ndof) vectors of ``int_T f . v_T``."""
        if self._load_cache is None:
            out = []
            for b in self.disc.batches:
                nc, nq = b.w.shape
                fv = np.asarray(self.load(b.points.reshape(-1, 2)), dtype=float).reshape(nc, nq, 2)
                out.append(np.einsum("cq,cqd,cqdj->cj", b.w, fv, b.Vq, optimize=True))
            self._load_cache = out
        return self._load_cache

    def load_vector(self) -> np.ndarray:
        out = np.zeros(self.layout.n_total)
        for b, lv in zip(self.disc.batches, self.local_loads()):
            out[: self.layout.n_velocity] += np.bincount(
                b.vdofs.ravel(), lv.ravel(), minlength=self.layout.n_velocity
            )
        return out


def apply_dirichlet(problem: DiscreteProblem, state: DiscreteState) -> DiscreteState:
    """Copy of ``state`` whose boundary face blocks hold ``pi_F^k g`` (zero if no data)."""
    out = state.copy()
    lay = problem.layout
    for f in lay.boundary_faces:
        dofs = lay.face_dofs(f)
        if problem.dirichlet is None:
            out.velocity[dofs] = 0.0
        else:
            out.velocity[dofs] = face_projection(problem.dirichlet, problem.mesh, f, lay.k).T.ravel()
    return out


def assemble_residual(problem: DiscreteProblem, state: DiscreteState) -> np.ndarray:
    """Full residual (momentum, mass, mean rows); boundary velocity rows are zero."""
    lay = problem.layout
    if state.velocity.shape != (lay.n_velocity,) or state.pressure.shape != (lay.n_pressure,):
        raise ValueError("state size does not match the dof layout")
    law, gamma, r = problem.law, problem.gamma, problem.r
    res = np.zeros(lay.n_total)
    nv = lay.n_velocity
    lam = state.multiplier
    for b, lv in zip(problem.disc.batches, problem.local_loads()):
        U = state.velocity[b.vdofs]
        P = state.pressure[b.pdofs - lay.pressure_offset]
        tau = np.einsum("cqmj,cj->cqm", b.Gq, U, optimize=True)
        sig = rheology.stress_mandel(law, tau)
        rv = np.einsum("cq,cqm,cqmj->cj", b.w, sig, b.Gq, optimize=True)
        Dq = b.scaled_Dq(r)
        flux = _power_flux(np.einsum("cfqdj,cj->cfqd", Dq, U, optimize=True), r)
        rv += gamma * np.einsum("cfq,cfqd,cfqdj->cj", b.fw, flux, Dq, optimize=True)
        rv -= np.einsum("cij,ci->cj", b.B, P)
        rv -= lv
        res[:nv] += np.bincount(b.vdofs.ravel(), rv.ravel(), minlength=nv)
        res[b.pdofs] = np.einsum("cij,cj->ci", b.B, U) + lam * b.mean
        res[lay.multiplier_index] += (b.mean * P).sum()
    res[lay.boundary_velocity_dofs()] = 0.0
    return res


def _local_tangents(problem: DiscreteProblem, b: Batch, U: np.ndarray) -> np.ndarray:
    law, r = problem.law, problem.r
    tau = np.einsum("cqmj,cj->cqm", b.Gq, U, optimize=True)
    C = rheology.tangent_mandel(law, tau)
    A = np.einsum("cq,cqmi,cqmn,cqnj->cij", b.w, b.Gq, C, b.Gq, optimize=True)
    Dq = b.scaled_Dq(r)
    d = np.einsum("cfqdj,cj->cfqd", Dq, U, optimize=True)
    T = _power_flux_tangent(d, r)
    A += problem.gamma * np.einsum("cfq,cfqai,cfqab,cfqbj->cij", b.fw, Dq, T, Dq, optimize=True)
    return A


def assemble_jacobian(problem: DiscreteProblem, state: DiscreteState, free_only: bool = True) -> sp.csr_matrix:
    """Jacobian ``[[A, -B^T, 0], [B, 0, m], [0, m^T, 0]]`` of :func:`assemble_residual`.

    With ``free_only`` the boundary velocity rows/columns are removed.
    """
    lay = problem.layout
    rows, cols, vals = [], [], []
    for b in problem.disc.batches:
        U = state.velocity[b.vdofs]
        A = _local_tangents(problem, b, U)
        nd, nk = b.vdofs.shape[1], b.pdofs.shape[1]
        rows.append(np.repeat(b.vdofs, nd, axis=1).ravel())
        cols.append(np.tile(b.vdofs, (1, nd)).ravel())
        vals.append(A.ravel())
        # velocity rows, pressure columns: -B^T
        rows.append(np.repeat(b.vdofs, nk, axis=1).ravel())
        cols.append(np.tile(b.pdofs, (1, nd)).ravel())
        vals.append(-b.B.transpose(0, 2, 1).ravel())
        # pressure rows, velocity columns: B
        rows.append(np.repeat(b.pdofs, nd, axis=1).ravel())
        cols.append(np.tile(b.vdofs, (1, nk)).ravel())
        vals.append(b.B.ravel())
        m = lay.multiplier_index
        rows += [b.pdofs.ravel(), np.full(b.pdofs.size, m)]
        cols += [np.full(b.pdofs.size, m), b.pdofs.ravel()]
        vals += [b.mean.ravel(), b.mean.ravel()]
    J = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(lay.n_total, lay.n_total),
    )
    if free_only:
        free = lay.free_dofs()
        J = J[free][:, free]
    return J


class LinearSolver:
    """Direct sparse factorization; subclass and override :meth:`factorize` to swap backends."""

    def __init__(self):
        self.stats = {"solves": 0, "max_size": 0, "max_nnz": 0, "seconds": 0.0}

    def factorize(self, A: sp.spmatrix) -> Callable[[np.ndarray], np.ndarray]:
        lu = spla.splu(sp.csc_matrix(A))
        return lu.solve

    def solve(self, A: sp.spmatrix, b: np.ndarray) -> np.ndarray:
        t0 = time.perf_counter()
        try:
            x = self.factorize(A)(b)
        except RuntimeError as exc:
            raise SolverError(f"singular linear system: {exc}") from exc
        if not np.all(np.isfinite(x)):
            raise SolverError("linear solve produced non-finite values")
        self.stats["solves"] += 1
        self.stats["max_size"] = max(self.stats["max_size"], A.shape[0])
        self.stats["max_nnz"] = max(self.stats["max_nnz"], A.nnz)
        self.stats["seconds"] += time.perf_counter() - t0
        return x


# --------------------------------------------------------------------------- static condensation


def _pressure_change_of_basis(mean: np.ndarray, area: np.ndarray) -> np.ndarray:
    """Per-cell ``Q`` with ``p_orig = Q p_new``; new basis is ``[1, phi_i - avg(phi_i)]``."""
    nc, nk = mean.shape
    Q = np.broadcast_to(np.eye(nk), (nc, nk, nk)).copy()
    Q[:, 0, 1:] = -mean[:, 1:] / area[:, None]
    return Q


@dataclass
class CondensedSystem:
    matrix: sp.csr_matrix
    rhs: np.ndarray
    n_skeleton: int  # interior face dofs + one pressure per cell (multiplier excluded)
    recover: Callable[[np.ndarray], np.ndarray] = field(repr=False)


def condense(problem: DiscreteProblem, state: DiscreteState, residual: Optional[np.ndarray] = None) -> CondensedSystem:
    """Eliminate cell velocities and all but one pressure unknown per cell.

    The kept pressure unknown of each cell is its mean value; the zero-mean
    constraint stays as one bordering multiplier row/column. ``recover``
    maps the skeleton solution back to a full Newton increment over the
    free dofs.
    """
    lay = problem.layout
    if residual is None:
        residual = assemble_residual(problem, state)
    nfree_faces = len(lay.interior_faces) * lay.face_size
    n_skel = nfree_faces + lay.n_cells
    mult = n_skel
    rows, cols, vals = [], [], []
    rhs = np.zeros(n_skel + 1)
    rhs[mult] = -residual[lay.multiplier_index]
    saved = []
    cs = lay.cell_size
    for b in problem.disc.batches:
        U = state.velocity[b.vdofs]
        A = _local_tangents(problem, b, U)
        nc, nd = b.vdofs.shape
        nk = b.nk
        Q = _pressure_change_of_basis(b.mean, b.area)
        BQ = np.einsum("cij,cik->ckj", b.B, Q)  # (nc, nk, nd) rows in new pressure basis
        n = nd + nk
        J = np.zeros((nc, n, n))
        J[:, :nd, :nd] = A
        J[:, :nd, nd:] = -BQ.transpose(0, 2, 1)
        J[:, nd:, :nd] = BQ
        rloc = np.concatenate(
            [residual[b.vdofs], np.einsum("cik,ci->ck", Q, residual[b.pdofs])], axis=1
        )
        I = np.r_[np.arange(cs), nd + np.arange(1, nk)]
        S = np.r_[np.arange(cs, nd), nd]
        KII = J[:, I][:, :, I]
        KIS = J[:, I][:, :, S]
        KSI = J[:, S][:, :, I]
        KSS = J[:, S][:, :, S]
        try:
            X = np.linalg.solve(KII, np.concatenate([KIS, rloc[:, I, None]], axis=2))
        except np.linalg.LinAlgError as exc:
            raise SolverError(f"singular local pivot block: {exc}") from exc
        Kc = KSS - KSI @ X[:, :, :-1]
        # face residuals are already globally assembled; they enter the rhs once, below
        rc = np.einsum("csi,ci->cs", KSI, X[:, :, -1])
        rc[:, -1] -= rloc[:, nd]
        # skeleton numbering: interior face dofs keep their index, cell means follow
        faces = b.vdofs[:, cs:]
        gS = np.concatenate(
            [np.where(faces < lay.n_free_velocity, faces - lay.face_offset, -1), nfree_faces + b.cells[:, None]],
            axis=1,
        )
        ok = gS >= 0
        m2 = ok[:, :, None] & ok[:, None, :]
        rows.append(np.broadcast_to(gS[:, :, None], Kc.shape)[m2])
        cols.append(np.broadcast_to(gS[:, None, :], Kc.shape)[m2])
        vals.append(Kc[m2])
        np.add.at(rhs, gS[ok], rc[ok])
        # mean rows carry the multiplier with weight |T|
        rows += [nfree_faces + b.cells, np.full(nc, mult)]
        cols += [np.full(nc, mult), nfree_faces + b.cells]
        vals += [b.area, b.area]
        saved.append((b, X, gS, ok, Q, I, nd))

    rhs[:nfree_faces] -= residual[lay.face_offset : lay.face_offset + nfree_faces]
    K = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n_skel + 1, n_skel + 1)
    )

    def recover(y: np.ndarray) -> np.ndarray:
        full = np.zeros(lay.n_total)
        full[lay.face_offset : lay.face_offset + nfree_faces] = y[:nfree_faces]
        full[lay.multiplier_index] = y[mult]
        for b, X, gS, ok, Q, I, nd in saved:
            yS = np.where(ok, y[np.maximum(gS, 0)], 0.0)
            xI = X[:, :, -1] * -1.0 - np.einsum("cis,cs->ci", X[:, :, :-1], yS)
            full[b.vdofs[:, :cs]] = xI[:, :cs]
            pnew = np.concatenate([yS[:, -1:], xI[:, cs:]], axis=1)
            full[b.pdofs] = np.einsum("cij,cj->ci", Q, pnew)
        return full[lay.free_dofs()]

    return CondensedSystem(K, rhs, n_skel, recover)


def newton_increment(
    problem: DiscreteProblem,
    state: DiscreteState,
    residual: np.ndarray,
    condense_static: bool = False,
    linear_solver: Optional[LinearSolver] = None,
) -> np.ndarray:
    """Newton increment over the free dofs (see :meth:`DofLayout.free_dofs`)."""
    linear_solver = linear_solver or LinearSolver()
    if condense_static:
        cs = condense(problem, state, residual)
        return cs.recover(linear_solver.solve(cs.matrix, cs.rhs))
    J = assemble_jacobian(problem, state)
    return linear_solver.solve(J, -residual[problem.layout.free_dofs()])


# --------------------------------------------------------------------------- Newton


@dataclass
class NewtonConfig:
    tol: float = 1e-9
    max_iter: int = 50
    damping: bool = True
    max_halvings: int = 20
    continuation: bool = True
    r_step: float = 0.25
    condense: bool = False


@dataclass
class NewtonReport:
    iterations: int = 0
    residual_history: list = field(default_factory=list)
    damping_steps: int = 0
    converged: bool = False
    message: str = ""
    linear_stats: dict = field(default_factory=dict)
    continuation: list = field(default_factory=list)  # (r, iterations, converged) per stage

    @property
    def total_iterations(self) -> int:
        return sum(s[1] for s in self.continuation) if self.continuation else self.iterations


def _residual_norm(problem: DiscreteProblem, res: np.ndarray) -> float:
    return float(np.linalg.norm(res[problem.layout.free_dofs()]))


def _newton_stage(
    problem: DiscreteProblem, state: DiscreteState, config: NewtonConfig, solver: LinearSolver
) -> tuple[DiscreteState, NewtonReport]:
    lay = problem.layout
    free = lay.free_dofs()
    report = NewtonReport()
    state = apply_dirichlet(problem, state)
    scale = 1.0 + float(np.linalg.norm(problem.load_vector()[free]))
    res = assemble_residual(problem, state)
    nrm = _residual_norm(problem, res)
    report.residual_history.append(nrm)
    x = state.to_vector()
    while nrm > config.tol * scale:
        if report.iterations >= config.max_iter:
            report.message = f"max_iter={config.max_iter} reached"
            break
        try:
            dx = newton_increment(problem, state, res, config.condense, solver)
        except SolverError as exc:
            report.message = f"solver failure: {exc}"
            break
        alpha = 1.0
        accepted = False
        for halving in range(config.max_halvings + 1):
            trial = x.copy()
            trial[free] += alpha * dx
            tstate = DiscreteState.from_vector(lay, trial)
            tres = assemble_residual(problem, tstate)
            tn = _residual_norm(problem, tres)
            if not config.damping or (np.isfinite(tn) and tn < nrm):
                accepted = True
                break
            alpha *= 0.5
            report.damping_steps += 1
        report.iterations += 1
        if not accepted:
            report.message = "line search failed to decrease the residual"
            break
        x, state, res, nrm = trial, tstate, tres, tn
        report.residual_history.append(nrm)
        log.debug("newton r=%g it=%d |R|=%.3e alpha=%g", problem.r, report.iterations, nrm, alpha)
    report.converged = nrm <= config.tol * scale
    if report.converged:
        report.message = "converged"
    report.linear_stats = dict(solver.stats)
    return state, report


def continuation_schedule(r: float, step: float = 0.25) -> list[float]:
    """Exponents from 2 to ``r`` with increments of at most ``step``."""
    if r == 2.0:
        return [2.0]
    n = max(1, math.ceil(abs(r - 2.0) / step - 1e-12))
    return [2.0 + (r - 2.0) * i / n for i in range(n + 1)]


def newton_solve(
    problem: DiscreteProblem,
    initial_state: Optional[DiscreteState] = None,
    config: Optional[NewtonConfig] = None,
    linear_solver: Optional[LinearSolver] = None,
) -> tuple[DiscreteState, NewtonReport]:
    """Solve the discrete problem with damped Newton.

    Without an initial state and with ``config.continuation`` the exponent is
    marched from 2 to the target, each stage warm-starting the next one.
    """
    config = config or NewtonConfig()
    if not config.tol > 0:
        raise ValueError("tol must be > 0")
    solver = linear_solver or LinearSolver()
    if initial_state is not None or not config.continuation or problem.r == 2.0:
        state = initial_state if initial_state is not None else DiscreteState.zeros(problem.layout)
        return _newton_stage(problem, state, config, solver)

    state = DiscreteState.zeros(problem.layout)
    stages = []
    report = None
    for r in continuation_schedule(problem.r, config.r_step):
        stage = problem if r == problem.r else problem.with_law(problem.law.with_r(r))
        state, report = _newton_stage(stage, state, config, solver)
        stages.append((r, report.iterations, report.converged))
        if not report.converged:
            report.message = f"continuation stage r={r:g}: {report.message}"
            break
    report.continuation = stages
    return state, report


def viscous_gradient(problem: DiscreteProblem, velocity: np.ndarray) -> np.ndarray:
    """Vector ``a_h(u, e_j)`` over all velocity basis vectors."""
    lay = problem.layout
    out = np.zeros(lay.n_velocity)
    r = problem.r
    for b in problem.disc.batches:
        U = velocity[b.vdofs]
        tau = np.einsum("cqmj,cj->cqm", b.Gq, U, optimize=True)
        sig = rheology.stress_mandel(problem.law, tau)
        rv = np.einsum("cq,cqm,cqmj->cj", b.w, sig, b.Gq, optimize=True)
        Dq = b.scaled_Dq(r)
        flux = _power_flux(np.einsum("cfqdj,cj->cfqd", Dq, U, optimize=True), r)
        rv += problem.gamma * np.einsum("cfq,cfqd,cfqdj->cj", b.fw, flux, Dq, optimize=True)
        out += np.bincount(b.vdofs.ravel(), rv.ravel(), minlength=lay.n_velocity)
    return out


def coupling_matrix(problem: DiscreteProblem) -> sp.csr_matrix:
    """Matrix of ``b_h``: rows pressure dofs, columns velocity dofs."""
    lay = problem.layout
    rows, cols, vals = [], [], []
    for b in problem.disc.batches:
        nd, nk = b.vdofs.shape[1], b.pdofs.shape[1]
        rows.append(np.repeat(b.pdofs - lay.pressure_offset, nd, axis=1).ravel())
        cols.append(np.tile(b.vdofs, (1, nk)).ravel())
        vals.append(-b.B.ravel())
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(lay.n_pressure, lay.n_velocity)
    )


def energy_norm(disc: Discretization, velocity: np.ndarray, r: float) -> float:
    """``||v_h||_{eps,r,h}``."""
    total = 0.0
    for b in disc.batches:
        U = velocity[b.vdofs]
        e = np.linalg.norm(np.einsum("cqmj,cj->cqm", b.Eq, U, optimize=True), axis=-1)
        total += (b.w * e**r).sum()
        j = np.linalg.norm(np.einsum("cfqdj,cj->cfqd", b.Jq, U, optimize=True), axis=-1)
        total += ((b.h_F ** (1.0 - r))[:, :, None] * b.fw * j**r).sum()
    return total ** (1.0 / r)


def pressure_mean(disc: Discretization, pressure: np.ndarray) -> float:
    lay = disc.layout
    return float(sum((b.mean * pressure[b.pdofs - lay.pressure_offset]).sum() for b in disc.batches))
