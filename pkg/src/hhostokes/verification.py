"""Manufactured solutions, discrete error norms, convergence runs and stability studies."""

from __future__ import annotations

import csv
import io
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import rheology
from .basis import CellBasis
from .hho import interpolate
from .mesh import generate
from .rheology import FlowLaw
from .solver import (
    Discretization,
    DiscreteProblem,
    DiscreteState,
    NewtonConfig,
    coupling_matrix,
    energy_norm,
    newton_solve,
    viscous_gradient,
)

log = logging.getLogger(__name__)

HALF_PI = 0.5 * math.pi


@dataclass
class ManufacturedCase:
    """Exact velocity/pressure pair with the load derived for a given law."""

    law: FlowLaw
    velocity: Callable[[np.ndarray], np.ndarray]
    velocity_gradient: Callable[[np.ndarray], np.ndarray]  # (n, 2, 2), [i, j] = d u_i / d x_j
    velocity_hessian: Callable[[np.ndarray], np.ndarray]  # (n, 2, 2, 2), [i, j, l] = d^2 u_i / dx_j dx_l
    pressure: Callable[[np.ndarray], np.ndarray]
    pressure_gradient: Callable[[np.ndarray], np.ndarray]

    def strain(self, x: np.ndarray) -> np.ndarray:
        g = self.velocity_gradient(x)
        return 0.5 * (g + g.transpose(0, 2, 1))

    def load(self, x: np.ndarray) -> np.ndarray:
        """``f = -div sigma(grad_s u) + grad p`` by the chain rule."""
        x = np.atleast_2d(x)
        H = self.velocity_hessian(x)
        # d/dx_l of the symmetric gradient: (n, l, 2, 2)
        dE = 0.5 * (H + H.transpose(0, 2, 1, 3))
        dE = dE.transpose(0, 3, 1, 2)
        C = rheology.tangent_mandel(self.law, rheology.to_mandel(self.strain(x)), eps=0.0)
        dsig = rheology.from_mandel(np.einsum("nab,nlb->nla", C, rheology.to_mandel(dE)))
        div = np.einsum("njij->ni", dsig)
        return -div + self.pressure_gradient(x)

    def dirichlet(self, x: np.ndarray) -> np.ndarray:
        return self.velocity(x)

    def with_law(self, law: FlowLaw) -> ManufacturedCase:
        return ManufacturedCase(
            law,
            self.velocity,
            self.velocity_gradient,
            self.velocity_hessian,
            self.pressure,
            self.pressure_gradient,
        )


def builtin_case(law: FlowLaw) -> ManufacturedCase:
    """Trigonometric divergence-free velocity with zero-mean pressure on the unit square."""
    c = HALF_PI

    def u(x):
        X, Y = c * x[:, 0], c * x[:, 1]
        return np.column_stack([np.sin(X) * np.cos(Y), -np.cos(X) * np.sin(Y)])

    def grad(x):
        X, Y = c * x[:, 0], c * x[:, 1]
        sx, cx, sy, cy = np.sin(X), np.cos(X), np.sin(Y), np.cos(Y)
        g = np.empty((len(x), 2, 2))
        g[:, 0, 0] = c * cx * cy
        g[:, 0, 1] = -c * sx * sy
        g[:, 1, 0] = c * sx * sy
        g[:, 1, 1] = -c * cx * cy
        return g

    def hess(x):
        X, Y = c * x[:, 0], c * x[:, 1]
        sx, cx, sy, cy = np.sin(X), np.cos(X), np.sin(Y), np.cos(Y)
        h = np.empty((len(x), 2, 2, 2))
        c2 = c * c
        h[:, 0, 0, 0] = -c2 * sx * cy
        h[:, 0, 0, 1] = h[:, 0, 1, 0] = -c2 * cx * sy
        h[:, 0, 1, 1] = -c2 * sx * cy
        h[:, 1, 0, 0] = c2 * cx * sy
        h[:, 1, 0, 1] = h[:, 1, 1, 0] = c2 * sx * cy
        h[:, 1, 1, 1] = c2 * cx * sy
        return h

    def p(x):
        return np.sin(c * x[:, 0]) * np.sin(c * x[:, 1]) - 4.0 / math.pi**2

    def gp(x):
        X, Y = c * x[:, 0], c * x[:, 1]
        return np.column_stack([c * np.cos(X) * np.sin(Y), c * np.sin(X) * np.cos(Y)])

    return ManufacturedCase(law, u, grad, hess, p, gp)


def make_problem(
    disc: Discretization, case: ManufacturedCase, gamma: Optional[float] = None
) -> DiscreteProblem:
    return DiscreteProblem(
        disc,
        case.law,
        case.load,
        case.dirichlet,
        gamma,
        load_factory=lambda law: case.with_law(law).load,
    )


def interpolate_global(disc: Discretization, v: Callable) -> np.ndarray:
    """``I_h v`` as a global velocity vector (boundary faces included)."""
    lay, mesh = disc.layout, disc.mesh
    out = np.zeros(lay.n_velocity)
    for c in range(mesh.n_cells):
        out[lay.local_dofs(mesh, c)] = interpolate(v, mesh, c, lay.k)
    return out


def project_pressure(disc: Discretization, p: Callable) -> np.ndarray:
    """``pi_h^k p`` as a global pressure vector."""
    lay = disc.layout
    out = np.zeros(lay.n_pressure)
    for b in disc.batches:
        nc, nq = b.w.shape
        vals = p(b.points.reshape(-1, 2)).reshape(nc, nq)
        phi = b.pressure_values()
        M = np.einsum("cq,cqi,cqj->cij", b.w, phi, phi)
        rhs = np.einsum("cq,cqi,cq->ci", b.w, phi, vals)
        out[b.pdofs - lay.pressure_offset] = np.linalg.solve(M, rhs[..., None])[..., 0]
    return out


def error_velocity(disc: Discretization, r: float, state: DiscreteState, case: ManufacturedCase) -> float:
    """``||u_h - I_h u||_{eps,r,h}``."""
    return energy_norm(disc, state.velocity - interpolate_global(disc, case.velocity), r)


def lr_norm_pressure(disc: Discretization, pressure: np.ndarray, s: float) -> float:
    lay = disc.layout
    total = 0.0
    for b in disc.batches:
        vals = np.einsum("cqi,ci->cq", b.pressure_values(), pressure[b.pdofs - lay.pressure_offset])
        total += (b.w * np.abs(vals) ** s).sum()
    return total ** (1.0 / s)


def error_pressure(disc: Discretization, r: float, state: DiscreteState, case: ManufacturedCase) -> float:
    """``||p_h - pi_h p||_{L^{r'}}``."""
    rc = r / (r - 1.0)
    return lr_norm_pressure(disc, state.pressure - project_pressure(disc, case.pressure), rc)


def eoc(e1: float, e2: float, h1: float, h2: float) -> float:
    if not (e1 > 0 and e2 > 0):
        return float("nan")
    return math.log(e1 / e2) / math.log(h1 / h2)


def theoretical_orders(r: float, k: int = 1) -> tuple[float, float]:
    if r < 2:
        return (k + 1) * (r - 1), (k + 1) * (r - 1) ** 2
    return (k + 1) / (r - 1), (k + 1) / (r - 1)


@dataclass
class LevelResult:
    n: int
    h: float
    err_vel: float
    err_pre: float
    newton_iters: int
    converged: bool
    seconds: float
    eoc_vel: float = float("nan")
    eoc_pre: float = float("nan")
    max_divergence: float = float("nan")
    velocity_norm: float = float("nan")
    pressure_mean: float = float("nan")


@dataclass
class ConvergenceReport:
    family: str
    k: int
    law: FlowLaw
    levels: list = field(default_factory=list)

    @property
    def last_eoc_vel(self) -> float:
        return self.levels[-1].eoc_vel

    @property
    def last_eoc_pre(self) -> float:
        return self.levels[-1].eoc_pre

    def fitted_orders(self) -> tuple[float, float]:
        """Least-squares slopes of log(error) against log(h) over converged levels."""
        ok = [lv for lv in self.levels if lv.converged]
        if len(ok) < 2:
            return float("nan"), float("nan")
        lh = np.log([lv.h for lv in ok])
        return (
            float(np.polyfit(lh, np.log([lv.err_vel for lv in ok]), 1)[0]),
            float(np.polyfit(lh, np.log([lv.err_pre for lv in ok]), 1)[0]),
        )

    CSV_COLUMNS = ("family", "k", "r", "n", "h", "err_vel", "err_pre", "eoc_vel", "eoc_pre", "newton_iters")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.CSV_COLUMNS)
        for lv in self.levels:
            w.writerow(
                [
                    self.family,
                    self.k,
                    repr(self.law.r),
                    lv.n,
                    f"{lv.h:.16e}",
                    f"{lv.err_vel:.16e}",
                    f"{lv.err_pre:.16e}",
                    f"{lv.eoc_vel:.6f}",
                    f"{lv.eoc_pre:.6f}",
                    lv.newton_iters,
                ]
            )
        return buf.getvalue()

    def summary(self) -> dict:
        ov, op = theoretical_orders(self.law.r, self.k)
        fv, fp = self.fitted_orders()
        return {
            "family": self.family,
            "k": self.k,
            "law": self.law.as_dict(),
            "theoretical_eoc_vel": ov,
            "theoretical_eoc_pre": op,
            "fitted_eoc_vel": fv,
            "fitted_eoc_pre": fp,
            "levels": [asdict(lv) for lv in self.levels],
        }


def max_divergence_residual(problem: DiscreteProblem, state: DiscreteState) -> float:
    """``max_q |b_h(u_h, q)|`` over the pressure basis."""
    return float(np.abs(coupling_matrix(problem) @ state.velocity).max())


def solve_case(
    family: str,
    n: int,
    k: int,
    case: ManufacturedCase,
    config: Optional[NewtonConfig] = None,
    amplitude: float = 0.15,
    gamma: Optional[float] = None,
    quad_boost: int = 4,
    threads: int = 1,
):
    disc = Discretization(generate(family, n, amplitude), k, quad_boost, threads)
    problem = make_problem(disc, case, gamma)
    state, report = newton_solve(problem, None, config)
    return problem, state, report


def run_convergence(
    case: ManufacturedCase,
    family: str,
    levels: Sequence[int],
    k: int = 1,
    config: Optional[NewtonConfig] = None,
    amplitude: float = 0.15,
    gamma: Optional[float] = None,
    quad_boost: int = 4,
    threads: int = 1,
    out_dir: Optional[Path] = None,
) -> ConvergenceReport:
    """Solve on each refinement level and collect errors and observed orders."""
    if len(levels) < 2:
        raise ValueError("run_convergence needs at least 2 levels")
    if any(b <= a for a, b in zip(levels, levels[1:])):
        raise ValueError("levels must be strictly increasing")
    report = ConvergenceReport(family, k, case.law)
    for n in levels:
        t0 = time.perf_counter()
        problem, state, nr = solve_case(family, n, k, case, config, amplitude, gamma, quad_boost, threads)
        disc = problem.disc
        lv = LevelResult(
            n=n,
            h=disc.mesh.h,
            err_vel=error_velocity(disc, case.law.r, state, case),
            err_pre=error_pressure(disc, case.law.r, state, case),
            newton_iters=nr.total_iterations,
            converged=nr.converged,
            seconds=0.0,
            max_divergence=max_divergence_residual(problem, state),
            velocity_norm=energy_norm(disc, state.velocity, case.law.r),
            pressure_mean=float(
                sum((b.mean * state.pressure[b.pdofs - disc.layout.pressure_offset]).sum() for b in disc.batches)
            ),
        )
        lv.seconds = time.perf_counter() - t0
        if not nr.converged:
            log.warning("level n=%d did not converge: %s", n, nr.message)
        if report.levels:
            prev = report.levels[-1]
            lv.eoc_vel = eoc(prev.err_vel, lv.err_vel, prev.h, lv.h)
            lv.eoc_pre = eoc(prev.err_pre, lv.err_pre, prev.h, lv.h)
        report.levels.append(lv)
        log.info(
            "%s n=%d r=%g: err_vel=%.3e err_pre=%.3e eoc=(%.2f, %.2f) its=%d %.1fs",
            family, n, case.law.r, lv.err_vel, lv.err_pre, lv.eoc_vel, lv.eoc_pre, lv.newton_iters, lv.seconds,
        )
    if out_dir is not None:
        write_convergence_outputs(report, Path(out_dir))
    return report


def gnuplot_script(report: ConvergenceReport, csv_name: str) -> str:
    ov, op = theoretical_orders(report.law.r, report.k)
    return "\n".join(
        [
            "set datafile separator ','",
            "set logscale xy",
            "set key bottom right",
            "set xlabel 'h'",
            "set ylabel 'error'",
            f"set title '{report.family}, k={report.k}, r={report.law.r:g}'",
            f"plot '{csv_name}' using 5:6 skip 1 with linespoints title 'velocity', \\",
            f"     '{csv_name}' using 5:7 skip 1 with linespoints title 'pressure', \\",
            f"     {report.levels[-1].err_vel:.6e}*(x/{report.levels[-1].h:.6e})**{ov:.4f} dt 2 title 'h^{{{ov:.3g}}}', \\",
            f"     {report.levels[-1].err_pre:.6e}*(x/{report.levels[-1].h:.6e})**{op:.4f} dt 3 title 'h^{{{op:.3g}}}'",
            "",
        ]
    )


def report_stem(report: ConvergenceReport) -> str:
    return f"convergence_{report.family}_k{report.k}_r{report.law.r:g}"


def write_convergence_outputs(report: ConvergenceReport, out_dir: Path, figure: bool = True) -> dict:
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = report_stem(report)
    csv_path = out_dir / f"{stem}.csv"
    csv_path.write_text(report.to_csv())
    gp_path = out_dir / f"{stem}.gp"
    gp_path.write_text(gnuplot_script(report, csv_path.name))
    paths = {"csv": str(csv_path), "gnuplot": str(gp_path)}
    if figure:
        from .plotting import plot_convergence

        paths["figure"] = str(plot_convergence(report, out_dir / f"{stem}.png"))
    return paths


# --------------------------------------------------------------------------- stability studies


def _random_free_velocity(disc: Discretization, rng: np.random.Generator) -> np.ndarray:
    lay = disc.layout
    v = np.zeros(lay.n_velocity)
    v[: lay.n_free_velocity] = rng.standard_normal(lay.n_free_velocity)
    return v


def cell_gradient_tables(disc: Discretization) -> list[np.ndarray]:
    """Per batch ``(nc, nq, 4, ndof)`` full gradient of ``v_T`` at the cell quadrature points."""
    out = []
    cs = disc.layout.cell_size
    nk = cs // 2
    for b in disc.batches:
        nc, nq = b.w.shape
        T = np.zeros((nc, nq, 4, b.vdofs.shape[1]))
        for i, c in enumerate(b.cells):
            g = CellBasis.for_cell(disc.mesh.cells[c], disc.k).gradients(b.points[i])  # (nq, nk, 2)
            T[i, :, 0:2, :nk] = g.transpose(0, 2, 1)
            T[i, :, 2:4, nk:cs] = g.transpose(0, 2, 1)
        out.append(T)
    return out


def broken_sobolev_power(
    disc: Discretization, velocity: np.ndarray, r: float, tables: Optional[list] = None
) -> float:
    """``||v_T||_{L^r}^r + |v_T|_{W^{1,r}(T_h)}^r`` of the cell unknowns."""
    if tables is None:
        tables = cell_gradient_tables(disc)
    total = 0.0
    for b, T in zip(disc.batches, tables):
        U = velocity[b.vdofs]
        vals = np.einsum("cqdj,cj->cqd", b.Vq, U)
        grads = np.einsum("cqdj,cj->cqd", T, U)
        total += (b.w * np.linalg.norm(vals, axis=-1) ** r).sum()
        total += (b.w * np.linalg.norm(grads, axis=-1) ** r).sum()
    return float(total)


@dataclass
class StudyLevel:
    n: int
    h: float
    value: float


@dataclass
class StudyReport:
    name: str
    family: str
    k: int
    r: float
    levels: list = field(default_factory=list)

    def growth(self) -> list[float]:
        v = [lv.value for lv in self.levels]
        return [b / a - 1.0 for a, b in zip(v, v[1:])]


def korn_study(
    family: str, levels: Sequence[int], k: int, r: float, samples: int = 200, seed: int = 0, amplitude: float = 0.15
) -> StudyReport:
    """Max over random ``v_h`` in U_{h,0} of (|v|_{L^r}^r + |v|_{W^{1,r}}^r) / ||v||_{eps,r,h}^r."""
    rep = StudyReport("korn", family, k, r)
    for n in levels:
        rng = np.random.default_rng([seed, n])
        disc = Discretization(generate(family, n, amplitude), k)
        tables = cell_gradient_tables(disc)
        worst = 0.0
        for _ in range(samples):
            v = _random_free_velocity(disc, rng)
            den = energy_norm(disc, v, r) ** r
            if den == 0.0:
                continue
            worst = max(worst, broken_sobolev_power(disc, v, r, tables) / den)
        rep.levels.append(StudyLevel(n, disc.mesh.h, worst))
    return rep


def energy_gram(disc: Discretization) -> sp.csr_matrix:
    """Gram matrix of ``||.||_{eps,2,h}^2`` on all velocity dofs."""
    lay = disc.layout
    rows, cols, vals = [], [], []
    for b in disc.batches:
        M = np.einsum("cq,cqmi,cqmj->cij", b.w, b.Eq, b.Eq, optimize=True)
        M += np.einsum("cf,cfq,cfqdi,cfqdj->cij", 1.0 / b.h_F, b.fw, b.Jq, b.Jq, optimize=True)
        nd = b.vdofs.shape[1]
        rows.append(np.repeat(b.vdofs, nd, axis=1).ravel())
        cols.append(np.tile(b.vdofs, (1, nd)).ravel())
        vals.append(M.ravel())
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(lay.n_velocity, lay.n_velocity)
    )


def pressure_gram(disc: Discretization) -> np.ndarray:
    lay = disc.layout
    M = np.zeros((lay.n_pressure, lay.n_pressure))
    for b in disc.batches:
        phi = b.pressure_values()
        loc = np.einsum("cq,cqi,cqj->cij", b.w, phi, phi)
        idx = b.pdofs - lay.pressure_offset
        for c in range(len(b.cells)):
            M[np.ix_(idx[c], idx[c])] = loc[c]
    return M


def infsup_constant(disc: Discretization, exclude_constants: bool = True) -> float:
    """Smallest generalized singular value of ``b_h`` on U_{h,0} x P_h (r = 2 norms)."""
    lay = disc.layout
    free = np.arange(lay.n_free_velocity)
    N = energy_gram(disc)[free][:, free].tocsc()
    problem = DiscreteProblem(disc, FlowLaw.newtonian(), lambda x: np.zeros((len(x), 2)))
    Bm = coupling_matrix(problem)[:, free]
    lu = spla.splu(N)
    X = lu.solve(Bm.T.toarray())
    S = Bm @ X
    S = 0.5 * (S + S.T)
    Mp = pressure_gram(disc)
    if exclude_constants:
        # restrict to the Mp-orthogonal complement of the constants
        one = np.ones(lay.n_pressure)
        m1 = Mp @ one
        Z = sla.null_space(m1[None, :])
        S, Mp = Z.T @ S @ Z, Z.T @ Mp @ Z
    ev = sla.eigh(S, Mp, eigvals_only=True, subset_by_index=[0, 0])
    return float(math.sqrt(max(ev[0], 0.0)))


def infsup_study(family: str, levels: Sequence[int], k: int = 1, r: float = 2.0, amplitude: float = 0.15) -> StudyReport:
    if r != 2.0:
        raise ValueError("inf-sup study is only supported for r = 2 (unsupported configuration)")
    rep = StudyReport("infsup", family, k, r)
    for n in levels:
        disc = Discretization(generate(family, n, amplitude), k)
        rep.levels.append(StudyLevel(n, disc.mesh.h, infsup_constant(disc)))
    return rep


def monotonicity_gaps(problem: DiscreteProblem, pairs: int = 50, seed: int = 0) -> np.ndarray:
    """``a_h(u, e) - a_h(w, e)`` with ``e = u - w`` for random pairs in U_{h,0}."""
    rng = np.random.default_rng(seed)
    gaps = np.empty(pairs)
    for i in range(pairs):
        u = _random_free_velocity(problem.disc, rng)
        w = _random_free_velocity(problem.disc, rng)
        e = u - w
        gaps[i] = (viscous_gradient(problem, u) - viscous_gradient(problem, w)) @ e
    return gaps
