"""Per-cell HHO operators for the vector-valued velocity space.

Local unknowns of a cell ``T`` are ordered as
``[v_T^x (nk), v_T^y (nk), v_F1^x (k+1), v_F1^y (k+1), v_F2^x, ...]``
with faces in the cell's own face order and ``nk = dim P^k(T)``.
Symmetric tensors use Mandel coordinates (see :mod:`hhostokes.rheology`).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from . import rheology
from .basis import CellBasis, FaceBasis, QuadratureRule, dim_poly, gram, quad_cell, quad_face
from .mesh import Mesh
from .rheology import EPS_TAN, SQRT2, FlowLaw, law_constants

DEFAULT_QUAD_BOOST = 4


@dataclass(frozen=True)
class DofLayout:
    """Global numbering ``[cells | interior faces | boundary faces | pressure | multiplier]``."""

    k: int
    n_cells: int
    interior_faces: tuple[int, ...]
    boundary_faces: tuple[int, ...]
    face_slot: dict = field(repr=False, compare=False)

    @classmethod
    def for_mesh(cls, mesh: Mesh, k: int) -> DofLayout:
        if k < 1:
            raise ValueError(f"polynomial degree must be >= 1, got {k}")
        interior, boundary = tuple(mesh.interior_faces), tuple(mesh.boundary_faces)
        slot = {f: i for i, f in enumerate(interior + boundary)}
        return cls(k, mesh.n_cells, interior, boundary, slot)

    @property
    def d(self) -> int:
        return 2

    @property
    def cell_size(self) -> int:
        return self.d * dim_poly(self.k)

    @property
    def face_size(self) -> int:
        return self.d * (self.k + 1)

    @property
    def pressure_size(self) -> int:
        return dim_poly(self.k)

    @property
    def n_faces(self) -> int:
        return len(self.interior_faces) + len(self.boundary_faces)

    @property
    def face_offset(self) -> int:
        return self.n_cells * self.cell_size

    @property
    def n_velocity(self) -> int:
        return self.face_offset + self.n_faces * self.face_size

    @property
    def n_free_velocity(self) -> int:
        return self.face_offset + len(self.interior_faces) * self.face_size

    @property
    def n_pressure(self) -> int:
        return self.n_cells * self.pressure_size

    @property
    def pressure_offset(self) -> int:
        return self.n_velocity

    @property
    def multiplier_index(self) -> int:
        return self.n_velocity + self.n_pressure

    @property
    def n_total(self) -> int:
        return self.multiplier_index + 1

    def cell_dofs(self, c: int) -> np.ndarray:
        return np.arange(c * self.cell_size, (c + 1) * self.cell_size)

    def face_dofs(self, f: int) -> np.ndarray:
        start = self.face_offset + self.face_slot[f] * self.face_size
        return np.arange(start, start + self.face_size)

    def pressure_dofs(self, c: int) -> np.ndarray:
        start = self.pressure_offset + c * self.pressure_size
        return np.arange(start, start + self.pressure_size)

    def local_dofs(self, mesh: Mesh, c: int) -> np.ndarray:
        """Global velocity indices of the local unknowns of cell ``c``."""
        parts = [self.cell_dofs(c)] + [self.face_dofs(f) for f in mesh.cells[c].faces]
        return np.concatenate(parts)

    def boundary_velocity_dofs(self) -> np.ndarray:
        return np.arange(self.n_free_velocity, self.n_velocity)

    def free_dofs(self) -> np.ndarray:
        """Indices kept as unknowns once boundary faces are eliminated."""
        return np.concatenate([np.arange(self.n_free_velocity), np.arange(self.n_velocity, self.n_total)])


def _symgrad_mandel(grads: np.ndarray) -> np.ndarray:
    """Mandel symmetric gradients of the vector basis ``phi e_x, phi e_y``.

    ``grads`` is (nq, n, 2); the result is (nq, 3, 2n).
    """
    gx, gy = grads[..., 0], grads[..., 1]
    z = np.zeros_like(gx)
    ex = np.stack([gx, z, gy / SQRT2], axis=1)
    ey = np.stack([z, gy, gx / SQRT2], axis=1)
    return np.concatenate([ex, ey], axis=2)


def _normal_trace(n: np.ndarray) -> np.ndarray:
    """3x2 matrix ``N`` with ``(N w)_c = w . (E_c n)`` for the Mandel basis ``E_c``."""
    nx, ny = n
    return np.array([[nx, 0.0], [0.0, ny], [ny / SQRT2, nx / SQRT2]])


def _blockdiag2(m: np.ndarray) -> np.ndarray:
    z = np.zeros_like(m)
    return np.block([[m, z], [z, m]])


@dataclass
class ElementOperators:
    cell: int
    k: int
    r: float
    ndof: int
    h_T: float
    area: float
    h_F: np.ndarray  # (nf,)
    G: np.ndarray  # (3 nk, ndof) Mandel coefficients of the symmetric gradient
    D: np.ndarray  # (nk, ndof)
    R: np.ndarray  # (2 nk1, ndof) velocity reconstruction in P^{k+1}
    residual: list  # per face (2(k+1), ndof), unscaled boundary residual coefficients
    B: np.ndarray  # (nk, ndof): int_T D(v) q_i
    pressure_mass: np.ndarray  # (nk, nk)
    pressure_mean: np.ndarray  # (nk,): int_T q_i
    cell_quad: QuadratureRule
    face_quads: list
    Gq: np.ndarray  # (nq, 3, ndof) values of G at cell quadrature points
    Eq: np.ndarray  # (nq, 3, ndof) Mandel symmetric gradient of v_T
    Vq: np.ndarray  # (nq, 2, ndof) values of v_T
    Dq: np.ndarray  # (nf, nqf, 2, ndof) unscaled boundary residual at face points
    Jq: np.ndarray  # (nf, nqf, 2, ndof) values of v_F - v_T
    face_weights: np.ndarray  # (nf, nqf)

    @property
    def n_faces(self) -> int:
        return len(self.h_F)

    def residual_scale(self, r: float | None = None) -> np.ndarray:
        r = self.r if r is None else r
        return self.h_F ** (-(r - 1.0) / r)

    def delta(self, v: np.ndarray, r: float | None = None) -> list[np.ndarray]:
        """Scaled face residual coefficients, one (2, k+1) array per face."""
        s = self.residual_scale(r)
        return [s[i] * (m @ v).reshape(2, -1) for i, m in enumerate(self.residual)]


def build_element_operators(
    mesh: Mesh, cell: int, k: int, r: float = 2.0, quad_boost: int = DEFAULT_QUAD_BOOST
) -> ElementOperators:
    c = mesh.cells[cell]
    nk, nk1, nkf = dim_poly(k), dim_poly(k + 1), k + 1
    nf = c.n_faces
    ndof = 2 * nk + nf * 2 * nkf
    cell_cols = slice(0, 2 * nk)

    def face_cols(i):
        return slice(2 * nk + i * 2 * nkf, 2 * nk + (i + 1) * 2 * nkf)

    bk = CellBasis.for_cell(c, k)
    bk1 = CellBasis.for_cell(c, k + 1)
    lin = 2 * k + 2
    qc = quad_cell(mesh, c, lin)
    w = qc.weights
    phik = bk.values(qc.points)
    phik1 = bk1.values(qc.points)
    Mk = phik.T @ (w[:, None] * phik)
    Mk_fac = cho_factor(Mk)

    # symmetric gradient reconstruction
    rhs = np.zeros((3, nk, ndof))
    Ek = _symgrad_mandel(bk.gradients(qc.points))  # (nq, 3, 2nk)
    rhs[:, :, cell_cols] += np.einsum("q,qi,qcj->cij", w, phik, Ek)
    faces = [mesh.faces[f] for f in c.faces]
    fbases = [FaceBasis.for_face(fc, k) for fc in faces]
    face_lin = [quad_face(mesh, fc, lin) for fc in faces]
    for i, (fc, fb, qf) in enumerate(zip(faces, fbases, face_lin)):
        N = _normal_trace(c.normals[i])
        phi_T = bk.values(qf.points)  # (nqf, nk)
        psi = fb.values(qf.points)  # (nqf, nkf)
        # (v_F - v_T) at face points as a map of local dofs: (nqf, 2, ndof)
        jump = np.zeros((len(qf.weights), 2, ndof))
        fcs = face_cols(i)
        jump[:, 0, fcs.start : fcs.start + nkf] = psi
        jump[:, 1, fcs.start + nkf : fcs.stop] = psi
        jump[:, 0, 0:nk] -= phi_T
        jump[:, 1, nk : 2 * nk] -= phi_T
        rhs += np.einsum("q,qi,ce,qej->cij", qf.weights, phi_T, N, jump)
    G = cho_solve(Mk_fac, rhs.transpose(1, 0, 2).reshape(nk, 3 * ndof)).reshape(nk, 3, ndof)
    G = G.transpose(1, 0, 2).reshape(3 * nk, ndof)
    D = G[:nk] + G[nk : 2 * nk]

    # velocity reconstruction in P^{k+1}
    Ek1 = _symgrad_mandel(bk1.gradients(qc.points))  # (nq, 3, 2nk1)
    K = np.einsum("q,qca,qcb->ab", w, Ek1, Ek1)
    Gvals = np.einsum("qi,cij->qcj", phik, G.reshape(3, nk, ndof))
    rhs_R = np.einsum("q,qca,qcj->aj", w, Ek1, Gvals)
    C = np.zeros((3, 2 * nk1))
    c_rhs = np.zeros((3, ndof))
    m1 = w @ phik1
    C[0, :nk1] = m1
    C[1, nk1:] = m1
    mk = w @ phik
    c_rhs[0, :nk] = mk
    c_rhs[1, nk : 2 * nk] = mk
    g1 = bk1.gradients(qc.points)
    C[2, :nk1] = 0.5 * w @ g1[:, :, 1]
    C[2, nk1:] = -0.5 * w @ g1[:, :, 0]
    for i, (fb, qf) in enumerate(zip(fbases, face_lin)):
        nx, ny = c.normals[i]
        ip = qf.weights @ fb.values(qf.points)
        fcs = face_cols(i)
        c_rhs[2, fcs.start : fcs.start + nkf] += 0.5 * ny * ip
        c_rhs[2, fcs.start + nkf : fcs.stop] -= 0.5 * nx * ip
    # closure rows rescaled to O(1) so that the stacked system is balanced
    C[:2] /= c.area
    c_rhs[:2] /= c.area
    C[2] *= c.diameter / c.area
    c_rhs[2] *= c.diameter / c.area
    A = np.vstack([K, C])
    R = np.linalg.lstsq(A, np.vstack([rhs_R, c_rhs]), rcond=None)[0]

    # boundary residual
    P_T = cho_solve(Mk_fac, phik.T @ (w[:, None] * phik1))  # P^{k+1} -> P^k
    sel_T = np.zeros((2 * nk, ndof))
    sel_T[:, cell_cols] = np.eye(2 * nk)
    cell_defect = _blockdiag2(P_T) @ R - sel_T  # pi_T(R v) - v_T
    residual = []
    for i, (fb, qf) in enumerate(zip(fbases, face_lin)):
        psi = fb.values(qf.points)
        MF = cho_factor(psi.T @ (qf.weights[:, None] * psi))
        PF1 = cho_solve(MF, psi.T @ (qf.weights[:, None] * bk1.values(qf.points)))
        PFk = cho_solve(MF, psi.T @ (qf.weights[:, None] * bk.values(qf.points)))
        sel_F = np.zeros((2 * nkf, ndof))
        sel_F[:, face_cols(i)] = np.eye(2 * nkf)
        residual.append(_blockdiag2(PF1) @ R - sel_F - _blockdiag2(PFk) @ cell_defect)

    # caches at the boosted quadrature used for nonlinear integrands
    qdeg = 2 * k + quad_boost
    qb = quad_cell(mesh, c, qdeg)
    phib = bk.values(qb.points)
    Gq = np.einsum("qi,cij->qcj", phib, G.reshape(3, nk, ndof))
    Eq = np.zeros((len(qb.weights), 3, ndof))
    Eq[:, :, cell_cols] = _symgrad_mandel(bk.gradients(qb.points))
    Vq = np.zeros((len(qb.weights), 2, ndof))
    Vq[:, 0, :nk] = phib
    Vq[:, 1, nk : 2 * nk] = phib
    fq = [quad_face(mesh, fc, qdeg) for fc in faces]
    nqf = len(fq[0].weights)
    Dq = np.zeros((nf, nqf, 2, ndof))
    Jq = np.zeros((nf, nqf, 2, ndof))
    for i, (fb, qf) in enumerate(zip(fbases, fq)):
        psi = fb.values(qf.points)
        Dq[i] = np.einsum("qa,daj->qdj", psi, residual[i].reshape(2, nkf, ndof))
        phi_T = bk.values(qf.points)
        fcs = face_cols(i)
        Jq[i, :, 0, fcs.start : fcs.start + nkf] = psi
        Jq[i, :, 1, fcs.start + nkf : fcs.stop] = psi
        Jq[i, :, 0, :nk] -= phi_T
        Jq[i, :, 1, nk : 2 * nk] -= phi_T

    return ElementOperators(
        cell=cell,
        k=k,
        r=r,
        ndof=ndof,
        h_T=c.diameter,
        area=c.area,
        h_F=np.array([fc.length for fc in faces]),
        G=G,
        D=D,
        R=R,
        residual=residual,
        B=Mk @ D,
        pressure_mass=Mk,
        pressure_mean=mk,
        cell_quad=qb,
        face_quads=fq,
        Gq=Gq,
        Eq=Eq,
        Vq=Vq,
        Dq=Dq,
        Jq=Jq,
        face_weights=np.array([qf.weights for qf in fq]),
    )


def interpolate(v, mesh: Mesh, cell: int, k: int) -> np.ndarray:
    """Local interpolant: L2 projections of ``v`` on the cell and on each of its faces.

    ``v`` maps (npts, 2) points to (npts, 2) values.
    """
    c = mesh.cells[cell]
    deg = 2 * k + 6
    qc = quad_cell(mesh, c, deg)
    bk = CellBasis.for_cell(c, k)
    phi = bk.values(qc.points)
    vals = np.asarray(v(qc.points), dtype=float)
    cT = cho_solve(cho_factor(phi.T @ (qc.weights[:, None] * phi)), phi.T @ (qc.weights[:, None] * vals))
    parts = [cT[:, 0], cT[:, 1]]
    for f in c.faces:
        parts.extend(face_projection(v, mesh, f, k).T)
    return np.concatenate(parts)


def face_projection(v, mesh: Mesh, face: int, k: int) -> np.ndarray:
    """(k+1, 2) coefficients of the L2 projection of a vector field on a face."""
    fc = mesh.faces[face]
    qf = quad_face(mesh, fc, 2 * k + 6)
    psi = FaceBasis.for_face(fc, k).values(qf.points)
    vals = np.asarray(v(qf.points), dtype=float)
    return cho_solve(cho_factor(psi.T @ (qf.weights[:, None] * psi)), psi.T @ (qf.weights[:, None] * vals))


def local_energy_seminorm(ops: ElementOperators, v: np.ndarray, r: float) -> float:
    """``(|grad_s v_T|_r^r + sum_F h_F^{1-r} |v_F - v_T|_r^r)^{1/r}`` on one cell."""
    return local_energy_power(ops, v, r) ** (1.0 / r)


def local_energy_power(ops: ElementOperators, v: np.ndarray, r: float) -> float:
    e = ops.Eq @ v  # (nq, 3)
    total = ops.cell_quad.weights @ np.linalg.norm(e, axis=1) ** r
    j = np.linalg.norm(ops.Jq @ v, axis=-1)  # (nf, nqf)
    total += ((ops.h_F ** (1.0 - r))[:, None] * ops.face_weights * j**r).sum()
    return float(total)


def _scaled_Dq(ops: ElementOperators, r: float) -> np.ndarray:
    return ops.Dq * ops.residual_scale(r)[:, None, None, None]


def stab_residual_energy(ops: ElementOperators, v: np.ndarray, r: float) -> float:
    """``s_T(v, v) = int_{dT} |delta v|^r``."""
    d = np.linalg.norm(_scaled_Dq(ops, r) @ v, axis=-1)
    return float((ops.face_weights * d**r).sum())


def gradient_power(ops: ElementOperators, v: np.ndarray, r: float) -> float:
    """``|G v|_{L^r(T)}^r``."""
    return float(ops.cell_quad.weights @ np.linalg.norm(ops.Gq @ v, axis=1) ** r)


def _check_gamma(law: FlowLaw, gamma: float) -> None:
    c = law_constants(law)
    tol = 1e-12 * c.sigma_hc
    if not (c.sigma_sm - tol <= gamma <= c.sigma_hc + tol):
        raise ValueError(
            f"stabilization parameter gamma={gamma:g} outside the admissible interval "
            f"[sigma_sm, sigma_hc] = [{c.sigma_sm:g}, {c.sigma_hc:g}]"
        )


def _power_flux(d: np.ndarray, r: float) -> np.ndarray:
    """``|d|^{r-2} d`` for vectors on the last axis, zero at ``d = 0``."""
    if r == 2.0:
        return d
    n = np.linalg.norm(d, axis=-1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(n > 0, n ** (r - 2.0) * d, 0.0)


def _power_flux_tangent(d: np.ndarray, r: float, eps: float = EPS_TAN) -> np.ndarray:
    """Jacobian of ``|d|^{r-2} d``: ``|d|^{r-2} I + (r-2)|d|^{r-4} d d^T``."""
    m = d.shape[-1]
    if r == 2.0:
        return np.broadcast_to(np.eye(m), d.shape + (m,)).copy()
    n = np.maximum(np.linalg.norm(d, axis=-1), eps)[..., None, None]
    return n ** (r - 2.0) * np.eye(m) + (r - 2.0) * n ** (r - 4.0) * d[..., :, None] * d[..., None, :]


def local_viscous_gradient(ops: ElementOperators, law: FlowLaw, gamma: float, w: np.ndarray) -> np.ndarray:
    """Vector ``a_T(w, e_j)`` over the local basis ``e_j``."""
    _check_gamma(law, gamma)
    tau = ops.Gq @ w
    sig = rheology.stress_mandel(law, tau)
    res = np.einsum("q,qc,qcj->j", ops.cell_quad.weights, sig, ops.Gq)
    Dq = _scaled_Dq(ops, law.r)
    flux = _power_flux(Dq @ w, law.r)
    res += gamma * np.einsum("fq,fqd,fqdj->j", ops.face_weights, flux, Dq)
    return res


def local_viscous_residual(ops: ElementOperators, law: FlowLaw, gamma: float, w: np.ndarray, v: np.ndarray) -> float:
    """``int_T sigma(G w):G v + gamma s_T(w, v)``."""
    return float(local_viscous_gradient(ops, law, gamma, w) @ v)


def local_viscous_tangent(ops: ElementOperators, law: FlowLaw, gamma: float, w: np.ndarray) -> np.ndarray:
    _check_gamma(law, gamma)
    tau = ops.Gq @ w
    C = rheology.tangent_mandel(law, tau)
    M = np.einsum("q,qci,qcd,qdj->ij", ops.cell_quad.weights, ops.Gq, C, ops.Gq, optimize=True)
    Dq = _scaled_Dq(ops, law.r)
    T = _power_flux_tangent(Dq @ w, law.r)
    M += gamma * np.einsum("fq,fqai,fqab,fqbj->ij", ops.face_weights, Dq, T, Dq, optimize=True)
    return M


def local_divergence_coupling(ops: ElementOperators, v: np.ndarray, q: np.ndarray) -> float:
    """Local contribution ``-int_T D(v) q`` to ``b_h``."""
    return -float(q @ ops.B @ v)


def reconstruct_cell_values(ops: ElementOperators, mesh: Mesh, v: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Evaluate the cell unknown ``v_T`` at arbitrary points, shape (npts, 2)."""
    c = mesh.cells[ops.cell]
    phi = CellBasis.for_cell(c, ops.k).values(points)
    nk = phi.shape[1]
    return np.column_stack([phi @ v[:nk], phi @ v[nk : 2 * nk]])


def reconstruct_velocity(ops: ElementOperators, mesh: Mesh, v: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Evaluate ``R v`` (degree k+1) at points, shape (npts, 2)."""
    c = mesh.cells[ops.cell]
    phi = CellBasis.for_cell(c, ops.k + 1).values(points)
    coef = ops.R @ v
    n = phi.shape[1]
    return np.column_stack([phi @ coef[:n], phi @ coef[n:]])


def gram_cell(mesh: Mesh, cell: int, k: int) -> np.ndarray:
    c = mesh.cells[cell]
    return gram(CellBasis.for_cell(c, k), quad_cell(mesh, c, 2 * k + 2))
