"""Dilation generator, conjugate operator, Mourre forms, Feshbach map and virial test.

One-photon functions are handled in the weight-folded representation
f_q = sqrt(w_q) h(k_q). Along a ray the folded samples behave like r h(r), on
which the symmetrized radial dilation acts as i d/dr, so its discretization is
i times an antisymmetric central difference: exactly Hermitian in l^2.
With this sign i[|k|, a] = 1 in the continuum.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import Refusal
from .fiber import (
    assemble,
    creation_part,
    field_from_folded,
    folded_form_factor,
    level_projector,
    lift_fock,
    number_diagonal,
    vacuum_projector,
    velocity_diagonals,
)
from .fock import second_quantize, second_quantize_offdiag


def dilation_generator(grid):
    """One-particle dilation matrix, block-diagonal over directions."""
    R = grid.n_radial
    if R < 3:
        raise Refusal("dilation generator needs at least 3 radial shells", {"n_radial": R})
    step = 1.0 / (2.0 * grid.dr)
    block = sp.diags([np.full(R - 1, -1j * step), np.full(R - 1, 1j * step)], [-1, 1], shape=(R, R))
    return sp.kron(sp.identity(grid.n_directions), block, format="csr")


def second_quantized_dilation(cfg, a1=None):
    """dGamma(a) on the fiber space."""
    a1 = dilation_generator(cfg.grid) if a1 is None else a1
    return lift_fock(cfg, second_quantize_offdiag(cfg.basis, a1))


def direction_cosines(grid):
    """k_hat components per mode, shape (3, m)."""
    return (grid.modes / grid.k_abs[:, None]).T


def radial_position(grid):
    """|y| restricted to radial motion: sqrt of the Dirichlet radial Laplacian per direction."""
    R = grid.n_radial
    lap = (np.diag(np.full(R, 2.0)) - np.diag(np.ones(R - 1), 1) - np.diag(np.ones(R - 1), -1)) / grid.dr**2
    vals, vecs = np.linalg.eigh(lap)
    block = (vecs * np.sqrt(np.maximum(vals, 0.0))) @ vecs.T
    return block, sp.kron(sp.identity(grid.n_directions), sp.csr_matrix(block), format="csr")


@dataclass
class ConjugateOperatorSpec:
    cfg: object
    j: int
    theta: float
    eps: float
    beta: float = 0.2

    def __post_init__(self):
        if self.theta <= 0 or self.eps <= 0:
            raise ValueError("theta and eps must be positive")

    @classmethod
    def from_exponents(cls, cfg, j, kappa=0.25, alpha=0.5, beta=0.2):
        if not 0.0 < kappa < alpha < 1.0:
            raise ValueError("need 0 < kappa < alpha < 1")
        return cls(cfg, j, theta=cfg.g**kappa, eps=cfg.g**alpha, beta=beta)


@dataclass
class ConjugateOperators:
    spec: ConjugateOperatorSpec
    H: sp.csr_matrix
    H0: np.ndarray
    dGa: sp.csr_matrix
    D: sp.csr_matrix
    A: sp.csr_matrix
    B: sp.csr_matrix
    HD: sp.csr_matrix
    phi_iaF: sp.csr_matrix
    aF: sp.csr_matrix
    R2: np.ndarray
    Pj: sp.csr_matrix
    analytic_free: np.ndarray
    pj_block_residual: float
    norm_D: float


def _solve_r2(h0, e_j, eps, tol=1e-10):
    """((H0 - E_j)^2 + eps^2)^{-1}; H0 is diagonal here, so this is exact division."""
    if eps < tol:
        raise Refusal("regularization below solver tolerance", {"eps": eps, "tol": tol})
    return 1.0 / ((h0 - e_j) ** 2 + eps**2)


def conjugate_operator(spec):
    cfg = spec.cfg
    g, theta = cfg.g, spec.theta
    op = assemble(cfg)
    H = op.matrix
    h0 = op.free_diagonal
    e_j = cfg.unperturbed_level(spec.j)
    R2 = _solve_r2(h0, e_j, spec.eps)
    Pj = level_projector(cfg, spec.j)
    Pbar = sp.identity(cfg.dim, format="csr") - Pj
    folded = folded_form_factor(cfg)
    a_star_F = creation_part(cfg, folded)
    aF = a_star_F.conj().T.tocsr()
    R2m = sp.diags(R2)
    X = (Pj @ aF @ R2m @ Pbar).tocsr()
    D = (g * theta * (X - X.conj().T)).tocsr()
    a1 = dilation_generator(cfg.grid)
    dGa = second_quantized_dilation(cfg, a1)
    ia_folded = np.einsum("qp,pab->qab", (1j * a1).toarray(), folded)
    phi_iaF = field_from_folded(cfg, ia_folded)
    HD = (H @ D - D @ H).tocsr()
    P_omega = vacuum_projector(cfg)
    B = ((1.0 - spec.beta) * (sp.identity(cfg.dim) - P_omega) - g * phi_iaF - HD).tocsr()
    khat = direction_cosines(cfg.grid)
    dG_khat = np.stack([lift_fock(cfg, cfg.basis.occupations @ khat[c]) for c in range(3)])
    analytic_free = number_diagonal(cfg) - np.sum(velocity_diagonals(cfg) * dG_khat, axis=0)
    block = (Pj @ (H - e_j * sp.identity(cfg.dim)) @ Pj).tocsr()
    pj_res = float(abs(block).max()) if block.nnz else 0.0
    dense_x = X[np.flatnonzero(Pj.diagonal())].toarray()
    norm_D = float(g * theta * np.linalg.norm(dense_x, 2)) if dense_x.size else 0.0
    A = (dGa + 1j * D).tocsr()
    return ConjugateOperators(spec, H, h0, dGa, D, A, B, HD, phi_iaF, aF, R2, Pj, analytic_free, pj_res, norm_D)


def analytic_commutator(ops):
    """N - (Pi - P_f)/M . dGamma(k_hat) - g phi(i a F_x) - [H, D], as a sparse matrix."""
    g = ops.spec.cfg.g
    return (sp.diags(ops.analytic_free) - g * ops.phi_iaF - ops.HD).tocsr()


def matrix_commutator(H, A):
    """[H, iA] = i(HA - AH) computed directly."""
    return (1j * (H @ A - A @ H)).tocsr()


def commutator_two_ways(ops):
    """Compare the direct matrix commutator with the expanded form.

    The interaction and D parts agree exactly on the truncated space; the
    free part differs because the grid dilation only approximates
    i[|k|, a] = 1, and that difference is returned separately.
    """
    cfg = ops.spec.cfg
    direct = matrix_commutator(ops.H, ops.A)
    expanded = analytic_commutator(ops)
    free_matrix = matrix_commutator(sp.diags(ops.H0), ops.dGa)
    interaction_direct = direct - free_matrix
    interaction_expanded = expanded - sp.diags(ops.analytic_free)
    diff = abs(interaction_direct - interaction_expanded)
    scale = max(abs(interaction_direct).max(), 1e-300)
    free_diff = abs(free_matrix - sp.diags(ops.analytic_free))
    top = cfg.basis.number == cfg.basis.n_max
    top_rows = np.tile(top, cfg.atom.dim)
    free_diff = free_diff.tocoo()
    on_top = top_rows[free_diff.row] | top_rows[free_diff.col]
    return {
        "interaction_max_abs": float(diff.max()) if diff.nnz else 0.0,
        "interaction_relative": float(diff.max() / scale) if diff.nnz else 0.0,
        "free_max_abs": float(free_diff.data.max()) if free_diff.nnz else 0.0,
        "free_max_abs_top_sector": float(free_diff.data[on_top].max()) if np.any(on_top) else 0.0,
        "free_max_abs_below_top": float(free_diff.data[~on_top].max()) if np.any(~on_top) else 0.0,
    }


def compressed_identity_residual(ops):
    """max |P_j B P_j - 2 g^2 theta P_j a(F) R^2 a*(F) P_j| over the P_j block."""
    cfg, spec = ops.spec.cfg, ops.spec
    idx = np.flatnonzero(ops.Pj.diagonal())
    lhs = ops.B[idx][:, idx].toarray()
    rhs = 2.0 * cfg.g**2 * spec.theta * pj_resolvent_block(ops)
    return float(np.max(np.abs(lhs - rhs))), lhs, rhs


def pj_resolvent_block(ops):
    """P_j a(F) R_eps^2 a*(F) P_j on Ran P_j as a dense m_j x m_j matrix."""
    idx = np.flatnonzero(ops.Pj.diagonal())
    rows = ops.aF[idx]
    return (rows @ sp.diags(ops.R2) @ rows.conj().T).toarray()


def unperturbed_window(ops, half_width):
    e_j = ops.spec.cfg.unperturbed_level(ops.spec.j)
    return np.flatnonzero(np.abs(ops.H0 - e_j) <= half_width)


def check_window(ops, half_width):
    """Distance from the window to the other unperturbed levels E_i(Pi)."""
    cfg, j = ops.spec.cfg, ops.spec.j
    e_j = cfg.unperturbed_level(j)
    others = [cfg.unperturbed_level(i) for i in range(len(cfg.atom.energies)) if i != j]
    return min(abs(e - e_j) for e in others) - half_width


@dataclass
class MourreReport:
    window: tuple
    size: int
    min_eigenvalue: float
    predicted_scale: float
    positive: bool
    matrix_window_min: float = float("nan")
    distance: float = float("nan")
    flags: list = field(default_factory=list)

    def as_dict(self):
        return dict(self.__dict__)


def mourre_form(commutator, vectors):
    """Smallest eigenvalue of V^dagger C V for an orthonormal window basis V."""
    if vectors.shape[1] == 0:
        return float("nan")
    m = vectors.conj().T @ (commutator @ vectors)
    return float(np.min(np.linalg.eigvalsh(0.5 * (m + m.conj().T))))


def _compress_indices(mat, idx):
    sub = mat[idx][:, idx].toarray()
    return 0.5 * (sub + sub.conj().T)


def mourre_estimate(ops, half_width, gamma=None, kappa=0.25, alpha=0.5):
    """Positivity of the expanded commutator on E_Delta(H_0) around E_j(Pi).

    Also reports the directly computed commutator on the same window for
    comparison.
    """
    cfg = ops.spec.cfg
    e_j = cfg.unperturbed_level(ops.spec.j)
    idx = unperturbed_window(ops, half_width)
    dist = check_window(ops, half_width)
    flags = []
    if dist <= 0:
        flags.append("window touches another unperturbed level")
    if len(idx) == 0:
        return MourreReport((e_j - half_width, e_j + half_width), 0, float("nan"), float("nan"), False, flags=["vacuous"])
    cmin = float(np.min(np.linalg.eigvalsh(_compress_indices(analytic_commutator(ops), idx))))
    mmin = float(np.min(np.linalg.eigvalsh(_compress_indices(matrix_commutator(ops.H, ops.A), idx))))
    scale = gamma * cfg.g ** (2 + kappa - alpha) if gamma is not None else float("nan")
    return MourreReport(
        (e_j - half_width, e_j + half_width), len(idx), cmin, scale, cmin > 0, mmin, dist, flags
    )


@dataclass
class FeshbachResult:
    matrix: np.ndarray
    lambda0: float
    min_eigenvalue: float
    min_singular: float
    isospectral_ok: bool


def feshbach_map(B, p_idx, q_idx, lam, sv_tol=1e-8):
    """E(lam) = B_PP - B_PQ (B_QQ - lam)^{-1} B_QP for dense B and index sets."""
    Bqq = B[np.ix_(q_idx, q_idx)] - lam * np.eye(len(q_idx))
    smin = float(np.min(np.linalg.svd(Bqq, compute_uv=False))) if len(q_idx) else np.inf
    if smin <= sv_tol:
        raise Refusal("Feshbach complement not invertible", {"min_singular_value": smin})
    corr = B[np.ix_(p_idx, q_idx)] @ np.linalg.solve(Bqq, B[np.ix_(q_idx, p_idx)])
    E = B[np.ix_(p_idx, p_idx)] - corr
    return 0.5 * (E + E.conj().T), smin


def feshbach(ops, half_width, lam0=None, tol=1e-10):
    """Feshbach map of E_Delta(H_0) B E_Delta(H_0) onto Ran P_j."""
    idx = unperturbed_window(ops, half_width)
    Bw = _compress_indices(ops.B, idx)
    if lam0 is None:
        lam0 = float(np.min(np.linalg.eigvalsh(Bw)))
    pj = set(np.flatnonzero(ops.Pj.diagonal()))
    p_loc = np.array([k for k, i in enumerate(idx) if i in pj])
    q_loc = np.array([k for k, i in enumerate(idx) if i not in pj])
    E, smin = feshbach_map(Bw, p_loc, q_loc, lam0)
    emin = float(np.min(np.linalg.eigvalsh(E)))
    return FeshbachResult(E, lam0, emin, smin, lam0 >= emin - tol)


@dataclass
class VirialResult:
    residual: float
    bound: float
    eigen_residual: float
    norm_A_psi: float

    @property
    def ok(self):
        return abs(self.residual) <= self.bound


def virial(H, A, psi):
    """<psi, [H, iA] psi> against 10 * ||H psi - E psi|| * ||A psi||."""
    psi = psi / np.linalg.norm(psi)
    h_psi = H @ psi
    a_psi = A @ psi
    energy = np.real(np.vdot(psi, h_psi))
    res = float(np.linalg.norm(h_psi - energy * psi))
    value = float(-2.0 * np.imag(np.vdot(h_psi, a_psi)))
    na = float(np.linalg.norm(a_psi))
    return VirialResult(value, 10.0 * res * na, res, na)


def number_operator_fiber(cfg):
    return lift_fock(cfg, second_quantize(cfg.basis, np.ones(cfg.basis.mode_count)))
