"""Eigen-analysis of fiber operators: ground states, windows, dispersion, dressing."""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import eigsh
from scipy.special import erfc

from .atom import coupling_tensor, exp_weight
from .fiber import (
    assemble,
    free_diagonal,
    lift_fock,
    soft_projector,
    velocity_diagonals,
)

DENSE_LIMIT = 1500


def _as_matrix(op):
    return op.matrix if hasattr(op, "matrix") else op


def residual_norms(mat, vals, vecs):
    return np.linalg.norm(mat @ vecs - vecs * vals[None, :], axis=0)


def start_vector(n, dtype):
    """Seeded generic start vector for ARPACK.

    ARPACK's own random default breaks run-to-run reproducibility, and a
    uniform vector is orthogonal to every symmetry-odd eigenvector.
    """
    rng = np.random.default_rng(12345)
    v = rng.standard_normal(n)
    if np.issubdtype(dtype, np.complexfloating):
        v = v + 1j * rng.standard_normal(n)
    return (v / np.linalg.norm(v)).astype(dtype)


def rayleigh_ritz(mat, vecs):
    """Orthonormalize a Krylov basis and re-diagonalize H on its span.

    ARPACK vectors inside a degenerate cluster are only approximately
    orthogonal; this restores orthonormal Ritz pairs.
    """
    q, _ = np.linalg.qr(vecs)
    small = q.conj().T @ (mat @ q)
    vals, rot = np.linalg.eigh(0.5 * (small + small.conj().T))
    return vals, q @ rot


def lowest_eigs(op, count, tol=1e-13):
    """Lowest `count` eigenpairs: dense below DENSE_LIMIT, ARPACK Lanczos above.

    Returns (values, vectors, residual norms).
    """
    mat = _as_matrix(op)
    n = mat.shape[0]
    count = min(count, n)
    if n <= DENSE_LIMIT:
        dense = mat.toarray() if sp.issparse(mat) else np.asarray(mat)
        vals, vecs = np.linalg.eigh(dense)
        vals, vecs = vals[:count], vecs[:, :count]
    else:
        v0 = start_vector(n, mat.dtype)
        _, vecs = eigsh(mat, k=count, which="SA", tol=tol, ncv=max(2 * count + 1, 40), v0=v0)
        vals, vecs = rayleigh_ritz(mat, vecs)
    return vals, vecs, residual_norms(mat, vals, vecs)


@dataclass
class GroundState:
    energy: float
    vector: np.ndarray
    gap: float
    residual: float
    simple: bool
    soft_leak: float
    flags: list = field(default_factory=list)


def ground_state(cfg, op=None, simplicity_tol=1e-8):
    op = assemble(cfg) if op is None else op
    vals, vecs, res = lowest_eigs(op, 2)
    psi = vecs[:, 0]
    # fix the global phase so the vacuum-ground component is real positive
    ref = psi[0]
    if abs(ref) > 0:
        psi = psi * (abs(ref) / ref)
    gap = float(vals[1] - vals[0]) if len(vals) > 1 else np.inf
    simple = gap > simplicity_tol * abs(cfg.atom.energies[0])
    leak = float(np.linalg.norm(psi - soft_projector(cfg) @ psi))
    flags = [] if simple else ["simplicity not resolved"]
    return GroundState(float(vals[0]), psi, gap, float(res[0]), simple, leak, flags)


def velocity_expectation(cfg, psi):
    """Feynman-Hellmann gradient <psi, (Pi - P_f)/M psi>."""
    vel = velocity_diagonals(cfg)
    return np.real(vel @ np.abs(psi) ** 2)


def dressing_deficit(psi, cfg):
    """1 - |<psi, phi_0 (x) Omega>|^2, summed from the complement for precision."""
    w = np.abs(psi) ** 2
    return float(np.sum(w) - w[0])


def overlap_and_gap(cfg):
    gs = ground_state(cfg)
    return gs.gap, dressing_deficit(gs.vector, cfg)


def second_order(cfg):
    """Rayleigh-Schroedinger data around phi_0 (x) Omega from the coupling tensor.

    Returns (energy coefficient S, deficit coefficient D) with
    E_g - E_0(Pi) ~ -g^2 S and 1 - |overlap|^2 ~ g^2 D.
    """
    grid = cfg.grid
    tensor = coupling_tensor(cfg.atom, cfg.ff, grid).values
    e_atom = cfg.atom.state_energies()
    inv_m = cfg.atom.potential.inverse_total_mass
    e_ref = e_atom[0] + 0.5 * inv_m * float(cfg.Pi @ cfg.Pi)
    disp = grid.dispersion_free if cfg.dispersion == "free" else grid.dispersion_mod
    photon = 0.5 * inv_m * np.sum((cfg.Pi[None, :] - grid.modes) ** 2, axis=1) + disp
    amp2 = grid.weights[:, None] * np.abs(tensor[:, :, 0]) ** 2
    denom = e_atom[None, :] + photon[:, None] - e_ref
    return float(np.sum(amp2 / denom)), float(np.sum(amp2 / denom**2))


def fd_step(cfg):
    mass = cfg.atom.potential.total_mass
    return 1e-4 * np.sqrt(2.0 * mass * abs(cfg.atom.energies[0]))


@dataclass
class DispersionCurve:
    Pi: np.ndarray
    energy: np.ndarray
    grad_fh: np.ndarray
    grad_fd: np.ndarray
    gap: np.ndarray
    deficit: np.ndarray
    flags: list

    @property
    def gradient_deviation(self):
        return np.max(np.linalg.norm(self.grad_fh - self.grad_fd, axis=1))

    @property
    def relative_deviation(self):
        scale = np.maximum(np.linalg.norm(self.grad_fd, axis=1), 1e-300)
        dev = np.linalg.norm(self.grad_fh - self.grad_fd, axis=1)
        moving = np.linalg.norm(self.Pi, axis=1) > 0
        return float(np.max(dev[moving] / scale[moving])) if np.any(moving) else 0.0

    def rows(self):
        for i in range(len(self.energy)):
            yield [*self.Pi[i], self.energy[i], *self.grad_fh[i], *self.grad_fd[i], self.gap[i], self.deficit[i]]


def dispersion_scan(cfg, Pis, step=None):
    """E_g(Pi) over the samples with FH and central-difference gradients."""
    Pis = np.atleast_2d(np.asarray(Pis, dtype=float))
    step = fd_step(cfg) if step is None else step
    out = {k: [] for k in ("energy", "fh", "fd", "gap", "deficit")}
    flags = []
    for p in Pis:
        c = cfg.with_(Pi=p)
        gs = ground_state(c)
        if gs.flags:
            flags.append((p.tolist(), gs.flags))
        fd = np.zeros(3)
        for comp in range(3):
            e = np.zeros(3)
            e[comp] = step
            up = lowest_eigs(assemble(c.with_(Pi=p + e)), 1)[0][0]
            dn = lowest_eigs(assemble(c.with_(Pi=p - e)), 1)[0][0]
            fd[comp] = (up - dn) / (2.0 * step)
        out["energy"].append(gs.energy)
        out["fh"].append(velocity_expectation(c, gs.vector))
        out["fd"].append(fd)
        out["gap"].append(gs.gap)
        out["deficit"].append(dressing_deficit(gs.vector, c))
    return DispersionCurve(
        Pi=Pis,
        energy=np.array(out["energy"]),
        grad_fh=np.array(out["fh"]),
        grad_fd=np.array(out["fd"]),
        gap=np.array(out["gap"]),
        deficit=np.array(out["deficit"]),
        flags=flags,
    )


@dataclass
class SpectralWindow:
    lo: float
    hi: float
    values: np.ndarray
    vectors: np.ndarray
    residuals: np.ndarray
    flags: list = field(default_factory=list)

    @property
    def size(self):
        return len(self.values)

    def projector(self):
        return self.vectors @ self.vectors.conj().T


def spectral_projector(op, window, cap=400, tol=1e-12):
    """Orthonormal basis of Ran E_window(H)."""
    lo, hi = window
    mat = _as_matrix(op)
    n = mat.shape[0]
    flags = []
    if n <= DENSE_LIMIT:
        dense = mat.toarray() if sp.issparse(mat) else np.asarray(mat)
        vals, vecs = np.linalg.eigh(dense)
    else:
        k = min(cap, n - 2)
        v0 = start_vector(n, mat.dtype)
        _, vecs = eigsh(mat, k=k, sigma=0.5 * (lo + hi), which="LM", tol=tol, v0=v0)
        vals, vecs = rayleigh_ritz(mat, vecs)
        if np.all((vals >= lo) & (vals <= hi)):
            flags.append("window population reached the cap; may be incomplete")
    inside = (vals >= lo) & (vals <= hi)
    vals, vecs = vals[inside], vecs[:, inside]
    if len(vals) > cap:
        flags.append(f"window holds {len(vals)} states, above cap {cap}")
    order = np.argsort(vals)
    vals, vecs = vals[order], vecs[:, order]
    return SpectralWindow(lo, hi, vals, vecs, residual_norms(mat, vals, vecs), flags)


def localization(cfg, alphas, psi=None, window=None):
    """||e^{alpha|x|} psi|| and ||(N+1) e^{alpha|x|} E_window|| for each alpha."""
    if psi is None:
        psi = ground_state(cfg).vector
    number = lift_fock(cfg, cfg.basis.number.astype(float))
    rows = []
    for alpha in alphas:
        w2 = sp.kron(exp_weight(cfg.atom, 2.0 * alpha), sp.identity(cfg.basis.dim), format="csr")
        state_norm = float(np.sqrt(np.real(np.vdot(psi, w2 @ psi))))
        win_norm = np.nan
        if window is not None and window.size:
            v = window.vectors
            weighted = w2 @ (((number + 1.0) ** 2)[:, None] * v)
            m = v.conj().T @ weighted
            win_norm = float(np.sqrt(np.max(np.linalg.eigvalsh(0.5 * (m + m.conj().T)))))
        rows.append((float(alpha), state_norm, win_norm))
    return rows


def unperturbed_spectrum(cfg):
    return np.sort(free_diagonal(cfg))


def spectral_bounds(op):
    """Gershgorin interval containing the spectrum of a Hermitian matrix."""
    mat = sp.csr_matrix(_as_matrix(op))
    diag = np.real(mat.diagonal())
    radius = np.asarray(abs(mat).sum(axis=1)).ravel() - np.abs(diag)
    return float(np.min(diag - radius)), float(np.max(diag + radius))


def smooth_cutoff(hi, width, lo=None):
    """f(E) = erfc-shaped step: ~1 below hi, ~0 above, transition of the given width."""

    def f(e):
        out = 0.5 * erfc((np.asarray(e) - hi) / width)
        if lo is not None:
            out = out * 0.5 * erfc((lo - np.asarray(e)) / width)
        return out

    return f


def apply_function(op, f, v, tol=1e-12, max_degree=20000):
    """f(H) v by a Chebyshev expansion on the Gershgorin interval.

    The degree doubles until the trailing coefficients fall below tol.
    Returns (f(H) v, degree).
    """
    mat = _as_matrix(op)
    a, b = spectral_bounds(mat)
    center, half = 0.5 * (a + b), 0.5 * (b - a) * (1.0 + 1e-9)
    degree = 64
    while True:
        coef = np.polynomial.chebyshev.chebinterpolate(lambda x: f(center + half * x), degree)
        if np.max(np.abs(coef[-8:])) < tol or degree >= max_degree:
            break
        degree *= 2
    if np.max(np.abs(coef[-8:])) >= tol:
        raise ValueError("Chebyshev expansion did not converge; widen the cutoff")
    v = np.asarray(v, dtype=complex)
    prev, cur = v, (mat @ v - center * v) / half
    out = coef[0] * prev + coef[1] * cur
    for c in coef[2:]:
        prev, cur = cur, 2.0 * (mat @ cur - center * cur) / half - prev
        out += c * cur
    return out, degree
