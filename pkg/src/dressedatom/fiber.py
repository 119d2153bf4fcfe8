"""Fiber Hamiltonians at fixed total momentum on atom (x) Fock space.

States are indexed atom-major: ``a * fock_dim + s``. The free part is diagonal
in this basis because the photon momentum sum_q n_q k_q is diagonal on
occupation states, so (Pi - P_f)^2 / 2M needs no operator products.
"""

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from .atom import coupling_tensor, solve_atom
from .errors import SizeLimitExceeded
from .fock import modified_dispersion
from .fock import soft_projector as fock_soft_projector

DEFAULT_SIZE_CAP = 10**6


@dataclass
class FiberConfig:
    atom: object
    basis: object
    ff: object
    Pi: np.ndarray = field(default_factory=lambda: np.zeros(3))
    g: float = None
    dispersion: str = "free"
    size_cap: int = DEFAULT_SIZE_CAP

    def __post_init__(self):
        self.Pi = np.asarray(self.Pi, dtype=float).reshape(3)
        if self.g is None:
            self.g = self.ff.g
        if not np.isfinite(self.g) or self.g < 0:
            raise ValueError("coupling must be finite and non-negative")
        if self.dispersion not in ("free", "modified"):
            raise ValueError("dispersion must be 'free' or 'modified'")
        if self.basis.grid is None:
            raise ValueError("Fock basis must carry its mode grid")

    @property
    def grid(self):
        return self.basis.grid

    @property
    def dim(self):
        return self.atom.dim * self.basis.dim

    @property
    def inv_mass(self):
        return self.atom.potential.inverse_total_mass

    def with_(self, **changes):
        return replace(self, **changes)

    def unperturbed_level(self, j):
        """E_j(Pi) = E_j^at + Pi^2 / 2M."""
        return self.atom.energies[j] + 0.5 * self.inv_mass * float(self.Pi @ self.Pi)


@dataclass
class FiberOperator:
    """H = diag(free) + g * coupling, kept split so derived operators can reuse pieces."""

    cfg: FiberConfig
    free_diagonal: np.ndarray
    coupling: sp.csr_matrix

    @property
    def matrix(self):
        m = sp.diags(self.free_diagonal) + self.cfg.g * self.coupling
        return m.tocsr()

    @property
    def dim(self):
        return len(self.free_diagonal)

    @property
    def free(self):
        return sp.diags(self.free_diagonal).tocsr()


def photon_momentum(basis):
    """Per-state total photon momentum, shape (fock_dim, 3)."""
    return basis.occupations @ basis.grid.modes


def lift_fock(cfg, diag_or_matrix):
    """1_atom (x) X for a Fock operator given as a diagonal array or sparse matrix."""
    if sp.issparse(diag_or_matrix):
        return sp.kron(sp.identity(cfg.atom.dim), diag_or_matrix, format="csr")
    return np.tile(np.asarray(diag_or_matrix), cfg.atom.dim)


def free_diagonal(cfg):
    basis, grid = cfg.basis, cfg.grid
    disp = grid.dispersion_free if cfg.dispersion == "free" else grid.dispersion_mod
    rel = cfg.Pi[None, :] - photon_momentum(basis)
    photon = 0.5 * cfg.inv_mass * np.sum(rel**2, axis=1) + basis.occupations @ disp
    atomic = cfg.atom.state_energies()
    return (atomic[:, None] + photon[None, :]).ravel()


def folded_form_factor(cfg, tensor=None):
    """sqrt(w_q) A(k_q): the form factor in the weight-folded mode representation."""
    if tensor is None:
        tensor = coupling_tensor(cfg.atom, cfg.ff, cfg.grid).values
    return np.sqrt(cfg.grid.weights)[:, None, None] * tensor


def creation_part(cfg, folded):
    """a*(F) = sum_q F_q (x) a_q^dagger for atom-matrix valued folded coefficients F_q."""
    basis = cfg.basis
    src, mode, dst, amp = basis._lower
    nat, nf = cfg.atom.dim, basis.dim
    rows, cols, vals = [], [], []
    for al in range(nat):
        for be in range(nat):
            v = amp * folded[mode, al, be]
            keep = v != 0
            rows.append(al * nf + src[keep])
            cols.append(be * nf + dst[keep])
            vals.append(v[keep])
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(nat * nf, nat * nf)
    )


def field_from_folded(cfg, folded):
    c = creation_part(cfg, folded)
    return (c + c.conj().T).tocsr()


def coupling_operator(cfg, tensor=None):
    """phi(F_x) = sum_q sqrt(w_q) [A(k_q) (x) a_q^dagger + h.c.], without the factor g."""
    return field_from_folded(cfg, folded_form_factor(cfg, tensor))


def _check_size(cfg):
    if cfg.dim > cfg.size_cap:
        raise SizeLimitExceeded(
            f"fiber dimension {cfg.dim} exceeds cap {cfg.size_cap}",
            {"atom_dim": cfg.atom.dim, "fock_dim": cfg.basis.dim, "cap": cfg.size_cap},
        )


def assemble(cfg):
    """H_g(Pi) with the dispersion chosen in cfg."""
    _check_size(cfg)
    return FiberOperator(cfg, free_diagonal(cfg), coupling_operator(cfg))


def assemble_modified(cfg):
    """Same Hamiltonian with omega(k) replacing |k| in the field energy."""
    return assemble(cfg.with_(dispersion="modified"))


def soft_projector(cfg):
    """Gamma(chi_i) lifted to the fiber space."""
    return lift_fock(cfg, fock_soft_projector(cfg.basis))


def level_projector(cfg, j):
    """P_j: projector onto atom level j times the photon vacuum."""
    diag = np.zeros(cfg.dim)
    sl = cfg.atom.level_slice(j)
    for a in range(sl.start, sl.stop):
        diag[a * cfg.basis.dim] = 1.0
    return sp.diags(diag).tocsr()


def vacuum_projector(cfg):
    diag = np.zeros(cfg.dim)
    diag[:: cfg.basis.dim] = 1.0
    return sp.diags(diag).tocsr()


def product_state(cfg, atom_index, fock_index=0):
    v = np.zeros(cfg.dim, dtype=complex)
    v[atom_index * cfg.basis.dim + fock_index] = 1.0
    return v


def velocity_diagonals(cfg):
    """Components of (Pi - P_f)/M as an array (3, dim) of diagonals."""
    rel = cfg.Pi[None, :] - photon_momentum(cfg.basis)
    return np.stack([lift_fock(cfg, rel[:, c]) for c in range(3)]) * cfg.inv_mass


def number_diagonal(cfg):
    return lift_fock(cfg, cfg.basis.number.astype(float))


def sector_energies(cfg, j_levels=None):
    """Analytic g = 0 spectrum: E_a + (Pi - sum k)^2/2M + sum |k| over all states.

    Built photon by photon from the mode vectors and the level multiplicities,
    independently of the diagonal used in assembly.
    """
    grid = cfg.grid
    levels = range(len(cfg.atom.energies)) if j_levels is None else j_levels
    atomic = [cfg.atom.energies[j] for j in levels for _ in range(cfg.atom.multiplicities[j])]
    out = []
    for state in cfg.basis.states:
        ktot = np.zeros(3)
        field_energy = 0.0
        for q in state:
            k = grid.modes[q]
            ktot += k
            norm = float(np.sqrt(k @ k))
            field_energy += norm if cfg.dispersion == "free" else float(modified_dispersion(norm, grid.sigma))
        rel = cfg.Pi - ktot
        recoil = float(rel @ rel) / (2 * cfg.atom.potential.total_mass)
        out.extend(e + recoil + field_energy for e in atomic)
    return np.sort(np.array(out))


@dataclass
class ThresholdReport:
    beta: float
    sigma_beta: float
    sigma_ion: float
    sigma_ion_error: float
    sigma_ion_samples: list
    ceiling: float
    velocity_max: float
    velocity_ok: bool
    converged: bool
    flags: list = field(default_factory=list)

    def as_dict(self):
        return {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in self.__dict__.items()}


def ionization_estimate(cfg, radii=(6.0, 8.0, 12.0, 16.0, 24.0), r_max=600.0, n_points=900, levels=2):
    """Estimate Sigma_ion from fiber ground energies with the electron kept at |x| >= R.

    For each R the atom is re-solved on [R, r_max] with Dirichlet walls; the
    lowest fiber eigenvalue is then extrapolated to R -> infinity by a
    polynomial fit in 1/R. Returns (estimate, error bar, samples).
    """
    from .spectral import lowest_eigs

    pot = cfg.atom.potential
    lmax = max(s.l for s in cfg.atom.states)
    grid = replace(cfg.atom.grid, r_max=r_max, n_points=n_points)
    samples = []
    for R in radii:
        outer = solve_atom(pot, lmax, levels, grid, r_inner=R, check_drift=False)
        sub = cfg.with_(atom=outer)
        vals, _, _ = lowest_eigs(assemble(sub), 1)
        samples.append((R, float(vals[0])))
    inv = np.array([1.0 / R for R, _ in samples])
    e = np.array([v for _, v in samples])
    fits = [np.polyfit(inv, e, deg)[-1] for deg in (1, 2)]
    estimate = fits[-1]
    err = abs(fits[1] - fits[0])
    return float(estimate), float(err), samples


def thresholds(cfg, beta, margin=0.05, ion=None, window_count=40):
    """Sigma_beta, Sigma_ion estimate, analysis ceiling and the velocity check."""
    from .spectral import lowest_eigs

    if not 0.0 < beta < 1.0:
        raise ValueError("beta must lie in (0, 1)")
    e0 = cfg.atom.energies[0]
    mass = cfg.atom.potential.total_mass
    sigma_beta = e0 + 0.5 * mass * beta**2 if np.isfinite(mass) else np.inf
    flags = []
    if ion is None:
        ion = ionization_estimate(cfg)
    s_ion, s_err, samples = ion
    converged = s_err < 0.05 * abs(e0)
    if not converged:
        flags.append("ionization extrapolation not converged")
    ceiling = min(sigma_beta, s_ion) - margin * abs(e0)
    op = assemble(cfg)
    count = min(window_count, op.dim)
    vals, vecs, _ = lowest_eigs(op, count)
    win = vecs[:, vals <= ceiling]
    if win.shape[1] == 0:
        vmax = 0.0
    else:
        speed = np.linalg.norm(velocity_diagonals(cfg), axis=0)
        compressed = win.conj().T @ (speed[:, None] * win)
        vmax = float(np.max(np.linalg.eigvalsh(0.5 * (compressed + compressed.conj().T))))
    if count == op.dim or np.max(vals) > ceiling:
        pass
    else:
        flags.append("window truncated at requested eigenpair count")
    return ThresholdReport(
        beta=beta,
        sigma_beta=float(sigma_beta),
        sigma_ion=s_ion,
        sigma_ion_error=s_err,
        sigma_ion_samples=samples,
        ceiling=float(ceiling),
        velocity_max=vmax,
        velocity_ok=vmax <= beta + 1e-9,
        converged=converged,
        flags=flags,
    )
