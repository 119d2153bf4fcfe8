"""Truncated bosonic Fock space over a discretized photon momentum grid.

Modes live on a product grid: R radial shells times D directions, mode index
``q = d * R + n``. A one-particle function h is represented by its samples
h(k_q); smeared operators fold in sqrt(w_q) so that discrete inner products
approximate the L^2 ones while every a_q stays exactly canonical.
"""

import hashlib
from dataclasses import dataclass, field
from itertools import combinations_with_replacement, product
from math import comb, factorial

import numpy as np
import scipy.sparse as sp

from .errors import SizeLimitExceeded
from .quadrature import direction_set, smoothstep

DEFAULT_DIMENSION_CAP = 10**6


def modified_dispersion(k_abs, sigma):
    """omega(k) = sqrt(k^2 + s(k)^2 sigma^2 / 4), s = 1 below sigma/2 and 0 above sigma."""
    k_abs = np.asarray(k_abs, dtype=float)
    s = 1.0 - smoothstep((k_abs - 0.5 * sigma) / (0.5 * sigma))
    return np.sqrt(k_abs**2 + 0.25 * (s * sigma) ** 2)


@dataclass(frozen=True)
class ModeGrid:
    modes: np.ndarray
    weights: np.ndarray
    radial_index: np.ndarray
    angular_index: np.ndarray
    radii: np.ndarray
    directions: np.ndarray
    direction_weights: np.ndarray
    dr: float
    sigma: float

    @property
    def size(self):
        return len(self.weights)

    @property
    def n_radial(self):
        return len(self.radii)

    @property
    def n_directions(self):
        return len(self.directions)

    @property
    def k_abs(self):
        return np.linalg.norm(self.modes, axis=1)

    @property
    def dispersion_free(self):
        return self.k_abs

    @property
    def dispersion_mod(self):
        return modified_dispersion(self.k_abs, self.sigma)

    @property
    def soft(self):
        return self.k_abs < self.sigma

    def sqrt_weights(self):
        return np.sqrt(self.weights)

    def sample(self, fn):
        """Evaluate fn on the (m, 3) array of mode momenta."""
        return np.asarray(fn(self.modes))

    def inner(self, f, g):
        """Quadrature approximation of the L^2 inner product of two sampled functions."""
        return np.sum(self.weights * np.conj(f) * g)

    def rotated(self, rotation):
        """Same grid with momenta and directions rotated by a 3x3 orthogonal matrix."""
        rot = np.asarray(rotation, dtype=float)
        return ModeGrid(
            modes=self.modes @ rot.T,
            weights=self.weights,
            radial_index=self.radial_index,
            angular_index=self.angular_index,
            radii=self.radii,
            directions=self.directions @ rot.T,
            direction_weights=self.direction_weights,
            dr=self.dr,
            sigma=self.sigma,
        )

    def content_hash(self):
        h = hashlib.sha256()
        for arr in (self.modes, self.weights):
            h.update(np.ascontiguousarray(arr, dtype=float).tobytes())
        h.update(np.float64(self.sigma).tobytes())
        return h.hexdigest()[:16]


def make_mode_grid(k_max, n_radial, directions=6, sigma=0.1, k_min=0.0):
    """Midpoint radial shells on [k_min, k_max] times an angular direction set.

    Each weight is the exact volume of its shell segment, so the weights sum
    to the volume of the covered spherical annulus.
    """
    if n_radial < 1:
        raise ValueError("need at least one radial shell")
    if not 0.0 <= k_min < k_max:
        raise ValueError("require 0 <= k_min < k_max")
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    dirs, dir_w = direction_set(directions)
    edges = np.linspace(k_min, k_max, n_radial + 1)
    radii = 0.5 * (edges[1:] + edges[:-1])
    shell_vol = 4.0 * np.pi * (edges[1:] ** 3 - edges[:-1] ** 3) / 3.0
    n_dir = len(dirs)
    ang = np.repeat(np.arange(n_dir), n_radial)
    rad = np.tile(np.arange(n_radial), n_dir)
    modes = dirs[ang] * radii[rad][:, None]
    weights = dir_w[ang] * shell_vol[rad]
    return ModeGrid(
        modes=modes,
        weights=weights,
        radial_index=rad,
        angular_index=ang,
        radii=radii,
        directions=dirs,
        direction_weights=dir_w,
        dr=float(edges[1] - edges[0]),
        sigma=float(sigma),
    )


def fock_dimension(m, n_max):
    return comb(m + n_max, n_max)


@dataclass
class FockBasis:
    """Occupation basis with total photon number at most n_max.

    A state is stored as a sorted tuple of mode indices (one entry per
    photon). Sorting by (photon number, tuple) gives graded lexicographic order.
    """

    mode_count: int
    n_max: int
    states: list
    weights: np.ndarray
    grid: ModeGrid = None
    index: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not self.index:
            self.index = {s: i for i, s in enumerate(self.states)}
        self.number = np.array([len(s) for s in self.states])
        occ = np.zeros((len(self.states), self.mode_count), dtype=np.int16)
        for i, s in enumerate(self.states):
            for q in s:
                occ[i, q] += 1
        self.occupations = occ
        self._build_lowering_table()
        self._annihilators = {}

    @property
    def dim(self):
        return len(self.states)

    def state(self, idx):
        return self.occupations[idx].copy()

    def index_of(self, occupation):
        occupation = np.asarray(occupation)
        key = tuple(np.repeat(np.arange(self.mode_count), occupation))
        return self.index[key]

    def vacuum(self):
        v = np.zeros(self.dim, dtype=complex)
        v[0] = 1.0
        return v

    def _build_lowering_table(self):
        src, mode, dst, amp = [], [], [], []
        for i, s in enumerate(self.states):
            seen = set()
            for pos, q in enumerate(s):
                if q in seen:
                    continue
                seen.add(q)
                lowered = s[:pos] + s[pos + 1:]
                src.append(i)
                mode.append(q)
                dst.append(self.index[lowered])
                amp.append(np.sqrt(s.count(q)))
        self._lower = (
            np.array(src, dtype=np.int64),
            np.array(mode, dtype=np.int64),
            np.array(dst, dtype=np.int64),
            np.array(amp, dtype=float),
        )

    def annihilator(self, q):
        if not 0 <= q < self.mode_count:
            raise IndexError(f"mode {q} out of range for {self.mode_count} modes")
        if q not in self._annihilators:
            src, mode, dst, amp = self._lower
            sel = mode == q
            self._annihilators[q] = sp.csr_matrix(
                (amp[sel], (dst[sel], src[sel])), shape=(self.dim, self.dim)
            )
        return self._annihilators[q]

    def stacked_annihilators(self):
        """Rows q*dim + t hold <t| a_q; shape (m*dim, dim)."""
        src, mode, dst, amp = self._lower
        return sp.csr_matrix(
            (amp, (mode * self.dim + dst, src)), shape=(self.mode_count * self.dim, self.dim)
        )

    @property
    def lowered_position(self):
        """Row of each state in the raising table (only states below n_max have one)."""
        pos = np.full(self.dim, -1, dtype=np.int64)
        low = np.flatnonzero(self.number < self.n_max)
        pos[low] = np.arange(len(low))
        return pos

    def raising_table(self):
        """(target, amplitude) arrays of shape (#states below n_max, m) for a_i^dagger."""
        if getattr(self, "_raise", None) is None:
            pos = self.lowered_position
            n_low = int(np.sum(self.number < self.n_max))
            to = np.zeros((n_low, self.mode_count), dtype=np.int64)
            am = np.zeros((n_low, self.mode_count))
            src, mode, dst, amp = self._lower
            to[pos[dst], mode] = src
            am[pos[dst], mode] = amp
            self._raise = (to, am)
        return self._raise

    def sector_mask(self, n_lo=0, n_hi=None):
        n_hi = self.n_max if n_hi is None else n_hi
        return (self.number >= n_lo) & (self.number <= n_hi)


def build_basis(grid, n_max, cap=DEFAULT_DIMENSION_CAP):
    """Enumerate all occupations with total number <= n_max.

    `grid` is a ModeGrid or a bare mode count (unit weights).
    """
    if isinstance(grid, ModeGrid):
        m, weights = grid.size, grid.weights
    else:
        m, weights, grid = int(grid), np.ones(int(grid)), None
    if m < 1 or n_max < 0:
        raise ValueError("need at least one mode and n_max >= 0")
    dim = fock_dimension(m, n_max)
    if dim > cap:
        raise SizeLimitExceeded(
            f"Fock dimension {dim} exceeds cap {cap}",
            {"modes": m, "n_max": n_max, "dimension": dim, "cap": cap},
        )
    states = [s for n in range(n_max + 1) for s in combinations_with_replacement(range(m), n)]
    return FockBasis(mode_count=m, n_max=n_max, states=states, weights=np.asarray(weights, float), grid=grid)


def annihilation(basis, mode):
    """Return (a_q, a_q^dagger) as sparse matrices; the adjoint is exact, so
    creation into the cut sector gives zero."""
    a = basis.annihilator(mode)
    return a, a.conj().T.tocsr()


def second_quantize(basis, b):
    """dGamma(b) for a multiplication operator given by per-mode values."""
    b = np.asarray(b)
    if b.shape != (basis.mode_count,):
        raise ValueError(f"expected {basis.mode_count} per-mode values")
    return sp.diags(basis.occupations @ b).tocsr()


def second_quantize_offdiag(basis, b, atol=1e-12):
    """dGamma(b) = sum_ij b_ij a_i^dagger a_j for a Hermitian one-particle matrix.

    Built from the lowering table: lower |s> by mode j to |d>, then raise |d>
    by every mode i with b_ij != 0.
    """
    b = sp.csc_matrix(b)
    if b.shape != (basis.mode_count, basis.mode_count):
        raise ValueError("one-particle matrix has wrong shape")
    if abs(b - b.conj().T).max() > atol * max(1.0, abs(b).max()):
        raise ValueError("one-particle operator is not Hermitian")
    raise_to, raise_amp = basis.raising_table()
    pos = basis.lowered_position
    src, mode, dst, amp = basis._lower
    counts = np.diff(b.indptr)[mode]
    e = np.repeat(np.arange(len(src)), counts)
    starts = b.indptr[mode]
    offsets = np.arange(len(e)) - np.repeat(np.cumsum(counts) - counts, counts)
    k = np.repeat(starts, counts) + offsets
    i = b.indices[k]
    row = pos[dst[e]]
    targets = raise_to[row, i]
    vals = b.data[k] * amp[e] * raise_amp[row, i]
    out = sp.csr_matrix((vals, (targets, src[e])), shape=(basis.dim, basis.dim))
    return (0.5 * (out + out.conj().T)).tocsr()


def smeared_annihilator(basis, h):
    """a(h) = sum_q conj(sqrt(w_q) h_q) a_q."""
    h = np.asarray(h, dtype=complex)
    if h.shape != (basis.mode_count,):
        raise ValueError(f"expected {basis.mode_count} coefficients")
    c = np.conj(np.sqrt(basis.weights) * h)
    src, mode, dst, amp = basis._lower
    return sp.csr_matrix((c[mode] * amp, (dst, src)), shape=(basis.dim, basis.dim))


def field_operator(basis, h):
    """phi(h) = a(h) + a^dagger(h)."""
    a = smeared_annihilator(basis, h)
    return (a + a.conj().T).tocsr()


def gamma_operator(basis, b):
    """Gamma(b) for a per-mode multiplication b: product of b_q^{n_q}."""
    b = np.asarray(b)
    vals = np.prod(b[None, :] ** basis.occupations, axis=1)
    return sp.diags(vals).tocsr()


def soft_projector(basis, grid=None):
    """Gamma(chi_i): keeps states with no photon in a mode with |k| < sigma."""
    grid = basis.grid if grid is None else grid
    keep = basis.occupations[:, grid.soft].sum(axis=1) == 0
    return sp.diags(keep.astype(float)).tocsr()


def _sub_occupations(occ):
    nz = np.flatnonzero(occ)
    for counts in product(*(range(occ[q] + 1) for q in nz)):
        low = np.zeros_like(occ)
        low[nz] = counts
        yield low


def breve_gamma(basis, j0, j_inf):
    """Gamma-breve(j): F -> F (x) F for the pair j = (j0, j_inf) of per-mode multipliers.

    Photon by photon, each quantum goes to the first factor with amplitude j0
    and to the second with j_inf. Output index is left * dim + right.
    """
    j0 = np.asarray(j0, dtype=complex)
    j_inf = np.asarray(j_inf, dtype=complex)
    rows, cols, vals = [], [], []
    for i in range(basis.dim):
        occ = basis.occupations[i].astype(int)
        for low in _sub_occupations(occ):
            high = occ - low
            amp = 1.0 + 0j
            for q in np.flatnonzero(occ):
                amp *= np.sqrt(comb(occ[q], low[q])) * j0[q] ** low[q] * j_inf[q] ** high[q]
            rows.append(basis.index_of(low) * basis.dim + basis.index_of(high))
            cols.append(i)
            vals.append(amp)
    return sp.csr_matrix((vals, (rows, cols)), shape=(basis.dim**2, basis.dim))


@dataclass
class ModeSplit:
    """Isometry F -> F_first (x) F_second for a partition of the modes."""

    U: sp.csr_matrix
    first: FockBasis
    second: FockBasis
    first_modes: np.ndarray
    second_modes: np.ndarray

    def restrict(self, h):
        h = np.asarray(h)
        return h[self.first_modes], h[self.second_modes]


def split_modes(basis, second_mask):
    """Factor the Fock space over (modes not in mask) and (modes in mask).

    With `second_mask = grid.soft` this realizes F = F_i (x) F_s. Occupation
    states map to product states with amplitude one; sectors whose combined
    number exceeds n_max in the product space are simply never reached.
    """
    second_mask = np.asarray(second_mask, dtype=bool)
    if second_mask.shape != (basis.mode_count,):
        raise ValueError("partition must flag every mode")
    first_modes = np.flatnonzero(~second_mask)
    second_modes = np.flatnonzero(second_mask)

    def sub_basis(modes):
        b = build_basis(max(len(modes), 1), basis.n_max)
        b.weights = basis.weights[modes] if len(modes) else np.ones(1)
        return b

    first, second = sub_basis(first_modes), sub_basis(second_modes)
    rows = np.empty(basis.dim, dtype=np.int64)
    for i in range(basis.dim):
        occ = basis.occupations[i]
        o1 = occ[first_modes] if len(first_modes) else np.zeros(1, int)
        o2 = occ[second_modes] if len(second_modes) else np.zeros(1, int)
        rows[i] = first.index_of(o1) * second.dim + second.index_of(o2)
    U = sp.csr_matrix(
        (np.ones(basis.dim), (rows, np.arange(basis.dim))), shape=(first.dim * second.dim, basis.dim)
    )
    return ModeSplit(U, first, second, first_modes, second_modes)


def scattering_identification(basis, vec):
    """Map a vector of F (x) F (index left * dim + right) into F.

    |n> (x) |m> goes to prod_q sqrt((n_q + m_q)! / (n_q! m_q!)) |n + m>.
    Components with more than n_max photons are dropped; returns
    (image, norm of the dropped part).
    """
    vec = np.asarray(vec, dtype=complex)
    if vec.shape != (basis.dim**2,):
        raise ValueError("expected a vector of the doubled Fock space")
    out = np.zeros(basis.dim, dtype=complex)
    overflow = 0.0
    for idx in np.flatnonzero(vec):
        left, right = divmod(int(idx), basis.dim)
        n, m = basis.occupations[left], basis.occupations[right]
        total = n + m
        amp = 1.0
        for q in np.flatnonzero(total):
            amp *= np.sqrt(factorial(int(total[q])) / (factorial(int(n[q])) * factorial(int(m[q]))))
        if total.sum() > basis.n_max:
            overflow += abs(amp * vec[idx]) ** 2
            continue
        out[basis.index_of(total)] += amp * vec[idx]
    return out, float(np.sqrt(overflow))


def scattering_identification_matrix(basis):
    """Dense-free sparse matrix of the identification restricted to in-range pairs."""
    rows, cols, vals = [], [], []
    for left in range(basis.dim):
        n = basis.occupations[left]
        for right in range(basis.dim):
            m = basis.occupations[right]
            if basis.number[left] + basis.number[right] > basis.n_max:
                continue
            total = n + m
            amp = 1.0
            for q in np.flatnonzero(total):
                amp *= np.sqrt(factorial(int(total[q])) / (factorial(int(n[q])) * factorial(int(m[q]))))
            rows.append(basis.index_of(total))
            cols.append(left * basis.dim + right)
            vals.append(amp)
    return sp.csr_matrix((vals, (rows, cols)), shape=(basis.dim, basis.dim**2))


@dataclass
class SparseHermitian:
    """Upper-triangle triplet storage of a Hermitian matrix."""

    dimension: int
    rows: np.ndarray
    cols: np.ndarray
    values: np.ndarray

    @classmethod
    def from_matrix(cls, mat, atol=1e-12):
        mat = sp.csr_matrix(mat)
        if abs(mat - mat.conj().T).max() > atol * max(1.0, abs(mat).max()):
            raise ValueError("matrix is not Hermitian")
        upper = sp.triu(mat).tocoo()
        if not np.all(np.isfinite(upper.data)):
            raise ValueError("non-finite entries")
        return cls(mat.shape[0], upper.row.astype(np.int64), upper.col.astype(np.int64), upper.data.astype(complex))

    def to_matrix(self):
        upper = sp.csr_matrix((self.values, (self.rows, self.cols)), shape=(self.dimension,) * 2)
        off = self.rows != self.cols
        lower = sp.csr_matrix(
            (np.conj(self.values[off]), (self.cols[off], self.rows[off])), shape=(self.dimension,) * 2
        )
        return (upper + lower).tocsr()
