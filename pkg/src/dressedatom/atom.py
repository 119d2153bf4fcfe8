"""Internal atomic problem and form-factor matrix elements.

The radial equation is solved per angular-momentum channel on a uniform grid
in x = ln r with a sinc discrete-variable representation. Writing
u(r) = e^{x/2} w(x) turns -u''/2m + (l(l+1)/2mr^2 + V) u = E u into the
symmetric generalized problem

    (-d^2/dx^2 + (l + 1/2)^2 + 2m r^2 V) w = 2m E r^2 w,

solved as a shifted, well-conditioned pencil with scipy's `eigh`. Radial integrals become
int u_a u_b f dr ~ h * sum r^2 w_a w_b f.
"""

import hashlib
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.linalg import eigh
from scipy.special import spherical_jn, sph_harm_y

from .errors import TrivialModel
from .quadrature import smoothstep

_EXP_LIMIT = 700.0


@dataclass(frozen=True)
class PotentialSpec:
    kind: str = "coulomb"
    charge: float = 1.0
    softening: float = 1.0
    depth: float = 1.0
    radius: float = 1.0
    table_r: tuple = ()
    table_v: tuple = ()
    m_e: float = 1.0
    m_n: float = 1836.15

    def __post_init__(self):
        if self.kind not in ("coulomb", "soft-coulomb", "well", "tabulated"):
            raise ValueError(f"unknown potential kind {self.kind!r}")
        if not (self.m_e > 0 and self.m_n > 0):
            raise ValueError("masses must be positive")
        if self.kind == "tabulated" and len(self.table_r) < 4:
            raise ValueError("tabulated potential needs at least 4 samples")

    @property
    def reduced_mass(self):
        if np.isinf(self.m_n):
            return self.m_e
        return self.m_e * self.m_n / (self.m_e + self.m_n)

    @property
    def total_mass(self):
        return self.m_e + self.m_n

    @property
    def inverse_total_mass(self):
        return 0.0 if np.isinf(self.m_n) else 1.0 / self.total_mass

    @property
    def lambda_e(self):
        return 1.0 if np.isinf(self.m_n) else self.m_n / self.total_mass

    @property
    def lambda_n(self):
        return 0.0 if np.isinf(self.m_n) else self.m_e / self.total_mass

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        if self.kind == "coulomb":
            return -self.charge / r
        if self.kind == "soft-coulomb":
            return -self.charge / np.sqrt(r**2 + self.softening**2)
        if self.kind == "well":
            return np.where(r < self.radius, -self.depth, 0.0)
        tr, tv = np.asarray(self.table_r, float), np.asarray(self.table_v, float)
        spline = CubicSpline(tr, tv)
        inside = (r >= tr[0]) & (r <= tr[-1])
        return np.where(inside, spline(np.clip(r, tr[0], tr[-1])), np.where(r < tr[0], tv[0], 0.0))


@dataclass(frozen=True)
class RadialGrid:
    r_min: float = 1e-14
    r_max: float = 80.0
    n_points: int = 800

    def nodes(self, r_inner=None):
        lo = np.log(self.r_min if r_inner is None else max(r_inner, self.r_min))
        x = np.linspace(lo, np.log(self.r_max), self.n_points)
        return x, x[1] - x[0]


def _sinc_second_derivative(n, h):
    idx = np.arange(n)
    diff = idx[:, None] - idx[None, :]
    with np.errstate(divide="ignore"):
        t = 2.0 * (-1.0) ** np.abs(diff) / (h**2 * diff.astype(float) ** 2)
    np.fill_diagonal(t, np.pi**2 / (3.0 * h**2))
    return t


def radial_channel(pot, l, grid, count, r_inner=None):
    """Lowest `count` eigenpairs of one l-channel. Returns (E, w[count, n], r, h)."""
    x, h = grid.nodes(r_inner)
    r = np.exp(x)
    m = pot.reduced_mass
    v = pot(r)
    # B = diag(r^2) spans many decades, so Cholesky on it loses everything.
    # Shift below the spectrum instead: K = A - lam0 B is positive definite and
    # well conditioned, and B w = mu K w with lam = lam0 + 1/mu.
    e_floor = float(np.min(v + (l + 0.5) ** 2 / (2.0 * m * r**2))) - 1.0
    lam0 = 2.0 * m * e_floor
    K = _sinc_second_derivative(len(x), h) + np.diag((l + 0.5) ** 2 + 2.0 * m * r**2 * (v - e_floor))
    n = len(x)
    count = min(count, n)
    mu, vecs = eigh(np.diag(r**2), K, subset_by_index=[n - count, n - 1])
    order = np.argsort(-mu)
    energies = (lam0 + 1.0 / mu[order]) / (2.0 * m)
    w = vecs[:, order].T
    norms = np.sqrt(h * np.sum(r**2 * w**2, axis=1))
    w = w / norms[:, None]
    # deterministic sign: largest-magnitude sample positive
    signs = np.sign(w[np.arange(len(w)), np.argmax(np.abs(w), axis=1)])
    return energies, w * signs[:, None], r, h


@dataclass
class AtomState:
    level: int
    l: int
    m: int
    radial: int


@dataclass
class AtomBasis:
    """Bound states grouped into degenerate levels; states are ordered level by level."""

    potential: PotentialSpec
    grid: RadialGrid
    energies: np.ndarray
    multiplicities: list
    states: list
    radial_functions: np.ndarray
    r: np.ndarray
    h: float
    drift: float = 0.0
    r_inner: float = None
    _exp_cache: dict = field(default_factory=dict, repr=False)

    @property
    def dim(self):
        return len(self.states)

    @property
    def level_of_state(self):
        return np.array([s.level for s in self.states])

    def level_slice(self, j):
        idx = np.flatnonzero(self.level_of_state == j)
        return slice(idx[0], idx[-1] + 1)

    def state_energies(self):
        return self.energies[self.level_of_state]

    def radial_integral(self, a, b, f):
        """int u_a u_b f(r) dr for radial indices a, b; f is an array on the grid."""
        return self.h * np.sum(self.r**2 * self.radial_functions[a] * self.radial_functions[b] * f)

    def gram(self):
        g = np.zeros((self.dim, self.dim))
        for i, si in enumerate(self.states):
            for k, sk in enumerate(self.states):
                if si.l == sk.l and si.m == sk.m:
                    g[i, k] = self.radial_integral(si.radial, sk.radial, 1.0)
        return g

    def wavefunction(self, idx, points):
        """phi(x) at Cartesian points (n, 3), by spline interpolation of u(r)/r."""
        s = self.states[idx]
        pts = np.atleast_2d(points)
        rr = np.linalg.norm(pts, axis=1)
        u = np.sqrt(self.r) * self.radial_functions[s.radial]
        spline = CubicSpline(self.r, u)
        inside = (rr >= self.r[0]) & (rr <= self.r[-1])
        uu = np.where(inside, spline(np.clip(rr, self.r[0], self.r[-1])), 0.0)
        theta, phi = _angles(pts)
        return uu / np.maximum(rr, 1e-300) * sph_harm_y(s.l, s.m, theta, phi)

    def content_hash(self):
        hsh = hashlib.sha256()
        hsh.update(repr(self.potential).encode())
        hsh.update(repr(self.grid).encode())
        hsh.update(np.ascontiguousarray(self.energies).tobytes())
        return hsh.hexdigest()[:16]


def solve_atom(pot, l_max=1, n_levels=2, grid=None, degeneracy_tol=1e-9, r_inner=None, check_drift=True):
    """Lowest `n_levels` distinct negative levels, aggregated across l <= l_max."""
    grid = RadialGrid() if grid is None else grid
    channels = []
    radial, r, h = [], None, None
    for l in range(l_max + 1):
        energies, w, r, h = radial_channel(pot, l, grid, n_levels + 1, r_inner=r_inner)
        for e, wf in zip(energies, w):
            if e < 0:
                channels.append((e, l, len(radial)))
                radial.append(wf)
    if not channels:
        raise TrivialModel(
            "atomic Hamiltonian has no negative eigenvalue; the coupled model is trivial",
            {"potential": repr(pot), "l_max": l_max},
        )
    channels.sort()
    e0 = abs(channels[0][0])
    groups = []
    for e, l, ridx in channels:
        if groups and abs(e - groups[-1][0][0]) < degeneracy_tol * e0:
            groups[-1].append((e, l, ridx))
        else:
            groups.append([(e, l, ridx)])
    groups = groups[:n_levels]
    energies, mults, states = [], [], []
    for j, grp in enumerate(groups):
        energies.append(np.mean([g[0] for g in grp]))
        count = 0
        for _, l, ridx in grp:
            for mm in range(-l, l + 1):
                states.append(AtomState(j, l, mm, ridx))
                count += 1
        mults.append(count)
    drift = 0.0
    if check_drift:
        fine = RadialGrid(grid.r_min, grid.r_max, int(round(grid.n_points * 1.25)))
        ref = solve_atom(pot, l_max, n_levels, fine, degeneracy_tol, r_inner, check_drift=False)
        n = min(len(ref.energies), len(energies))
        drift = float(np.max(np.abs(ref.energies[:n] - np.array(energies[:n])) / np.abs(ref.energies[:n])))
    return AtomBasis(
        potential=pot,
        grid=grid,
        energies=np.array(energies),
        multiplicities=mults,
        states=states,
        radial_functions=np.array(radial),
        r=r,
        h=h,
        drift=drift,
        r_inner=r_inner,
    )


@dataclass(frozen=True)
class Profile:
    """Radial base profile: amplitude * exp(-k^2 / 2 width^2), tapered to zero at k_uv."""

    amplitude: float = 1.0
    width: float = 0.5
    k_uv: float = 0.6
    taper_start: float = 0.4

    def __call__(self, k):
        k = np.asarray(k, dtype=float)
        span = max(self.k_uv - self.taper_start, 1e-12)
        taper = 1.0 - smoothstep((k - self.taper_start) / span)
        return self.amplitude * np.exp(-0.5 * (k / self.width) ** 2) * taper


@dataclass(frozen=True)
class FormFactorSpec:
    kappa_e: Profile = Profile()
    kappa_n: Profile = Profile(amplitude=-1.0)
    sigma: float = 0.1
    g: float = 0.0
    switch: bool = True

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("infrared cutoff must be positive")
        if self.g < 0:
            raise ValueError("coupling must be non-negative")

    def chi(self, k):
        if not self.switch:
            return np.ones_like(np.asarray(k, dtype=float))
        return smoothstep(np.asarray(k, dtype=float) / self.sigma - 1.0)

    def electron(self, k):
        return self.kappa_e(k) * self.chi(k)

    def nucleus(self, k):
        return self.kappa_n(k) * self.chi(k)

    @property
    def k_uv(self):
        return max(self.kappa_e.k_uv, self.kappa_n.k_uv)

    def without_switch(self):
        return FormFactorSpec(self.kappa_e, self.kappa_n, self.sigma, self.g, switch=False)


def _angles(vecs):
    vecs = np.atleast_2d(vecs)
    rr = np.linalg.norm(vecs, axis=1)
    cos_t = np.divide(vecs[:, 2], rr, out=np.ones_like(rr), where=rr > 0)
    theta = np.arccos(np.clip(cos_t, -1.0, 1.0))
    phi = np.arctan2(vecs[:, 1], vecs[:, 0])
    return theta, phi


def gaunt(l1, m1, l2, m2, l3, m3):
    """int conj(Y_l1m1) Y_l2m2 Y_l3m3 dOmega by a product rule exact for the integrand degree."""
    if m1 != m2 + m3:
        return 0.0
    deg = l1 + l2 + l3
    x, wx = np.polynomial.legendre.leggauss(deg // 2 + 2)
    n_phi = 2 * deg + 2
    phi = 2.0 * np.pi * np.arange(n_phi) / n_phi
    theta = np.arccos(x)[:, None]
    ph = phi[None, :]
    integrand = np.conj(sph_harm_y(l1, m1, theta, ph)) * sph_harm_y(l2, m2, theta, ph) * sph_harm_y(l3, m3, theta, ph)
    return float(np.real(np.sum(wx[:, None] * integrand) * 2.0 * np.pi / n_phi))


class PlaneWaveElements:
    """<a| exp(i q.x) |b> for all atom states via partial waves.

    Each matrix element is a short sum of terms radial(|q|) * angular(q_hat),
    which also allows cheap evaluation on radius x direction product grids.
    """

    def __init__(self, atom):
        self.atom = atom
        self.terms = {}
        for ia, sa in enumerate(atom.states):
            for ib, sb in enumerate(atom.states):
                M = sa.m - sb.m
                for L in range(abs(sa.l - sb.l), sa.l + sb.l + 1):
                    if abs(M) > L or (sa.l + L + sb.l) % 2:
                        continue
                    gnt = gaunt(sa.l, sa.m, L, M, sb.l, sb.m)
                    if gnt == 0.0:
                        continue
                    key = (min(sa.radial, sb.radial), max(sa.radial, sb.radial), L)
                    self.terms.setdefault((ia, ib), []).append((L, M, 4.0 * np.pi * (1j**L) * gnt, key))

    def _radial(self, q):
        atom = self.atom
        weight = atom.h * atom.r**2
        keys = {t[3] for terms in self.terms.values() for t in terms}
        bessel = {}
        out = {}
        for a, b, L in keys:
            if L not in bessel:
                bessel[L] = spherical_jn(L, np.outer(q, atom.r))
            out[(a, b, L)] = bessel[L] @ (weight * atom.radial_functions[a] * atom.radial_functions[b])
        return out

    def _angular(self, dirs):
        theta, phi = _angles(dirs)
        lm = {(t[0], t[1]) for terms in self.terms.values() for t in terms}
        return {(L, M): np.conj(sph_harm_y(L, M, theta, phi)) for L, M in lm}

    def __call__(self, qvecs):
        """Array (n_q, dim, dim) of <a| e^{i q.x} |b>."""
        qvecs = np.atleast_2d(qvecs)
        rad = self._radial(np.linalg.norm(qvecs, axis=1))
        ang = self._angular(qvecs)
        out = np.zeros((len(qvecs), self.atom.dim, self.atom.dim), dtype=complex)
        for (ia, ib), terms in self.terms.items():
            for L, M, c, key in terms:
                out[:, ia, ib] += c * rad[key] * ang[(L, M)]
        return out

    def product(self, q, dirs, rows, cols):
        """Elements for q = q_n * dir_d on the product grid: shape (n_q, n_dir, len(rows), len(cols))."""
        rad = self._radial(np.asarray(q, dtype=float))
        ang = self._angular(dirs)
        out = np.zeros((len(q), len(dirs), len(rows), len(cols)), dtype=complex)
        for i, ia in enumerate(rows):
            for k, ib in enumerate(cols):
                for L, M, c, key in self.terms.get((ia, ib), []):
                    out[:, :, i, k] += c * np.outer(rad[key], ang[(L, M)])
        return out


def form_factor_product(atom, ff, radii, dirs, i, j, elements=None):
    """A_ij(r d) on a radius x direction product grid, shape (n_r, n_d, m_i, m_j)."""
    elements = PlaneWaveElements(atom) if elements is None else elements
    pot = atom.potential
    rows = range(atom.level_slice(i).start, atom.level_slice(i).stop)
    cols = range(atom.level_slice(j).start, atom.level_slice(j).stop)
    radii = np.asarray(radii, dtype=float)
    dirs = np.atleast_2d(dirs)
    ke, kn = ff.electron(radii), ff.nucleus(radii)
    out = elements.product(pot.lambda_e * radii, -dirs, rows, cols) * ke[:, None, None, None]
    if pot.lambda_n > 0:
        out += elements.product(pot.lambda_n * radii, dirs, rows, cols) * kn[:, None, None, None]
    elif i == j:
        out += np.eye(len(rows))[None, None] * kn[:, None, None, None]
    return out


def _form_factor_tensor(atom, ff, kvecs, elements=None):
    kvecs = np.atleast_2d(kvecs)
    elements = PlaneWaveElements(atom) if elements is None else elements
    kk = np.linalg.norm(kvecs, axis=1)
    ke, kn = ff.electron(kk), ff.nucleus(kk)
    pot = atom.potential
    out = np.zeros((len(kk), atom.dim, atom.dim), dtype=complex)
    on = (np.abs(ke) + np.abs(kn)) > 0
    if np.any(on):
        kv = kvecs[on]
        out[on] = elements(-pot.lambda_e * kv) * ke[on, None, None]
        if pot.lambda_n > 0:
            out[on] += elements(pot.lambda_n * kv) * kn[on, None, None]
        else:
            out[on] += np.eye(atom.dim)[None] * kn[on, None, None]
    return out


def form_factor_matrix(atom, ff, k, i, j):
    """A_ij(k): matrix of <phi_{i,alpha}| F_x(k) |phi_{j,alpha'}> between levels i and j."""
    full = _form_factor_tensor(atom, ff, np.asarray(k, dtype=float)[None, :])[0]
    return full[atom.level_slice(i), atom.level_slice(j)]


def form_factor_direct(atom, ff, k, n_r=200, n_theta=24):
    """Redundant route: brute-force quadrature of <a|F_x(k)|b> in position space."""
    k = np.asarray(k, dtype=float)
    kk = np.linalg.norm(k)
    pot = atom.potential
    x_r, w_r = np.polynomial.legendre.leggauss(n_r)
    t = 0.5 * (x_r + 1.0)
    r_hi = min(atom.r[-1], 60.0)
    rr = t * r_hi
    wr = 0.5 * w_r * r_hi
    ct, wt = np.polynomial.legendre.leggauss(n_theta)
    n_phi = 2 * n_theta
    ph = 2.0 * np.pi * np.arange(n_phi) / n_phi
    R, CT, PH = np.meshgrid(rr, ct, ph, indexing="ij")
    ST = np.sqrt(1.0 - CT**2)
    pts = np.stack([R * ST * np.cos(PH), R * ST * np.sin(PH), R * CT], axis=-1).reshape(-1, 3)
    w = (wr[:, None, None] * R[:, :1, :1] ** 2 * wt[None, :, None] * np.full(n_phi, 2 * np.pi / n_phi)).reshape(-1)
    phase = pts @ k
    fx = np.exp(-1j * pot.lambda_e * phase) * ff.electron(kk) + np.exp(1j * pot.lambda_n * phase) * ff.nucleus(kk)
    psi = np.array([atom.wavefunction(a, pts) for a in range(atom.dim)])
    return (np.conj(psi) * (w * fx)) @ psi.T


@dataclass
class CouplingTensor:
    """A(k_q) for every mode q as an (m, dim_at, dim_at) array."""

    values: np.ndarray
    atom_hash: str
    grid_hash: str

    def content_hash(self):
        return hashlib.sha256(np.ascontiguousarray(self.values).tobytes()).hexdigest()[:16]


_TENSOR_CACHE = {}


def coupling_tensor(atom, ff, grid):
    key = (atom.content_hash(), grid.content_hash(), repr(ff))
    if key not in _TENSOR_CACHE:
        vals = _form_factor_tensor(atom, ff, grid.modes)
        _TENSOR_CACHE[key] = CouplingTensor(vals, key[0], key[1])
    return _TENSOR_CACHE[key]


def exp_weight(atom, alpha):
    """Matrix of e^{alpha |x|} in the atom basis (diagonal in l, m)."""
    if alpha * atom.r[-1] > _EXP_LIMIT:
        raise ValueError(f"alpha too large for the radial grid; max allowed {_EXP_LIMIT / atom.r[-1]:.4g}")
    if alpha in atom._exp_cache:
        return atom._exp_cache[alpha]
    f = np.exp(alpha * atom.r)
    out = np.zeros((atom.dim, atom.dim))
    for i, si in enumerate(atom.states):
        for k, sk in enumerate(atom.states):
            if si.l == sk.l and si.m == sk.m:
                out[i, k] = atom.radial_integral(si.radial, sk.radial, f)
    atom._exp_cache[alpha] = out
    return out
