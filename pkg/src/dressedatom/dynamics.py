"""Krylov time propagation and finite-time proxies for asymptotic objects.

Everything here works at a fixed time budget; limits t -> infinity are only
ever reported as trends of the computed series.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .atom import _form_factor_tensor
from .commutator import radial_position
from .errors import Refusal
from .fiber import assemble, assemble_modified, lift_fock
from .fock import second_quantize, second_quantize_offdiag
from .quadrature import direction_set, gauss_panels, smoothstep
from .spectral import apply_function, ground_state, smooth_cutoff, spectral_projector

log = logging.getLogger(__name__)


def _as_matrix(op):
    return op.matrix if hasattr(op, "matrix") else sp.csr_matrix(op)


@dataclass
class PropagationRun:
    times: np.ndarray
    states: np.ndarray
    order: int
    step_errors: list
    norm_drift: float
    energy_drift: float
    soft_drift: float = float("nan")
    flags: list = field(default_factory=list)

    @property
    def max_step_error(self):
        return max((e for _, e in self.step_errors), default=0.0)


def lanczos_step(mat, v, tau, order):
    """exp(-i tau H) v from an order-`order` Krylov space.

    The error estimate is the size of the first neglected Krylov component,
    beta_m |e_m^T exp(-i tau T) e_1|, scaled by ||v||.
    """
    norm = np.linalg.norm(v)
    if norm == 0:
        return v.copy(), 0.0
    n = len(v)
    m = min(order, n)
    V = np.zeros((m + 1, n), dtype=complex)
    alpha = np.zeros(m)
    beta = np.zeros(m)
    V[0] = v / norm
    size = m
    for k in range(m):
        w = mat @ V[k]
        alpha[k] = np.real(np.vdot(V[k], w))
        w = w - alpha[k] * V[k] - (beta[k - 1] * V[k - 1] if k > 0 else 0)
        # full reorthogonalization keeps the small basis orthonormal
        w -= V[: k + 1].T @ (V[: k + 1].conj() @ w)
        beta[k] = np.linalg.norm(w)
        if beta[k] < 1e-14 * max(1.0, abs(alpha[k])):
            size = k + 1
            break
        V[k + 1] = w / beta[k]
    T = np.diag(alpha[:size]) + np.diag(beta[: size - 1], 1) + np.diag(beta[: size - 1], -1)
    ev, U = np.linalg.eigh(T)
    coef = U @ (np.exp(-1j * tau * ev) * U[0].conj())
    out = norm * (V[:size].T @ coef)
    err = 0.0 if size < m or size == n else norm * beta[size - 1] * abs(coef[-1])
    return out, float(err)


def propagate(op, psi0, times, order=30, tol=1e-10, max_halvings=40, soft=None):
    """States e^{-i t H} psi0 at each requested time, visited in the given order.

    Steps adapt so every accepted step has error estimate below `tol`. `soft`
    is an optional diagonal (dGamma of the soft-mode indicator) whose
    expectation is tracked.
    """
    mat = _as_matrix(op)
    psi0 = np.asarray(psi0, dtype=complex)
    if abs(np.linalg.norm(psi0) - 1.0) > 1e-10:
        raise ValueError("initial state must be normalized")
    times = np.asarray(times, dtype=float)
    e0 = np.real(np.vdot(psi0, mat @ psi0))
    s0 = np.real(np.vdot(psi0, soft * psi0)) if soft is not None else None
    states = np.zeros((len(times), len(psi0)), dtype=complex)
    errors = []
    psi, now = psi0.copy(), 0.0
    tau = 1.0
    norm_drift = energy_drift = soft_drift = 0.0
    for i, target in enumerate(times):
        while abs(target - now) > 1e-14 * max(1.0, abs(target)):
            step = np.sign(target - now) * min(abs(tau), abs(target - now))
            for _ in range(max_halvings):
                new, err = lanczos_step(mat, psi, step, order)
                if err <= tol:
                    break
                step *= 0.5
            else:
                raise Refusal("Krylov step rejected repeatedly", {"time": now, "last_error": err, "step": step})
            errors.append((float(step), err))
            psi, now = new, now + step
            tau = 2.0 * abs(step) if err < 0.1 * tol else abs(step)
        states[i] = psi
        norm_drift = max(norm_drift, abs(np.linalg.norm(psi) - 1.0))
        energy_drift = max(energy_drift, abs(np.real(np.vdot(psi, mat @ psi)) - e0))
        if soft is not None:
            soft_drift = max(soft_drift, abs(np.real(np.vdot(psi, soft * psi)) - s0))
    flags = []
    if norm_drift >= 1e-8:
        flags.append("norm drift above 1e-8")
    if energy_drift >= 1e-8 * max(abs(e0), 1.0):
        flags.append("energy drift above 1e-8 |E|")
    return PropagationRun(
        times, states, order, errors, float(norm_drift), float(energy_drift),
        float(soft_drift) if soft is not None else float("nan"), flags,
    )


def soft_number(cfg):
    """Diagonal of dGamma(1_soft) on the fiber space."""
    return lift_fock(cfg, second_quantize(cfg.basis, cfg.grid.soft.astype(float)))


# -- Cook integrand ---------------------------------------------------------


@dataclass
class ShellQuadrature:
    """Product rule on [lo, hi] x sphere; weights include 4 pi k^2."""

    kvecs: np.ndarray
    k_abs: np.ndarray
    weights: np.ndarray


def shell_quadrature(lo, hi, n_panels=40, per_panel=8, directions=26):
    radii, rw = gauss_panels(lo, hi, n_panels, per_panel)
    dirs, dw = direction_set(directions)
    kvecs = (radii[:, None, None] * dirs[None, :, :]).reshape(-1, 3)
    w = (4.0 * np.pi * rw[:, None] * radii[:, None] ** 2 * dw[None, :]).ravel()
    return ShellQuadrature(kvecs, np.repeat(radii, len(dirs)), w)


def bump(lo, hi):
    """Smooth radial bump supported in [lo, hi], peaking at the midpoint."""
    mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)

    def h(kvecs):
        k = np.linalg.norm(np.atleast_2d(kvecs), axis=1)
        x = (k - mid) / half
        out = np.zeros_like(k)
        inside = np.abs(x) < 1
        out[inside] = np.exp(1.0 - 1.0 / (1.0 - x[inside] ** 2))
        return out

    return h


@dataclass
class CookSeries:
    times: np.ndarray
    values: np.ndarray
    mu: float
    prefactor: float
    fit_range: tuple
    flags: list = field(default_factory=list)

    def integral(self, t1, t2):
        """Trapezoid estimate of int_{t1}^{t2} s(t) dt over the sampled times."""
        sel = (self.times >= t1) & (self.times <= t2)
        return float(np.trapezoid(self.values[sel], self.times[sel]))


def contracted_form_factor(cfg, h, t, quad):
    """m_t = int dk conj(h(k)) e^{i|k| t} A(k) as an atom matrix."""
    A = _form_factor_tensor(cfg.atom, cfg.ff, quad.kvecs)
    coef = quad.weights * np.conj(h(quad.kvecs))
    phases = np.exp(1j * np.outer(np.atleast_1d(t), quad.k_abs))
    return np.einsum("tq,qab->tab", phases * coef[None, :], A)


def fit_power_tail(times, values, floor=1e-300, tail=0.5):
    """Least-squares slope of log s against log t over the last `tail` fraction."""
    times, values = np.asarray(times), np.asarray(values)
    start = times[0] + (1.0 - tail) * (times[-1] - times[0])
    sel = (times >= start) & (values > floor) & (times > 0)
    if np.sum(sel) < 4:
        return float("nan"), float("nan"), (float(start), float(times[-1]))
    slope, icpt = np.polyfit(np.log(times[sel]), np.log(values[sel]), 1)
    return float(-slope), float(np.exp(icpt)), (float(start), float(times[-1]))


def cook_integrand(cfg, h, phi, times, op=None, quad=None, run=None):
    """s(t) = g || (m_t (x) 1) phi_t || with phi_t = e^{-i H_g t} phi.

    `h` maps an (n, 3) array of momenta to complex amplitudes. If `quad` is
    None the contraction uses a dense shell rule spanning the form-factor support.
    """
    times = np.asarray(times, dtype=float)
    if quad is None:
        quad = shell_quadrature(cfg.ff.sigma, cfg.ff.k_uv)
    if run is None:
        op = assemble(cfg) if op is None else op
        run = propagate(op, phi, times)
    m = contracted_form_factor(cfg, h, times, quad)
    nat, nf = cfg.atom.dim, cfg.basis.dim
    vals = np.empty(len(times))
    for i, psi in enumerate(run.states):
        vals[i] = cfg.g * np.linalg.norm(m[i] @ psi.reshape(nat, nf))
    flags = list(run.flags)
    if cfg.g == 0 or not np.any(vals > 0):
        return CookSeries(times, vals, float("inf"), 0.0, (float(times[0]), float(times[-1])), flags)
    mu, pref, rng = fit_power_tail(times, vals, floor=1e-14 * np.max(vals))
    if not np.isfinite(mu):
        flags.append("tail too short to fit")
    return CookSeries(times, vals, mu, pref, rng, flags)


# -- interaction tail -------------------------------------------------------


@dataclass
class TailTable:
    R: float
    Rprime: np.ndarray
    bound: np.ndarray
    mu: float
    prefactor: float
    flags: list = field(default_factory=list)

    def rows(self):
        fit = self.prefactor * (self.Rprime - self.R) ** (-self.mu)
        return [[self.R, rp, b, f] for rp, b, f in zip(self.Rprime, self.bound, fit)]


def position_cutoff(grid, lo, width=1.0):
    """One-particle chi(|y| >= lo) as a smooth quintic step of the given width."""
    block, _ = radial_position(grid)
    vals, vecs = np.linalg.eigh(block)
    return (vecs * smoothstep((vals - lo) / width)) @ vecs.T, float(vals.max())


def folded_field(cfg, xs):
    """sqrt(w_q) F_x(k_q) for each electron position in xs: shape (n_x, m).

    Diagonal atom dependence is dropped: F_x is evaluated as the c-number
    function of k at a fixed relative coordinate.
    """
    pot = cfg.atom.potential
    k = cfg.grid.modes
    kk = cfg.grid.k_abs
    ke, kn = cfg.ff.electron(kk), cfg.ff.nucleus(kk)
    phase = np.atleast_2d(xs) @ k.T
    f = np.exp(-1j * pot.lambda_e * phase) * ke + np.exp(1j * pot.lambda_n * phase) * kn
    return np.sqrt(cfg.grid.weights)[None, :] * f


def interaction_tail(cfg, R, Rprimes, n_x=9, width=1.0, fit_from=16.0):
    """sup_{|x| <= R} || chi(|y| >= R') F_x || for each R' with a power fit in R' - R.

    Only separations R' - R >= fit_from enter the fit; closer cutoffs still
    sit inside the intrinsic position spread of the form factor.
    """
    Rprimes = np.asarray(Rprimes, dtype=float)
    if np.any(Rprimes <= R) or R <= 0:
        raise ValueError("need R' > R > 0")
    grid = cfg.grid
    _, ymax = position_cutoff(grid, 0.0)
    resolvable = 1.0 / grid.dr
    if Rprimes.max() + width > resolvable:
        raise Refusal(
            "radial position spectrum too coarse for the requested cutoffs",
            {"max_cutoff": float(Rprimes.max() + width), "resolvable": resolvable, "y_max": ymax},
        )
    dirs, _ = direction_set(14)
    xs = (np.linspace(0.0, R, n_x)[:, None, None] * dirs[None]).reshape(-1, 3)
    fields = folded_field(cfg, xs)
    nd, nr = grid.n_directions, grid.n_radial
    out = []
    for rp in Rprimes:
        cut, _ = position_cutoff(grid, rp, width)
        per = fields.reshape(len(xs), nd, nr) @ cut.T
        out.append(float(np.max(np.linalg.norm(per.reshape(len(xs), -1), axis=1))))
    out = np.array(out)
    flags = []
    if np.any(np.diff(out) > 1e-15 * out.max()):
        flags.append("bound not monotone in R'")
    dist = Rprimes - R
    ok = (out > 1e-15 * out.max()) & (dist >= fit_from)
    mu, pref = float("nan"), float("nan")
    if np.sum(ok) >= 2:
        slope, icpt = np.polyfit(np.log(dist[ok]), np.log(out[ok]), 1)
        mu, pref = float(-slope), float(np.exp(icpt))
    return TailTable(float(R), Rprimes, out, mu, pref, flags)


# -- asymptotic observable ------------------------------------------------


def chi_gamma(s, gamma, beta3):
    """0 below beta3, 1 above gamma, quintic in between."""
    return smoothstep((np.asarray(s) - beta3) / (gamma - beta3))


def escape_operator(cfg, t, gamma, beta3):
    """dGamma(chi_gamma(|y|/t)) lifted to the fiber space."""
    block, _ = radial_position(cfg.grid)
    vals, vecs = np.linalg.eigh(block)
    one = (vecs * chi_gamma(vals / t, gamma, beta3)) @ vecs.T
    full = sp.kron(sp.identity(cfg.grid.n_directions), sp.csr_matrix(one), format="csr")
    full.data[np.abs(full.data) < 1e-15] = 0.0
    full.eliminate_zeros()
    return lift_fock(cfg, second_quantize_offdiag(cfg.basis, full))


@dataclass
class WSeries:
    times: np.ndarray
    values: np.ndarray
    liminf: float
    increments: np.ndarray
    settled: bool
    window_weight: float
    flags: list = field(default_factory=list)


def asymptotic_observable(cfg, ceiling, gamma, beta3, times, phi, beta=0.2, op=None, width=0.005, settle_tol=1e-2):
    """w(t) = <phi_t, f dGamma(chi_gamma(|y|/t)) f phi_t> under Hmod.

    f is a smooth spectral cutoff of Hmod below `ceiling` with the given
    transition width. The liminf is taken over the last half of the time grid.
    """
    if not beta < beta3 < gamma:
        raise ValueError("need beta < beta3 < gamma")
    op = assemble_modified(cfg) if op is None else op
    fphi, _ = apply_function(op, smooth_cutoff(ceiling, width), phi)
    weight = float(np.linalg.norm(fphi) ** 2)
    times = np.asarray(times, dtype=float)
    if weight == 0:
        return WSeries(times, np.zeros(len(times)), 0.0, np.zeros(len(times) - 1), True, 0.0, ["f phi = 0"])
    run = propagate(op, fphi / np.sqrt(weight), times)
    vals = np.array(
        [weight * np.real(np.vdot(psi, escape_operator(cfg, t, gamma, beta3) @ psi)) for t, psi in zip(times, run.states)]
    )
    late = times >= times[0] + 0.5 * (times[-1] - times[0])
    inc = np.abs(np.diff(vals))
    settled = bool(np.max(inc[late[1:]], initial=0.0) <= settle_tol * max(np.max(np.abs(vals)), 1e-300))
    flags = list(run.flags)
    if not settled:
        flags.append("w(t) not settled within the time budget; trend only")
    return WSeries(times, vals, float(np.min(vals[late])), inc, settled, weight, flags)


def one_photon_state(cfg, atom_index, h_folded):
    """phi_a (x) a*(h) Omega for folded one-photon coefficients, normalized."""
    basis = cfg.basis
    v = np.zeros(cfg.dim, dtype=complex)
    for q in np.flatnonzero(h_folded):
        v[atom_index * basis.dim + basis.index[(int(q),)]] = h_folded[q]
    return v / np.linalg.norm(v)


def excited_window_state(cfg, lo, hi, op=None):
    """Ground atom plus one outgoing photon in [lo, hi], orthogonalized to psi_Pi."""
    op = assemble_modified(cfg) if op is None else op
    h = bump(lo, hi)(cfg.grid.modes) * np.sqrt(cfg.grid.weights)
    phi = one_photon_state(cfg, 0, h)
    psi = ground_state(cfg, op).vector
    phi = phi - np.vdot(psi, phi) * psi
    return phi / np.linalg.norm(phi)


# -- direct integral over a ray of total momenta ---------------------------


@dataclass
class DirectIntegralGrid:
    cfg: object
    Pis: np.ndarray
    spacing: float
    operators: list
    X: np.ndarray

    @property
    def size(self):
        return len(self.Pis)

    def abs_X(self):
        vals, vecs = np.linalg.eigh(self.X)
        return vals, vecs


def com_position(n, spacing):
    """X = i d/dPi by the antisymmetric central difference; Hermitian."""
    D = (np.eye(n, k=1) - np.eye(n, k=-1)) / (2.0 * spacing)
    return 1j * D


def direct_integral_grid(cfg, p_max, n, direction=(0.0, 0.0, 1.0), modified=True, ceiling=None):
    direction = np.asarray(direction, dtype=float)
    direction = direction / np.linalg.norm(direction)
    ps = np.linspace(-p_max, p_max, n)
    Pis = ps[:, None] * direction[None, :]
    build = assemble_modified if modified else assemble
    ops = [build(cfg.with_(Pi=P)).matrix for P in Pis]
    if ceiling is not None:
        for P, H in zip(Pis, ops):
            e = ground_state(cfg.with_(Pi=P)).energy
            if e >= ceiling:
                raise Refusal("Pi sample outside the analysis ball", {"Pi": P.tolist(), "energy": e, "ceiling": ceiling})
    return DirectIntegralGrid(cfg, Pis, float(ps[1] - ps[0]), ops, com_position(n, ps[1] - ps[0]))


def dressed_packet(dig, envelope=None):
    """Blocks f(Pi) psi_Pi with a smooth compact envelope; rows are Pi samples."""
    ps = dig.Pis @ (dig.Pis[-1] / np.linalg.norm(dig.Pis[-1]))
    half = np.max(np.abs(ps))
    if envelope is None:
        x = ps / half
        env = np.zeros_like(x)
        inside = np.abs(x) < 1
        env[inside] = np.exp(1.0 - 1.0 / (1.0 - x[inside] ** 2))
    else:
        env = envelope(ps)
    blocks = np.array([ground_state(dig.cfg.with_(Pi=P), op=None).vector for P in dig.Pis])
    blocks = env[:, None] * blocks
    return blocks / np.linalg.norm(blocks)


@dataclass
class ComSeries:
    times: np.ndarray
    values: np.ndarray
    rate: float
    stencil_error: float
    flags: list = field(default_factory=list)


def _com_series(dig, blocks, times, cutoff, conjugate=False):
    vals, vecs = dig.abs_X()
    states = np.zeros((len(times), *blocks.shape), dtype=complex)
    for p, H in enumerate(dig.operators):
        v = blocks[p]
        nv = np.linalg.norm(v)
        if nv == 0:
            continue
        Hp = H.conj() if conjugate else H
        run = propagate(Hp, v / nv, times)
        states[:, p] = nv * run.states
    out = np.empty(len(times))
    for i, t in enumerate(times):
        h = cutoff(np.abs(vals) / abs(t)) if t != 0 else cutoff(np.full_like(vals, np.inf))
        op = (vecs * h) @ vecs.conj().T
        out[i] = np.linalg.norm(op @ states[i])
    return out


def com_propagation_check(dig, cutoff, blocks, times, window=None, refine=None, conjugate=False):
    """|| h(|X|/t) f e^{-i t Hmod} psi0 || over the time grid.

    `cutoff` is h as a function of |X|/t. The X stencil error is estimated by
    repeating the run on `refine` (a finer DirectIntegralGrid over the same
    ray, with matching blocks); runs whose stencil error exceeds 10% of the
    largest measured value are refused.
    """
    times = np.asarray(times, dtype=float)
    if window is not None:
        proj = []
        for H, v in zip(dig.operators, blocks):
            w = spectral_projector(H, window)
            proj.append(w.vectors @ (w.vectors.conj().T @ v))
        blocks = np.array(proj)
    series = _com_series(dig, blocks, times, cutoff, conjugate)
    err = float("nan")
    flags = []
    if refine is not None:
        fine_dig, fine_blocks = refine
        fine = _com_series(fine_dig, fine_blocks, times, cutoff, conjugate)
        scale = max(np.max(series), 1e-300)
        err = float(np.max(np.abs(fine - series)) / scale)
        if err > 0.1:
            raise Refusal("center-of-mass stencil error dominates", {"relative_error": err})
    rate, _, _ = fit_power_tail(times, series, floor=1e-14 * max(np.max(series), 1e-300))
    return ComSeries(times, series, rate, err, flags)
