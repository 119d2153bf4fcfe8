"""Fermi Golden Rule resonance matrices on the photon energy shell.

For an excited level j and lower level i the emitted photon obeys

    s(k) = (Pi - k)^2/2M + |k| - Pi^2/2M + E_i - E_j = 0.

Along a ray k = r d the function s is strictly increasing in r while
|Pi|/M < 1, so every direction carries at most one shell point.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from .atom import PlaneWaveElements, form_factor_product
from .errors import GrazingShell
from .quadrature import direction_set, gauss_panels, product_sphere

log = logging.getLogger(__name__)

GRAZING_TOL = 1e-10


@dataclass
class ResonanceMatrix:
    level: int
    Pi: np.ndarray
    matrix: np.ndarray
    shells: list = field(default_factory=list)
    flags: list = field(default_factory=list)

    @property
    def gamma(self):
        return float(np.min(np.linalg.eigvalsh(self.matrix)))

    @property
    def trace(self):
        return float(np.real(np.trace(self.matrix)))

    def is_psd(self, rel=1e-10):
        return self.gamma >= -rel * max(abs(self.trace), 1e-300)


def _shell_value(r, dirs_dot_pi, inv_m, gap):
    return 0.5 * inv_m * r**2 - inv_m * r * dirs_dot_pi + r - gap


def _shell_slope(r, dirs_dot_pi, inv_m):
    return 1.0 + inv_m * (r - dirs_dot_pi)


def shell_radii(Pi, dirs, inv_m, gap, r_max, iters=200):
    """Positive roots of s(r d) = 0 by bisection on (0, r_max]; NaN where unbracketed."""
    proj = dirs @ np.asarray(Pi, dtype=float)
    lo = np.zeros(len(dirs))
    hi = np.full(len(dirs), float(r_max))
    bracketed = _shell_value(hi, proj, inv_m, gap) >= 0.0
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        neg = _shell_value(mid, proj, inv_m, gap) < 0.0
        lo = np.where(neg, mid, lo)
        hi = np.where(neg, hi, mid)
        if np.all(hi - lo <= 4 * np.finfo(float).eps * np.maximum(hi, 1.0)):
            break
    root = 0.5 * (lo + hi)
    return np.where(bracketed, root, np.nan), _shell_slope(root, proj, inv_m)


def fgr_matrix(atom, ff, j, Pi, directions=26, r_max=None, elements=None):
    """Gamma_j(Pi) = sum_{i<j} int dk A_ij(k)^dagger A_ij(k) delta(s_i(k)).

    The term i = j has its shell at k = 0, where the form factors vanish, so
    it is left out.
    """
    if j < 1 or j >= len(atom.energies):
        raise ValueError("resonance level must satisfy 1 <= j < number of levels")
    Pi = np.asarray(Pi, dtype=float)
    inv_m = atom.potential.inverse_total_mass
    r_max = ff.k_uv if r_max is None else r_max
    dirs, dw = direction_set(directions)
    elements = PlaneWaveElements(atom) if elements is None else elements
    mj = atom.multiplicities[j]
    total = np.zeros((mj, mj), dtype=complex)
    shells, flags = [], []
    for i in range(j):
        gap = atom.energies[j] - atom.energies[i]
        radii, slope = shell_radii(Pi, dirs, inv_m, gap, r_max)
        ok = np.isfinite(radii)
        if not np.all(ok):
            log.info("level %d -> %d: %d directions without an energy-conserving photon", j, i, np.sum(~ok))
            flags.append(f"i={i}: {int(np.sum(~ok))} directions unbracketed")
        if np.any(np.abs(slope[ok]) < GRAZING_TOL):
            raise GrazingShell("tangential energy shell", {"level": j, "lower": i, "Pi": Pi.tolist()})
        shells.append({"lower": i, "radii": radii.tolist(), "jacobian": (radii**2 / np.abs(slope)).tolist()})
        for d in np.flatnonzero(ok):
            r = radii[d]
            if r <= ff.sigma:
                continue
            amp = form_factor_product(atom, ff, [r], dirs[d : d + 1], i, j, elements)[0, 0]
            total += 4.0 * np.pi * dw[d] * r**2 / abs(slope[d]) * (amp.conj().T @ amp)
    total = 0.5 * (total + total.conj().T)
    return ResonanceMatrix(j, Pi, total, shells, flags)


def lorentzian_shell_integrals(amplitude, shell, radii, r_weights, dirs, d_weights, eps_list, chunk=256):
    """int dk amp(k)^dagger amp(k) (eps/pi) / (s(k)^2 + eps^2) for each eps.

    `amplitude(r_chunk, dirs)` returns (n_r, n_d, a, b); `shell(r_chunk, dirs)`
    returns (n_r, n_d). Radial weights exclude the r^2 Jacobian; direction
    weights sum to one.
    """
    eps_list = np.asarray(eps_list, dtype=float)
    acc = None
    for start in range(0, len(radii), chunk):
        rc = radii[start : start + chunk]
        wc = r_weights[start : start + chunk] * rc**2
        amp = amplitude(rc, dirs)
        s = shell(rc, dirs)
        outer = np.einsum("rdai,rdaj->rdij", amp.conj(), amp)
        lor = (eps_list[:, None, None] / np.pi) / (s[None] ** 2 + eps_list[:, None, None] ** 2)
        weight = 4.0 * np.pi * lor * wc[None, :, None] * d_weights[None, None, :]
        part = np.einsum("erd,rdij->eij", weight, outer)
        acc = part if acc is None else acc + part
    return acc


def richardson(eps_list, values):
    """Least-squares fit values(eps) = v0 + c1 eps + c2 eps^2 entrywise; returns v0."""
    eps = np.asarray(eps_list, dtype=float)
    design = np.stack([np.ones_like(eps), eps, eps**2], axis=1)
    flat = values.reshape(len(eps), -1)
    coef, *_ = np.linalg.lstsq(design, flat, rcond=None)
    return coef[0].reshape(values.shape[1:])


@dataclass
class OracleResult(ResonanceMatrix):
    eps: np.ndarray = None
    sequence: np.ndarray = None


def fgr_oracle(atom, ff, j, Pi, eps_list, n_theta=16, panel_width=None, per_panel=6):
    """Regularized-delta evaluation of Gamma_j(Pi) on a dense spherical grid,
    extrapolated to eps -> 0."""
    eps_list = np.sort(np.asarray(eps_list, dtype=float))[::-1]
    if len(eps_list) < 3:
        raise ValueError("need at least three regularization widths")
    Pi = np.asarray(Pi, dtype=float)
    inv_m = atom.potential.inverse_total_mass
    elements = PlaneWaveElements(atom)
    dirs, dw = product_sphere(n_theta)
    width = eps_list[-1] / 5.0 if panel_width is None else panel_width
    lo, hi = ff.sigma, ff.k_uv
    radii, rw = gauss_panels(lo, hi, max(int(np.ceil((hi - lo) / width)), 1), per_panel)
    mj = atom.multiplicities[j]
    seq = np.zeros((len(eps_list), mj, mj), dtype=complex)
    for i in range(j):
        gap = atom.energies[j] - atom.energies[i]

        def amplitude(rc, d, i=i):
            return form_factor_product(atom, ff, rc, d, i, j, elements)

        def shell(rc, d, gap=gap):
            return _shell_value(rc[:, None], (d @ Pi)[None, :], inv_m, gap)

        seq += lorentzian_shell_integrals(amplitude, shell, radii, rw, dirs, dw, eps_list)
    seq = 0.5 * (seq + np.conj(np.transpose(seq, (0, 2, 1))))
    limit = richardson(eps_list, seq)
    traces = np.real(np.trace(seq, axis1=1, axis2=2))
    flags = []
    diffs = np.diff(traces)
    if not (np.all(diffs >= 0) or np.all(diffs <= 0)):
        flags.append("non-monotone extrapolation sequence")
    return OracleResult(j, Pi, 0.5 * (limit + limit.conj().T), [], flags, eps=eps_list, sequence=seq)


@dataclass
class H2Scan:
    rows: list
    infimum: float
    argmin: tuple
    excluded: list

    @property
    def holds(self):
        return self.infimum > 0


def h2_scan(atom, ff, Pis, j_levels, ceiling, directions=26):
    """gamma_j(Pi) over the grid for every level with E_j(Pi) below the ceiling."""
    inv_m = atom.potential.inverse_total_mass
    elements = PlaneWaveElements(atom)
    rows, excluded = [], []
    best, arg = np.inf, None
    for Pi in np.atleast_2d(np.asarray(Pis, dtype=float)):
        for j in j_levels:
            e_j = atom.energies[j] + 0.5 * inv_m * float(Pi @ Pi)
            if e_j >= ceiling:
                continue
            try:
                res = fgr_matrix(atom, ff, j, Pi, directions, elements=elements)
            except GrazingShell as exc:
                excluded.append({"Pi": Pi.tolist(), "j": j, "reason": str(exc)})
                continue
            radii = [float(np.nanmean(sh["radii"])) for sh in res.shells]
            rows.append({"Pi": Pi.tolist(), "j": j, "gamma": res.gamma, "shell_radii": radii})
            if res.gamma < best:
                best, arg = res.gamma, (Pi.tolist(), j)
    return H2Scan(rows, float(best) if rows else float("nan"), arg, excluded)
