import numpy as np
import pytest
import scipy.sparse as sp

from dressedatom import spectral
from dressedatom.fiber import assemble, sector_energies
from dressedatom.spectral import (
    apply_function,
    dispersion_scan,
    dressing_deficit,
    ground_state,
    localization,
    lowest_eigs,
    overlap_and_gap,
    second_order,
    smooth_cutoff,
    spectral_bounds,
    spectral_projector,
)


def random_hermitian(n, seed, density=None):
    rng = np.random.default_rng(seed)
    if density is None:
        x = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
        return sp.csr_matrix(0.5 * (x + x.conj().T))
    x = sp.random(n, n, density=density, random_state=seed, format="csr")
    x = x + 1j * sp.random(n, n, density=density, random_state=seed + 1, format="csr")
    return (0.5 * (x + x.conj().T) + sp.diags(np.linspace(0, 10, n))).tocsr()


def test_diagonal_matrix():
    d = np.array([3.0, -1.0, 2.0, 0.5])
    vals, _, res = lowest_eigs(sp.diags(d), 4)
    assert np.array_equal(vals, np.sort(d))
    assert np.all(res < 1e-14)


@pytest.mark.parametrize("limit", [10**6, 50])
def test_random_hermitian_against_dense(monkeypatch, limit):
    monkeypatch.setattr(spectral, "DENSE_LIMIT", limit)
    mat = random_hermitian(200, 1)
    ref = np.linalg.eigvalsh(mat.toarray())
    vals, vecs, res = lowest_eigs(mat, 6)
    assert np.abs(vals - ref[:6]).max() < 1e-9
    assert np.all(res < 1e-8)


def test_lanczos_is_deterministic(monkeypatch):
    monkeypatch.setattr(spectral, "DENSE_LIMIT", 50)
    mat = random_hermitian(400, 2, density=0.02)
    a = lowest_eigs(mat, 3)
    b = lowest_eigs(mat, 3)
    assert np.array_equal(a[0], b[0])


def test_free_ground_state(cfg_for):
    cfg = cfg_for(nr=3, nd=6, nmax=1, g=0.0)
    gs = ground_state(cfg)
    assert gs.energy == pytest.approx(cfg.atom.energies[0], rel=1e-14)
    assert abs(gs.vector[0]) == pytest.approx(1.0, rel=1e-14)
    assert dressing_deficit(gs.vector, cfg) == pytest.approx(0.0, abs=1e-28)
    vals = lowest_eigs(assemble(cfg), cfg.dim)[0]
    assert np.allclose(vals, sector_energies(cfg), rtol=1e-12)


def test_ground_state_dressed(cfg_for):
    Pi = np.array([0.0, 0.0, 0.3])
    cfg = cfg_for(nr=4, nd=6, nmax=2, g=0.05, Pi=Pi)
    gs = ground_state(cfg)
    assert gs.simple and not gs.flags
    assert gs.energy <= cfg.unperturbed_level(0)
    assert gs.soft_leak < 1e-8
    assert gs.residual < 1e-10


def test_second_order_shift(cfg_for):
    S, D = second_order(cfg_for(nr=4, nd=6, nmax=1, g=1e-3))
    for g in (1e-3, 2e-3):
        cfg = cfg_for(nr=4, nd=6, nmax=1, g=g)
        gs = ground_state(cfg)
        shift = gs.energy - cfg.atom.energies[0]
        assert shift == pytest.approx(-(g**2) * S, rel=1e-4)
        assert dressing_deficit(gs.vector, cfg) == pytest.approx(g**2 * D, rel=1e-4)


def test_deficit_monotone_and_quadratic(cfg_for):
    gs = [1e-3, 2e-3, 4e-3, 8e-3]
    deficits = [overlap_and_gap(cfg_for(nr=3, nd=6, nmax=2, g=g))[1] for g in gs]
    assert np.all(np.diff(deficits) > 0)
    ratio = np.array(deficits) / np.array(gs) ** 2
    assert np.ptp(ratio) < 0.01 * ratio.mean()


def test_truncation_is_variational(cfg_for):
    e1 = ground_state(cfg_for(nr=3, nd=6, nmax=1, g=0.2)).energy
    e2 = ground_state(cfg_for(nr=3, nd=6, nmax=2, g=0.2)).energy
    assert e2 <= e1


def test_free_dispersion_parabola(cfg_for):
    cfg = cfg_for(nr=3, nd=6, nmax=1, g=0.0)
    Pis = np.array([[0, 0, p] for p in (0.0, 0.2, 0.4)])
    curve = dispersion_scan(cfg, Pis)
    exact = cfg.atom.energies[0] + 0.5 * cfg.inv_mass * Pis[:, 2] ** 2
    assert np.allclose(curve.energy, exact, rtol=1e-13)
    assert np.allclose(curve.grad_fh[:, 2], cfg.inv_mass * Pis[:, 2], rtol=1e-12)


def test_dressed_dispersion_gradients(cfg_for):
    cfg = cfg_for(nr=3, nd=6, nmax=2, g=0.05)
    Pis = np.array([[0, 0, p] for p in (0.0, 0.2, 0.4)])
    curve = dispersion_scan(cfg, Pis)
    assert np.linalg.norm(curve.grad_fh[0]) < 1e-14
    assert curve.relative_deviation < 1e-6
    assert np.all(np.linalg.norm(curve.grad_fd, axis=1) <= 1 + 1e-6)
    assert len(list(curve.rows())) == 3


def test_spectral_windows(cfg_for):
    cfg = cfg_for(nr=4, nd=6, nmax=1, g=0.05)
    op = assemble(cfg)
    gs = ground_state(cfg, op)
    assert spectral_projector(op, (gs.energy - 1.0, gs.energy - 0.5)).size == 0
    one = spectral_projector(op, (gs.energy - 1e-6, gs.energy + 1e-6))
    assert one.size == 1
    assert abs(abs(np.vdot(one.vectors[:, 0], gs.vector)) - 1) < 1e-12
    wide = spectral_projector(op, (gs.energy - 1e-6, cfg.atom.energies[1] + 0.1))
    P = wide.projector()
    assert np.abs(P @ P - P).max() < 1e-10
    assert np.all(wide.residuals < 1e-10)


def test_shift_invert_window(monkeypatch, cfg_for):
    cfg = cfg_for(nr=4, nd=6, nmax=1, g=0.05)
    op = assemble(cfg)
    window = (cfg.atom.energies[1] - 0.01, cfg.atom.energies[1] + 0.05)
    ref = spectral_projector(op, window)
    monkeypatch.setattr(spectral, "DENSE_LIMIT", 10)
    win = spectral_projector(op, window, cap=60)
    assert win.size == ref.size
    assert np.abs(win.values - ref.values).max() < 1e-10
    assert np.abs(win.vectors.conj().T @ win.vectors - np.eye(win.size)).max() < 1e-10


def test_localization(cfg_for):
    cfg = cfg_for(nr=4, nd=6, nmax=1, g=0.05)
    op = assemble(cfg)
    window = spectral_projector(op, (-1.0, cfg.atom.energies[0] + 0.05))
    rows = localization(cfg, [0.0, 0.3, 0.6, 0.9], window=window)
    assert rows[0][1] == pytest.approx(1.0, rel=1e-10)
    norms = [r[1] for r in rows]
    assert np.all(np.diff(norms) > 0) and np.all(np.isfinite(norms))
    assert all(np.isfinite(r[2]) and r[2] >= 1 for r in rows)


def test_chebyshev_function_application(cfg_for):
    cfg = cfg_for(nr=4, nd=6, nmax=1, g=0.1)
    mat = assemble(cfg).matrix
    lo, hi = spectral_bounds(mat)
    vals, vecs = np.linalg.eigh(mat.toarray())
    assert lo <= vals[0] and vals[-1] <= hi
    f = smooth_cutoff(cfg.atom.energies[1] + 0.1, 0.02)
    v = np.random.default_rng(0).normal(size=cfg.dim)
    out, degree = apply_function(mat, f, v)
    ref = vecs @ (f(vals) * (vecs.conj().T @ v))
    assert np.abs(out - ref).max() < 1e-10
    assert degree >= 64
