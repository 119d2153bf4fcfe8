import numpy as np
import pytest
from scipy.linalg import expm

from dressedatom.dynamics import (
    bump,
    chi_gamma,
    com_position,
    com_propagation_check,
    cook_integrand,
    direct_integral_grid,
    dressed_packet,
    escape_operator,
    fit_power_tail,
    interaction_tail,
    lanczos_step,
    one_photon_state,
    propagate,
    shell_quadrature,
    soft_number,
    asymptotic_observable,
)
from dressedatom.errors import Refusal
from dressedatom.fiber import assemble, assemble_modified, soft_projector
from dressedatom.spectral import ground_state


def random_state(n, seed):
    rng = np.random.default_rng(seed)
    v = rng.normal(size=n) + 1j * rng.normal(size=n)
    return v / np.linalg.norm(v)


@pytest.fixture(scope="module")
def small(cfg_for):
    cfg = cfg_for(nr=4, nd=6, nmax=1, g=0.05)
    return cfg, assemble(cfg)


def test_propagation_matches_dense_exponential(small):
    cfg, op = small
    H = op.matrix.toarray()
    psi0 = random_state(cfg.dim, 0)
    times = np.array([0.5, 3.0, 20.0, -7.0])
    run = propagate(op, psi0, times)
    for t, psi in zip(times, run.states):
        assert np.abs(psi - expm(-1j * t * H) @ psi0).max() < 1e-9
    assert run.norm_drift < 1e-12 and run.energy_drift < 1e-12
    assert run.max_step_error <= 1e-10
    assert not run.flags


def test_lanczos_step_error_estimate(small):
    cfg, op = small
    H = op.matrix.toarray()
    v = random_state(cfg.dim, 1)
    exact = expm(-1j * 2.0 * H) @ v
    for order in (6, 10, 14):
        out, err = lanczos_step(op.matrix, v, 2.0, order)
        assert np.linalg.norm(out - exact) <= 10 * err + 1e-13
    out, err = lanczos_step(op.matrix, np.zeros(cfg.dim, complex), 1.0, 10)
    assert err == 0 and not np.any(out)


def test_propagation_guards(small):
    cfg, op = small
    with pytest.raises(ValueError):
        propagate(op, 2 * random_state(cfg.dim, 2), [1.0])
    with pytest.raises(Refusal):
        propagate(op, random_state(cfg.dim, 2), [50.0], order=3, tol=1e-16, max_halvings=2)


def test_soft_number_conserved(cfg_for):
    cfg = cfg_for(nr=6, nd=6, nmax=2, g=0.2)
    soft = soft_number(cfg)
    psi0 = random_state(cfg.dim, 3)
    times = np.linspace(5, 100, 6)
    for op in (assemble(cfg), assemble_modified(cfg)):
        run = propagate(op, psi0, times, soft=soft)
        assert run.soft_drift < 1e-10


def test_modified_equals_free_on_interacting_range(cfg_for):
    cfg = cfg_for(nr=6, nd=6, nmax=2, g=0.2)
    P = soft_projector(cfg)
    psi0 = P @ random_state(cfg.dim, 4)
    psi0 /= np.linalg.norm(psi0)
    times = np.linspace(10, 100, 4)
    a = propagate(assemble(cfg), psi0, times).states
    b = propagate(assemble_modified(cfg), psi0, times).states
    assert np.abs(a - b).max() < 1e-8


def test_fit_power_tail_recovers_exponent():
    t = np.linspace(10, 200, 40)
    mu, pref, rng = fit_power_tail(t, 3.0 * t**-1.7)
    assert mu == pytest.approx(1.7, rel=1e-10)
    assert pref == pytest.approx(3.0, rel=1e-8)
    assert rng[1] == 200
    assert np.isnan(fit_power_tail(t[:4], t[:4] ** -1.0)[0])


def test_bump_support():
    h = bump(0.2, 0.4)
    k = np.linspace(0, 0.6, 61)
    vals = h(k[:, None] * np.array([[0, 0, 1.0]]))
    assert np.all(vals[(k <= 0.2) | (k >= 0.4)] == 0)
    assert vals[30] == pytest.approx(1.0)
    quad = shell_quadrature(0.0, 1.0, 10, 8, 26)
    assert quad.weights.sum() == pytest.approx(4 * np.pi / 3, rel=1e-12)


def test_cook_integrand_soft_and_outgoing(cfg_for):
    cfg = cfg_for(nr=40, nd=6, nmax=1, g=1e-3)
    op = assemble(cfg)
    psi = ground_state(cfg, op).vector
    times = np.linspace(5, 200, 40)
    run = propagate(op, psi, times)
    soft = cook_integrand(cfg, bump(0.01, 0.09), psi, times, run=run)
    assert np.all(soft.values == 0)
    hard = cook_integrand(cfg, bump(0.2, 0.4), psi, times, run=run)
    assert hard.mu > 1
    assert hard.integral(times[0], times[-1]) > 0
    free = cook_integrand(cfg.with_(g=0.0), bump(0.2, 0.4), psi, times, run=run)
    assert np.all(free.values == 0)


def test_interaction_tail_guards(cfg_for):
    cfg = cfg_for(nr=20, nd=6, nmax=1)
    with pytest.raises(ValueError):
        interaction_tail(cfg, 2.0, [1.0, 5.0])
    with pytest.raises(Refusal):
        interaction_tail(cfg, 2.0, [10.0, 500.0])


def test_interaction_tail_decays(cfg_for):
    cfg = cfg_for(nr=150, nd=6, nmax=1)
    tail = interaction_tail(cfg, 2.0, [6.0, 10.0, 18.0, 34.0, 66.0])
    assert not tail.flags
    assert np.all(np.diff(tail.bound) < 0)
    assert tail.mu >= 2
    assert len(tail.rows()) == 5


def test_chi_gamma_and_escape_operator(cfg_for):
    assert chi_gamma(0.3, 0.5, 0.4) == 0 and chi_gamma(0.6, 0.5, 0.4) == 1
    cfg = cfg_for(nr=4, nd=6, nmax=2)
    E = escape_operator(cfg, 10.0, 0.5, 0.4)
    assert abs(E - E.conj().T).max() < 1e-14
    assert E.diagonal()[0] == 0
    vals = np.linalg.eigvalsh(E.toarray())
    assert vals.min() > -1e-12 and vals.max() < cfg.basis.n_max + 1e-12


def test_observable_guards(cfg_for):
    cfg = cfg_for()
    psi = one_photon_state(cfg, 0, np.ones(cfg.grid.size))
    with pytest.raises(ValueError):
        asymptotic_observable(cfg, 0.0, 0.5, 0.1, [1.0, 2.0], psi)
    empty = asymptotic_observable(cfg, -10.0, 0.5, 0.4, np.linspace(1, 4, 4), psi)
    assert np.all(empty.values == 0) and empty.flags == ["f phi = 0"]


def test_com_position_hermitian():
    X = com_position(9, 0.1)
    assert np.array_equal(X, X.conj().T)
    assert np.allclose(np.sort(np.linalg.eigvalsh(X)), -np.sort(np.linalg.eigvalsh(X))[::-1])


def test_com_propagation_symmetries(cfg_for):
    cfg = cfg_for(nr=4, nd=6, nmax=1, g=1e-2)
    dig = direct_integral_grid(cfg, 0.4, 9)
    blocks = dressed_packet(dig)
    assert np.linalg.norm(blocks) == pytest.approx(1.0)
    times = np.linspace(5, 50, 6)

    def cut(s):
        return chi_gamma(s, 0.4, 0.2)

    fwd = com_propagation_check(dig, cut, blocks, times)
    rev = com_propagation_check(dig, cut, blocks.conj(), -times, conjugate=True)
    assert np.abs(fwd.values - rev.values).max() < 1e-10
    zero = com_propagation_check(dig, lambda s: np.zeros_like(s), blocks, times)
    assert np.all(zero.values == 0)
    with pytest.raises(Refusal):
        direct_integral_grid(cfg, 0.4, 5, ceiling=-1.0)
