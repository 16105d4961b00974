"""Checks for the independent reference implementations.

The oracle propagates the plain d x d master equation at fixed
uncertainty strengths; everything here cross-validates it against
analytic facts and against the augmented propagation it is meant to
certify.
"""

import numpy as np
import pytest

from robustpulse.augment import MultiIndexSet, initial_state, mat_lindblad
from robustpulse.linalg import kron, vec
from robustpulse.gates import preset_unitary
from robustpulse.model import NoiseDistribution, build_spin_chain, attach_uncertainties
from robustpulse.objective import avg_gate_fidelity
from robustpulse.oracle import (
    fd_step_stability,
    fd_taylor_block,
    haar_mc_agf,
    noise_sweep,
    noisy_channel_super,
    noisy_liouvillian,
    propagate_noisy_exact,
)
from robustpulse.propagate import propagate_final

from conftest import random_density, small_grid


def test_noisy_liouvillian_nominal_matches_block_generator(one_qubit):
    """At eps = 0 the oracle generator equals the package's Lindblad matrix."""
    amps = np.array([0.2, -0.1])
    got = noisy_liouvillian(one_qubit, amps, np.zeros(1))
    want = mat_lindblad(one_qubit.hamiltonian(amps), one_qubit.lindblads)
    assert np.max(np.abs(got - want)) < 1e-13


def test_noisy_liouvillian_adds_uncertainty(one_qubit):
    amps = np.zeros(2)
    eps = np.array([0.3])
    got = noisy_liouvillian(one_qubit, amps, eps)
    base = noisy_liouvillian(one_qubit, amps, np.zeros(1))
    e = one_qubit.uncertainties[0]
    ident = np.eye(2, dtype=complex)
    drive = -1j * (kron(ident, e) - kron(e.T, ident)) * 0.3
    assert np.max(np.abs(got - base - drive)) < 1e-13


def test_channel_matches_state_propagation(one_qubit):
    grid = small_grid(one_qubit, n_steps=5, dt=0.5, seed=12)
    rng = np.random.default_rng(30)
    rho0 = random_density(2, rng)
    eps = np.array([0.12])
    chan = noisy_channel_super(one_qubit, grid, eps)
    via_channel = (chan @ vec(rho0)).reshape(2, 2, order="F")
    direct = propagate_noisy_exact(one_qubit, grid, rho0, eps)
    assert np.max(np.abs(via_channel - direct)) < 1e-12


def test_nominal_channel_matches_augmented_zero_block(one_qubit):
    """eps = 0 oracle and the augmented zero-order block agree."""
    mset = MultiIndexSet(1, 2)
    grid = small_grid(one_qubit, n_steps=6, dt=0.5, seed=13)
    rho0 = np.diag([1.0, 0.0]).astype(complex)
    direct = propagate_noisy_exact(one_qubit, grid, rho0, np.zeros(1))
    final = propagate_final("expm", one_qubit, mset, grid, initial_state(mset, rho0))
    assert np.max(np.abs(final[-1] - direct)) < 1e-11


class TestTaylorStencils:
    def _setup(self, model):
        grid = small_grid(model, n_steps=5, dt=0.5, seed=14)
        rho0 = np.diag([1.0, 0.0]).astype(complex)
        return grid, rho0

    def test_order_zero_passthrough(self, one_qubit):
        grid, rho0 = self._setup(one_qubit)
        got = fd_taylor_block(one_qubit, grid, rho0, (0,))
        want = propagate_noisy_exact(one_qubit, grid, rho0, np.zeros(1))
        assert np.max(np.abs(got - want)) < 1e-13

    def test_first_order_matches_augmented(self, one_qubit):
        grid, rho0 = self._setup(one_qubit)
        mset = MultiIndexSet(1, 1)
        final = propagate_final("expm", one_qubit, mset, grid, initial_state(mset, rho0))
        fd = fd_taylor_block(one_qubit, grid, rho0, (1,))
        scale = max(np.max(np.abs(fd)), 1e-12)
        assert np.max(np.abs(final[mset.index[(1,)]] - fd)) / scale < 1e-6

    def test_diagonal_second_order_matches_augmented(self, one_qubit):
        grid, rho0 = self._setup(one_qubit)
        mset = MultiIndexSet(1, 2)
        final = propagate_final("expm", one_qubit, mset, grid, initial_state(mset, rho0))
        fd = fd_taylor_block(one_qubit, grid, rho0, (2,))
        scale = max(np.max(np.abs(fd)), 1e-12)
        assert np.max(np.abs(final[mset.index[(2,)]] - fd)) / scale < 1e-4

    def test_mixed_second_order_matches_augmented(self, two_qubit):
        grid = small_grid(two_qubit, n_steps=4, dt=0.5, seed=15)
        rho0 = np.diag([1.0, 0.0, 0.0, 0.0]).astype(complex)
        mset = MultiIndexSet(2, 2)
        final = propagate_final("expm", two_qubit, mset, grid, initial_state(mset, rho0))
        fd = fd_taylor_block(two_qubit, grid, rho0, (1, 1))
        scale = max(np.max(np.abs(fd)), 1e-12)
        assert np.max(np.abs(final[mset.index[(1, 1)]] - fd)) / scale < 1e-4

    def test_order_above_two_rejected(self, one_qubit):
        grid, rho0 = self._setup(one_qubit)
        with pytest.raises(ValueError):
            fd_taylor_block(one_qubit, grid, rho0, (3,))

    def test_step_stability(self, one_qubit):
        grid, rho0 = self._setup(one_qubit)
        assert fd_step_stability(one_qubit, grid, rho0, (1,)) < 1e-6


def test_taylor_remainder_shrinks_by_parity(one_qubit):
    """Augmented blocks are true Taylor coefficients.  Splitting the
    remainder by parity in eps isolates the leading neglected term of
    each sector: the odd part is O(eps^3) (error ratio ~8 when eps
    halves) and the even part is O(eps^4) (ratio ~16), with no
    cross-order interference."""
    mset = MultiIndexSet(1, 2)
    grid = small_grid(one_qubit, n_steps=6, dt=0.5, seed=16)
    rho0 = np.diag([1.0, 0.0]).astype(complex)
    targ = np.full((2, 2), 0.5, dtype=complex)
    final = propagate_final("expm", one_qubit, mset, grid, initial_state(mset, rho0))
    coeff = {p[0]: np.trace(targ @ final[k]).real for k, p in enumerate(mset.orders)}

    def true_value(eps):
        rho = propagate_noisy_exact(one_qubit, grid, rho0, np.array([eps]))
        return np.trace(targ @ rho).real

    def odd_remainder(eps):
        return 0.5 * (true_value(eps) - true_value(-eps)) - eps * coeff[1]

    def even_remainder(eps):
        half_sum = 0.5 * (true_value(eps) + true_value(-eps))
        return half_sum - coeff[0] - eps ** 2 * coeff[2]

    odd = [abs(odd_remainder(e)) for e in (0.1, 0.05)]
    even = [abs(even_remainder(e)) for e in (0.1, 0.05)]
    assert 6.5 < odd[0] / odd[1] < 9.5, odd
    assert 13.0 < even[0] / even[1] < 19.0, even


def test_haar_mc_identity_channel():
    d = 4
    u = preset_unitary("cnot", d)
    s_u = kron(np.conj(u), u)
    mean, stderr = haar_mc_agf(s_u, u, samples=2000, seed=3)
    assert mean == pytest.approx(1.0, abs=1e-12)
    assert stderr < 1e-12


def test_haar_mc_depolarizing_channel():
    d = 2
    ident = np.eye(d, dtype=complex)
    s_dep = np.outer(vec(ident), vec(ident)) / d
    u = preset_unitary("hadamard_transform", d)
    mean, stderr = haar_mc_agf(s_dep, u, samples=50000, seed=4)
    # every pure state scores exactly 1/2 under full depolarization at
    # d = 2, so the sample variance collapses; keep an absolute floor.
    assert abs(mean - 0.5) < max(4 * stderr, 1e-12)
    assert stderr < 0.01


class TestNoiseSweep:
    def _run(self, model, workers):
        grid = small_grid(model, n_steps=4, dt=0.5, seed=17)
        dist = NoiseDistribution("normal", [0.05], seed=21)
        u = preset_unitary("hadamard_transform", 2)
        return noise_sweep(model, grid, u, dist, 40, workers=workers)

    def test_shapes_and_determinism(self, one_qubit):
        r1 = self._run(one_qubit, workers=1)
        r2 = self._run(one_qubit, workers=1)
        assert r1.eps.shape == (40, 1)
        assert r1.fidelities.shape == (40,)
        assert np.array_equal(r1.eps, r2.eps)
        assert np.array_equal(r1.fidelities, r2.fidelities)

    def test_workers_do_not_change_results(self, one_qubit):
        r1 = self._run(one_qubit, workers=1)
        r2 = self._run(one_qubit, workers=3)
        assert np.array_equal(r1.fidelities, r2.fidelities)

    def test_statistics(self, one_qubit):
        r = self._run(one_qubit, workers=1)
        assert np.all(r.gate_errors == 1.0 - r.fidelities)
        assert r.mean_error == pytest.approx(float(np.mean(r.gate_errors)))
        cdf = r.cdf([0.01, 0.1, 1.0])
        assert np.all(np.diff(cdf) >= 0)
        assert cdf[-1] == pytest.approx(1.0)

    def test_fidelity_matches_single_channel(self, one_qubit):
        r = self._run(one_qubit, workers=1)
        grid = small_grid(one_qubit, n_steps=4, dt=0.5, seed=17)
        u = preset_unitary("hadamard_transform", 2)
        chan = noisy_channel_super(one_qubit, grid, r.eps[7])
        assert r.fidelities[7] == pytest.approx(avg_gate_fidelity(chan, u))
