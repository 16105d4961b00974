"""The compiled kernels and the plain-array fallbacks must agree."""

import numpy as np
import pytest

from robustpulse import kernels
from robustpulse.model import build_spin_chain


pytestmark = pytest.mark.skipif(
    not kernels.HAS_NUMBA, reason="compiled kernels unavailable"
)


@pytest.fixture
def restore_mode():
    saved = kernels.kernel_mode()
    yield
    kernels.set_kernel_mode(saved)


def _random_blocks(rng, n, d):
    return np.ascontiguousarray(
        rng.standard_normal((n, d, d)) + 1j * rng.standard_normal((n, d, d))
    )


def _both_modes(fn, restore=None):
    kernels.set_kernel_mode("numpy")
    a = fn()
    kernels.set_kernel_mode("numba")
    b = fn()
    return a, b


def test_mode_flag_roundtrip(restore_mode):
    kernels.set_kernel_mode("numpy")
    assert kernels.kernel_mode() == "numpy"
    kernels.set_kernel_mode("numba")
    assert kernels.kernel_mode() == "numba"
    with pytest.raises(ValueError):
        kernels.set_kernel_mode("gpu")


def test_conjugate_blocks_agree(restore_mode):
    rng = np.random.default_rng(1)
    blocks = _random_blocks(rng, 5, 4)
    u = np.ascontiguousarray(rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4)))
    udag = np.ascontiguousarray(u.conj().T)
    a, b = _both_modes(lambda: kernels.conjugate_blocks(u, udag, blocks))
    assert np.max(np.abs(a - b)) < 1e-12
    assert np.max(np.abs(a[2] - u @ blocks[2] @ udag)) < 1e-12


def test_routed_commutator_agree(restore_mode):
    rng = np.random.default_rng(2)
    blocks = _random_blocks(rng, 6, 3)
    e = np.ascontiguousarray(rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3)))
    dst = np.array([0, 2, 4], dtype=np.int64)
    src = np.array([1, 3, 5], dtype=np.int64)
    a, b = _both_modes(lambda: kernels.routed_commutator(blocks, e, dst, src, -1.0j))
    assert np.max(np.abs(a - b)) < 1e-12
    assert np.max(np.abs(a[0] - (-1j) * (e @ blocks[1] - blocks[1] @ e))) < 1e-12
    assert np.all(a[1] == 0)


def test_collapse_blocks_agree(restore_mode):
    model = build_spin_chain(2)
    rng = np.random.default_rng(3)
    blocks = _random_blocks(rng, 4, 4)
    a, b = _both_modes(
        lambda: kernels.collapse_blocks(
            model.collapse_stack, model.collapse_dag_stack, model.rates, blocks
        )
    )
    assert np.max(np.abs(a - b)) < 1e-12


def test_lindblad_rhs_agree_both_directions(restore_mode):
    model = build_spin_chain(2)
    rng = np.random.default_rng(4)
    blocks = _random_blocks(rng, 3, 4)
    h = np.ascontiguousarray(model.hamiltonian(rng.standard_normal(4) * 0.1))
    for adjoint in (False, True):
        a, b = _both_modes(
            lambda: kernels.lindblad_rhs_blocks(
                h,
                model.collapse_stack,
                model.collapse_dag_stack,
                model.collapse_cdc_stack,
                model.rates,
                blocks,
                adjoint=adjoint,
            )
        )
        assert np.max(np.abs(a - b)) < 1e-12, f"adjoint={adjoint}"


def test_pair_trace_agree(restore_mode):
    rng = np.random.default_rng(5)
    x = _random_blocks(rng, 4, 3)
    y = _random_blocks(rng, 4, 3)
    a, b = _both_modes(lambda: kernels.pair_trace(x, y))
    assert abs(a - b) < 1e-12
    want = sum(np.trace(x[k].conj().T @ y[k]) for k in range(4))
    assert abs(a - want) < 1e-12


def test_control_pairing_agree(restore_mode):
    rng = np.random.default_rng(6)
    o = _random_blocks(rng, 3, 4)
    s = _random_blocks(rng, 3, 4)
    hc = np.ascontiguousarray(
        (lambda m: (m + m.conj().T) / 2)(
            rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
        )
    )
    a, b = _both_modes(lambda: kernels.control_pairing(o, s, hc))
    assert abs(a - b) < 1e-12
    want = sum(
        np.trace(o[k].conj().T @ (hc @ s[k] - s[k] @ hc)) for k in range(3)
    )
    assert abs(a - want) < 1e-12
