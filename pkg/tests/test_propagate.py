import numpy as np
import pytest

from robustpulse.augment import (
    CapExceeded,
    MultiIndexSet,
    assemble_supermatrix,
    hs_inner,
    initial_state,
    mat_commutator,
    quadrature_norm,
    state_to_vec,
    vec_to_state,
)
from robustpulse.linalg import expm, kron
from robustpulse.model import (
    ControlGrid,
    OpenSystemModel,
    SIGMA_X,
    SIGMA_Z,
    build_spin_chain,
    attach_uncertainties,
)
from robustpulse.propagate import (
    default_substeps,
    delta_st,
    exp_nilpotent,
    generator_norm_bound,
    make_trotter_plan,
    propagate_backward,
    propagate_final,
    propagate_forward,
    step_expm,
    step_ode,
    step_trotter,
    step_trotter_adjoint,
)

from conftest import random_density, small_grid


def _random_blocks(rng, n, d):
    return np.ascontiguousarray(
        rng.standard_normal((n, d, d)) + 1j * rng.standard_normal((n, d, d))
    )


def dense_step_reference(model, mset, plan, amplitudes, blocks):
    """The splitting step rebuilt from dense supermatrix factors.

    Every factor is an explicit (N d^2) x (N d^2) matrix: true
    exponentials for the uncertainty drives and unitary flows, the same
    second-order truncation for the collapse half-steps.  Shares no code
    with the block-level step.
    """
    d = model.dim
    n_aug = mset.size
    ident_aug = np.eye(n_aug)
    half = 0.5 * plan.dt

    drives = [
        expm(half * kron(mset.routing_matrix(j), mat_commutator(model.uncertainties[j])))
        for j in range(mset.m)
    ]
    collapse = None
    if model.rates.size:
        k_jump = np.zeros((d * d, d * d), dtype=complex)
        for c, gamma in model.lindblads:
            k_jump += gamma * kron(np.conj(c), c)
        kc = kron(ident_aug, k_jump)
        collapse = np.eye(n_aug * d * d, dtype=complex) + half * kc + 0.5 * half**2 * (kc @ kc)
    group_flows = []
    for g in plan.groups:
        h_sum = sum(amplitudes[c] * model.controls[c] for c in g.channels)
        ug = expm(-1j * half * h_sum)
        group_flows.append(kron(ident_aug, kron(np.conj(ug), ug)))
    h_eff = model.drift.astype(complex).copy()
    for c, gamma in model.lindblads:
        h_eff = h_eff - 0.5j * gamma * (c.conj().T @ c)
    ue = expm(-1j * plan.dt * h_eff)
    eff_flow = kron(ident_aug, kron(np.conj(ue), ue))

    factors = list(drives)
    if collapse is not None:
        factors.append(collapse)
    factors += group_flows
    factors.append(eff_flow)
    factors += group_flows[::-1]
    if collapse is not None:
        factors.append(collapse)
    factors += drives[::-1]

    v = state_to_vec(blocks)
    for f in factors:  # factors listed in application order
        v = f @ v
    return vec_to_state(v, n_aug, d)


# ----------------------------------------------------------------- analytics


def test_rabi_pi_pulse_all_backends():
    """Constant x drive with u*T = pi/2 takes |0> to |1> exactly."""
    model = build_spin_chain(1, t1_us=0.0, t2_us=0.0)
    mset = MultiIndexSet(0, 0)
    n_steps, dt = 20, 0.5
    u = np.pi / 2.0 / (n_steps * dt)
    amps = np.zeros((2, n_steps))
    amps[0, :] = u
    grid = ControlGrid(dt, amps, -1.0, 1.0)
    s0 = initial_state(mset, np.diag([1.0, 0.0]).astype(complex))
    excited = np.diag([0.0, 1.0]).astype(complex)
    # expm and the splitting are exact for a constant closed-system drive;
    # RK4 carries its accumulated truncation error
    for backend, tol in (("expm", 1e-12), ("ode", 2e-8), ("trotter", 1e-12)):
        final = propagate_final(backend, model, mset, grid, s0)
        assert np.max(np.abs(final[-1] - excited)) < tol, backend


def test_backend_cross_agreement(one_qubit):
    mset = MultiIndexSet(1, 2)
    grid = small_grid(one_qubit, n_steps=8, dt=0.5, seed=3)
    s0 = initial_state(mset, np.diag([1.0, 0.0]).astype(complex))
    f_expm = propagate_final("expm", one_qubit, mset, grid, s0)
    f_ode = propagate_final("ode", one_qubit, mset, grid, s0)
    f_trot = propagate_final("trotter", one_qubit, mset, grid, s0)
    ref = quadrature_norm(f_expm)
    assert quadrature_norm(f_ode - f_expm) / ref < 1e-8
    assert quadrature_norm(f_trot - f_expm) / ref < 0.05


# ------------------------------------------------------------ splitting step


def test_trotter_step_matches_dense_factors(two_qubit):
    """Block-level splitting step == dense factor product, to roundoff."""
    mset = MultiIndexSet(2, 1)
    plan = make_trotter_plan(two_qubit, 0.5)
    rng = np.random.default_rng(21)
    amps = rng.standard_normal(4) * 0.3
    blocks = _random_blocks(rng, mset.size, 4)
    got = step_trotter(plan, two_qubit, mset, blocks.copy(), amps)
    want = dense_step_reference(two_qubit, mset, plan, amps, blocks)
    assert np.max(np.abs(got - want)) < 1e-12 * max(1.0, np.max(np.abs(want)))


def test_trotter_step_matches_dense_factors_no_decay():
    model = attach_uncertainties(build_spin_chain(2, t1_us=0.0, t2_us=0.0), "edges")
    mset = MultiIndexSet(2, 2)
    plan = make_trotter_plan(model, 0.4)
    rng = np.random.default_rng(22)
    amps = rng.standard_normal(4) * 0.3
    blocks = _random_blocks(rng, mset.size, 4)
    got = step_trotter(plan, model, mset, blocks.copy(), amps)
    want = dense_step_reference(model, mset, plan, amps, blocks)
    assert np.max(np.abs(got - want)) < 1e-12 * max(1.0, np.max(np.abs(want)))


def test_exp_nilpotent_matches_dense_expm(two_qubit):
    mset = MultiIndexSet(2, 2)
    rng = np.random.default_rng(23)
    blocks = _random_blocks(rng, mset.size, 4)
    for j in range(2):
        for tau in (0.05, 0.25, 1.0):
            got = exp_nilpotent(two_qubit, mset, j, blocks, tau)
            dense = expm(
                tau * kron(mset.routing_matrix(j), mat_commutator(two_qubit.uncertainties[j]))
            )
            want = vec_to_state(dense @ state_to_vec(blocks), mset.size, 4)
            scale = max(1.0, np.max(np.abs(want)))
            assert np.max(np.abs(got - want)) / scale < 1e-11, (j, tau)


def test_exp_nilpotent_zero_order_is_identity(two_qubit):
    mset = MultiIndexSet(2, 0)
    rng = np.random.default_rng(24)
    blocks = _random_blocks(rng, 1, 4)
    assert np.array_equal(exp_nilpotent(two_qubit, mset, 0, blocks, 0.7), blocks)


def test_greedy_grouping_without_hints():
    """Models without builder hints get valid groups discovered greedily."""
    controls = [
        kron(SIGMA_X, np.eye(2)),
        kron(np.eye(2), SIGMA_X),
        kron(SIGMA_Z, SIGMA_Z),
    ]
    model = OpenSystemModel(
        dim=4,
        drift=0.1 * kron(SIGMA_Z, np.eye(2)),
        controls=controls,
        lindblads=[(kron(SIGMA_X, np.eye(2)) * 0.3, 1e-3)],
    )
    plan = make_trotter_plan(model, 0.5)
    seen = sorted(c for g in plan.groups for c in g.channels)
    assert seen == [0, 1, 2]
    # commuting x drives share a group; the zz control cannot join them
    sizes = sorted(len(g.channels) for g in plan.groups)
    assert sizes == [1, 2]
    mset = MultiIndexSet(0, 0)
    rng = np.random.default_rng(25)
    amps = rng.standard_normal(3) * 0.2
    blocks = _random_blocks(rng, 1, 4)
    got = step_trotter(plan, model, mset, blocks.copy(), amps)
    want = dense_step_reference(model, mset, plan, amps, blocks)
    assert np.max(np.abs(got - want)) < 1e-12 * max(1.0, np.max(np.abs(want)))


# ------------------------------------------------------------------ adjoints


def test_step_adjoint_pairing_all_backends(one_qubit):
    """<a, S b> = <S^dag a, b> exactly, for every backend's one step."""
    mset = MultiIndexSet(1, 2)
    rng = np.random.default_rng(26)
    amps = np.array([0.2, -0.15])
    a = _random_blocks(rng, mset.size, 2)
    b = _random_blocks(rng, mset.size, 2)
    plan = make_trotter_plan(one_qubit, 0.5)

    lhs = hs_inner(a, step_trotter(plan, one_qubit, mset, b.copy(), amps))
    rhs = hs_inner(step_trotter_adjoint(plan, one_qubit, mset, a.copy(), amps), b)
    assert abs(lhs - rhs) < 1e-12 * abs(lhs)

    lhs = hs_inner(a, step_expm(one_qubit, mset, b, amps, 0.5))
    rhs = hs_inner(step_expm(one_qubit, mset, a, amps, 0.5, adjoint=True), b)
    assert abs(lhs - rhs) < 1e-12 * abs(lhs)

    lhs = hs_inner(a, step_ode(one_qubit, mset, b, amps, 0.5, substeps=8))
    rhs = hs_inner(step_ode(one_qubit, mset, a, amps, 0.5, substeps=8, adjoint=True), b)
    assert abs(lhs - rhs) < 1e-12 * abs(lhs)


def test_pairing_invariant_along_trajectory(one_qubit):
    """Co-state/state pairing is conserved step by step for each backend."""
    mset = MultiIndexSet(1, 1)
    grid = small_grid(one_qubit, n_steps=6, dt=0.5, seed=5)
    rng = np.random.default_rng(27)
    s0 = initial_state(mset, random_density(2, rng))
    costate_T = _random_blocks(rng, mset.size, 2)
    plan = make_trotter_plan(one_qubit, grid.dt)
    for backend in ("expm", "ode", "trotter"):
        fwd = propagate_forward(backend, one_qubit, mset, grid, s0, plan=plan)
        bwd = propagate_backward(backend, one_qubit, mset, grid, costate_T, plan=plan)
        pairings = [
            hs_inner(bwd.states[k], fwd.states[k]) for k in range(grid.n_steps + 1)
        ]
        spread = np.max(np.abs(np.diff(pairings)))
        assert spread < 1e-10 * max(1.0, abs(pairings[-1])), backend


# ------------------------------------------------------- error scaling, caps


def test_rk4_error_scales_fourth_order(one_qubit):
    mset = MultiIndexSet(1, 1)
    rng = np.random.default_rng(28)
    amps = np.array([0.4, -0.3])
    blocks = initial_state(mset, random_density(2, rng))
    exact = step_expm(one_qubit, mset, blocks, amps, 1.0)
    e2 = quadrature_norm(step_ode(one_qubit, mset, blocks, amps, 1.0, substeps=2) - exact)
    e4 = quadrature_norm(step_ode(one_qubit, mset, blocks, amps, 1.0, substeps=4) - exact)
    ratio = e2 / e4
    assert 12.0 < ratio < 20.0, ratio


def test_default_substeps_scale_with_dt(one_qubit):
    amps = np.array([0.3, 0.1])
    s1 = default_substeps(one_qubit, amps, 0.5)
    s2 = default_substeps(one_qubit, amps, 4.0)
    assert s1 >= 1
    assert 6 * s1 <= s2 <= 10 * s1


def test_generator_norm_bound_dominates(one_qubit, two_qubit):
    for model, m in ((one_qubit, 1), (two_qubit, 2)):
        mset = MultiIndexSet(m, 1)
        rng = np.random.default_rng(29)
        amps = rng.standard_normal(len(model.controls)) * 0.3
        big = assemble_supermatrix(model, mset, amps)
        assert np.linalg.norm(big, 2) <= generator_norm_bound(model, amps) + 1e-12


def test_trace_behaviour_exact_backends(one_qubit):
    """Physical block keeps unit trace; derivative blocks stay traceless."""
    mset = MultiIndexSet(1, 2)
    grid = small_grid(one_qubit, n_steps=6, dt=0.5, seed=6)
    s0 = initial_state(mset, np.diag([0.7, 0.3]).astype(complex))
    for backend in ("expm", "ode"):
        fwd = propagate_forward(backend, one_qubit, mset, grid, s0)
        for k in range(grid.n_steps + 1):
            traces = np.trace(fwd.states[k], axis1=1, axis2=2)
            assert abs(traces[-1] - 1.0) < 1e-12, backend
            assert np.max(np.abs(traces[:-1])) < 1e-12, backend


def test_trotter_trace_defect_is_small(one_qubit):
    mset = MultiIndexSet(1, 1)
    grid = small_grid(one_qubit, n_steps=16, dt=0.25, seed=7)
    s0 = initial_state(mset, np.diag([1.0, 0.0]).astype(complex))
    final = propagate_final("trotter", one_qubit, mset, grid, s0)
    assert abs(np.trace(final[-1]).real - 1.0) < 1e-5


def test_delta_st_shrinks_with_dt(one_qubit):
    mset = MultiIndexSet(1, 1)
    base = small_grid(one_qubit, n_steps=8, dt=0.5, seed=8)
    fine = ControlGrid(0.25, np.repeat(base.amplitudes, 2, axis=1), base.lo, base.hi)
    s0 = initial_state(mset, np.diag([1.0, 0.0]).astype(complex))
    d_coarse = delta_st(one_qubit, mset, base, s0)
    d_fine = delta_st(one_qubit, mset, fine, s0)
    assert d_fine < d_coarse / 2.0


def test_forward_cache_layout(one_qubit):
    mset = MultiIndexSet(1, 1)
    grid = small_grid(one_qubit, n_steps=5, dt=0.5, seed=9)
    s0 = initial_state(mset, np.diag([1.0, 0.0]).astype(complex))
    fwd = propagate_forward("trotter", one_qubit, mset, grid, s0, record_ctl=True)
    assert fwd.states.shape == (6, 2, 2, 2)
    assert np.array_equal(fwd.initial, s0)
    assert fwd.pre_ctl.shape == (5, 2, 2, 2)
    assert fwd.mid_ctl.shape == (5, 2, 2, 2)
    no_rec = propagate_forward("expm", one_qubit, mset, grid, s0)
    assert no_rec.pre_ctl is None


def test_expm_backend_respects_cap(two_qubit):
    mset = MultiIndexSet(2, 2)
    grid = small_grid(two_qubit, n_steps=2, dt=0.5, seed=10)
    s0 = initial_state(mset, np.eye(4, dtype=complex) / 4.0)
    with pytest.raises(CapExceeded):
        propagate_final("expm", two_qubit, mset, grid, s0, cap=50)


def test_unknown_backend_rejected(one_qubit):
    grid = small_grid(one_qubit, n_steps=2)
    s0 = initial_state(MultiIndexSet(1, 0), np.eye(2, dtype=complex) / 2)
    with pytest.raises(ValueError, match="backend"):
        propagate_final("magic", one_qubit, MultiIndexSet(1, 0), grid, s0)
