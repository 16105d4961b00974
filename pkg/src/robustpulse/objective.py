"""Objectives on terminal augmented states.

The primary figure of merit is the target overlap of the physical
(zero-order) block minus a weighted quadratic penalty on the Taylor
coefficient blocks; driving those blocks to zero flattens the response
to the uncertain parameters.  A second-order average-fidelity surrogate
and the gate-synthesis machinery (state sets, weighted multi-state
objective, average gate fidelity) live here too.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .augment import MultiIndexSet
from .linalg import is_hermitian, kron

__all__ = [
    "overlap",
    "RobustStateObjective",
    "robust_J",
    "costate_J",
    "avg_J_tilde",
    "costate_J_tilde",
    "gate_basis_states",
    "GateObjective",
    "make_gate_objective",
    "gate_objective",
    "gate_costates",
    "process_fidelity",
    "avg_gate_fidelity",
    "ground_state",
    "uniform_state",
]


def ground_state(d: int) -> np.ndarray:
    """|0...0><0...0|."""
    rho = np.zeros((d, d), dtype=complex)
    rho[0, 0] = 1.0
    return rho


def uniform_state(d: int) -> np.ndarray:
    """Pure uniform-superposition projector: every entry 1/d."""
    return np.full((d, d), 1.0 / d, dtype=complex)


def overlap(state_T: np.ndarray, target: np.ndarray) -> float:
    """Re tr(rho_0(T) target) on the physical block of an augmented state."""
    rho = state_T[-1] if state_T.ndim == 3 else state_T
    return float(np.real(np.sum(rho.T * target)))


def _lam_array(mset: MultiIndexSet, lam) -> np.ndarray:
    out = np.zeros(mset.size)
    if np.isscalar(lam):
        out[:] = float(lam)
    else:
        for p, value in dict(lam).items():
            key = tuple(int(x) for x in p)
            if key not in mset.index:
                raise ValueError(f"penalty weight given for unknown order {key}")
            out[mset.index[key]] = float(value)
    out[mset.zero_index] = 0.0
    return out


@dataclass
class RobustStateObjective:
    """Target overlap plus quadratic penalties on the coefficient blocks.

    ``lam[k]`` weights the squared Frobenius norm of block k; the
    zero-order entry is ignored.
    """

    target: np.ndarray
    lam: np.ndarray
    rho0: np.ndarray | None = None  # initial physical state, when the task has one

    @classmethod
    def make(
        cls, mset: MultiIndexSet, target: np.ndarray, rho0=None, lam=1.0
    ) -> "RobustStateObjective":
        target = np.asarray(target, dtype=complex)
        if not is_hermitian(target, tol=1e-10):
            raise ValueError("target state must be Hermitian")
        if rho0 is not None:
            rho0 = np.asarray(rho0, dtype=complex)
            if not is_hermitian(rho0, tol=1e-10):
                raise ValueError("initial state must be Hermitian")
            if abs(np.trace(rho0).real - 1.0) > 1e-8:
                raise ValueError("initial state must have unit trace")
        return cls(target=target, lam=_lam_array(mset, lam), rho0=rho0)


def robust_J(state_T: np.ndarray, obj: RobustStateObjective) -> float:
    """J = Re tr(rho_0(T) target) - 1/2 sum_p lam_p ||rho_p(T)||_F^2."""
    j = overlap(state_T, obj.target)
    norms2 = np.sum(np.abs(state_T) ** 2, axis=(1, 2))
    return float(j - 0.5 * np.dot(obj.lam, norms2))


def costate_J(state_T: np.ndarray, obj: RobustStateObjective) -> np.ndarray:
    """Terminal co-state of :func:`robust_J`: the gradient of J with
    respect to each block under the Hilbert-Schmidt pairing."""
    out = -obj.lam[:, None, None] * state_T
    out[-1] = obj.target
    return out


def avg_J_tilde(
    state_T: np.ndarray,
    target: np.ndarray,
    sigmas: np.ndarray,
    mset: MultiIndexSet,
) -> float:
    """Second-order surrogate of the noise-averaged fidelity.

    <F> over independent zero-mean strengths with std sigma_j equals
    tr(targ rho_0) + sum_j sigma_j^2 tr(targ rho_{2 e_j}) up to O(sigma^4)
    for symmetric laws.  Needs n >= 2 so the diagonal second-order blocks
    exist.
    """
    sigmas = np.atleast_1d(np.asarray(sigmas, dtype=float))
    if mset.n < 2:
        raise ValueError("second-order surrogate needs truncation order n >= 2")
    if sigmas.size != mset.m:
        raise ValueError("need one sigma per uncertainty")
    total = float(np.real(np.sum(state_T[-1].T * target)))
    for j in range(mset.m):
        p = tuple(2 if i == j else 0 for i in range(mset.m))
        total += sigmas[j] ** 2 * float(np.real(np.sum(state_T[mset.index[p]].T * target)))
    return total


def costate_J_tilde(
    mset: MultiIndexSet, target: np.ndarray, sigmas: np.ndarray
) -> np.ndarray:
    """Terminal co-state of :func:`avg_J_tilde`."""
    sigmas = np.atleast_1d(np.asarray(sigmas, dtype=float))
    if mset.n < 2:
        raise ValueError("second-order surrogate needs truncation order n >= 2")
    if sigmas.size != mset.m:
        raise ValueError("need one sigma per uncertainty")
    d = target.shape[0]
    out = np.zeros((mset.size, d, d), dtype=complex)
    out[mset.zero_index] = target
    for j in range(mset.m):
        p = tuple(2 if i == j else 0 for i in range(mset.m))
        out[mset.index[p]] = sigmas[j] ** 2 * target
    return out


# --------------------------------------------------------------- gate tasks


def gate_basis_states(d: int, kind: str = "d_plus_one") -> list:
    """Input-state sets whose transport pins down a unitary channel.

    "d_plus_one": the d computational projectors plus the uniform
    pure state (all entries 1/d); all pure, so a perfect gate scores
    overlap 1 on each.  "three": the classic three-state set; its third
    member (the identity) is returned trace-normalized to I/d.
    """
    if kind == "d_plus_one":
        states = []
        for i in range(d):
            rho = np.zeros((d, d), dtype=complex)
            rho[i, i] = 1.0
            states.append(rho)
        states.append(uniform_state(d))
        return states
    if kind == "three":
        diag = 2.0 * (d - np.arange(1, d + 1) + 1) / (d * (d + 1))
        return [
            np.diag(diag).astype(complex),
            uniform_state(d),
            np.eye(d, dtype=complex) / d,
        ]
    raise ValueError(f"unknown basis kind {kind!r}")


@dataclass
class GateObjective:
    """Weighted multi-state robust objective for synthesising a unitary."""

    u_target: np.ndarray
    kind: str
    weights: np.ndarray
    state0s: list
    per_state: list  # RobustStateObjective per input state

    @property
    def dim(self) -> int:
        return self.u_target.shape[0]

    @property
    def n_states(self) -> int:
        return len(self.state0s)


def make_gate_objective(
    mset: MultiIndexSet,
    u_target: np.ndarray,
    kind: str = "d_plus_one",
    lam=1.0,
    weights=None,
) -> GateObjective:
    """Build the d+1 (or three) state-transport objectives for a target
    unitary; weights default to uniform."""
    u_target = np.asarray(u_target, dtype=complex)
    d = u_target.shape[0]
    if np.max(np.abs(u_target.conj().T @ u_target - np.eye(d))) > 1e-10:
        raise ValueError("gate target must be unitary")
    states = gate_basis_states(d, kind)
    if weights is None:
        weights = np.full(len(states), 1.0 / len(states))
    weights = np.asarray(weights, dtype=float)
    if weights.size != len(states) or np.any(weights < 0):
        raise ValueError("need one non-negative weight per basis state")
    per_state = [
        RobustStateObjective.make(mset, u_target @ rho @ u_target.conj().T, lam=lam)
        for rho in states
    ]
    return GateObjective(
        u_target=u_target, kind=kind, weights=weights, state0s=states, per_state=per_state
    )


def gate_objective(states_T: list, gobj: GateObjective) -> float:
    """Weighted sum of the per-state robust objectives."""
    if len(states_T) != gobj.n_states:
        raise ValueError("one terminal state per basis state required")
    return float(
        sum(w * robust_J(s, o) for w, s, o in zip(gobj.weights, states_T, gobj.per_state))
    )


def gate_costates(states_T: list, gobj: GateObjective) -> list:
    """Per-state terminal co-states, each scaled by its weight."""
    return [
        w * costate_J(s, o)
        for w, s, o in zip(gobj.weights, states_T, gobj.per_state)
    ]


def process_fidelity(channel_super: np.ndarray, u_target: np.ndarray) -> float:
    """tr(S_U^dag S_Lambda) / d^2 for a column-stacking channel matrix."""
    d = u_target.shape[0]
    if channel_super.shape != (d * d, d * d):
        raise ValueError("channel matrix dimension does not match the target")
    s_u = kron(np.conj(u_target), u_target)
    return float(np.real(np.sum(np.conj(s_u) * channel_super)) / d**2)


def avg_gate_fidelity(channel_super: np.ndarray, u_target: np.ndarray) -> float:
    """Average gate fidelity (d F_pro + 1) / (d + 1)."""
    d = u_target.shape[0]
    return (d * process_fidelity(channel_super, u_target) + 1.0) / (d + 1.0)
