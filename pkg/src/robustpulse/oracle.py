"""Independent verification oracles.

Everything in this module deliberately bypasses the augmented-block
machinery and the splitting factors: the uncertain system is propagated
as a plain density matrix under the full generator with the uncertainty
strengths inserted numerically, one supermatrix exponential per step.
The vectorised generator is rebuilt here from first principles so a bug
in the production assembly cannot hide in its own verification.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .linalg import expm
from .model import ControlGrid, NoiseDistribution, OpenSystemModel
from .objective import avg_gate_fidelity

__all__ = [
    "noisy_liouvillian",
    "propagate_noisy_exact",
    "noisy_channel_super",
    "fd_taylor_block",
    "fd_step_stability",
    "haar_mc_agf",
    "NoiseSweepResult",
    "noise_sweep",
]


def noisy_liouvillian(
    model: OpenSystemModel, amplitudes: np.ndarray, eps: np.ndarray
) -> np.ndarray:
    """d^2 x d^2 generator of the plain master equation at strengths eps.

    Column-stacking convention: rho A B -> vec as (B^T kron A) applied to
    vec(rho); assembled directly from the Hamiltonian and collapse terms.
    """
    d = model.dim
    eps = np.atleast_1d(np.asarray(eps, dtype=float))
    if eps.size != model.n_uncertainties:
        raise ValueError("need one strength per uncertainty operator")
    h = model.hamiltonian(amplitudes)
    for e_j, op in zip(eps, model.uncertainties):
        h = h + e_j * op
    ident = np.eye(d, dtype=complex)
    gen = -1.0j * (np.kron(ident, h) - np.kron(h.T, ident))
    for c, gamma in model.lindblads:
        cdc = c.conj().T @ c
        gen += gamma * (
            np.kron(np.conj(c), c)
            - 0.5 * np.kron(ident, cdc)
            - 0.5 * np.kron(cdc.T, ident)
        )
    return gen


def noisy_channel_super(
    model: OpenSystemModel, grid: ControlGrid, eps: np.ndarray
) -> np.ndarray:
    """Full-evolution channel matrix: ordered product of per-step
    supermatrix exponentials at fixed strengths eps."""
    d = model.dim
    s = np.eye(d * d, dtype=complex)
    for k in range(grid.n_steps):
        gen = noisy_liouvillian(model, grid.amplitudes[:, k], eps)
        s = expm(grid.dt * gen) @ s
    return s


def propagate_noisy_exact(
    model: OpenSystemModel, grid: ControlGrid, rho0: np.ndarray, eps: np.ndarray
) -> np.ndarray:
    """Terminal density matrix of the plain (non-augmented) master
    equation with uncertainty strengths eps."""
    d = model.dim
    v = np.asarray(rho0, dtype=complex).reshape(d * d, order="F")
    for k in range(grid.n_steps):
        gen = noisy_liouvillian(model, grid.amplitudes[:, k], eps)
        v = expm(grid.dt * gen) @ v
    return v.reshape(d, d, order="F")


def fd_taylor_block(
    model: OpenSystemModel,
    grid: ControlGrid,
    rho0: np.ndarray,
    p,
    h: float = 1e-4,
) -> np.ndarray:
    """Central-difference estimate of the Taylor coefficient block for
    multi-index ``p`` (total order <= 2) at eps = 0.

    First order: [rho(+h) - rho(-h)] / 2h.  Diagonal second order:
    [rho(+h) - 2 rho(0) + rho(-h)] / h^2 / 2!.  Mixed second order: the
    four-point cross stencil / 4h^2.  ``h`` is in rad/ns.
    """
    p = tuple(int(x) for x in p)
    m = model.n_uncertainties
    if len(p) != m:
        raise ValueError("multi-index length must match the uncertainty count")
    order = sum(p)

    def run(eps):
        return propagate_noisy_exact(model, grid, rho0, np.asarray(eps, dtype=float))

    zero = np.zeros(m)
    if order == 0:
        return run(zero)
    if order == 1:
        j = p.index(1)
        ep = zero.copy()
        ep[j] = h
        em = zero.copy()
        em[j] = -h
        return (run(ep) - run(em)) / (2.0 * h)
    if order == 2 and 2 in p:
        j = p.index(2)
        ep = zero.copy()
        ep[j] = h
        em = zero.copy()
        em[j] = -h
        return (run(ep) - 2.0 * run(zero) + run(em)) / (h * h) / 2.0
    if order == 2:
        i, j = [idx for idx, val in enumerate(p) if val == 1]
        out = np.zeros((model.dim, model.dim), dtype=complex)
        for si in (1.0, -1.0):
            for sj in (1.0, -1.0):
                eps = zero.copy()
                eps[i] = si * h
                eps[j] = sj * h
                out += si * sj * run(eps)
        return out / (4.0 * h * h)
    raise ValueError(f"finite-difference stencils cover total order <= 2, got {order}")


def fd_step_stability(
    model: OpenSystemModel,
    grid: ControlGrid,
    rho0: np.ndarray,
    p,
    h: float = 1e-4,
) -> float:
    """Relative change of the stencil estimate between steps h and h/2;
    small values certify the step choice."""
    a = fd_taylor_block(model, grid, rho0, p, h)
    b = fd_taylor_block(model, grid, rho0, p, 0.5 * h)
    ref = np.linalg.norm(b)
    if ref == 0.0:
        return float(np.linalg.norm(a - b))
    return float(np.linalg.norm(a - b) / ref)


def haar_mc_agf(
    channel_super: np.ndarray,
    u_target: np.ndarray,
    samples: int = 100000,
    seed: int = 0,
) -> tuple:
    """Monte-Carlo average gate fidelity over Haar-random pure states.

    States are drawn as normalised complex Gaussians.  Returns
    (mean, standard error).
    """
    d = u_target.shape[0]
    rng = np.random.default_rng(seed)
    psi = rng.standard_normal((samples, d)) + 1.0j * rng.standard_normal((samples, d))
    psi /= np.linalg.norm(psi, axis=1)[:, None]
    # vec(|psi><psi|) columns, column-stacking: entry (r + c*d) = psi_r conj(psi_c)
    outer = psi[:, :, None] * np.conj(psi[:, None, :])  # (samples, d, d) row r col c
    vecs = outer.swapaxes(1, 2).reshape(samples, d * d)
    mapped = vecs @ channel_super.T
    rho_out = mapped.reshape(samples, d, d).swapaxes(1, 2)
    # fidelity <psi_t| Lambda(|psi><psi|) |psi_t> with |psi_t> = U|psi>
    psi_t = psi @ u_target.T
    vals = np.real(np.einsum("si,sij,sj->s", np.conj(psi_t), rho_out, psi_t))
    mean = float(np.mean(vals))
    stderr = float(np.std(vals, ddof=1) / np.sqrt(samples))
    return mean, stderr


@dataclass
class NoiseSweepResult:
    """Sampled uncertainty strengths with the resulting gate fidelities."""

    eps: np.ndarray  # (count, m) rad/ns
    fidelities: np.ndarray  # (count,)

    @property
    def gate_errors(self) -> np.ndarray:
        return 1.0 - self.fidelities

    @property
    def mean_error(self) -> float:
        return float(np.mean(self.gate_errors))

    def cdf(self, thresholds) -> np.ndarray:
        """Fraction of samples with gate error <= each threshold."""
        thresholds = np.atleast_1d(np.asarray(thresholds, dtype=float))
        errors = self.gate_errors
        return np.array([float(np.mean(errors <= t)) for t in thresholds])


def noise_sweep(
    model: OpenSystemModel,
    grid: ControlGrid,
    u_target: np.ndarray,
    dist: NoiseDistribution,
    count: int,
    workers: int = 1,
) -> NoiseSweepResult:
    """Average-gate-fidelity statistics of a control under sampled
    uncertainty strengths; one exact channel construction per sample."""
    if dist.sigmas.size != model.n_uncertainties:
        raise ValueError("distribution dimension must match the uncertainty count")
    eps = dist.sample(count)

    def one(i):
        s = noisy_channel_super(model, grid, eps[i])
        return avg_gate_fidelity(s, u_target)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            fids = np.array(list(pool.map(one, range(count))))
    else:
        fids = np.array([one(i) for i in range(count)])
    return NoiseSweepResult(eps=eps, fidelities=fids)
