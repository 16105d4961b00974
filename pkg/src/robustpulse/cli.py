"""Command-line entry points: simulate, optimize, sweep, benchmark.

Reports are written as YAML with sorted keys and contain no wall-clock
data, so rerunning a command with the same config and seed reproduces
them byte for byte; timings go to a separate sidecar file.

Exit codes: 2 for configuration problems (the message names the field),
3 when an objective or gradient turns non-finite, 1 for oversized
problems.
"""

from __future__ import annotations

import csv
import functools
import statistics
import time
from pathlib import Path

import click
import numpy as np
import yaml

from . import __version__, kernels
from .augment import CapExceeded, MultiIndexSet, initial_state
from .config import (
    ConfigError,
    RunConfig,
    build_gate_objective,
    build_grid,
    build_model,
    build_mset,
    build_noise_distribution,
    build_state_objective,
    load_config,
    optimizer_config,
    resolved_dict,
)
from .gates import preset_unitary
from .model import ControlGrid, attach_uncertainties, build_spin_chain, mhz_to_radns, radns_to_mhz, random_grid
from .objective import avg_gate_fidelity, gate_objective, robust_J
from .optimize import run_gate_synthesis, run_grape, run_stgrape
from .oracle import noise_sweep, noisy_channel_super
from .propagate import BACKENDS, delta_st, make_trotter_plan, propagate_final

__all__ = ["main"]


def _plain(obj):
    """Recursively convert numpy scalars/arrays so YAML stays readable."""
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


def _write_yaml(path: Path, data: dict) -> None:
    path.write_text(yaml.safe_dump(_plain(data), sort_keys=True, default_flow_style=False))


def _write_pulse_csv(path: Path, grid: ControlGrid) -> None:
    """Control amplitudes in MHz, one row per step, first column t_ns."""
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t_ns"] + [f"u_{c + 1}" for c in range(grid.n_channels)])
        amps_mhz = radns_to_mhz(grid.amplitudes)
        for k in range(grid.n_steps):
            writer.writerow(
                [f"{k * grid.dt:.12g}"] + [f"{amps_mhz[c, k]:.12g}" for c in range(grid.n_channels)]
            )


def _read_pulse_csv(path: Path, template: ControlGrid) -> ControlGrid:
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:1] != ["t_ns"]:
        raise ConfigError("<pulse>", f"{path} is not a pulse file (missing t_ns header)")
    n_channels = len(rows[0]) - 1
    if n_channels != template.n_channels:
        raise ConfigError(
            "<pulse>",
            f"{path} has {n_channels} channels, model needs {template.n_channels}",
        )
    body = np.array([[float(v) for v in row] for row in rows[1:]], dtype=float)
    if body.shape[0] < 1:
        raise ConfigError("<pulse>", f"{path} has no pulse rows")
    t = body[:, 0]
    if body.shape[0] > 1:
        steps = np.diff(t)
        if np.max(np.abs(steps - steps[0])) > 1e-9:
            raise ConfigError("<pulse>", f"{path} has a non-uniform time grid")
        dt = float(steps[0])
    else:
        dt = template.dt
    amps = mhz_to_radns(body[:, 1:].T)
    return ControlGrid(dt, amps, template.lo, template.hi)


def _out_dir(cfg: RunConfig, out: str | None) -> Path:
    path = Path(out if out is not None else cfg.output.directory)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _guard(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ConfigError as exc:
            click.echo(f"config error - {exc}", err=True)
            raise SystemExit(2)
        except FloatingPointError as exc:
            click.echo(f"numerical failure - {exc}", err=True)
            raise SystemExit(3)
        except CapExceeded as exc:
            click.echo(f"problem too large - {exc}", err=True)
            raise SystemExit(1)

    return wrapper


_config_opt = click.option(
    "--config", "config_path", required=True, type=click.Path(exists=True, dir_okay=False),
    help="YAML run configuration.",
)
_out_opt = click.option("--out", default=None, help="Output directory (default from config).")
_seed_opt = click.option("--seed", default=None, type=int, help="Override the run seed.")
_workers_opt = click.option("--workers", default=1, type=int, show_default=True,
                            help="Thread count for independent samples/states.")


@click.group()
@click.version_option(__version__, prog_name="robustpulse")
def main():
    """Robust pulse design for open quantum systems."""


def _task_states(cfg: RunConfig, mset, model):
    """Initial physical states and per-state objectives for the run's task."""
    if cfg.task.kind == "gate":
        gobj = build_gate_objective(cfg, mset, model.dim)
        return gobj.state0s, gobj, None
    sobj = build_state_objective(cfg, mset, model.dim)
    return [sobj.rho0], None, sobj


@main.command()
@_config_opt
@_out_opt
@_seed_opt
@_guard
def simulate(config_path, out, seed):
    """Propagate the configured task under every backend and report the
    objective, the splitting deviation, and trace defects."""
    cfg = load_config(config_path)
    model = build_model(cfg)
    mset = build_mset(cfg, model)
    grid = build_grid(cfg, model, seed=seed)
    state0s, gobj, sobj = _task_states(cfg, mset, model)
    plan = make_trotter_plan(model, grid.dt)

    objective_by_backend: dict = {}
    trace_defect: dict = {}
    timings: dict = {}
    for backend in BACKENDS:
        t0 = time.perf_counter()
        try:
            finals = [
                propagate_final(backend, model, mset, grid, initial_state(mset, r), plan=plan)
                for r in state0s
            ]
        except CapExceeded:
            objective_by_backend[backend] = None
            trace_defect[backend] = None
            continue
        timings[backend] = time.perf_counter() - t0
        if gobj is not None:
            objective_by_backend[backend] = gate_objective(finals, gobj)
        else:
            objective_by_backend[backend] = robust_J(finals[0], sobj)
        trace_defect[backend] = max(
            abs(float(np.trace(f[-1]).real) - 1.0) for f in finals
        )

    try:
        dev = delta_st(model, mset, grid, initial_state(mset, state0s[0]), plan=plan)
    except CapExceeded:
        dev = None

    out_path = _out_dir(cfg, out)
    report = {
        "task": cfg.task.kind,
        "objective": objective_by_backend,
        "splitting_deviation": dev,
        "trace_defect": trace_defect,
        "n_blocks": mset.size,
        "config": resolved_dict(cfg),
        "seed": seed if seed is not None else cfg.control.seed,
    }
    _write_yaml(out_path / cfg.output.report, report)
    _write_yaml(out_path / cfg.output.timings, {"simulate_s": timings})
    click.echo(f"report written to {out_path / cfg.output.report}")


@main.command()
@_config_opt
@_out_opt
@_seed_opt
@_workers_opt
@click.option("--verbose", is_flag=True, help="Progress lines on stderr.")
@_guard
def optimize(config_path, out, seed, workers, verbose):
    """Optimise the configured control task and write the pulse + report."""
    cfg = load_config(config_path)
    model = build_model(cfg)
    mset = build_mset(cfg, model)
    grid0 = build_grid(cfg, model, seed=seed)
    ocfg = optimizer_config(cfg, workers=workers)
    ocfg.verbose = verbose

    t_start = time.perf_counter()
    if cfg.task.kind == "gate":
        gobj = build_gate_objective(cfg, mset, model.dim)
        report_opt = run_gate_synthesis(
            model, mset, grid0, gobj, ocfg,
            method=cfg.optimizer.method, backend=cfg.optimizer.backend,
        )
    else:
        sobj = build_state_objective(cfg, mset, model.dim)
        if cfg.optimizer.method == "stgrape":
            report_opt = run_stgrape(model, mset, grid0, sobj, ocfg)
        else:
            report_opt = run_grape(model, mset, grid0, sobj, ocfg, backend=cfg.optimizer.backend)
    total = time.perf_counter() - t_start

    best_grid = grid0.with_amplitudes(report_opt.best_control)
    out_path = _out_dir(cfg, out)
    _write_pulse_csv(out_path / cfg.output.pulse_csv, best_grid)

    report = {
        "task": cfg.task.kind,
        "method": report_opt.method,
        "backend": report_opt.backend,
        "best_J": report_opt.best_J,
        "stop_reason": report_opt.stop_reason,
        "n_iterations": len(report_opt.iterations) - 1,
        "grad_inf_norm": report_opt.grad_norm,
        "iterations": report_opt.iterations,
        "checkpoints": [{"iteration": i, "true_J": j} for i, j in report_opt.checkpoints],
        "config": resolved_dict(cfg),
        "seed": seed if seed is not None else cfg.control.seed,
    }
    if cfg.task.kind == "gate":
        u_target = preset_unitary(cfg.task.gate, model.dim)
        chan = noisy_channel_super(model, best_grid, np.zeros(len(model.uncertainties)))
        report["agf_nominal"] = avg_gate_fidelity(chan, u_target)
    _write_yaml(out_path / cfg.output.report, report)
    _write_yaml(
        out_path / cfg.output.timings,
        {"phases_s": report_opt.wall_time, "total_s": total},
    )
    click.echo(
        f"{report_opt.method}: J={report_opt.best_J:.6f} ({report_opt.stop_reason}); "
        f"pulse written to {out_path / cfg.output.pulse_csv}"
    )


@main.command()
@_config_opt
@_out_opt
@_seed_opt
@_workers_opt
@click.option("--pulse", "pulse_path", default=None, type=click.Path(exists=True, dir_okay=False),
              help="Pulse CSV to evaluate (default: the seeded initial control).")
@_guard
def sweep(config_path, out, seed, workers, pulse_path):
    """Sample uncertainty strengths and tabulate gate fidelities."""
    cfg = load_config(config_path)
    if cfg.task.kind != "gate":
        raise ConfigError("task.kind", "sweep needs a gate task")
    model = build_model(cfg)
    template = build_grid(cfg, model)
    grid = _read_pulse_csv(Path(pulse_path), template) if pulse_path else template
    u_target = preset_unitary(cfg.task.gate, model.dim)
    dist = build_noise_distribution(cfg, model, seed=seed)

    t0 = time.perf_counter()
    result = noise_sweep(model, grid, u_target, dist, cfg.robustness.sample_count, workers=workers)
    elapsed = time.perf_counter() - t0

    out_path = _out_dir(cfg, out)
    sweep_csv = out_path / "sweep.csv"
    m = result.eps.shape[1]
    with sweep_csv.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["sample"] + [f"eps_{j + 1}_mhz" for j in range(m)] + ["f_agf", "gate_error"]
        )
        eps_mhz = radns_to_mhz(result.eps)
        for i in range(result.eps.shape[0]):
            writer.writerow(
                [i]
                + [f"{eps_mhz[i, j]:.12g}" for j in range(m)]
                + [f"{result.fidelities[i]:.12g}", f"{result.gate_errors[i]:.12g}"]
            )

    thresholds = cfg.robustness.thresholds
    report = {
        "samples": int(result.eps.shape[0]),
        "distribution": cfg.robustness.distribution,
        "sigma_mhz": cfg.robustness.sigma_mhz,
        "mean_gate_error": result.mean_error,
        "max_gate_error": float(np.max(result.gate_errors)),
        "error_cdf": {
            f"{t:g}": v for t, v in zip(thresholds, result.cdf(thresholds))
        },
        "pulse": str(pulse_path) if pulse_path else "initial",
        "config": resolved_dict(cfg),
        "seed": seed if seed is not None else cfg.robustness.sweep_seed,
    }
    _write_yaml(out_path / cfg.output.report, report)
    _write_yaml(out_path / cfg.output.timings, {"sweep_s": elapsed})
    click.echo(
        f"swept {result.eps.shape[0]} samples: mean gate error {result.mean_error:.6g}; "
        f"table written to {sweep_csv}"
    )


def time_backend_step(model, mset, grid, backend, repeats: int = 5, plan=None) -> list:
    """Per-step wall times (seconds) of repeated full propagations."""
    state0 = initial_state(mset, np.eye(model.dim, dtype=complex) / model.dim)
    propagate_final(backend, model, mset, grid, state0, plan=plan)  # warm-up / JIT
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        propagate_final(backend, model, mset, grid, state0, plan=plan)
        times.append((time.perf_counter() - t0) / grid.n_steps)
    return times


@main.command()
@click.option("--config", "config_path", default=None, type=click.Path(exists=True, dir_okay=False),
              help="Optional YAML run configuration for chain parameters.")
@_out_opt
@click.option("--qubits", default="2,3", show_default=True, help="Comma-separated qubit counts.")
@click.option("--order", default=1, show_default=True, type=int, help="Taylor truncation order.")
@click.option("--steps", default=8, show_default=True, type=int, help="Grid steps per timing run.")
@click.option("--repeats", default=5, show_default=True, type=int, help="Timed repetitions.")
@_guard
def benchmark(config_path, out, qubits, order, steps, repeats):
    """Time each propagation backend per step, with the compiled kernels
    and with the plain-array fallback."""
    cfg = load_config(config_path) if config_path else RunConfig()
    try:
        qubit_list = [int(q) for q in qubits.split(",") if q.strip()]
    except ValueError:
        raise ConfigError("--qubits", f"expected comma-separated integers, got {qubits!r}")
    if not qubit_list or any(q < 1 for q in qubit_list):
        raise ConfigError("--qubits", "qubit counts must be positive integers")

    modes = ["numpy"] + (["numba"] if kernels.HAS_NUMBA else [])
    saved_mode = kernels.kernel_mode()
    rows = []
    try:
        for n_q in qubit_list:
            model = build_spin_chain(
                n_q, jxy_mhz=cfg.system.jxy_mhz, t1_us=cfg.system.t1_us, t2_us=cfg.system.t2_us
            )
            model = attach_uncertainties(model, "edges")
            mset = MultiIndexSet(len(model.uncertainties), order)
            bound = mhz_to_radns(cfg.control.max_mhz)
            grid = random_grid(len(model.controls), steps, cfg.control.dt_ns, -bound, bound, seed=11)
            d_aug = mset.size * model.dim**2
            for backend in BACKENDS:
                backend_modes = ["-"] if backend == "expm" else modes
                for mode in backend_modes:
                    if mode != "-":
                        kernels.set_kernel_mode(mode)
                    plan = make_trotter_plan(model, grid.dt) if backend == "trotter" else None
                    try:
                        times = time_backend_step(model, mset, grid, backend, repeats, plan=plan)
                    except CapExceeded:
                        continue
                    rows.append({
                        "backend": backend,
                        "kernels": mode,
                        "n_qubits": n_q,
                        "order": order,
                        "n_blocks": mset.size,
                        "d_aug": d_aug,
                        "median_ns": statistics.median(times) * 1e9,
                        "mean_ns": statistics.fmean(times) * 1e9,
                    })
                    click.echo(
                        f"n_q={n_q} {backend:7s} kernels={mode:5s} "
                        f"median {statistics.median(times) * 1e3:9.3f} ms/step",
                        err=True,
                    )
    finally:
        kernels.set_kernel_mode(saved_mode)

    out_path = _out_dir(cfg, out)
    bench_csv = out_path / "benchmark.csv"
    with bench_csv.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=[
            "backend", "kernels", "n_qubits", "order", "n_blocks", "d_aug",
            "median_ns", "mean_ns",
        ])
        writer.writeheader()
        for row in rows:
            writer.writerow({**row, "median_ns": f"{row['median_ns']:.0f}",
                             "mean_ns": f"{row['mean_ns']:.0f}"})
    click.echo(f"benchmark table written to {bench_csv}")


if __name__ == "__main__":
    main()
