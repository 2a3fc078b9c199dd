# Backend/experiment_func.py
"""
Command implementations behind app.py: the six-mutant run, the replication-mode
comparison, the SSA oracle, the error-decomposition harness, the generator dump and
the resolved-rates report.

Every command takes an ExperimentConfig, writes its artifacts under config.output_dir
through Data_Storage_Vault, and returns a small summary dict. Failures are recorded
with set_last_error() (in memory and as _last_error.json in the output directory) and
re-raised for app.py to map onto an exit code.
"""

import json
import threading
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from Data_Storage_Vault.vault_io import fmt
from Data_Storage_Vault.write_generator import write_generator
from Data_Storage_Vault.write_histogram import write_histogram
from Data_Storage_Vault.write_manifest import write_json
from Data_Storage_Vault.write_trace import write_trace
from Backend.manifest import build_manifest
from Model_Core.aggregation import AggregationPlan
from Model_Core.cme_builder import (
    Partition,
    build_binomial_fluorescence_map,
    build_experiment_generator,
    build_fgba_generator,
    build_full_generator,
    replication_map,
)
from Model_Core.phase_model import Phase, beta_f_by_phase, phase_generator, phase_steady_state, replication_phase_map
from Model_Core.state_space import FluorescenceGrid, ProbabilityVector, StateSpace
from Solver_Engine.error_bound import ErrorBoundInputs, bound_violations, empirical_error
from Solver_Engine.solver import (
    SolveOptions,
    boundary_mass,
    expected_fluorescence,
    mass_at_or_above,
    mass_below,
    solve,
    solve_discrete_replication,
    variance_fluorescence,
)
from Solver_Engine.ssa_oracle import CellState, ensemble_histogram

HIGH_THRESHOLD_AU = 10 ** 2.5
LOW_THRESHOLD_AU = 10 ** 1.5
BOUNDARY_WARN = 1e-6

ERROR_SIGNAL_NAME = "_last_error.json"

# In-memory error reporting (callers and tests read it via get_last_error())
_last_error = None
_error_lock = threading.Lock()
_signal_path = None


def set_last_error(message: str, kind: str = "error", out_dir=None):
    """Record the latest command failure (thread-safe) and mirror it to disk."""
    global _last_error, _signal_path
    with _error_lock:
        _last_error = {"message": str(message), "kind": kind}
        if out_dir is not None:
            _signal_path = Path(out_dir) / ERROR_SIGNAL_NAME
        path = _signal_path
    if path is None:
        return
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8") as f:
            json.dump(_last_error, f, sort_keys=True)
    except Exception:
        # never mask the real failure because the signal file could not be written
        print("[Runner] warning: failed to write error signal file", flush=True)


def get_last_error():
    """Return last error dict or None. Caller should not modify returned dict."""
    with _error_lock:
        return None if _last_error is None else dict(_last_error)


def clear_last_error(out_dir=None):
    """Clear the last error (thread-safe) and remove a stale signal file."""
    global _last_error, _signal_path
    with _error_lock:
        _last_error = None
        if out_dir is not None:
            _signal_path = Path(out_dir) / ERROR_SIGNAL_NAME
        path = _signal_path
    try:
        if path is not None and path.exists():
            path.unlink()
    except Exception:
        print("[Runner] warning: failed to remove error signal file", flush=True)


# ---- shared helpers ---------------------------------------------------------


def _out(config, name):
    return Path(config.output_dir) / name


def _horizon_options(config, t_end=None):
    """Solver options that stop at t_end plus any configured checkpoints before it."""
    t_end = config.t_end if t_end is None else t_end
    extra = [t for t in config.solver.checkpoint_times if t < t_end]
    return SolveOptions(
        method=config.solver.method,
        t_end=t_end,
        dt=config.solver.dt,
        tol=config.solver.tol,
        checkpoint_times=tuple(extra) + (t_end,),
    )


def _initial_vector(config, space):
    return ProbabilityVector.point_mass(space, level=config.initial_bin, phase=config.initial_phase.value)


def _division_map(config, space, mode):
    if mode == "discrete_binomial":
        return build_binomial_fluorescence_map(space.grid, config.compare_mu, config.representative)
    return replication_map(space, Partition.HALVING, config.representative)


def _run_mode(config, rates, mode, opts):
    """Solve one RateSet under a replication mode; returns (checkpoint results, truncated rate)."""
    grid = config.grid
    if mode == "continuous":
        M = build_experiment_generator(rates, grid, True, config.representative)
        P0 = _initial_vector(config, M.space)
        return solve(M, P0, opts), M.truncated_rate
    A_f = build_experiment_generator(rates, grid, False, config.representative)
    P0 = _initial_vector(config, A_f.space)
    return solve_discrete_replication(A_f, _division_map(config, A_f.space, mode), P0, opts), A_f.truncated_rate


def _map_in_order(fn, items, threads):
    items = list(items)
    workers = max(1, min(int(threads), len(items)))
    if workers == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _summary(P):
    return {
        "mean_au": float(fmt(expected_fluorescence(P))),
        "variance_au2": float(fmt(variance_fluorescence(P))),
        "mass_at_or_above_10^2.5": float(fmt(mass_at_or_above(P, HIGH_THRESHOLD_AU))),
        "mass_below_10^1.5": float(fmt(mass_below(P, LOW_THRESHOLD_AU))),
        "boundary_mass": float(fmt(boundary_mass(P))),
    }


def _guarded(name, config, fn):
    clear_last_error(config.output_dir)
    try:
        return fn()
    except Exception as e:
        set_last_error(f"{name}: {e}", kind=type(e).__name__, out_dir=config.output_dir)
        raise


# ---- commands ---------------------------------------------------------------


def _mutants(config):
    opts = _horizon_options(config)
    print(
        f"[Mutants] {len(config.ratio_R_list)} ratios, t_end={config.t_end:.4g} gen, "
        f"{config.grid.n_bins} bins, replication={config.replication}",
        flush=True,
    )

    def run_one(ratio):
        rates = config.rates.with_ratio_R(ratio)
        results, truncated = _run_mode(config, rates, config.replication, opts)
        return ratio, results, truncated

    files = []
    per_ratio = {}
    for ratio, results, truncated in _map_in_order(run_one, config.ratio_R_list, config.threads):
        tag = fmt(ratio)
        for t, P in results[:-1]:
            files.append(write_histogram(P, _out(config, f"mutant_ratio_{tag}_t_{fmt(t)}.csv")).name)
        P = results[-1][1]
        files.append(write_histogram(P, _out(config, f"mutant_ratio_{tag}.csv")).name)
        summary = _summary(P)
        summary["truncated_rate"] = float(fmt(truncated))
        per_ratio[tag] = summary
        print(
            f"[Mutants] ratio {tag}: P(>=10^2.5)={summary['mass_at_or_above_10^2.5']:.4g} "
            f"P(<10^1.5)={summary['mass_below_10^1.5']:.4g} top-bin mass={summary['boundary_mass']:.3g}",
            flush=True,
        )
        if summary["boundary_mass"] > BOUNDARY_WARN:
            print(f"[Mutants] warning: ratio {tag} holds {summary['boundary_mass']:.3g} in the top bin; widen the grid", flush=True)

    manifest = build_manifest("mutants", config, {"files": files, "per_ratio": per_ratio})
    write_json(manifest, _out(config, "manifest.json"))
    return {"files": files, "per_ratio": per_ratio}


def cmd_mutants(config):
    """One histogram CSV per mutant ratio plus manifest.json."""
    return _guarded("mutants", config, lambda: _mutants(config))


COMPARE_MODES = ("continuous", "discrete_halving", "discrete_binomial")


def _replication_compare(config):
    rates = config.rates.with_ratio_R(config.compare_ratio_R)
    opts = _horizon_options(config)
    print(f"[Compare] ratio {fmt(config.compare_ratio_R)}, three replication modes", flush=True)

    def run_one(mode):
        results, _ = _run_mode(config, rates, mode, opts)
        return mode, results[-1][1]

    report = {"ratio_R": float(fmt(config.compare_ratio_R)), "mu": float(fmt(config.compare_mu)), "modes": {}}
    for mode, P in _map_in_order(run_one, COMPARE_MODES, config.threads):
        name = f"replication_{mode}.csv"
        write_histogram(P, _out(config, name))
        entry = _summary(P)
        entry["file"] = name
        report["modes"][mode] = entry
        print(f"[Compare] {mode}: mean={entry['mean_au']:.4g} variance={entry['variance_au2']:.4g}", flush=True)

    v = {m: report["modes"][m]["variance_au2"] for m in COMPARE_MODES}
    report["continuous_exceeds_halving"] = bool(v["continuous"] > v["discrete_halving"])
    report["binomial_at_least_halving"] = bool(v["discrete_binomial"] >= v["discrete_halving"])
    if not report["continuous_exceeds_halving"]:
        print("[Compare] finding: continuous replication did not widen the distribution over discrete halving", flush=True)
    write_json(report, _out(config, "replication_compare.json"))
    return report


def cmd_replication_compare(config):
    """Variance of the ratio-R mutant under continuous, halving and binomial replication."""
    return _guarded("replication-compare", config, lambda: _replication_compare(config))


def _ssa(config):
    s = config.ssa
    rates = config.rates.with_ratio_R(s.ratio_R)
    grid = config.grid
    beta_counts = beta_f_by_phase(rates) / s.mu
    start_protein = int(round(grid.lower_edges[config.initial_bin] / s.mu))
    start = CellState(config.initial_phase, start_protein, 0.0)
    print(
        f"[SSA] {s.n_traj} trajectories, mode={s.mode.value}, t_end={s.t_end:.4g} gen, seed={config.seed}",
        flush=True,
    )
    P = ensemble_histogram(s.n_traj, rates, beta_counts, s.mode, s.t_end, grid, s.mu, config.seed, start, config.threads)
    write_histogram(P, _out(config, "ssa_histogram.csv"))
    results = {"file": "ssa_histogram.csv", "n_traj": s.n_traj, "mode": s.mode.value, "mu": float(fmt(s.mu))}
    results.update(_summary(P))
    write_json(build_manifest("ssa", config, results, rates=rates), _out(config, "manifest.json"))
    return results


def cmd_ssa(config):
    """Exact-simulation histogram on the configured grid."""
    return _guarded("ssa", config, lambda: _ssa(config))


def error_bound_instance(settings):
    """
    The single-phase birth-death instance: full chain over counts 0..n_states-1, groups
    of group_size, and the matching uniform grid chain with width mu*group_size.
    """
    K = np.zeros((1, 1))
    n_groups = settings.n_states // settings.group_size
    full = build_full_generator(K, [settings.beta], settings.gamma, settings.n_states - 1)
    plan = AggregationPlan.uniform(settings.group_size, n_groups, per_level_block=1)
    grid = FluorescenceGrid.uniform(settings.mu * settings.group_size, n_groups)
    fgba = build_fgba_generator(K, [settings.mu * settings.beta], grid, settings.gamma)
    return full, fgba, plan, grid


def _error_bound(config):
    eb = config.error_bound
    full, fgba, plan, grid = error_bound_instance(eb)
    P0 = ProbabilityVector.point_mass(StateSpace.counts(plan.source_levels, 1))
    inputs = ErrorBoundInputs.from_grid(grid, plan, eb.mu, eb.gamma) if grid.n_bins > 1 else None
    opts = SolveOptions(method=config.solver.method, dt=config.solver.dt, tol=config.solver.tol)
    print(f"[ErrorBound] {eb.n_states} states in {plan.n_groups} groups, checkpoints {list(eb.checkpoints)}", flush=True)
    points = empirical_error(full, fgba, plan, eb.mu, P0, eb.checkpoints, opts, inputs, config.threads)
    write_trace(points, _out(config, "error_trace.csv"))
    violations = bound_violations(points)
    for p in violations:
        print(f"[ErrorBound] finding: |e1|={abs(p.e1):.4g} exceeds bound {p.e1_bound:.4g} at t={p.t:.4g}", flush=True)
    results = {
        "file": "error_trace.csv",
        "violations": [float(fmt(p.t)) for p in violations],
        "max_abs_e": float(fmt(max(abs(p.e) for p in points))),
    }
    write_json(build_manifest("error-bound", config, results), _out(config, "manifest.json"))
    return results


def cmd_error_bound(config):
    """Error trace t, e1, e2, e, e1_bound on the single-phase instance."""
    return _guarded("error-bound", config, lambda: _error_bound(config))


def _build(config, ratio=None, dump=None):
    rates = config.rates if ratio is None else config.rates.with_ratio_R(ratio)
    continuous = config.replication == "continuous"
    M = build_experiment_generator(rates, config.grid, continuous, config.representative)
    path = Path(dump) if dump is not None else _out(config, "generator.txt")
    write_generator(M, path)
    print(
        f"[Build] {M.label} generator: dim={M.dimension} nnz={M.nnz} "
        f"cancelled top-level flux={M.truncated_rate:.4g}",
        flush=True,
    )
    return {"file": path.name, "dimension": M.dimension, "nnz": M.nnz, "truncated_rate": M.truncated_rate}


def cmd_build(config, ratio=None, dump=None):
    """Triplet dump of the experiment generator (A_f + D_f, or A_f alone for discrete replication)."""
    return _guarded("build", config, lambda: _build(config, ratio, dump))


def _rates(config):
    per_ratio = {}
    for ratio in config.ratio_R_list:
        rates = config.rates.with_ratio_R(ratio)
        K = phase_generator(rates)
        stationary = phase_steady_state(K, replication_phase_map(), rates.replication_rate)
        per_ratio[fmt(ratio)] = {
            "rates": {k: float(fmt(v)) for k, v in rates.as_dict().items()},
            "K": [[float(fmt(x)) for x in row] for row in K],
            "stationary_phases": {p.name: float(fmt(x)) for p, x in zip(Phase, stationary)},
        }
    report = {
        "beta_f_by_phase": {p.name: float(fmt(b)) for p, b in zip(Phase, beta_f_by_phase(config.rates))},
        "per_ratio": per_ratio,
    }
    write_json(report, _out(config, "rates.json"))
    return report


def cmd_rates(config):
    """Resolved rate sets, K matrices and stationary phase distributions per mutant."""
    return _guarded("rates", config, lambda: _rates(config))
