# Backend/manifest.py
"""
Provenance manifest for a command run.

Collects every resolved parameter (rates, grid, solver settings, seed) into a plain
dict that Data_Storage_Vault.write_manifest serializes with sorted keys. The output
directory and wall-clock time are left out, so identical runs produce
identical manifests wherever they are written.
"""

from typing import Any, Dict, Optional

from Data_Storage_Vault.vault_io import fmt

MANIFEST_VERSION = 1


def _number(x):
    return float(fmt(x))


def _solver_section(opts) -> Dict[str, Any]:
    return {
        "method": opts.method.value,
        "t_end_generations": _number(opts.t_end),
        "dt": _number(opts.dt),
        "tol": _number(opts.tol),
        "checkpoints": [_number(t) for t in opts.checkpoints()],
    }


def _grid_section(config) -> Dict[str, Any]:
    grid = config.grid
    return {
        "decades": _number(config.grid_decades),
        "bins_per_decade": config.bins_per_decade,
        "n_bins": grid.n_bins,
        "representative": config.representative,
        "edges_au": [_number(e) for e in grid.edges],
    }


def build_manifest(command: str, config, results: Optional[Dict[str, Any]] = None, rates=None) -> Dict[str, Any]:
    """
    Build the manifest dict for `command`.

    - rates: RateSet actually used when it differs from config.rates (e.g. an SSA ratio).
    - results: command-specific summary values (file names, variances, diagnostics).
    """
    used = rates if rates is not None else config.rates
    manifest = {
        "manifest_version": MANIFEST_VERSION,
        "command": command,
        "seed": config.seed,
        "threads": config.threads,
        "rates": {k: _number(v) for k, v in used.as_dict().items()},
        "ratio_R_list": [_number(r) for r in config.ratio_R_list],
        "t_end_generations": _number(config.t_end),
        "replication": config.replication,
        "initial": {"phase": config.initial_phase.name, "bin": config.initial_bin},
        "grid": _grid_section(config),
        "solver": _solver_section(config.solver),
    }
    if results:
        manifest["results"] = results
    return manifest
