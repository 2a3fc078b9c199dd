# Backend/config_loader.py
"""
YAML experiment configuration.

The user file is merged over Data_Storage_Vault/default_experiment.yaml, validated,
and resolved into an ExperimentConfig. Problems raise ConfigError with the dotted
field path and, when the key can be found in the user's file, its line.
"""

import copy
import re
from dataclasses import dataclass, replace
from pathlib import Path

import yaml

from Model_Core.cme_builder import default_experiment_grid
from Model_Core.errors import ConfigError, FgbaError
from Model_Core.phase_model import Phase, RateSet, derive_rate_set, gamma_from_half_life
from Solver_Engine.solver import Method, SolveOptions
from Solver_Engine.ssa_oracle import ReplicationMode

MODULE_ROOT = Path(__file__).resolve().parents[1]
DEFAULT_CONFIG_PATH = MODULE_ROOT / "Data_Storage_Vault" / "default_experiment.yaml"

REPLICATION_CHOICES = ("continuous", "discrete_halving", "discrete_binomial")
_TIME_RE = re.compile(r"^\s*([0-9]*\.?[0-9]+(?:[eE][-+]?[0-9]+)?)\s*(h|gen)?\s*$")


@dataclass(frozen=True)
class SsaSettings:
    ratio_R: float
    mode: ReplicationMode
    n_traj: int
    mu: float
    t_end: float


@dataclass(frozen=True)
class ErrorBoundSettings:
    beta: float
    gamma: float
    n_states: int
    group_size: int
    mu: float
    checkpoints: tuple


@dataclass(frozen=True)
class ExperimentConfig:
    rates: RateSet
    ratio_R_list: tuple
    grid_decades: float
    bins_per_decade: int
    representative: str
    t_end: float
    replication: str
    initial_phase: Phase
    initial_bin: int
    solver: SolveOptions
    output_dir: Path
    seed: int
    threads: int
    compare_ratio_R: float
    compare_mu: float
    ssa: SsaSettings
    error_bound: ErrorBoundSettings
    resolved: dict

    @property
    def grid(self):
        return default_experiment_grid(self.grid_decades, self.bins_per_decade)


def _key_lines(text):
    """dotted key path -> 1-based line number, from the YAML node tree."""
    lines = {}
    try:
        root = yaml.compose(text)
    except yaml.YAMLError:
        return lines

    def walk(node, prefix):
        if isinstance(node, yaml.MappingNode):
            for key_node, value_node in node.value:
                path = f"{prefix}.{key_node.value}" if prefix else str(key_node.value)
                lines[path] = key_node.start_mark.line + 1
                walk(value_node, path)

    if root is not None:
        walk(root, "")
    return lines


def _load_yaml(text, source):
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        line = mark.line + 1 if mark is not None else None
        problem = getattr(e, "problem", None) or str(e)
        raise ConfigError(f"cannot parse {source}: {problem}", line=line)
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{source} must contain a mapping at the top level", line=1)
    return data


def _merge(base, override, lines, prefix=""):
    out = copy.deepcopy(base)
    for key, value in override.items():
        path = f"{prefix}.{key}" if prefix else str(key)
        if key not in base:
            raise ConfigError("unknown key", field=path, line=lines.get(path))
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError("expected a section (mapping)", field=path, line=lines.get(path))
            out[key] = _merge(base[key], value, lines, path)
        else:
            out[key] = value
    return out


def parse_time(value, generation_length_min=85.0):
    """Generations from a number or a string with an 'h' or 'gen' suffix."""
    if isinstance(value, bool):
        raise ValueError("time must be a number or a string like '20h'")
    if isinstance(value, (int, float)):
        return float(value)
    m = _TIME_RE.match(str(value))
    if not m:
        raise ValueError(f"cannot read time '{value}' (use e.g. 20h or 14.12gen)")
    amount = float(m.group(1))
    if m.group(2) == "h":
        return amount * 60.0 / generation_length_min
    return amount


class _Reader:
    """Typed field access that reports the offending field and line."""

    def __init__(self, data, lines):
        self.data = data
        self.lines = lines

    def raw(self, path):
        node = self.data
        for part in path.split("."):
            node = node[part]
        return node

    def fail(self, path, message):
        raise ConfigError(message, field=path, line=self.lines.get(path))

    def number(self, path, positive=False, nonneg=False, allow_none=False):
        v = self.raw(path)
        if v is None and allow_none:
            return None
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            self.fail(path, f"expected a number, got {v!r}")
        v = float(v)
        if positive and not v > 0:
            self.fail(path, f"must be > 0, got {v}")
        if nonneg and v < 0:
            self.fail(path, f"must be >= 0, got {v}")
        return v

    def integer(self, path, minimum=None):
        v = self.raw(path)
        if isinstance(v, bool) or not isinstance(v, int):
            self.fail(path, f"expected an integer, got {v!r}")
        if minimum is not None and v < minimum:
            self.fail(path, f"must be >= {minimum}, got {v}")
        return int(v)

    def time(self, path, generation_length_min, allow_none=False):
        v = self.raw(path)
        if v is None and allow_none:
            return None
        try:
            t = parse_time(v, generation_length_min)
        except ValueError as e:
            self.fail(path, str(e))
        if not t > 0:
            self.fail(path, f"must be > 0, got {v!r}")
        return t

    def choice(self, path, choices):
        v = str(self.raw(path)).strip().lower()
        if v not in choices:
            self.fail(path, f"expected one of {list(choices)}, got {v!r}")
        return v

    def number_list(self, path, positive=False, nonempty=True):
        v = self.raw(path)
        if not isinstance(v, list) or (nonempty and not v):
            self.fail(path, "expected a non-empty list of numbers" if nonempty else "expected a list of numbers")
        out = []
        for i, x in enumerate(v):
            if isinstance(x, bool) or not isinstance(x, (int, float)):
                self.fail(path, f"entry {i} is not a number: {x!r}")
            if positive and not x > 0:
                self.fail(path, f"entry {i} must be > 0, got {x}")
            out.append(float(x))
        return tuple(out)


def _resolve_rates(r):
    gen_min = r.number("rates.generation_length_min", positive=True)
    switch = [
        r.number(f"rates.{key}", positive=True)
        for key in ("k_M", "k_H", "ratio_O", "ratio_R", "k_O_multiplier")
    ]
    try:
        base = derive_rate_set(*switch)
    except FgbaError as e:
        raise ConfigError(str(e), field="rates")
    gamma = r.number("rates.gamma", nonneg=True, allow_none=True)
    if gamma is None:
        gamma = gamma_from_half_life(r.number("rates.half_life_h", positive=True), gen_min)
    rates = replace(
        base,
        gamma=gamma,
        beta_f_on=r.number("rates.beta_f_on", nonneg=True),
        beta_f_partial=r.number("rates.beta_f_partial", nonneg=True),
        beta_f_off=r.number("rates.beta_f_off", nonneg=True),
        replication_rate=r.number("rates.replication_rate", nonneg=True),
    )
    return rates, gen_min


def load_config(path=None, output_dir=None, seed=None, threads=None):
    """Load, merge and validate. Command-line values, when given, win over the file."""
    defaults = _load_yaml(DEFAULT_CONFIG_PATH.read_text(encoding="utf-8"), DEFAULT_CONFIG_PATH.name)
    lines = {}
    user = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        text = p.read_text(encoding="utf-8")
        user = _load_yaml(text, p.name)
        lines = _key_lines(text)
    data = _merge(defaults, user, lines)
    if output_dir is not None:
        data["output_dir"] = str(output_dir)
    if seed is not None:
        data["seed"] = int(seed)
    if threads is not None:
        data["threads"] = int(threads)

    r = _Reader(data, lines)
    rates, gen_min = _resolve_rates(r)
    t_end = r.time("t_end", gen_min)

    phase_name = r.raw("initial.phase")
    try:
        initial_phase = Phase.parse(phase_name)
    except FgbaError as e:
        r.fail("initial.phase", str(e))
    decades = r.number("grid.decades", positive=True)
    bins_per_decade = r.integer("grid.bins_per_decade", minimum=1)
    n_bins = int(round(decades * bins_per_decade)) + 1
    initial_bin = r.integer("initial.bin", minimum=0)
    if initial_bin >= n_bins:
        r.fail("initial.bin", f"grid has {n_bins} bins, got bin {initial_bin}")

    checkpoints = r.number_list("solver.checkpoint_times", nonempty=False)
    if any(c < 0 for c in checkpoints):
        r.fail("solver.checkpoint_times", "checkpoint times must be >= 0")
    try:
        solver = SolveOptions(
            method=Method.parse(r.raw("solver.method")),
            t_end=t_end,
            dt=r.number("solver.dt", positive=True),
            tol=r.number("solver.tol", positive=True),
            checkpoint_times=checkpoints or (t_end,),
        )
    except FgbaError as e:
        raise ConfigError(str(e), field="solver", line=lines.get("solver"))

    try:
        ssa_mode = ReplicationMode.parse(r.raw("ssa.mode"))
    except FgbaError as e:
        r.fail("ssa.mode", str(e))
    ssa_t = r.time("ssa.t_end", gen_min, allow_none=True)
    ssa = SsaSettings(
        ratio_R=r.number("ssa.ratio_R", positive=True),
        mode=ssa_mode,
        n_traj=r.integer("ssa.n_traj", minimum=1),
        mu=r.number("ssa.mu", positive=True),
        t_end=ssa_t if ssa_t is not None else t_end,
    )
    error_bound = ErrorBoundSettings(
        beta=r.number("error_bound.beta", nonneg=True),
        gamma=r.number("error_bound.gamma", nonneg=True),
        n_states=r.integer("error_bound.n_states", minimum=2),
        group_size=r.integer("error_bound.group_size", minimum=1),
        mu=r.number("error_bound.mu", positive=True),
        checkpoints=r.number_list("error_bound.checkpoints"),
    )
    if error_bound.n_states % error_bound.group_size:
        r.fail("error_bound.group_size", "must divide error_bound.n_states")

    threads_value = r.integer("threads", minimum=1)
    seed_value = r.integer("seed", minimum=0)

    return ExperimentConfig(
        rates=rates,
        ratio_R_list=r.number_list("ratio_R_list", positive=True),
        grid_decades=decades,
        bins_per_decade=bins_per_decade,
        representative=r.choice("grid.representative", ("lower", "midpoint")),
        t_end=t_end,
        replication=r.choice("replication", REPLICATION_CHOICES),
        initial_phase=initial_phase,
        initial_bin=initial_bin,
        solver=solver,
        output_dir=Path(str(r.raw("output_dir"))),
        seed=seed_value,
        threads=threads_value,
        compare_ratio_R=r.number("replication_compare.ratio_R", positive=True),
        compare_mu=r.number("replication_compare.mu", positive=True),
        ssa=ssa,
        error_bound=error_bound,
        resolved=data,
    )
