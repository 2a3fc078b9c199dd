# solver.py
# Transient solution of dP/dt = M P for CTMC generators (uniformization, fixed-step RK4),
# plus expectations and distribution summaries over fluorescence grids.

import math
import warnings
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import scipy.sparse as sp
from scipy.stats import poisson

from Model_Core.errors import DimensionMismatchError, DomainError, FgbaWarning, GeneratorError, NumericalFailure
from Model_Core.state_space import Axis, ProbabilityVector, SparseGenerator

GENERATOR_REJECT_ATOL = 1e-9
MAX_SLICE_RATE = 25.0  # Lambda * h per uniformization slice, keeps exp(-Lambda h) representable


class Method(Enum):
    UNIFORMIZATION = "Uniformization"
    RK4 = "RK4"

    @classmethod
    def parse(cls, name):
        key = str(name).strip().lower()
        for m in cls:
            if m.value.lower() == key or m.name.lower() == key:
                return m
        raise DomainError(f"Unknown solver method '{name}' (use 'uniformization' or 'rk4')")


@dataclass(frozen=True)
class SolveOptions:
    method: Method = Method.UNIFORMIZATION
    t_end: float = 1.0
    dt: float = 1e-3
    tol: float = 1e-8
    checkpoint_times: tuple = field(default=())

    def __post_init__(self):
        if isinstance(self.method, str):
            object.__setattr__(self, "method", Method.parse(self.method))
        if not self.t_end >= 0:
            raise DomainError(f"t_end must be >= 0, got {self.t_end}")
        if not self.dt > 0:
            raise DomainError(f"dt must be > 0, got {self.dt}")
        if not 0 < self.tol < 1:
            raise DomainError(f"tol must lie in (0, 1), got {self.tol}")
        times = tuple(float(t) for t in self.checkpoint_times)
        if any(t < 0 for t in times):
            raise DomainError("checkpoint times must be >= 0")
        object.__setattr__(self, "checkpoint_times", times)

    def checkpoints(self):
        return sorted(set(self.checkpoint_times)) if self.checkpoint_times else [float(self.t_end)]


def _validate(M, P0):
    if M.dimension != P0.values.shape[0]:
        raise DimensionMismatchError(f"generator is {M.dimension}-dimensional, P0 has {P0.values.shape[0]} entries")
    sums = np.abs(M.column_sums())
    if sums.size and sums.max() > GENERATOR_REJECT_ATOL:
        raise GeneratorError(f"not a generator: max |column sum| = {sums.max():.3e}")
    if M.min_off_diagonal() < 0:
        raise GeneratorError("not a generator: negative off-diagonal entry")
    v = P0.values
    if v.min() < -1e-12 or abs(v.sum() - 1.0) > 1e-8:
        raise DomainError("P0 must be a probability vector")


def _uniformization_step(M, v, h, tol):
    if h <= 0:
        return v
    diag = M.matrix.diagonal()
    Lam = float(np.abs(diag).max()) if diag.size else 0.0
    if Lam == 0.0:
        return v
    S = sp.identity(M.dimension, format="csr") + sp.csr_matrix(M.matrix) / Lam
    n_slices = max(1, math.ceil(Lam * h / MAX_SLICE_RATE))
    lam = Lam * h / n_slices
    slice_tol = tol / n_slices
    k_max = int(poisson.isf(slice_tol, lam)) + 1
    weights = poisson.pmf(np.arange(k_max + 1), lam)
    for _ in range(n_slices):
        term = v
        acc = weights[0] * term
        for k in range(1, k_max + 1):
            term = S @ term
            acc = acc + weights[k] * term
        v = acc
    return v


def _rk4_step(M, v, h, dt):
    if h <= 0:
        return v
    A = sp.csr_matrix(M.matrix)
    n_steps = max(1, math.ceil(h / dt - 1e-12))
    step = h / n_steps
    for _ in range(n_steps):
        k1 = A @ v
        k2 = A @ (v + 0.5 * step * k1)
        k3 = A @ (v + 0.5 * step * k2)
        k4 = A @ (v + step * k3)
        v = v + (step / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return v


def _emit(v, space, method):
    """Checkpoint copy. RK4 output is clipped and renormalized here only, after warning."""
    if not np.all(np.isfinite(v)):
        raise NumericalFailure(f"{method.value} produced non-finite probabilities (reduce dt or check the rates)")
    if method is Method.RK4:
        if v.min() < -1e-12:
            warnings.warn(f"RK4 produced negative mass down to {v.min():.3e}", FgbaWarning)
        drift = abs(v.sum() - 1.0)
        if drift > 1e-10:
            warnings.warn(f"RK4 mass drift |1'P - 1| = {drift:.3e}", FgbaWarning)
        out = np.clip(v, 0.0, None)
        out = out / out.sum()
        return ProbabilityVector(out, space)
    return ProbabilityVector(v.copy(), space)


def advance(M, v, h, opts, tol=None):
    """
    Raw propagation of the array v over time h with the configured method.
    tol overrides opts.tol for this segment; callers chaining several segments
    pass their share of the overall budget.
    """
    if opts.method is Method.RK4:
        return _rk4_step(M, v, h, opts.dt)
    return _uniformization_step(M, v, h, opts.tol if tol is None else tol)


def solve(M, P0, opts):
    """P(t) at every checkpoint, as a list of (time, ProbabilityVector)."""
    _validate(M, P0)
    space = P0.space
    out = []
    v = P0.values.copy()
    t = 0.0
    checkpoints = opts.checkpoints()
    segment_tol = opts.tol / len(checkpoints)
    for target in checkpoints:
        v = advance(M, v, target - t, opts, segment_tol)
        t = target
        out.append((t, _emit(v, space, opts.method)))
    return out


def solve_discrete_replication(A_f, d_plus, P0, opts):
    """
    Division as a discrete event: integrate A_f for one generation, apply the
    stochastic map d_plus, repeat. A checkpoint falling on a division time sees the
    post-division state.
    """
    _validate(A_f, P0)
    D = sp.csr_matrix(d_plus.matrix if isinstance(d_plus, SparseGenerator) else d_plus)
    if D.shape != (A_f.dimension, A_f.dimension):
        raise DimensionMismatchError(f"division map has shape {D.shape}, generator is {A_f.dimension}-dimensional")
    space = P0.space
    checkpoints = opts.checkpoints()
    horizon = checkpoints[-1]
    divisions = [float(g) for g in range(1, int(math.floor(horizon)) + 1)]
    events = sorted(set(divisions) | set(checkpoints))
    segment_tol = opts.tol / len(events)

    v = P0.values.copy()
    t = 0.0
    out = []
    for e in events:
        v = advance(A_f, v, e - t, opts, segment_tol)
        t = e
        if e in divisions:
            v = D @ v
        if e in checkpoints:
            out.append((t, _emit(v, space, opts.method)))
    return out


def final(results):
    """Last ProbabilityVector of a solve() result."""
    return results[-1][1]


def _require_bins(P, grid):
    if P.space.axis is not Axis.FLUORESCENCE_BIN:
        raise DomainError("axis mismatch: expected a FluorescenceBin state space")
    grid = grid if grid is not None else P.space.grid
    if grid.n_bins != P.space.n_levels:
        raise DimensionMismatchError(f"grid has {grid.n_bins} bins, distribution has {P.space.n_levels}")
    return grid


def expected_fluorescence(P, grid=None):
    """Mean intensity with lower bin edges as representatives."""
    grid = _require_bins(P, grid)
    return float(P.by_level() @ grid.lower_edges)


def variance_fluorescence(P, grid=None):
    grid = _require_bins(P, grid)
    p = P.by_level()
    x = grid.lower_edges
    mean = p @ x
    return float(max(0.0, p @ (x - mean) ** 2))


def expected_count(P):
    """Mean protein count over a count-indexed chain (weights 0, 1, 2, ...)."""
    if P.space.axis is not Axis.PROTEIN_COUNT:
        raise DomainError("axis mismatch: expected a ProteinCount state space")
    return float(P.by_level() @ np.arange(P.space.n_levels, dtype=float))


def expected_aggregated(P_a, plan):
    """Mean over an aggregated chain with weights 0, m1, m1+m2, ..."""
    if P_a.space.n_levels != plan.n_groups:
        raise DimensionMismatchError(f"distribution has {P_a.space.n_levels} levels, plan has {plan.n_groups} groups")
    return float(P_a.by_level() @ plan.group_starts)


def mass_at_or_above(P, threshold, grid=None):
    grid = _require_bins(P, grid)
    mask = grid.lower_edges >= threshold * (1.0 - 1e-12)
    return float(P.by_level()[mask].sum())


def mass_below(P, threshold, grid=None):
    grid = _require_bins(P, grid)
    mask = grid.upper_edges <= threshold * (1.0 + 1e-12)
    return float(P.by_level()[mask].sum())


def boundary_mass(P):
    """Probability in the top level; large values mean the truncation is too tight."""
    return float(P.by_level()[-1])


def total_variation(p, q):
    a = p.values if isinstance(p, ProbabilityVector) else np.asarray(p, dtype=float)
    b = q.values if isinstance(q, ProbabilityVector) else np.asarray(q, dtype=float)
    if a.shape != b.shape:
        raise DimensionMismatchError(f"shapes {a.shape} and {b.shape} differ")
    return 0.5 * float(np.abs(a - b).sum())
