# error_bound.py
# Error decomposition of the grid aggregation, e(t) = mu*e1(t) + e2(t):
# analytic pieces of the e1 bound and an empirical harness against the full chain.
#
# The e2 bound depends on a comparison function g(eps, t) that is never given in
# closed form, so e2 is only measured, never bounded here.

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from Model_Core.aggregation import aggregate_generator, aggregate_vector
from Model_Core.errors import DimensionMismatchError, DomainError
from Model_Core.state_space import Axis, FluorescenceGrid, ProbabilityVector, StateSpace
from Solver_Engine.solver import SolveOptions, expected_aggregated, expected_count, expected_fluorescence, solve


@dataclass(frozen=True)
class ErrorBoundInputs:
    mu: float
    epsilon: float
    r: float
    delta_min: float
    delta_max: float
    gamma: float

    def __post_init__(self):
        if not self.mu > 0:
            raise DomainError(f"mu must be > 0, got {self.mu}")
        if self.epsilon < 0:
            raise DomainError(f"epsilon must be >= 0, got {self.epsilon}")
        if not self.r > 0:
            raise DomainError(f"r must be > 0, got {self.r}")
        if not 0 < self.delta_min <= self.delta_max:
            raise DomainError("need 0 < delta_min <= delta_max")
        if self.gamma < 0:
            raise DomainError(f"gamma must be >= 0, got {self.gamma}")

    @classmethod
    def from_grid(cls, grid, plan, mu, gamma):
        return cls(
            mu=mu,
            epsilon=epsilon_from_plan(grid, plan, mu),
            r=grid_growth_ratio(grid),
            delta_min=min(grid.widths),
            delta_max=max(grid.widths),
            gamma=gamma,
        )


@dataclass(frozen=True)
class ErrorPoint:
    t: float
    e1: float
    e2: float
    e: float
    e1_bound: float = float("nan")


def grid_growth_ratio(grid):
    """Smallest r with D_i <= r D_{i-1} for every i."""
    widths = np.asarray(grid.widths if isinstance(grid, FluorescenceGrid) else grid, dtype=float)
    if widths.size < 2:
        raise DomainError("grid_growth_ratio needs at least two bins")
    return float((widths[1:] / widths[:-1]).max())


def epsilon_from_plan(grid, plan, mu):
    """max_i |mu m_i - D_i|."""
    widths = np.asarray(grid.widths, dtype=float)
    sizes = np.asarray(plan.group_sizes, dtype=float)
    if widths.shape != sizes.shape:
        raise DimensionMismatchError(f"grid has {widths.size} bins, plan has {sizes.size} groups")
    return float(np.abs(mu * sizes - widths).max())


def r_hat(r, epsilon, delta_min):
    return 1.0 - delta_min / (r * delta_min + r * epsilon + epsilon)


def e1_bound(t, inputs, expected_Pa):
    """
    (D_max + eps)/mu * exp(gamma t) + r_hat (1 - exp(-gamma t)) gamma E[P_a(t)].
    expected_Pa is either a number or a callable of t.
    """
    if t < 0:
        raise DomainError(f"t must be >= 0, got {t}")
    mean_a = expected_Pa(t) if callable(expected_Pa) else float(expected_Pa)
    g = inputs.gamma
    rh = r_hat(inputs.r, inputs.epsilon, inputs.delta_min)
    return (inputs.delta_max + inputs.epsilon) / inputs.mu * math.exp(g * t) + rh * (1.0 - math.exp(-g * t)) * g * mean_a


def empirical_error(full, fgba, plan, mu, P0_full, checkpoints, opts=None, inputs=None, threads=1):
    """
    Solve the full chain, the plan-aggregated chain E A F and the grid chain, and
    return ErrorPoint(t, e1, e2, e, e1_bound) per checkpoint. e1 is in counts, e2 and e
    in a.u. The grid chain starts from E P0_full. e1_bound is filled when inputs is given.
    """
    if full.dimension != plan.source_dimension:
        raise DimensionMismatchError(f"full chain is {full.dimension}-dimensional, plan expects {plan.source_dimension}")
    if fgba.dimension != plan.aggregated_dimension:
        raise DimensionMismatchError(f"grid chain is {fgba.dimension}-dimensional, plan gives {plan.aggregated_dimension}")
    if fgba.space is None or fgba.space.axis is not Axis.FLUORESCENCE_BIN:
        raise DimensionMismatchError("the grid chain must live on a FluorescenceBin state space")

    base = opts or SolveOptions()
    opts = SolveOptions(method=base.method, t_end=max(checkpoints), dt=base.dt, tol=base.tol, checkpoint_times=tuple(checkpoints))
    if not isinstance(P0_full, ProbabilityVector):
        P0_full = ProbabilityVector(P0_full, StateSpace.counts(plan.source_levels, plan.per_level_block))

    aggregated = aggregate_generator(full, plan)
    Pa0 = aggregate_vector(P0_full, plan)
    Pf0 = ProbabilityVector(Pa0.values, fgba.space)

    jobs = [(full, P0_full), (aggregated, Pa0), (fgba, Pf0)]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=min(threads, 3)) as pool:
            runs = list(pool.map(lambda job: solve(job[0], job[1], opts), jobs))
    else:
        runs = [solve(M, P0, opts) for M, P0 in jobs]

    points = []
    for (t, P), (_, Pa), (_, Pf) in zip(*runs):
        mean_full = expected_count(P)
        mean_a = expected_aggregated(Pa, plan)
        mean_f = expected_fluorescence(Pf)
        e1 = mean_full - mean_a
        e2 = mu * mean_a - mean_f
        bound = e1_bound(t, inputs, mean_a) if inputs is not None else float("nan")
        points.append(ErrorPoint(t=t, e1=e1, e2=e2, e=mu * e1 + e2, e1_bound=bound))
    return points


def bound_violations(points):
    """Checkpoints where |e1| exceeds the printed e1 bound."""
    return [p for p in points if not math.isnan(p.e1_bound) and abs(p.e1) > p.e1_bound]
