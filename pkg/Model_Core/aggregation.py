# aggregation.py
# Aggregation operator E, disaggregation operator F, the approximated chain E A F,
# and lumpability / regularity diagnostics.

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from Model_Core.errors import DimensionMismatchError, DomainError
from Model_Core.state_space import Axis, FluorescenceGrid, ProbabilityVector, SparseGenerator, StateSpace


@dataclass(frozen=True)
class AggregationPlan:
    """
    group_sizes[g] consecutive levels form group g. per_level_block is the number of
    phases carried along unchanged (5 for the gene model, 1 for scalar chains).
    """

    group_sizes: tuple
    per_level_block: int = 5

    def __post_init__(self):
        sizes = tuple(int(m) for m in self.group_sizes)
        if not sizes:
            raise DomainError("AggregationPlan needs at least one group")
        if any(m < 1 for m in sizes):
            raise DomainError(f"group sizes must be >= 1, got {sizes}")
        if self.per_level_block < 1:
            raise DomainError("per_level_block must be >= 1")
        object.__setattr__(self, "group_sizes", sizes)

    @classmethod
    def identity(cls, n_levels, per_level_block=5):
        return cls((1,) * int(n_levels), per_level_block)

    @classmethod
    def uniform(cls, group_size, n_groups, per_level_block=5):
        return cls((int(group_size),) * int(n_groups), per_level_block)

    @property
    def n_groups(self):
        return len(self.group_sizes)

    @property
    def source_levels(self):
        return sum(self.group_sizes)

    @property
    def source_dimension(self):
        return self.source_levels * self.per_level_block

    @property
    def aggregated_dimension(self):
        return self.n_groups * self.per_level_block

    @property
    def group_starts(self):
        """Cumulative sizes 0, m1, m1+m2, ... (one per group)."""
        return np.concatenate(([0], np.cumsum(self.group_sizes)[:-1])).astype(float)

    def level_groups(self):
        """Group index of every source level."""
        return np.repeat(np.arange(self.n_groups), self.group_sizes)

    def aggregated_space(self, grid=None):
        if grid is not None:
            return StateSpace(self.n_groups, Axis.FLUORESCENCE_BIN, self.per_level_block, grid)
        return StateSpace(self.n_groups, Axis.PROTEIN_COUNT, self.per_level_block)


def aggregation_operator(plan):
    """E: sums the levels of each group, phase by phase."""
    b = plan.per_level_block
    groups = plan.level_groups()
    src = np.arange(plan.source_dimension)
    rows = groups[src // b] * b + src % b
    return sp.csr_matrix((np.ones(len(src)), (rows, src)), shape=(plan.aggregated_dimension, plan.source_dimension))


def disaggregation_operator(plan):
    """F: spreads each group's mass uniformly over its levels."""
    b = plan.per_level_block
    groups = plan.level_groups()
    sizes = np.asarray(plan.group_sizes, dtype=float)
    src = np.arange(plan.source_dimension)
    cols = groups[src // b] * b + src % b
    vals = 1.0 / sizes[groups[src // b]]
    return sp.csr_matrix((vals, (src, cols)), shape=(plan.source_dimension, plan.aggregated_dimension))


def _values(P):
    return P.values if isinstance(P, ProbabilityVector) else np.asarray(P, dtype=float)


def _check_source(n, plan, what):
    if n != plan.source_dimension:
        raise DimensionMismatchError(f"{what} has dimension {n}, plan expects {plan.source_dimension}")


def aggregate_vector(P, plan, grid=None):
    v = _values(P)
    _check_source(v.shape[0], plan, "vector")
    out = v.reshape(plan.source_levels, plan.per_level_block)
    out = np.add.reduceat(out, np.cumsum((0,) + plan.group_sizes[:-1]), axis=0).ravel()
    return ProbabilityVector(out, plan.aggregated_space(grid))


def disaggregate_vector(P_agg, plan):
    v = _values(P_agg)
    if v.shape[0] != plan.aggregated_dimension:
        raise DimensionMismatchError(f"vector has dimension {v.shape[0]}, plan expects {plan.aggregated_dimension}")
    return ProbabilityVector(disaggregation_operator(plan) @ v, StateSpace.counts(plan.source_levels, plan.per_level_block))


def aggregate_generator(A, plan, grid=None):
    """E A F, realized sparsely."""
    _check_source(A.dimension, plan, "generator")
    E = aggregation_operator(plan)
    F = disaggregation_operator(plan)
    product = E @ A.matrix @ F
    # zero column sums up to rounding; enforce them exactly on the diagonal
    product = sp.csc_matrix(product)
    off = product - sp.diags(product.diagonal())
    off = sp.csc_matrix(off)
    diag = -np.asarray(off.sum(axis=0)).ravel()
    matrix = off + sp.diags(diag)
    return SparseGenerator(matrix, space=plan.aggregated_space(grid), truncated_rate=A.truncated_rate, label="aggregated")


def plan_from_grid(grid, mu, per_level_block=5):
    """m_i = floor(D_i / mu), at least 1."""
    if not mu > 0:
        raise DomainError(f"mu must be > 0, got {mu}")
    if not isinstance(grid, FluorescenceGrid):
        grid = FluorescenceGrid.from_widths(grid)
    # small slack so exact multiples are not lost to rounding of D_i / mu
    sizes = [max(1, int(math.floor(w / mu + 1e-9))) for w in grid.widths]
    return AggregationPlan(tuple(sizes), per_level_block)


def lumpability_residual(A, plan):
    """max |E A - (E A F) E|; zero iff the chain is exactly lumpable for the plan."""
    _check_source(A.dimension, plan, "generator")
    E = aggregation_operator(plan)
    F = disaggregation_operator(plan)
    EA = E @ A.matrix
    diff = EA - (EA @ F) @ E
    diff = sp.csr_matrix(diff)
    return float(np.abs(diff.data).max()) if diff.nnz else 0.0


def is_state_partitioning(plan, source_dim):
    """Every source state falls into exactly one group and the groups tile 0..source_dim."""
    if not isinstance(plan, AggregationPlan):
        return False
    if plan.source_dimension != int(source_dim):
        return False
    E = aggregation_operator(plan)
    membership = np.asarray(E.sum(axis=0)).ravel()
    return bool(np.all(membership == 1.0))
