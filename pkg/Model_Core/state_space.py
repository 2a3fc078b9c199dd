# state_space.py
# Value types shared by the builders, the solver and the writers:
# fluorescence grids, state-space indexing, probability vectors, sparse generators.

from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import scipy.sparse as sp

from Model_Core.errors import DimensionMismatchError, DomainError
from Model_Core.phase_model import N_PHASES

GENERATOR_ATOL = 1e-12


class Axis(Enum):
    PROTEIN_COUNT = "ProteinCount"
    FLUORESCENCE_BIN = "FluorescenceBin"


@dataclass(frozen=True)
class FluorescenceGrid:
    """Ordered bin widths in a.u.; bin i covers [edges[i], edges[i+1])."""

    widths: tuple

    def __post_init__(self):
        w = tuple(float(x) for x in self.widths)
        if not w:
            raise DomainError("FluorescenceGrid needs at least one bin")
        if any(not (x > 0) for x in w):
            raise DomainError(f"All grid widths must be > 0, got {w}")
        object.__setattr__(self, "widths", w)

    @classmethod
    def from_widths(cls, widths):
        return cls(tuple(widths))

    @classmethod
    def from_edges(cls, edges):
        edges = np.asarray(edges, dtype=float)
        if edges.ndim != 1 or len(edges) < 2 or edges[0] != 0.0:
            raise DomainError("Grid edges must start at 0 and contain at least two values")
        return cls(tuple(np.diff(edges)))

    @classmethod
    def uniform(cls, width, n_bins):
        if n_bins < 1:
            raise DomainError(f"n_bins must be >= 1, got {n_bins}")
        return cls((float(width),) * int(n_bins))

    @property
    def n_bins(self):
        return len(self.widths)

    @property
    def edges(self):
        return np.concatenate(([0.0], np.cumsum(self.widths)))

    @property
    def lower_edges(self):
        return self.edges[:-1]

    @property
    def upper_edges(self):
        return self.edges[1:]

    @property
    def midpoints(self):
        e = self.edges
        return 0.5 * (e[:-1] + e[1:])

    def representatives(self, kind="lower"):
        if kind == "lower":
            return self.lower_edges
        if kind == "midpoint":
            return self.midpoints
        raise DomainError(f"Unknown bin representative '{kind}' (use 'lower' or 'midpoint')")

    def bin_of(self, value):
        """Bin index containing value; values past the top edge land in the top bin."""
        idx = np.searchsorted(self.edges, value, side="right") - 1
        return np.clip(idx, 0, self.n_bins - 1)


@dataclass(frozen=True)
class StateSpace:
    """state(level, phase) = n_phases * level + phase."""

    n_levels: int
    axis: Axis = Axis.PROTEIN_COUNT
    n_phases: int = N_PHASES
    grid: FluorescenceGrid = None

    def __post_init__(self):
        if self.n_levels < 1 or self.n_phases < 1:
            raise DomainError("StateSpace needs at least one level and one phase")
        if self.axis is Axis.FLUORESCENCE_BIN:
            if self.grid is None:
                raise DomainError("A FluorescenceBin state space needs a grid")
            if self.grid.n_bins != self.n_levels:
                raise DimensionMismatchError(
                    f"grid has {self.grid.n_bins} bins but the space has {self.n_levels} levels"
                )

    @classmethod
    def counts(cls, n_levels, n_phases=N_PHASES):
        return cls(n_levels=n_levels, axis=Axis.PROTEIN_COUNT, n_phases=n_phases)

    @classmethod
    def bins(cls, grid, n_phases=N_PHASES):
        return cls(n_levels=grid.n_bins, axis=Axis.FLUORESCENCE_BIN, n_phases=n_phases, grid=grid)

    @property
    def dimension(self):
        return self.n_levels * self.n_phases

    def index(self, level, phase):
        return self.n_phases * int(level) + int(phase)


@dataclass(frozen=True)
class ProbabilityVector:
    values: np.ndarray
    space: StateSpace

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.space.dimension,):
            raise DimensionMismatchError(
                f"vector of length {v.shape} does not match state space dimension {self.space.dimension}"
            )
        object.__setattr__(self, "values", v)

    @classmethod
    def point_mass(cls, space, level=0, phase=0):
        v = np.zeros(space.dimension)
        v[space.index(level, phase)] = 1.0
        return cls(v, space)

    def total(self):
        return float(self.values.sum())

    def by_level(self):
        """Per-level marginal, summed over phases."""
        return self.values.reshape(self.space.n_levels, self.space.n_phases).sum(axis=1)

    def by_phase(self):
        return self.values.reshape(self.space.n_levels, self.space.n_phases).sum(axis=0)

    def table(self):
        """levels x phases view."""
        return self.values.reshape(self.space.n_levels, self.space.n_phases)


@dataclass(frozen=True)
class SparseGenerator:
    """
    CTMC generator in CSC form (columns are source states). truncated_rate is the sum of
    production rates cancelled into the diagonal at the top level.
    """

    matrix: sp.csc_matrix
    space: StateSpace = None
    truncated_rate: float = 0.0
    label: str = field(default="", compare=False)

    def __post_init__(self):
        m = sp.csc_matrix(self.matrix, dtype=float)
        m.sum_duplicates()
        m.eliminate_zeros()
        if m.shape[0] != m.shape[1]:
            raise DimensionMismatchError(f"generator must be square, got {m.shape}")
        if self.space is not None and self.space.dimension != m.shape[0]:
            raise DimensionMismatchError(
                f"generator dimension {m.shape[0]} does not match state space {self.space.dimension}"
            )
        object.__setattr__(self, "matrix", m)

    @property
    def dimension(self):
        return self.matrix.shape[0]

    @property
    def nnz(self):
        return self.matrix.nnz

    def entries(self):
        """(row, col, value) triplets sorted by row then column."""
        coo = self.matrix.tocoo()
        order = np.lexsort((coo.col, coo.row))
        return [(int(coo.row[i]), int(coo.col[i]), float(coo.data[i])) for i in order]

    @classmethod
    def from_entries(cls, dimension, entries, space=None):
        entries = list(entries)
        rows = [e[0] for e in entries]
        cols = [e[1] for e in entries]
        vals = [e[2] for e in entries]
        return cls(sp.csc_matrix((vals, (rows, cols)), shape=(dimension, dimension)), space=space)

    def column_sums(self):
        return np.asarray(self.matrix.sum(axis=0)).ravel()

    def min_off_diagonal(self):
        off = self.matrix - sp.diags(self.matrix.diagonal())
        off = sp.csc_matrix(off)
        return float(off.data.min()) if off.nnz else 0.0

    def is_generator(self, atol=GENERATOR_ATOL):
        return bool(np.all(np.abs(self.column_sums()) <= atol) and self.min_off_diagonal() >= 0.0)

    def toarray(self):
        return self.matrix.toarray()
