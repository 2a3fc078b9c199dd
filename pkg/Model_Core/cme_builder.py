# cme_builder.py
# Sparse CTMC generators: full protein-count CME, replication matrices, and the
# fluorescence-grid (FGBA) generator, all with a probability-conserving top level.

from enum import Enum

import numpy as np
import scipy.sparse as sp
from scipy.stats import binom

from Model_Core.errors import DimensionMismatchError, DomainError, UnsupportedModeError
from Model_Core.phase_model import beta_f_by_phase, phase_generator, replication_phase_map
from Model_Core.state_space import Axis, FluorescenceGrid, SparseGenerator, StateSpace


class Partition(Enum):
    HALVING = "Halving"
    BINOMIAL = "Binomial"


def _check_phase_generator(K):
    K = np.asarray(K, dtype=float)
    if K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise DomainError(f"K must be square, got shape {K.shape}")
    scale = max(1.0, float(np.abs(K).max()))
    if np.any(np.abs(K.sum(axis=0)) > 1e-9 * scale):
        raise DomainError("K must have zero column sums")
    off = K - np.diag(np.diag(K))
    if off.min() < 0:
        raise DomainError("K must have nonnegative off-diagonal entries")
    return K


def _assemble(rows, cols, vals, dim):
    """Generator from off-diagonal triplets; diagonal = minus the column sum of the off-diagonals."""
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    vals = np.asarray(vals, dtype=float)
    keep = (vals != 0.0) & (rows != cols)
    rows, cols, vals = rows[keep], cols[keep], vals[keep]
    outflow = np.bincount(cols, weights=vals, minlength=dim)
    all_rows = np.concatenate((rows, np.arange(dim)))
    all_cols = np.concatenate((cols, np.arange(dim)))
    all_vals = np.concatenate((vals, -outflow))
    return sp.csc_matrix((all_vals, (all_rows, all_cols)), shape=(dim, dim))


def _phase_offdiagonal_triplets(K, n_levels):
    """Off-diagonal K entries repeated in every level block."""
    n = K.shape[0]
    src_t, src_s = np.nonzero(K - np.diag(np.diag(K)))
    if len(src_t) == 0:
        return np.empty(0, int), np.empty(0, int), np.empty(0)
    offsets = (np.arange(n_levels) * n)[:, None]
    rows = (offsets + src_t[None, :]).ravel()
    cols = (offsets + src_s[None, :]).ravel()
    vals = np.tile(K[src_t, src_s], n_levels)
    return rows, cols, vals


def _ladder(n_levels, n_phases, up_rates, down_rates):
    """
    Level-to-level moves with a diagonal phase coupling.
    up_rates[l, p]: rate level l -> l+1 in phase p (l < n_levels-1).
    down_rates[l]: rate level l -> l-1 (same for all phases), l >= 1.
    """
    rows, cols, vals = [], [], []
    p = np.arange(n_phases)
    for level in range(n_levels - 1):
        rows.append((level + 1) * n_phases + p)
        cols.append(level * n_phases + p)
        vals.append(up_rates[level])
    for level in range(1, n_levels):
        rows.append((level - 1) * n_phases + p)
        cols.append(level * n_phases + p)
        vals.append(np.full(n_phases, down_rates[level]))
    if not rows:
        return np.empty(0, int), np.empty(0, int), np.empty(0)
    return np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)


def build_full_generator(K, beta_by_phase, gamma, n_max):
    """
    Protein-count CME over counts 0..n_max. Production B moves level n -> n+1,
    degradation n*gamma moves n -> n-1, K acts inside every level. Production out of
    n_max is suppressed; its total rate is reported as truncated_rate.
    """
    K = _check_phase_generator(K)
    n_phases = K.shape[0]
    beta = np.asarray(beta_by_phase, dtype=float).reshape(-1)
    if beta.shape != (n_phases,):
        raise DimensionMismatchError(f"beta_by_phase needs {n_phases} entries, got {beta.shape[0]}")
    if n_max < 1:
        raise DomainError(f"n_max must be >= 1, got {n_max}")
    if gamma < 0 or np.any(beta < 0):
        raise DomainError("gamma and production rates must be >= 0")

    n_levels = int(n_max) + 1
    space = StateSpace.counts(n_levels, n_phases)
    up = np.tile(beta, (n_levels - 1, 1))
    down = gamma * np.arange(n_levels, dtype=float)

    r1, c1, v1 = _phase_offdiagonal_triplets(K, n_levels)
    r2, c2, v2 = _ladder(n_levels, n_phases, up, down)
    matrix = _assemble(np.concatenate((r1, r2)), np.concatenate((c1, c2)), np.concatenate((v1, v2)), space.dimension)
    return SparseGenerator(matrix, space=space, truncated_rate=float(beta.sum()), label="full")


def build_fgba_generator(K, B_f, grid, gamma):
    """
    Fluorescence-grid CME: production (1/D_i) B_f from bin i to bin i+1, degradation
    gamma (D_1+...+D_i)/D_{i+1} from bin i+1 to bin i, K inside every bin. B_f may be a
    diagonal matrix or the vector of its diagonal.
    """
    if not isinstance(grid, FluorescenceGrid):
        grid = FluorescenceGrid.from_widths(grid)
    K = _check_phase_generator(K)
    n_phases = K.shape[0]
    B_f = np.asarray(B_f, dtype=float)
    beta_f = np.diag(B_f) if B_f.ndim == 2 else B_f.reshape(-1)
    if beta_f.shape != (n_phases,):
        raise DimensionMismatchError(f"B_f needs {n_phases} diagonal entries, got {beta_f.shape[0]}")
    if gamma < 0 or np.any(beta_f < 0):
        raise DomainError("gamma and fluorescence rates must be >= 0")

    widths = np.asarray(grid.widths)
    n_levels = grid.n_bins
    space = StateSpace.bins(grid, n_phases)
    up = beta_f[None, :] / widths[:-1, None]
    down = gamma * grid.lower_edges / widths

    r1, c1, v1 = _phase_offdiagonal_triplets(K, n_levels)
    r2, c2, v2 = _ladder(n_levels, n_phases, up, down)
    matrix = _assemble(np.concatenate((r1, r2)), np.concatenate((c1, c2)), np.concatenate((v1, v2)), space.dimension)
    truncated = float(beta_f.sum() / widths[-1])
    return SparseGenerator(matrix, space=space, truncated_rate=truncated, label="fgba")


def _halving_targets(space, representative):
    if space.axis is Axis.PROTEIN_COUNT:
        return np.arange(space.n_levels) // 2
    values = space.grid.representatives(representative)
    return space.grid.bin_of(values / 2.0)


def _replication_stochastic(level_weights, n_phases):
    """
    D+ as a stochastic matrix: level_weights[target, source] (columns sum to 1) combined
    with the replication phase block.
    """
    block = replication_phase_map() if n_phases == 5 else np.eye(n_phases)
    return sp.csc_matrix(sp.kron(sp.csc_matrix(level_weights), sp.csc_matrix(block)))


def replication_map(space, partition=Partition.HALVING, representative="lower"):
    """The stochastic map D+ alone (used directly by discrete-time replication)."""
    partition = Partition(partition) if not isinstance(partition, Partition) else partition
    n = space.n_levels
    if partition is Partition.BINOMIAL:
        if space.axis is not Axis.PROTEIN_COUNT:
            raise UnsupportedModeError(
                "Binomial partition needs protein counts; use build_binomial_fluorescence_map for bins"
            )
        weights = np.zeros((n, n))
        for src in range(n):
            pmf = binom.pmf(np.arange(src + 1), src, 0.5)
            weights[: src + 1, src] = pmf / pmf.sum()
    else:
        targets = _halving_targets(space, representative)
        weights = sp.csc_matrix((np.ones(n), (targets, np.arange(n))), shape=(n, n))
    return _replication_stochastic(weights, space.n_phases)


def build_replication_matrix(space, partition=Partition.HALVING, representative="lower"):
    """D = -I + D+; D+ sends level j to the level holding half of its value."""
    d_plus = replication_map(space, partition, representative)
    matrix = d_plus - sp.identity(space.dimension, format="csc")
    return SparseGenerator(matrix, space=space, label="replication")


def build_binomial_fluorescence_map(grid, mu, representative="lower", n_phases=5):
    """
    Binomial division on fluorescence bins. Each source bin's representative intensity x
    is read as n = round(x / mu) proteins, split Binomial(n, 1/2), and every outcome
    mu * k is binned. mu must be supplied explicitly.
    """
    if not mu > 0:
        raise DomainError(f"mu must be > 0, got {mu}")
    space = StateSpace.bins(grid, n_phases)
    n = grid.n_bins
    weights = np.zeros((n, n))
    for src, x in enumerate(grid.representatives(representative)):
        count = int(round(x / mu))
        k = np.arange(count + 1)
        pmf = binom.pmf(k, count, 0.5)
        np.add.at(weights[:, src], grid.bin_of(mu * k), pmf)
        weights[:, src] /= weights[:, src].sum()
    return _replication_stochastic(weights, space.n_phases)


def scale_generator(gen, rate):
    return SparseGenerator(gen.matrix * float(rate), space=gen.space, truncated_rate=gen.truncated_rate * rate, label=gen.label)


def assemble_final_generator(A_f, D_f):
    """A_f + D_f, the generator with continuous-time replication."""
    if A_f.dimension != D_f.dimension:
        raise DimensionMismatchError(f"A_f is {A_f.dimension}-dimensional but D_f is {D_f.dimension}")
    return SparseGenerator(A_f.matrix + D_f.matrix, space=A_f.space, truncated_rate=A_f.truncated_rate, label="final")


def default_experiment_grid(decades=4, bins_per_decade=10):
    """Log-spaced edges 10^(k/bins_per_decade), k = 0..decades*bins_per_decade, plus a [0, 1) bin."""
    if not decades > 0:
        raise DomainError(f"decades must be > 0, got {decades}")
    if int(bins_per_decade) < 1:
        raise DomainError(f"bins_per_decade must be >= 1, got {bins_per_decade}")
    n = int(round(decades * bins_per_decade))
    if n < 1:
        raise DomainError("grid must contain at least one log-spaced bin")
    log_edges = 10.0 ** (np.arange(n + 1) / float(bins_per_decade))
    return FluorescenceGrid.from_edges(np.concatenate(([0.0], log_edges)))


def build_experiment_generator(rates, grid, continuous_replication=True, representative="lower"):
    """A_f (+ replication_rate * D_f) for a five-phase RateSet on a fluorescence grid."""
    A_f = build_fgba_generator(phase_generator(rates), np.diag(beta_f_by_phase(rates)), grid, rates.gamma)
    if not continuous_replication:
        return A_f
    D_f = build_replication_matrix(A_f.space, Partition.HALVING, representative)
    return assemble_final_generator(A_f, scale_generator(D_f, rates.replication_rate))
