# ssa_oracle.py
# Exact stochastic simulation (Gillespie direct method) of one cell lineage:
# phase switching per K, protein birth/death, and division per ReplicationMode.
#
# Every trajectory draws from its own stream, numpy.random.default_rng([seed, index]),
# so serial and threaded ensembles agree bit for bit.

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum

import numpy as np

from Model_Core.errors import DomainError
from Model_Core.phase_model import Phase, phase_generator, replication_phase_map
from Model_Core.state_space import FluorescenceGrid, ProbabilityVector, StateSpace


class ReplicationMode(Enum):
    CONTINUOUS_HALVING = "continuous_halving"  # exponential waiting times at replication_rate
    DISCRETE_HALVING = "discrete_halving"  # every generation, floor(n/2)
    DISCRETE_BINOMIAL = "discrete_binomial"  # every generation, Binomial(n, 1/2)
    NONE = "none"

    @classmethod
    def parse(cls, name):
        key = str(name).strip().lower().replace("-", "_")
        for m in cls:
            if m.value == key or m.name.lower() == key:
                return m
        raise DomainError(f"Unknown replication mode '{name}'; expected one of {[m.value for m in cls]}")


@dataclass(frozen=True)
class CellState:
    phase: Phase
    protein: int
    t: float

    def __post_init__(self):
        if self.protein < 0:
            raise DomainError(f"protein must be >= 0, got {self.protein}")


def trajectory_rng(seed, index):
    return np.random.default_rng([int(seed), int(index)])


def pick_reaction(u, propensities):
    """
    Index of the reaction whose slice of [0, sum(propensities)) holds u.
    A u rounded onto the upper end lands on the last reaction with a positive
    propensity, never on a zero-rate one.
    """
    acc = 0.0
    last = None
    for i, a in enumerate(propensities):
        if a > 0:
            acc += a
            last = i
            if u < acc:
                return i
    if last is None:
        raise DomainError("no reaction has a positive propensity")
    return last


class _Lineage:
    """Per-run constants shared by all trajectories of an ensemble."""

    def __init__(self, rates, beta_by_phase, mode, t_end):
        if not t_end > 0:
            raise DomainError(f"t_end must be > 0, got {t_end}")
        self.mode = mode if isinstance(mode, ReplicationMode) else ReplicationMode.parse(mode)
        self.t_end = float(t_end)
        self.gamma = rates.gamma
        self.beta = [float(b) for b in beta_by_phase]
        if len(self.beta) != len(Phase):
            raise DomainError(f"beta_by_phase needs {len(Phase)} entries")
        K = phase_generator(rates)
        # per source phase: target phases and their rates
        self.switch = []
        for p in range(len(Phase)):
            targets = [q for q in range(len(Phase)) if q != p and K[q, p] > 0]
            self.switch.append((targets, [K[q, p] for q in targets]))
        self.replication_rate = rates.replication_rate if self.mode is ReplicationMode.CONTINUOUS_HALVING else 0.0
        self.phase_block = replication_phase_map()

    def divide(self, phase, protein, rng, binomial):
        column = self.phase_block[:, phase]
        if column[phase] == 1.0:
            new_phase = phase
        else:
            nonzero = np.flatnonzero(column)
            new_phase = int(nonzero[0]) if len(nonzero) == 1 else int(rng.choice(nonzero, p=column[nonzero]))
        new_protein = int(rng.binomial(protein, 0.5)) if binomial else protein // 2
        return new_phase, new_protein

    def run(self, rng, start, record):
        phase, protein, t = start.phase.value, start.protein, start.t
        events = [CellState(Phase(phase), protein, t)] if record else None
        discrete = self.mode in (ReplicationMode.DISCRETE_HALVING, ReplicationMode.DISCRETE_BINOMIAL)
        binomial = self.mode is ReplicationMode.DISCRETE_BINOMIAL
        next_division = math.floor(t) + 1.0 if discrete else math.inf

        while True:
            targets, switch_rates = self.switch[phase]
            a_switch = sum(switch_rates)
            a_birth = self.beta[phase]
            a_death = self.gamma * protein
            a_rep = self.replication_rate
            propensities = (a_birth, a_death, a_switch, a_rep)
            a0 = sum(propensities)

            tau = rng.exponential(1.0 / a0) if a0 > 0 else math.inf
            horizon = min(next_division, self.t_end)
            if t + tau >= horizon:
                if next_division <= self.t_end:
                    # memoryless: jump to the division and redraw afterwards
                    t = next_division
                    phase, protein = self.divide(phase, protein, rng, binomial)
                    next_division += 1.0
                    if record:
                        events.append(CellState(Phase(phase), protein, t))
                    continue
                break
            t += tau

            u = rng.random() * a0
            reaction = pick_reaction(u, propensities)
            if reaction == 0:
                protein += 1
            elif reaction == 1:
                protein -= 1
            elif reaction == 2:
                u -= a_birth + a_death
                acc = 0.0
                chosen = targets[-1]
                for q, rate in zip(targets, switch_rates):
                    acc += rate
                    if u < acc:
                        chosen = q
                        break
                phase = chosen
            else:
                phase, protein = self.divide(phase, protein, rng, False)
            if record:
                events.append(CellState(Phase(phase), protein, t))

        if record:
            return events
        return CellState(Phase(phase), protein, self.t_end)


def simulate_trajectory(rates, beta_by_phase, mode, t_end, seed, initial=None, index=0):
    """
    One exact trajectory; returns the initial state followed by one CellState per event.
    beta_by_phase is in proteins per generation. Default start: phase O, no protein.
    """
    start = initial or CellState(Phase.O, 0, 0.0)
    lineage = _Lineage(rates, beta_by_phase, mode, t_end)
    return lineage.run(trajectory_rng(seed, index), start, record=True)


def ensemble_end_states(n_traj, rates, beta_by_phase, mode, t_end, seed, initial=None, threads=1):
    """End states of n_traj independent trajectories, in trajectory order."""
    if n_traj < 1:
        raise DomainError(f"n_traj must be >= 1, got {n_traj}")
    start = initial or CellState(Phase.O, 0, 0.0)
    lineage = _Lineage(rates, beta_by_phase, mode, t_end)

    def run_chunk(bounds):
        lo, hi = bounds
        return [lineage.run(trajectory_rng(seed, i), start, record=False) for i in range(lo, hi)]

    workers = max(1, min(int(threads), n_traj))
    edges = np.linspace(0, n_traj, workers + 1).astype(int)
    chunks = [(int(edges[i]), int(edges[i + 1])) for i in range(workers)]
    if workers == 1:
        parts = [run_chunk(chunks[0])]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run_chunk, chunks))
    return [state for part in parts for state in part]


def ensemble_histogram(n_traj, rates, beta_by_phase, mode, t_end, grid, mu, seed, initial=None, threads=1):
    """
    End-state histogram: intensity mu * protein binned on the grid, split by phase,
    normalized to one. Intensities past the top edge are counted in the top bin.
    """
    if not mu > 0:
        raise DomainError(f"mu must be > 0, got {mu}")
    if not isinstance(grid, FluorescenceGrid):
        grid = FluorescenceGrid.from_widths(grid)
    states = ensemble_end_states(n_traj, rates, beta_by_phase, mode, t_end, seed, initial, threads)
    space = StateSpace.bins(grid)
    counts = np.zeros(space.dimension)
    proteins = np.array([s.protein for s in states], dtype=float)
    phases = np.array([s.phase.value for s in states], dtype=int)
    bins = grid.bin_of(mu * proteins)
    np.add.at(counts, bins * space.n_phases + phases, 1.0)
    return ProbabilityVector(counts / len(states), space)


def ensemble_moments(states, mu=1.0):
    """Mean and variance of mu * protein over a list of end states."""
    x = mu * np.array([s.protein for s in states], dtype=float)
    return float(x.mean()), float(x.var())
