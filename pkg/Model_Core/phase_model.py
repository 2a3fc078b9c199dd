# phase_model.py
# Five-phase gene model, kinetic constants and the deterministic fluorescence ODE.
#
# Time unit everywhere is one generation (one division interval).

import math
import warnings
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np
import scipy.linalg

from Model_Core.errors import DegenerateModelError, DomainError, FgbaWarning

GENERATION_MINUTES = 85.0

# published defaults
DEFAULT_K_M = 4.3
DEFAULT_K_H = 0.4
DEFAULT_RATIO_O = 3.7
DEFAULT_RATIO_R = 15.8
DEFAULT_K_O_MULTIPLIER = 1000.0
K_R_OVER_K_O = 0.118
DEFAULT_HALF_LIFE_H = 26.0
DEFAULT_BETA_F_ON = 238.0
DEFAULT_BETA_F_PARTIAL = 3.0
DEFAULT_BETA_F_OFF = 0.37


class ExpressionState(Enum):
    ON = "On"
    PARTIAL = "Partial"
    OFF = "Off"


class Phase(Enum):
    """Gene phases in state-vector order. The value is the index inside a level block."""

    MF = 0
    MH = 1
    UN = 2
    UO = 3
    O = 4

    @property
    def expression_state(self):
        return _EXPRESSION[self]

    @classmethod
    def parse(cls, name):
        try:
            return cls[str(name).strip().upper()]
        except KeyError:
            raise DomainError(f"Unknown phase '{name}'; expected one of {[p.name for p in cls]}")


_EXPRESSION = {
    Phase.MF: ExpressionState.ON,
    Phase.MH: ExpressionState.ON,  # assumed On, not Partial
    Phase.UN: ExpressionState.PARTIAL,
    Phase.UO: ExpressionState.PARTIAL,
    Phase.O: ExpressionState.OFF,
}

N_PHASES = len(Phase)


@dataclass(frozen=True)
class RateSet:
    """All kinetic constants, per generation. beta_f_* are in a.u./generation."""

    k_M: float = 0.0
    k_H: float = 0.0
    k_O: float = 0.0
    k_negO: float = 0.0
    k_R: float = 0.0
    k_negR: float = 0.0
    gamma: float = 0.0
    beta_f_on: float = 0.0
    beta_f_partial: float = 0.0
    beta_f_off: float = 0.0
    replication_rate: float = 1.0

    def __post_init__(self):
        for name, value in self.as_dict().items():
            if not math.isfinite(value) or value < 0:
                raise DomainError(f"RateSet.{name} must be finite and >= 0, got {value}")

    def as_dict(self):
        return {
            "k_M": self.k_M,
            "k_H": self.k_H,
            "k_O": self.k_O,
            "k_negO": self.k_negO,
            "k_R": self.k_R,
            "k_negR": self.k_negR,
            "gamma": self.gamma,
            "beta_f_on": self.beta_f_on,
            "beta_f_partial": self.beta_f_partial,
            "beta_f_off": self.beta_f_off,
            "replication_rate": self.replication_rate,
        }

    def with_ratio_R(self, ratio_R):
        """Mutant variant: same k_R, k_negR = k_R / ratio_R."""
        if ratio_R <= 0:
            raise DomainError(f"ratio_R must be > 0, got {ratio_R}")
        return replace(self, k_negR=self.k_R / ratio_R)


@dataclass(frozen=True)
class DeterministicState:
    x_f: float
    t: float

    def __post_init__(self):
        if self.x_f < 0:
            raise DomainError(f"x_f must be >= 0, got {self.x_f}")


def _require_positive(**values):
    for name, v in values.items():
        if not (v > 0) or not math.isfinite(v):
            raise DomainError(f"{name} must be > 0, got {v}")


def derive_rate_set(k_M, k_H, ratio_O, ratio_R, k_O_multiplier):
    """
    Phase-variation rates from the two measured rates and two ratios:
    k_O = multiplier * k_H, k_-O = k_O / ratio_O, k_R = 0.118 k_O, k_-R = k_R / ratio_R.
    gamma and beta_f are left at zero for the callers below.
    """
    _require_positive(k_M=k_M, k_H=k_H, ratio_O=ratio_O, ratio_R=ratio_R, k_O_multiplier=k_O_multiplier)
    k_O = k_O_multiplier * k_H
    k_R = K_R_OVER_K_O * k_O
    return RateSet(
        k_M=float(k_M),
        k_H=float(k_H),
        k_O=k_O,
        k_negO=k_O / ratio_O,
        k_R=k_R,
        k_negR=k_R / ratio_R,
    )


def gamma_from_half_life(tau, generation_length=GENERATION_MINUTES):
    """Degradation rate [1/generation] from a half-life in hours and a generation length in minutes."""
    _require_positive(tau=tau, generation_length=generation_length)
    tau_generations = tau * 60.0 / generation_length
    return math.log(2.0) / tau_generations


def beta_f_from_steady_state(gamma, x_f_inf):
    if not gamma > 0:
        raise DomainError(f"gamma must be > 0, got {gamma}")
    if x_f_inf < 0:
        raise DomainError(f"x_f_inf must be >= 0, got {x_f_inf}")
    return gamma * x_f_inf


def default_rate_set(ratio_R=DEFAULT_RATIO_R):
    base = derive_rate_set(DEFAULT_K_M, DEFAULT_K_H, DEFAULT_RATIO_O, ratio_R, DEFAULT_K_O_MULTIPLIER)
    return replace(
        base,
        gamma=gamma_from_half_life(DEFAULT_HALF_LIFE_H, GENERATION_MINUTES),
        beta_f_on=DEFAULT_BETA_F_ON,
        beta_f_partial=DEFAULT_BETA_F_PARTIAL,
        beta_f_off=DEFAULT_BETA_F_OFF,
        replication_rate=1.0,
    )


def beta_f_by_phase(rates):
    """Fluorescence production per phase, in Phase order."""
    lookup = {
        ExpressionState.ON: rates.beta_f_on,
        ExpressionState.PARTIAL: rates.beta_f_partial,
        ExpressionState.OFF: rates.beta_f_off,
    }
    return np.array([lookup[p.expression_state] for p in Phase], dtype=float)


def phase_generator(rates):
    """
    5x5 phase-variation generator K. Column = source phase, row = target phase,
    so every column sums to zero.
    """
    r = rates
    return np.array(
        [
            [0.0, r.k_M, 0.0, 0.0, 0.0],
            [0.0, -r.k_M, r.k_H, 0.0, 0.0],
            [0.0, 0.0, -r.k_H - r.k_O, r.k_negO, 0.0],
            [0.0, 0.0, r.k_O, -r.k_negO - r.k_R, r.k_negR],
            [0.0, 0.0, 0.0, r.k_R, -r.k_negR],
        ],
        dtype=float,
    )


def replication_phase_map():
    """Column-stochastic phase block applied at division: MF->MH, MH->MH/UN (1/2 each), rest fixed."""
    return np.array(
        [
            [0.0, 0.0, 0.0, 0.0, 0.0],
            [1.0, 0.5, 0.0, 0.0, 0.0],
            [0.0, 0.5, 1.0, 0.0, 0.0],
            [0.0, 0.0, 0.0, 1.0, 0.0],
            [0.0, 0.0, 0.0, 0.0, 1.0],
        ],
        dtype=float,
    )


def deterministic_trajectory(beta_f, gamma, x0, t):
    """Closed-form solution of dx/dt = beta_f - gamma x. gamma = 0 gives linear growth."""
    if gamma < 0:
        raise DomainError(f"gamma must be >= 0, got {gamma}")
    if gamma == 0:
        return x0 + beta_f * t
    fixed = beta_f / gamma
    return fixed + (x0 - fixed) * math.exp(-gamma * t)


def deterministic_state(beta_f, gamma, start, t):
    """DeterministicState version of deterministic_trajectory, advancing start by t."""
    return DeterministicState(x_f=deterministic_trajectory(beta_f, gamma, start.x_f, t), t=start.t + t)


def phase_steady_state(K, replication_map=None, replication_rate=1.0, rtol=1e-10):
    """
    Stationary phase distribution of K + replication_rate * (replication_map - I).

    An all-zero model has every distribution stationary; uniform is returned with a warning.
    A null space of dimension > 1 otherwise raises DegenerateModelError.
    """
    K = np.asarray(K, dtype=float)
    n = K.shape[0]
    if replication_map is None:
        replication_map = np.eye(n)
    M = K + replication_rate * (np.asarray(replication_map, dtype=float) - np.eye(n))

    scale = np.abs(M).max()
    if scale == 0.0:
        warnings.warn("Phase model has no transitions; returning the uniform distribution.", FgbaWarning)
        return np.full(n, 1.0 / n)

    null = scipy.linalg.null_space(M, rcond=rtol)
    if null.shape[1] != 1:
        raise DegenerateModelError(f"Phase model has a {null.shape[1]}-dimensional stationary space")
    v = null[:, 0]
    v = v / v.sum()
    v[np.abs(v) < 1e-15] = 0.0
    if v.min() < -1e-12:
        raise DegenerateModelError("Stationary vector has negative entries")
    v = np.clip(v, 0.0, None)
    return v / v.sum()
