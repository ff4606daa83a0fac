"""General utility functionals over local occupancy measures.

Three families are shipped: linear (cumulative reward), entropy of the state
marginal, and the squared L2 norm of the action marginal. Each provides a
value and an analytic gradient (the shadow reward); a central-difference
gradient is available as an independent oracle.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .occupancy import LocalOccupancy, state_marginal

LINEAR = "linear"
ENTROPY = "entropy"
L2_ACTION = "l2_action"

OBJECTIVE = "objective"
CONSTRAINT = "constraint"

# State marginals are clamped below at this value before taking logarithms;
# the entropy gradient diverges at zero mass.
ENTROPY_FLOOR = 1e-8


@dataclass(frozen=True)
class GeneralUtility:
    kind: str
    role: str = OBJECTIVE
    reward: np.ndarray = None  # linear kind only, shape (S_i, A_i)
    threshold: float = 0.0
    gamma: float = 0.0  # entropy / l2 kinds

    def __post_init__(self):
        if self.kind not in (LINEAR, ENTROPY, L2_ACTION):
            raise ValueError(f"unknown utility kind {self.kind!r}")
        if self.role not in (OBJECTIVE, CONSTRAINT):
            raise ValueError(f"unknown utility role {self.role!r}")
        if self.kind == LINEAR:
            if self.reward is None:
                raise ValueError("linear utility requires a reward table")
        if not np.isfinite(self.threshold):
            raise ValueError("threshold must be finite")

    def as_constraint(self, threshold):
        return replace(self, role=CONSTRAINT, threshold=float(threshold))


@dataclass(frozen=True)
class ShadowReward:
    """Gradient of a utility w.r.t. the local occupancy table."""

    table: np.ndarray  # (S_i, A_i)

    @property
    def inf_norm(self):
        return float(np.max(np.abs(self.table)))


def _raw_value(u: GeneralUtility, occ: LocalOccupancy) -> float:
    if np.any(np.isnan(occ.table)):
        raise ValueError("occupancy table contains NaN")
    if u.kind == LINEAR:
        if u.reward.shape != occ.table.shape:
            raise ValueError(
                f"reward table shape {u.reward.shape} does not match occupancy "
                f"shape {occ.table.shape}")
        return float(np.sum(u.reward * occ.table))
    if u.kind == ENTROPY:
        d = state_marginal(occ, u.gamma).probs
        safe = np.maximum(d, ENTROPY_FLOOR)
        return float(-np.sum(np.where(d > 0, d * np.log(safe), 0.0)))
    # L2_ACTION: (1-gamma)^2 / 2 * ||m||_2^2 with m(a) = sum_s lambda(s, a)
    m = occ.table.sum(axis=0)
    return float(0.5 * (1.0 - u.gamma) ** 2 * np.sum(m ** 2))


def utility_value(u: GeneralUtility, occ: LocalOccupancy) -> float:
    """Utility value; constraints report raw value minus their threshold so
    that feasibility is uniformly ``value >= 0`` downstream."""
    raw = _raw_value(u, occ)
    return raw - u.threshold if u.role == CONSTRAINT else raw


def shadow_reward(u: GeneralUtility, occ: LocalOccupancy) -> ShadowReward:
    """Analytic gradient of the utility w.r.t. the occupancy table."""
    if u.kind == LINEAR:
        return ShadowReward(table=np.array(u.reward, dtype=float))
    if u.kind == ENTROPY:
        d = state_marginal(occ, u.gamma).probs
        grad_d = -(np.log(np.maximum(d, ENTROPY_FLOOR)) + 1.0)
        table = (1.0 - u.gamma) * np.repeat(
            grad_d[:, None], occ.table.shape[1], axis=1)
        return ShadowReward(table=table)
    m = occ.table.sum(axis=0)
    table = (1.0 - u.gamma) ** 2 * np.repeat(
        m[None, :], occ.table.shape[0], axis=0)
    return ShadowReward(table=table)


def fd_gradient(u: GeneralUtility, occ: LocalOccupancy, h: float = 1e-6) -> ShadowReward:
    """Central-difference gradient oracle, one coordinate at a time.

    Linear and l2 utilities extend smoothly to negative entries so plain
    central differences apply everywhere; the entropy marginal must stay
    nonnegative, so its minus side is clamped at zero with the denominator
    shortened to match.
    """
    if h <= 0:
        raise ValueError("step size must be positive")
    base = occ.table
    grad = np.zeros_like(base)
    clamp = u.kind == ENTROPY
    for idx in np.ndindex(base.shape):
        plus = base.copy()
        plus[idx] += h
        minus = base.copy()
        if clamp:
            minus[idx] = max(minus[idx] - h, 0.0)
        else:
            minus[idx] -= h
        lo = base[idx] - minus[idx]
        occ_p = _Perturbed(occ.agent, plus, occ.mass_convention)
        occ_m = _Perturbed(occ.agent, minus, occ.mass_convention)
        grad[idx] = (_raw_value(u, occ_p) - _raw_value(u, occ_m)) / (h + lo)
    return ShadowReward(table=grad)


@dataclass(frozen=True)
class _Perturbed:
    """Occupancy stand-in that skips the nonnegativity check; only the
    finite-difference oracle may dip below zero."""

    agent: int
    table: np.ndarray
    mass_convention: str
