"""Discounted occupancy measures: empirical estimation, exact linear-system
solution, and marginalizations."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .model import FactoredCMDP, global_transition_matrix, DEFAULT_ENUMERATION_CAP
from .sampling import TrajectoryBatch

EXACT_INFINITE = "exact-infinite"
EMPIRICAL_H = "empirical-H"


@dataclass(frozen=True)
class LocalOccupancy:
    """Discounted state-action visitation weights of one agent.

    ``mass_convention`` records the total-mass semantics: an exact solve sums
    to 1/(1-gamma), a horizon-H empirical estimate to (1-gamma^H)/(1-gamma).
    """

    agent: int
    table: np.ndarray  # (S_i, A_i)
    mass_convention: str

    def __post_init__(self):
        if self.mass_convention not in (EXACT_INFINITE, EMPIRICAL_H):
            raise ValueError(f"unknown mass convention {self.mass_convention!r}")
        if np.any(self.table < 0):
            raise ValueError("occupancy entries must be nonnegative")

    @property
    def mass(self):
        return float(self.table.sum())


@dataclass(frozen=True)
class GlobalOccupancy:
    """Flat visitation weights over global (s, a) pairs (index s*|A| + a)."""

    table: np.ndarray
    state_sizes: tuple
    action_sizes: tuple

    @property
    def mass(self):
        return float(self.table.sum())

    def reshaped(self):
        """View with one axis per agent state then per agent action."""
        return self.table.reshape(tuple(self.state_sizes) + tuple(self.action_sizes))


@dataclass(frozen=True)
class StateMarginal:
    agent: int
    probs: np.ndarray


def estimate_local_occupancy(batch: TrajectoryBatch, agent: int,
                             gamma: float, horizon: int,
                             state_size: int, action_size: int) -> LocalOccupancy:
    """Monte-Carlo occupancy: discounted visit counts averaged over the batch.

    Trajectories are folded in batch-index order so results are reproducible
    bit-for-bit.
    """
    if batch.batch_size == 0:
        raise ValueError("batch must be nonempty")
    if batch.horizon != horizon:
        raise ValueError(
            f"batch horizon {batch.horizon} does not match H={horizon}")
    discounts = gamma ** np.arange(horizon)
    s = batch.states[:, :, agent]
    a = batch.actions[:, :, agent]
    flat = s * action_size + a
    table = np.zeros(state_size * action_size)
    for b in range(batch.batch_size):
        np.add.at(table, flat[b], discounts)
    table /= batch.batch_size
    return LocalOccupancy(agent=agent,
                          table=table.reshape(state_size, action_size),
                          mass_convention=EMPIRICAL_H)


def exact_global_occupancy(cmdp: FactoredCMDP, policy,
                           cap=DEFAULT_ENUMERATION_CAP) -> GlobalOccupancy:
    """Solve (I - gamma * P_pi) lambda = rho_pi for the occupancy vector."""
    cmdp.check_enumeration_cap(cap)
    P = global_transition_matrix(cmdp, policy, cap=cap)
    rho = cmdp.initial_state_distribution()
    pi = policy.joint_action_probabilities()
    rho_pi = (rho[:, None] * pi).ravel()
    lam = scipy.linalg.solve(np.eye(len(rho_pi)) - cmdp.gamma * P, rho_pi)
    lam = np.maximum(lam, 0.0)  # clip solver noise at the boundary
    return GlobalOccupancy(table=lam,
                           state_sizes=tuple(cmdp.local_state_sizes),
                           action_sizes=tuple(cmdp.local_action_sizes))


def flow_balance_residual(cmdp: FactoredCMDP, policy, occ: GlobalOccupancy,
                          cap=DEFAULT_ENUMERATION_CAP) -> float:
    """Max-norm residual of lambda = rho_pi + gamma * P_pi lambda."""
    P = global_transition_matrix(cmdp, policy, cap=cap)
    rho = cmdp.initial_state_distribution()
    pi = policy.joint_action_probabilities()
    rho_pi = (rho[:, None] * pi).ravel()
    return float(np.max(np.abs(occ.table - rho_pi - cmdp.gamma * (P @ occ.table))))


def marginalize(occ: GlobalOccupancy, agent: int) -> LocalOccupancy:
    """Sum out all other agents' states and actions; mass is preserved."""
    n = len(occ.state_sizes)
    shaped = occ.reshaped()
    axes = tuple(k for k in range(2 * n) if k not in (agent, n + agent))
    return LocalOccupancy(agent=agent, table=shaped.sum(axis=axes),
                          mass_convention=EXACT_INFINITE)


def state_marginal(occ: LocalOccupancy, gamma: float) -> StateMarginal:
    """d_i(s) = (1 - gamma) * sum_a lambda_i(s, a)."""
    return StateMarginal(agent=occ.agent,
                         probs=(1.0 - gamma) * occ.table.sum(axis=1))


def empirical_mass(gamma: float, horizon: int) -> float:
    """Total mass contributed by one horizon-H trajectory."""
    return float(np.sum(gamma ** np.arange(horizon)))


def occupancies_to_csv(occs, path):
    """Debug dump: rows (agent, s_i, a_i, value)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["agent", "state", "action", "value"])
        for occ in occs:
            S, A = occ.table.shape
            for s in range(S):
                for a in range(A):
                    writer.writerow([occ.agent, s, a, repr(float(occ.table[s, a]))])
