"""Trajectory generation under a k-hop policy, vectorized over the batch."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import FactoredCMDP
from .policy import KHopPolicy
from . import indexing


@dataclass(frozen=True)
class TrajectoryBatch:
    """B trajectories of length H; integer arrays of shape (B, H, n)."""

    states: np.ndarray
    actions: np.ndarray

    @property
    def batch_size(self):
        return self.states.shape[0]

    @property
    def horizon(self):
        return self.states.shape[1]

    def __post_init__(self):
        if self.states.shape != self.actions.shape:
            raise ValueError("states and actions must have matching shapes")
        if self.states.ndim != 3:
            raise ValueError("trajectory arrays must have shape (B, H, n)")


def _sample_rows(cdf_table, rows, u):
    """Inverse-CDF sample per element: cdf_table[rows[b]] at uniform u[b]."""
    cdf = cdf_table[rows]
    return np.minimum(
        (u[:, None] >= cdf[:, :-1]).sum(axis=1), cdf.shape[1] - 1
    )


def sample_trajectories(cmdp: FactoredCMDP, policy: KHopPolicy,
                        batch_size: int, horizon: int, rng,
                        initial_states=None) -> TrajectoryBatch:
    """Simulate ``batch_size`` trajectories of ``horizon`` steps.

    All trajectories advance in lockstep; actions and transitions use
    inverse-CDF draws in fixed order so the output is a deterministic
    function of the rng state.
    """
    if batch_size < 1 or horizon < 1:
        raise ValueError("batch_size and horizon must be positive")
    n = cmdp.n_agents
    B = batch_size
    states = np.empty((B, horizon, n), dtype=np.int64)
    actions = np.empty((B, horizon, n), dtype=np.int64)

    action_cdfs = [np.cumsum(policy.prob_table(i), axis=1) for i in range(n)]
    kernel_cdfs = [np.cumsum(k.table, axis=1) for k in cmdp.kernels]
    nbhd_weights = []
    for i in range(n):
        w = np.zeros(n, dtype=np.int64)
        w[list(policy.neighborhood(i))] = indexing.radix_weights(
            policy.nbhd_state_sizes(i))
        nbhd_weights.append(w)

    if initial_states is None:
        s = np.empty((B, n), dtype=np.int64)
        u0 = rng.random((B, n))
        for i in range(n):
            cdf = np.cumsum(np.asarray(cmdp.initial_dist[i]))
            s[:, i] = np.minimum(
                (u0[:, i: i + 1] >= cdf[None, :-1]).sum(axis=1), len(cdf) - 1)
    else:
        s = np.array(initial_states, dtype=np.int64)
        if s.shape != (B, n):
            raise ValueError("initial_states must have shape (B, n)")

    u_act = rng.random((horizon, B, n))
    u_trans = rng.random((horizon, B, n))
    a = np.empty((B, n), dtype=np.int64)
    for k in range(horizon):
        for i in range(n):
            rows = s @ nbhd_weights[i]
            a[:, i] = _sample_rows(action_cdfs[i], rows, u_act[k, :, i])
        states[:, k, :] = s
        actions[:, k, :] = a
        s_next = np.empty_like(s)
        for i, kern in enumerate(cmdp.kernels):
            rows = kern.row_indices(s, a)
            s_next[:, i] = _sample_rows(kernel_cdfs[i], rows, u_trans[k, :, i])
        s = s_next
    return TrajectoryBatch(states=states, actions=actions)
