"""Networked constrained MDP with factored transitions.

The global transition decomposes into per-agent kernels, each reading only a
declared subset of agents' states/actions. Kernels and local rewards are
tabulated over their dependency coordinates at construction time, which makes
sampling cheap and lets the transition-sensitivity matrix be computed exactly
by brute force on small instances.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .graph import DependenceGraph
from . import indexing

DEFAULT_ENUMERATION_CAP = 4096

# Dependency spaces larger than this cannot be tabulated; such rewards stay
# callable-only and exact (enumeration) operations on them are unavailable.
DEP_TABLE_CAP = 200_000


class EnumerationCapExceeded(ValueError):
    pass


def _check_deps(deps, n, what):
    deps = tuple(sorted(deps))
    if len(set(deps)) != len(deps):
        raise ValueError(f"duplicate agents in {what} dependencies: {deps}")
    for j in deps:
        if not (0 <= j < n):
            raise ValueError(f"{what} dependency {j} out of range")
    return deps


@dataclass(frozen=True)
class TransitionKernel:
    """Distribution over one agent's next local state.

    ``table[row]`` is the distribution over S_agent for the dependency cell
    ``row`` obtained by mixed-radix encoding (states of state_deps, then
    actions of action_deps, each in ascending agent order).
    """

    agent: int
    state_deps: tuple
    action_deps: tuple
    dep_sizes: tuple
    table: np.ndarray

    def __post_init__(self):
        if self.table.shape != (indexing.space_size(self.dep_sizes), self.table.shape[1]):
            raise ValueError("kernel table shape does not match dependency sizes")
        sums = self.table.sum(axis=1)
        if np.any(self.table < 0) or np.any(np.abs(sums - 1.0) > 1e-12):
            raise ValueError(
                f"kernel of agent {self.agent} has rows that are not distributions"
            )

    @classmethod
    def from_function(cls, fn, agent, state_deps, action_deps,
                      state_sizes, action_sizes):
        """Tabulate ``fn(s, a) -> distribution over S_agent``.

        ``fn`` receives full global state/action tuples but must only read the
        declared dependencies; this is verified by evaluating every dependency
        cell under two different fills of the non-dependency coordinates.
        """
        n = len(state_sizes)
        state_deps = _check_deps(state_deps, n, "state")
        action_deps = _check_deps(action_deps, n, "action")
        dep_sizes = tuple(state_sizes[j] for j in state_deps) + tuple(
            action_sizes[j] for j in action_deps
        )
        n_cells = indexing.space_size(dep_sizes)
        if n_cells > DEP_TABLE_CAP:
            raise EnumerationCapExceeded(
                f"kernel dependency space of agent {agent} has {n_cells} cells"
            )
        si = state_sizes[agent]
        table = np.zeros((n_cells, si))
        fill_lo_s = [0] * n
        fill_lo_a = [0] * n
        fill_hi_s = [m - 1 for m in state_sizes]
        fill_hi_a = [m - 1 for m in action_sizes]
        for row, cell in enumerate(indexing.enumerate_tuples(dep_sizes)):
            for fill_s, fill_a, check in ((fill_lo_s, fill_lo_a, False),
                                          (fill_hi_s, fill_hi_a, True)):
                s = list(fill_s)
                a = list(fill_a)
                for pos, j in enumerate(state_deps):
                    s[j] = cell[pos]
                for pos, j in enumerate(action_deps):
                    a[j] = cell[len(state_deps) + pos]
                dist = np.asarray(fn(tuple(s), tuple(a)), dtype=float)
                if dist.shape != (si,):
                    raise ValueError(
                        f"kernel of agent {agent} returned shape {dist.shape}, "
                        f"expected ({si},)"
                    )
                if check:
                    if not np.array_equal(dist, table[row]):
                        raise ValueError(
                            f"kernel of agent {agent} reads outside its declared "
                            f"dependency neighborhood"
                        )
                else:
                    table[row] = dist
        return cls(agent, state_deps, action_deps, dep_sizes, table)

    def row_index(self, s, a):
        cell = tuple(s[j] for j in self.state_deps) + tuple(
            a[j] for j in self.action_deps
        )
        return indexing.encode(cell, self.dep_sizes)

    def row_indices(self, S, A):
        """Vectorized row lookup; S, A are integer arrays (..., n)."""
        cols = [S[..., j] for j in self.state_deps] + [A[..., j] for j in self.action_deps]
        w = indexing.radix_weights(self.dep_sizes)
        idx = np.zeros(S.shape[:-1], dtype=np.int64)
        for c, wk in zip(cols, w):
            idx += c * wk
        return idx

    def distribution(self, s, a):
        return self.table[self.row_index(s, a)]


@dataclass(frozen=True)
class LocalReward:
    """Local reward reading a declared neighborhood (s_{N_i}, a_{N_i}).

    A dense table over the dependency cells is kept when the dependency space
    is small; otherwise the reward stays callable-only.
    """

    agent: int
    state_deps: tuple
    action_deps: tuple
    dep_sizes: tuple
    fn: object = field(compare=False)
    table: np.ndarray = None

    @classmethod
    def from_function(cls, fn, agent, state_deps, action_deps,
                      state_sizes, action_sizes):
        n = len(state_sizes)
        state_deps = _check_deps(state_deps, n, "state")
        action_deps = _check_deps(action_deps, n, "action")
        dep_sizes = tuple(state_sizes[j] for j in state_deps) + tuple(
            action_sizes[j] for j in action_deps
        )
        n_cells = indexing.space_size(dep_sizes)
        table = None
        if n_cells <= DEP_TABLE_CAP:
            table = np.array(
                [fn(cell[: len(state_deps)], cell[len(state_deps):])
                 for cell in indexing.enumerate_tuples(dep_sizes)],
                dtype=float,
            )
        return cls(agent, state_deps, action_deps, dep_sizes, fn, table)

    def value(self, s, a):
        """Reward at global state/action tuples."""
        cell_s = tuple(s[j] for j in self.state_deps)
        cell_a = tuple(a[j] for j in self.action_deps)
        if self.table is not None:
            return float(self.table[indexing.encode(cell_s + cell_a, self.dep_sizes)])
        return float(self.fn(cell_s, cell_a))

    @property
    def max_abs(self):
        if self.table is None:
            raise EnumerationCapExceeded(
                f"reward of agent {self.agent} is not tabulated"
            )
        return float(np.max(np.abs(self.table)))


@dataclass(frozen=True)
class FactoredCMDP:
    """Immutable networked MDP model."""

    graph: DependenceGraph
    local_state_sizes: tuple
    local_action_sizes: tuple
    kernels: tuple
    rewards: tuple
    initial_dist: tuple  # per-agent distributions over S_i (product form)
    gamma: float

    def __post_init__(self):
        n = self.graph.n
        if len(self.local_state_sizes) != n or len(self.local_action_sizes) != n:
            raise ValueError("space sizes must list one entry per agent")
        if len(self.kernels) != n or len(self.rewards) != n:
            raise ValueError("kernels and rewards must list one entry per agent")
        if not (0.0 <= self.gamma < 1.0):
            raise ValueError(f"gamma must be in [0, 1), got {self.gamma}")
        for i, (kern, dist) in enumerate(zip(self.kernels, self.initial_dist)):
            if kern.agent != i:
                raise ValueError(f"kernel at position {i} belongs to agent {kern.agent}")
            dist = np.asarray(dist)
            if dist.shape != (self.local_state_sizes[i],):
                raise ValueError(f"initial distribution of agent {i} has wrong shape")
            if np.any(dist < 0) or abs(dist.sum() - 1.0) > 1e-12:
                raise ValueError(f"initial distribution of agent {i} is not a distribution")

    @property
    def n_agents(self):
        return self.graph.n

    @property
    def n_states(self):
        return indexing.space_size(self.local_state_sizes)

    @property
    def n_actions(self):
        return indexing.space_size(self.local_action_sizes)

    @property
    def n_pairs(self):
        return self.n_states * self.n_actions

    def check_enumeration_cap(self, cap=DEFAULT_ENUMERATION_CAP):
        if self.n_pairs > cap:
            raise EnumerationCapExceeded(
                f"|S||A| = {self.n_pairs} exceeds the enumeration cap {cap}"
            )

    def initial_state_distribution(self):
        """Flat distribution over global states (product of local ones)."""
        rho = np.ones(1)
        for dist in self.initial_dist:
            rho = np.kron(rho, np.asarray(dist))
        return rho

    def _validate_pair(self, s, a):
        if len(s) != self.n_agents or len(a) != self.n_agents:
            raise ValueError("state/action tuple length does not match agent count")
        for i, (si, ai) in enumerate(zip(s, a)):
            if not (0 <= si < self.local_state_sizes[i]):
                raise ValueError(f"state {si} of agent {i} out of range")
            if not (0 <= ai < self.local_action_sizes[i]):
                raise ValueError(f"action {ai} of agent {i} out of range")


@dataclass(frozen=True)
class DecayProfile:
    """Transition-sensitivity matrix with its exponential decay certificate."""

    M: np.ndarray
    omega: float
    chi: float
    phi0: float
    contraction_ok: bool  # whether chi < 2 / gamma


def step(cmdp: FactoredCMDP, s, a, rng) -> tuple:
    """One factored transition: each next local state sampled independently.

    Inverse-CDF sampling in fixed state order; deterministic given rng state.
    """
    cmdp._validate_pair(s, a)
    u = rng.random(cmdp.n_agents)
    out = []
    for i, kern in enumerate(cmdp.kernels):
        cdf = np.cumsum(kern.distribution(s, a))
        out.append(int(np.searchsorted(cdf, u[i], side="right").clip(0, len(cdf) - 1)))
    return tuple(out)


def transition_distribution(cmdp: FactoredCMDP, s, a) -> np.ndarray:
    """Distribution over global next states: product of the local kernels."""
    dist = np.ones(1)
    for kern in cmdp.kernels:
        dist = np.kron(dist, kern.distribution(s, a))
    return dist


def global_transition_matrix(cmdp: FactoredCMDP, policy,
                             cap=DEFAULT_ENUMERATION_CAP) -> np.ndarray:
    """State-action pair transition matrix under a policy.

    Entry ((s', a'), (s, a)) equals P(s' | s, a) * pi(a' | s'); columns are
    probability distributions. Pair indices are s_index * |A| + a_index.
    """
    cmdp.check_enumeration_cap(cap)
    S, A = cmdp.n_states, cmdp.n_actions
    pi = policy.joint_action_probabilities()  # (S, A)
    P = np.zeros((S * A, S * A))
    states = indexing.enumerate_tuples(cmdp.local_state_sizes)
    actions = indexing.enumerate_tuples(cmdp.local_action_sizes)
    for si, s in enumerate(states):
        for ai, a in enumerate(actions):
            nxt = transition_distribution(cmdp, s, a)  # (S,)
            P[:, si * A + ai] = (nxt[:, None] * pi).ravel()
    return P


def compute_decay_matrix(cmdp: FactoredCMDP, chi: float,
                         omega_max: float = 50.0,
                         tol: float = 1e-6) -> DecayProfile:
    """Brute-force transition-sensitivity matrix and its decay exponent.

    M[i, j] is the largest L1 change in agent i's kernel when agent j's
    state/action varies with all other coordinates held fixed. The returned
    omega is the largest value (up to ``tol``, capped at ``omega_max``) such
    that max_i sum_j exp(omega * d(i, j)) * M[i, j] <= chi.
    """
    n = cmdp.n_agents
    M = np.zeros((n, n))
    for i, kern in enumerate(cmdp.kernels):
        deps = set(kern.state_deps) | set(kern.action_deps)
        for j in deps:
            j_positions = [p for p, dep in enumerate(kern.state_deps) if dep == j]
            j_positions += [
                len(kern.state_deps) + p
                for p, dep in enumerate(kern.action_deps) if dep == j
            ]
            other_positions = [p for p in range(len(kern.dep_sizes))
                               if p not in j_positions]
            j_sizes = [kern.dep_sizes[p] for p in j_positions]
            other_sizes = [kern.dep_sizes[p] for p in other_positions]
            j_combos = indexing.enumerate_tuples(j_sizes)
            best = 0.0
            for others in indexing.enumerate_tuples(other_sizes):
                rows = []
                for combo in j_combos:
                    cell = [0] * len(kern.dep_sizes)
                    for p, v in zip(other_positions, others):
                        cell[p] = v
                    for p, v in zip(j_positions, combo):
                        cell[p] = v
                    rows.append(kern.table[indexing.encode(cell, kern.dep_sizes)])
                for p in range(len(rows)):
                    for q in range(p + 1, len(rows)):
                        best = max(best, float(np.abs(rows[p] - rows[q]).sum()))
            M[i, j] = best

    dist = np.array([[cmdp.graph.distance(i, j) for j in range(n)] for i in range(n)],
                    dtype=float)

    def weighted_max(omega):
        expo = np.where(M > 0, np.minimum(omega * dist, 700.0), 0.0)
        return float(np.max(np.sum(np.exp(expo) * M, axis=1)))

    if weighted_max(0.0) > chi:
        raise ValueError(
            f"no omega > 0 satisfies the decay condition: even omega=0 gives "
            f"{weighted_max(0.0):.6g} > chi={chi:.6g}"
        )
    lo, hi = 0.0, omega_max
    if weighted_max(hi) <= chi:
        omega = hi
    else:
        while hi - lo > tol:
            mid = 0.5 * (lo + hi)
            if weighted_max(mid) <= chi:
                lo = mid
            else:
                hi = mid
        omega = lo
    if omega <= 0.0:
        raise ValueError("decay exponent collapsed to zero; chi is too tight")
    return DecayProfile(
        M=M,
        omega=omega,
        chi=chi,
        phi0=math.exp(-omega),
        contraction_ok=chi < 2.0 / cmdp.gamma if cmdp.gamma > 0 else True,
    )
