"""Benchmark environments: a line of binary agents with one-directional
coupling, and a grid of wireless users contending for shared access points."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import DependenceGraph, line_graph
from .model import FactoredCMDP, TransitionKernel, LocalReward


@dataclass(frozen=True)
class SyntheticLineSpec:
    n: int
    gamma: float
    reward_head: float = 1.0
    reward_rest: float = 0.1

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("need at least 2 agents")
        if not (0.0 <= self.gamma < 1.0):
            raise ValueError(f"gamma must be in [0, 1), got {self.gamma}")


def synthetic_line(spec: SyntheticLineSpec) -> FactoredCMDP:
    """Chain of binary agents.

    Agent 0 copies its right neighbor's state. The last agent's next state
    equals its action. A middle agent reaches state 1 with probability 1 when
    it acts and its right neighbor is already at 1, with probability 0.8 when
    it acts alone, and never otherwise. Only state 1 is rewarded: the head
    agent gets ``reward_head``, everyone else ``reward_rest``. The chain
    starts at the all-zero state.
    """
    n = spec.n
    state_sizes = (2,) * n
    action_sizes = (2,) * n
    kernels = []
    for i in range(n):
        if i == 0:
            def fn(s, a, i=i):
                p1 = 1.0 if s[i + 1] == 1 else 0.0
                return (1.0 - p1, p1)
            sdeps, adeps = (i + 1,), ()
        elif i == n - 1:
            def fn(s, a, i=i):
                p1 = 1.0 if a[i] == 1 else 0.0
                return (1.0 - p1, p1)
            sdeps, adeps = (), (i,)
        else:
            def fn(s, a, i=i):
                if a[i] == 1:
                    p1 = 1.0 if s[i + 1] == 1 else 0.8
                else:
                    p1 = 0.0
                return (1.0 - p1, p1)
            sdeps, adeps = (i + 1,), (i,)
        kernels.append(TransitionKernel.from_function(
            fn, i, sdeps, adeps, state_sizes, action_sizes))

    rewards = []
    for i in range(n):
        r1 = spec.reward_head if i == 0 else spec.reward_rest
        rewards.append(LocalReward.from_function(
            lambda cs, ca, r1=r1: r1 if cs[0] == 1 else 0.0,
            i, (i,), (), state_sizes, action_sizes))

    initial = tuple(np.array([1.0, 0.0]) for _ in range(n))
    return FactoredCMDP(graph=line_graph(n),
                        local_state_sizes=state_sizes,
                        local_action_sizes=action_sizes,
                        kernels=tuple(kernels), rewards=tuple(rewards),
                        initial_dist=initial, gamma=spec.gamma)


@dataclass(frozen=True)
class WirelessGridSpec:
    """side^2 users on a grid, (side-1)^2 access points at the cell centers.

    ``p`` (per-user packet arrival) and ``q`` (per-point success) default to
    uniform draws from [0.3, 0.9] seeded by ``seed``, so an instance is fully
    determined by (side, deadline, seed).
    """

    side: int
    deadline: int
    gamma: float
    seed: int = 0
    p: tuple = None
    q: tuple = None

    def __post_init__(self):
        if self.side < 2 or self.deadline < 1:
            raise ValueError("need side >= 2 and deadline >= 1")
        if not (0.0 <= self.gamma < 1.0):
            raise ValueError(f"gamma must be in [0, 1), got {self.gamma}")
        for name, vals, m in (("p", self.p, self.side ** 2),
                              ("q", self.q, (self.side - 1) ** 2)):
            if vals is not None:
                if len(vals) != m:
                    raise ValueError(f"{name} must have {m} entries")
                if not all(0.0 < v < 1.0 for v in vals):
                    raise ValueError(f"{name} entries must lie in (0, 1)")

    @property
    def n_users(self):
        return self.side ** 2

    @property
    def n_points(self):
        return (self.side - 1) ** 2

    def probabilities(self):
        p, q = self.p, self.q
        if p is None or q is None:
            rng = np.random.default_rng(np.random.SeedSequence(self.seed))
            drawn_p = 0.3 + 0.6 * rng.random(self.n_users)
            drawn_q = 0.3 + 0.6 * rng.random(self.n_points)
            p = p if p is not None else tuple(drawn_p)
            q = q if q is not None else tuple(drawn_q)
        return np.asarray(p, dtype=float), np.asarray(q, dtype=float)


def _grid_access(side):
    """Per-user sorted list of reachable access points.

    User (r, c) sits at a lattice node; point (u, v) serves the four corner
    users of its cell, so user (r, c) reaches points with u in {r-1, r} and
    v in {c-1, c} that exist.
    """
    access = []
    for r in range(side):
        for c in range(side):
            pts = []
            for u in (r - 1, r):
                for v in (c - 1, c):
                    if 0 <= u < side - 1 and 0 <= v < side - 1:
                        pts.append(u * (side - 1) + v)
            access.append(tuple(sorted(pts)))
    return access


def wireless_grid(spec: WirelessGridSpec) -> FactoredCMDP:
    """Deadline-constrained random access.

    Local state is a d-bit queue: bit b set means a packet with b+1 steps of
    deadline left. Action 0 is idle; action k >= 1 transmits the
    earliest-deadline packet to the agent's k-th access point (a transmission
    from an empty queue is a no-op). The transmitted packet leaves the queue
    whether or not the point accepts it; the reward is the expected success
    q_y, zeroed when any other user with a nonempty queue transmits to the
    same point. Queue update order: remove the transmitted packet, decrement
    every deadline (a deadline-1 packet not sent expires), then a new packet
    arrives at deadline d with probability p_i. Queues start empty.
    """
    n = spec.n_users
    d = spec.deadline
    p, q = spec.probabilities()
    access = _grid_access(spec.side)
    state_sizes = (2 ** d,) * n
    action_sizes = tuple(1 + len(access[i]) for i in range(n))

    edges = set()
    users_of_point = [[] for _ in range(spec.n_points)]
    for i in range(n):
        for y in access[i]:
            users_of_point[y].append(i)
    for users in users_of_point:
        for ii in range(len(users)):
            for jj in range(ii + 1, len(users)):
                edges.add((users[ii], users[jj]))
    graph = DependenceGraph(n=n, edges=tuple(sorted(edges)))

    top_bit = 1 << (d - 1)

    def kernel_fn(s, a, i):
        queue = s[i]
        if a[i] > 0 and queue > 0:
            queue &= queue - 1  # drop the earliest (lowest set) bit
        queue >>= 1  # deadlines tick down; deadline-1 packets expire
        dist = np.zeros(2 ** d)
        dist[queue | top_bit] += p[i]
        dist[queue] += 1.0 - p[i]
        return dist

    kernels = tuple(
        TransitionKernel.from_function(
            lambda s, a, i=i: kernel_fn(s, a, i), i, (i,), (i,),
            state_sizes, action_sizes)
        for i in range(n)
    )

    def reward_fn(cell_s, cell_a, i, deps):
        pos = {j: k for k, j in enumerate(deps)}
        if cell_a[pos[i]] == 0 or cell_s[pos[i]] == 0:
            return 0.0
        y = access[i][cell_a[pos[i]] - 1]
        for j in deps:
            if j == i or cell_s[pos[j]] == 0 or cell_a[pos[j]] == 0:
                continue
            if access[j][cell_a[pos[j]] - 1] == y:
                return 0.0  # collision at the shared point
        return float(q[y])

    rewards = []
    for i in range(n):
        deps = tuple(sorted({i} | set(graph.neighbors(i))))
        rewards.append(LocalReward.from_function(
            lambda cs, ca, i=i, deps=deps: reward_fn(cs, ca, i, deps),
            i, deps, deps, state_sizes, action_sizes))

    initial = []
    for i in range(n):
        dist = np.zeros(2 ** d)
        dist[0] = 1.0
        initial.append(dist)
    return FactoredCMDP(graph=graph, local_state_sizes=state_sizes,
                        local_action_sizes=action_sizes, kernels=kernels,
                        rewards=tuple(rewards), initial_dist=tuple(initial),
                        gamma=spec.gamma)
