"""Tabular softmax policies over k-hop neighborhood states."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .graph import DependenceGraph, khop_neighborhood
from . import indexing

MAX_TABLE_ENTRIES = 10**6


def _softmax_rows(theta):
    z = theta - theta.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass(frozen=True)
class KHopPolicy:
    """Per-agent softmax parameter tables indexed by neighborhood state.

    Parameters live in the box [-theta_bound, theta_bound]; rows are indexed
    by the mixed-radix encoding of the neighborhood state (ascending agent
    order), columns by the local action.
    """

    graph: DependenceGraph
    state_sizes: tuple
    action_sizes: tuple
    kappa: int
    theta_bound: float
    theta: tuple  # per-agent arrays of shape (n_nbhd_states, A_i)

    def __post_init__(self):
        for i, tab in enumerate(self.theta):
            expect = (self.n_nbhd_states(i), self.action_sizes[i])
            if tab.shape != expect:
                raise ValueError(
                    f"theta table of agent {i} has shape {tab.shape}, expected {expect}"
                )
            if np.any(np.abs(tab) > self.theta_bound + 1e-12):
                raise ValueError(f"theta of agent {i} leaves the parameter box")

    # -- construction ------------------------------------------------------

    @classmethod
    def zeros(cls, graph, state_sizes, action_sizes, kappa, theta_bound=50.0):
        tables = []
        for i in range(graph.n):
            nbhd = khop_neighborhood(graph, i, kappa)
            rows = indexing.space_size([state_sizes[j] for j in nbhd])
            if rows * action_sizes[i] > MAX_TABLE_ENTRIES:
                raise ValueError(
                    f"policy table of agent {i} would have "
                    f"{rows * action_sizes[i]} entries"
                )
            tables.append(np.zeros((rows, action_sizes[i])))
        return cls(graph, tuple(state_sizes), tuple(action_sizes), kappa,
                   float(theta_bound), tuple(tables))

    @classmethod
    def random(cls, graph, state_sizes, action_sizes, kappa, rng,
               scale=1.0, theta_bound=50.0):
        base = cls.zeros(graph, state_sizes, action_sizes, kappa, theta_bound)
        tables = tuple(
            np.clip(rng.normal(scale=scale, size=t.shape), -theta_bound, theta_bound)
            for t in base.theta
        )
        return base.with_theta(tables)

    def with_theta(self, tables):
        clipped = tuple(np.clip(np.asarray(t, dtype=float),
                                -self.theta_bound, self.theta_bound)
                        for t in tables)
        return KHopPolicy(self.graph, self.state_sizes, self.action_sizes,
                          self.kappa, self.theta_bound, clipped)

    # -- indexing ----------------------------------------------------------

    def neighborhood(self, i):
        return khop_neighborhood(self.graph, i, self.kappa)

    def nbhd_state_sizes(self, i):
        return tuple(self.state_sizes[j] for j in self.neighborhood(i))

    def n_nbhd_states(self, i):
        return indexing.space_size(self.nbhd_state_sizes(i))

    def encode_nbhd_state(self, i, s_nbhd):
        return indexing.encode(s_nbhd, self.nbhd_state_sizes(i))

    def nbhd_state_from_global(self, i, s):
        return tuple(s[j] for j in self.neighborhood(i))

    # -- distributions -----------------------------------------------------

    def action_probabilities(self, i, s_nbhd) -> np.ndarray:
        """Softmax over actions for one neighborhood state (stable form)."""
        row = self.theta[i][self.encode_nbhd_state(i, s_nbhd)]
        return _softmax_rows(row)

    def prob_table(self, i) -> np.ndarray:
        """All action distributions of agent i, shape (n_nbhd_states, A_i)."""
        return _softmax_rows(self.theta[i])

    def score(self, i, s_nbhd, a_i) -> np.ndarray:
        """Gradient of log pi_i(a_i | s_nbhd) w.r.t. the theta_i table.

        Nonzero only in the row of s_nbhd: entry b is 1{b == a_i} - pi(b).
        """
        if not (0 <= a_i < self.action_sizes[i]):
            raise ValueError(f"action {a_i} out of range for agent {i}")
        out = np.zeros_like(self.theta[i])
        row = self.encode_nbhd_state(i, s_nbhd)
        out[row] = -self.action_probabilities(i, s_nbhd)
        out[row, a_i] += 1.0
        return out

    def sample_action(self, i, s_nbhd, rng) -> int:
        """Inverse-CDF sample in fixed action order."""
        cdf = np.cumsum(self.action_probabilities(i, s_nbhd))
        u = rng.random()
        return int(np.searchsorted(cdf, u, side="right").clip(0, len(cdf) - 1))

    def log_joint_probability(self, s, a) -> float:
        """Log probability of the global action under policy factorization."""
        total = 0.0
        for i in range(self.graph.n):
            probs = self.action_probabilities(i, self.nbhd_state_from_global(i, s))
            total += float(np.log(probs[a[i]]))
        return total

    def joint_action_probabilities(self) -> np.ndarray:
        """Matrix pi(a | s) over global states/actions (enumeration only)."""
        S = indexing.space_size(self.state_sizes)
        A = indexing.space_size(self.action_sizes)
        tables = [self.prob_table(i) for i in range(self.graph.n)]
        out = np.empty((S, A))
        for si, s in enumerate(indexing.enumerate_tuples(self.state_sizes)):
            row = np.ones(1)
            for i in range(self.graph.n):
                enc = self.encode_nbhd_state(i, self.nbhd_state_from_global(i, s))
                row = np.kron(row, tables[i][enc])
            out[si] = row
        return out

    # -- updates -----------------------------------------------------------

    def project_params(self, proposed) -> "KHopPolicy":
        """Euclidean projection onto the parameter box (coordinatewise clamp)."""
        return self.with_theta(proposed)


def induced_khop_policy(policy: KHopPolicy, kappa: int, anchor_state) -> KHopPolicy:
    """Restrict a wider policy to radius ``kappa`` by freezing distant states.

    Each agent's new table reads only the states within distance kappa; the
    states of the remaining agents in its original neighborhood are fixed at
    ``anchor_state``.
    """
    if kappa > policy.kappa:
        raise ValueError("induced policy must have a smaller or equal radius")
    new = KHopPolicy.zeros(policy.graph, policy.state_sizes, policy.action_sizes,
                           kappa, policy.theta_bound)
    tables = []
    for i in range(policy.graph.n):
        old_nbhd = policy.neighborhood(i)
        new_nbhd = new.neighborhood(i)
        new_sizes = new.nbhd_state_sizes(i)
        tab = np.empty_like(new.theta[i])
        for row, s_new in enumerate(indexing.enumerate_tuples(new_sizes)):
            lookup = dict(zip(new_nbhd, s_new))
            s_old = tuple(lookup.get(j, anchor_state[j]) for j in old_nbhd)
            tab[row] = policy.theta[i][policy.encode_nbhd_state(i, s_old)]
        tables.append(tab)
    return new.with_theta(tables)


def policy_state_sensitivity(policy: KHopPolicy, kappa: int) -> float:
    """Largest L1 change of any local policy when states outside the
    distance-``kappa`` ball vary (brute force over neighborhood states)."""
    worst = 0.0
    for i in range(policy.graph.n):
        nbhd = policy.neighborhood(i)
        inner = set(khop_neighborhood(policy.graph, i, kappa))
        sizes = policy.nbhd_state_sizes(i)
        probs = policy.prob_table(i)
        groups = {}
        for row, s in enumerate(indexing.enumerate_tuples(sizes)):
            key = tuple(v for j, v in zip(nbhd, s) if j in inner)
            groups.setdefault(key, []).append(row)
        for rows in groups.values():
            for p in range(len(rows)):
                for q in range(p + 1, len(rows)):
                    diff = float(np.abs(probs[rows[p]] - probs[rows[q]]).sum())
                    worst = max(worst, diff)
    return worst


# -- checkpoint format -----------------------------------------------------

def save_policy(policy: KHopPolicy, path):
    """Flat (agent, encoded neighborhood state, action, value) records."""
    edges = ";".join(f"{u}-{v}" for u, v in sorted(policy.graph.edges))
    with open(path, "w", newline="") as fh:
        fh.write(
            "# pdmarl-policy v1"
            f" kappa={policy.kappa}"
            f" theta_bound={policy.theta_bound!r}"
            f" state_sizes={','.join(map(str, policy.state_sizes))}"
            f" action_sizes={','.join(map(str, policy.action_sizes))}"
            f" edges={edges}\n"
        )
        writer = csv.writer(fh)
        writer.writerow(["agent", "state", "action", "value"])
        for i, tab in enumerate(policy.theta):
            for row in range(tab.shape[0]):
                for a in range(tab.shape[1]):
                    writer.writerow([i, row, a, repr(float(tab[row, a]))])


def load_policy(path) -> KHopPolicy:
    with open(path) as fh:
        header = fh.readline().strip()
        if not header.startswith("# pdmarl-policy v1"):
            raise ValueError(f"unrecognized policy checkpoint header: {header!r}")
        meta = dict(tok.split("=", 1) for tok in header.split()[3:])
        state_sizes = tuple(int(x) for x in meta["state_sizes"].split(","))
        action_sizes = tuple(int(x) for x in meta["action_sizes"].split(","))
        edges = frozenset(
            tuple(int(x) for x in e.split("-"))
            for e in meta["edges"].split(";") if e
        )
        graph = DependenceGraph(len(state_sizes), edges)
        policy = KHopPolicy.zeros(graph, state_sizes, action_sizes,
                                  int(meta["kappa"]), float(meta["theta_bound"]))
        tables = [t.copy() for t in policy.theta]
        reader = csv.reader(fh)
        next(reader)  # column header
        for agent, row, a, value in reader:
            tables[int(agent)][int(row), int(a)] = float(value)
    return policy.with_theta(tables)
