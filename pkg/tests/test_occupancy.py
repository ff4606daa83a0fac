import numpy as np
import pytest

from pdmarl.graph import DependenceGraph
from pdmarl.model import (FactoredCMDP, TransitionKernel, LocalReward,
                          global_transition_matrix)
from pdmarl.policy import KHopPolicy
from pdmarl.sampling import TrajectoryBatch, sample_trajectories
from pdmarl.occupancy import (EMPIRICAL_H, LocalOccupancy,
                              empirical_mass, estimate_local_occupancy,
                              exact_global_occupancy, flow_balance_residual,
                              marginalize, state_marginal)
from pdmarl.envs import SyntheticLineSpec, synthetic_line


def chain(n, gamma=0.9):
    return synthetic_line(SyntheticLineSpec(n=n, gamma=gamma))


def uniform_policy(cmdp, kappa=1):
    return KHopPolicy.zeros(cmdp.graph, cmdp.local_state_sizes,
                            cmdp.local_action_sizes, kappa)


def single_cell_mdp(gamma, reward=1.0):
    g = DependenceGraph(1, frozenset())
    kern = TransitionKernel.from_function(lambda s, a: (1.0,), 0, (0,), (0,),
                                          (1,), (1,))
    rew = LocalReward.from_function(lambda cs, ca: reward, 0, (0,), (),
                                    (1,), (1,))
    return FactoredCMDP(graph=g, local_state_sizes=(1,),
                        local_action_sizes=(1,), kernels=(kern,),
                        rewards=(rew,), initial_dist=(np.array([1.0]),),
                        gamma=gamma)


def always_one_policy(cmdp, kappa=1):
    pol = uniform_policy(cmdp, kappa)
    tables = []
    for tab in pol.theta:
        t = np.zeros_like(tab)
        t[:, 1] = 50.0
        t[:, 0] = -50.0
        tables.append(t)
    return pol.with_theta(tables)


class TestEmpiricalEstimate:
    def test_single_trajectory_by_hand(self):
        # visits (s,a) = (0,0) then (1,0) with gamma = 0.5
        states = np.array([[[0], [1]]])
        actions = np.array([[[0], [0]]])
        batch = TrajectoryBatch(states=states, actions=actions)
        occ = estimate_local_occupancy(batch, 0, 0.5, 2, 2, 2)
        np.testing.assert_allclose(occ.table, [[1.0, 0.0], [0.5, 0.0]])
        assert occ.mass == pytest.approx(1.5)
        assert occ.mass_convention == EMPIRICAL_H

    def test_identical_trajectories_average_to_one(self):
        states = np.repeat(np.array([[[0], [1], [1]]]), 7, axis=0)
        actions = np.zeros_like(states)
        batch = TrajectoryBatch(states=states, actions=actions)
        one = estimate_local_occupancy(
            TrajectoryBatch(states=states[:1], actions=actions[:1]),
            0, 0.9, 3, 2, 1)
        many = estimate_local_occupancy(batch, 0, 0.9, 3, 2, 1)
        np.testing.assert_allclose(many.table, one.table)

    def test_mass_identity_bit_exact(self):
        m = chain(3, gamma=0.95)
        batch = sample_trajectories(m, uniform_policy(m), 13, 40,
                                    np.random.default_rng(3))
        for i in range(3):
            occ = estimate_local_occupancy(batch, i, 0.95, 40, 2, 2)
            assert occ.mass == pytest.approx(empirical_mass(0.95, 40),
                                             abs=1e-12)

    def test_horizon_mismatch_rejected(self):
        m = chain(2)
        batch = sample_trajectories(m, uniform_policy(m), 2, 10,
                                    np.random.default_rng(0))
        with pytest.raises(ValueError, match="horizon"):
            estimate_local_occupancy(batch, 0, 0.9, 20, 2, 2)

    def test_deterministic_across_runs(self):
        m = chain(3)
        tabs = []
        for _ in range(2):
            rng = np.random.default_rng(np.random.SeedSequence(9))
            batch = sample_trajectories(m, uniform_policy(m), 50, 30, rng)
            occ = estimate_local_occupancy(batch, 1, 0.9, 30, 2, 2)
            tabs.append(occ.table)
        np.testing.assert_array_equal(tabs[0], tabs[1])


class TestExactOccupancy:
    def test_single_cell_geometric_series(self):
        m = single_cell_mdp(0.9)
        occ = exact_global_occupancy(m, uniform_policy(m, kappa=0))
        assert occ.table[0] == pytest.approx(10.0)

    def test_absorbing_two_state_chain(self):
        # s0 -> s1 -> s1 with one action and gamma = 0.5
        g = DependenceGraph(1, frozenset())
        kern = TransitionKernel.from_function(lambda s, a: (0.0, 1.0),
                                              0, (0,), (), (2,), (1,))
        rew = LocalReward.from_function(lambda cs, ca: 0.0, 0, (0,), (),
                                        (2,), (1,))
        m = FactoredCMDP(graph=g, local_state_sizes=(2,),
                         local_action_sizes=(1,), kernels=(kern,),
                         rewards=(rew,),
                         initial_dist=(np.array([1.0, 0.0]),), gamma=0.5)
        occ = exact_global_occupancy(m, uniform_policy(m, kappa=0))
        np.testing.assert_allclose(occ.table, [1.0, 1.0])

    def test_mass_and_flow_balance(self):
        m = chain(3, gamma=0.85)
        rng = np.random.default_rng(np.random.SeedSequence(5))
        pol = KHopPolicy.random(m.graph, m.local_state_sizes,
                                m.local_action_sizes, 1, rng, scale=0.7)
        occ = exact_global_occupancy(m, pol)
        assert occ.mass == pytest.approx(1.0 / 0.15, rel=1e-10)
        assert flow_balance_residual(m, pol, occ) < 1e-8

    def test_chain_always_act_one_against_power_series(self):
        # independent oracle: truncated Neumann series of the same system
        m = chain(2)
        pol = always_one_policy(m)
        occ = exact_global_occupancy(m, pol)
        P = global_transition_matrix(m, pol)
        rho = m.initial_state_distribution()
        pi = pol.joint_action_probabilities()
        vec = (rho[:, None] * pi).ravel()
        total = np.zeros_like(vec)
        for _ in range(500):
            total += vec
            vec = m.gamma * (P @ vec)
        np.testing.assert_allclose(occ.table, total, atol=1e-8)
        assert occ.table.shape == (16,)


class TestMarginals:
    def test_single_agent_identity(self):
        m = single_cell_mdp(0.9)
        occ = exact_global_occupancy(m, uniform_policy(m, kappa=0))
        loc = marginalize(occ, 0)
        np.testing.assert_allclose(loc.table, [[10.0]])

    def test_mass_preserved(self):
        m = chain(3)
        occ = exact_global_occupancy(m, uniform_policy(m))
        for i in range(3):
            assert marginalize(occ, i).mass == pytest.approx(occ.mass)

    def test_chain_marginal_matches_direct_sum(self):
        m = chain(2)
        occ = exact_global_occupancy(m, uniform_policy(m))
        shaped = occ.table.reshape(2, 2, 2, 2)  # (s0, s1, a0, a1)
        expected = shaped.sum(axis=(1, 3))
        np.testing.assert_allclose(marginalize(occ, 0).table, expected)

    def test_state_marginal_sums_to_one(self):
        m = chain(3, gamma=0.7)
        occ = exact_global_occupancy(m, uniform_policy(m))
        for i in range(3):
            d = state_marginal(marginalize(occ, i), 0.7)
            assert d.probs.sum() == pytest.approx(1.0)

    def test_point_mass_marginal(self):
        table = np.zeros((3, 2))
        table[2, 1] = 5.0
        occ = LocalOccupancy(0, table, EMPIRICAL_H)
        d = state_marginal(occ, 0.8)
        np.testing.assert_allclose(d.probs, [0.0, 0.0, 1.0])

    def test_empirical_state_marginal_mass(self):
        m = chain(2, gamma=0.99)
        batch = sample_trajectories(m, uniform_policy(m), 20, 100,
                                    np.random.default_rng(1))
        occ = estimate_local_occupancy(batch, 0, 0.99, 100, 2, 2)
        d = state_marginal(occ, 0.99)
        assert d.probs.sum() == pytest.approx(1.0 - 0.99 ** 100)


class TestConvergence:
    def test_empirical_matches_exact_moderate_batch(self):
        m = chain(2)
        pol = uniform_policy(m)
        occ = exact_global_occupancy(m, pol)
        batch = sample_trajectories(m, pol, 2000, 100,
                                    np.random.default_rng(
                                        np.random.SeedSequence(17)))
        for i in range(2):
            emp = estimate_local_occupancy(batch, i, 0.9, 100, 2, 2)
            exact = marginalize(occ, i)
            err = np.linalg.norm(emp.table - exact.table)
            assert err < 0.12

    def test_error_shrinks_with_horizon(self):
        # expectation of the H-truncated estimate misses gamma^H / (1-gamma)
        m = chain(2, gamma=0.9)
        pol = uniform_policy(m)
        exact = marginalize(exact_global_occupancy(m, pol), 0).table
        errs = []
        for H in (5, 20, 80):
            batch = sample_trajectories(m, pol, 4000, H,
                                        np.random.default_rng(
                                            np.random.SeedSequence(23)))
            emp = estimate_local_occupancy(batch, 0, 0.9, H, 2, 2)
            errs.append(float(np.abs(emp.table - exact).sum()))
        assert errs[0] > errs[1] > errs[2]
