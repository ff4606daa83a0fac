import numpy as np
import pytest

from pdmarl.occupancy import EMPIRICAL_H, EXACT_INFINITE, LocalOccupancy
from pdmarl.utilities import (CONSTRAINT, ENTROPY, ENTROPY_FLOOR, L2_ACTION,
                              LINEAR, GeneralUtility, fd_gradient,
                              shadow_reward, utility_value)


def occ(table, convention=EMPIRICAL_H):
    return LocalOccupancy(0, np.asarray(table, dtype=float), convention)


class TestValues:
    def test_linear_inner_product(self):
        u = GeneralUtility(kind=LINEAR, reward=np.array([[1.0, 2.0],
                                                         [3.0, 4.0]]))
        assert utility_value(u, occ([[1, 0], [0, 0.5]])) == pytest.approx(3.0)

    def test_linear_all_ones_gives_mass(self):
        u = GeneralUtility(kind=LINEAR, reward=np.ones((2, 2)))
        table = np.full((2, 2), 2.5)  # mass 10 = 1/(1-0.9)
        assert utility_value(u, occ(table, EXACT_INFINITE)) == pytest.approx(10.0)

    def test_entropy_uniform_two_states(self):
        u = GeneralUtility(kind=ENTROPY, gamma=0.0)
        assert utility_value(u, occ([[0.5], [0.5]])) == pytest.approx(
            np.log(2.0))

    def test_entropy_depends_only_on_state_marginal(self):
        u = GeneralUtility(kind=ENTROPY, gamma=0.3)
        a = occ([[0.4, 0.2], [0.1, 0.3]])
        b = occ([[0.6, 0.0], [0.0, 0.4]])  # same row sums
        assert utility_value(u, a) == pytest.approx(utility_value(u, b))

    def test_l2_point_mass(self):
        u = GeneralUtility(kind=L2_ACTION, gamma=0.0)
        table = np.zeros((3, 2))
        table[1, 0] = 1.0
        assert utility_value(u, occ(table)) == pytest.approx(0.5)

    def test_l2_depends_only_on_action_marginal(self):
        u = GeneralUtility(kind=L2_ACTION, gamma=0.4)
        a = occ([[0.4, 0.2], [0.1, 0.3]])
        b = occ([[0.5, 0.5], [0.0, 0.0]])
        assert utility_value(u, a) == pytest.approx(utility_value(u, b))

    def test_constraint_subtracts_threshold(self):
        base = GeneralUtility(kind=ENTROPY, gamma=0.0)
        con = base.as_constraint(0.25)
        table = occ([[0.5], [0.5]])
        assert utility_value(con, table) == pytest.approx(
            utility_value(base, table) - 0.25)
        assert con.role == CONSTRAINT

    def test_nan_occupancy_rejected(self):
        u = GeneralUtility(kind=LINEAR, reward=np.ones((1, 1)))
        bad = LocalOccupancy(0, np.array([[0.0]]), EMPIRICAL_H)
        bad.table[0, 0] = np.nan
        with pytest.raises(ValueError, match="NaN"):
            utility_value(u, bad)

    def test_linear_requires_reward(self):
        with pytest.raises(ValueError):
            GeneralUtility(kind=LINEAR)

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError):
            GeneralUtility(kind="quadratic")


class TestShadowRewards:
    def test_linear_shadow_is_reward(self):
        r = np.array([[1.0, -2.0], [0.5, 0.0]])
        u = GeneralUtility(kind=LINEAR, reward=r)
        np.testing.assert_array_equal(
            shadow_reward(u, occ(np.ones((2, 2)))).table, r)

    def test_entropy_uniform_analytic(self):
        u = GeneralUtility(kind=ENTROPY, gamma=0.0)
        sr = shadow_reward(u, occ([[0.5], [0.5]]))
        np.testing.assert_allclose(sr.table, -(np.log(0.5) + 1.0))

    def test_entropy_floor_keeps_gradient_finite(self):
        u = GeneralUtility(kind=ENTROPY, gamma=0.99)
        sr = shadow_reward(u, occ([[1.0, 0.0], [0.0, 0.0]]))
        bound = (1.0 - 0.99) * (abs(np.log(ENTROPY_FLOOR)) + 1.0)
        assert np.all(np.isfinite(sr.table))
        assert sr.inf_norm <= bound + 1e-12

    def test_l2_shadow_is_action_marginal(self):
        u = GeneralUtility(kind=L2_ACTION, gamma=0.5)
        table = np.array([[0.4, 0.1], [0.2, 0.3]])
        sr = shadow_reward(u, occ(table))
        m = table.sum(axis=0)
        np.testing.assert_allclose(sr.table, 0.25 * m[None, :].repeat(2, 0))

    def test_threshold_does_not_shift_gradient(self):
        base = GeneralUtility(kind=ENTROPY, gamma=0.2)
        con = base.as_constraint(1.5)
        table = occ([[0.3, 0.1], [0.2, 0.4]])
        np.testing.assert_array_equal(shadow_reward(base, table).table,
                                      shadow_reward(con, table).table)


class TestFiniteDifferenceOracle:
    def test_linear_exact_for_any_step(self):
        r = np.array([[2.0, -1.0], [0.3, 0.7]])
        u = GeneralUtility(kind=LINEAR, reward=r)
        for h in (1e-4, 1e-6):
            fd = fd_gradient(u, occ(np.full((2, 2), 0.4)), h=h)
            np.testing.assert_allclose(fd.table, r, atol=1e-10)

    def test_entropy_matches_analytic_on_uniform(self):
        u = GeneralUtility(kind=ENTROPY, gamma=0.0)
        table = occ([[0.25, 0.25], [0.25, 0.25]])
        fd = fd_gradient(u, table, h=1e-6)
        sr = shadow_reward(u, table)
        np.testing.assert_allclose(fd.table, sr.table, rtol=1e-5)

    def test_l2_matches_analytic_on_point_mass(self):
        u = GeneralUtility(kind=L2_ACTION, gamma=0.0)
        table = np.zeros((2, 2))
        table[0, 1] = 1.0
        fd = fd_gradient(u, occ(table), h=1e-6)
        sr = shadow_reward(u, occ(table))
        np.testing.assert_allclose(fd.table, sr.table, atol=1e-8)

    def test_all_families_on_random_occupancies(self):
        rng = np.random.default_rng(np.random.SeedSequence(31))
        fams = [GeneralUtility(kind=LINEAR,
                               reward=rng.normal(size=(3, 2))),
                GeneralUtility(kind=ENTROPY, gamma=0.9),
                GeneralUtility(kind=L2_ACTION, gamma=0.9)]
        for trial in range(100):
            table = rng.random((3, 2)) + 0.05
            u = fams[trial % 3]
            sr = shadow_reward(u, occ(table))
            fd = fd_gradient(u, occ(table), h=1e-6)
            num = np.abs(sr.table - fd.table).max()
            den = max(np.abs(fd.table).max(), 1e-12)
            assert num / den < 1e-5

    def test_positive_step_required(self):
        u = GeneralUtility(kind=ENTROPY, gamma=0.5)
        with pytest.raises(ValueError):
            fd_gradient(u, occ([[0.5], [0.5]]), h=0.0)
