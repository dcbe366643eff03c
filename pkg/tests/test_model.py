import numpy as np
import pytest

from dfmap.model import (
    ModelOrder,
    Panel,
    Theta,
    build_state_space,
    common_component,
    standardize,
)


class TestModelOrder:
    def test_state_lag_depth(self):
        assert ModelOrder(n=3, r=1, p=0, q=1).s == 0
        assert ModelOrder(n=3, r=1, p=2, q=1).s == 2
        assert ModelOrder(n=3, r=1, p=0, q=3).s == 2
        assert ModelOrder(n=3, r=2, p=1, q=2).s == 1

    def test_derived_dimensions(self):
        order = ModelOrder(n=5, r=2, p=1, q=2)
        assert order.state_dim == 2 * (order.s + 1) == 4
        assert order.loading_dim == 4
        assert order.var_dim == 4

    @pytest.mark.parametrize("kwargs", [
        dict(n=0, r=1, p=0, q=1),
        dict(n=1, r=0, p=0, q=1),
        dict(n=1, r=1, p=-1, q=1),
        dict(n=1, r=1, p=0, q=0),
    ])
    def test_rejects_bad_dimensions(self, kwargs):
        with pytest.raises(ValueError):
            ModelOrder(**kwargs)


class TestStandardize:
    def test_two_point_variable(self):
        raw = np.array([[2.0, 4.0]])
        panel = standardize(raw)
        np.testing.assert_allclose(
            panel.values[0], [-0.7071067811865475, 0.7071067811865475])
        np.testing.assert_allclose(panel.scale, [np.sqrt(2.0)])
        np.testing.assert_allclose(panel.center, [3.0])

    def test_already_standardized_is_unchanged(self):
        raw = np.array([[-np.sqrt(0.5), np.sqrt(0.5)]])
        panel = standardize(raw)
        np.testing.assert_allclose(panel.values, raw, atol=1e-15)
        np.testing.assert_allclose(panel.scale, [1.0])
        np.testing.assert_allclose(panel.center, [0.0])

    def test_all_missing_variable_is_named(self):
        raw = np.array([[1.0, 2.0, 3.0], [np.nan, np.nan, np.nan]])
        with pytest.raises(ValueError, match="variable 1"):
            standardize(raw)

    def test_single_observation_rejected(self):
        raw = np.array([[1.0, np.nan, np.nan]])
        with pytest.raises(ValueError, match="variable 0"):
            standardize(raw)

    def test_zero_variance_rejected(self):
        raw = np.array([[2.0, 2.0, 2.0]])
        with pytest.raises(ValueError, match="zero sample variance"):
            standardize(raw)

    def test_round_trip(self, rng):
        raw = 5.0 + 3.0 * rng.standard_normal((4, 30))
        raw[rng.random((4, 30)) < 0.3] = np.nan
        panel = standardize(raw)
        restored = panel.to_original(panel.values)
        avail = panel.mask
        np.testing.assert_allclose(restored[avail], raw[avail], atol=1e-12)

    def test_no_demean_keeps_center_zero(self):
        raw = np.array([[2.0, 4.0, 6.0]])
        panel = standardize(raw, demean=False)
        np.testing.assert_allclose(panel.center, [0.0])
        np.testing.assert_allclose(panel.values * panel.scale[:, None], raw)

    def test_masked_cells_are_zeroed(self):
        raw = np.array([[1.0, np.nan, 3.0, 5.0]])
        panel = standardize(raw)
        assert panel.values[0, 1] == 0.0
        assert not panel.mask[0, 1]


class TestPanel:
    def test_counts(self):
        panel = Panel.of(np.array([[1.0, np.nan], [2.0, 3.0]]))
        np.testing.assert_array_equal(panel.counts(), [1, 2])

    def test_shape_validation(self):
        with pytest.raises(ValueError):
            Panel.of(np.ones(3))
        with pytest.raises(ValueError):
            Panel(np.ones((2, 2)), np.ones((2, 3), dtype=bool),
                  np.ones(2), np.zeros(2))

    def test_nonfinite_available_cell_rejected(self):
        values = np.array([[1.0, np.inf]])
        with pytest.raises(ValueError):
            Panel(values, np.array([[True, True]]), np.ones(1), np.zeros(1))


class TestTheta:
    def test_nonpositive_precisions_rejected(self):
        with pytest.raises(ValueError, match="positive"):
            Theta(Lambda=[[1.0]], Phi=[[0.5]], psi=[0.0], omega=[1.0])
        with pytest.raises(ValueError, match="positive"):
            Theta(Lambda=[[1.0]], Phi=[[0.5]], psi=[1.0], omega=[-2.0])

    def test_nonfinite_parameters_rejected(self):
        with pytest.raises(ValueError, match="finite"):
            Theta(Lambda=[[np.nan]], Phi=[[0.5]], psi=[1.0], omega=[1.0])

    def test_loading_block_extraction(self):
        order = ModelOrder(n=2, r=2, p=1, q=1)
        theta = Theta(Lambda=np.arange(8.0).reshape(2, 4),
                      Phi=np.zeros((2, 2)) + 0.1,
                      psi=np.ones(2), omega=np.ones(2))
        np.testing.assert_array_equal(theta.loading_block(1, order),
                                      [[2.0, 3.0], [6.0, 7.0]])


class TestBuildStateSpace:
    def test_minimal_case_no_padding(self):
        order = ModelOrder(n=1, r=1, p=0, q=1)
        theta = Theta(Lambda=[[1.0]], Phi=[[0.5]], psi=[1.0], omega=[1.0])
        ss = build_state_space(theta, order, sigma0=1e4)
        assert ss.Z.shape == (1, 1) and ss.Z[0, 0] == 1.0
        assert ss.Tmat.shape == (1, 1) and ss.Tmat[0, 0] == 0.5
        np.testing.assert_array_equal(ss.P0, [[1e4]])

    def test_loading_lag_block_layout(self, rng):
        order = ModelOrder(n=2, r=2, p=1, q=1)
        theta = Theta(
            Lambda=rng.standard_normal((2, 4)),
            Phi=rng.standard_normal((2, 2)),
            psi=np.ones(2), omega=np.ones(2),
        )
        ss = build_state_space(theta, order, sigma0=10.0)
        assert order.s == 1 and ss.Tmat.shape == (4, 4)
        np.testing.assert_array_equal(ss.Z, theta.Lambda)  # Z = [L0 L1], no padding
        np.testing.assert_array_equal(ss.Tmat[:2, :2], theta.Phi)
        np.testing.assert_array_equal(ss.Tmat[:2, 2:], np.zeros((2, 2)))
        np.testing.assert_array_equal(ss.Tmat[2:, :2], np.eye(2))
        np.testing.assert_array_equal(ss.Tmat[2:, 2:], np.zeros((2, 2)))

    def test_var_lag_padding(self, rng):
        order = ModelOrder(n=3, r=1, p=0, q=2)
        theta = Theta(
            Lambda=rng.standard_normal((3, 1)),
            Phi=np.array([[0.4, 0.2]]),
            psi=np.ones(3), omega=np.ones(1),
        )
        ss = build_state_space(theta, order, sigma0=10.0)
        assert order.s == 1
        np.testing.assert_array_equal(ss.Z[:, :1], theta.Lambda)
        np.testing.assert_array_equal(ss.Z[:, 1], np.zeros(3))
        np.testing.assert_array_equal(ss.Tmat[0], [0.4, 0.2])
        np.testing.assert_array_equal(ss.Tmat[1], [1.0, 0.0])

    def test_top_left_blocks_recover_parameters(self, rng):
        order = ModelOrder(n=4, r=2, p=2, q=2)
        theta = Theta(
            Lambda=rng.standard_normal((4, order.loading_dim)),
            Phi=rng.standard_normal((2, order.var_dim)),
            psi=np.ones(4), omega=np.ones(2),
        )
        ss = build_state_space(theta, order, sigma0=1.0)
        np.testing.assert_array_equal(ss.Z[:, :order.loading_dim], theta.Lambda)
        np.testing.assert_array_equal(ss.Tmat[:2, :order.var_dim], theta.Phi)

    def test_covariances_are_precision_inverses(self):
        order = ModelOrder(n=2, r=1, p=0, q=1)
        theta = Theta(Lambda=[[1.0], [2.0]], Phi=[[0.1]],
                      psi=[4.0, 0.5], omega=[2.0])
        ss = build_state_space(theta, order, sigma0=1.0)
        np.testing.assert_allclose(np.diag(ss.H), [0.25, 2.0])
        np.testing.assert_allclose(ss.Q, [[0.5]])

    def test_dimension_mismatch_rejected(self):
        order = ModelOrder(n=2, r=1, p=0, q=1)
        theta = Theta(Lambda=[[1.0]], Phi=[[0.5]], psi=[1.0], omega=[1.0])
        with pytest.raises(ValueError, match="shape"):
            build_state_space(theta, order, sigma0=1.0)


class TestCommonComponent:
    def test_identity_loading_reproduces_factors(self, rng):
        order = ModelOrder(n=2, r=2, p=0, q=1)
        theta = Theta(Lambda=np.eye(2), Phi=0.1 * np.eye(2).reshape(2, 2),
                      psi=np.ones(2), omega=np.ones(2))
        path = rng.standard_normal((2, 6))
        out = common_component(theta, path, order)
        np.testing.assert_array_equal(out, path)

    def test_lag_polynomial_hand_case(self):
        order = ModelOrder(n=1, r=1, p=1, q=1)
        theta = Theta(Lambda=[[1.0, 2.0]], Phi=[[0.0]], psi=[1.0], omega=[1.0])
        # factor path (f_0, f_1) = (1, 3): chi_1 = 1*3 + 2*1 = 5
        out = common_component(theta, np.array([[1.0, 3.0]]), order)
        np.testing.assert_allclose(out, [[5.0]])

    def test_zero_loadings_give_zero(self, rng):
        order = ModelOrder(n=3, r=1, p=1, q=1)
        theta = Theta(Lambda=np.zeros((3, 2)), Phi=[[0.5]],
                      psi=np.ones(3), omega=np.ones(1))
        out = common_component(theta, rng.standard_normal((1, 9)), order)
        np.testing.assert_array_equal(out, np.zeros((3, 8)))

    def test_insufficient_presample_rejected(self):
        order = ModelOrder(n=1, r=1, p=1, q=1)
        theta = Theta(Lambda=[[1.0, 2.0]], Phi=[[0.0]], psi=[1.0], omega=[1.0])
        with pytest.raises(ValueError, match="pre-sample"):
            common_component(theta, np.ones((1, 5)), order, n_presample=0)

    def test_rotation_invariance(self, rng):
        order = ModelOrder(n=4, r=2, p=1, q=1)
        theta = Theta(
            Lambda=rng.standard_normal((4, 4)),
            Phi=0.2 * rng.standard_normal((2, 2)),
            psi=np.ones(4), omega=np.ones(2),
        )
        path = rng.standard_normal((2, 10))
        G = rng.standard_normal((2, 2)) + 3.0 * np.eye(2)
        rotated_lambda = np.hstack([
            theta.Lambda[:, :2] @ G, theta.Lambda[:, 2:] @ G])
        theta_rot = Theta(Lambda=rotated_lambda, Phi=theta.Phi,
                          psi=theta.psi, omega=theta.omega)
        rotated_path = np.linalg.solve(G, path)
        base = common_component(theta, path, order)
        rotated = common_component(theta_rot, rotated_path, order)
        np.testing.assert_allclose(rotated, base, atol=1e-10)

    def test_rescaling_to_original_units(self):
        order = ModelOrder(n=2, r=1, p=0, q=1)
        theta = Theta(Lambda=[[1.0], [0.5]], Phi=[[0.0]],
                      psi=np.ones(2), omega=np.ones(1))
        path = np.array([[1.0, -1.0]])
        out = common_component(theta, path, order,
                               scale=np.array([2.0, 4.0]),
                               center=np.array([10.0, -10.0]))
        np.testing.assert_allclose(out, [[12.0, 8.0], [-8.0, -12.0]])
