import math
import unittest

import numpy as np

from msgp_bench.kernel import (
    DimensionError,
    Hyperparameters,
    KernelError,
    cov_gradients,
    cov_matrix,
    default_hyperparameters,
    jitter,
    se_kernel,
    se_kernel_grad,
)


def _hyper(d: int = 2) -> Hyperparameters:
    return Hyperparameters(1.7, 0.05, np.linspace(0.6, 1.4, d))


class TestKernel(unittest.TestCase):
    def test_se_kernel_is_symmetric_and_peaks_at_signal_variance(self) -> None:
        h = _hyper(3)
        a = np.array([0.1, -0.4, 2.0])
        b = np.array([1.0, 0.3, 1.5])
        self.assertAlmostEqual(se_kernel(a, b, h), se_kernel(b, a, h), places=15)
        self.assertAlmostEqual(se_kernel(a, a, h), h.signal_variance, places=15)
        self.assertLess(se_kernel(a, b, h), h.signal_variance)

    def test_se_kernel_matches_closed_form(self) -> None:
        h = Hyperparameters(2.0, 0.1, np.array([0.5, 2.0]))
        value = se_kernel([1.0, 1.0], [0.0, 0.0], h)
        self.assertAlmostEqual(value, 2.0 * math.exp(-0.5 * (4.0 + 0.25)), places=14)

    def test_isotropic_length_scale_broadcasts(self) -> None:
        iso = Hyperparameters(1.0, 0.1, np.array([0.8]))
        ard = Hyperparameters(1.0, 0.1, np.array([0.8, 0.8, 0.8]))
        X = np.random.default_rng(0).normal(size=(6, 3))
        np.testing.assert_allclose(cov_matrix(X, X, iso), cov_matrix(X, X, ard), atol=1e-15)

    def test_cov_matrix_matches_pointwise_kernel(self) -> None:
        h = _hyper(2)
        rng = np.random.default_rng(1)
        X, Z = rng.normal(size=(4, 2)), rng.normal(size=(3, 2))
        K = cov_matrix(X, Z, h)
        for i in range(4):
            for j in range(3):
                self.assertAlmostEqual(K[i, j], se_kernel(X[i], Z[j], h), places=14)

    def test_dimension_mismatch_raises(self) -> None:
        h = _hyper(2)
        with self.assertRaises(DimensionError):
            se_kernel([0.0, 1.0], [0.0, 1.0, 2.0], h)
        with self.assertRaises(DimensionError):
            cov_matrix(np.zeros((3, 3)), np.zeros((2, 3)), h)
        self.assertTrue(issubclass(DimensionError, KernelError))

    def test_log_round_trip(self) -> None:
        h = _hyper(3)
        back = Hyperparameters.from_log(h.to_log())
        self.assertAlmostEqual(back.signal_variance, h.signal_variance, places=12)
        self.assertAlmostEqual(back.noise_variance, h.noise_variance, places=12)
        np.testing.assert_allclose(back.length_scales, h.length_scales, rtol=1e-12)

    def test_non_positive_hyperparameters_rejected(self) -> None:
        with self.assertRaises(ValueError):
            Hyperparameters(0.0, 0.1, np.array([1.0]))
        with self.assertRaises(ValueError):
            Hyperparameters(1.0, 0.1, np.array([1.0, -2.0]))

    def test_pointwise_gradient_matches_finite_difference(self) -> None:
        h = _hyper(2)
        x, z = np.array([0.3, -0.2]), np.array([-0.5, 0.9])
        grad = se_kernel_grad(x, z, h)
        eps = 1e-6
        theta = h.to_log()
        for i in range(theta.size):
            up, down = theta.copy(), theta.copy()
            up[i] += eps
            down[i] -= eps
            fd = (
                se_kernel(x, z, Hyperparameters.from_log(up))
                - se_kernel(x, z, Hyperparameters.from_log(down))
            ) / (2 * eps)
            self.assertAlmostEqual(grad.log_hyper[i], fd, places=7)
        fd_x2 = np.zeros(2)
        for k in range(2):
            step = np.zeros(2)
            step[k] = eps
            fd_x2[k] = (se_kernel(x, z + step, h) - se_kernel(x, z - step, h)) / (2 * eps)
        np.testing.assert_allclose(grad.x2, fd_x2, atol=1e-8)

    def test_cov_gradients_match_finite_difference_of_noisy_covariance(self) -> None:
        X = np.random.default_rng(2).normal(size=(5, 2))
        for h in (_hyper(2), Hyperparameters(1.3, 0.2, np.array([0.7]))):
            theta = h.to_log()
            grads = cov_gradients(X, h)
            self.assertEqual(len(grads), theta.size)

            def noisy(t: np.ndarray) -> np.ndarray:
                hh = Hyperparameters.from_log(t)
                return cov_matrix(X, X, hh) + (hh.noise_variance + jitter(hh)) * np.eye(5)

            eps = 1e-6
            for i in range(theta.size):
                up, down = theta.copy(), theta.copy()
                up[i] += eps
                down[i] -= eps
                fd = (noisy(up) - noisy(down)) / (2 * eps)
                np.testing.assert_allclose(grads[i], fd, atol=1e-7)

    def test_default_hyperparameters_respect_floor_and_constant_inputs(self) -> None:
        X = np.column_stack((np.linspace(0, 1, 10), np.ones(10)))
        h = default_hyperparameters(X, np.zeros(10), variance_floor=1e-4)
        self.assertEqual(h.signal_variance, 1e-4)
        self.assertEqual(h.noise_variance, 1e-4)
        self.assertEqual(h.length_scales[1], 1.0)
        iso = default_hyperparameters(X, np.arange(10.0), ard=False)
        self.assertTrue(iso.is_isotropic)


if __name__ == "__main__":
    unittest.main()
