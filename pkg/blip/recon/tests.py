import os
import json
import tempfile
import unittest
from itertools import combinations

import numpy as np

from blip.bloch import ExcitationSequence
from blip.dictionary import ParameterGrid, build_dictionary, project_voxels_real
from blip.phantom import synthetic_phantom, maps_to_sequence
from blip.sampling import SamplingSchedule, forward, adjoint
from blip.recon import ReconConfig, ReconstructionException, ConvergenceException, mrf_reconstruct, \
    blip_reconstruct, adaptive_step, oracle_estimate, consistency_error
from blip.recon.wavelet import WaveletException, haar2, ihaar2, hard_threshold, project_regularized
from blip.experiment.metrics import ser_db
from blip.utilities.attributes import AttributeException
from blip.workspace import LocalStorage

SLOW = os.environ.get("BLIP_SLOW_TESTS", "0") == "1"

def random_sequence(length, seed=0, sigma=10, tr=10):
    generator = np.random.default_rng(seed)
    return ExcitationSequence.from_degrees(generator.normal(0, sigma, length), np.full(length, float(tr)))

def table_grid():
    return ParameterGrid([400, 530, 800, 1100, 1425, 1545, 2500, 5012], [41, 60, 77, 83, 120, 250, 512])

class Setup(object):

    def __init__(self, side, undersampling, length, seed=0, layout="ellipses"):
        self.grid = table_grid()
        self.sequence = random_sequence(length, seed)
        self.dictionary = build_dictionary(self.grid, self.sequence)
        self.maps = synthetic_phantom(side, layout, mode="on-grid", grid=self.grid)
        self.X = maps_to_sequence(self.maps, self.sequence)
        self.schedule = SamplingSchedule(side, undersampling, length, seed=seed + 100)
        self.Y = forward(self.X, self.schedule)
        self.mask = self.maps.mask.reshape(-1)

def assert_results_equal(a, b):
    np.testing.assert_array_equal(a.indices, b.indices)
    np.testing.assert_array_equal(a.theta, b.theta)
    np.testing.assert_array_equal(a.rho, b.rho)
    np.testing.assert_array_equal(a.estimate.data, b.estimate.data)

class TestReconConfig(unittest.TestCase):

    def test_defaults(self):
        config = ReconConfig()
        self.assertEqual(config.max_iters, 20)
        self.assertEqual(config.kappa, 0.99)
        self.assertEqual(config.step_mode, "adaptive")
        self.assertEqual(config.coefficient_count(4096), 750)
        self.assertEqual(config.coefficient_count(65536), 12000)

    def test_invalid(self):
        with self.assertRaises(AttributeException):
            ReconConfig(kappa=1)
        with self.assertRaises(AttributeException):
            ReconConfig(step_mode="random")
        with self.assertRaises(AttributeException):
            ReconConfig(density_model="complex", regularization="wavelet")
        with self.assertRaises(AttributeException):
            ReconConfig(iterations=3)
        with self.assertRaises(ReconstructionException):
            ReconConfig(coefficients=100).coefficient_count(64)

class TestWavelet(unittest.TestCase):

    def test_constant(self):
        coefficients = haar2(np.full((16, 16), 3.0))
        self.assertEqual(np.count_nonzero(np.abs(coefficients) > 1e-12), 1)
        self.assertAlmostEqual(np.max(np.abs(coefficients)), 3.0 * 16, places=10)

    def test_orthonormal(self):
        for side in (8, 16, 64):
            image = np.random.default_rng(side).normal(size=(side, side))
            coefficients = haar2(image)
            self.assertAlmostEqual(np.linalg.norm(coefficients), np.linalg.norm(image), delta=1e-12 * np.linalg.norm(image))
            np.testing.assert_allclose(ihaar2(coefficients), image, rtol=0, atol=1e-12)

    def test_basis(self):
        basis = np.eye(64).reshape(64, 8, 8)
        W = np.stack([haar2(b).reshape(-1) for b in basis], axis=1)
        np.testing.assert_allclose(W.T @ W, np.eye(64), rtol=0, atol=1e-12)

    def test_invalid(self):
        with self.assertRaises(WaveletException):
            haar2(np.zeros((12, 12)))
        with self.assertRaises(WaveletException):
            haar2(np.zeros((8, 4)))

    def test_hard_threshold(self):
        np.testing.assert_array_equal(hard_threshold(np.array([3, -5, 2]), 1), [0, -5, 0])
        np.testing.assert_array_equal(hard_threshold(np.array([3, -5, 2]), 3), [3, -5, 2])
        np.testing.assert_array_equal(hard_threshold(np.array([3, -5, 2]), 0), [0, 0, 0])
        np.testing.assert_array_equal(hard_threshold(np.array([1, -2, 2, 1]), 2), [0, -2, 2, 0])
        np.testing.assert_array_equal(hard_threshold(np.array([1, 1, 1]), 2), [1, 1, 0])
        with self.assertRaises(WaveletException):
            hard_threshold(np.array([1, 2]), 3)

class TestRegularizedProjection(unittest.TestCase):

    def setUp(self):
        self.dictionary = build_dictionary(ParameterGrid([300, 800, 1500, 3000, 5000], [60]), random_sequence(64, seed=21))
        generator = np.random.default_rng(22)
        self.assignment = generator.integers(0, 5, 64)
        self.pseudo = np.kron(np.array([[1.0, 2.0], [1.5, 3.0]]), np.ones((4, 4))).reshape(-1)
        self.clean = self.pseudo[:, np.newaxis] * self.dictionary.normalized[self.assignment]
        self.noisy = self.clean + 1e-6 * (generator.normal(size=self.clean.shape) + 1j * generator.normal(size=self.clean.shape))

    def test_all_coefficients(self):
        X = self.noisy
        regularized = project_regularized(X, self.dictionary, 64, 8)
        plain = project_voxels_real(X, self.dictionary)
        np.testing.assert_array_equal(regularized.estimate, plain.estimate)
        np.testing.assert_array_equal(regularized.densities, plain.densities)

    def test_fixed_point(self):
        projection = project_regularized(self.clean, self.dictionary, 4, 8)
        np.testing.assert_array_equal(projection.indices, self.assignment)
        np.testing.assert_allclose(projection.estimate, self.clean, rtol=0, atol=1e-12)

    def _error(self, X, assignment, coefficients):
        atoms = self.dictionary.normalized[assignment]
        z = np.sum(np.conj(atoms) * X, axis=1).real
        pseudo = ihaar2(hard_threshold(haar2(z.reshape(8, 8)), coefficients)).reshape(-1)
        return np.sum(np.abs(X - pseudo[:, np.newaxis] * atoms) ** 2)

    def test_brute_force(self):
        X = self.noisy
        projection = project_regularized(X, self.dictionary, 4, 8)
        np.testing.assert_array_equal(projection.indices, self.assignment)
        ours = np.sum(np.abs(X - projection.estimate) ** 2)

        # every support of four Haar coefficients for the selected atoms
        z = np.maximum(projection.correlations, 0)
        coefficients = haar2(z.reshape(8, 8)).reshape(-1)
        supports = np.array(list(combinations(range(64), 4)))
        retained = np.sum(coefficients[supports] ** 2, axis=1)
        constant = np.sum(np.abs(X) ** 2) - np.sum(z ** 2)
        self.assertLessEqual(ours, np.min(constant + np.sum(coefficients ** 2) - retained) + 1e-10)

        # every single voxel reassignment and random joint reassignments, each with its best support
        alternatives = []
        for voxel in range(64):
            for atom in range(5):
                if atom != self.assignment[voxel]:
                    alternative = self.assignment.copy()
                    alternative[voxel] = atom
                    alternatives.append(alternative)
        generator = np.random.default_rng(23)
        for _ in range(200):
            alternative = self.assignment.copy()
            changed = generator.choice(64, generator.integers(2, 10), replace=False)
            alternative[changed] = generator.integers(0, 5, changed.size)
            alternatives.append(alternative)
        for alternative in alternatives:
            self.assertLessEqual(ours, self._error(X, alternative, 4) + 1e-10)

class TestAdaptiveStep(unittest.TestCase):

    def test_full_sampling_shrinks(self):
        schedule = SamplingSchedule(8, 1, 4, seed=0)
        generator = np.random.default_rng(1)
        previous = np.zeros((64, 4), dtype=complex)
        candidate = generator.normal(size=(64, 4)) + 0j
        decision = adaptive_step(previous, candidate, schedule, 0.99, 1.0)
        self.assertFalse(decision.accept)
        self.assertAlmostEqual(decision.omega, 0.99, places=10)
        self.assertTrue(adaptive_step(previous, candidate, schedule, 0.99, 0.5).accept)

    def test_converged(self):
        schedule = SamplingSchedule(8, 2, 4, seed=0)
        X = np.ones((64, 4), dtype=complex)
        decision = adaptive_step(X, X.copy(), schedule, 0.99, 2.0)
        self.assertTrue(decision.accept)
        self.assertTrue(decision.converged)

    def test_sampled_rows(self):
        schedule = SamplingSchedule(8, 2, 1, shifts=[0])
        kspace = np.zeros((8, 8), dtype=complex)
        kspace[2, 3] = 1
        delta = np.fft.ifft2(kspace, norm="ortho").reshape(64, 1)
        decision = adaptive_step(np.zeros((64, 1)), delta, schedule, 0.99, 2.0)
        self.assertAlmostEqual(decision.omega, 0.99, places=10)
        self.assertFalse(decision.accept)

    def test_unsampled_rows(self):
        schedule = SamplingSchedule(8, 2, 1, shifts=[0])
        kspace = np.zeros((8, 8), dtype=complex)
        kspace[3, 1] = 1
        delta = np.fft.ifft2(kspace, norm="ortho").reshape(64, 1)
        decision = adaptive_step(np.zeros((64, 1)), delta, schedule, 0.99, 2.0)
        self.assertTrue(decision.accept)
        self.assertGreater(decision.omega, 1e10)

class TestReconstruction(unittest.TestCase):

    def test_full_sampling_exact(self):
        setup = Setup(16, 1, 50)
        oracle = oracle_estimate(setup.X, setup.dictionary)
        result = blip_reconstruct(setup.Y, setup.schedule, setup.dictionary)
        self.assertEqual(result.iterations, 1)
        np.testing.assert_array_equal(result.theta[setup.mask, 0], setup.maps.t1.reshape(-1)[setup.mask])
        np.testing.assert_array_equal(result.theta[setup.mask, 1], setup.maps.t2.reshape(-1)[setup.mask])
        np.testing.assert_array_equal(result.theta[setup.mask], oracle.theta[setup.mask])
        np.testing.assert_array_equal(result.indices[setup.mask], oracle.indices[setup.mask])
        np.testing.assert_allclose(result.rho, setup.maps.rho.reshape(-1), rtol=1e-10, atol=1e-10)
        self.assertTrue(np.all(oracle.indices[~setup.mask] == -1))
        self.assertTrue(np.all(np.isnan(oracle.theta[~setup.mask])))

    def test_full_sampling_mrf(self):
        setup = Setup(16, 1, 50)
        result = mrf_reconstruct(setup.Y, setup.schedule, setup.dictionary)
        np.testing.assert_array_equal(result.theta[setup.mask, 0], setup.maps.t1.reshape(-1)[setup.mask])
        np.testing.assert_allclose(result.rho, setup.maps.rho.reshape(-1), rtol=1e-10, atol=1e-10)

    def test_full_sampling_adaptive(self):
        setup = Setup(16, 1, 50)
        result = blip_reconstruct(setup.Y, setup.schedule, setup.dictionary)
        self.assertEqual(result.steps, [1.0])
        np.testing.assert_array_equal(result.theta[setup.mask, 1], setup.maps.t2.reshape(-1)[setup.mask])
        np.testing.assert_allclose(result.rho, setup.maps.rho.reshape(-1), rtol=1e-10, atol=1e-10)
        fixed = blip_reconstruct(setup.Y, setup.schedule, setup.dictionary, ReconConfig(step_mode="fixed-scaled"))
        assert_results_equal(result, fixed)

    @unittest.skipUnless(SLOW, "set BLIP_SLOW_TESTS=1 to run full size reconstructions")
    def test_full_sampling_exact_full_size(self):
        setup = Setup(64, 1, 100)
        oracle = oracle_estimate(setup.X, setup.dictionary)
        result = blip_reconstruct(setup.Y, setup.schedule, setup.dictionary)
        self.assertEqual(result.iterations, 1)
        np.testing.assert_array_equal(result.theta[setup.mask], oracle.theta[setup.mask])
        np.testing.assert_array_equal(result.theta[setup.mask, 0], setup.maps.t1.reshape(-1)[setup.mask])
        np.testing.assert_array_equal(result.theta[setup.mask, 1], setup.maps.t2.reshape(-1)[setup.mask])
        np.testing.assert_allclose(result.rho, setup.maps.rho.reshape(-1), rtol=1e-10, atol=1e-10)

    def test_one_iteration_equivalence(self):
        setup = Setup(16, 4, 40)
        mrf = mrf_reconstruct(setup.Y, setup.schedule, setup.dictionary)
        blip = blip_reconstruct(setup.Y, setup.schedule, setup.dictionary, ReconConfig(max_iters=1, step_mode="fixed-unit"))
        assert_results_equal(mrf, blip)

    def test_rescaled_mrf(self):
        setup = Setup(32, 4, 60, layout="ellipses")
        unit = mrf_reconstruct(setup.Y, setup.schedule, setup.dictionary)
        rescaled = mrf_reconstruct(setup.Y, setup.schedule, setup.dictionary, rescaled=True)
        np.testing.assert_array_equal(unit.indices, rescaled.indices)
        np.testing.assert_allclose(rescaled.rho, 4 * unit.rho, rtol=1e-12)
        ratio = np.mean(unit.rho[setup.mask]) / np.mean(setup.maps.rho.reshape(-1)[setup.mask])
        self.assertGreater(ratio, 0.1)
        self.assertLess(ratio, 0.6)

    def test_regularized_all_coefficients(self):
        setup = Setup(16, 4, 40)
        plain = blip_reconstruct(setup.Y, setup.schedule, setup.dictionary)
        regularized = blip_reconstruct(setup.Y, setup.schedule, setup.dictionary,
            ReconConfig(regularization="wavelet", coefficients=256))
        assert_results_equal(plain, regularized)
        self.assertEqual(plain.errors, regularized.errors)

    def test_zero_measurements(self):
        setup = Setup(16, 4, 30)
        result = blip_reconstruct(np.zeros_like(setup.Y.samples), setup.schedule, setup.dictionary)
        self.assertEqual(result.iterations, 1)
        self.assertEqual(result.errors, [0.0])
        self.assertTrue(np.all(result.rho == 0))
        self.assertTrue(np.all(result.indices == -1))

    def test_monotone_errors(self):
        for seed in range(3):
            setup = Setup(32, 4, 60, seed=seed)
            result = blip_reconstruct(setup.Y, setup.schedule, setup.dictionary)
            self.assertEqual(len(result.errors), result.iterations)
            self.assertTrue(all(b <= a * (1 + 1e-9) + 1e-15 for a, b in zip(result.errors, result.errors[1:])))
            self.assertTrue(all(mu <= 4 for mu in result.steps))

    def test_recovery_beats_matched_filter(self):
        setup = Setup(32, 4, 100)
        blip = blip_reconstruct(setup.Y, setup.schedule, setup.dictionary)
        mrf = mrf_reconstruct(setup.Y, setup.schedule, setup.dictionary, rescaled=True)
        truth = setup.X.data[setup.mask]
        blip_ser = ser_db(truth, blip.estimate.data[setup.mask])
        mrf_ser = ser_db(truth, mrf.estimate.data[setup.mask])
        self.assertGreater(blip_ser, 15)
        self.assertGreater(blip_ser, mrf_ser + 3)

    def test_complex_phase_invariance(self):
        setup = Setup(16, 4, 50)
        config = ReconConfig(density_model="complex", max_iters=5)
        phase = np.exp(0.7j)
        first = blip_reconstruct(setup.Y, setup.schedule, setup.dictionary, config)
        second = blip_reconstruct(phase * setup.Y.samples, setup.schedule, setup.dictionary, config)
        np.testing.assert_array_equal(first.indices, second.indices)
        np.testing.assert_allclose(np.abs(second.rho), np.abs(first.rho), rtol=1e-9, atol=1e-12)

    def test_first_step_retries_bound(self):
        for seed in range(3):
            setup = Setup(32, 4, 60, seed=seed)
            result = blip_reconstruct(setup.Y, setup.schedule, setup.dictionary)
            start = np.zeros_like(setup.X.data)
            candidate = project_voxels_real(4 * adjoint(setup.Y.samples, setup.schedule).data, setup.dictionary)
            decision = adaptive_step(start, candidate.estimate, setup.schedule, 0.99, 4.0)
            if decision.accept:
                self.assertEqual(result.steps[0], 4.0)
            elif decision.omega >= 2:
                self.assertAlmostEqual(result.steps[0], decision.omega, delta=1e-6)
            else:
                self.assertLessEqual(result.steps[0], 2.0)

    def test_step_underflow(self):
        setup = Setup(8, 2, 20, layout="single")
        with self.assertRaises(ConvergenceException):
            blip_reconstruct(setup.Y, setup.schedule, setup.dictionary, ReconConfig(kappa=1e-6, max_halvings=0))

    def test_consistency_error(self):
        setup = Setup(16, 4, 30)
        self.assertLess(consistency_error(setup.X.data, setup.Y.samples, setup.schedule), 1e-25)
        self.assertEqual(consistency_error(np.zeros_like(setup.X.data), setup.Y.samples, setup.schedule), 1.0)
        self.assertEqual(consistency_error(setup.X.data, np.zeros_like(setup.Y.samples), setup.schedule), 0.0)

    def test_shape_mismatch(self):
        setup = Setup(8, 2, 20, layout="single")
        with self.assertRaises(ReconstructionException):
            blip_reconstruct(setup.Y.samples[:, :10], setup.schedule, setup.dictionary)

    def test_write(self):
        setup = Setup(8, 2, 20, layout="single")
        result = blip_reconstruct(setup.Y, setup.schedule, setup.dictionary)
        with tempfile.TemporaryDirectory() as root:
            result.write(LocalStorage(root), "blip")
            with open(os.path.join(root, "blip_maps.csv")) as handle:
                lines = handle.read().splitlines()
            self.assertEqual(lines[0], "voxel,row,column,atom,t1,t2,df,rho")
            self.assertEqual(len(lines), 65)
            with open(os.path.join(root, "blip.json")) as handle:
                metadata = json.load(handle)
            self.assertEqual(metadata["iterations"], result.iterations)
            self.assertEqual(metadata["config"]["kappa"], 0.99)
