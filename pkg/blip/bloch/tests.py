import math
import unittest

import numpy as np

from blip.bloch import VoxelParams, ExcitationSequence, BlochException, initial_state, \
    step_magnetization, readout, simulate_response, unit_response, simulate_batch, sequence_hash
from blip.bloch.oracle import ode_oracle_response

TISSUES = {
    "csf": (5012, 512),
    "grey": (1545, 83),
    "white": (811, 77),
    "adipose": (530, 77),
    "muscle": (1425, 41),
}

def random_sequence(length, seed=0, sigma=10, tr=10):
    generator = np.random.default_rng(seed)
    return ExcitationSequence.from_degrees(generator.normal(0, sigma, length), np.full(length, float(tr)))

def relative_error(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)

class TestBlochRecursion(unittest.TestCase):

    def test_relaxation_only(self):
        params = VoxelParams(1000, 100)
        state = step_magnetization(initial_state(), 0.0, 10.0, params)
        np.testing.assert_allclose(state, [0, 0, 1 - 2 * math.exp(-0.01)], rtol=0, atol=1e-15)

    def test_inversion(self):
        params = VoxelParams(1e12, 1e12)
        state = step_magnetization(np.array([0.0, 0.0, 1.0]), math.pi, 1e-9, params)
        np.testing.assert_allclose(state, [0, 0, -1], atol=1e-12)

    def test_readout_longitudinal(self):
        params = VoxelParams(1000, 100)
        self.assertEqual(readout(np.array([0.0, 0.0, 0.3]), 10.0, params), 0j)

    def test_readout_identity(self):
        params = VoxelParams(1e15, 1e15)
        value = readout(np.array([1.0, 0.0, 0.0]), 1e-6, params)
        self.assertAlmostEqual(value.real, 1.0, places=12)
        self.assertAlmostEqual(value.imag, 0.0, places=12)

    def test_invalid_parameters(self):
        with self.assertRaises(BlochException):
            VoxelParams(0, 10)
        with self.assertRaises(BlochException):
            VoxelParams(100, -1)
        with self.assertRaises(BlochException):
            VoxelParams(float("nan"), 10)
        with self.assertRaises(BlochException):
            step_magnetization(initial_state(), 0.1, 0.0, VoxelParams(100, 10))
        with self.assertRaises(BlochException):
            ExcitationSequence([0.1, 0.2], [10.0, 10.0, 10.0])
        with self.assertRaises(BlochException):
            ExcitationSequence([], [])

    def test_recursion_matches_steps(self):
        seq = random_sequence(30, seed=3)
        params = VoxelParams(1545, 83, 15.0)
        state = initial_state()
        samples = []
        for alpha, tr in zip(seq.flip_angles, seq.repetition_times):
            state = step_magnetization(state, alpha, tr, params)
            samples.append(readout(state, tr, params))
        np.testing.assert_allclose(simulate_response(params, seq), np.array(samples), rtol=0, atol=1e-12)

    def test_zero_density(self):
        seq = random_sequence(20)
        response = simulate_response(VoxelParams(811, 77, rho=0.0), seq)
        self.assertEqual(response.shape, (20,))
        self.assertTrue(np.all(response == 0))

    def test_zero_flip_angles(self):
        seq = ExcitationSequence(np.zeros(40), np.full(40, 10.0))
        self.assertTrue(np.all(simulate_response(VoxelParams(811, 77), seq) == 0))

    def test_density_linearity(self):
        seq = random_sequence(50, seed=1)
        params = VoxelParams(811, 77)
        unit = unit_response(params, seq)
        np.testing.assert_array_equal(simulate_response(params.with_density(0.8), seq), 0.8 * unit)
        np.testing.assert_array_equal(simulate_response(params.with_density(2j), seq), 2j * unit)

    def test_batch_matches_single(self):
        seq = random_sequence(25, seed=4)
        t1 = np.array([5012, 1545, 811])
        t2 = np.array([512, 83, 77])
        batch = simulate_batch(t1, t2, 0.0, seq)
        for i in range(3):
            np.testing.assert_array_equal(batch[i], unit_response(VoxelParams(t1[i], t2[i]), seq))

    def test_smoothness(self):
        seq = random_sequence(100, seed=5)
        for t1, t2 in TISSUES.values():
            reference = unit_response(VoxelParams(t1, t2), seq)
            for perturbed in (VoxelParams(t1 * 1.001, t2), VoxelParams(t1, t2 * 1.001), VoxelParams(t1, t2, 0.001)):
                self.assertLess(relative_error(unit_response(perturbed, seq), reference), 0.01)

    def test_sequence_hash(self):
        a = random_sequence(20, seed=1)
        b = random_sequence(20, seed=1)
        c = random_sequence(20, seed=2)
        self.assertEqual(sequence_hash(a), sequence_hash(b))
        self.assertNotEqual(sequence_hash(a), sequence_hash(c))

    def test_truncate_prefix(self):
        seq = random_sequence(40, seed=9)
        short = seq.truncate(10)
        np.testing.assert_array_equal(unit_response(VoxelParams(811, 77), short),
            unit_response(VoxelParams(811, 77), seq)[:10])

class TestBlochOracle(unittest.TestCase):

    def test_tissues_against_oracle(self):
        seq = random_sequence(50, seed=11)
        for name, (t1, t2) in TISSUES.items():
            params = VoxelParams(t1, t2)
            with self.subTest(tissue=name):
                self.assertLess(relative_error(simulate_response(params, seq), ode_oracle_response(params, seq)), 1e-6)

    def test_off_resonance_against_oracle(self):
        seq = random_sequence(30, seed=12)
        params = VoxelParams(1545, 83, 12.5, rho=0.7)
        self.assertLess(relative_error(simulate_response(params, seq), ode_oracle_response(params, seq)), 1e-6)

    def test_oracle_zero_flip(self):
        seq = ExcitationSequence(np.zeros(10), np.full(10, 10.0))
        np.testing.assert_array_equal(ode_oracle_response(VoxelParams(811, 77), seq), np.zeros(10))

    def test_steady_state(self):
        length = 600
        seq = ExcitationSequence(np.full(length, math.radians(30)), np.full(length, 10.0))
        response = simulate_response(VoxelParams(811, 77), seq)
        self.assertLess(abs(response[-1] - response[-2]), 1e-8)
        self.assertGreater(abs(response[1] - response[0]), abs(response[-1] - response[-2]))
