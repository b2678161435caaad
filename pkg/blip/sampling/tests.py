import unittest

import numpy as np

from blip.sampling import SamplingException, SamplingSchedule, VariableDensitySchedule, ImageSequence, \
    KSpaceSequence, dft2, idft2, epi_rows, variable_density_rows, forward, adjoint
from blip.sampling.isometry import mc_chord_isometry

def random_complex(shape, seed):
    generator = np.random.default_rng(seed)
    return generator.normal(size=shape) + 1j * generator.normal(size=shape)

def inner(a, b):
    return np.vdot(a, b)

class TestFourier(unittest.TestCase):

    def test_delta(self):
        for side in (8, 16, 64):
            image = np.zeros((side, side))
            image[0, 0] = 1
            np.testing.assert_allclose(np.abs(dft2(image)), 1 / side, rtol=1e-12)

    def test_parseval_and_inverse(self):
        for side in (8, 16, 64):
            image = random_complex((side, side), side)
            kspace = dft2(image)
            self.assertAlmostEqual(np.linalg.norm(kspace), np.linalg.norm(image), delta=1e-12 * np.linalg.norm(image))
            np.testing.assert_allclose(idft2(kspace), image, rtol=0, atol=1e-12)

    def test_invalid_images(self):
        with self.assertRaises(SamplingException):
            dft2(np.zeros((8, 4)))
        with self.assertRaises(SamplingException):
            dft2(np.zeros((12, 12)))

class TestSchedules(unittest.TestCase):

    def test_full_sampling(self):
        schedule = SamplingSchedule(8, 1, 5, seed=0)
        for l in range(5):
            np.testing.assert_array_equal(epi_rows(schedule, l), np.arange(8))

    def test_epi_rows(self):
        schedule = SamplingSchedule(8, 4, shifts=[1, 3])
        np.testing.assert_array_equal(epi_rows(schedule, 0), [1, 5])
        np.testing.assert_array_equal(epi_rows(schedule, 1), [3, 7])
        with self.assertRaises(SamplingException):
            epi_rows(schedule, 2)

    def test_coverage(self):
        schedule = SamplingSchedule(256, 16, 200, seed=1)
        self.assertEqual(schedule.row_table.shape, (200, 16))
        self.assertEqual(np.unique(schedule.row_table).size, 256)

    def test_determinism(self):
        a = SamplingSchedule(64, 8, 100, seed=5)
        b = SamplingSchedule(64, 8, 100, seed=5)
        np.testing.assert_array_equal(a.shifts, b.shifts)
        np.testing.assert_array_equal(a.truncate(40).shifts, a.shifts[:40])

    def test_invalid(self):
        with self.assertRaises(SamplingException):
            SamplingSchedule(64, 3, 10)
        with self.assertRaises(SamplingException):
            SamplingSchedule(48, 4, 10)
        with self.assertRaises(SamplingException):
            SamplingSchedule(8, 4, shifts=[4])

    def test_variable_density(self):
        schedule = VariableDensitySchedule(256, 16, 20, seed=2)
        for l in range(20):
            rows = variable_density_rows(schedule, l)
            self.assertEqual(rows.size, 16)
            self.assertEqual(np.unique(rows).size, 16)
            self.assertTrue(set([0, 1, 2, 253, 254, 255]).issubset(rows.tolist()))
        again = VariableDensitySchedule(256, 16, 20, seed=2)
        np.testing.assert_array_equal(again.row_table, schedule.row_table)

    def test_variable_density_budget(self):
        with self.assertRaises(SamplingException):
            VariableDensitySchedule(64, 16, 10, seed=0)

class TestOperators(unittest.TestCase):

    def test_adjoint_identity(self):
        for side, p in ((8, 2), (16, 4), (64, 8), (64, 1)):
            schedule = SamplingSchedule(side, p, 6, seed=side + p)
            X = random_complex((side * side, 6), 1)
            Y = random_complex((schedule.measurements, 6), 2)
            left = inner(forward(X, schedule).samples, Y)
            right = inner(X, adjoint(Y, schedule).data)
            self.assertLess(abs(left - right), 1e-10 * abs(left))

    def test_forward_adjoint_identity(self):
        for side, p in ((8, 2), (16, 4), (64, 8)):
            schedule = SamplingSchedule(side, p, 5, seed=3)
            Y = random_complex((schedule.measurements, 5), 4)
            np.testing.assert_allclose(forward(adjoint(Y, schedule), schedule).samples, Y, rtol=0, atol=1e-10)

    def test_alias_sum(self):
        for side, p in ((4, 2), (8, 4)):
            schedule = SamplingSchedule(side, p, 6, seed=7)
            X = random_complex((side * side, 6), 8)
            aliased = adjoint(forward(X, schedule), schedule).data
            for l in range(6):
                image = X[:, l].reshape(side, side)
                zeta = schedule.shifts[l]
                expected = sum(np.exp(-2j * np.pi * k * zeta / p) * np.roll(image, -k * side // p, axis=0)
                    for k in range(p)) / p
                np.testing.assert_allclose(aliased[:, l].reshape(side, side), expected, rtol=0, atol=1e-12)

    def test_full_sampling_is_dft(self):
        schedule = SamplingSchedule(16, 1, 3, seed=0)
        X = random_complex((256, 3), 9)
        Y = forward(X, schedule).samples
        for l in range(3):
            np.testing.assert_allclose(Y[:, l], dft2(X[:, l].reshape(16, 16)).reshape(-1), rtol=0, atol=1e-12)

    def test_energy(self):
        schedule = SamplingSchedule(16, 4, 8, seed=10)
        X = random_complex((256, 8), 11)
        self.assertLessEqual(np.linalg.norm(forward(X, schedule).samples), np.linalg.norm(X))
        image = adjoint(forward(X, schedule), schedule)
        self.assertAlmostEqual(np.linalg.norm(forward(image, schedule).samples), np.linalg.norm(image.data), delta=1e-10)

    def test_variable_density_operator(self):
        schedule = VariableDensitySchedule(64, 8, 4, seed=12)
        Y = random_complex((schedule.measurements, 4), 13)
        np.testing.assert_allclose(forward(adjoint(Y, schedule), schedule).samples, Y, rtol=0, atol=1e-10)

    def test_shape_mismatch(self):
        schedule = SamplingSchedule(8, 2, 4, seed=0)
        with self.assertRaises(SamplingException):
            forward(np.zeros((64, 5)), schedule)
        with self.assertRaises(SamplingException):
            adjoint(np.zeros((64, 4)), schedule)
        with self.assertRaises(SamplingException):
            KSpaceSequence(np.zeros((10, 4)), schedule)
        with self.assertRaises(SamplingException):
            ImageSequence(np.zeros((10, 4)))

class TestIsometry(unittest.TestCase):

    def test_single_alias(self):
        U = np.zeros((4, 32), dtype=complex)
        U[2] = random_complex(32, 1)
        report = mc_chord_isometry(U, 100, seed=0)
        np.testing.assert_allclose(report.ratios, 1, rtol=1e-12)

    def test_mean(self):
        report = mc_chord_isometry(random_complex((4, 64), 2), 100000, seed=3)
        self.assertLess(abs(report.mean - 1), 0.01)

    def test_flat_tail_bound(self):
        generator = np.random.default_rng(4)
        U = np.exp(2j * np.pi * generator.uniform(size=(4, 64)))
        report = mc_chord_isometry(U, 100000, seed=5)
        self.assertAlmostEqual(report.flatness, 1 / 8, places=12)
        self.assertLess(abs(report.mean - 1), 0.01)
        for epsilon in (0.25, 0.5):
            self.assertLessEqual(report.tail(epsilon), report.bound(epsilon))

    def test_zero(self):
        with self.assertRaises(SamplingException):
            mc_chord_isometry(np.zeros((4, 8)), 10)
