import io
import math
import unittest
from itertools import combinations

import numpy as np

from blip.bloch import VoxelParams, ExcitationSequence, simulate_response, unit_response
from blip.dictionary import ParameterGrid, BlochDictionary, DictionaryException, build_dictionary, lut_lookup, \
    project_voxel_real, project_voxel_complex, project_voxels_real, project_voxels_complex, chord_flatness
from blip.dictionary.io import export_dictionary, import_dictionary

TISSUES = [(5012, 512), (1545, 83), (811, 77), (530, 77), (1425, 41)]

def random_sequence(length, seed=0, sigma=10, tr=10):
    generator = np.random.default_rng(seed)
    return ExcitationSequence.from_degrees(generator.normal(0, sigma, length), np.full(length, float(tr)))

def small_grid():
    return ParameterGrid([300, 600, 900, 1200, 1500], [40, 60, 80, 100, 120, 140, 160, 180, 200, 240])

def random_voxels(count, length, seed):
    generator = np.random.default_rng(seed)
    return generator.normal(size=(count, length)) + 1j * generator.normal(size=(count, length))

class TestParameterGrid(unittest.TestCase):

    def test_standard_grid_size(self):
        grid = ParameterGrid.standard()
        self.assertEqual(grid.t1_values.size, 109)
        self.assertEqual(grid.t2_values.size, 31)
        self.assertEqual(grid.size, 3379)

    def test_invalid_axes(self):
        with self.assertRaises(DictionaryException):
            ParameterGrid([], [10])
        with self.assertRaises(DictionaryException):
            ParameterGrid([100, 100], [10])
        with self.assertRaises(DictionaryException):
            ParameterGrid([100, 200], [0, 10])
        with self.assertRaises(DictionaryException):
            ParameterGrid([200, 100], [10])

    def test_snap(self):
        grid = ParameterGrid.standard()
        t1, t2, df = grid.snap(530, 77)
        self.assertEqual(t1, 520)
        self.assertEqual(t2, 75)
        self.assertEqual(df, 0)
        t1, t2, _ = grid.snap(5012, 512)
        self.assertEqual(t1, 5000)
        self.assertEqual(t2, 600)
        t1, t2, _ = grid.snap(50, 5000)
        self.assertEqual(t1, 100)
        self.assertEqual(t2, 1000)

    def test_index_order(self):
        grid = small_grid()
        points = grid.points()
        for k in (0, 7, 23, grid.size - 1):
            self.assertEqual(grid.index(*points[k]), k)
        self.assertEqual(tuple(points[0]), (300.0, 40.0, 0.0))
        self.assertEqual(tuple(points[1]), (300.0, 60.0, 0.0))

class TestBlochDictionary(unittest.TestCase):

    def test_lookup_bijection(self):
        grid = ParameterGrid.standard()
        dictionary = build_dictionary(grid, random_sequence(8))
        self.assertEqual(len(dictionary.lut), 3379)
        self.assertEqual(len(dictionary.lut.inverse), 3379)
        for k in range(dictionary.size):
            params = lut_lookup(k, dictionary)
            self.assertEqual(dictionary.index_of(params.t1, params.t2, params.off_resonance), k)
        self.assertEqual(lut_lookup(0, dictionary).theta, (100.0, 20.0, 0.0))

    def test_lookup_range(self):
        dictionary = build_dictionary(small_grid(), random_sequence(8))
        with self.assertRaises(DictionaryException):
            lut_lookup(dictionary.size, dictionary)
        with self.assertRaises(DictionaryException):
            lut_lookup(-1, dictionary)

    def test_single_point(self):
        seq = random_sequence(30, seed=2)
        dictionary = build_dictionary(ParameterGrid([811], [77]), seq)
        self.assertEqual(dictionary.size, 1)
        np.testing.assert_array_equal(dictionary.atoms[0], simulate_response(VoxelParams(811, 77), seq))

    def test_zero_atom(self):
        seq = ExcitationSequence(np.zeros(10), np.full(10, 10.0))
        with self.assertRaises(DictionaryException):
            build_dictionary(small_grid(), seq)

    def test_tissues_not_collinear(self):
        seq = random_sequence(200, seed=3)
        atoms = [unit_response(VoxelParams(t1, t2), seq) for t1, t2 in TISSUES]
        for a, b in combinations(atoms, 2):
            similarity = abs(np.vdot(a, b)) / (np.linalg.norm(a) * np.linalg.norm(b))
            self.assertLess(similarity, 1 - 1e-6)

    def test_normalized_view(self):
        dictionary = build_dictionary(small_grid(), random_sequence(16))
        np.testing.assert_allclose(np.linalg.norm(dictionary.normalized, axis=1), 1, rtol=1e-12)

    def test_export_import(self):
        seq = random_sequence(16, seed=4)
        dictionary = build_dictionary(small_grid(), seq)
        buffer = io.BytesIO()
        export_dictionary(dictionary, buffer)
        buffer.seek(0)
        loaded = import_dictionary(buffer, seq)
        np.testing.assert_array_equal(loaded.atoms, dictionary.atoms)
        self.assertEqual(loaded.grid, dictionary.grid)
        buffer.seek(0)
        with self.assertRaises(DictionaryException):
            import_dictionary(buffer, random_sequence(16, seed=5))

class TestProjection(unittest.TestCase):

    def setUp(self):
        self.dictionary = build_dictionary(small_grid(), random_sequence(32, seed=6))

    def test_atom_recovery(self):
        k, rho = project_voxel_real(3.5 * self.dictionary.atoms[7], self.dictionary)
        self.assertEqual(k, 7)
        self.assertAlmostEqual(rho, 3.5, places=10)

    def test_negative_clamped(self):
        _, rho = project_voxel_real(-self.dictionary.atoms[7], self.dictionary)
        self.assertEqual(rho, 0)

    def test_complex_recovery(self):
        scale = 2 * np.exp(1j * np.pi / 3)
        k, rho = project_voxel_complex(scale * self.dictionary.atoms[3], self.dictionary)
        self.assertEqual(k, 3)
        self.assertAlmostEqual(abs(rho - scale), 0, places=10)
        k, rho = project_voxel_complex(-self.dictionary.atoms[7], self.dictionary)
        self.assertEqual(k, 7)
        self.assertAlmostEqual(abs(rho + 1), 0, places=10)

    def test_real_brute_force(self):
        X = random_voxels(1000, self.dictionary.length, seed=7)
        projection = project_voxels_real(X, self.dictionary)
        correlations = X @ np.conj(self.dictionary.atoms).T
        energy = np.sum(np.abs(X) ** 2, axis=1)
        best = energy - np.max(np.maximum(correlations.real, 0) ** 2 / self.dictionary.norms ** 2, axis=1)
        distance = np.sum(np.abs(X - projection.estimate) ** 2, axis=1)
        np.testing.assert_allclose(distance, best, rtol=1e-9, atol=1e-9)
        self.assertTrue(np.all(projection.densities >= 0))

    def test_complex_brute_force(self):
        X = random_voxels(1000, self.dictionary.length, seed=8)
        projection = project_voxels_complex(X, self.dictionary)
        correlations = X @ np.conj(self.dictionary.atoms).T
        energy = np.sum(np.abs(X) ** 2, axis=1)
        best = energy - np.max(np.abs(correlations) ** 2 / self.dictionary.norms ** 2, axis=1)
        distance = np.sum(np.abs(X - projection.estimate) ** 2, axis=1)
        np.testing.assert_allclose(distance, best, rtol=1e-9, atol=1e-9)

    def test_complex_not_worse(self):
        X = random_voxels(200, self.dictionary.length, seed=9)
        real = np.linalg.norm(X - project_voxels_real(X, self.dictionary).estimate, axis=1)
        complex_ = np.linalg.norm(X - project_voxels_complex(X, self.dictionary).estimate, axis=1)
        self.assertTrue(np.all(complex_ <= real + 1e-12))

    def test_idempotence(self):
        X = random_voxels(50, self.dictionary.length, seed=10)
        first = project_voxels_real(X, self.dictionary)
        second = project_voxels_real(first.estimate, self.dictionary)
        positive = first.densities > 0
        np.testing.assert_array_equal(second.indices[positive], first.indices[positive])
        np.testing.assert_allclose(second.densities, first.densities, rtol=1e-10, atol=1e-14)

    def test_scale_equivariance(self):
        X = random_voxels(50, self.dictionary.length, seed=11)
        first = project_voxels_real(X, self.dictionary)
        scaled = project_voxels_real(2.5 * X, self.dictionary)
        np.testing.assert_array_equal(scaled.indices, first.indices)
        np.testing.assert_allclose(scaled.densities, 2.5 * first.densities, rtol=1e-12)

    def test_blocking(self):
        X = random_voxels(100, self.dictionary.length, seed=12)
        np.testing.assert_array_equal(project_voxels_real(X, self.dictionary, block=7).indices,
            project_voxels_real(X, self.dictionary).indices)

    def test_length_mismatch(self):
        with self.assertRaises(DictionaryException):
            project_voxels_real(np.zeros((3, 5), dtype=complex), self.dictionary)

class TestFlatness(unittest.TestCase):

    def test_bounds(self):
        for length in (1, 10, 100):
            self.assertAlmostEqual(chord_flatness(np.exp(1j * np.arange(length))), 1 / math.sqrt(length), places=12)
            basis = np.zeros(length)
            basis[length // 2] = 1
            self.assertEqual(chord_flatness(basis), 1)

    def test_zero(self):
        with self.assertRaises(DictionaryException):
            chord_flatness(np.zeros(5))

    def test_response_chords(self):
        seq = random_sequence(1000, seed=13)
        csf = unit_response(VoxelParams(5012, 512), seq)
        grey = unit_response(VoxelParams(1545, 83), seq)
        for length in (100, 250, 500, 1000):
            inverse_square = chord_flatness(csf[:length] - grey[:length]) ** -2
            self.assertGreater(inverse_square / length, 0.01)
            self.assertLessEqual(inverse_square / length, 1)
        self.assertGreater(inverse_square, chord_flatness(csf[:100] - grey[:100]) ** -2)
