import os
import math
import tempfile
import unittest

import numpy as np
from PIL import Image

from blip.bloch import VoxelParams, ExcitationSequence, simulate_response
from blip.dictionary import ParameterGrid
from blip.phantom import PhantomException, TissueTable, PhantomMaps, synthetic_phantom, \
    apply_quadratic_phase, maps_to_sequence
from blip.phantom.brainweb import VOLUME_SHAPE, pad_center, read_labels, load_brainweb
from blip.workspace import LocalStorage

def random_sequence(length, seed=0, sigma=10, tr=10):
    generator = np.random.default_rng(seed)
    return ExcitationSequence.from_degrees(generator.normal(0, sigma, length), np.full(length, float(tr)))

class TestTissueTable(unittest.TestCase):

    def test_default(self):
        table = TissueTable.default()
        expected = {
            1: (100, 5012, 512),
            2: (100, 1545, 83),
            3: (80, 811, 77),
            4: (80, 530, 77),
            5: (80, 1425, 41),
            6: (80, 1425, 41),
        }
        for label, (rho, t1, t2) in expected.items():
            tissue = table[label]
            self.assertEqual((tissue.rho, tissue.t1, tissue.t2), (rho, t1, t2))
        self.assertEqual(table[0].rho, 0)
        self.assertEqual(table.labels, list(range(7)))
        self.assertEqual(len(table.tissues()), 5)

    def test_invalid(self):
        with self.assertRaises(PhantomException):
            TissueTable([(1, "A", 1, 100, 10), (1, "B", 1, 200, 20)])
        with self.assertRaises(PhantomException):
            TissueTable([(0, "Background", 1, 100, 10)])
        with self.assertRaises(PhantomException):
            TissueTable([(1, "A", 1, -100, 10)])
        with self.assertRaises(PhantomException):
            TissueTable.default()[9]
        with self.assertRaises(PhantomException):
            TissueTable.default().maps(np.array([[0, 9], [1, 2]]))

    def test_maps(self):
        maps = TissueTable.default().maps(np.array([[0, 2], [3, 6]]))
        np.testing.assert_array_equal(maps.rho, [[0, 100], [80, 80]])
        np.testing.assert_array_equal(maps.mask, [[False, True], [True, True]])
        self.assertTrue(math.isnan(maps.t1[0, 0]))
        self.assertEqual(maps.t2[1, 1], 41)

class TestSyntheticPhantom(unittest.TestCase):

    def test_single(self):
        maps = synthetic_phantom(16, "single", mode="table")
        self.assertTrue(np.all(maps.rho == 100))
        self.assertTrue(np.all(maps.t1 == 1545))
        self.assertTrue(np.all(maps.t2 == 83))
        self.assertTrue(np.all(maps.df == 0))

    def test_on_grid(self):
        grid = ParameterGrid.standard()
        maps = synthetic_phantom(64, "ellipses", grid=grid)
        mask = maps.mask
        self.assertTrue(grid.contains(maps.t1[mask], maps.t2[mask]))
        pairs = set(zip(maps.t1[mask].tolist(), maps.t2[mask].tolist()))
        self.assertEqual(pairs, {(5000.0, 600.0), (1540.0, 85.0), (820.0, 75.0), (520.0, 75.0), (1420.0, 40.0)})

    def test_layouts(self):
        for layout in ("ellipses", "rectangles"):
            maps = synthetic_phantom(32, layout)
            self.assertFalse(maps.mask[0, 0])
            self.assertTrue(maps.mask[16, 16])
            self.assertEqual(len(np.unique(maps.rho)), 3)

    def test_off_grid(self):
        first = synthetic_phantom(32, mode="off-grid", seed=5)
        second = synthetic_phantom(32, mode="off-grid", seed=5)
        third = synthetic_phantom(32, mode="off-grid", seed=6)
        np.testing.assert_array_equal(first.t1, second.t1)
        self.assertFalse(np.array_equal(first.t1[first.mask], third.t1[third.mask]))

        table = synthetic_phantom(32, mode="table")
        ratio = first.t1[first.mask] / table.t1[table.mask]
        self.assertTrue(np.all(np.abs(ratio - 1) <= 0.03))

    def test_invalid(self):
        with self.assertRaises(PhantomException):
            synthetic_phantom(12)
        with self.assertRaises(PhantomException):
            synthetic_phantom(16, "circles")
        with self.assertRaises(PhantomException):
            synthetic_phantom(16, mode="random")
        with self.assertRaises(PhantomException):
            synthetic_phantom(16, "single", tissue=0)
        with self.assertRaises(PhantomException):
            PhantomMaps(np.ones((2, 3)), np.ones((2, 3)), np.ones((2, 3)))
        with self.assertRaises(PhantomException):
            PhantomMaps(-np.ones((2, 2)), np.ones((2, 2)), np.ones((2, 2)))

    def test_quadratic_phase(self):
        maps = apply_quadratic_phase(synthetic_phantom(16))
        for corner in ((0, 0), (0, 15), (15, 0), (15, 15)):
            self.assertAlmostEqual(maps.phase[corner], math.pi / 4, places=14)
        np.testing.assert_allclose(maps.phase, maps.phase.T, rtol=0, atol=1e-15)
        np.testing.assert_allclose(maps.phase, maps.phase[::-1, ::-1], rtol=0, atol=1e-15)
        central = maps.phase[7:9, 7:9]
        np.testing.assert_allclose(central, np.full((2, 2), maps.phase.min()), rtol=0, atol=1e-15)
        self.assertAlmostEqual(maps.phase.min(), math.pi / 900, places=14)

        odd = apply_quadratic_phase(PhantomMaps(np.ones((3, 3)), np.full((3, 3), 1000.0), np.full((3, 3), 100.0)))
        self.assertEqual(odd.phase[1, 1], 0)
        np.testing.assert_allclose(odd.phase[::2, ::2], np.full((2, 2), math.pi / 4), rtol=1e-14)
        single = apply_quadratic_phase(PhantomMaps(np.ones((1, 1)), np.ones((1, 1)), np.ones((1, 1))))
        self.assertEqual(single.phase[0, 0], 0)
        self.assertTrue(np.all(maps.phase >= 0))
        self.assertTrue(np.all(maps.phase <= math.pi / 4 + 1e-15))
        np.testing.assert_allclose(np.abs(maps.density()), maps.rho, rtol=1e-15)

    def test_write(self):
        maps = synthetic_phantom(16)
        with tempfile.TemporaryDirectory() as root:
            maps.write(LocalStorage(root), "phantom")
            with open(os.path.join(root, "phantom.csv")) as handle:
                lines = handle.read().splitlines()
            self.assertEqual(lines[0], "row,column,rho,t1,t2,df,phase")
            self.assertEqual(len(lines), 257)
            for key in ("rho", "t1", "t2"):
                with Image.open(os.path.join(root, "phantom_{}.png".format(key))) as image:
                    self.assertEqual(image.size, (16, 16))

class TestImageSequence(unittest.TestCase):

    def test_single_voxel(self):
        seq = random_sequence(100)
        maps = PhantomMaps([[80.0]], [[811.0]], [[77.0]])
        X = maps_to_sequence(maps, seq)
        np.testing.assert_allclose(X.data[0], simulate_response(VoxelParams(811, 77, rho=80), seq), rtol=1e-14, atol=0)

    def test_background(self):
        seq = random_sequence(20)
        X = maps_to_sequence(synthetic_phantom(16), seq)
        mask = synthetic_phantom(16).mask.reshape(-1)
        self.assertTrue(np.all(X.data[~mask] == 0))
        self.assertTrue(np.all(np.linalg.norm(X.data[mask], axis=1) > 0))
        empty = PhantomMaps(np.zeros((4, 4)), np.zeros((4, 4)), np.zeros((4, 4)))
        self.assertTrue(np.all(maps_to_sequence(empty, seq).data == 0))

    def test_linearity(self):
        seq = random_sequence(50)
        maps = synthetic_phantom(16)
        doubled = PhantomMaps(2 * maps.rho, maps.t1, maps.t2)
        np.testing.assert_allclose(maps_to_sequence(doubled, seq).data, 2 * maps_to_sequence(maps, seq).data, rtol=1e-14)

    def test_phase(self):
        seq = random_sequence(30)
        maps = synthetic_phantom(16, "single")
        X = maps_to_sequence(maps, seq)
        Z = maps_to_sequence(apply_quadratic_phase(maps), seq)
        np.testing.assert_allclose(np.abs(Z.data), np.abs(X.data), rtol=1e-12)
        np.testing.assert_allclose(Z.data[0], np.exp(1j * math.pi / 4) * X.data[0], rtol=1e-12)

class TestBrainWeb(unittest.TestCase):

    def setUp(self):
        self.directory = tempfile.TemporaryDirectory()
        volume = np.zeros(VOLUME_SHAPE, dtype=np.uint8)
        volume[40, 10:20, 30:40] = 2
        volume[40, 100, 100] = 5
        volume[40, 0, 0] = 9
        volume[41] = 3
        self.path = os.path.join(self.directory.name, "phantom_1.0mm_normal_crisp.rawb")
        volume.tofile(self.path)

    def tearDown(self):
        self.directory.cleanup()

    def test_labels(self):
        labels = read_labels(self.path)
        self.assertEqual(labels.shape, (217, 181))
        self.assertEqual(labels[0, 0], 0)
        self.assertEqual(np.count_nonzero(labels == 2), 100)
        self.assertTrue(np.all(read_labels(self.path, 41) == 3))

    def test_maps(self):
        maps = load_brainweb(self.path)
        self.assertEqual(maps.side, 256)
        self.assertEqual(maps.rho[19 + 10, 37 + 30], 100)
        self.assertEqual(maps.t1[19 + 10, 37 + 30], 1545)
        self.assertEqual(maps.t2[19 + 100, 37 + 100], 41)
        self.assertEqual(maps.rho[19, 37], 0)
        self.assertEqual(np.count_nonzero(maps.mask), 101)

    def test_padding(self):
        padded = pad_center(np.ones((217, 181)), 256)
        rows = np.flatnonzero(padded.any(axis=1))
        columns = np.flatnonzero(padded.any(axis=0))
        self.assertEqual((rows[0], 255 - rows[-1]), (19, 20))
        self.assertEqual((columns[0], 255 - columns[-1]), (37, 38))
        with self.assertRaises(PhantomException):
            pad_center(np.ones((217, 181)), 128)

    def test_invalid(self):
        truncated = os.path.join(self.directory.name, "truncated.rawb")
        with open(truncated, "wb") as handle:
            handle.write(bytes(100))
        with self.assertRaises(PhantomException):
            read_labels(truncated)
        with self.assertRaises(PhantomException):
            read_labels(self.path, 181)
