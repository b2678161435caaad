import os
import csv
import json
import math
import tempfile
import unittest

import numpy as np

from blip import NumericalException
from blip.dictionary import chord_flatness
from blip.phantom import TissueTable
from blip.experiment import ExperimentConfig, ExperimentException, generate_sequence, sweep_cells, \
    run_experiment, alias_chords, check_oracle_bound, Cell, ORACLE_CEILING_DB
from blip.experiment.metrics import MetricsException, MetricsRecord, CSV_COLUMNS, ser_db, flatness_report, \
    scaling_thresholds
from blip.sampling.isometry import mc_chord_isometry
from blip.utilities.attributes import AttributeException
from blip.workspace import LocalStorage

SLOW = os.environ.get("BLIP_SLOW_TESTS", "0") == "1"

SMALL_GRID = dict(t1=[400, 530, 800, 1100, 1425, 1545, 2500, 5012], t2=[41, 60, 77, 83, 120, 250, 512])

def small_config(**kwargs):
    data = dict(image_side=16, undersampling=[2], lengths=[20, 40], grid=SMALL_GRID,
        algorithms=["mrf", "mrf-rescaled", "blip", "blip-regularized", "oracle"])
    data.update(kwargs)
    return ExperimentConfig(**data)

def read_rows(root, name="results.csv"):
    with open(os.path.join(root, name), newline="") as handle:
        return list(csv.reader(handle))

class TestSequenceGeneration(unittest.TestCase):

    def test_zero_deviation(self):
        seq = generate_sequence(50, 0)
        np.testing.assert_array_equal(seq.flip_angles, np.zeros(50))
        np.testing.assert_array_equal(seq.repetition_times, np.full(50, 10.0))

    def test_deterministic(self):
        first = generate_sequence(100, 10, seed=3)
        second = generate_sequence(100, 10, seed=3)
        np.testing.assert_array_equal(first.flip_angles, second.flip_angles)
        self.assertFalse(np.array_equal(first.flip_angles, generate_sequence(100, 10, seed=4).flip_angles))

    def test_deviation(self):
        seq = generate_sequence(1000, 10, seed=0)
        self.assertAlmostEqual(np.std(np.rad2deg(seq.flip_angles)), 10, delta=1)

    def test_jitter(self):
        seq = generate_sequence(200, 10, 10, seed=0, tr_jitter=2)
        self.assertTrue(np.all(np.abs(seq.repetition_times - 10) <= 2))
        self.assertGreater(np.std(seq.repetition_times), 0)

    def test_invalid(self):
        with self.assertRaises(ExperimentException):
            generate_sequence(0, 10)
        with self.assertRaises(ExperimentException):
            generate_sequence(10, 10, 10, tr_jitter=10)

class TestMetrics(unittest.TestCase):

    def test_ser(self):
        x = np.random.default_rng(0).normal(size=(10, 5))
        self.assertEqual(ser_db(x, x), math.inf)
        self.assertAlmostEqual(ser_db(x, np.zeros_like(x)), 0, places=12)
        error = np.zeros_like(x)
        error[3, 2] = 0.1 * np.linalg.norm(x)
        self.assertAlmostEqual(ser_db(x, x + error), 20, places=10)

    def test_ser_mask(self):
        x = np.ones((4, 3))
        estimate = x.copy()
        estimate[0] = 0
        self.assertEqual(ser_db(x, estimate, [False, True, True, True]), math.inf)
        self.assertAlmostEqual(ser_db(x, estimate, [True, False, False, False]), 0, places=12)
        nan = np.full(4, np.nan)
        self.assertAlmostEqual(ser_db(np.ones(4), nan), 0, places=12)

    def test_ser_invalid(self):
        with self.assertRaises(MetricsException):
            ser_db(np.ones(4), np.ones(4), np.zeros(4, dtype=bool))
        with self.assertRaises(MetricsException):
            ser_db(np.ones(4), np.ones(5))

    def test_flatness_report(self):
        seq = generate_sequence(300, 10, seed=1)
        rows = flatness_report(TissueTable.default(), seq, [100, 300])
        self.assertEqual(len(rows), 20)
        self.assertEqual(list(rows[0].keys()), ["tissue_a", "tissue_b", "length", "flatness", "inv_square_over_length"])
        for row in rows:
            self.assertTrue(1 / math.sqrt(row["length"]) <= row["flatness"] <= 1)
            self.assertAlmostEqual(row["inv_square_over_length"], 1 / (row["flatness"] ** 2 * row["length"]))

    def test_flatness_identical(self):
        table = TissueTable([(1, "A", 100, 1000, 100), (2, "B", 80, 1000, 100)])
        self.assertEqual(flatness_report(table, generate_sequence(20, 10, seed=0), [20]), [])

    def test_flatness_basis(self):
        for length in (10, 100):
            chord = np.zeros(length)
            chord[3] = 2
            flatness = chord_flatness(chord)
            self.assertEqual(1 / (flatness ** 2 * length), 1 / length)

    def test_flatness_trend(self):
        seq = generate_sequence(1000, 10, seed=2)
        rows = [row for row in flatness_report(TissueTable.default(), seq, [100, 200, 500, 1000])
            if (row["tissue_a"], row["tissue_b"]) == ("CSF", "Grey matter")]
        self.assertEqual(len(rows), 4)
        for row in rows:
            self.assertGreater(row["inv_square_over_length"], 0.01)
            self.assertLessEqual(row["inv_square_over_length"], 1)
        self.assertGreater(rows[-1]["inv_square_over_length"] * 1000, rows[0]["inv_square_over_length"] * 100)

    def _record(self, algorithm, p, length, ser):
        return MetricsRecord("epi-p{}-L{}".format(p, length), 64, p, length, "epi", "real", algorithm, 1,
            ser, ser, ser, ser, 0.0, 0.1, 0.1)

    def test_scaling_thresholds(self):
        records = []
        for p, transition in ((4, 32), (8, 128)):
            for length in (16, 32, 64, 128, 256):
                records.append(self._record("oracle", p, length, math.inf))
                records.append(self._record("blip", p, length, 80.0 if length >= transition else 10.0))
        records.append(self._record("oracle", 16, 16, 30.0))
        records.append(self._record("blip", 16, 16, 5.0))
        thresholds = scaling_thresholds(records)
        self.assertEqual(thresholds[4], (32, 2.0))
        self.assertEqual(thresholds[8], (128, 2.0))
        self.assertIsNone(thresholds[16])
        with self.assertRaises(MetricsException):
            scaling_thresholds([self._record("blip", 4, 16, 1.0)])

class TestExperimentConfig(unittest.TestCase):

    def test_defaults(self):
        config = ExperimentConfig()
        self.assertEqual(config.image_side, 64)
        self.assertEqual(config.undersampling, [8])
        self.assertEqual(config.sequence.sigma, 10)
        self.assertEqual(config.grid.grid().size, 3379)
        self.assertEqual(config.recon.kappa, 0.99)

    def test_invalid(self):
        with self.assertRaises(AttributeException):
            ExperimentConfig(image_side=48)
        with self.assertRaises(AttributeException):
            ExperimentConfig(image_side=16, undersampling=[32])
        with self.assertRaises(AttributeException):
            ExperimentConfig(image_side=64, undersampling=[16], sampling=["variable-density"])
        with self.assertRaises(AttributeException):
            ExperimentConfig(algorithms=["blip-regularized"], recon=dict(density_model="complex"))
        with self.assertRaises(AttributeException):
            ExperimentConfig(grid=dict(t1=["100:20:50"]))
        with self.assertRaises(AttributeException):
            ExperimentConfig(phantom=dict(source="brainweb"))
        with self.assertRaises(AttributeException):
            ExperimentConfig(sequence=dict(tr_jitter=20))
        with self.assertRaises(AttributeException):
            ExperimentConfig(lengths=[])

    def test_identifier(self):
        config = small_config()
        self.assertEqual(config.identifier, small_config().identifier)
        self.assertEqual(config.identifier, small_config(output="elsewhere").identifier)
        self.assertNotEqual(config.identifier, small_config(seed=1).identifier)
        self.assertEqual(ExperimentConfig(**config.dump()).identifier, config.identifier)

    def test_update(self):
        config = small_config().update(recon=dict(max_iters=3))
        self.assertEqual(config.recon.max_iters, 3)
        self.assertEqual(config.recon.kappa, 0.99)

    def test_cells(self):
        cells = sweep_cells(small_config(image_side=32, undersampling=[4, 2], lengths=[40, 20, 40],
            sampling=["epi", "variable-density"]))
        self.assertEqual([c.identifier for c in cells], ["epi-p2-L20", "epi-p2-L40", "epi-p4-L20", "epi-p4-L40",
            "variable-density-p2-L20", "variable-density-p2-L40", "variable-density-p4-L20", "variable-density-p4-L40"])
        self.assertEqual([c.index for c in cells], list(range(8)))

class TestExperiment(unittest.TestCase):

    def test_run(self):
        with tempfile.TemporaryDirectory() as root:
            records = run_experiment(small_config(), LocalStorage(root))
            rows = read_rows(root)
            with open(os.path.join(root, "results.json")) as handle:
                sidecar = json.load(handle)

        self.assertEqual(rows[0], CSV_COLUMNS)
        self.assertEqual(len(rows), 11)
        self.assertEqual(len(records), 10)
        self.assertEqual([r.algorithm for r in records[:5]], ["mrf", "mrf-rescaled", "blip", "blip-regularized", "oracle"])
        self.assertEqual(len(sidecar["runs"]), 10)
        self.assertEqual(sidecar["config_hash"], small_config().identifier)

        column = {name: i for i, name in enumerate(CSV_COLUMNS)}
        for row in rows[1:]:
            self.assertEqual(row[column["config_hash"]], small_config().identifier)
            self.assertEqual(row[column["seed"]], "0")
        oracle = [r for r in records if r.algorithm == "oracle"]
        self.assertTrue(all(r.ser_t1 == math.inf and r.ser_t2 == math.inf for r in oracle))
        self.assertTrue(all(r.ser_image > 200 for r in oracle))
        self.assertTrue(all(r.iterations == 0 for r in oracle))
        self.assertTrue(all(r.iterations >= 1 for r in records if r.algorithm != "oracle"))

    def test_deterministic(self):
        outputs = []
        for workers in (1, 2, 1):
            with tempfile.TemporaryDirectory() as root:
                run_experiment(small_config(workers=workers, undersampling=[2, 4]), LocalStorage(root))
                with open(os.path.join(root, "results.csv"), "rb") as handle:
                    outputs.append(handle.read())
        self.assertEqual(outputs[0], outputs[1])
        self.assertEqual(outputs[0], outputs[2])

    def test_variable_density(self):
        records = run_experiment(small_config(image_side=32, undersampling=[4], lengths=[30],
            sampling=["epi", "variable-density"], algorithms=["blip", "oracle"]))
        self.assertEqual([r.sampling for r in records], ["epi", "epi", "variable-density", "variable-density"])

    def test_degenerate(self):
        records = run_experiment(small_config(undersampling=[16], lengths=[1], algorithms=["mrf-rescaled", "blip"]))
        self.assertEqual(len(records), 2)

    def test_complex_phase(self):
        config = small_config(lengths=[40], algorithms=["blip", "oracle"], phantom=dict(phase=True),
            recon=dict(density_model="complex"))
        records = run_experiment(config)
        self.assertEqual(records[1].ser_t2, math.inf)

    def test_failure(self):
        config = small_config(lengths=[10, 20], algorithms=["blip"], recon=dict(kappa=1e-6, max_halvings=0))
        with tempfile.TemporaryDirectory() as root:
            with self.assertRaises(ExperimentException) as context:
                run_experiment(config, LocalStorage(root))
            rows = read_rows(root)
        self.assertEqual(context.exception.cell.identifier, "epi-p2-L10")
        self.assertIsInstance(context.exception.__cause__, NumericalException)
        self.assertEqual(rows, [CSV_COLUMNS])

    def test_oracle_bound(self):
        records = run_experiment(small_config(lengths=[20], algorithms=["blip", "oracle"]))
        blip, oracle = records
        self.assertLessEqual(min(blip.ser_image, ORACLE_CEILING_DB), min(oracle.ser_image, ORACLE_CEILING_DB) + 1e-6)
        check_oracle_bound(records)

        cell = Cell(0, "epi", 2, 20)
        doctored = MetricsRecord(cell.identifier, 16, 2, 20, "epi", "real", "blip", 3, 31.0, 31.0, 31.0, 31.0, 1e-4, 0.1, 0.1)
        reference = MetricsRecord(cell.identifier, 16, 2, 20, "epi", "real", "oracle", 1, 30.0, 30.0, 30.0, 30.0, 1e-4, 0.1, 0.1)
        with self.assertRaises(ExperimentException) as context:
            check_oracle_bound([doctored, reference], cell)
        self.assertIs(context.exception.cell, cell)

        doctored.ser_image = 30.0
        check_oracle_bound([doctored, reference], cell)
        doctored.ser_image, reference.ser_image = math.inf, 250.0
        check_oracle_bound([doctored, reference], cell)
        check_oracle_bound([doctored], cell)

    def test_alias_chords(self):
        U = alias_chords(TissueTable.default(), generate_sequence(100, 10, seed=0), 4)
        self.assertEqual(U.shape, (4, 100))
        report = mc_chord_isometry(U, 2000, seed=1)
        self.assertAlmostEqual(report.mean, 1, delta=0.05)

@unittest.skipUnless(SLOW, "set BLIP_SLOW_TESTS=1 to run acceptance scale experiments")
class TestAcceptance(unittest.TestCase):

    def _run(self, **kwargs):
        data = dict(image_side=64, undersampling=[8], lengths=[200], algorithms=["mrf-rescaled", "blip", "oracle"])
        data.update(kwargs)
        return {(r.sampling, r.undersampling, r.length, r.algorithm): r for r in run_experiment(ExperimentConfig(**data))}

    def test_desk_recovery(self):
        records = self._run()
        oracle = records[("epi", 8, 200, "oracle")]
        blip = records[("epi", 8, 200, "blip")]
        mrf = records[("epi", 8, 200, "mrf-rescaled")]
        self.assertLessEqual(blip.iterations, 20)
        self.assertLess(blip.final_consistency, 1e-3)
        self.assertTrue(all(b <= a * (1 + 1e-9) + 1e-15 for a, b in zip(blip.errors, blip.errors[1:])))
        self.assertLessEqual(min(blip.ser_image, ORACLE_CEILING_DB), min(oracle.ser_image, ORACLE_CEILING_DB) + 1e-6)
        self.assertLessEqual(mrf.ser_image, blip.ser_image - 8)

    def test_desk_recovery_off_grid(self):
        records = self._run(phantom=dict(mode="off-grid"))
        oracle = records[("epi", 8, 200, "oracle")]
        blip = records[("epi", 8, 200, "blip")]
        mrf = records[("epi", 8, 200, "mrf-rescaled")]
        self.assertGreaterEqual(blip.ser_image, oracle.ser_image - 1)
        self.assertLessEqual(blip.ser_image, oracle.ser_image + 1e-6)
        self.assertLess(mrf.ser_image, blip.ser_image)

    def test_scaling(self):
        lengths = [10, 20, 40, 80, 160, 320, 640]
        records = run_experiment(ExperimentConfig(image_side=64, undersampling=[4, 8, 16], lengths=lengths,
            algorithms=["blip", "oracle"], phantom=dict(mode="off-grid")))
        thresholds = scaling_thresholds(records)
        ratios = [thresholds[p][1] for p in (4, 8, 16)]
        self.assertLessEqual(max(ratios) / min(ratios), 2)

    def test_uniform_sampling(self):
        records = self._run(sampling=["epi", "variable-density"], algorithms=["blip"])
        self.assertGreaterEqual(records[("epi", 8, 200, "blip")].ser_t2,
            records[("variable-density", 8, 200, "blip")].ser_t2 + 3)

    def test_complex_parity(self):
        real = self._run(algorithms=["blip"], phantom=dict(mode="off-grid"))
        complex_model = self._run(algorithms=["blip"], phantom=dict(mode="off-grid", phase=True),
            recon=dict(density_model="complex"))
        for metric in ("ser_t2", "ser_rho"):
            difference = getattr(complex_model[("epi", 8, 200, "blip")], metric) - getattr(real[("epi", 8, 200, "blip")], metric)
            self.assertLessEqual(abs(difference), 1, metric)
