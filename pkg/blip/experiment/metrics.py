"""Signal-to-error ratios, per-run metric records and the sequence flatness report."""

import csv
import math
from itertools import combinations
from typing import List, Sequence, Dict, Tuple

import numpy as np

from blip import BLIPException, __version__
from blip.bloch import ExcitationSequence, simulate_batch
from blip.dictionary import chord_flatness
from blip.phantom import TissueTable

CSV_SCHEMA = "blip-results"
CSV_VERSION = 1

CSV_COLUMNS = ["schema", "version", "config_hash", "seed", "cell", "image_side", "undersampling", "length",
    "sampling", "density_model", "algorithm", "iterations", "ser_image", "ser_rho", "ser_t1", "ser_t2",
    "final_consistency", "flatness_min", "flatness_mean"]

FLATNESS_COLUMNS = ["tissue_a", "tissue_b", "length", "flatness", "inv_square_over_length"]

class MetricsException(BLIPException):
    pass

def ser_db(x_true, x_hat, mask=None) -> float:
    """Signal-to-error ratio 20 log10(||x|| / ||x - x_hat||) in dB over the masked entries.

    The mask selects leading-axis entries (voxels). Undefined estimates (NaN) count as zero,
    an exact estimate gives infinity.
    """
    x_true = np.asarray(x_true)
    x_hat = np.asarray(x_hat)
    if x_true.shape != x_hat.shape:
        raise MetricsException("Shapes {} and {} do not match".format(x_true.shape, x_hat.shape))
    if mask is not None:
        mask = np.asarray(mask, dtype=bool).reshape(-1)
        x_true = x_true.reshape(mask.size, -1)[mask]
        x_hat = x_hat.reshape(mask.size, -1)[mask]
    if x_true.size == 0:
        raise MetricsException("Signal-to-error ratio over an empty mask")

    x_hat = np.where(np.isnan(x_hat), 0, x_hat)
    signal = np.linalg.norm(x_true)
    error = np.linalg.norm(x_true - x_hat)
    if error == 0:
        return math.inf
    if signal == 0:
        raise MetricsException("Signal-to-error ratio of a zero signal")
    return float(20 * math.log10(signal / error))

class MetricsRecord(object):
    """Quality of one reconstruction within a sweep cell."""

    def __init__(self, cell: str, image_side: int, undersampling: int, length: int, sampling: str,
            density_model: str, algorithm: str, iterations: int, ser_image: float, ser_rho: float,
            ser_t1: float, ser_t2: float, final_consistency: float, flatness_min: float, flatness_mean: float,
            errors: List[float] = None, steps: List[float] = None, runtime: float = None):
        self.cell = cell
        self.image_side = image_side
        self.undersampling = undersampling
        self.length = length
        self.sampling = sampling
        self.density_model = density_model
        self.algorithm = algorithm
        self.iterations = iterations
        self.ser_image = ser_image
        self.ser_rho = ser_rho
        self.ser_t1 = ser_t1
        self.ser_t2 = ser_t2
        self.final_consistency = final_consistency
        self.flatness_min = flatness_min
        self.flatness_mean = flatness_mean
        self.errors = list(errors or [])
        self.steps = list(steps or [])
        self.runtime = runtime

    def row(self, config_hash: str, seed: int) -> list:
        return ["{}/{}".format(CSV_SCHEMA, CSV_VERSION), __version__, config_hash, seed, self.cell,
            self.image_side, self.undersampling, self.length, self.sampling, self.density_model, self.algorithm, self.iterations,
            repr(self.ser_image), repr(self.ser_rho), repr(self.ser_t1), repr(self.ser_t2),
            repr(self.final_consistency), repr(self.flatness_min), repr(self.flatness_mean)]

    def sidecar(self) -> dict:
        return dict(cell=self.cell, algorithm=self.algorithm, runtime=self.runtime, errors=self.errors, steps=self.steps)

    def __repr__(self):
        return "MetricsRecord({}, {}, ser_image={:.2f})".format(self.cell, self.algorithm, self.ser_image)

def evaluate(result, truth, maps, final_consistency: float, flatness: Tuple[float, float], cell: str,
        sampling: str, undersampling: int, density_model: str, runtime: float = None) -> MetricsRecord:
    """Compares a reconstruction with the ground truth image sequence and parameter maps
    over the voxels with nonzero true density."""
    mask = maps.mask.reshape(-1)
    theta = result.theta
    return MetricsRecord(cell, truth.image_side, undersampling, truth.length, sampling, density_model,
        result.algorithm, result.iterations,
        ser_image=ser_db(truth.data, result.estimate.data, mask),
        ser_rho=ser_db(np.abs(maps.density().reshape(-1)), np.abs(result.rho), mask),
        ser_t1=ser_db(maps.t1.reshape(-1), theta[:, 0], mask),
        ser_t2=ser_db(maps.t2.reshape(-1), theta[:, 1], mask),
        final_consistency=final_consistency, flatness_min=flatness[0], flatness_mean=flatness[1],
        errors=result.errors, steps=result.steps, runtime=runtime)

def flatness_report(table: TissueTable, seq: ExcitationSequence, lengths: Sequence[int]) -> List[dict]:
    """Flatness of the response chords of all tissue pairs for sequence prefixes of the given lengths.

    Pairs with identical responses have no chord and are left out.
    """
    tissues = table.tissues()
    if any(length < 1 or length > seq.length for length in lengths):
        raise MetricsException("Lengths must lie in [1, {}]".format(seq.length))
    responses = simulate_batch([t.t1 for t in tissues], [t.t2 for t in tissues], np.zeros(len(tissues)), seq)

    rows = []
    for (i, a), (j, b) in combinations(enumerate(tissues), 2):
        chord = responses[i] - responses[j]
        for length in lengths:
            prefix = chord[:length]
            if not np.linalg.norm(prefix) > 0:
                continue
            flatness = chord_flatness(prefix)
            rows.append(dict(tissue_a=a.name, tissue_b=b.name, length=int(length), flatness=flatness,
                inv_square_over_length=1 / (flatness ** 2 * length)))
    return rows

def flatness_summary(table: TissueTable, seq: ExcitationSequence) -> Tuple[float, float]:
    """Smallest and mean chord flatness over the tissue pairs at the full sequence length."""
    values = [row["flatness"] for row in flatness_report(table, seq, [seq.length])]
    if not values:
        return math.nan, math.nan
    return float(np.min(values)), float(np.mean(values))

def write_flatness(storage, name: str, rows: List[dict]):
    with storage.write(name) as handle:
        writer = csv.DictWriter(handle, fieldnames=FLATNESS_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({key: repr(value) if isinstance(value, float) else value for key, value in row.items()})

def scaling_thresholds(records: Sequence[MetricsRecord], margin_db: float = 3, algorithm: str = "blip",
        ceiling_db: float = 60) -> Dict[int, Tuple[int, float]]:
    """Smallest sequence length per undersampling factor at which ``algorithm`` comes within
    ``margin_db`` of the oracle image SER, together with the ratio of that length to p^2.

    Ratios are clipped to ``ceiling_db`` so that exact oracle recovery stays comparable. Factors
    that never reach the oracle map to ``None``.
    """
    oracle = {(r.sampling, r.undersampling, r.length): r.ser_image for r in records if r.algorithm == "oracle"}
    candidates = {}
    for record in records:
        if record.algorithm != algorithm:
            continue
        key = (record.sampling, record.undersampling, record.length)
        if key not in oracle:
            raise MetricsException("No oracle result for cell {}".format(record.cell))
        candidates.setdefault(record.undersampling, [])
        reached = min(record.ser_image, ceiling_db) >= min(oracle[key], ceiling_db) - margin_db
        candidates[record.undersampling].append((record.length, reached))

    thresholds = {}
    for p, cells in sorted(candidates.items()):
        lengths = sorted(length for length, reached in cells if reached)
        thresholds[p] = (lengths[0], lengths[0] / p ** 2) if lengths else None
    return thresholds
