"""Experiment harness: declarative configuration, random excitation sequences and sweeps over
sequence length, undersampling factor and sampling pattern."""

import csv
import json
import math
import time
import typing
import logging
from itertools import product, combinations

import numpy as np

from blip import BLIPException, __version__
from blip.bloch import ExcitationSequence, simulate_batch
from blip.dictionary import ParameterGrid, BlochDictionary, DictionaryException
from blip.sampling import Schedule, SamplingSchedule, VariableDensitySchedule, ImageSequence, forward, CENTER_ROWS
from blip.phantom import TissueTable, PhantomMaps, LAYOUTS, MODES, adjust_table, synthetic_phantom, \
    apply_quadratic_phase, maps_to_sequence
from blip.phantom.brainweb import VOLUME_SHAPE, load_brainweb
from blip.recon import ReconConfig, ReconResult, mrf_reconstruct, blip_reconstruct, oracle_estimate, consistency_error
from blip.experiment.metrics import MetricsRecord, CSV_COLUMNS, CSV_SCHEMA, CSV_VERSION, evaluate, flatness_summary
from blip.utilities import Progress, ThreadPoolExecutor, arg_hash, is_power_of_two
from blip.utilities.attributes import Attributee, AttributeException, Integer, Float, Boolean, String, Choice, \
    List, Nested, Ranges

logger = logging.getLogger("blip")

SAMPLING_PATTERNS = ("epi", "variable-density")
ALGORITHMS = ("mrf", "mrf-rescaled", "blip", "blip-regularized", "oracle")

# image SER slack and clipping level for the oracle bound
ORACLE_SLACK_DB = 1e-6
ORACLE_CEILING_DB = 100.0

class ExperimentException(BLIPException):
    """Failure of a sweep cell, the cell is available as ``cell`` and the original error as ``__cause__``."""

    def __init__(self, message, cell: "Cell" = None):
        super().__init__(message)
        self.cell = cell

def generate_sequence(length: int, sigma: float, repetition: float = 10.0, seed=None,
        tr_jitter: float = 0.0) -> ExcitationSequence:
    """Random flip angles drawn from N(0, sigma^2) degrees with constant repetition time, optionally
    jittered uniformly by up to ``tr_jitter`` ms."""
    if length < 1:
        raise ExperimentException("Sequence length must be positive, got {}".format(length))
    if sigma < 0 or not repetition > 0 or not 0 <= tr_jitter < repetition:
        raise ExperimentException("Illegal sequence parameters (sigma={}, tr={}, jitter={})".format(
            sigma, repetition, tr_jitter))
    generator = np.random.default_rng(seed)
    angles = generator.normal(0, sigma, length)
    times = np.full(length, float(repetition))
    if tr_jitter > 0:
        times = times + generator.uniform(-tr_jitter, tr_jitter, length)
    return ExcitationSequence.from_degrees(angles, times)

def alias_chords(table: TissueTable, seq: ExcitationSequence, undersampling: int) -> np.ndarray:
    """Alias matrix of a group of ``undersampling`` voxels, row k holds the response chord of the
    k-th tissue pair (cycling through all pairs)."""
    tissues = table.tissues()
    responses = simulate_batch([t.t1 for t in tissues], [t.t2 for t in tissues], np.zeros(len(tissues)), seq)
    pairs = list(combinations(range(len(tissues)), 2))
    if not pairs:
        raise ExperimentException("At least two distinct tissues are required")
    return np.stack([responses[i] - responses[j] for i, j in (pairs[k % len(pairs)] for k in range(undersampling))])

class PhantomConfig(Attributee):

    source = Choice(("synthetic", "brainweb"), default="synthetic")
    layout = Choice(LAYOUTS, default="ellipses")
    mode = Choice(MODES, default="on-grid")
    tissue = Integer(val_min=1, val_max=6, default=2)
    perturbation = Float(val_min=0, val_max=0.5, default=0.03)
    path = String(default="")
    slice_index = Integer(val_min=0, val_max=VOLUME_SHAPE[0] - 1, default=40)
    phase = Boolean(default=False)
    corner_phase = Float(default=math.pi / 4)

    def __init__(self, **kwargs):
        super().__init__(**kwargs)
        if self.source == "brainweb" and not self.path:
            raise AttributeException("BrainWeb phantom requires a path")

    def table(self, grid: ParameterGrid, seed=None) -> TissueTable:
        return adjust_table(TissueTable.default(), self.mode, grid, self.perturbation, seed)

    def generate(self, side: int, table: TissueTable) -> PhantomMaps:
        if self.source == "brainweb":
            maps = load_brainweb(self.path, self.slice_index, table, side)
        else:
            maps = synthetic_phantom(side, self.layout, table, mode="table", tissue=self.tissue)
        if self.phase:
            maps = apply_quadratic_phase(maps, self.corner_phase)
        return maps

class GridConfig(Attributee):

    t1 = Ranges(default=["100:20:2000", "2300:300:5900"])
    t2 = Ranges(default=["20:5:100", "110:10:200", "400:200:1000"])
    df = Ranges(default=[0])

    def __init__(self, **kwargs):
        super().__init__(**kwargs)
        try:
            self._grid = ParameterGrid(self.t1, self.t2, self.df)
        except DictionaryException as e:
            raise AttributeException(str(e))

    def grid(self) -> ParameterGrid:
        return self._grid

class SequenceConfig(Attributee):

    sigma = Float(val_min=0, default=10)
    repetition = Float(val_min=0, default=10)
    tr_jitter = Float(val_min=0, default=0)

    def __init__(self, **kwargs):
        super().__init__(**kwargs)
        if not self.repetition > 0:
            raise AttributeException("Repetition time must be positive")
        if self.tr_jitter >= self.repetition:
            raise AttributeException("Repetition time jitter must be smaller than the repetition time")

    def generate(self, length: int, seed=None) -> ExcitationSequence:
        return generate_sequence(length, self.sigma, self.repetition, seed, self.tr_jitter)

class ExperimentConfig(Attributee):

    image_side = Integer(val_min=1, default=64)
    undersampling = List(Integer(val_min=1), default=[8])
    lengths = List(Integer(val_min=1), default=[200])
    sampling = List(Choice(SAMPLING_PATTERNS), default=["epi"])
    algorithms = List(Choice(ALGORITHMS), default=["mrf-rescaled", "blip", "oracle"])
    phantom = Nested(PhantomConfig, default={})
    grid = Nested(GridConfig, default={})
    sequence = Nested(SequenceConfig, default={})
    recon = Nested(ReconConfig, default={})
    seed = Integer(val_min=0, default=0)
    workers = Integer(val_min=1, default=1)
    output = String(default="")

    def __init__(self, **kwargs):
        super().__init__(**kwargs)
        side = self.image_side
        if not is_power_of_two(side):
            raise AttributeException("Image side must be a power of two, got {}".format(side))
        for name in ("undersampling", "lengths", "sampling", "algorithms"):
            if not getattr(self, name):
                raise AttributeException("Attribute {}: at least one value required".format(name))
        for p in self.undersampling:
            if not is_power_of_two(p) or p > side:
                raise AttributeException("Undersampling factor {} must be a power of two not above {}".format(p, side))
            if "variable-density" in self.sampling and side // p < CENTER_ROWS:
                raise AttributeException("Variable density sampling needs {} rows per readout, p={} leaves {}".format(
                    CENTER_ROWS, p, side // p))
        if "blip-regularized" in self.algorithms and self.recon.density_model != "real":
            raise AttributeException("Regularized reconstruction requires the real density model")
        if self.phantom.source == "brainweb" and side < VOLUME_SHAPE[1]:
            raise AttributeException("BrainWeb slices need an image side of at least {}".format(VOLUME_SHAPE[1]))

    def streams(self):
        """Independent seed sequences of the excitation sequence, the sampling schedules and the phantom."""
        return np.random.SeedSequence(self.seed).spawn(3)

    @property
    def identifier(self) -> str:
        """Hash of the configuration, the output location excluded."""
        data = self.dump()
        del data["output"]
        return arg_hash(json.dumps(data, sort_keys=True))

class Cell(object):

    def __init__(self, index: int, sampling: str, undersampling: int, length: int):
        self.index = index
        self.sampling = sampling
        self.undersampling = undersampling
        self.length = length

    @property
    def identifier(self) -> str:
        return "{}-p{}-L{}".format(self.sampling, self.undersampling, self.length)

    def __repr__(self):
        return self.identifier

def sweep_cells(config: ExperimentConfig) -> typing.List[Cell]:
    grid = product(config.sampling, sorted(set(config.undersampling)), sorted(set(config.lengths)))
    return [Cell(i, sampling, p, length) for i, (sampling, p, length) in enumerate(grid)]

class Environment(object):
    """Inputs shared by all cells of a sweep: tissue table, phantom, excitation sequence of the
    largest length, its dictionary and ground truth image sequence, and the sampling schedules.

    Shorter sequences are prefixes of the longest one, so per-cell dictionaries and image sequences
    are column slices. Independent random streams (sequence, sampling, phantom) are spawned from
    the configuration seed.
    """

    def __init__(self, config: ExperimentConfig, cache=None):
        from blip.workspace import DictionaryCache

        sequence_seed, sampling_seed, phantom_seed = config.streams()
        self._config = config
        self._grid = config.grid.grid()
        self._table = config.phantom.table(self._grid, phantom_seed)
        self._maps = config.phantom.generate(config.image_side, self._table)
        if not np.any(self._maps.mask):
            raise ExperimentException("Phantom has no foreground voxels")

        self._sequence = config.sequence.generate(max(config.lengths), sequence_seed)
        cache = cache if cache is not None else DictionaryCache()
        self._dictionary = cache.build(self._grid, self._sequence)
        self._image = maps_to_sequence(self._maps, self._sequence)

        self._schedules = {}
        for i, pattern in enumerate(config.sampling):
            for p in sorted(set(config.undersampling)):
                seed = np.random.SeedSequence(sampling_seed.entropy, spawn_key=tuple(sampling_seed.spawn_key) + (i, p))
                if pattern == "epi":
                    self._schedules[(pattern, p)] = SamplingSchedule(config.image_side, p, self._sequence.length, seed)
                else:
                    self._schedules[(pattern, p)] = [VariableDensitySchedule(config.image_side, p, length, seed)
                        for length in sorted(set(config.lengths))]

    @property
    def maps(self) -> PhantomMaps:
        return self._maps

    @property
    def table(self) -> TissueTable:
        return self._table

    @property
    def sequence(self) -> ExcitationSequence:
        return self._sequence

    @property
    def dictionary(self) -> BlochDictionary:
        return self._dictionary

    def schedule(self, cell: Cell) -> Schedule:
        schedule = self._schedules[(cell.sampling, cell.undersampling)]
        if isinstance(schedule, list):
            return next(s for s in schedule if s.length == cell.length)
        return schedule if schedule.length == cell.length else schedule.truncate(cell.length)

    def inputs(self, cell: Cell):
        """Excitation sequence, dictionary, ground truth and schedule of a cell."""
        length = cell.length
        if length == self._sequence.length:
            seq, dictionary, data = self._sequence, self._dictionary, self._image.data
        else:
            seq = self._sequence.truncate(length)
            dictionary = BlochDictionary(self._grid, seq, self._dictionary.atoms[:, :length])
            data = self._image.data[:, :length]
        return seq, dictionary, ImageSequence(data, self._image.image_side), self.schedule(cell)

def reconstruct(algorithm: str, Y, schedule: Schedule, dictionary: BlochDictionary, truth: ImageSequence,
        config: ReconConfig) -> ReconResult:
    if algorithm == "mrf":
        return mrf_reconstruct(Y, schedule, dictionary, config)
    if algorithm == "mrf-rescaled":
        return mrf_reconstruct(Y, schedule, dictionary, config, rescaled=True)
    if algorithm == "blip":
        return blip_reconstruct(Y, schedule, dictionary, config.update(regularization="none"))
    if algorithm == "blip-regularized":
        return blip_reconstruct(Y, schedule, dictionary, config.update(regularization="wavelet"))
    if algorithm == "oracle":
        return oracle_estimate(truth, dictionary, config.density_model, config.block)
    raise ExperimentException("Unknown algorithm '{}'".format(algorithm))

def check_oracle_bound(records: typing.List[MetricsRecord], cell: "Cell" = None):
    """Raises when a BLIP reconstruction of a cell has a higher image SER than the oracle.

    The oracle is the voxelwise best dictionary fit of the truth, so no reconstruction in the same
    cone can beat it. Ratios are clipped to :data:`ORACLE_CEILING_DB`.
    """
    oracle = next((record for record in records if record.algorithm == "oracle"), None)
    if oracle is None:
        return
    bound = min(oracle.ser_image, ORACLE_CEILING_DB) + ORACLE_SLACK_DB
    for record in records:
        if record.algorithm == "blip" and min(record.ser_image, ORACLE_CEILING_DB) > bound:
            raise ExperimentException("BLIP image SER {:.4f} dB exceeds the oracle {:.4f} dB in cell {}".format(
                record.ser_image, oracle.ser_image, record.cell), cell=cell)

def run_cell(environment: Environment, config: ExperimentConfig, cell: Cell,
        storage=None) -> typing.List[MetricsRecord]:
    """Reconstructs one cell with every configured algorithm, the estimated maps are written to
    ``storage`` when given."""
    seq, dictionary, truth, schedule = environment.inputs(cell)
    Y = forward(truth, schedule)
    flatness = flatness_summary(environment.table, seq)

    records = []
    for algorithm in config.algorithms:
        start = time.perf_counter()
        result = reconstruct(algorithm, Y, schedule, dictionary, truth, config.recon)
        runtime = time.perf_counter() - start
        if storage is not None:
            result.write(storage, "{}_{}".format(cell.identifier, algorithm))
        if result.errors:
            final = result.errors[-1]
        else:
            final = consistency_error(result.estimate.data, Y.samples, schedule)
        record = evaluate(result, truth, environment.maps, final, flatness, cell.identifier, cell.sampling,
            cell.undersampling, config.recon.density_model, runtime)
        logger.debug("Cell %s, %s: image SER %.2f dB, %d iterations", cell.identifier, algorithm,
            record.ser_image, record.iterations)
        records.append(record)
    check_oracle_bound(records, cell)
    return records

def run_experiment(config: ExperimentConfig, storage=None, cache=None, progress: bool = False,
        name: str = "results", save_maps: bool = False) -> typing.List[MetricsRecord]:
    """Runs all sweep cells and returns their metric records in cell order.

    With a storage, rows are written to ``<name>.csv`` as cells complete (in cell order) and the
    runtimes and per-iteration errors to ``<name>.json``; ``save_maps`` also writes the estimated
    maps of every run to the ``maps`` substorage. A failing cell raises
    :class:`ExperimentException`, rows of the cells before it are kept.
    """
    environment = Environment(config, cache)
    cells = sweep_cells(config)
    config_hash = config.identifier
    logger.info("Running %d sweep cells (configuration %s)", len(cells), config_hash[:8])

    maps_storage = storage.substorage("maps") if storage is not None and save_maps else None
    records = []
    handle = storage.write("{}.csv".format(name)) if storage is not None else None
    writer = csv.writer(handle) if handle is not None else None
    if writer is not None:
        writer.writerow(CSV_COLUMNS)
    bar = Progress("sweep", len(cells)) if progress else None

    try:
        with ThreadPoolExecutor(max_workers=config.workers) as executor:
            pending = [executor.submit(run_cell, environment, config, cell, maps_storage) for cell in cells]
            for cell, future in zip(cells, pending):
                try:
                    cell_records = future.result()
                except BLIPException as e:
                    raise ExperimentException("Sweep cell {} failed: {}".format(cell.identifier, e), cell=cell) from e
                records.extend(cell_records)
                if writer is not None:
                    for record in cell_records:
                        writer.writerow(record.row(config_hash, config.seed))
                    handle.flush()
                if bar is not None:
                    bar.relative(1)
    finally:
        if bar is not None:
            bar.close()
        if handle is not None:
            handle.close()
            with storage.write("{}.json".format(name)) as sidecar:
                json.dump(dict(schema="{}/{}".format(CSV_SCHEMA, CSV_VERSION), toolkit=__version__,
                    config_hash=config_hash, config=config.dump(), runs=[r.sidecar() for r in records]),
                    sidecar, indent=2)

    return records
