"""Ground truth parameter maps: tissue table, synthetic layouts and the image sequence they induce."""

import csv
import math
import logging
from typing import Tuple

import numpy as np

from blip import BLIPException
from blip.bloch import ExcitationSequence, simulate_batch
from blip.dictionary import ParameterGrid
from blip.sampling import ImageSequence
from blip.utilities import is_power_of_two

logger = logging.getLogger("blip")

class PhantomException(BLIPException):
    pass

class Tissue(object):

    def __init__(self, label: int, name: str, rho: float, t1: float, t2: float):
        self.label = int(label)
        self.name = name
        self.rho = float(rho)
        self.t1 = float(t1)
        self.t2 = float(t2)

    def __repr__(self):
        return "Tissue({}, {}, rho={}, t1={}, t2={})".format(self.label, self.name, self.rho, self.t1, self.t2)

class TissueTable(object):
    """Rows of (label, name, proton density, T1 ms, T2 ms), label 0 being the background."""

    def __init__(self, rows):
        self._rows = {}
        for row in rows:
            tissue = row if isinstance(row, Tissue) else Tissue(*row)
            if tissue.label in self._rows:
                raise PhantomException("Duplicate tissue label {}".format(tissue.label))
            if tissue.label == 0:
                if tissue.rho != 0:
                    raise PhantomException("Background must have zero density")
            elif tissue.rho < 0 or not (tissue.t1 > 0 and tissue.t2 > 0):
                raise PhantomException("Invalid tissue parameters {}".format(tissue))
            self._rows[tissue.label] = tissue
        if 0 not in self._rows:
            self._rows[0] = Tissue(0, "Background", 0, math.nan, math.nan)

    @staticmethod
    def default() -> "TissueTable":
        """Tissues of the segmented brain phantom, labels 5 and 6 share the skin/muscle row."""
        return TissueTable([
            (0, "Background", 0, math.nan, math.nan),
            (1, "CSF", 100, 5012, 512),
            (2, "Grey matter", 100, 1545, 83),
            (3, "White matter", 80, 811, 77),
            (4, "Adipose", 80, 530, 77),
            (5, "Skin/Muscle", 80, 1425, 41),
            (6, "Skin/Muscle", 80, 1425, 41),
        ])

    @property
    def labels(self):
        return sorted(self._rows.keys())

    def __getitem__(self, label: int) -> Tissue:
        try:
            return self._rows[int(label)]
        except KeyError:
            raise PhantomException("Unknown tissue label {}".format(label))

    def __contains__(self, label):
        return int(label) in self._rows

    def __len__(self):
        return len(self._rows)

    def tissues(self):
        """Distinct non-background tissues, the first label of every (rho, T1, T2) combination."""
        seen = {}
        for label in self.labels:
            tissue = self._rows[label]
            if label == 0:
                continue
            seen.setdefault((tissue.rho, tissue.t1, tissue.t2), tissue)
        return list(seen.values())

    def with_parameters(self, mapping) -> "TissueTable":
        """Copy with (T1, T2) replaced per label by ``mapping(tissue)``."""
        rows = []
        for label in self.labels:
            tissue = self._rows[label]
            if label == 0:
                rows.append(tissue)
            else:
                t1, t2 = mapping(tissue)
                rows.append(Tissue(label, tissue.name, tissue.rho, t1, t2))
        return TissueTable(rows)

    def maps(self, labels: np.ndarray) -> "PhantomMaps":
        labels = np.asarray(labels)
        unknown = np.setdiff1d(np.unique(labels), self.labels)
        if unknown.size > 0:
            raise PhantomException("Labels {} are not in the tissue table".format(unknown.tolist()))
        rho = np.zeros(labels.shape)
        t1 = np.full(labels.shape, np.nan)
        t2 = np.full(labels.shape, np.nan)
        for label in self.labels:
            if label == 0:
                continue
            tissue = self._rows[label]
            selection = labels == label
            rho[selection] = tissue.rho
            t1[selection] = tissue.t1
            t2[selection] = tissue.t2
        return PhantomMaps(rho, t1, t2)

class PhantomMaps(object):
    """Square parameter maps; background voxels have zero density and undefined relaxation times."""

    def __init__(self, rho, t1, t2, df=None, phase=None):
        rho = np.asarray(rho, dtype=np.float64)
        if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
            raise PhantomException("Parameter maps must be square, got {}".format(rho.shape))
        t1 = np.asarray(t1, dtype=np.float64)
        t2 = np.asarray(t2, dtype=np.float64)
        df = np.zeros(rho.shape) if df is None else np.asarray(df, dtype=np.float64)
        for name, array in (("t1", t1), ("t2", t2), ("df", df)):
            if array.shape != rho.shape:
                raise PhantomException("Map {} has shape {}, expected {}".format(name, array.shape, rho.shape))
        if phase is not None:
            phase = np.asarray(phase, dtype=np.float64)
            if phase.shape != rho.shape:
                raise PhantomException("Phase map has shape {}, expected {}".format(phase.shape, rho.shape))

        foreground = rho != 0
        if np.any(rho < 0):
            raise PhantomException("Proton density must be non-negative")
        if not (np.all(t1[foreground] > 0) and np.all(t2[foreground] > 0)):
            raise PhantomException("Relaxation times must be positive inside the object")

        t1 = np.where(foreground, t1, np.nan)
        t2 = np.where(foreground, t2, np.nan)
        df = np.where(foreground, df, 0.0)

        self._rho, self._t1, self._t2, self._df, self._phase = rho, t1, t2, df, phase

    @property
    def side(self) -> int:
        return self._rho.shape[0]

    @property
    def rho(self) -> np.ndarray:
        return self._rho

    @property
    def t1(self) -> np.ndarray:
        return self._t1

    @property
    def t2(self) -> np.ndarray:
        return self._t2

    @property
    def df(self) -> np.ndarray:
        return self._df

    @property
    def phase(self) -> np.ndarray:
        return self._phase

    @property
    def mask(self) -> np.ndarray:
        return self._rho != 0

    def density(self) -> np.ndarray:
        """Proton density map, complex when a phase map is present."""
        if self._phase is None:
            return self._rho
        return self._rho * np.exp(1j * self._phase)

    def with_phase(self, phase) -> "PhantomMaps":
        return PhantomMaps(self._rho, self._t1, self._t2, self._df, phase)

    def write(self, storage, name: str):
        """Writes ``<name>.csv`` with one row per voxel and a grayscale PNG per map."""
        from blip.utilities.draw import write_map

        with storage.write("{}.csv".format(name)) as handle:
            writer = csv.writer(handle)
            writer.writerow(["row", "column", "rho", "t1", "t2", "df", "phase"])
            phase = self._phase if self._phase is not None else np.zeros(self._rho.shape)
            for (row, column), rho in np.ndenumerate(self._rho):
                writer.writerow([row, column, rho, self._t1[row, column], self._t2[row, column],
                    self._df[row, column], phase[row, column]])

        for key, array in (("rho", self._rho), ("t1", self._t1), ("t2", self._t2)):
            write_map(storage, "{}_{}.png".format(name, key), array)

LAYOUTS = ("single", "ellipses", "rectangles")
MODES = ("on-grid", "off-grid", "table")

# (label, half axis along rows, half axis along columns) as fractions of the side, outermost first
_ELLIPSES = [
    (5, 0.47, 0.42),
    (4, 0.43, 0.38),
    (1, 0.39, 0.34),
    (2, 0.35, 0.30),
    (3, 0.24, 0.19),
]

_RECTANGLES = [
    (5, 0.45, 0.40),
    (4, 0.40, 0.35),
    (1, 0.34, 0.29),
    (2, 0.28, 0.23),
    (3, 0.18, 0.13),
]

def _layout_labels(side: int, layout: str, tissue: int) -> np.ndarray:
    labels = np.zeros((side, side), dtype=np.int64)
    if layout == "single":
        labels[:] = tissue
        return labels
    coordinates = (np.arange(side) + 0.5 - side / 2) / side
    rows, columns = np.meshgrid(coordinates, coordinates, indexing="ij")
    if layout == "ellipses":
        for label, a, b in _ELLIPSES:
            labels[(rows / a) ** 2 + (columns / b) ** 2 <= 1] = label
        # ventricles
        labels[((rows + 0.02) / 0.08) ** 2 + ((np.abs(columns) - 0.05) / 0.03) ** 2 <= 1] = 1
    else:
        for label, a, b in _RECTANGLES:
            labels[(np.abs(rows) <= a) & (np.abs(columns) <= b)] = label
    return labels

def _perturbed(tissue: Tissue, generator: np.random.Generator, perturbation: float) -> Tuple[float, float]:
    factors = 1 + generator.uniform(-perturbation, perturbation, 2)
    return tissue.t1 * factors[0], tissue.t2 * factors[1]

def adjust_table(table: TissueTable, mode: str, grid: ParameterGrid = None, perturbation: float = 0.03,
        seed=None) -> TissueTable:
    """Tissue parameters for a phantom mode: snapped to the grid, randomly perturbed or unchanged."""
    if mode not in MODES:
        raise PhantomException("Unknown phantom mode '{}'".format(mode))
    if mode == "on-grid":
        grid = grid or ParameterGrid.standard()
        return table.with_parameters(lambda t: tuple(float(v) for v in grid.snap(t.t1, t.t2)[:2]))
    if mode == "off-grid":
        generator = np.random.default_rng(seed)
        cache = {}
        # labels with identical parameters receive identical perturbations
        return table.with_parameters(lambda t: cache.setdefault((t.t1, t.t2), _perturbed(t, generator, perturbation)))
    return table

def synthetic_phantom(side: int, layout: str = "ellipses", table: TissueTable = None, mode: str = "on-grid",
        grid: ParameterGrid = None, perturbation: float = 0.03, seed=None, tissue: int = 2) -> PhantomMaps:
    """Deterministic nested-shapes phantom.

    :param layout: one of ``single``, ``ellipses`` or ``rectangles``
    :param mode: ``on-grid`` snaps tissue parameters to ``grid``, ``off-grid`` scales them by a seeded
        random factor within the perturbation, ``table`` keeps the tabulated values
    :param tissue: label used by the single tissue layout
    """
    if not is_power_of_two(side):
        raise PhantomException("Phantom side must be a power of two, got {}".format(side))
    if layout not in LAYOUTS:
        raise PhantomException("Unknown phantom layout '{}'".format(layout))

    table = table or TissueTable.default()
    if tissue not in table or tissue == 0:
        raise PhantomException("Illegal tissue label {} for the single tissue layout".format(tissue))

    table = adjust_table(table, mode, grid, perturbation, seed)
    return table.maps(_layout_labels(side, layout, tissue))

def apply_quadratic_phase(maps: PhantomMaps, corner_phase: float = math.pi / 4) -> PhantomMaps:
    """Adds a phase growing with the squared distance from the image center, ``corner_phase`` at
    all four corner voxels."""
    side = maps.side
    center = (side - 1) / 2
    positions = np.arange(side) - center
    radius = positions[:, np.newaxis] ** 2 + positions[np.newaxis, :] ** 2
    corner = 2 * center ** 2
    if corner == 0:
        return maps.with_phase(np.zeros_like(radius))
    return maps.with_phase(corner_phase * radius / corner)

def maps_to_sequence(maps: PhantomMaps, seq: ExcitationSequence) -> ImageSequence:
    """Image sequence X with row i equal to the density of voxel i times its Bloch response."""
    side = maps.side
    density = maps.density().reshape(-1)
    foreground = np.flatnonzero(maps.mask.reshape(-1))
    dtype = np.complex128
    X = np.zeros((side * side, seq.length), dtype=dtype)
    if foreground.size == 0:
        return ImageSequence(X, side)

    parameters = np.stack([maps.t1.reshape(-1)[foreground], maps.t2.reshape(-1)[foreground],
        maps.df.reshape(-1)[foreground]], axis=1)
    unique, inverse = np.unique(parameters, axis=0, return_inverse=True)
    responses = simulate_batch(unique[:, 0], unique[:, 1], unique[:, 2], seq)
    logger.debug("Simulated %d distinct responses for %d voxels", unique.shape[0], foreground.size)
    X[foreground] = density[foreground, np.newaxis] * responses[inverse.reshape(-1)]
    return ImageSequence(X, side)
