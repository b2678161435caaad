"""Acquisition operator: unitary 2D DFT followed by per-readout selection of k_y rows.

Images are square with side S, stored per readout as rows of length N = S*S in row-major
order (k_y along the first axis). A schedule keeps S/p full k_x lines per readout, so a
measurement column has M = N/p entries ordered by the sampled row index.
"""

from abc import ABC, abstractmethod

import numpy as np

from blip import BLIPException
from blip.utilities import is_power_of_two

READOUT_BLOCK = 64

class SamplingException(BLIPException):
    pass

def _check_image(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image)
    if image.ndim < 2 or image.shape[-1] != image.shape[-2]:
        raise SamplingException("Expected square images, got shape {}".format(image.shape))
    if not is_power_of_two(image.shape[-1]):
        raise SamplingException("Image side must be a power of two, got {}".format(image.shape[-1]))
    return image

def dft2(image: np.ndarray) -> np.ndarray:
    """Unitary 2D DFT over the last two axes."""
    return np.fft.fft2(_check_image(image), norm="ortho")

def idft2(kspace: np.ndarray) -> np.ndarray:
    return np.fft.ifft2(_check_image(kspace), norm="ortho")

class ImageSequence(object):
    """Magnetization image sequence, an N x L complex matrix (voxels by readouts)."""

    def __init__(self, data, image_side: int = None):
        data = np.asarray(data, dtype=np.complex128)
        if data.ndim != 2:
            raise SamplingException("Image sequence must be a matrix, got shape {}".format(data.shape))
        if image_side is None:
            image_side = int(round(np.sqrt(data.shape[0])))
        if image_side * image_side != data.shape[0]:
            raise SamplingException("Voxel count {} is not the square of {}".format(data.shape[0], image_side))
        self._data = data
        self._side = image_side

    @staticmethod
    def zeros(image_side: int, length: int) -> "ImageSequence":
        return ImageSequence(np.zeros((image_side * image_side, length), dtype=np.complex128), image_side)

    @property
    def data(self) -> np.ndarray:
        return self._data

    @property
    def image_side(self) -> int:
        return self._side

    @property
    def voxels(self) -> int:
        return self._data.shape[0]

    @property
    def length(self) -> int:
        return self._data.shape[1]

    def image(self, l: int) -> np.ndarray:
        return self._data[:, l].reshape(self._side, self._side)

class Schedule(ABC):
    """Per-readout selection of k_y rows with a fixed number of rows per readout."""

    def __init__(self, image_side: int, undersampling: int, length: int):
        if not is_power_of_two(image_side):
            raise SamplingException("Image side must be a power of two, got {}".format(image_side))
        if undersampling < 1 or image_side % undersampling != 0:
            raise SamplingException("Undersampling factor {} does not divide image side {}".format(undersampling, image_side))
        if length < 1:
            raise SamplingException("Schedule length must be at least one")
        self._side = int(image_side)
        self._undersampling = int(undersampling)
        self._length = int(length)

    @property
    def image_side(self) -> int:
        return self._side

    @property
    def undersampling(self) -> int:
        return self._undersampling

    @property
    def length(self) -> int:
        return self._length

    @property
    def voxels(self) -> int:
        return self._side * self._side

    @property
    def rows_per_readout(self) -> int:
        return self._side // self._undersampling

    @property
    def measurements(self) -> int:
        return self.rows_per_readout * self._side

    @property
    @abstractmethod
    def row_table(self) -> np.ndarray:
        """Sampled rows as an (L, S/p) integer array, ascending in every readout."""

    def rows(self, l: int) -> np.ndarray:
        if not 0 <= l < self._length:
            raise SamplingException("Readout index {} out of range [0, {})".format(l, self._length))
        return self.row_table[l]

    @abstractmethod
    def dump(self) -> dict:
        pass

def _seed_value(seed):
    if isinstance(seed, np.random.SeedSequence):
        return seed.entropy if not seed.spawn_key else [seed.entropy] + list(seed.spawn_key)
    return seed

class SamplingSchedule(Schedule):
    """Random EPI: rows {zeta_l, zeta_l + p, ...} with i.i.d. uniform shifts per readout."""

    def __init__(self, image_side: int, undersampling: int, length: int = None, seed=None, shifts=None):
        if shifts is None:
            if length is None:
                raise SamplingException("Either the length or the shifts have to be given")
            shifts = np.random.default_rng(seed).integers(0, undersampling, length)
        shifts = np.array(shifts, dtype=np.int64).reshape(-1)
        super().__init__(image_side, undersampling, shifts.size)
        if np.any(shifts < 0) or np.any(shifts >= undersampling):
            raise SamplingException("Shifts must lie in [0, {})".format(undersampling))
        shifts.setflags(write=False)
        self._shifts = shifts
        self._seed = seed
        self._table = shifts[:, np.newaxis] + undersampling * np.arange(self.rows_per_readout)[np.newaxis, :]
        self._table.setflags(write=False)

    @property
    def shifts(self) -> np.ndarray:
        return self._shifts

    @property
    def seed(self):
        return self._seed

    @property
    def row_table(self) -> np.ndarray:
        return self._table

    def truncate(self, length: int) -> "SamplingSchedule":
        if not 1 <= length <= self.length:
            raise SamplingException("Illegal truncation length {}".format(length))
        return SamplingSchedule(self.image_side, self.undersampling, shifts=self._shifts[:length], seed=self._seed)

    def dump(self):
        return dict(pattern="epi", image_side=self.image_side, undersampling=self.undersampling,
            length=self.length, seed=_seed_value(self._seed))

CENTER_ROWS = 6

class VariableDensitySchedule(Schedule):
    """Six wraparound-central rows every readout plus fresh random rows for the remaining budget."""

    def __init__(self, image_side: int, undersampling: int, length: int, seed=None):
        super().__init__(image_side, undersampling, length)
        budget = self.rows_per_readout
        if budget < CENTER_ROWS:
            raise SamplingException("Variable density pattern needs at least {} rows per readout, budget is {}".format(
                CENTER_ROWS, budget))
        side = self.image_side
        fixed = np.array([0, 1, 2, side - 3, side - 2, side - 1])
        rest = np.arange(3, side - 3)
        generator = np.random.default_rng(seed)
        table = np.zeros((self.length, budget), dtype=np.int64)
        for l in range(self.length):
            table[l] = np.sort(np.concatenate([fixed, generator.choice(rest, budget - CENTER_ROWS, replace=False)]))
        table.setflags(write=False)
        self._table = table
        self._seed = seed

    @property
    def seed(self):
        return self._seed

    @property
    def row_table(self) -> np.ndarray:
        return self._table

    def dump(self):
        return dict(pattern="variable-density", image_side=self.image_side, undersampling=self.undersampling,
            length=self.length, seed=_seed_value(self._seed))

def epi_rows(schedule: SamplingSchedule, l: int) -> np.ndarray:
    return schedule.rows(l)

def variable_density_rows(schedule: VariableDensitySchedule, l: int) -> np.ndarray:
    return schedule.rows(l)

class KSpaceSequence(object):
    """Measurements Y, an M x L complex matrix, column l taken with the rows of readout l."""

    def __init__(self, samples, schedule: Schedule):
        samples = np.asarray(samples, dtype=np.complex128)
        if samples.shape != (schedule.measurements, schedule.length):
            raise SamplingException("Measurement shape {} does not match schedule ({}, {})".format(
                samples.shape, schedule.measurements, schedule.length))
        self._samples = samples
        self._schedule = schedule

    @property
    def samples(self) -> np.ndarray:
        return self._samples

    @property
    def schedule(self) -> Schedule:
        return self._schedule

def _image_data(X, schedule: Schedule) -> np.ndarray:
    data = X.data if isinstance(X, ImageSequence) else np.asarray(X)
    if data.shape != (schedule.voxels, schedule.length):
        raise SamplingException("Image sequence shape {} does not match schedule ({}, {})".format(
            data.shape, schedule.voxels, schedule.length))
    return data

def _kspace_data(Y, schedule: Schedule) -> np.ndarray:
    data = Y.samples if isinstance(Y, KSpaceSequence) else np.asarray(Y)
    if data.shape != (schedule.measurements, schedule.length):
        raise SamplingException("Measurement shape {} does not match schedule ({}, {})".format(
            data.shape, schedule.measurements, schedule.length))
    return data

def forward(X, schedule: Schedule) -> KSpaceSequence:
    """Applies h: DFT of every readout image followed by row selection."""
    data = _image_data(X, schedule)
    side, length = schedule.image_side, schedule.length
    table = schedule.row_table
    samples = np.empty((schedule.measurements, length), dtype=np.complex128)
    for start in range(0, length, READOUT_BLOCK):
        stop = min(start + READOUT_BLOCK, length)
        images = data[:, start:stop].T.reshape(stop - start, side, side)
        kspace = np.fft.fft2(images, norm="ortho")
        selected = kspace[np.arange(stop - start)[:, np.newaxis], table[start:stop], :]
        samples[:, start:stop] = selected.reshape(stop - start, -1).T
    return KSpaceSequence(samples, schedule)

def adjoint(Y, schedule: Schedule) -> ImageSequence:
    """Applies h^H: zero filling of unsampled rows followed by the inverse DFT."""
    data = _kspace_data(Y, schedule)
    side, length = schedule.image_side, schedule.length
    table = schedule.row_table
    rows = schedule.rows_per_readout
    result = np.empty((schedule.voxels, length), dtype=np.complex128)
    for start in range(0, length, READOUT_BLOCK):
        stop = min(start + READOUT_BLOCK, length)
        kspace = np.zeros((stop - start, side, side), dtype=np.complex128)
        kspace[np.arange(stop - start)[:, np.newaxis], table[start:stop], :] = \
            data[:, start:stop].T.reshape(stop - start, rows, side)
        result[:, start:stop] = np.fft.ifft2(kspace, norm="ortho").reshape(stop - start, -1).T
    return ImageSequence(result, side)
