"""Discretized Bloch response manifold and projections onto its cone.

Atoms are stored unnormalized, row ``k`` being the unit-density response of grid point
``k`` (lexicographic order in T1, T2, off-resonance). Inner products follow
``<a, b> = sum(conj(a) * b)``; argmax ties resolve to the lowest atom index.
"""

import logging
from typing import Tuple

import numpy as np
from bidict import bidict

from blip import BLIPException
from blip.bloch import VoxelParams, ExcitationSequence, simulate_batch, sequence_hash
from blip.utilities import array_hash

logger = logging.getLogger("blip")

DEFAULT_BLOCK = 2048

class DictionaryException(BLIPException):
    pass

def _as_axis(values, name, positive=True) -> np.ndarray:
    values = np.array(values, dtype=np.float64).reshape(-1)
    if values.size == 0:
        raise DictionaryException("Grid axis {} is empty".format(name))
    if not np.all(np.isfinite(values)):
        raise DictionaryException("Grid axis {} contains non-finite values".format(name))
    if positive and np.any(values <= 0):
        raise DictionaryException("Grid axis {} must be positive".format(name))
    if np.any(np.diff(values) <= 0):
        raise DictionaryException("Grid axis {} must be strictly increasing".format(name))
    values.setflags(write=False)
    return values

def _nearest(values: np.ndarray, x) -> np.ndarray:
    """Index of the nearest axis value, the lower one on ties."""
    x = np.asarray(x, dtype=np.float64)
    if values.size == 1:
        return np.zeros(x.shape, dtype=np.int64)
    upper = np.clip(np.searchsorted(values, x), 1, values.size - 1)
    lower = upper - 1
    return np.where(x - values[lower] <= values[upper] - x, lower, upper)

class ParameterGrid(object):

    def __init__(self, t1_values, t2_values, df_values=(0.0, )):
        self._t1 = _as_axis(t1_values, "T1")
        self._t2 = _as_axis(t2_values, "T2")
        self._df = _as_axis(df_values, "off-resonance", positive=False)

    @staticmethod
    def standard() -> "ParameterGrid":
        """The grid of 3379 atoms used in the desk and full-scale experiments."""
        t1 = np.concatenate([np.arange(100, 2001, 20), np.arange(2300, 5901, 300)])
        t2 = np.concatenate([np.arange(20, 101, 5), np.arange(110, 201, 10), np.arange(400, 1001, 200)])
        return ParameterGrid(t1, t2, [0.0])

    @property
    def t1_values(self) -> np.ndarray:
        return self._t1

    @property
    def t2_values(self) -> np.ndarray:
        return self._t2

    @property
    def df_values(self) -> np.ndarray:
        return self._df

    @property
    def size(self) -> int:
        return self._t1.size * self._t2.size * self._df.size

    def __len__(self):
        return self.size

    def points(self) -> np.ndarray:
        """Grid points as a (P, 3) array of (T1, T2, off-resonance) in lexicographic order."""
        t1, t2, df = np.meshgrid(self._t1, self._t2, self._df, indexing="ij")
        return np.stack([t1.reshape(-1), t2.reshape(-1), df.reshape(-1)], axis=1)

    def index(self, t1, t2, df=0.0) -> np.ndarray:
        """Atom index of the nearest grid point."""
        i = _nearest(self._t1, t1)
        j = _nearest(self._t2, t2)
        k = _nearest(self._df, df)
        return (i * self._t2.size + j) * self._df.size + k

    def snap(self, t1, t2, df=0.0) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Nearest grid point per axis (the lower value on ties)."""
        return self._t1[_nearest(self._t1, t1)], self._t2[_nearest(self._t2, t2)], self._df[_nearest(self._df, df)]

    def contains(self, t1, t2, df=0.0) -> bool:
        return bool(np.isin(t1, self._t1).all() and np.isin(t2, self._t2).all() and np.isin(df, self._df).all())

    def dump(self):
        return dict(t1=self._t1.tolist(), t2=self._t2.tolist(), df=self._df.tolist())

    def hash(self) -> str:
        return array_hash(self._t1, self._t2, self._df)

    def __eq__(self, other):
        if not isinstance(other, ParameterGrid):
            return False
        return np.array_equal(self._t1, other._t1) and np.array_equal(self._t2, other._t2) \
            and np.array_equal(self._df, other._df)

class BlochDictionary(object):

    def __init__(self, grid: ParameterGrid, sequence: ExcitationSequence, atoms: np.ndarray):
        atoms = np.asarray(atoms, dtype=np.complex128)
        if atoms.shape != (grid.size, sequence.length):
            raise DictionaryException("Atom matrix shape {} does not match grid size {} and sequence length {}".format(
                atoms.shape, grid.size, sequence.length))

        norms = np.linalg.norm(atoms, axis=1)
        zero = np.flatnonzero(~(norms > 0))
        if zero.size > 0:
            t1, t2, df = grid.points()[zero[0]]
            raise DictionaryException("Atom {} has zero norm (T1={}, T2={}, df={})".format(zero[0], t1, t2, df))

        points = grid.points()
        self._grid = grid
        self._sequence = sequence
        self._atoms = atoms
        self._atoms.setflags(write=False)
        self._norms = norms
        self._norms.setflags(write=False)
        self._parameters = points
        self._parameters.setflags(write=False)
        self._lut = bidict({k: tuple(p) for k, p in enumerate(points.tolist())})
        self._normalized = None
        self._conjugate = None

    @property
    def grid(self) -> ParameterGrid:
        return self._grid

    @property
    def sequence(self) -> ExcitationSequence:
        return self._sequence

    @property
    def atoms(self) -> np.ndarray:
        return self._atoms

    @property
    def norms(self) -> np.ndarray:
        return self._norms

    @property
    def parameters(self) -> np.ndarray:
        """Look-up table as a (P, 3) array of (T1, T2, off-resonance)."""
        return self._parameters

    @property
    def lut(self) -> bidict:
        return self._lut

    @property
    def size(self) -> int:
        return self._atoms.shape[0]

    @property
    def length(self) -> int:
        return self._atoms.shape[1]

    def __len__(self):
        return self.size

    @property
    def normalized(self) -> np.ndarray:
        if self._normalized is None:
            self._normalized = self._atoms / self._norms[:, np.newaxis]
            self._normalized.setflags(write=False)
        return self._normalized

    @property
    def conjugate_transpose(self) -> np.ndarray:
        if self._conjugate is None:
            self._conjugate = np.ascontiguousarray(np.conj(self._atoms).T)
        return self._conjugate

    def index_of(self, t1: float, t2: float, df: float = 0.0) -> int:
        try:
            return self._lut.inverse[(float(t1), float(t2), float(df))]
        except KeyError:
            raise DictionaryException("Parameters ({}, {}, {}) are not on the dictionary grid".format(t1, t2, df))

    def correlate(self, X: np.ndarray) -> np.ndarray:
        """Inner products <D_k, x_i> for every voxel row of ``X``, shape (N, P)."""
        return X @ self.conjugate_transpose

    @staticmethod
    def key(grid: ParameterGrid, seq: ExcitationSequence) -> str:
        return "{}-{}".format(grid.hash()[:16], sequence_hash(seq)[:16])

    @property
    def identifier(self) -> str:
        return BlochDictionary.key(self._grid, self._sequence)

def build_dictionary(grid: ParameterGrid, seq: ExcitationSequence) -> BlochDictionary:
    points = grid.points()
    logger.debug("Building dictionary with %d atoms of length %d", grid.size, seq.length)
    atoms = simulate_batch(points[:, 0], points[:, 1], points[:, 2], seq)
    return BlochDictionary(grid, seq, atoms)

def lut_lookup(k: int, dictionary: BlochDictionary) -> VoxelParams:
    if not 0 <= k < dictionary.size:
        raise DictionaryException("Atom index {} out of range [0, {})".format(k, dictionary.size))
    t1, t2, df = dictionary.lut[int(k)]
    return VoxelParams(t1, t2, df)

class Projection(object):
    """Result of projecting voxel sequences onto the dictionary cone.

    :var indices: selected atom per voxel
    :var densities: proton density per voxel (real or complex)
    :var correlations: normalized correlation of the selected atom, unclamped
    :var estimate: projected sequences, densities times atoms
    """

    def __init__(self, indices, densities, correlations, estimate):
        self.indices = indices
        self.densities = densities
        self.correlations = correlations
        self.estimate = estimate

    def __len__(self):
        return self.indices.size

def _check_voxels(X, dictionary: BlochDictionary) -> np.ndarray:
    X = np.asarray(X)
    if X.ndim == 1:
        X = X[np.newaxis, :]
    if X.ndim != 2 or X.shape[1] != dictionary.length:
        raise DictionaryException("Voxel sequences of shape {} do not match dictionary length {}".format(X.shape, dictionary.length))
    if not np.all(np.isfinite(X)):
        raise DictionaryException("Non-finite voxel sequences")
    return X

def _match(X, dictionary: BlochDictionary, score, block: int):
    indices = np.zeros(X.shape[0], dtype=np.int64)
    selected = np.zeros(X.shape[0], dtype=np.complex128)
    for start in range(0, X.shape[0], block):
        correlations = dictionary.correlate(X[start:start+block])
        best = np.argmax(score(correlations) / dictionary.norms, axis=1)
        indices[start:start+block] = best
        selected[start:start+block] = correlations[np.arange(best.size), best]
    return indices, selected

def project_voxels_real(X, dictionary: BlochDictionary, block: int = DEFAULT_BLOCK) -> Projection:
    """Projection onto the cone with real non-negative densities."""
    X = _check_voxels(X, dictionary)
    indices, selected = _match(X, dictionary, np.real, block)
    norms = dictionary.norms[indices]
    correlations = selected.real / norms
    densities = np.maximum(correlations, 0) / norms
    estimate = densities[:, np.newaxis] * dictionary.atoms[indices]
    return Projection(indices, densities, correlations, estimate)

def project_voxels_complex(X, dictionary: BlochDictionary, block: int = DEFAULT_BLOCK) -> Projection:
    """Projection onto the cone with complex densities."""
    X = _check_voxels(X, dictionary)
    indices, selected = _match(X, dictionary, np.abs, block)
    norms = dictionary.norms[indices]
    densities = selected / norms ** 2
    estimate = densities[:, np.newaxis] * dictionary.atoms[indices]
    return Projection(indices, densities, np.abs(selected) / norms, estimate)

def project_voxel_real(x, dictionary: BlochDictionary) -> Tuple[int, float]:
    projection = project_voxels_real(x, dictionary)
    return int(projection.indices[0]), float(projection.densities[0])

def project_voxel_complex(x, dictionary: BlochDictionary) -> Tuple[int, complex]:
    projection = project_voxels_complex(x, dictionary)
    return int(projection.indices[0]), complex(projection.densities[0])

def chord_flatness(u) -> float:
    """Ratio of the largest magnitude to the l2 norm, between L^-1/2 and 1."""
    u = np.asarray(u).reshape(-1)
    norm = np.linalg.norm(u)
    if not norm > 0:
        raise DictionaryException("Flatness of a zero vector is undefined")
    return float(np.max(np.abs(u)) / norm)
