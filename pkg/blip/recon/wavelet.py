"""Orthonormal full-depth 2D Haar transform and the spatially regularized cone projection."""

import numpy as np
import pywt

from blip import BLIPException
from blip.utilities import is_power_of_two
from blip.dictionary import BlochDictionary, Projection, project_voxels_real, DEFAULT_BLOCK

class WaveletException(BLIPException):
    pass

def _levels(side: int) -> int:
    return int(side).bit_length() - 1

def haar2(image: np.ndarray) -> np.ndarray:
    """Haar coefficients of a square image, packed into an array of the same shape."""
    image = np.asarray(image)
    if image.ndim != 2 or image.shape[0] != image.shape[1] or not is_power_of_two(image.shape[0]):
        raise WaveletException("Haar transform needs a square image with power of two side, got {}".format(image.shape))
    if image.shape[0] == 1:
        return image.astype(np.float64 if np.isrealobj(image) else np.complex128)
    coefficients = pywt.wavedec2(image, "haar", mode="periodization", level=_levels(image.shape[0]))
    array, _ = pywt.coeffs_to_array(coefficients)
    return array

def ihaar2(array: np.ndarray) -> np.ndarray:
    array = np.asarray(array)
    if array.ndim != 2 or array.shape[0] != array.shape[1] or not is_power_of_two(array.shape[0]):
        raise WaveletException("Haar coefficients must form a square array with power of two side, got {}".format(array.shape))
    if array.shape[0] == 1:
        return array.copy()
    side = array.shape[0]
    # slices only depend on the layout, recover them from a template decomposition
    _, slices = pywt.coeffs_to_array(pywt.wavedec2(np.zeros((side, side)), "haar", mode="periodization", level=_levels(side)))
    coefficients = pywt.array_to_coeffs(array, slices, output_format="wavedec2")
    return pywt.waverec2(coefficients, "haar", mode="periodization")

def hard_threshold(c: np.ndarray, k: int) -> np.ndarray:
    """Keeps the ``k`` largest magnitude entries (lowest index first on ties), zeroes the rest."""
    c = np.asarray(c)
    flat = c.reshape(-1)
    if k < 0 or k > flat.size:
        raise WaveletException("Number of retained coefficients {} outside [0, {}]".format(k, flat.size))
    result = np.zeros_like(flat)
    keep = np.argsort(-np.abs(flat), kind="stable")[:k]
    result[keep] = flat[keep]
    return result.reshape(c.shape)

def project_regularized(X, dictionary: BlochDictionary, coefficients: int, image_side: int,
        block: int = DEFAULT_BLOCK) -> Projection:
    """Joint projection onto atoms per voxel and a pseudo-density that is sparse in the Haar domain.

    Atoms are selected per voxel as in the real projection. The normalized correlations form the
    pseudo-density image, which is clamped to be non-negative, hard thresholded to ``coefficients``
    Haar coefficients and clamped again. Densities are the pseudo-density divided by the atom norms.
    When all coefficients are retained the result is the plain real projection.
    """
    projection = project_voxels_real(X, dictionary, block)
    voxels = len(projection)
    if image_side * image_side != voxels:
        raise WaveletException("Voxel count {} does not match image side {}".format(voxels, image_side))
    if coefficients >= voxels:
        return projection

    pseudo = np.maximum(projection.correlations, 0).reshape(image_side, image_side)
    pseudo = np.maximum(ihaar2(hard_threshold(haar2(pseudo), coefficients)), 0).reshape(-1)

    densities = pseudo / dictionary.norms[projection.indices]
    estimate = densities[:, np.newaxis] * dictionary.atoms[projection.indices]
    return Projection(projection.indices, densities, projection.correlations, estimate)
