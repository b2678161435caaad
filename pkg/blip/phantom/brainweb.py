"""Ingestion of the BrainWeb crisp (discrete) anatomical model.

The raw volume holds one unsigned byte label per voxel, 181 x 217 x 181 voxels with x varying
fastest, then y, then z (7,109,137 bytes). A slice is taken at a fixed z, giving a 217 x 181
image that is zero padded symmetrically to the target size.
"""

import os
import logging

import numpy as np

from blip.phantom import PhantomException, PhantomMaps, TissueTable
from blip.utilities import file_hash

logger = logging.getLogger("blip")

VOLUME_SHAPE = (181, 217, 181)
MAXIMAL_LABEL = 6

def pad_center(image: np.ndarray, side: int) -> np.ndarray:
    """Zero pads an image to ``side`` x ``side``, the extra pixel going to the bottom/right."""
    rows, columns = image.shape
    if rows > side or columns > side:
        raise PhantomException("Image of shape {} does not fit into {} pixels".format(image.shape, side))
    top = (side - rows) // 2
    left = (side - columns) // 2
    return np.pad(image, ((top, side - rows - top), (left, side - columns - left)))

def read_labels(path: str, slice_index: int = 40) -> np.ndarray:
    expected = int(np.prod(VOLUME_SHAPE))
    size = os.path.getsize(path)
    if size != expected:
        raise PhantomException("BrainWeb volume {} has {} bytes, expected {}".format(path, size, expected))
    if not 0 <= slice_index < VOLUME_SHAPE[0]:
        raise PhantomException("Slice index {} out of range [0, {})".format(slice_index, VOLUME_SHAPE[0]))

    md5 = file_hash(path)
    logger.debug("Loading BrainWeb volume %s (md5 %s)", path, md5)

    volume = np.fromfile(path, dtype=np.uint8).reshape(VOLUME_SHAPE)
    labels = volume[slice_index].astype(np.int64)
    labels[labels > MAXIMAL_LABEL] = 0
    return labels

def load_brainweb(path: str, slice_index: int = 40, table: TissueTable = None, side: int = 256) -> PhantomMaps:
    """Parameter maps of one slice, labels above 6 (skull, glial matter, connective tissue) are
    treated as background."""
    table = table or TissueTable.default()
    return table.maps(pad_center(read_labels(path, slice_index), side))
