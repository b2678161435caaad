import os
import logging

import cachetools

from blip import BLIPException
from blip.bloch import ExcitationSequence
from blip.dictionary import ParameterGrid, BlochDictionary, DictionaryException, build_dictionary
from blip.dictionary.io import export_dictionary, import_dictionary

logger = logging.getLogger("blip")

class WorkspaceException(BLIPException):
    pass

class LocalStorage(object):
    """Output directory, files are addressed by relative paths and parent directories are created on demand."""

    def __init__(self, root: str):
        self._root = root

    @property
    def base(self):
        return self._root

    def write(self, path, binary=False):
        if os.path.isabs(path):
            raise WorkspaceException("Only relative paths allowed")

        full = os.path.join(self.base, path)
        os.makedirs(os.path.dirname(full), exist_ok=True)

        mode = "wb" if binary else "w"
        return open(full, mode=mode, newline=None if binary else "")

    def read(self, path, binary=False):
        full = os.path.join(self.base, path)
        return open(full, mode="rb" if binary else "r", newline=None if binary else "")

    def isfile(self, path):
        return os.path.isfile(os.path.join(self.base, path))

    def substorage(self, name):
        return LocalStorage(os.path.join(self.base, name))

class DictionaryCache(cachetools.LRUCache):
    """Dictionaries keyed by their identifier (grid and sequence hash), kept in memory and,
    when a storage is given, persisted in the dictionary artifact format."""

    def __init__(self, storage: LocalStorage = None, maxsize: int = 8):
        super().__init__(maxsize)
        self._storage = storage

    def _filename(self, key):
        return "{}.npz".format(key)

    def __missing__(self, key):
        if self._storage is None or not self._storage.isfile(self._filename(key)):
            raise KeyError(key)
        try:
            with self._storage.read(self._filename(key), binary=True) as handle:
                dictionary = import_dictionary(handle)
        except DictionaryException as e:
            logger.warning("Ignoring cached dictionary %s: %s", key, e)
            raise KeyError(key)
        super().__setitem__(key, dictionary)
        return dictionary

    def __setitem__(self, key, value: BlochDictionary):
        super().__setitem__(key, value)
        if self._storage is None:
            return
        with self._storage.write(self._filename(key), binary=True) as handle:
            export_dictionary(value, handle)

    def build(self, grid: ParameterGrid, seq: ExcitationSequence) -> BlochDictionary:
        """Returns a cached dictionary for the grid and sequence, building it when needed."""
        key = BlochDictionary.key(grid, seq)
        try:
            dictionary = self[key]
            if dictionary.grid == grid:
                logger.debug("Reusing dictionary %s", key)
                return dictionary
        except KeyError:
            pass
        dictionary = build_dictionary(grid, seq)
        self[key] = dictionary
        return dictionary
