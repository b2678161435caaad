"""Dictionary artifact format.

A dictionary is stored as an uncompressed numpy ``.npz`` archive with the arrays
``atoms`` (complex128, P x L), ``t1``, ``t2``, ``df`` (grid axes), ``flip_angles``
(radians) and ``repetition_times`` (ms), plus ``header``, a JSON document with the keys
``schema`` (``blip-dictionary``), ``version`` (format version), ``toolkit`` (library
version), ``atoms``, ``length``, ``grid`` and ``sequence_hash``.
"""

import json

import numpy as np

from blip import __version__
from blip.bloch import ExcitationSequence, sequence_hash
from blip.dictionary import BlochDictionary, ParameterGrid, DictionaryException

FORMAT_VERSION = 1

def export_dictionary(dictionary: BlochDictionary, target):
    """Writes the dictionary to a filename or a binary file handle."""
    header = dict(schema="blip-dictionary", version=FORMAT_VERSION, toolkit=__version__,
        atoms=dictionary.size, length=dictionary.length, grid=dictionary.grid.dump(),
        sequence_hash=sequence_hash(dictionary.sequence))

    np.savez(target, header=np.array(json.dumps(header, sort_keys=True)), atoms=dictionary.atoms,
        t1=dictionary.grid.t1_values, t2=dictionary.grid.t2_values, df=dictionary.grid.df_values,
        flip_angles=dictionary.sequence.flip_angles, repetition_times=dictionary.sequence.repetition_times)

def import_dictionary(source, sequence: ExcitationSequence = None) -> BlochDictionary:
    """Loads a dictionary, verifying that it was built for ``sequence`` when given."""
    try:
        with np.load(source, allow_pickle=False) as data:
            header = json.loads(str(data["header"]))
            grid = ParameterGrid(data["t1"], data["t2"], data["df"])
            stored = ExcitationSequence(data["flip_angles"], data["repetition_times"])
            atoms = np.array(data["atoms"])
    except (KeyError, ValueError, OSError) as e:
        raise DictionaryException("Unable to read dictionary: {}".format(e))

    if header.get("schema") != "blip-dictionary" or header.get("version") != FORMAT_VERSION:
        raise DictionaryException("Unsupported dictionary format")

    if header.get("sequence_hash") != sequence_hash(stored):
        raise DictionaryException("Dictionary file is corrupted, sequence hash mismatch")

    if sequence is not None and sequence_hash(sequence) != header["sequence_hash"]:
        raise DictionaryException("Dictionary was built for a different excitation sequence")

    return BlochDictionary(grid, stored, atoms)
