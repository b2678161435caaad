"""Integrated experiment presets, YAML files with a title, a description and an experiment
configuration."""

import os
import glob

import yaml

from blip.experiment import ExperimentConfig
from blip.utilities.attributes import Attributee, AttributeException, String, Nested

STACK_DIRECTORY = os.path.dirname(__file__)

class Stack(Attributee):

    title = String()
    description = String(default="")
    experiment = Nested(ExperimentConfig, default={})

def resolve_stack(name: str, *directories) -> str:
    """Finds a stack file given as a path, relative to one of ``directories`` or by the name
    of an integrated preset. Returns ``None`` when nothing matches."""
    if os.path.isabs(name):
        return name if os.path.isfile(name) else None
    candidates = [os.path.join(directory, name) for directory in directories]
    candidates.append(os.path.join(STACK_DIRECTORY, name + ".yaml"))
    return next((candidate for candidate in candidates if os.path.isfile(candidate)), None)

def _read_yaml(path: str):
    # Scalars stay strings, attributes do the conversion
    with open(path, 'r') as handle:
        return yaml.load(handle, Loader=yaml.BaseLoader)

def load_stack(name: str, *directories) -> Stack:
    stack_file = resolve_stack(name, *directories)
    if stack_file is None:
        raise AttributeException("Experiment stack {} not found".format(name))
    data = _read_yaml(stack_file)
    if not isinstance(data, dict):
        raise AttributeException("Experiment stack {} is not a mapping".format(stack_file))
    return Stack(**data)

def list_integrated_stacks() -> dict:
    """Maps integrated preset names to their titles."""
    return {os.path.splitext(os.path.basename(path))[0]: _read_yaml(path).get("title", "")
        for path in sorted(glob.glob(os.path.join(STACK_DIRECTORY, "*.yaml")))}
