"""Declarative configuration objects.

An :class:`Attributee` subclass declares its fields as class level :class:`Attribute`
instances. Constructor arguments are coerced by their attribute (YAML stacks are loaded as
strings), missing optional arguments take the attribute default and the resulting object is
readonly.
"""

from typing import Type, Tuple
from collections.abc import Iterable, Mapping

import numpy as np

from blip import BLIPException
from blip.utilities import to_number, to_string, to_logical

class AttributeException(BLIPException):
    pass

_REQUIRED = object()

class Attribute(object):

    def __init__(self, default=_REQUIRED):
        self._default = default if default is _REQUIRED else self.coerce(default, {})

    def coerce(self, value, context):
        return value

    def dump(self, value):
        return value

    @property
    def default(self):
        return None if self._default is _REQUIRED else self._default

    @property
    def required(self) -> bool:
        return self._default is _REQUIRED

class Nested(Attribute):
    """An :class:`Attributee` given as a mapping, e.g. the ``recon`` section of an experiment."""

    def __init__(self, acls: Type["Attributee"], **kwargs):
        if not (isinstance(acls, type) and issubclass(acls, Attributee)):
            raise AttributeException("Illegal nested class {}".format(acls))
        self._acls = acls
        super().__init__(**kwargs)

    def coerce(self, value, context):
        if value is None or isinstance(value, self._acls):
            return value
        if not isinstance(value, Mapping):
            raise AttributeException("Expected a mapping for {}".format(self._acls.__name__))
        return self._acls(**value)

    def dump(self, value):
        return None if value is None else value.dump()

class Attributee(object):
    """Declarative, readonly configuration object. Values are coerced and validated
    by the declared attributes, unknown or missing arguments raise
    :class:`AttributeException`."""

    _declared_attributes = {}

    def __init_subclass__(cls, **kwargs):
        super().__init_subclass__(**kwargs)
        declared = dict(cls._declared_attributes)
        for name, value in list(vars(cls).items()):
            if isinstance(value, Attribute):
                declared[name] = value
                delattr(cls, name)
        cls._declared_attributes = declared

    def __init__(self, **kwargs):
        attributes = self._declared_attributes

        unsupported = sorted(set(kwargs) - set(attributes))
        if unsupported:
            raise AttributeException("Unsupported arguments: {}".format(", ".join(unsupported)))
        missing = sorted(name for name, field in attributes.items() if field.required and name not in kwargs)
        if missing:
            raise AttributeException("Missing arguments: {}".format(", ".join(missing)))

        for name, field in attributes.items():
            value = kwargs.get(name, field.default)
            try:
                object.__setattr__(self, name, field.coerce(value, {"parent": self}))
            except AttributeException as e:
                raise AttributeException("Attribute {}: {}".format(name, e))

    def __setattr__(self, key, value):
        if key in self._declared_attributes:
            raise AttributeException("Attribute {} is readonly".format(key))
        super().__setattr__(key, value)

    def dump(self) -> dict:
        return {name: field.dump(getattr(self, name)) for name, field in self._declared_attributes.items()}

    def update(self, **kwargs) -> "Attributee":
        """Returns a copy with some of the values replaced (nested mappings are merged)."""
        data = self.dump()
        for key, value in kwargs.items():
            if isinstance(value, Mapping) and isinstance(data.get(key, None), Mapping):
                data[key] = dict(data[key], **value)
            else:
                data[key] = value
        return self.__class__(**data)

class Number(Attribute):

    def __init__(self, conversion, val_min=None, val_max=None, **kwargs):
        self._conversion = conversion
        self._val_min = val_min
        self._val_max = val_max
        super().__init__(**kwargs)

    def coerce(self, value, context=None):
        return to_number(value, max_n=self._val_max, min_n=self._val_min, conversion=self._conversion)

class Integer(Number):

    def __init__(self, **kwargs):
        super().__init__(conversion=int, **kwargs)

class Float(Number):

    def __init__(self, **kwargs):
        super().__init__(conversion=float, **kwargs)

class Boolean(Attribute):

    def coerce(self, value, context=None):
        return to_logical(value)

class String(Attribute):

    def coerce(self, value, context=None):
        return to_string(value)

class Choice(String):
    """String restricted to a fixed set of options, e.g. step size modes."""

    def __init__(self, options: Tuple[str, ...], **kwargs):
        self._options = tuple(options)
        super().__init__(**kwargs)

    @property
    def options(self):
        return self._options

    def coerce(self, value, context=None):
        value = super().coerce(value, context)
        if value not in self._options:
            raise AttributeException("Value '{}' not one of {}".format(value, ", ".join(self._options)))
        return value

class List(Attribute):
    """Homogeneous list, a string is split on ``separator`` (``"4,8"`` on the command line)."""

    def __init__(self, contains: Attribute, separator=",", **kwargs):
        if not isinstance(contains, Attribute):
            raise AttributeException("List elements must be described by an attribute")
        self._separator = separator
        self._contains = contains
        super().__init__(**kwargs)

    def coerce(self, value, context=None):
        if isinstance(value, str):
            value = [part.strip() for part in value.split(self._separator)]
        elif isinstance(value, (int, float)):
            value = [value]
        elif not isinstance(value, Iterable):
            raise AttributeException("Unable to convert {!r} to a list".format(value))
        return [self._contains.coerce(x, dict(context or {}, key=i)) for i, x in enumerate(value)]

    def dump(self, value):
        return [self._contains.dump(x) for x in value]

def parse_range(text: str) -> np.ndarray:
    """Parses an inclusive ``start:step:stop`` range (MATLAB notation) or a single number."""
    parts = [p.strip() for p in str(text).split(":")]
    try:
        numbers = [float(p) for p in parts]
    except ValueError:
        raise AttributeException("Illegal range '{}'".format(text))
    if len(numbers) == 1:
        return np.array(numbers)
    if len(numbers) == 2:
        start, step, stop = numbers[0], 1.0, numbers[1]
    elif len(numbers) == 3:
        start, step, stop = numbers
    else:
        raise AttributeException("Illegal range '{}'".format(text))
    if step <= 0 or stop < start:
        raise AttributeException("Illegal range '{}'".format(text))
    count = int(np.floor((stop - start) / step + 1e-9)) + 1
    return start + step * np.arange(count)

class Ranges(Attribute):
    """A sorted set of parameter values given as a list of numbers and/or inclusive
    ``start:step:stop`` ranges, e.g. ``["100:20:2000", "2300:300:5900"]``."""

    def coerce(self, value, _=None):
        if isinstance(value, (str, int, float)):
            value = [value]
        if not isinstance(value, Iterable):
            raise AttributeException("Unable to convert value to ranges")
        values = [parse_range(v) for v in value]
        if not values:
            raise AttributeException("Empty range list")
        return tuple(float(v) for v in np.unique(np.concatenate(values)))

    def dump(self, value):
        return [float(v) for v in value]
