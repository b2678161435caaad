import os
import argparse
import unittest
from unittest import mock

import numpy as np
import numpy.testing as npt

from blip import BLIPException, NumericalException
from blip.utilities import array_hash, arg_hash, to_logical, is_power_of_two, normalize_path
from blip.utilities.attributes import Attributee, AttributeException, Integer, Float, Boolean, String, \
    Choice, List, Nested, Ranges, parse_range
from blip.utilities.cli import EnvironmentPath, exit_code

class Inner(Attributee):

    rate = Float(val_min=0, default=0.5)
    mode = Choice(("a", "b"), default="a")

class Outer(Attributee):

    name = String()
    count = Integer(val_min=1, default=3)
    enabled = Boolean(default=False)
    sizes = List(Integer(), default=[1, 2])
    inner = Nested(Inner, default={})

class Derived(Outer):

    extra = Integer(default=0)

class TestAttributes(unittest.TestCase):

    def test_coercion(self):
        config = Outer(name="x", count="5", enabled="yes", sizes="4, 8", inner=dict(rate="0.25", mode="b"))
        self.assertEqual(config.count, 5)
        self.assertTrue(config.enabled)
        self.assertEqual(config.sizes, [4, 8])
        self.assertEqual(config.inner.rate, 0.25)
        self.assertEqual(config.inner.mode, "b")

    def test_defaults(self):
        config = Outer(name="x")
        self.assertEqual(config.count, 3)
        self.assertFalse(config.enabled)
        self.assertEqual(config.sizes, [1, 2])
        self.assertEqual(config.inner.rate, 0.5)
        self.assertEqual(config.dump(), dict(name="x", count=3, enabled=False, sizes=[1, 2],
            inner=dict(rate=0.5, mode="a")))

    def test_inheritance(self):
        config = Derived(name="y", extra="2")
        self.assertEqual(config.extra, 2)
        self.assertEqual(config.count, 3)
        self.assertNotIn("extra", Outer(name="y").dump())

    def test_invalid(self):
        with self.assertRaises(AttributeException):
            Outer()
        with self.assertRaises(AttributeException):
            Outer(name="x", color="red")
        with self.assertRaises(AttributeException):
            Outer(name="x", count=0)
        with self.assertRaises(AttributeException):
            Outer(name="x", count="three")
        with self.assertRaises(AttributeException):
            Outer(name="x", inner=dict(mode="c"))
        with self.assertRaises(AttributeException):
            Outer(name="x", inner=5)
        with self.assertRaises(AttributeException):
            Outer(name="x", sizes=3.5j)

    def test_readonly(self):
        config = Outer(name="x")
        with self.assertRaises(AttributeException):
            config.count = 4

    def test_update(self):
        config = Outer(name="x", inner=dict(mode="b"))
        updated = config.update(count=7, inner=dict(rate=1))
        self.assertEqual(updated.count, 7)
        self.assertEqual(updated.inner.rate, 1.0)
        self.assertEqual(updated.inner.mode, "b")
        self.assertEqual(config.count, 3)

    def test_ranges(self):
        npt.assert_allclose(parse_range("100:20:160"), [100, 120, 140, 160])
        npt.assert_allclose(parse_range("1:3"), [1, 2, 3])
        npt.assert_allclose(parse_range("7"), [7])
        npt.assert_allclose(parse_range("20:5:32"), [20, 25, 30])
        for text in ("a:b", "5:1", "1:0:3", "1:2:3:4"):
            with self.assertRaises(AttributeException):
                parse_range(text)

        class Grid(Attributee):
            values = Ranges(default=["20:5:30", 22, "25"])

        self.assertEqual(Grid().values, (20.0, 22.0, 25.0, 30.0))
        self.assertEqual(Grid().dump(), dict(values=[20.0, 22.0, 25.0, 30.0]))
        with self.assertRaises(AttributeException):
            Grid(values=[])

class TestHelpers(unittest.TestCase):

    def test_array_hash(self):
        a = np.arange(6, dtype=np.int32)
        self.assertEqual(array_hash(a), array_hash(a.astype(np.float64)))
        self.assertNotEqual(array_hash(a), array_hash(a.reshape(2, 3)))
        self.assertNotEqual(array_hash(a), array_hash(a + 1))
        self.assertEqual(arg_hash(1, b=2, a=1), arg_hash(1, a=1, b=2))
        self.assertNotEqual(arg_hash(1), arg_hash(2))

    def test_values(self):
        self.assertTrue(to_logical("True"))
        self.assertTrue(to_logical(" on "))
        self.assertFalse(to_logical("false"))
        self.assertFalse(to_logical(0))
        self.assertEqual([n for n in range(20) if is_power_of_two(n)], [1, 2, 4, 8, 16])
        self.assertEqual(normalize_path("/tmp/x"), "/tmp/x")
        self.assertEqual(normalize_path("b/../c", "/a"), os.path.normpath("/a/c"))

class TestCommandLine(unittest.TestCase):

    def test_exit_code(self):
        self.assertEqual(exit_code(BLIPException("configuration")), 2)
        self.assertEqual(exit_code(AttributeException("configuration")), 2)
        self.assertEqual(exit_code(NumericalException("underflow")), 3)

        try:
            try:
                raise NumericalException("underflow")
            except NumericalException as e:
                raise BLIPException("cell failed") from e
        except BLIPException as wrapped:
            self.assertEqual(exit_code(wrapped), 3)

    def test_environment_default(self):
        def parser():
            parser = argparse.ArgumentParser()
            parser.add_argument("--output", default=None, action=EnvironmentPath, envvar="BLIP_OUTPUT")
            return parser

        with mock.patch.dict(os.environ, {"BLIP_OUTPUT": "/data/results"}):
            self.assertEqual(parser().parse_args([]).output, "/data/results")
            self.assertEqual(parser().parse_args(["--output", "/other"]).output, "/other")
            self.assertEqual(parser().parse_args(["--output", "runs/a"]).output, os.path.join(os.getcwd(), "runs", "a"))
        with mock.patch.dict(os.environ, {"BLIP_OUTPUT": "results"}):
            self.assertEqual(parser().parse_args([]).output, os.path.join(os.getcwd(), "results"))
        with mock.patch.dict(os.environ, {"BLIP_OUTPUT": ""}):
            self.assertIsNone(parser().parse_args([]).output)
        with mock.patch.dict(os.environ, {}, clear=True):
            self.assertIsNone(parser().parse_args([]).output)
