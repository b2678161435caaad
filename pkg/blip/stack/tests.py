import os
import tempfile
import unittest

from blip.stack import Stack, resolve_stack, load_stack, list_integrated_stacks
from blip.utilities.attributes import AttributeException

class TestStacks(unittest.TestCase):

    def test_integrated(self):
        names = list_integrated_stacks()
        for name in ("testing", "desk", "length", "scaling", "sampling", "complex", "fullscale"):
            self.assertIn(name, names)
            stack = load_stack(name)
            self.assertIsInstance(stack, Stack)
            self.assertTrue(stack.title)
            self.assertEqual(names[name], stack.title)

    def test_values(self):
        experiment = load_stack("desk").experiment
        self.assertEqual(experiment.image_side, 64)
        self.assertEqual(experiment.undersampling, [8])
        self.assertEqual(experiment.lengths, [25, 50, 100, 200, 400])
        self.assertEqual(experiment.phantom.mode, "on-grid")
        self.assertEqual(experiment.grid.grid().size, 3379)

        experiment = load_stack("complex").experiment
        self.assertTrue(experiment.phantom.phase)
        self.assertEqual(experiment.recon.density_model, "complex")

        experiment = load_stack("testing").experiment
        self.assertEqual(experiment.grid.grid().size, 56)
        self.assertEqual(experiment.recon.max_iters, 10)

    def test_resolve(self):
        with tempfile.TemporaryDirectory() as directory:
            path = os.path.join(directory, "custom.yaml")
            with open(path, "w") as handle:
                handle.write("title: Custom\nexperiment:\n  image_side: 32\n  undersampling: 4,8\n")

            self.assertEqual(resolve_stack("custom.yaml", directory), path)
            self.assertEqual(resolve_stack(path), path)
            self.assertIsNone(resolve_stack("custom.yaml"))

            stack = load_stack("custom.yaml", directory)
            self.assertEqual(stack.title, "Custom")
            self.assertEqual(stack.description, "")
            self.assertEqual(stack.experiment.image_side, 32)
            self.assertEqual(stack.experiment.undersampling, [4, 8])
            self.assertEqual(stack.experiment.lengths, [200])

    def test_invalid(self):
        with self.assertRaises(AttributeException):
            load_stack("missing")
        with tempfile.TemporaryDirectory() as directory:
            for name, content in (("list.yaml", "- a\n- b\n"), ("untitled.yaml", "description: x\n"),
                    ("unknown.yaml", "title: x\nexperiment:\n  resolution: 3\n"),
                    ("side.yaml", "title: x\nexperiment:\n  image_side: 48\n")):
                with open(os.path.join(directory, name), "w") as handle:
                    handle.write(content)
                with self.assertRaises(AttributeException):
                    load_stack(name, directory)
