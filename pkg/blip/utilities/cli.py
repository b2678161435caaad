import os
import sys
import json
import argparse
import logging

from blip import BLIPException, NumericalException, __version__
from blip.utilities import normalize_path, ColoredFormatter, Progress

class EnvironmentPath(argparse.Action):
    """Directory option that falls back to the environment variable ``envvar``, relative paths
    are resolved against the working directory."""

    def __init__(self, envvar: str, default=None, **kwargs):
        value = os.environ.get(envvar) or default
        self.envvar = envvar
        super().__init__(default=normalize_path(value) if value else None, **kwargs)

    def __call__(self, parser, namespace, values, option_string=None):
        setattr(namespace, self.dest, normalize_path(values))

def exit_code(error: BaseException) -> int:
    """3 for numerical failures (also when wrapped by a sweep cell failure), 2 for other errors."""
    while error is not None:
        if isinstance(error, NumericalException):
            return 3
        error = error.__cause__
    return 2

def load_config(args):
    from blip.stack import load_stack

    stack = load_stack(args.stack, os.getcwd())
    config = stack.experiment

    overrides = dict()
    for name, key in (("side", "image_side"), ("undersampling", "undersampling"), ("lengths", "lengths"),
            ("sampling", "sampling"), ("algorithms", "algorithms"), ("seed", "seed"), ("workers", "workers")):
        value = getattr(args, name, None)
        if value is not None:
            overrides[key] = value
    if overrides:
        config = config.update(**overrides)
    return config

def open_storage(args, config):
    from blip.workspace import LocalStorage

    root = args.output or config.output or os.getcwd()
    return LocalStorage(normalize_path(root))

def dictionary_cache(storage):
    from blip.workspace import DictionaryCache
    return DictionaryCache(storage.substorage("dictionaries"))

def do_dictionary(config, logger):
    experiment = load_config(config)
    storage = open_storage(config, experiment)
    sequence_seed, _, _ = experiment.streams()
    sequence = experiment.sequence.generate(config.length or max(experiment.lengths), sequence_seed)

    logger.info("Building dictionary with %d atoms for a sequence of length %d", experiment.grid.grid().size,
        sequence.length)
    dictionary = dictionary_cache(storage).build(experiment.grid.grid(), sequence)
    logger.info("Dictionary %s available in %s", dictionary.identifier, storage.substorage("dictionaries").base)

def do_phantom(config, logger):
    experiment = load_config(config)
    storage = open_storage(config, experiment)

    overrides = dict()
    if config.phantom_action == "load":
        overrides.update(source="brainweb", path=normalize_path(config.path), slice_index=config.slice)
    else:
        overrides.update(source="synthetic")
        if config.layout is not None:
            overrides["layout"] = config.layout
    if config.mode is not None:
        overrides["mode"] = config.mode
    if config.phase:
        overrides["phase"] = True
    phantom = experiment.phantom.update(**overrides)

    _, _, phantom_seed = experiment.streams()
    side = config.side or (256 if phantom.source == "brainweb" else experiment.image_side)
    maps = phantom.generate(side, phantom.table(experiment.grid.grid(), phantom_seed))
    maps.write(storage, config.name)
    logger.info("Phantom with %d foreground voxels written to %s", int(maps.mask.sum()), storage.base)

def _report(records, logger):
    for record in records:
        logger.info("%s %-16s SER image %6.2f dB, rho %6.2f dB, T1 %6.2f dB, T2 %6.2f dB", record.cell,
            record.algorithm, record.ser_image, record.ser_rho, record.ser_t1, record.ser_t2)

def do_run(config, logger):
    from blip.experiment import run_experiment

    experiment = load_config(config)
    experiment = experiment.update(undersampling=experiment.undersampling[:1], lengths=experiment.lengths[:1],
        sampling=experiment.sampling[:1])
    storage = open_storage(config, experiment)

    records = run_experiment(experiment, storage, dictionary_cache(storage), progress=True, name=config.name,
        save_maps=True)
    _report(records, logger)
    logger.info("Results available in %s", storage.base)

def do_sweep(config, logger):
    from blip.experiment import run_experiment
    from blip.experiment.metrics import scaling_thresholds

    experiment = load_config(config)
    storage = open_storage(config, experiment)

    records = run_experiment(experiment, storage, dictionary_cache(storage), progress=True, name=config.name)
    _report(records, logger)

    if "oracle" in experiment.algorithms and "blip" in experiment.algorithms:
        thresholds = scaling_thresholds(records, config.margin)
        for p, threshold in thresholds.items():
            if threshold is None:
                logger.info("p=%d: oracle not reached within %g dB", p, config.margin)
            else:
                logger.info("p=%d: L*=%d, L*/p^2=%.3f", p, threshold[0], threshold[1])
        with storage.write("{}_scaling.json".format(config.name)) as handle:
            json.dump({str(p): None if t is None else dict(length=t[0], ratio=t[1]) for p, t in thresholds.items()},
                handle, indent=2)

    logger.info("Results available in %s", storage.base)

def do_flatness(config, logger):
    from blip.experiment.metrics import flatness_report, write_flatness

    experiment = load_config(config)
    storage = open_storage(config, experiment)
    sequence_seed, _, phantom_seed = experiment.streams()
    lengths = sorted(set(experiment.lengths))
    sequence = experiment.sequence.generate(lengths[-1], sequence_seed)
    table = experiment.phantom.table(experiment.grid.grid(), phantom_seed)

    rows = flatness_report(table, sequence, lengths)
    write_flatness(storage, "{}.csv".format(config.name), rows)
    logger.info("Flatness of %d chords written to %s", len(rows), storage.base)

def do_isometry(config, logger):
    from blip.experiment import alias_chords
    from blip.sampling.isometry import mc_chord_isometry

    experiment = load_config(config)
    storage = open_storage(config, experiment)
    sequence_seed, _, phantom_seed = experiment.streams()
    sequence = experiment.sequence.generate(config.length, sequence_seed)
    table = experiment.phantom.table(experiment.grid.grid(), phantom_seed)

    U = alias_chords(table, sequence, config.factor)
    report = mc_chord_isometry(U, config.trials, seed=experiment.seed, epsilons=config.epsilons)
    logger.info("Mean ratio %.5f, standard deviation %.5f, flatness %.4f", report.mean, report.std, report.flatness)
    for epsilon in report.epsilons:
        logger.info("epsilon=%g: tail frequency %.5f, bound %.5f", epsilon, report.tail(epsilon), report.bound(epsilon))
    with storage.write("{}.json".format(config.name)) as handle:
        json.dump(report.dump(), handle, indent=2)

def main():
    logger = logging.getLogger("blip")
    stream = logging.StreamHandler(Progress.logstream())
    stream.setFormatter(ColoredFormatter())
    logger.addHandler(stream)

    parser = argparse.ArgumentParser(description='BLIP Toolkit Command Line Utility', prog="blip")
    parser.add_argument("--debug", "-d", default=False, help="Enable debug output", required=False, action='store_true')
    parser.add_argument("--version", action="version", version="%(prog)s {}".format(__version__))

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--stack", "-s", default="desk", help='Experiment stack name or configuration file')
    common.add_argument("--output", "-o", default=None, required=False, help='Output directory', action=EnvironmentPath,
        envvar='BLIP_OUTPUT')
    common.add_argument("--seed", type=int, required=False, help='Random seed')

    sweep = argparse.ArgumentParser(add_help=False)
    sweep.add_argument("--side", type=int, required=False, help='Image side')
    sweep.add_argument("--undersampling", "-p", required=False, help='Undersampling factors, comma separated')
    sweep.add_argument("--lengths", "-L", required=False, help='Sequence lengths, comma separated')
    sweep.add_argument("--sampling", required=False, help='Sampling patterns, comma separated')
    sweep.add_argument("--algorithms", required=False, help='Algorithms, comma separated')
    sweep.add_argument("--workers", type=int, required=False, help='Number of parallel workers')

    subparsers = parser.add_subparsers(help='commands', dest='action', title="Commands")

    dict_parser = subparsers.add_parser('dict', help='Dictionary management')
    dict_subparsers = dict_parser.add_subparsers(dest='dict_action', title="Dictionary commands")
    build_parser = dict_subparsers.add_parser('build', parents=[common], help='Build and cache a dictionary')
    build_parser.add_argument("--length", type=int, required=False, help='Sequence length (longest stack length by default)')

    phantom_parser = subparsers.add_parser('phantom', help='Ground truth phantoms')
    phantom_subparsers = phantom_parser.add_subparsers(dest='phantom_action', title="Phantom commands")
    gen_parser = phantom_subparsers.add_parser('gen', parents=[common], help='Generate a synthetic phantom')
    gen_parser.add_argument("--layout", choices=("single", "ellipses", "rectangles"), required=False)
    load_parser = phantom_subparsers.add_parser('load', parents=[common], help='Load a BrainWeb slice')
    load_parser.add_argument("path", help='Raw BrainWeb crisp volume')
    load_parser.add_argument("--slice", type=int, default=40, help='Slice index')
    for sub in (gen_parser, load_parser):
        sub.add_argument("--side", type=int, required=False, help='Image side')
        sub.add_argument("--mode", choices=("on-grid", "off-grid", "table"), required=False)
        sub.add_argument("--phase", default=False, action='store_true', help='Add the quadratic phase map')
        sub.add_argument("--name", default="phantom", help='Output name')

    run_parser = subparsers.add_parser('run', parents=[common, sweep], help='Run the first cell of a stack and save the maps')
    run_parser.add_argument("--name", default="run", help='Output name')

    sweep_parser = subparsers.add_parser('sweep', parents=[common, sweep], help='Run all cells of a stack')
    sweep_parser.add_argument("--name", default="results", help='Output name')
    sweep_parser.add_argument("--margin", type=float, default=3, help='Oracle margin in dB for the scaling thresholds')

    flatness_parser = subparsers.add_parser('flatness', parents=[common], help='Flatness of tissue response chords')
    flatness_parser.add_argument("--lengths", "-L", required=False, help='Sequence lengths, comma separated')
    flatness_parser.add_argument("--name", default="flatness", help='Output name')

    isometry_parser = subparsers.add_parser('isometry-mc', parents=[common], help='Monte Carlo check of the chord isometry')
    isometry_parser.add_argument("--factor", type=int, default=4, help='Undersampling factor')
    isometry_parser.add_argument("--length", type=int, default=200, help='Sequence length')
    isometry_parser.add_argument("--trials", type=int, default=100000, help='Number of trials')
    isometry_parser.add_argument("--epsilons", type=float, nargs="+", default=[0.25, 0.5], help='Tail thresholds')
    isometry_parser.add_argument("--name", default="isometry", help='Output name')

    args = parser.parse_args()

    logger.setLevel(logging.INFO)

    if args.debug:
        logger.setLevel(logging.DEBUG)

    try:

        if args.action == "dict" and args.dict_action == "build":
            do_dictionary(args, logger)
        elif args.action == "phantom" and args.phantom_action in ("gen", "load"):
            do_phantom(args, logger)
        elif args.action == "run":
            do_run(args, logger)
        elif args.action == "sweep":
            do_sweep(args, logger)
        elif args.action == "flatness":
            do_flatness(args, logger)
        elif args.action == "isometry-mc":
            do_isometry(args, logger)
        else:
            parser.print_help()
            sys.exit(2)

    except BLIPException as e:
        logger.error(e)
        logger.debug(e, exc_info=True)
        sys.exit(exit_code(e))
    except KeyboardInterrupt:
        logger.info("Interrupted by the user")
        sys.exit(1)
    except Exception as e:
        logger.exception(e)
        sys.exit(1)

    sys.exit(0)
