import argparse

from pathlib import Path
from typing import get_args

from dispatcher import dp

from actions.experiments import AblateRegions, CompareSamplers, SweepRegionCount
from actions.stages import EvaluateModel, GenerateDataset, PartitionRegions, RunPipeline, ScoreWeights, TrainModel

from misc.exceptions import ConfigError, MissingArtifact
from misc.models.experiment import ExperimentConfig, SamplerKind, load_config
from misc.models.manifest import Manifest
from misc.other import Other

# flag name -> (key path, value conversion)
FLAG_KEYS = {
    "seed": (["eval", "seeds"], lambda v: [v]),
    "n": (["train", "sampler", "n"], None),
    "khop": (["khop"], None),
    "k": (["train", "sampler", "k"], None),
    "gamma": (["train", "gamma"], None),
    "sampler": (["train", "sampler", "kind"], None),
    "out": (["out"], None),
}


def experiment_config(args: argparse.Namespace) -> ExperimentConfig:
    """
    Builds the experiment config from a config file or a manifest, then ``--set``
    overrides, then the dedicated flags.

    Args:
        args (argparse.Namespace): Parsed command line.

    Returns:
        ExperimentConfig: The validated configuration.
    """

    overrides = []
    for text in args.overrides:
        try:
            overrides.append(Other.parse_override(text))
        except ValueError as ex:
            raise ConfigError(str(ex)) from ex

    for name, (keys, convert) in FLAG_KEYS.items():
        value = getattr(args, name)
        if value is not None:
            overrides.append((keys, convert(value) if convert else value))

    if args.manifest:
        path = Path(args.manifest)
        if not path.is_file():
            raise MissingArtifact(path, "manifest to re-run from")
        data = Manifest.load(path).config.model_dump(mode="json")
        return load_config(data=data, overrides=overrides)

    if not args.config:
        raise ConfigError("either --config or --manifest is required")
    return load_config(args.config, overrides)


def int_list(text: str) -> list[int]:
    try:
        return Other.parse_int_list(text)
    except ValueError as ex:
        raise argparse.ArgumentTypeError(str(ex))


@dp.command_handler("partition", help="compute the region partition and write partition.tsv")
def cmd_partition(args: argparse.Namespace) -> int:
    """
    Handle the partition sub-command.

    Runs the breadth-first shells for every user of the training split and writes
    the (user, item, region) table.

    Args:
        args (argparse.Namespace): Parsed command line.

    Returns:
        int: Exit code.
    """

    return PartitionRegions(experiment_config(args), not args.no_cache).process()


@dp.command_handler("weights", help="compute item-item weights and write weights.tsv")
def cmd_weights(args: argparse.Namespace) -> int:
    return ScoreWeights(experiment_config(args), not args.no_cache).process()


@dp.command_handler("train", help="train on the first seed and write model.npz and loss.csv")
def cmd_train(args: argparse.Namespace) -> int:
    """
    Handle the train sub-command.

    Reuses the cached partition, weights and core selection when present.

    Args:
        args (argparse.Namespace): Parsed command line.

    Returns:
        int: Exit code.
    """

    return TrainModel(experiment_config(args), not args.no_cache).process()


@dp.command_handler("eval", help="evaluate model.npz on the test split and write metrics.csv")
def cmd_eval(args: argparse.Namespace) -> int:
    return EvaluateModel(experiment_config(args), not args.no_cache).process()


@dp.command_handler(
    "ablate",
    help="train with negatives restricted to each region and report the metrics",
    arguments=(
        (("--regions",), {"type": int, "default": 5, "help": "region count of the ablation"}),
        (("--at",), {"type": int, "default": 20, "help": "metric cut-off K"}),
    )
)
def cmd_ablate(args: argparse.Namespace) -> int:
    """
    Handle the ablate sub-command.

    Args:
        args (argparse.Namespace): Parsed command line.

    Returns:
        int: Exit code.
    """

    return AblateRegions(experiment_config(args), not args.no_cache, n=args.regions, k=args.at).process()


@dp.command_handler(
    "sweep-n",
    help="train ns4ar for each region count of a comma separated list",
    arguments=((("values",), {"type": int_list, "help": "region counts, e.g. 1,10,100"}),)
)
def cmd_sweep_n(args: argparse.Namespace) -> int:
    return SweepRegionCount(experiment_config(args), not args.no_cache, n_values=args.values).process()


@dp.command_handler(
    "compare",
    help="train every sampler over the seed grid",
    arguments=((("--kinds",), {"nargs": "+", "choices": get_args(SamplerKind), "help": "samplers to compare"}),)
)
def cmd_compare(args: argparse.Namespace) -> int:
    config = experiment_config(args)
    if args.kinds:
        return CompareSamplers(config, not args.no_cache, kinds=args.kinds).process()
    return CompareSamplers(config, not args.no_cache).process()


@dp.command_handler("run", help="run the whole pipeline over every seed")
def cmd_run(args: argparse.Namespace) -> int:
    """
    Handle the run sub-command.

    Executes load or generate, split, partition, weights, core selection, sample
    sets, training and evaluation, then writes every artifact and the manifest.

    Args:
        args (argparse.Namespace): Parsed command line.

    Returns:
        int: Exit code.
    """

    return RunPipeline(experiment_config(args), not args.no_cache).process()


@dp.command_handler(
    "generate",
    help="write the synthetic dataset as an edge list",
    arguments=((("--output",), {"help": "edge list path, defaults to <out>/synthetic.tsv"}),)
)
def cmd_generate(args: argparse.Namespace) -> int:
    return GenerateDataset(experiment_config(args), not args.no_cache, output=args.output).process()
