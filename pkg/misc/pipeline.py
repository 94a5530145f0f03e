from __future__ import annotations

import logging as log

from contextlib import contextmanager
from functools import cached_property
from pathlib import Path
from typing import Callable, NamedTuple, TypeVar

import config as env

from misc.exceptions import ConfigError, EmptyPoolError, MissingArtifact, NRegionError, ParameterError, StageError
from misc.graph import (ID_MAPS, DatasetSplit, ExposedNotClickedSet, InteractionGraph, exposed_not_clicked,
                        load_interactions, save_id_map, split_dataset)
from misc.metrics import EvalResult, evaluate, evaluate_edges
from misc.models.experiment import ExperimentConfig
from misc.models.manifest import Manifest
from misc.models.report import MetricsReport, MetricsRow, RunMetrics
from misc.models.selection import SelectionBatch, SelectionResult
from misc.other import Other
from misc.recommender import EmbeddingModel, TrainResult, normalized_adjacency, train
from misc.regions import RegionPartition, partition_users
from misc.sampler import NegativeSampler, build_sampler
from misc.selection import select_all
from misc.similarity import WeightMatrix, build_weight_matrix
from misc.storage import ArtifactStorage
from misc.synthetic import generate_synthetic

T = TypeVar("T")

# raised as they are instead of being wrapped into a StageError
PASSTHROUGH = (ConfigError, MissingArtifact, StageError, EmptyPoolError)


class FitOutcome(NamedTuple):
    result: TrainResult
    split: DatasetSplit
    fallback_users: int


class RunOutcome(NamedTuple):
    metrics: RunMetrics
    fit: FitOutcome


class Pipeline:
    """
    End-to-end training of the region sampler: load or generate, split, partition,
    weights, core selection, sample sets, train and evaluate.

    Upstream artifacts (partition shells, weights, selections) are cached on disk
    under ``<out>/cache`` keyed by the input hash and the settings they depend on,
    so later sub-commands reuse them.
    """

    def __init__(self, config: ExperimentConfig, use_cache: bool = True) -> None:
        """
        Initializes a Pipeline for an experiment configuration.

        Args:
            config (ExperimentConfig): Validated configuration.
            use_cache (bool): Read and write the on-disk stage cache. Without it, a
                cache left by earlier runs is cleared.
        """

        self.config = config
        self.out = Path(config.out or env.OUT_DIR)
        self.storage = ArtifactStorage(self.out / "cache") if use_cache else None
        if not use_cache and (removed := ArtifactStorage(self.out / "cache").clear()):
            log.info(f"Cleared {removed} cached artifacts in {self.out / 'cache'}")
        self.stages: list[str] = []
        self.artifacts: dict[str, str] = {}

        self._splits: dict[int, DatasetSplit] = {}
        self._train_graphs: dict[int, InteractionGraph] = {}
        self._shells: dict[str, RegionPartition] = {}
        self._weights: dict[str, WeightMatrix] = {}
        self._selections: dict[str, dict[int, SelectionResult]] = {}

    @contextmanager
    def stage(self, name: str):
        """
        Records a stage as completed, or wraps its failure into a StageError.
        """

        try:
            yield
        except PASSTHROUGH:
            raise
        except Exception as ex:
            log.error(f"Stage {name} failed: {ex.__class__.__name__}: {ex}")
            raise StageError(name, ex) from ex

        if name not in self.stages:
            self.stages.append(name)

    def _cached(
            self,
            stage: str,
            key: str,
            load: Callable[[Path], T],
            build: Callable[[], T],
            save: Callable[[T, Path], None],
            suffix: str = ".npz"
    ) -> T:
        if self.storage is not None:
            value = self.storage.get(stage, key, load, suffix)
            if value is not None:
                return value

        value = build()
        if self.storage is not None:
            self.storage.set(stage, key, lambda path: save(value, path), suffix)
        return value

    @cached_property
    def graph(self) -> InteractionGraph:
        dataset = self.config.dataset
        if dataset.synthetic is not None:
            with self.stage("generate"):
                return generate_synthetic(dataset.synthetic)

        if not dataset.path.is_file():
            raise MissingArtifact(dataset.path, "dataset file")
        with self.stage("load"):
            return load_interactions(dataset.path, dataset.delimiter, id_map_dir=self.out)

    @cached_property
    def input_hash(self) -> str:
        """
        Content hash of the input: the dataset file, or the generated edge list.
        """

        if self.config.dataset.path is not None:
            _ = self.graph
            return Other.file_hash(self.config.dataset.path)

        lines = sorted("\t".join(map(str, edge)) for edge in self.graph.labeled_edges())
        return Other.content_hash("\n".join(lines) + "\n")

    @cached_property
    def exposed(self) -> ExposedNotClickedSet:
        return exposed_not_clicked(self.graph)

    def split(self, seed: int) -> DatasetSplit:
        if seed not in self._splits:
            with self.stage("split"):
                self._splits[seed] = split_dataset(self.graph, self.config.split.ratios, seed)
        return self._splits[seed]

    def train_graph(self, split: DatasetSplit) -> InteractionGraph:
        if split.seed not in self._train_graphs:
            self._train_graphs[split.seed] = split.train_graph(self.graph)
        return self._train_graphs[split.seed]

    def held_out(self, split: DatasetSplit) -> dict[int, set[int]]:
        return {u: split.held_out(u) for u in range(self.graph.n_users)}

    def partition(self, split: DatasetSplit, n: int | None) -> RegionPartition:
        """
        Region partition of the training graph with region count ``n``. The shells
        do not depend on n, so one cached traversal serves every n.
        """

        key = Other.key("partition", self.input_hash, split.ratios, split.seed, self.config.khop)
        if key not in self._shells:
            with self.stage("partition"):
                self._shells[key] = self._cached(
                    "partition", key, RegionPartition.load,
                    lambda: partition_users(self.train_graph(split), None, self.config.khop),
                    lambda partition, path: partition.save(path),
                )

        shells = self._shells[key]
        return RegionPartition(shells.n_items, shells.shells, n, shells.khop)

    def weights(self, split: DatasetSplit) -> WeightMatrix:
        include = self.config.similarity.include_exposures
        key = Other.key("weights", self.input_hash, split.ratios, split.seed, include)
        if key not in self._weights:
            with self.stage("weights"):
                self._weights[key] = self._cached(
                    "weights", key, WeightMatrix.load,
                    lambda: build_weight_matrix(self.train_graph(split), include_exposures=include),
                    lambda weights, path: weights.save(path),
                )
        return self._weights[key]

    def selection(
            self,
            config: ExperimentConfig,
            split: DatasetSplit,
            partition: RegionPartition,
            weights: WeightMatrix
    ) -> dict[int, SelectionResult]:
        selection = config.selection
        key = Other.key(
            "selection", self.input_hash, split.ratios, split.seed, config.khop, partition.n, config.m,
            config.train.seed, selection.model_dump(mode="json"), config.similarity.include_exposures,
        )

        if key not in self._selections:
            def build() -> SelectionBatch:
                results = select_all(
                    self.train_graph(split), partition, weights, self.exposed, config.m,
                    method=selection.method, step=selection.step,
                    residual_threshold=selection.residual_threshold,
                    max_iterations=selection.max_iterations, seed=config.train.seed,
                )
                return SelectionBatch(results=list(results.values()))

            with self.stage("selection"):
                batch = self._cached(
                    "selection", key, SelectionBatch.load, build, lambda b, path: b.save(path), suffix=".json"
                )
            self._selections[key] = batch.by_user()

        return self._selections[key]

    def region_count(self, config: ExperimentConfig) -> int | None:
        kind = config.sampler.kind
        if kind == "recns":
            return 3
        return config.n if kind == "ns4ar" else None

    def sampler(self, config: ExperimentConfig, split: DatasetSplit) -> NegativeSampler:
        """
        Builds the negative sampler of ``config`` over a split, computing the
        upstream stages it needs.
        """

        kind = config.sampler.kind
        partition = weights = selection = None

        if kind in ("ns4ar", "recns"):
            partition = self.partition(split, self.region_count(config))
        if kind == "ns4ar":
            weights = self.weights(split)
            selection = {u: r.selected for u, r in self.selection(config, split, partition, weights).items()}

        with self.stage("sets"):
            return build_sampler(
                config.sampler, self.graph, split.train_by_user, self.held_out(split),
                self.exposed, partition, weights, selection,
            )

    def fit(self, config: ExperimentConfig, require_pool: bool = False) -> FitOutcome:
        """
        Trains one model with the split and training seeds of ``config``.

        Args:
            config (ExperimentConfig): Configuration of this run.
            require_pool (bool): Raise EmptyPoolError instead of training when no
                user has a nonempty negative pool.

        Returns:
            FitOutcome: Training result, the split and the number of users whose
            negative pool was empty.
        """

        split = self.split(config.split.seed)
        sampler = self.sampler(config, split)

        users = sorted(split.train_by_user)
        empty = sum(1 for u in users if sampler.sets.pool(u).negative_items.size == 0)
        if empty:
            log.warning(f"{empty}/{len(users)} users have an empty negative pool and sample uniformly")
        if require_pool and empty == len(users):
            raise EmptyPoolError(f"regions {config.sampler.regions} leave every negative pool empty")

        validate = None
        if config.train.patience and split.valid:
            def validate(model: EmbeddingModel) -> float:
                return evaluate_edges(model, split.valid_by_user, split.train_by_user, config.eval.k).recall

        with self.stage("train"):
            result = train(self.graph, split, config.train, sampler, validate)

        return FitOutcome(result, split, empty)

    def evaluate(self, config: ExperimentConfig, model: EmbeddingModel, split: DatasetSplit, label: str) -> RunMetrics:
        with self.stage("evaluate"):
            scores: EvalResult = evaluate(model, split, config.eval.k)

        return RunMetrics(
            label=label, sampler=config.sampler.kind, n=self.region_count(config), seed=config.train.seed,
            k=config.eval.k, recall=scores.recall, ndcg=scores.ndcg, hr=scores.hr, users=scores.users,
        )

    def run_seed(self, config: ExperimentConfig, label: str, require_pool: bool = False) -> RunOutcome:
        fit = self.fit(config, require_pool)
        return RunOutcome(self.evaluate(config, fit.result.model, fit.split, label), fit)

    def run_grid(
            self,
            config: ExperimentConfig,
            label: str,
            require_pool: bool = False
    ) -> tuple[MetricsRow, list[RunOutcome]]:
        """
        Trains and evaluates ``config`` once per evaluation seed.

        Returns:
            tuple[MetricsRow, list[RunOutcome]]: Mean and sd row plus the per-seed outcomes.
        """

        outcomes = [self.run_seed(config.with_seed(seed), label, require_pool) for seed in config.eval.seeds]

        flags = []
        fallback = max(o.fit.fallback_users for o in outcomes)
        if fallback:
            flags.append(f"uniform-fallback:{fallback}")

        return MetricsRow.aggregate([o.metrics for o in outcomes], flags), outcomes

    def label(self, config: ExperimentConfig | None = None) -> str:
        config = config or self.config
        n = self.region_count(config)
        return config.sampler.kind if n is None else f"{config.sampler.kind} n={n}"

    def first_seed(self) -> ExperimentConfig:
        return self.config.with_seed(self.config.eval.seeds[0])

    def output(self, name: str) -> Path:
        self.out.mkdir(parents=True, exist_ok=True)
        return self.out / name

    def record(self, name: str, path: Path) -> Path:
        self.artifacts[name] = Other.file_hash(path)
        return path

    def write_report(self, report: MetricsReport, name: str = "metrics.csv") -> Path:
        path = self.output(name)
        report.to_csv(path)
        return self.record(name, path)

    def write_loss(self, fits: list[tuple[int, TrainResult]]) -> Path:
        path = self.output("loss.csv")
        with open(path, "w", encoding="utf-8", newline="\n") as file:
            file.write("seed,epoch,loss\n")
            for seed, result in fits:
                file.writelines(f"{seed},{epoch},{loss!r}\n" for epoch, loss in enumerate(result.loss_curve, start=1))
        return self.record("loss.csv", path)

    def write_partition(self, config: ExperimentConfig | None = None) -> Path:
        config = config or self.first_seed()
        partition = self.partition(self.split(config.split.seed), self.region_count(config))
        path = self.output("partition.tsv")
        partition.export(self.graph, path)
        return self.record("partition.tsv", path)

    def write_weights(self, config: ExperimentConfig | None = None) -> tuple[Path, Path]:
        config = config or self.first_seed()
        weights = self.weights(self.split(config.split.seed))
        paths = self.output("weights.tsv"), self.output("weights_normalized.tsv")
        weights.export(self.graph, *paths)
        return self.record("weights.tsv", paths[0]), self.record("weights_normalized.tsv", paths[1])

    def write_selection(self, config: ExperimentConfig | None = None) -> Path | None:
        """
        Writes every user's core negatives with score, region and Fisher p-value to
        selection.tsv, and each user's selection with its iteration trace to
        selection_trace.txt. Only the ns4ar sampler selects core negatives.
        """

        config = config or self.first_seed()
        if config.sampler.kind != "ns4ar":
            return None

        split = self.split(config.split.seed)
        partition = self.partition(split, config.n)
        results = self.selection(config, split, partition, self.weights(split))
        user_ids, item_ids = self.graph.user_ids, self.graph.item_ids

        path = self.output("selection.tsv")
        with open(path, "w", encoding="utf-8", newline="\n") as file:
            file.write("user\titem\tscore\tregion\tfisher_p\tsignificant\n")
            for user in sorted(results):
                r = results[user]
                file.writelines(
                    f"{user_ids[user]}\t{item_ids[item]}\t{score!r}\t{region}\t"
                    f"{r.fisher_p!r}\t{int(r.significant)}\n"
                    for item, score, region in zip(r.selected, r.scores, r.regions)
                )

        trace = self.output("selection_trace.txt")
        with open(trace, "w", encoding="utf-8", newline="\n") as file:
            for user in sorted(results):
                results[user].dump(file, user_ids[user], item_ids)

        self.record("selection_trace.txt", trace)
        return self.record("selection.tsv", path)

    def save_model(self, model: EmbeddingModel) -> Path:
        """
        Writes the checkpoint next to the raw id maps its header refers to.
        """

        save_id_map(self.graph, self.out)
        for name in ID_MAPS:
            self.record(name, self.out / name)

        path = self.output("model.npz")
        model.save(path, id_map=",".join(ID_MAPS))
        self.artifacts["model.npz"] = Other.content_hash(model.base.tobytes())
        return path

    def load_model(self, split: DatasetSplit) -> EmbeddingModel:
        """
        Loads the checkpoint and refreshes it over the split's training graph.

        Raises:
            MissingArtifact: There is no checkpoint in the output directory.
        """

        path = self.out / "model.npz"
        if not path.is_file():
            raise MissingArtifact(path, "run the train sub-command first")

        model = EmbeddingModel.load(path)
        if (model.n_users, model.n_items) != (self.graph.n_users, self.graph.n_items):
            raise ParameterError(
                f"checkpoint has {model.n_users} users and {model.n_items} items, "
                f"the dataset has {self.graph.n_users} and {self.graph.n_items}"
            )

        model.refresh(normalized_adjacency(self.train_graph(split)))
        return model

    def manifest(self, partial: bool = False, failed_stage: str | None = None) -> Manifest:
        try:
            input_hash = self.input_hash
        except (NRegionError, OSError):
            input_hash = ""

        return Manifest(
            config=self.config, input_hash=input_hash, stages=list(self.stages),
            artifacts=dict(sorted(self.artifacts.items())), partial=partial, failed_stage=failed_stage,
        )

    def write_manifest(self, partial: bool = False, failed_stage: str | None = None) -> Path:
        path = self.output("manifest.json")
        self.manifest(partial, failed_stage).save(path)
        if partial:
            log.warning(f"Partial artifacts in {self.out}, failed stage: {failed_stage}")
        return path

    def run(self) -> MetricsReport:
        """
        Trains and evaluates once per seed and writes metrics.csv, loss.csv,
        partition.tsv, weights.tsv, weights_normalized.tsv, selection.tsv (ns4ar) and
        model.npz (first seed).

        Returns:
            MetricsReport: One aggregated row plus the per-seed runs.
        """

        row, outcomes = self.run_grid(self.config, self.label())
        report = MetricsReport(title=f"{self.label()} @{self.config.eval.k}", rows=[row], runs=[o.metrics for o in outcomes])

        self.write_report(report)
        self.write_loss([(o.metrics.seed, o.fit.result) for o in outcomes])
        self.write_partition()
        self.write_weights()
        self.write_selection()
        self.save_model(outcomes[0].fit.result.model)

        return report


def run_pipeline(config: ExperimentConfig, use_cache: bool = True) -> MetricsReport:
    """
    Runs the whole pipeline for a configuration and writes its artifacts.

    Args:
        config (ExperimentConfig): Validated configuration.
        use_cache (bool): Reuse cached upstream stages.

    Returns:
        MetricsReport: The metrics of the run.

    Raises:
        StageError: A stage failed; a partial manifest naming it has been written.
    """

    pipeline = Pipeline(config, use_cache)
    try:
        report = pipeline.run()
    except NRegionError as ex:
        pipeline.write_manifest(partial=True, failed_stage=getattr(ex, "stage", None))
        raise

    pipeline.write_manifest()
    return report
