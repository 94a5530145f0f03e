import logging as log

from pathlib import Path

from actions.basic import PipelineAction

from misc.exceptions import ConfigError
from misc.graph import export_interactions, save_id_map
from misc.models.experiment import ExperimentConfig
from misc.models.report import MetricsReport, MetricsRow


class PartitionRegions(PipelineAction):

    def execute(self) -> None:
        path = self.pipeline.write_partition()
        log.info(f"Region partition written to {path}")


class ScoreWeights(PipelineAction):

    def execute(self) -> None:
        weights, normalized = self.pipeline.write_weights()
        log.info(f"Weights written to {weights} and {normalized}")


class TrainModel(PipelineAction):

    def execute(self) -> None:
        """
        Trains on the first configured seed and writes model.npz, loss.csv and,
        for ns4ar, selection.tsv.
        """

        config = self.pipeline.first_seed()
        fit = self.pipeline.fit(config)

        self.pipeline.save_model(fit.result.model)
        self.pipeline.write_loss([(config.train.seed, fit.result)])
        self.pipeline.write_selection(config)

        curve = fit.result.loss_curve
        if curve:
            log.info(f"Trained {len(curve)} epochs, final loss {curve[-1]:.6f}, best epoch {fit.result.best_epoch}")


class EvaluateModel(PipelineAction):

    def execute(self) -> MetricsReport:
        """
        Evaluates the saved checkpoint on the test split of the first seed.
        """

        config = self.pipeline.first_seed()
        split = self.pipeline.split(config.split.seed)
        model = self.pipeline.load_model(split)

        run = self.pipeline.evaluate(config, model, split, self.pipeline.label(config))
        report = MetricsReport(title=f"{run.label} @{run.k}", rows=[MetricsRow.aggregate([run])], runs=[run])
        self.pipeline.write_report(report)
        return report


class RunPipeline(PipelineAction):

    def execute(self) -> MetricsReport:
        return self.pipeline.run()


class GenerateDataset(PipelineAction):

    def __init__(self, config: ExperimentConfig, use_cache: bool = True, output: str | Path | None = None) -> None:
        """
        Initializes a GenerateDataset action.

        Args:
            config (ExperimentConfig): Configuration with a synthetic dataset spec.
            use_cache (bool): Unused by generation, kept for a uniform signature.
            output (str | Path | None): Edge list path. Defaults to
                ``<out>/synthetic.tsv``.
        """

        if config.dataset.synthetic is None:
            raise ConfigError("generate needs a dataset.synthetic section")

        super().__init__(config, use_cache)
        self.output = Path(output) if output else None

    def execute(self) -> None:
        graph = self.pipeline.graph
        path = self.output or self.pipeline.output("synthetic.tsv")
        path.parent.mkdir(parents=True, exist_ok=True)

        export_interactions(graph, path)
        save_id_map(graph, path.parent)
        self.pipeline.record(path.name, path)

        log.info(f"Wrote {graph} to {path}")
