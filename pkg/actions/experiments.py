from typing import Sequence

from actions.basic import PipelineAction

from misc.experiments import SAMPLERS, compare_samplers, region_ablation, sweep_n
from misc.models.experiment import ExperimentConfig, SamplerKind
from misc.models.report import MetricsReport


class AblateRegions(PipelineAction):

    def __init__(self, config: ExperimentConfig, use_cache: bool = True, n: int = 5, k: int = 20) -> None:
        """
        Initializes an AblateRegions action.

        Args:
            config (ExperimentConfig): Base configuration.
            use_cache (bool): Reuse cached upstream stages.
            n (int): Region count of the ablation.
            k (int): Metric cut-off.
        """

        super().__init__(config, use_cache)
        self.n = n
        self.k = k

    def execute(self) -> MetricsReport:
        report = region_ablation(self.pipeline, self.n, self.k)
        self.pipeline.write_report(report, "ablation.csv")
        return report


class SweepRegionCount(PipelineAction):

    def __init__(self, config: ExperimentConfig, use_cache: bool = True, n_values: Sequence[int] = (1, 10, 100)) -> None:
        super().__init__(config, use_cache)
        self.n_values = list(n_values)

    def execute(self) -> MetricsReport:
        report = sweep_n(self.pipeline, self.n_values)
        self.pipeline.write_report(report, "sweep_n.csv")
        return report


class CompareSamplers(PipelineAction):

    def __init__(
            self,
            config: ExperimentConfig,
            use_cache: bool = True,
            kinds: Sequence[SamplerKind] = SAMPLERS
    ) -> None:
        super().__init__(config, use_cache)
        self.kinds = list(kinds)

    def execute(self) -> MetricsReport:
        report = compare_samplers(self.pipeline, self.kinds)
        self.pipeline.write_report(report, "samplers.csv")
        return report
