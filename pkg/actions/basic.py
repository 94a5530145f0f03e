import sys
import logging as log

import numpy
import pydantic
import scipy
import ujson

from misc.exceptions import NRegionError
from misc.models.experiment import ExperimentConfig
from misc.models.report import MetricsReport
from misc.pipeline import Pipeline


class PipelineAction:

    def __init__(self, config: ExperimentConfig, use_cache: bool = True) -> None:
        """
        Initializes a PipelineAction over a fresh pipeline for ``config``.

        Args:
            config (ExperimentConfig): Validated configuration.
            use_cache (bool): Reuse cached upstream stages.
        """

        self.config = config
        self.pipeline = Pipeline(config, use_cache)

    def execute(self) -> MetricsReport | None:
        raise NotImplementedError

    def process(self) -> int:
        """
        Runs the action and writes the manifest, flagged partial when a stage failed.

        Returns:
            int: Exit code 0; failures propagate to the errors handler.
        """

        try:
            report = self.execute()
        except NRegionError as ex:
            self.pipeline.write_manifest(partial=True, failed_stage=getattr(ex, "stage", None))
            raise

        path = self.pipeline.write_manifest()
        log.info(f"Manifest written to {path}")

        if report is not None:
            print(report.to_table())
        return 0


class Sys:

    @staticmethod
    def sys_info() -> str:
        """
        Interpreter and package versions as a JSON string.
        """

        return ujson.dumps({
            "interpreter": sys.version,
            "packages": {
                "numpy": numpy.__version__,
                "scipy": scipy.__version__,
                "pydantic": pydantic.__version__,
                "ujson": ujson.__version__,
            }
        })
