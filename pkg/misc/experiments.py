import logging as log

from typing import Iterable, Sequence

from misc.exceptions import EmptyPoolError, ParameterError
from misc.models.experiment import SamplerKind
from misc.models.report import MetricsReport
from misc.pipeline import Pipeline

SAMPLERS: tuple[SamplerKind, ...] = ("ns4ar", "uniform_rns", "dns_hard", "exposure_argmax", "recns")


def _report(title: str, results: Iterable[tuple]) -> MetricsReport:
    rows, runs = [], []
    for row, outcomes in results:
        rows.append(row)
        runs.extend(o.metrics for o in outcomes)
    return MetricsReport(title=title, rows=rows, runs=runs)


def compare_samplers(pipeline: Pipeline, kinds: Sequence[SamplerKind] = SAMPLERS) -> MetricsReport:
    """
    Trains and evaluates every sampler kind over the configured seed grid.

    Args:
        pipeline (Pipeline): Pipeline holding the graph and the base configuration.
        kinds (Sequence[SamplerKind]): Sampler kinds, one row each, in this order.

    Returns:
        MetricsReport: One row per sampler with mean and sd over seeds.
    """

    if not kinds:
        raise ParameterError("no sampler to compare")

    def results():
        for kind in kinds:
            config = pipeline.config.with_sampler(kind=kind)
            log.info(f"Sampler comparison: {kind}")
            yield pipeline.run_grid(config, pipeline.label(config))

    return _report(f"Sampler comparison @{pipeline.config.eval.k}", results())


def ablation_regions(n: int) -> list[tuple[int, ...]]:
    """
    Region restrictions of the ablation: each region alone, then the two most
    distant regions together.
    """

    if n < 1:
        raise ParameterError(f"region count must be at least 1, got {n}")

    restrictions = [(r,) for r in range(1, n + 1)]
    if n >= 2:
        restrictions.append((n - 1, n))
    return restrictions


def region_ablation(pipeline: Pipeline, n: int = 5, k: int = 20) -> MetricsReport:
    """
    Trains ns4ar with negatives restricted to one region at a time (and to the two
    most distant regions together) and reports the metrics at k.

    A restriction under which every user's negative pool is empty is skipped and
    named in the report's skipped list.

    Args:
        pipeline (Pipeline): Pipeline holding the graph and the base configuration.
        n (int): Region count.
        k (int): Metric cut-off.

    Returns:
        MetricsReport: One row per restriction that could be trained.
    """

    base = pipeline.config.model_copy(update={"eval": pipeline.config.eval.model_copy(update={"k": k})})
    rows, runs, skipped = [], [], []

    for regions in ablation_regions(n):
        label = f"region {regions[0]}" if len(regions) == 1 else f"regions {'+'.join(map(str, regions))}"
        config = base.with_sampler(kind="ns4ar", n=n, regions=regions)

        try:
            row, outcomes = pipeline.run_grid(config, label, require_pool=True)
        except EmptyPoolError as ex:
            log.warning(f"Skipping {label}: {ex}")
            skipped.append(label)
            continue

        rows.append(row)
        runs.extend(o.metrics for o in outcomes)

    return MetricsReport(title=f"Region ablation, n={n} @{k}", rows=rows, runs=runs, skipped=skipped)


def sweep_n(pipeline: Pipeline, n_values: Sequence[int]) -> MetricsReport:
    """
    Trains and evaluates ns4ar for each region count, rows ordered by n.

    Args:
        pipeline (Pipeline): Pipeline holding the graph and the base configuration.
        n_values (Sequence[int]): Region counts to try.

    Returns:
        MetricsReport: One row per n.
    """

    if not n_values:
        raise ParameterError("sweep_n needs at least one region count")

    def results():
        for n in sorted(set(n_values)):
            config = pipeline.config.with_sampler(kind="ns4ar", n=n)
            log.info(f"Region count sweep: n={n}")
            yield pipeline.run_grid(config, f"n={n}")

    return _report(f"Region count sweep @{pipeline.config.eval.k}", results())
