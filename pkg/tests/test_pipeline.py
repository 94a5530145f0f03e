from pathlib import Path

import numpy as np
import pytest
import ujson

from misc.exceptions import MissingArtifact, ParameterError, StageError
from misc.experiments import ablation_regions, compare_samplers, region_ablation, sweep_n
from misc.graph import export_interactions
from misc.models.experiment import load_config
from misc.models.manifest import Manifest
from misc.pipeline import Pipeline, run_pipeline

TREND_CONFIG = Path(__file__).resolve().parent.parent / "configs" / "synthetic.json"


def moved(config, path):
    return config.model_copy(update={"out": path})


def read(path) -> bytes:
    with open(path, "rb") as file:
        return file.read()


def test_run_writes_every_artifact(small_config):
    report = run_pipeline(small_config)
    out = small_config.out

    for name in ("metrics.csv", "loss.csv", "partition.tsv", "weights.tsv", "weights_normalized.tsv",
                 "selection.tsv", "model.npz", "manifest.json"):
        assert (out / name).is_file(), name

    row = report.rows[0]
    assert row.label == "ns4ar"
    assert row.seeds == [0, 1]
    assert 0.0 <= row.recall_mean <= 100.0
    assert len(report.runs) == 2

    manifest = Manifest.load(out / "manifest.json")
    assert not manifest.partial
    assert manifest.stages[:2] == ["generate", "split"]
    assert {"partition", "weights", "selection", "sets", "train", "evaluate"} <= set(manifest.stages)
    assert set(manifest.artifacts) >= {"metrics.csv", "loss.csv", "model.npz"}

    loss_lines = read(out / "loss.csv").decode().splitlines()
    assert loss_lines[0] == "seed,epoch,loss"
    assert len(loss_lines) == 1 + 2 * small_config.train.epochs


def test_two_runs_are_identical(small_config, tmp_path):
    first = moved(small_config, tmp_path / "first")
    run_pipeline(first, use_cache=False)
    metrics, manifest = read(first.out / "metrics.csv"), read(first.out / "manifest.json")

    run_pipeline(first, use_cache=False)
    assert read(first.out / "metrics.csv") == metrics
    assert read(first.out / "manifest.json") == manifest


def test_cached_run_equals_cold_run(small_config, tmp_path):
    cold = moved(small_config, tmp_path / "cold")
    run_pipeline(cold, use_cache=False)
    assert not (cold.out / "cache").exists()

    warm = moved(small_config, tmp_path / "warm")
    run_pipeline(warm)
    assert list((warm.out / "cache").glob("partition-*.npz"))
    assert list((warm.out / "cache").glob("selection-*.json"))
    run_pipeline(warm)

    assert read(warm.out / "metrics.csv") == read(cold.out / "metrics.csv")
    assert read(warm.out / "selection.tsv") == read(cold.out / "selection.tsv")
    assert Manifest.load(warm.out / "manifest.json").artifacts == Manifest.load(cold.out / "manifest.json").artifacts


def test_rerun_from_manifest(small_config, tmp_path):
    run_pipeline(small_config)
    stored = Manifest.load(small_config.out / "manifest.json")

    again = moved(stored.config, tmp_path / "again")
    run_pipeline(again)
    assert read(again.out / "metrics.csv") == read(small_config.out / "metrics.csv")
    assert Manifest.load(again.out / "manifest.json").input_hash == stored.input_hash


def test_file_dataset(small_config, small_synthetic, tmp_path):
    path = tmp_path / "edges.tsv"
    export_interactions(small_synthetic, path)
    config = small_config.model_copy(update={
        "dataset": small_config.dataset.model_copy(update={"path": path, "synthetic": None})
    })

    pipeline = Pipeline(config)
    assert pipeline.graph.labeled_edges() == small_synthetic.labeled_edges()
    assert len(pipeline.input_hash) == 40
    assert pipeline.stages == ["load"]

    users = read(config.out / "user_ids.tsv").decode().splitlines()
    items = read(config.out / "item_ids.tsv").decode().splitlines()
    assert users == [f"{raw}\t{index}" for index, raw in enumerate(pipeline.graph.user_ids)]
    assert len(items) == pipeline.graph.n_items


def test_checkpoint_refers_to_id_maps(small_config):
    pipeline = Pipeline(small_config)
    fit = pipeline.fit(pipeline.first_seed())
    path = pipeline.save_model(fit.result.model)

    with np.load(path) as data:
        header = ujson.loads(str(data["header"]))
    assert header["id_map"] == "user_ids.tsv,item_ids.tsv"
    for name in header["id_map"].split(","):
        assert (small_config.out / name).is_file()
        assert name in pipeline.artifacts


def test_selection_trace(small_config):
    pipeline = Pipeline(small_config)
    pipeline.write_selection()
    config = pipeline.first_seed()
    split = pipeline.split(config.split.seed)
    results = pipeline.selection(config, split, pipeline.partition(split, config.n), pipeline.weights(split))

    trace = (small_config.out / "selection_trace.txt").read_text(encoding="utf-8").splitlines()
    headers = [line for line in trace if line.startswith("# user ")]
    assert len(headers) == len(results)
    assert headers[0].startswith(f"# user {pipeline.graph.user_ids[min(results)]} fisher_p=")
    assert trace.count("# iteration\tfeature\tbic\tresidual_norm") == len(results)
    assert "selection_trace.txt" in pipeline.artifacts


def test_no_cache_clears_stale_entries(small_config):
    run_pipeline(small_config)
    assert list((small_config.out / "cache").iterdir())

    Pipeline(small_config, use_cache=False)
    assert not list((small_config.out / "cache").iterdir())


def test_missing_dataset_file(small_config, tmp_path):
    config = small_config.model_copy(update={
        "dataset": small_config.dataset.model_copy(update={"path": tmp_path / "absent.tsv", "synthetic": None})
    })
    with pytest.raises(MissingArtifact) as info:
        _ = Pipeline(config).graph
    assert "absent.tsv" in str(info.value)


def test_failed_stage_writes_partial_manifest(small_config, tmp_path):
    path = tmp_path / "bad.tsv"
    path.write_text("u1\ti1\t1\nu2\n", encoding="utf-8")
    config = small_config.model_copy(update={
        "dataset": small_config.dataset.model_copy(update={"path": path, "synthetic": None})
    })

    with pytest.raises(StageError) as info:
        run_pipeline(config)
    assert info.value.stage == "load"

    manifest = Manifest.load(config.out / "manifest.json")
    assert manifest.partial
    assert manifest.failed_stage == "load"
    assert manifest.input_hash == ""


def test_evaluation_needs_a_checkpoint(small_config):
    pipeline = Pipeline(small_config)
    with pytest.raises(MissingArtifact) as info:
        pipeline.load_model(pipeline.split(0))
    assert str(small_config.out / "model.npz") in str(info.value)


def test_checkpoint_round_trip(small_config):
    pipeline = Pipeline(small_config)
    fit = pipeline.fit(pipeline.first_seed())
    pipeline.save_model(fit.result.model)

    loaded = pipeline.load_model(fit.split)
    assert (loaded.fused == fit.result.model.fused).all()


def test_partition_shells_shared_across_region_counts(small_config):
    pipeline = Pipeline(small_config)
    split = pipeline.split(0)
    three, seven = pipeline.partition(split, 3), pipeline.partition(split, 7)

    assert three.shells is seven.shells
    assert (three.n, seven.n) == (3, 7)
    assert len(list((small_config.out / "cache").glob("partition-*.npz"))) == 1


def test_region_count_by_sampler(small_config):
    pipeline = Pipeline(small_config)
    assert pipeline.region_count(small_config.with_sampler(kind="recns")) == 3
    assert pipeline.region_count(small_config.with_sampler(kind="ns4ar", n=6)) == 6
    assert pipeline.region_count(small_config.with_sampler(kind="dns_hard", n=6)) is None
    assert pipeline.label(small_config.with_sampler(kind="ns4ar", n=6)) == "ns4ar n=6"


def test_single_region_falls_back_to_uniform(small_config):
    pipeline = Pipeline(small_config)
    config = small_config.with_sampler(n=1).with_seed(0)
    fit = pipeline.fit(config)
    assert fit.fallback_users == len(fit.split.train_by_user)


def test_sweep_n_rows(small_config):
    report = sweep_n(Pipeline(small_config), [100, 1, 10, 10])
    assert [row.label for row in report.rows] == ["n=1", "n=10", "n=100"]
    assert [row.n for row in report.rows] == [1, 10, 100]
    assert "uniform-fallback" in report.rows[0].flags[0]

    with pytest.raises(ParameterError):
        sweep_n(Pipeline(small_config), [])


def test_ablation_regions():
    assert ablation_regions(5) == [(1,), (2,), (3,), (4,), (5,), (4, 5)]
    assert ablation_regions(1) == [(1,)]
    with pytest.raises(ParameterError):
        ablation_regions(0)


def test_region_ablation_skips_empty_pools(small_config):
    config = small_config.model_copy(update={"eval": small_config.eval.model_copy(update={"seeds": (0,)})})
    report = region_ablation(Pipeline(config), n=5, k=5)

    # region 1 holds only training clicks
    assert "region 1" in report.skipped
    labels = [row.label for row in report.rows] + report.skipped
    assert sorted(labels) == sorted(["region 1", "region 2", "region 3", "region 4", "region 5", "regions 4+5"])
    assert all(row.k == 5 for row in report.rows)

    config.out.mkdir(parents=True, exist_ok=True)
    report.to_csv(config.out / "ablation.csv")
    lines = (config.out / "ablation.csv").read_text(encoding="utf-8").splitlines()
    assert len(lines) == 7
    assert any(line.startswith("region 1,") and line.endswith("skipped:empty-pool") for line in lines)


def test_compare_samplers(small_config):
    config = small_config.model_copy(update={"eval": small_config.eval.model_copy(update={"seeds": (0,)})})
    report = compare_samplers(Pipeline(config), ["uniform_rns", "recns", "exposure_argmax"])
    assert [row.label for row in report.rows] == ["uniform_rns", "recns n=3", "exposure_argmax"]
    assert [run.sampler for run in report.runs] == ["uniform_rns", "recns", "exposure_argmax"]

    with pytest.raises(ParameterError):
        compare_samplers(Pipeline(config), [])


def test_trend_config_keeps_three_shells(tmp_path):
    config = load_config(TREND_CONFIG, [(["out"], str(tmp_path / "out"))])
    pipeline = Pipeline(config, use_cache=False)
    split = pipeline.split(0)
    four, five = pipeline.partition(split, 4), pipeline.partition(split, 5)

    for user in four.users:
        assert len(four.shells[user]) <= 3
        assert set(four.items_in(user, [1]).tolist()) == split.train_by_user.get(user, set())
        assert not len(five.items_in(user, [4]))

    distant = np.mean([len(five.items_in(u, [5])) for u in five.users])
    intermediate = np.mean([len(five.items_in(u, [2, 3])) for u in five.users])
    assert 0 < distant < intermediate
