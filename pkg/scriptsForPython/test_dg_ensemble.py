import json
import os

import numpy as np
import pytest

from scriptsForPython.dg_ensemble import DGEnsembleRunner, main, run_experiment
from utils.config_utils import load_config
from utils.dataset_utils import DIGIT_CLASSES, LabeledImageSet, load_dgim, save_dgim
from utils.errors import StageError
from utils.experiment_utils import ExperimentConfig
from utils.merge_utils import deep_merge
from utils.report_utils import FUSION_ROWS, load_results_csv


def bar_digits(n: int, seed: int) -> LabeledImageSet:
    """类别 k 的图像在第 k+3 行有一条亮线"""
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % 10
    images = rng.integers(0, 30, size=(n, 1, 16, 16))
    for i, label in enumerate(labels):
        images[i, 0, label + 3, :] += 200
    return LabeledImageSet(images.astype(np.uint8), labels, DIGIT_CLASSES)


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    save_dgim(bar_digits(120, 0), str(root / "mnist.dgim"))
    save_dgim(bar_digits(60, 1), str(root / "usps.dgim"))
    return root


def experiment_dict(data_dir, out_dir, **overrides):
    base = {
        "source": {"id": "mnist", "format": "dgim", "paths": [str(data_dir / "mnist.dgim")]},
        "target": {"id": "usps", "format": "dgim", "paths": [str(data_dir / "usps.dgim")]},
        "num_models": 5,
        "seeds": {"global": 0, "models": []},
        "training": {"epochs": 1, "batch_size": 32, "lr": 0.01},
        "meta": {"epochs": 2, "batch_size": 32, "hidden_units": 16, "augmented_copies": 1},
        "classical": {
            "rf_trees": 6,
            "rf_tree_candidates": [3, 6],
            "svm": {"epochs": 2},
            "lr": {"epochs": 2},
        },
        "output": {"out_dir": str(out_dir), "table_name": "results"},
        "single_context": True,
    }
    return deep_merge(deep_merge(load_config(), base), overrides)


def make_config(data_dir, out_dir, **overrides) -> ExperimentConfig:
    return ExperimentConfig.from_dict(experiment_dict(data_dir, out_dir, **overrides))


@pytest.fixture(scope="module")
def full_run(data_dir, tmp_path_factory):
    out_dir = tmp_path_factory.mktemp("full")
    return run_experiment(make_config(data_dir, out_dir)), out_dir


# =============================================================================
# 完整实验
# =============================================================================


class TestFullRun:
    def test_table_has_thirteen_rows_in_order(self, full_run):
        results, _ = full_run
        names = [name for name, _ in results.ordered_rows()]
        assert names == [f"model {i}" for i in range(1, 6)] + list(FUSION_ROWS) + ["RF", "SVM", "LR"]
        for _, scores in results.ordered_rows():
            assert len(scores) == 3 and all(0.0 <= v <= 1.0 for v in scores)

    def test_outputs_written(self, full_run):
        _, out_dir = full_run
        for ext in ("csv", "md", "meta.json"):
            assert (out_dir / f"results.{ext}").exists()
        checkpoints = {p.name for p in (out_dir / "checkpoints").iterdir()}
        expected = {f"model_{i}.dgck" for i in range(1, 6)} | {
            "enm.dgck", "enm2.dgck", "hcnn.dgck", "rf.dgck", "svm.dgck", "lr.dgck",
        }
        assert expected <= checkpoints

    def test_metadata_records_run(self, full_run):
        _, out_dir = full_run
        meta = json.loads((out_dir / "results.meta.json").read_text(encoding="utf-8"))
        assert meta["pairing"] == "MNIST→USPS"
        assert meta["partial"] is False
        assert meta["seeds"] == {"global": 0, "models": [1, 2, 3, 4, 5]}
        assert meta["preprocessing"]["size"] == 16
        assert meta["rf_trees_selected"] in (3, 6)
        assert abs(meta["params"]["hcnn"] - meta["params"]["base_total"]) <= 0.05 * meta["params"]["base_total"]
        assert len({frozenset(s) for s in meta["augmentation_plan"]["per_model"]}) == 5
        assert set(meta["summary"]["ensembles"]) == {"EnA", "EnM", "EnM2", "EnT"}

    def test_csv_matches_returned_table(self, full_run):
        results, out_dir = full_run
        loaded = load_results_csv(str(out_dir / "results.csv"))
        assert list(loaded.rows) == [name for name, _ in results.ordered_rows()]

    def test_cli_rerun_is_byte_identical(self, full_run, data_dir, tmp_path):
        _, out_dir = full_run
        config_path = tmp_path / "experiment.json"
        raw = experiment_dict(data_dir, out_dir)
        config_path.write_text(json.dumps(raw), encoding="utf-8")
        rerun_dir = tmp_path / "rerun"
        main(["run", "--config", str(config_path), "--single-context", "--out-dir", str(rerun_dir)])
        assert (rerun_dir / "results.csv").read_bytes() == (out_dir / "results.csv").read_bytes()


# =============================================================================
# 部分实验
# =============================================================================


def test_disabled_learners_are_skipped(data_dir, tmp_path):
    config = make_config(data_dir, tmp_path, num_models=2, learners=["base", "EnA"],
                         output={"checkpoints": False})
    runner = DGEnsembleRunner(config)
    results = runner.run()
    assert [name for name, _ in results.ordered_rows()] == ["model 1", "model 2", "EnA"]
    assert not (tmp_path / "checkpoints").exists()


def test_num_models_from_classes(data_dir, tmp_path):
    config = make_config(data_dir, tmp_path, num_models="classes", learners=["EnA"],
                         output={"checkpoints": False})
    results = run_experiment(config)
    assert list(results.rows) == ["EnA"]
    meta = json.loads((tmp_path / "results.meta.json").read_text(encoding="utf-8"))
    assert len(meta["seeds"]["models"]) == 10


def test_failed_stage_writes_partial_table(data_dir, tmp_path):
    config = make_config(
        data_dir, tmp_path, num_models=2, learners=["base", "EnA", "RF"],
        classical={"rf_trees": 0}, output={"checkpoints": False},
    )
    with pytest.raises(StageError) as info:
        run_experiment(config)
    assert info.value.stage == "RF"
    assert list(info.value.partial.rows) == ["model 1", "model 2", "EnA"]
    meta = json.loads((tmp_path / "results.meta.json").read_text(encoding="utf-8"))
    assert meta["partial"] is True and meta["failed_stage"] == "RF"
    assert meta["completed_rows"] == ["model 1", "model 2", "EnA"]


# =============================================================================
# 命令行
# =============================================================================


class TestCli:
    def test_convert_csv_to_dgim(self, tmp_path):
        source = tmp_path / "digits.csv"
        source.write_text("1,0,0.5,1,0.25\n0,1,1,1,1\n", encoding="utf-8")
        output = tmp_path / "digits.dgim"
        main(["convert", "--from", "csv", "--to", "dgim", "--input", str(source), "--output", str(output),
              "--shape", "1", "2", "2", "--class-names", "zero, one"])
        loaded = load_dgim(str(output))
        assert loaded.class_names == ["zero", "one"]
        np.testing.assert_array_equal(loaded.labels, [1, 0])

    def test_table_prints_markdown(self, full_run, capsys):
        _, out_dir = full_run
        main(["table", "--results", str(out_dir / "results.csv")])
        printed = capsys.readouterr().out
        assert "| Model | S_train | S_val | T |" in printed
        # 标题来自 JSON 元数据旁注
        assert "### MNIST→USPS" in printed

    def test_paired_table(self, full_run, tmp_path):
        _, out_dir = full_run
        output = tmp_path / "paired.md"
        csv_path = str(out_dir / "results.csv")
        main(["table", "--results", csv_path, csv_path, "--output", str(output)])
        assert "MNIST→USPS S_val" in output.read_text(encoding="utf-8")

    def test_missing_config_exits_with_error(self, tmp_path):
        with pytest.raises(SystemExit) as info:
            main(["run", "--config", str(tmp_path / "missing.json")])
        assert info.value.code == 1

    def test_gradcheck_passes(self):
        main(["gradcheck", "--configs", "2", "--seed", "3"])


# =============================================================================
# 真实数据（需要设置 DG_DATA_DIR）
# =============================================================================


def desk_scale_config(data_root, out_dir, seed) -> ExperimentConfig:
    raw = deep_merge(load_config(), {
        "datasets": {"root": data_root},
        "source": {"id": "mnist", "limit": 8000},
        "target": {"id": "usps"},
        "num_models": 5,
        "seeds": {"global": seed, "models": []},
        "learners": ["base", "EnA", "EnM", "EnM2"],
        "training": {"epochs": 3},
        "output": {"out_dir": str(out_dir), "checkpoints": False},
        "single_context": True,
    })
    return ExperimentConfig.from_dict(raw)


@pytest.mark.slow
@pytest.mark.skipif(not os.environ.get("DG_DATA_DIR"), reason="需要 DG_DATA_DIR 指向已下载的数据集")
def test_desk_scale_mnist_to_usps(tmp_path):
    data_root = os.environ["DG_DATA_DIR"]
    passed = 0
    for seed in (0, 1, 2):
        results = run_experiment(desk_scale_config(data_root, tmp_path / f"seed{seed}", seed))
        bases = [scores for _, scores in results.base_rows()]
        target_mean = float(np.mean([t for _, _, t in bases]))
        ok = (
            all(s_val >= 0.90 for _, s_val, _ in bases)
            and results.rows["EnA"][2] >= target_mean - 0.005
            and results.rows["EnM"][2] >= target_mean - 0.01
            and results.rows["EnM2"][2] >= target_mean - 0.01
        )
        passed += int(ok)
    assert passed >= 2

    # 同一种子串行重跑，结果 CSV 逐字节一致
    run_experiment(desk_scale_config(data_root, tmp_path / "rerun", 0))
    assert (tmp_path / "rerun" / "results.csv").read_bytes() == (tmp_path / "seed0" / "results.csv").read_bytes()
