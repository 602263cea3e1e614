import json

import pytest

from utils.errors import FormatError, ShapeError
from utils.report_utils import (
    ResultsTable,
    base_row_name,
    compare_summary,
    emit_table,
    load_results_csv,
    render_csv,
    render_markdown,
    render_paired_markdown,
    write_metadata,
)
from utils.string_utils import format_accuracy

CIFAR_TO_STL = {
    "model 1": (0.987, 0.886, 0.706),
    "model 2": (0.978, 0.879, 0.675),
    "model 3": (0.978, 0.877, 0.686),
    "model 4": (0.976, 0.868, 0.684),
    "model 5": (0.969, 0.888, 0.696),
    "EnA": (0.99, 0.903, 0.724),
    "EnM": (0.99, 0.904, 0.727),
    "EnM2": (0.99, 0.903, 0.725),
    "HCNN": (0.971, 0.878, 0.683),
    "EnT": (0.958, 0.487, 0.366),
    "RF": (1.0, 0.498, 0.373),
    "SVM": (0.081, 0.077, 0.091),
    "LR": (0.464, 0.429, 0.305),
}


@pytest.fixture
def table():
    results = ResultsTable(metadata={"pairing": "CIFAR10→STL10"})
    # 乱序插入，输出顺序由行名决定
    for name in reversed(list(CIFAR_TO_STL)):
        results.add_row(name, *CIFAR_TO_STL[name])
    return results


def test_format_accuracy_rounds_to_three_places():
    assert format_accuracy(0.7239) == "0.724"
    assert format_accuracy(1.0) == "1.000"


def test_base_row_names_are_one_based():
    assert base_row_name(0) == "model 1"


class TestResultsTable:
    def test_rows_are_ordered_bases_then_fusions_then_classics(self, table):
        assert [name for name, _ in table.ordered_rows()] == list(CIFAR_TO_STL)
        assert len(table) == 13

    def test_model_ten_sorts_after_model_two(self):
        results = ResultsTable()
        for i in (10, 2, 1):
            results.add_row(f"model {i}", 0.5, 0.5, 0.5)
        assert [name for name, _ in results.ordered_rows()] == ["model 1", "model 2", "model 10"]

    def test_out_of_range_accuracy_rejected(self):
        with pytest.raises(ShapeError):
            ResultsTable().add_row("EnA", 1.2, 0.5, 0.5)

    def test_unknown_row_rejected(self):
        with pytest.raises(ShapeError):
            ResultsTable().add_row("Boosting", 0.5, 0.5, 0.5)


class TestRendering:
    def test_csv_bytes(self):
        results = ResultsTable()
        results.add_row("EnA", 0.99, 0.9031, 0.7239)
        results.add_row("model 1", 1.0, 0.5, 0.0)
        assert render_csv(results) == "row_name,s_train,s_val,t\nmodel 1,1.000,0.500,0.000\nEnA,0.990,0.903,0.724\n"

    def test_markdown_bolds_best_per_column_and_fusion_names(self, table):
        text = render_markdown(table)
        lines = text.splitlines()
        assert lines[0] == "### CIFAR10→STL10"
        assert "| Model | S_train | S_val | T |" in lines
        assert "| **EnM** | 0.990 | **0.904** | **0.727** |" in lines
        assert "| RF | **1.000** | 0.498 | 0.373 |" in lines
        assert "| model 1 | 0.987 | 0.886 | 0.706 |" in lines

    def test_paired_markdown_has_six_columns(self, table):
        other = ResultsTable(metadata={"pairing": "STL10→CIFAR10"})
        other.add_row("model 1", 0.721, 0.597, 0.460)
        other.add_row("EnA", 0.964, 0.681, 0.558)
        text = render_paired_markdown(table, other)
        header = text.splitlines()[0]
        assert header.count("|") == 8
        assert "STL10→CIFAR10 T" in header
        # 只在一侧出现的行用 - 占位
        assert any(line.startswith("| RF |") and line.rstrip().endswith("| - | - | - |") for line in text.splitlines())

    def test_paired_markdown_rejects_empty_side(self, table):
        with pytest.raises(ShapeError):
            render_paired_markdown(table, ResultsTable())


class TestEmit:
    def test_csv_round_trip(self, table, tmp_path):
        path = str(tmp_path / "out" / "results.csv")
        emit_table(table, "csv", path)
        loaded = load_results_csv(path)
        assert [name for name, _ in loaded.ordered_rows()] == list(CIFAR_TO_STL)
        assert loaded.rows["EnA"] == pytest.approx(CIFAR_TO_STL["EnA"])

    def test_markdown_file(self, table, tmp_path):
        path = tmp_path / "results.md"
        emit_table(table, "markdown", str(path))
        assert path.read_text(encoding="utf-8") == render_markdown(table)

    def test_empty_table_rejected(self, tmp_path):
        with pytest.raises(ShapeError):
            emit_table(ResultsTable(), "csv", str(tmp_path / "x.csv"))

    def test_unknown_format_rejected(self, table, tmp_path):
        with pytest.raises(FormatError):
            emit_table(table, "latex", str(tmp_path / "x.tex"))

    def test_bad_csv_header_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("name,a,b,c\n", encoding="utf-8")
        with pytest.raises(FormatError):
            load_results_csv(str(path))

    def test_unparseable_value_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("row_name,s_train,s_val,t\nEnA,x,0.5,0.5\n", encoding="utf-8")
        with pytest.raises(FormatError):
            load_results_csv(str(path))

    def test_metadata_sidecar(self, table, tmp_path):
        path = tmp_path / "results.meta.json"
        write_metadata(table, str(path), compare_summary(table))
        data = json.loads(path.read_text(encoding="utf-8"))
        assert data["pairing"] == "CIFAR10→STL10"
        assert "EnA" in data["summary"]["ensembles"]


class TestCompareSummary:
    def test_table_one_target_column(self, table):
        summary = compare_summary(table)
        assert summary["base_mean"]["t"] == pytest.approx(0.6894)
        assert summary["base_best"]["t"] == pytest.approx(0.706)
        assert summary["ensembles"]["EnA"]["t"]["vs_mean"] == pytest.approx(0.0346)
        assert summary["ensembles"]["EnA"]["t"]["vs_best"] == pytest.approx(0.018)
        assert set(summary["ensembles"]) == {"EnA", "EnM", "EnM2", "EnT"}

    def test_equal_bases_give_zero_delta(self):
        results = ResultsTable()
        for i in range(3):
            results.add_row(base_row_name(i), 0.8, 0.7, 0.6)
        results.add_row("EnA", 0.8, 0.7, 0.6)
        deltas = compare_summary(results)["ensembles"]["EnA"]
        assert all(deltas[c]["vs_mean"] == pytest.approx(0.0) for c in ("s_train", "s_val", "t"))

    def test_matches_independent_mean(self, table):
        summary = compare_summary(table)
        for i, column in enumerate(("s_train", "s_val", "t")):
            values = [CIFAR_TO_STL[f"model {k}"][i] for k in range(1, 6)]
            expected = CIFAR_TO_STL["EnM2"][i] - sum(values) / len(values)
            assert summary["ensembles"]["EnM2"][column]["vs_mean"] == pytest.approx(expected)

    def test_without_base_rows_raises(self):
        results = ResultsTable()
        results.add_row("EnA", 0.5, 0.5, 0.5)
        with pytest.raises(ShapeError):
            compare_summary(results)
