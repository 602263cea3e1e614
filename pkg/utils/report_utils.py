'''
Description  : 结果表（行：model 1..N、EnA、EnM、EnM2、HCNN、EnT、RF、SVM、LR；列：S_train、S_val、T）的输出与汇总
'''

import csv
import io
import logging
import re
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

from utils.errors import FormatError, ShapeError
from utils.files_utils import ensure_parent_dir, write_json
from utils.patterns import BASE_ROW_PATTERN
from utils.string_utils import format_accuracy

logger = logging.getLogger(__name__)

COLUMNS = ("s_train", "s_val", "t")
COLUMN_TITLES = ("S_train", "S_val", "T")
FUSION_ROWS = ("EnA", "EnM", "EnM2", "HCNN", "EnT")
CLASSIC_ROWS = ("RF", "SVM", "LR")
ENSEMBLE_ROWS = ("EnA", "EnM", "EnM2", "EnT")
TABLE_FORMATS = ("csv", "markdown")

Scores = Tuple[float, float, float]


def base_row_name(index: int) -> str:
    return f"model {index + 1}"


def _row_rank(name: str) -> Tuple[int, int]:
    match = re.fullmatch(BASE_ROW_PATTERN, name)
    if match:
        return 0, int(match.group(1))
    fixed = FUSION_ROWS + CLASSIC_ROWS
    if name in fixed:
        return 1, fixed.index(name)
    raise ShapeError(f"未知的结果行: {name}")


@dataclass
class ResultsTable:
    """
    各学习器在 S_train / S_val / T 上的准确率

    Args:
        rows: 行名 → (s_train, s_val, t)
        metadata: 配置哈希、种子、耗时、参数量等
    """

    rows: Dict[str, Scores] = field(default_factory=dict)
    metadata: Dict[str, Any] = field(default_factory=dict)

    def add_row(self, name: str, s_train: float, s_val: float, t: float) -> None:
        _row_rank(name)
        scores = (float(s_train), float(s_val), float(t))
        if not all(0.0 <= v <= 1.0 for v in scores):
            raise ShapeError(f"{name}: 准确率必须在 [0,1] 内, 实际 {scores}")
        self.rows[name] = scores

    def ordered_rows(self) -> List[Tuple[str, Scores]]:
        return sorted(self.rows.items(), key=lambda item: _row_rank(item[0]))

    def base_rows(self) -> List[Tuple[str, Scores]]:
        return [(name, s) for name, s in self.ordered_rows() if _row_rank(name)[0] == 0]

    @property
    def title(self) -> str:
        return str(self.metadata.get("pairing", ""))

    def __len__(self) -> int:
        return len(self.rows)


# region 输出


def render_csv(results: ResultsTable) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(("row_name",) + COLUMNS)
    for name, scores in results.ordered_rows():
        writer.writerow([name] + [format_accuracy(v) for v in scores])
    return buffer.getvalue()


def _bold_best(cells: List[List[Optional[float]]]) -> List[List[str]]:
    """按列加粗最大值（按三位小数比较，并列全部加粗）"""
    formatted = [[format_accuracy(v) if v is not None else "-" for v in row] for row in cells]
    for col in range(len(cells[0]) if cells else 0):
        values = [row[col] for row in cells if row[col] is not None]
        if not values:
            continue
        best = format_accuracy(max(values))
        for row in formatted:
            if row[col] == best:
                row[col] = f"**{best}**"
    return formatted


def _row_label(name: str) -> str:
    return f"**{name}**" if name in FUSION_ROWS else name


def render_markdown(results: ResultsTable) -> str:
    """与论文表格一致的 markdown：每列最优值与集成行名加粗"""
    ordered = results.ordered_rows()
    body = _bold_best([list(scores) for _, scores in ordered])
    lines = []
    if results.title:
        lines.append(f"### {results.title}")
        lines.append("")
    lines.append("| Model | " + " | ".join(COLUMN_TITLES) + " |")
    lines.append("|---|" + "---|" * len(COLUMN_TITLES))
    for (name, _), cells in zip(ordered, body):
        lines.append(f"| {_row_label(name)} | " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def render_paired_markdown(left: ResultsTable, right: ResultsTable) -> str:
    """
    左右并排展示一个组合的两个方向（如 CIFAR10→STL10 | STL10→CIFAR10）

    Args:
        left: 左侧结果表
        right: 右侧结果表

    Returns:
        markdown 文本
    """
    if not len(left) or not len(right):
        raise ShapeError("并排表格的两侧都不能为空")
    names = sorted(set(left.rows) | set(right.rows), key=_row_rank)
    cells = [list(left.rows.get(n, (None,) * 3)) + list(right.rows.get(n, (None,) * 3)) for n in names]
    body = _bold_best(cells)

    left_title, right_title = left.title or "left", right.title or "right"
    header = [f"{left_title} {c}" for c in COLUMN_TITLES] + [f"{right_title} {c}" for c in COLUMN_TITLES]
    lines = [
        "| Model | " + " | ".join(header) + " |",
        "|---|" + "---|" * len(header),
    ]
    for name, row in zip(names, body):
        lines.append(f"| {_row_label(name)} | " + " | ".join(row) + " |")
    return "\n".join(lines) + "\n"


def emit_table(results: ResultsTable, format: str, path: str) -> str:
    """
    写出结果表

    Args:
        results: 结果表
        format: csv | markdown
        path: 输出路径

    Returns:
        写出的路径
    """
    if not len(results):
        raise ShapeError("结果表为空，拒绝写出")
    if format not in TABLE_FORMATS:
        raise FormatError(f"不支持的表格格式: {format}, 可选 {TABLE_FORMATS}")
    content = render_csv(results) if format == "csv" else render_markdown(results)
    ensure_parent_dir(path)
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(content)
    logger.info(f"📁 结果表已写出: {path}")
    return path


def load_results_csv(path: str, metadata: Optional[Dict[str, Any]] = None) -> ResultsTable:
    """读取 emit_table 写出的 CSV"""
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or tuple(header) != ("row_name",) + COLUMNS:
            raise FormatError(f"结果 CSV 表头错误: {header}")
        table = ResultsTable(metadata=dict(metadata or {}))
        for line_no, row in enumerate(reader, start=2):
            if len(row) != 4:
                raise FormatError(f"结果 CSV 第 {line_no} 行列数错误: {row}")
            try:
                table.add_row(row[0], *(float(v) for v in row[1:]))
            except ValueError as e:
                raise FormatError(f"结果 CSV 第 {line_no} 行无法解析: {e}") from e
    return table


def write_metadata(results: ResultsTable, path: str, summary: Optional[Dict[str, Any]] = None) -> str:
    """写出 JSON 元数据旁注（含汇总）"""
    data = dict(results.metadata)
    if summary is not None:
        data["summary"] = summary
    write_json(path, data)
    return path


# endregion


def compare_summary(results: ResultsTable) -> Dict[str, Any]:
    """
    每个集成相对基础模型均值与最佳基础模型的差值（逐列）

    Returns:
        {"base_mean": {...}, "base_best": {...}, "ensembles": {name: {col: {"vs_mean", "vs_best"}}}}
    """
    bases = [scores for _, scores in results.base_rows()]
    if not bases:
        raise ShapeError("结果表中没有基础模型行，无法汇总")
    mean = {c: sum(s[i] for s in bases) / len(bases) for i, c in enumerate(COLUMNS)}
    best = {c: max(s[i] for s in bases) for i, c in enumerate(COLUMNS)}

    ensembles: Dict[str, Any] = {}
    for name in ENSEMBLE_ROWS:
        if name not in results.rows:
            continue
        scores = results.rows[name]
        ensembles[name] = {
            c: {"vs_mean": scores[i] - mean[c], "vs_best": scores[i] - best[c]}
            for i, c in enumerate(COLUMNS)
        }
    return {"base_mean": mean, "base_best": best, "ensembles": ensembles}
