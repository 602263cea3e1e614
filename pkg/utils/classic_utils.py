'''
Description  : 原始像素上的传统学习器：随机森林（Gini）、一对多线性 SVM、多项逻辑回归
'''

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed

from utils.checkpoint_utils import read_dgck, write_dgck
from utils.errors import ConfigError, FormatError, NumericError, ShapeError, TrainingError

logger = logging.getLogger(__name__)

LINEAR_KINDS = ("svm", "logistic")


@dataclass
class DecisionTree:
    """
    数组形式的二叉决策树，节点 0 为根；叶子的 feature 为 -1

    Args:
        feature: 每个节点的划分特征
        threshold: 划分阈值（x[feature] <= threshold 走左子树）
        left: 左子节点索引
        right: 右子节点索引
        value: 每个节点的类别分布（节点数×K，行和为 1）
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def n_nodes(self) -> int:
        return int(self.feature.shape[0])

    @property
    def depth(self) -> int:
        depths = np.zeros(self.n_nodes, dtype=np.int64)
        for node in range(self.n_nodes):
            if self.feature[node] >= 0:
                depths[self.left[node]] = depths[self.right[node]] = depths[node] + 1
        return int(depths.max())


@dataclass
class RandomForest:
    trees: List[DecisionTree]
    num_classes: int
    max_depth: Optional[int] = None
    features_per_split: int = 1

    def __post_init__(self):
        if not self.trees:
            raise ShapeError("随机森林至少需要一棵树")

    @property
    def n_trees(self) -> int:
        return len(self.trees)


@dataclass
class LinearModel:
    """线性分类器：scores = X · weightsᵀ + bias"""

    weights: np.ndarray
    bias: np.ndarray
    kind: str = "svm"
    history: List[float] = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in LINEAR_KINDS:
            raise ConfigError(f"未知的线性模型类型: {self.kind}")
        self.weights = np.asarray(self.weights, dtype=np.float32)
        self.bias = np.asarray(self.bias, dtype=np.float32)
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise ShapeError(f"权重 {self.weights.shape} 与偏置 {self.bias.shape} 不匹配")
        if not (np.isfinite(self.weights).all() and np.isfinite(self.bias).all()):
            raise NumericError(f"{self.kind} 权重含有 NaN/Inf")


def _check_xy(X: np.ndarray, y: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=np.float32)
    y = np.asarray(y, dtype=np.int64).reshape(-1)
    if X.ndim != 2:
        raise ShapeError(f"特征矩阵必须为 N×F, 实际 {X.shape}")
    if X.shape[0] == 0:
        raise TrainingError("训练数据为空")
    if X.shape[0] != y.shape[0]:
        raise ShapeError(f"样本数 {X.shape[0]} 与标签数 {y.shape[0]} 不一致")
    return X, y


# region 决策树 / 随机森林


def _best_split(
    Xn: np.ndarray, yn: np.ndarray, num_classes: int, features: np.ndarray
) -> Optional[Tuple[int, float]]:
    """
    在给定候选特征上搜索 Gini 加权不纯度最小的划分，
    阈值取排序后相邻不同取值的中点；并列时按候选顺序、再按位置取第一个
    """
    n = Xn.shape[0]
    if n < 2 or features.size == 0:
        return None
    values = Xn[:, features]
    order = np.argsort(values, axis=0, kind="stable")
    sorted_values = np.take_along_axis(values, order, axis=0)
    onehot = np.eye(num_classes, dtype=np.float64)[yn]
    cumulative = np.cumsum(onehot[order], axis=0)

    left = cumulative[:-1]
    right = cumulative[-1] - left
    n_left = np.arange(1, n, dtype=np.float64)[:, None]
    n_right = n - n_left
    gini_left = 1.0 - np.sum((left / n_left[..., None]) ** 2, axis=-1)
    gini_right = 1.0 - np.sum((right / n_right[..., None]) ** 2, axis=-1)
    weighted = (n_left * gini_left + n_right * gini_right) / n
    weighted[sorted_values[1:] <= sorted_values[:-1]] = np.inf

    by_feature = weighted.T
    flat = int(np.argmin(by_feature))
    if not np.isfinite(by_feature.flat[flat]):
        return None
    f_pos, position = divmod(flat, n - 1)
    lo = float(sorted_values[position, f_pos])
    hi = float(sorted_values[position + 1, f_pos])
    threshold = np.float32((lo + hi) / 2.0)
    if threshold >= np.float32(hi):
        threshold = np.float32(lo)
    return int(features[f_pos]), float(threshold)


def fit_decision_tree(
    X: np.ndarray,
    y: np.ndarray,
    num_classes: int,
    max_depth: Optional[int],
    features_per_split: int,
    seed: int,
) -> DecisionTree:
    """
    拟合一棵 CART 分类树

    每个节点的候选特征由 (seed, 路径编号) 派生的 RNG 抽取（根为 1，子节点为 2p / 2p+1），
    因此同一种子下更深的树是更浅的树的细化。候选特征中没有可用划分时，继续尝试其余特征。

    Args:
        X: N×F 特征
        y: 标签
        num_classes: 类别数 K
        max_depth: 最大深度（None 表示不限）
        features_per_split: 每个节点的候选特征数
        seed: 树种子

    Returns:
        决策树
    """
    X, y = _check_xy(X, y)
    n_features = X.shape[1]
    k_features = min(max(int(features_per_split), 1), n_features)

    feature: List[int] = []
    threshold: List[float] = []
    left: List[int] = []
    right: List[int] = []
    value: List[np.ndarray] = []

    def new_node(indices: np.ndarray) -> int:
        counts = np.bincount(y[indices], minlength=num_classes).astype(np.float64)
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(counts / counts.sum())
        return len(feature) - 1

    root = new_node(np.arange(X.shape[0]))
    stack = [(root, np.arange(X.shape[0]), 0, 1)]
    while stack:
        node, indices, depth, path_id = stack.pop()
        if value[node].max() >= 1.0 or (max_depth is not None and depth >= max_depth):
            continue
        rng = np.random.default_rng([int(seed), path_id])
        permutation = rng.permutation(n_features)
        Xn, yn = X[indices], y[indices]
        split = _best_split(Xn, yn, num_classes, permutation[:k_features])
        if split is None:
            split = _best_split(Xn, yn, num_classes, permutation[k_features:])
        if split is None:
            continue

        f, thr = split
        goes_left = Xn[:, f] <= np.float32(thr)
        left_node = new_node(indices[goes_left])
        right_node = new_node(indices[~goes_left])
        feature[node], threshold[node] = f, thr
        left[node], right[node] = left_node, right_node
        stack.append((right_node, indices[~goes_left], depth + 1, 2 * path_id + 1))
        stack.append((left_node, indices[goes_left], depth + 1, 2 * path_id))

    return DecisionTree(
        feature=np.asarray(feature, dtype=np.int64),
        threshold=np.asarray(threshold, dtype=np.float32),
        left=np.asarray(left, dtype=np.int64),
        right=np.asarray(right, dtype=np.int64),
        value=np.asarray(value, dtype=np.float32),
    )


def tree_predict_proba(tree: DecisionTree, X: np.ndarray) -> np.ndarray:
    """逐层下推所有样本，返回所到叶子的类别分布"""
    X = np.asarray(X, dtype=np.float32)
    nodes = np.zeros(X.shape[0], dtype=np.int64)
    rows = np.arange(X.shape[0])
    active = tree.feature[nodes] >= 0
    while active.any():
        current = nodes[active]
        go_left = X[rows[active], tree.feature[current]] <= tree.threshold[current]
        nodes[active] = np.where(go_left, tree.left[current], tree.right[current])
        active = tree.feature[nodes] >= 0
    return tree.value[nodes]


def _fit_bootstrap_tree(
    X: np.ndarray, y: np.ndarray, num_classes: int, max_depth: Optional[int],
    features_per_split: int, seed_seq: np.random.SeedSequence,
) -> DecisionTree:
    rng = np.random.default_rng(seed_seq)
    sample = rng.integers(0, X.shape[0], size=X.shape[0])
    tree_seed = int(seed_seq.generate_state(1)[0])
    return fit_decision_tree(X[sample], y[sample], num_classes, max_depth, features_per_split, tree_seed)


def train_random_forest(
    X: np.ndarray,
    y: np.ndarray,
    n_trees: int,
    max_depth: Optional[int],
    seed: int,
    num_classes: Optional[int] = None,
    n_jobs: int = 1,
    features_per_split: Optional[int] = None,
) -> RandomForest:
    """
    训练随机森林：每棵树在自助采样上拟合，每个节点抽取 √F 个候选特征

    Args:
        X: N×F 原始像素
        y: 标签
        n_trees: 树的数量
        max_depth: 最大深度（None 不限）
        seed: 随机种子（每棵树由 SeedSequence 派生独立种子）
        num_classes: 类别数（默认 max(y)+1）
        n_jobs: joblib 并行数

    Returns:
        随机森林
    """
    X, y = _check_xy(X, y)
    if n_trees < 1:
        raise ConfigError(f"n_trees 必须 ≥ 1, 实际 {n_trees}")
    num_classes = int(num_classes or int(y.max()) + 1)
    k_features = int(features_per_split or max(1, int(math.sqrt(X.shape[1]))))
    children = np.random.SeedSequence(seed).spawn(n_trees)

    trees = Parallel(n_jobs=n_jobs)(
        delayed(_fit_bootstrap_tree)(X, y, num_classes, max_depth, k_features, child)
        for child in children
    )
    logger.info(f"🌲 随机森林训练完成: {n_trees} 棵树, max_depth={max_depth}, 每次划分 {k_features} 个候选特征")
    return RandomForest(trees=list(trees), num_classes=num_classes, max_depth=max_depth,
                        features_per_split=k_features)


def rf_predict_proba(forest: RandomForest, X: np.ndarray) -> np.ndarray:
    """各树叶子分布的均值"""
    total = np.zeros((np.asarray(X).shape[0], forest.num_classes), dtype=np.float64)
    for tree in forest.trees:
        total += tree_predict_proba(tree, X)
    return (total / forest.n_trees).astype(np.float32)


def truncate_forest(forest: RandomForest, n_trees: int) -> RandomForest:
    """取前 n_trees 棵树（每棵树种子独立，前缀仍是合法森林）"""
    return RandomForest(forest.trees[:n_trees], forest.num_classes, forest.max_depth, forest.features_per_split)


def tune_forest_trees(
    forest: RandomForest, X_val: np.ndarray, y_val: np.ndarray, candidates: Sequence[int]
) -> int:
    """
    在 S_val 上选择树的数量：对每个候选前缀计算验证准确率，并列取较小者

    训练好的整棵森林（forest.n_trees）总是参与比较，超出范围的候选会被忽略并记录警告

    Returns:
        最佳树数量
    """
    requested = {int(c) for c in candidates}
    dropped = sorted(c for c in requested if not 1 <= c <= forest.n_trees)
    if dropped:
        logger.warning(f"⚠️ 候选树数量 {dropped} 不在 [1, {forest.n_trees}] 内，已忽略")
    counts = sorted((requested - set(dropped)) | {forest.n_trees})
    y_val = np.asarray(y_val, dtype=np.int64)

    total = np.zeros((len(y_val), forest.num_classes), dtype=np.float64)
    best_count, best_acc = counts[0], -1.0
    for i, tree in enumerate(forest.trees[: counts[-1]], start=1):
        total += tree_predict_proba(tree, X_val)
        if i in counts:
            acc = float(np.mean(np.argmax(total, axis=1) == y_val))
            logger.info(f"🌲 {i} 棵树: val_acc={acc:.4f}")
            if acc > best_acc:
                best_count, best_acc = i, acc
    return best_count


# endregion

# region 线性模型


def _scores(W: np.ndarray, b: np.ndarray, X: np.ndarray) -> np.ndarray:
    return np.asarray(X, dtype=np.float64) @ np.asarray(W, dtype=np.float64).T + np.asarray(b, dtype=np.float64)


def hinge_loss_and_grad(
    W: np.ndarray, b: np.ndarray, X: np.ndarray, y: np.ndarray, reg: float
) -> Tuple[float, np.ndarray, np.ndarray]:
    """
    一对多 hinge 损失：mean_n Σ_k max(0, 1 − t_nk·s_nk) + reg/2·‖W‖²，t 为 ±1

    Returns:
        (损失, dW, db)，在非折点处为精确梯度
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    n = X.shape[0]
    scores = _scores(W, b, X)
    targets = -np.ones_like(scores)
    targets[np.arange(n), y] = 1.0
    margins = 1.0 - targets * scores
    active = margins > 0
    W64 = np.asarray(W, dtype=np.float64)
    loss = float(np.sum(margins[active]) / n + 0.5 * reg * np.sum(W64 * W64))
    d_scores = -targets * active / n
    return loss, d_scores.T @ X + reg * W64, d_scores.sum(axis=0)


def softmax_regression_loss_and_grad(
    W: np.ndarray, b: np.ndarray, X: np.ndarray, y: np.ndarray, reg: float
) -> Tuple[float, np.ndarray, np.ndarray]:
    """多项逻辑回归的交叉熵 + L2 正则及其梯度"""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    n = X.shape[0]
    scores = _scores(W, b, X)
    scores -= scores.max(axis=1, keepdims=True)
    probs = np.exp(scores)
    probs /= probs.sum(axis=1, keepdims=True)
    W64 = np.asarray(W, dtype=np.float64)
    loss = float(-np.mean(np.log(np.maximum(probs[np.arange(n), y], 1e-12))) + 0.5 * reg * np.sum(W64 * W64))
    d_scores = probs
    d_scores[np.arange(n), y] -= 1.0
    d_scores /= n
    return loss, d_scores.T @ X + reg * W64, d_scores.sum(axis=0)


LOSSES = {"svm": hinge_loss_and_grad, "logistic": softmax_regression_loss_and_grad}


def _train_linear(
    kind: str, X: np.ndarray, y: np.ndarray, epochs: int, lr: float, reg: float, seed: int,
    batch_size: int, num_classes: Optional[int],
) -> LinearModel:
    X, y = _check_xy(X, y)
    num_classes = int(num_classes or int(y.max()) + 1)
    loss_fn = LOSSES[kind]
    rng = np.random.default_rng(seed)
    W = np.zeros((num_classes, X.shape[1]), dtype=np.float64)
    b = np.zeros(num_classes, dtype=np.float64)
    history: List[float] = []

    for epoch in range(epochs):
        order = rng.permutation(X.shape[0])
        epoch_loss = 0.0
        for start in range(0, X.shape[0], batch_size):
            idx = order[start : start + batch_size]
            loss, dW, db = loss_fn(W, b, X[idx], y[idx], reg)
            if not np.isfinite(loss):
                raise TrainingError(f"[{kind}] 损失为 NaN/Inf: epoch {epoch + 1}, lr={lr}")
            W -= lr * dW
            b -= lr * db
            epoch_loss += loss * len(idx)
        history.append(epoch_loss / X.shape[0])
        logger.info(f"[{kind}] epoch {epoch + 1}/{epochs} loss={history[-1]:.4f}")

    return LinearModel(weights=W, bias=b, kind=kind, history=history)


def train_linear_svm(
    X: np.ndarray, y: np.ndarray, epochs: int, lr: float, reg: float, seed: int,
    batch_size: int = 64, num_classes: Optional[int] = None,
) -> LinearModel:
    """一对多 L2 正则 hinge 损失，零初始化，带种子的小批量 SGD"""
    return _train_linear("svm", X, y, epochs, lr, reg, seed, batch_size, num_classes)


def train_logistic_regression(
    X: np.ndarray, y: np.ndarray, epochs: int, lr: float, reg: float, seed: int,
    batch_size: int = 64, num_classes: Optional[int] = None,
) -> LinearModel:
    """多项 softmax 回归，训练方式同线性 SVM"""
    return _train_linear("logistic", X, y, epochs, lr, reg, seed, batch_size, num_classes)


def linear_predict_proba(model: LinearModel, X: np.ndarray) -> np.ndarray:
    """对决策分数做 softmax（SVM 的间隔也以此校准为伪概率）"""
    X = np.asarray(X, dtype=np.float32)
    if X.ndim != 2 or X.shape[1] != model.weights.shape[1]:
        raise ShapeError(f"特征维度 {X.shape} 与模型 {model.weights.shape} 不一致")
    scores = _scores(model.weights, model.bias, X)
    scores -= scores.max(axis=1, keepdims=True)
    probs = np.exp(scores)
    return (probs / probs.sum(axis=1, keepdims=True)).astype(np.float32)


# endregion

# region 检查点

_TREE_FIELDS = ("feature", "threshold", "left", "right", "value")


def save_forest(forest: RandomForest, path: str) -> None:
    header = {
        "kind": "forest",
        "num_classes": forest.num_classes,
        "n_trees": forest.n_trees,
        "max_depth": forest.max_depth,
        "features_per_split": forest.features_per_split,
    }
    tensors: Dict[str, np.ndarray] = {}
    for i, tree in enumerate(forest.trees):
        for name in _TREE_FIELDS:
            tensors[f"tree{i}.{name}"] = getattr(tree, name).astype(np.float32)
    write_dgck(path, header, tensors)


def load_forest(path: str) -> RandomForest:
    header, tensors = read_dgck(path)
    if header.get("kind") != "forest":
        raise FormatError(f"检查点类型不是 forest: {header.get('kind')}")
    trees = []
    for i in range(int(header["n_trees"])):
        try:
            parts: Dict[str, Any] = {name: tensors[f"tree{i}.{name}"] for name in _TREE_FIELDS}
        except KeyError as e:
            raise FormatError(f"森林检查点缺少张量: {e}") from e
        for name in ("feature", "left", "right"):
            parts[name] = parts[name].astype(np.int64)
        trees.append(DecisionTree(**parts))
    return RandomForest(trees, int(header["num_classes"]), header.get("max_depth"),
                        int(header["features_per_split"]))


def save_linear(model: LinearModel, path: str) -> None:
    write_dgck(path, {"kind": "linear", "model_kind": model.kind},
               {"weights": model.weights, "bias": model.bias})


def load_linear(path: str) -> LinearModel:
    header, tensors = read_dgck(path)
    if header.get("kind") != "linear" or set(tensors) != {"weights", "bias"}:
        raise FormatError(f"不是线性模型检查点: {path}")
    return LinearModel(tensors["weights"], tensors["bias"], header["model_kind"])


# endregion
