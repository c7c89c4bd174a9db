"""Classical ML baselines over bag-of-codes features, written from scratch.

Three model families: CART decision tree on Gini impurity, L2-regularized
logistic regression trained by full-batch gradient descent, and a bootstrap
forest of CART trees with per-tree feature subsets.  Each trains in a
fully-supervised mode or a few-shot mode that mirrors the prompt-exemplar
protocol (three examples per class).

Determinism is load-bearing: ties in tree split gain break toward the
lowest column index and lowest threshold (compared in exact rational
arithmetic), gradient descent starts from zeros, and all sampling is
seed-derived.
"""

from __future__ import annotations

import random
from collections.abc import Sequence
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .core import POSITIVE, CohortExample, MedicalCode
from .errors import TrainingError

TREE = "tree"
LOGREG = "logreg"
FOREST = "forest"
MODEL_KINDS = (TREE, LOGREG, FOREST)


# ---------------------------------------------------------------------------
# Featurization


@dataclass(frozen=True)
class FeatureMatrix:
    """Binary code-presence matrix with aligned labels.

    Rows follow the input example order; columns follow the given code
    universe order.  Codes seen in visits but missing from the universe are
    dropped and counted.
    """

    X: np.ndarray
    y: np.ndarray
    column_index: dict[MedicalCode, int]
    example_ids: tuple[str, ...]
    unknown_code_count: int = 0

    def __post_init__(self) -> None:
        if self.X.ndim != 2:
            raise TrainingError(f"feature matrix must be 2-D, got shape {self.X.shape}")
        if self.X.shape[0] != self.y.shape[0]:
            raise TrainingError(
                f"row/label mismatch: {self.X.shape[0]} rows, {self.y.shape[0]} labels"
            )
        if len(self.example_ids) != self.X.shape[0]:
            raise TrainingError("example_ids must align with rows")


def code_universe_from_examples(
    examples: Sequence[CohortExample],
) -> list[MedicalCode]:
    """All distinct codes across the examples' input visits, sorted."""
    codes = set()
    for ex in examples:
        codes.update(ex.input_visit.codes)
    return sorted(codes, key=lambda c: c.sort_key)


def featurize(
    examples: Sequence[CohortExample], code_universe: Sequence[MedicalCode]
) -> FeatureMatrix:
    """Encode each example's input visit as binary code presence."""
    if not code_universe:
        raise TrainingError("code universe must be nonempty")
    column_index: dict[MedicalCode, int] = {}
    for code in code_universe:
        if code in column_index:
            raise TrainingError(f"duplicate code in universe: {code}")
        column_index[code] = len(column_index)

    n, d = len(examples), len(column_index)
    X = np.zeros((n, d), dtype=np.float64)
    y = np.zeros(n, dtype=np.int8)
    unknown = 0
    for i, ex in enumerate(examples):
        for code in ex.input_visit.codes:
            j = column_index.get(code)
            if j is None:
                unknown += 1
            else:
                X[i, j] = 1.0
        y[i] = 1 if ex.label == POSITIVE else 0
    return FeatureMatrix(
        X=X,
        y=y,
        column_index=column_index,
        example_ids=tuple(ex.example_id for ex in examples),
        unknown_code_count=unknown,
    )


# ---------------------------------------------------------------------------
# Decision tree (CART, Gini)


@dataclass(frozen=True)
class TreeHyper:
    max_depth: int = 6
    min_leaf: int = 1
    seed: int = 0

    def __post_init__(self) -> None:
        if self.max_depth < 0:
            raise TrainingError(f"max_depth must be >= 0, got {self.max_depth}")
        if self.min_leaf < 1:
            raise TrainingError(f"min_leaf must be >= 1, got {self.min_leaf}")


@dataclass
class TreeNode:
    """One CART node; leaves keep class counts, internals keep the split."""

    n_pos: int
    n_total: int
    feature: int = -1
    threshold: float = 0.0
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None

    @property
    def is_leaf(self) -> bool:
        return self.left is None

    @property
    def p_positive(self) -> float:
        return self.n_pos / self.n_total if self.n_total else 0.5

    def depth(self) -> int:
        if self.is_leaf:
            return 0
        assert self.left is not None and self.right is not None
        return 1 + max(self.left.depth(), self.right.depth())


def gini_fraction(n_pos: int, n_total: int) -> Fraction:
    """Exact Gini impurity of a binary node."""
    if n_total == 0:
        return Fraction(0)
    p = Fraction(n_pos, n_total)
    q = 1 - p
    return 1 - p * p - q * q


def split_gain(
    parent_pos: int,
    parent_n: int,
    left_pos: int,
    left_n: int,
) -> Fraction:
    """Exact Gini gain of splitting (parent_pos/parent_n) into left/right."""
    right_pos = parent_pos - left_pos
    right_n = parent_n - left_n
    weighted = Fraction(left_n, parent_n) * gini_fraction(left_pos, left_n) + Fraction(
        right_n, parent_n
    ) * gini_fraction(right_pos, right_n)
    return gini_fraction(parent_pos, parent_n) - weighted


def _candidate_thresholds(column: np.ndarray) -> np.ndarray:
    values = np.unique(column)
    if values.size < 2:
        return np.empty(0)
    return (values[:-1] + values[1:]) / 2.0


def _grow_tree(X: np.ndarray, y: np.ndarray, depth: int, hyper: TreeHyper) -> TreeNode:
    n = y.shape[0]
    n_pos = int(y.sum())
    node = TreeNode(n_pos=n_pos, n_total=n)
    if depth >= hyper.max_depth or n_pos in (0, n) or n < 2 * hyper.min_leaf:
        return node

    # Sentinel below any real gain: impure nodes split even when the best
    # gain is zero, so parity-shaped targets (XOR) are reachable within the
    # depth budget instead of stalling at the root.
    best_gain = Fraction(-1)
    best: tuple[int, float, np.ndarray] | None = None
    for col in range(X.shape[1]):
        column = X[:, col]
        for threshold in _candidate_thresholds(column):
            mask = column <= threshold
            left_n = int(mask.sum())
            if left_n < hyper.min_leaf or n - left_n < hyper.min_leaf:
                continue
            left_pos = int(y[mask].sum())
            gain = split_gain(n_pos, n, left_pos, left_n)
            # Strict inequality keeps the first candidate on ties, i.e. the
            # lowest (column, threshold) pair in iteration order.
            if gain > best_gain:
                best_gain = gain
                best = (col, float(threshold), mask)
    if best is None:
        return node

    col, threshold, mask = best
    node.feature = col
    node.threshold = threshold
    node.left = _grow_tree(X[mask], y[mask], depth + 1, hyper)
    node.right = _grow_tree(X[~mask], y[~mask], depth + 1, hyper)
    return node


def _walk(node: TreeNode, row: np.ndarray) -> TreeNode:
    while not node.is_leaf:
        assert node.left is not None and node.right is not None
        node = node.left if row[node.feature] <= node.threshold else node.right
    return node


@dataclass
class TreeModel:
    root: TreeNode
    meta: dict = field(default_factory=dict)
    kind: str = TREE

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return np.array([_walk(self.root, row).p_positive for row in np.asarray(X)])

    def depth(self) -> int:
        return self.root.depth()


def train_tree(X: np.ndarray, y: np.ndarray, hyper: TreeHyper | None = None) -> TreeModel:
    """Greedy binary CART on Gini impurity.

    Single-class input is legal and yields a depth-0 tree predicting that
    class.
    """
    hyper = hyper or TreeHyper()
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y).astype(np.int8)
    if X.shape[0] == 0:
        raise TrainingError("cannot train a tree on zero rows")
    root = _grow_tree(X, y, 0, hyper)
    meta = {"hyper": {"max_depth": hyper.max_depth, "min_leaf": hyper.min_leaf, "seed": hyper.seed}}
    return TreeModel(root=root, meta=meta)


# ---------------------------------------------------------------------------
# Logistic regression (full-batch gradient descent)


@dataclass(frozen=True)
class LogRegHyper:
    l2: float = 0.01
    learning_rate: float = 0.5
    epochs: int = 400
    seed: int = 0

    def __post_init__(self) -> None:
        if self.l2 < 0:
            raise TrainingError(f"l2 must be >= 0, got {self.l2}")
        if self.learning_rate <= 0:
            raise TrainingError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.epochs < 1:
            raise TrainingError(f"epochs must be >= 1, got {self.epochs}")


def sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    expz = np.exp(z[~pos])
    out[~pos] = expz / (1.0 + expz)
    return out


def logreg_loss_and_grad(
    w: np.ndarray, b: float, X: np.ndarray, y: np.ndarray, l2: float
) -> tuple[float, np.ndarray, float]:
    """Mean regularized negative log-likelihood and its analytic gradient.

    The bias is not regularized.  Exposed separately from training so the
    gradient can be checked against finite differences.
    """
    z = X @ w + b
    # softplus(z) - y*z is the per-row NLL, stable for large |z|.
    nll = float(np.mean(np.logaddexp(0.0, z) - y * z))
    loss = nll + 0.5 * l2 * float(w @ w)
    residual = sigmoid(z) - y
    grad_w = X.T @ residual / X.shape[0] + l2 * w
    grad_b = float(np.mean(residual))
    return loss, grad_w, grad_b


@dataclass
class LogRegModel:
    weights: np.ndarray
    bias: float
    meta: dict = field(default_factory=dict)
    kind: str = LOGREG

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return sigmoid(np.asarray(X, dtype=np.float64) @ self.weights + self.bias)


def train_logreg(
    X: np.ndarray, y: np.ndarray, hyper: LogRegHyper | None = None
) -> LogRegModel:
    """Full-batch gradient descent from zero-initialized parameters."""
    hyper = hyper or LogRegHyper()
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.shape[0] == 0:
        raise TrainingError("cannot train logistic regression on zero rows")
    classes = np.unique(y)
    if classes.size < 2:
        raise TrainingError("logistic regression needs both classes present")
    w = np.zeros(X.shape[1], dtype=np.float64)
    b = 0.0
    for _ in range(hyper.epochs):
        _, grad_w, grad_b = logreg_loss_and_grad(w, b, X, y, hyper.l2)
        w -= hyper.learning_rate * grad_w
        b -= hyper.learning_rate * grad_b
    meta = {
        "hyper": {
            "l2": hyper.l2,
            "learning_rate": hyper.learning_rate,
            "epochs": hyper.epochs,
            "seed": hyper.seed,
        }
    }
    return LogRegModel(weights=w, bias=b, meta=meta)


# ---------------------------------------------------------------------------
# Random forest


@dataclass(frozen=True)
class ForestHyper:
    n_trees: int = 25
    max_depth: int = 6
    min_leaf: int = 1
    feature_fraction: float = 0.7
    bootstrap: bool = True
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_trees < 1:
            raise TrainingError(f"n_trees must be >= 1, got {self.n_trees}")
        if not 0.0 < self.feature_fraction <= 1.0:
            raise TrainingError(
                f"feature_fraction must be in (0, 1], got {self.feature_fraction}"
            )


@dataclass
class ForestModel:
    trees: list[TreeModel]
    tree_columns: list[tuple[int, ...]]
    meta: dict = field(default_factory=dict)
    kind: str = FOREST

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        stacked = np.stack(
            [
                tree.predict_proba(X[:, list(cols)])
                for tree, cols in zip(self.trees, self.tree_columns)
            ]
        )
        return stacked.mean(axis=0)


def train_forest(
    X: np.ndarray, y: np.ndarray, hyper: ForestHyper | None = None
) -> ForestModel:
    """Bootstrap forest of CART trees over random feature subsets.

    With n_trees=1, feature_fraction=1.0, and bootstrap off, the forest
    reduces exactly to a single tree trained on the full data.
    """
    hyper = hyper or ForestHyper()
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y).astype(np.int8)
    if X.shape[0] == 0:
        raise TrainingError("cannot train a forest on zero rows")
    n, d = X.shape
    n_features = max(1, round(hyper.feature_fraction * d))
    rng = random.Random(hyper.seed)
    tree_hyper = TreeHyper(max_depth=hyper.max_depth, min_leaf=hyper.min_leaf)

    trees = []
    tree_columns = []
    for _ in range(hyper.n_trees):
        if n_features == d:
            cols = tuple(range(d))
        else:
            cols = tuple(sorted(rng.sample(range(d), n_features)))
        if hyper.bootstrap:
            rows = [rng.randrange(n) for _ in range(n)]
        else:
            rows = list(range(n))
        trees.append(train_tree(X[np.ix_(rows, list(cols))], y[rows], tree_hyper))
        tree_columns.append(cols)
    meta = {
        "hyper": {
            "n_trees": hyper.n_trees,
            "max_depth": hyper.max_depth,
            "min_leaf": hyper.min_leaf,
            "feature_fraction": hyper.feature_fraction,
            "bootstrap": hyper.bootstrap,
            "seed": hyper.seed,
        }
    }
    return ForestModel(trees=trees, tree_columns=tree_columns, meta=meta)


# ---------------------------------------------------------------------------
# Shared entry points


def train_model(kind: str, X: np.ndarray, y: np.ndarray, hyper=None):
    if kind == TREE:
        return train_tree(X, y, hyper)
    if kind == LOGREG:
        return train_logreg(X, y, hyper)
    if kind == FOREST:
        return train_forest(X, y, hyper)
    raise TrainingError(f"unknown model kind {kind!r}; expected one of {MODEL_KINDS}")


def few_shot_fit(kind: str, features: FeatureMatrix, n: int = 6, seed: int = 0, hyper=None):
    """Train on a tiny balanced sample, mirroring the prompt-exemplar setup.

    Draws n/2 positive and n/2 negative rows without replacement, then
    trains the chosen model kind on just those rows.
    """
    if n < 2 or n % 2 != 0:
        raise TrainingError(f"few-shot n must be a positive even number, got {n}")
    per_class = n // 2
    pos_idx = [i for i, label in enumerate(features.y) if label == 1]
    neg_idx = [i for i, label in enumerate(features.y) if label == 0]
    if len(pos_idx) < per_class:
        raise TrainingError(
            f"few-shot fit needs {per_class} positives, pool has {len(pos_idx)}"
        )
    if len(neg_idx) < per_class:
        raise TrainingError(
            f"few-shot fit needs {per_class} negatives, pool has {len(neg_idx)}"
        )
    rng = random.Random(seed)
    chosen = sorted(rng.sample(pos_idx, per_class) + rng.sample(neg_idx, per_class))
    return train_model(kind, features.X[chosen], features.y[chosen], hyper)


def predict_labels(model, X: np.ndarray) -> np.ndarray:
    """Binary labels at the 0.5 threshold; exact ties go positive."""
    return (model.predict_proba(X) >= 0.5).astype(np.int8)


def accuracy_score(model, X: np.ndarray, y: np.ndarray) -> float:
    predictions = predict_labels(model, X)
    return float(np.mean(predictions == np.asarray(y).astype(np.int8)))


# ---------------------------------------------------------------------------
# Model (de)serialization


def _node_to_dict(node: TreeNode) -> dict:
    payload: dict = {"n_pos": node.n_pos, "n_total": node.n_total}
    if not node.is_leaf:
        assert node.left is not None and node.right is not None
        payload.update(
            feature=node.feature,
            threshold=node.threshold,
            left=_node_to_dict(node.left),
            right=_node_to_dict(node.right),
        )
    return payload


def _node_from_dict(payload: dict) -> TreeNode:
    node = TreeNode(n_pos=int(payload["n_pos"]), n_total=int(payload["n_total"]))
    if "feature" in payload:
        node.feature = int(payload["feature"])
        node.threshold = float(payload["threshold"])
        node.left = _node_from_dict(payload["left"])
        node.right = _node_from_dict(payload["right"])
    return node


def model_to_dict(model) -> dict:
    """Self-describing parameter record for a trained model."""
    if model.kind == TREE:
        return {"kind": TREE, "meta": model.meta, "root": _node_to_dict(model.root)}
    if model.kind == LOGREG:
        return {
            "kind": LOGREG,
            "meta": model.meta,
            "weights": [float(v) for v in model.weights],
            "bias": float(model.bias),
        }
    if model.kind == FOREST:
        return {
            "kind": FOREST,
            "meta": model.meta,
            "trees": [
                {"columns": list(cols), "root": _node_to_dict(tree.root)}
                for tree, cols in zip(model.trees, model.tree_columns)
            ],
        }
    raise TrainingError(f"unknown model kind {model.kind!r}")


def model_from_dict(payload: dict):
    kind = payload.get("kind")
    if kind == TREE:
        return TreeModel(root=_node_from_dict(payload["root"]), meta=payload.get("meta", {}))
    if kind == LOGREG:
        return LogRegModel(
            weights=np.array(payload["weights"], dtype=np.float64),
            bias=float(payload["bias"]),
            meta=payload.get("meta", {}),
        )
    if kind == FOREST:
        trees = [
            TreeModel(root=_node_from_dict(entry["root"]))
            for entry in payload["trees"]
        ]
        columns = [tuple(int(c) for c in entry["columns"]) for entry in payload["trees"]]
        return ForestModel(trees=trees, tree_columns=columns, meta=payload.get("meta", {}))
    raise TrainingError(f"unknown model kind {kind!r} in model file")
