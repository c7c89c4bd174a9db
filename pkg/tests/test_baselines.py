import random
from fractions import Fraction

import numpy as np
import pytest

from ehr_coagent.baselines import (
    FOREST,
    LOGREG,
    TREE,
    FeatureMatrix,
    ForestHyper,
    LogRegHyper,
    TreeHyper,
    accuracy_score,
    code_universe_from_examples,
    featurize,
    few_shot_fit,
    logreg_loss_and_grad,
    model_from_dict,
    model_to_dict,
    predict_labels,
    train_forest,
    train_logreg,
    train_model,
    train_tree,
)
from ehr_coagent.errors import TrainingError

from conftest import code, make_example

A = code("ICD10", "A1")
B = code("ICD10", "B2")
C = code("NDC", "C3", "medication")
D = code("CPT", "D4", "procedure")


# ---------------------------------------------------------------------------
# featurization
# ---------------------------------------------------------------------------

def test_featurize_single_row():
    ex = make_example("e1", "p1", codes=(A, C))
    matrix = featurize([ex], [A, B, C])
    assert matrix.X.tolist() == [[1.0, 0.0, 1.0]]


def test_featurize_empty_visit_is_zero_row():
    ex = make_example("e1", "p1", codes=())
    matrix = featurize([ex], [A, B, C])
    assert matrix.X.tolist() == [[0.0, 0.0, 0.0]]


def test_featurize_hand_encoded_matrix():
    examples = [
        make_example("e1", "p1", label="positive", codes=(A, C)),
        make_example("e2", "p2", label="negative", codes=()),
        make_example("e3", "p3", label="positive", codes=(B, C, D)),
    ]
    matrix = featurize(examples, [A, B, C, D])
    # Hand encoding, row by row, before running the code.
    assert matrix.X.tolist() == [
        [1.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, 0.0, 0.0],
        [0.0, 1.0, 1.0, 1.0],
    ]
    assert matrix.y.tolist() == [1, 0, 1]
    assert matrix.example_ids == ("e1", "e2", "e3")


def test_featurize_counts_unknown_codes():
    ex = make_example("e1", "p1", codes=(A, B, C))
    matrix = featurize([ex], [A])
    assert matrix.unknown_code_count == 2
    assert matrix.X.tolist() == [[1.0]]


def test_featurize_rejects_bad_universe():
    ex = make_example("e1", "p1", codes=(A,))
    with pytest.raises(TrainingError):
        featurize([ex], [])
    with pytest.raises(TrainingError):
        featurize([ex], [A, A])


def test_code_universe_is_sorted_and_distinct():
    examples = [
        make_example("e1", "p1", codes=(C, A)),
        make_example("e2", "p2", codes=(A, B)),
    ]
    assert code_universe_from_examples(examples) == [A, B, C]


# ---------------------------------------------------------------------------
# decision tree
# ---------------------------------------------------------------------------

def test_tree_single_feature_perfect_split():
    X = np.array([[0.0], [0.0], [1.0], [1.0]])
    y = np.array([0, 0, 1, 1])
    model = train_tree(X, y)
    assert model.depth() == 1
    assert accuracy_score(model, X, y) == 1.0


def test_tree_pure_labels_stay_leaf():
    X = np.array([[0.0], [1.0], [2.0]])
    model = train_tree(X, np.array([1, 1, 1]))
    assert model.depth() == 0
    assert model.predict_proba(X).tolist() == [1.0, 1.0, 1.0]


def test_tree_xor_needs_depth_two():
    X = np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]])
    y = np.array([0, 1, 1, 0])
    model = train_tree(X, y, TreeHyper(max_depth=2))
    assert model.depth() == 2
    assert accuracy_score(model, X, y) == 1.0


def test_tree_tie_breaks_to_lowest_column():
    # Both columns are identical, so every split gain ties.
    X = np.array([[0.0, 0.0], [1.0, 1.0]])
    y = np.array([0, 1])
    model = train_tree(X, y)
    assert model.root.feature == 0
    assert model.root.threshold == 0.5


def test_tree_respects_max_depth_and_min_leaf():
    rng = np.random.default_rng(3)
    X = rng.integers(0, 2, size=(40, 6)).astype(float)
    y = rng.integers(0, 2, size=40).astype(np.int8)
    shallow = train_tree(X, y, TreeHyper(max_depth=2))
    assert shallow.depth() <= 2

    def leaf_sizes(node):
        if node.is_leaf:
            return [node.n_total]
        return leaf_sizes(node.left) + leaf_sizes(node.right)

    chunky = train_tree(X, y, TreeHyper(max_depth=8, min_leaf=5))
    assert min(leaf_sizes(chunky.root)) >= 5


def _local_gini(n_pos, n_total):
    if n_total == 0:
        return Fraction(0)
    p = Fraction(n_pos, n_total)
    return 1 - p * p - (1 - p) * (1 - p)


def _best_root_split(X, y):
    """Independent exhaustive argmax over (column, midpoint threshold).

    Returns None when the root must stay a leaf: pure labels or no usable
    threshold. An impure root splits even when every candidate gain is zero.
    """
    n = len(y)
    n_pos = int(sum(y))
    if n_pos in (0, n):
        return None
    parent = _local_gini(n_pos, n)
    best_gain = Fraction(-1)
    best = None
    for col in range(X.shape[1]):
        values = np.unique(X[:, col])
        for threshold in (values[:-1] + values[1:]) / 2.0:
            mask = X[:, col] <= threshold
            ln = int(mask.sum())
            lp = int(y[mask].sum())
            weighted = Fraction(ln, n) * _local_gini(lp, ln) + Fraction(
                n - ln, n
            ) * _local_gini(n_pos - lp, n - ln)
            gain = parent - weighted
            if gain > best_gain:
                best_gain = gain
                best = (col, float(threshold))
    return best


def test_tree_root_split_is_exhaustively_optimal():
    rng = np.random.default_rng(11)
    for trial in range(30):
        rows = int(rng.integers(2, 9))
        cols = int(rng.integers(1, 9))
        if trial % 3 == 0:
            X = rng.normal(size=(rows, cols)).round(2)
        else:
            X = rng.integers(0, 2, size=(rows, cols)).astype(float)
        y = rng.integers(0, 2, size=rows).astype(np.int8)
        model = train_tree(X, y, TreeHyper(max_depth=1))
        expected = _best_root_split(X, y)
        if expected is None:
            assert model.root.is_leaf
        else:
            assert (model.root.feature, model.root.threshold) == expected


def test_tree_prediction_matches_manual_walk():
    rng = np.random.default_rng(7)
    X = rng.integers(0, 2, size=(60, 5)).astype(float)
    y = (X[:, 0].astype(int) ^ X[:, 2].astype(int)).astype(np.int8)
    model = train_tree(X, y, TreeHyper(max_depth=4))

    def walk(node, row):
        if node.is_leaf:
            return node.n_pos / node.n_total
        child = node.left if row[node.feature] <= node.threshold else node.right
        return walk(child, row)

    got = model.predict_proba(X)
    expected = [walk(model.root, row) for row in X]
    assert got.tolist() == expected


def test_predict_labels_ties_go_positive():
    X = np.array([[0.0], [0.0]])
    model = train_tree(X, np.array([0, 1]))  # unsplittable: leaf at p = 0.5
    assert model.depth() == 0
    assert predict_labels(model, X).tolist() == [1, 1]


# ---------------------------------------------------------------------------
# logistic regression
# ---------------------------------------------------------------------------

def separable_data(n_per_class=50):
    X = np.array([[0.0]] * n_per_class + [[1.0]] * n_per_class)
    y = np.array([0] * n_per_class + [1] * n_per_class)
    return X, y


def test_logreg_fits_separable_data():
    X, y = separable_data()
    model = train_logreg(X, y)
    assert accuracy_score(model, X, y) == 1.0


def test_logreg_requires_both_classes():
    X = np.array([[0.0], [1.0]])
    with pytest.raises(TrainingError):
        train_logreg(X, np.array([1, 1]))


def test_logreg_heavy_regularization_shrinks_weights_to_prior():
    X, y = separable_data()
    light = train_logreg(X, y, LogRegHyper(l2=0.01))
    heavy = train_logreg(X, y, LogRegHyper(l2=100.0, learning_rate=0.01))
    assert np.linalg.norm(heavy.weights) < np.linalg.norm(light.weights) / 10
    # Balanced classes: the prior is 0.5 and heavy shrinkage lands there.
    assert np.max(np.abs(heavy.predict_proba(X) - 0.5)) < 0.05


def test_logreg_is_deterministic():
    X, y = separable_data(20)
    a = train_logreg(X, y)
    b = train_logreg(X, y)
    assert np.array_equal(a.weights, b.weights) and a.bias == b.bias


def test_logreg_gradient_matches_finite_differences():
    rng = np.random.default_rng(19)
    for _ in range(5):
        n, d = 6, 3
        X = rng.normal(size=(n, d))
        y = rng.integers(0, 2, size=n).astype(float)
        w = rng.normal(size=d)
        b = float(rng.normal())
        l2 = 0.1
        _, grad_w, grad_b = logreg_loss_and_grad(w, b, X, y, l2)

        h = 1e-6
        for j in range(d):
            bump = np.zeros(d)
            bump[j] = h
            hi, _, _ = logreg_loss_and_grad(w + bump, b, X, y, l2)
            lo, _, _ = logreg_loss_and_grad(w - bump, b, X, y, l2)
            numeric = (hi - lo) / (2 * h)
            assert abs(grad_w[j] - numeric) / max(1.0, abs(numeric)) < 1e-6
        hi, _, _ = logreg_loss_and_grad(w, b + h, X, y, l2)
        lo, _, _ = logreg_loss_and_grad(w, b - h, X, y, l2)
        numeric = (hi - lo) / (2 * h)
        assert abs(grad_b - numeric) / max(1.0, abs(numeric)) < 1e-6


# ---------------------------------------------------------------------------
# random forest
# ---------------------------------------------------------------------------

def planted_matrix(n=400, d=10, seed=0):
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, size=n).astype(np.int8)
    X = rng.integers(0, 2, size=(n, d)).astype(float)
    strong_flip = rng.random(n) < 0.02
    weak_flip = rng.random(n) < 0.05
    X[:, 0] = np.where(strong_flip, 1 - y, y)
    X[:, 1] = np.where(weak_flip, 1 - y, y)
    return X, y


def test_degenerate_forest_equals_single_tree():
    X, y = planted_matrix(80)
    forest = train_forest(
        X, y, ForestHyper(n_trees=1, feature_fraction=1.0, bootstrap=False)
    )
    tree = train_tree(X, y, TreeHyper(max_depth=6))
    assert np.array_equal(forest.predict_proba(X), tree.predict_proba(X))


def test_forest_learns_planted_signal():
    X, y = planted_matrix()
    train_n = 300
    model = train_forest(X[:train_n], y[:train_n])
    held_out = accuracy_score(model, X[train_n:], y[train_n:])
    assert held_out >= 0.9


def test_forest_seeds_vary_trees_not_quality():
    X, y = planted_matrix()
    a = train_forest(X[:300], y[:300], ForestHyper(seed=0))
    b = train_forest(X[:300], y[:300], ForestHyper(seed=1))
    assert model_to_dict(a) != model_to_dict(b)
    assert accuracy_score(a, X[300:], y[300:]) >= 0.9
    assert accuracy_score(b, X[300:], y[300:]) >= 0.9


def test_forest_probabilities_bounded():
    X, y = planted_matrix(100)
    model = train_forest(X, y, ForestHyper(n_trees=5))
    proba = model.predict_proba(X)
    assert np.all(proba >= 0.0) and np.all(proba <= 1.0)


# ---------------------------------------------------------------------------
# few-shot mode and shared entry points
# ---------------------------------------------------------------------------

def features_from_matrix(X, y):
    examples = []
    universe = [A, B, C, D]
    for i, (row, label) in enumerate(zip(X, y)):
        codes = tuple(universe[j] for j in range(len(row)) if row[j])
        examples.append(
            make_example(f"e{i}", f"p{i}", "positive" if label else "negative", codes=codes)
        )
    return featurize(examples, universe)


def test_few_shot_trains_on_six_balanced_rows():
    rng = np.random.default_rng(2)
    X = rng.integers(0, 2, size=(40, 4)).astype(float)
    y = np.array([i % 2 for i in range(40)], dtype=np.int8)
    features = features_from_matrix(X, y)
    model = few_shot_fit(TREE, features, n=6, seed=1)
    assert model.root.n_total == 6
    assert model.root.n_pos == 3


def test_few_shot_is_deterministic():
    rng = np.random.default_rng(4)
    X = rng.integers(0, 2, size=(30, 4)).astype(float)
    y = np.array([i % 2 for i in range(30)], dtype=np.int8)
    features = features_from_matrix(X, y)
    a = few_shot_fit(LOGREG, features, n=6, seed=9)
    b = few_shot_fit(LOGREG, features, n=6, seed=9)
    assert model_to_dict(a) == model_to_dict(b)


def test_few_shot_validates_inputs():
    X = np.ones((4, 4))
    y = np.array([1, 1, 1, 0], dtype=np.int8)
    features = features_from_matrix(X, y)
    with pytest.raises(TrainingError):
        few_shot_fit(TREE, features, n=5)
    with pytest.raises(TrainingError, match="negatives"):
        few_shot_fit(TREE, features, n=6)


def test_few_shot_trails_full_supervision_on_average():
    X, y = planted_matrix()
    train_n = 300
    features = FeatureMatrix(
        X=X[:train_n],
        y=y[:train_n],
        column_index={code("ICD10", f"X{j}"): j for j in range(X.shape[1])},
        example_ids=tuple(f"e{i}" for i in range(train_n)),
    )
    full = accuracy_score(train_tree(X[:train_n], y[:train_n]), X[train_n:], y[train_n:])
    few = [
        accuracy_score(few_shot_fit(TREE, features, n=6, seed=s), X[train_n:], y[train_n:])
        for s in range(20)
    ]
    assert sum(few) / len(few) < full


def test_train_model_dispatch_and_unknown_kind():
    X, y = separable_data(10)
    assert train_model(TREE, X, y).kind == TREE
    assert train_model(LOGREG, X, y).kind == LOGREG
    assert train_model(FOREST, X, y).kind == FOREST
    with pytest.raises(TrainingError):
        train_model("svm", X, y)


def test_model_serialization_round_trips():
    X, y = planted_matrix(60)
    for kind in (TREE, LOGREG, FOREST):
        model = train_model(kind, X, y)
        clone = model_from_dict(model_to_dict(model))
        assert np.allclose(clone.predict_proba(X), model.predict_proba(X))
