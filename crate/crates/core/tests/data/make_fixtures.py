"""Regenerates the bundled fixtures in this directory.

breast_cancer.csv and wine.csv are the UCI WDBC and Wine datasets as shipped
with scikit-learn. gbm_binary.json and gbm_multiclass.json are gradient-boosted
models written as ensemble documents; the matching *_margins.json files hold
instances and the raw margins computed by scikit-learn itself.

Feature values are rounded to float32 first, because scikit-learn trees compare
float32 inputs against float64 thresholds.

    python3 make_fixtures.py
"""

import json
from pathlib import Path

import numpy as np
from sklearn.datasets import load_breast_cancer, load_wine
from sklearn.ensemble import GradientBoostingClassifier

HERE = Path(__file__).resolve().parent


def as_float32(x):
    return x.astype(np.float32).astype(np.float64)


def write_csv(path, x, y, names, classes):
    with open(path, "w") as f:
        f.write(",".join(names + ["label"]) + "\n")
        for row, label in zip(x, y):
            f.write(",".join(repr(float(v)) for v in row) + "," + classes[label] + "\n")


def tree_nodes(tree, scale):
    t = tree.tree_
    nodes = []
    for i in range(t.node_count):
        left, right = int(t.children_left[i]), int(t.children_right[i])
        if left == -1:
            nodes.append({"value": repr(float(t.value[i][0][0]) * scale)})
        else:
            nodes.append(
                {
                    "feature": int(t.feature[i]),
                    "threshold": repr(float(t.threshold[i])),
                    "left": left,
                    "right": right,
                }
            )
    return nodes


def export_gbm(model, x, stem, n_features, n_classes):
    groups = model.estimators_.shape[1]
    base = model._raw_predict_init(x[:1])[0]
    if groups > 1 and not np.all(base == base[0]):
        raise ValueError("per-class base scores are not representable")
    trees = []
    for stage in model.estimators_:
        for group, tree in enumerate(stage):
            trees.append({"group": group, "nodes": tree_nodes(tree, model.learning_rate)})
    doc = {
        "format": "retention-ensemble",
        "version": 1,
        "aggregation": "margin_sum",
        "class_count": n_classes,
        "feature_count": n_features,
        "base_score": repr(float(base[0])),
        "groups": groups,
        "trees": trees,
    }
    (HERE / f"{stem}.json").write_text(json.dumps(doc, indent=1) + "\n")
    margins = model.decision_function(x)
    if margins.ndim == 1:
        margins = margins[:, None]
    check = {
        "instances": [[repr(float(v)) for v in row] for row in x],
        "margins": [[repr(float(v)) for v in row] for row in margins],
    }
    (HERE / f"{stem}_margins.json").write_text(json.dumps(check) + "\n")


def main():
    bc = load_breast_cancer()
    xb = as_float32(bc.data)
    names = [f"f{i}" for i in range(xb.shape[1])]
    write_csv(HERE / "breast_cancer.csv", xb, bc.target, names, list(bc.target_names))

    wine = load_wine()
    xw = as_float32(wine.data)
    write_csv(HERE / "wine.csv", xw, wine.target, [f"f{i}" for i in range(xw.shape[1])], list(wine.target_names))

    binary = GradientBoostingClassifier(n_estimators=25, max_depth=3, learning_rate=0.1, random_state=0)
    binary.fit(xb, bc.target)
    export_gbm(binary, xb, "gbm_binary", xb.shape[1], 2)

    multi = GradientBoostingClassifier(n_estimators=20, max_depth=3, learning_rate=0.2, init="zero", random_state=0)
    multi.fit(xw, wine.target)
    export_gbm(multi, xw, "gbm_multiclass", xw.shape[1], 3)


if __name__ == "__main__":
    main()
