"""Smoke test for the retention_py extension.

Build and stage the module first:

    cargo build -p retention-py --release --features extension-module
    cp target/release/libretention_py.so python/retention_py.so

Then run `python3 python/smoke_test.py` from the repository root.
"""

import os
import sys
import tempfile

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import retention_py as rp  # noqa: E402

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
DATA = os.path.join(ROOT, "crates", "core", "tests", "data")


def main():
    data = rp.Dataset.from_csv(os.path.join(DATA, "wine.csv"))
    assert (len(data), data.feature_count, data.class_count) == (178, 13, 3)
    train, test = data.split(0.7, 42)

    model = rp.train(train, num_trees=20, seed=42)
    assert model.tree_count == 20 and model.is_prunable
    assert model.accuracy(test) > 0.85
    assert 0.0 < model.oob_accuracy(train) <= 1.0

    pruned, info = rp.prune(model, train, 0.03)
    assert info["oob_before"] - info["oob_after"] <= 0.03
    assert pruned.node_count <= model.node_count
    exhaustive, info_ex = rp.prune(model, train, 0.03, exhaustive=True)
    assert info_ex["oob_before"] - info_ex["oob_after"] <= 0.03

    stats = rp.path_stats(pruned)
    assert stats["path_count"] > 0 and 0.0 <= stats["redundancy"] < 1.0
    nominal, physical = rp.layout_size(206152, 29436)
    assert abs(nominal - 723.40) < 0.01 and physical >= nominal
    assert abs(rp.redundancy(16.91, 29436) - 0.9994) < 1e-4
    assert abs(rp.estimate_condition_checks(14, 5446) - 120.45) < 0.01

    counts = {}
    for strategy in ["unified", "independent", "fr", "odr", "spc"]:
        layout = rp.map(pruned, strategy, 32)
        counts[strategy] = layout.tcam_count
        assert layout.tcam_count == rp.tcam_count(pruned, strategy, 32)
        assert layout.cost()["tcam_count"] == layout.tcam_count
        assert layout.simulate(random=300) == 0
        assert layout.simulate(test.rows()) == 0
        x = test.rows()[0]
        assert layout.predict(x) == pruned.predict(x)
    assert counts["odr"] <= counts["unified"]

    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "model.json")
        pruned.save(path)
        again = rp.Ensemble.load(path)
        assert again.node_count == pruned.node_count
        assert all(again.predict(x) == pruned.predict(x) for x in test.rows())
        rp.map(again, "odr", 16).save(os.path.join(d, "layout.json"))

    gbm = rp.Ensemble.load(os.path.join(DATA, "gbm_binary.json"))
    margins = gbm.predict([0.0] * 30)
    assert isinstance(margins, list) and len(margins) == 1
    try:
        rp.prune(gbm, rp.Dataset.from_csv(os.path.join(DATA, "breast_cancer.csv")), 0.01)
    except ValueError as e:
        assert "bagging" in str(e)
    else:
        raise AssertionError("margin model was pruned")

    try:
        rp.map(pruned, "nope", 16)
    except ValueError:
        pass
    else:
        raise AssertionError("unknown strategy accepted")

    synth = rp.Dataset.profile("credit_approval", 300, 1)
    assert (len(synth), synth.feature_count) == (300, 15)

    print("smoke test passed:", counts)


if __name__ == "__main__":
    main()
