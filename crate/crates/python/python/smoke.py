"""Smoke test for the ideoshot extension module.

Build and install first, e.g. `maturin develop --release` from crates/python.
"""

import json
import math
import os
import tempfile

import ideoshot


def main():
    q = [[1.0, 0.0], [0.0, 1.0]]
    assert math.isclose(ideoshot.bsr(q, [[1.0, 0.0]]), 0.5)
    assert ideoshot.set_coverage(q, []) == -1.0
    assert math.isclose(ideoshot.set_coverage(q, [[[1.0, 0.0]], [[0.0, 1.0]]]), 1.0)

    assert ideoshot.class_quota(8) == 3
    assert ideoshot.parse_label("Answer: Liberal") == ("ok", "liberal")
    assert ideoshot.parse_label("liberal or conservative")[0] == "ambiguous"
    assert ideoshot.label_for_score(20.0, "adfontes") == "conservative"
    assert ideoshot.instruction("title").startswith("Classify")

    r = ideoshot.mcnemar(5, 15)
    assert math.isclose(r["statistic"], 4.05) and r["stars"] == "*"

    corpus = ideoshot.SyntheticCorpus(n_train=120, n_test=30, seed=3)
    pool = corpus.build_pool(pool_size=40, probe_size=120)
    assert len(pool) == 40 and pool.entries[0]["rank"] == 1
    query = corpus.test[0]["id"]
    demos = corpus.select(pool, query, k=6)
    labels = [m["label"] for m in demos["members"]]
    assert len(labels) == 6 and all(labels.count(c) <= 2 for c in set(labels))
    assert corpus.prompt(pool, query, k=3).count("Ideology:") == 3

    balanced = corpus.evaluate(k=4, pool_size=40, probe_size=120)["report"]
    random = corpus.evaluate(k=4, select="random", pool_size=40, probe_size=120)["report"]
    assert balanced["n"] == 30
    lo, hi = balanced["ci95"]
    assert lo <= balanced["accuracy"] <= hi

    try:
        ideoshot.instruction("body")
    except ideoshot.IdeoshotError:
        pass
    else:
        raise AssertionError("bad field config accepted")

    with tempfile.TemporaryDirectory() as tmp:
        syn = os.path.join(tmp, "syn")
        ideoshot.run_cli(["synth", "--out", syn, "--n-train", "60", "--n-test", "15"])
        ideoshot.run_cli(["classify", "--config", os.path.join(syn, "config.toml"), "--k", "3", "--out", tmp])
        with open(os.path.join(tmp, "predictions.jsonl")) as f:
            assert sum(1 for _ in f) == 15

    print(json.dumps({"balanced": balanced["accuracy"], "random": random["accuracy"], "ok": True}))


if __name__ == "__main__":
    main()
