import json

import pytest

import mtm

SMALL = {"embed_dim": 8, "hidden": 6, "agg_hidden": 5, "classifier_hidden": 6, "p": 2}


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "corpus.jsonl"
    path.write_text(mtm.synth(seed=3, news=20, comments_per_news=6))
    return path


def test_labels():
    assert mtm.label_for_likes(247) == "HIGH"
    assert mtm.label_for_likes(11) == "HIGH"
    assert mtm.label_for_likes(10) == "LOW"
    assert mtm.label_for_likes(0) == "LOW"


def test_synth_is_deterministic():
    text = mtm.synth(seed=5, news=4, comments_per_news=3)
    assert text == mtm.synth(seed=5, news=4, comments_per_news=3)
    lines = text.splitlines()
    assert json.loads(lines[0])["schema"] == "mtm-corpus-v1"
    assert len(lines) == 5


def test_metrics():
    m = mtm.metrics(tp=3, fp=1, tn=4, fn=2)
    assert (m["precision"], m["recall"], m["accuracy"]) == (0.75, 0.6, 0.7)


def test_gradcheck():
    r = mtm.gradcheck(seed=1)
    assert r["max_rel_error"] < 1e-3
    assert r["coords_checked"] == r["parameters"]


def test_train_save_load_score(corpus, tmp_path):
    ckpt = tmp_path / "model.ckpt"
    result = mtm.train(corpus, {**SMALL, "epochs": 2}, ckpt)
    assert len(result["epochs"]) == 2
    assert 1 <= result["best_epoch"] <= 2

    model = mtm.Model(ckpt)
    assert model.config["embed_dim"] == 8
    assert model.vocab_size > 3
    ev = model.evaluate(corpus, "valid")
    for key in ("tp", "fp", "tn", "fn"):
        assert ev[key] == result["best_valid"][key]
    assert sum(m["tp"] + m["fp"] + m["tn"] + m["fn"] for m in ev["by_type"].values()) == result["valid"]

    s = model.score(["w"] * 6, ["w"] * 6, ["w"] * 6, [["v"] * 5])
    assert 0.0 <= s["p_high"] <= 1.0
    assert s["score"] == pytest.approx(10 * s["p_high"])
    for key in ("info", "cons", "nove"):
        assert 0.0 <= s[key] <= 10.0


def test_ablate_rows(corpus):
    rows = mtm.ablate(corpus, {**SMALL, "epochs": 1}, "ablations=full,noTitle;k=0,2")
    assert [(r["ablation"], r["k"]) for r in rows] == [("full", 0), ("full", 2), ("noTitle", 0), ("noTitle", 2)]


def test_errors(tmp_path):
    with pytest.raises(KeyError):
        mtm.train(tmp_path / "x.jsonl", {"depth": 3})
    with pytest.raises(ValueError):
        mtm.train(tmp_path / "x.jsonl", {"dropout": 1.5})
    with pytest.raises(OSError):
        mtm.Model(tmp_path / "missing.ckpt")
    bad = tmp_path / "bad.ckpt"
    bad.write_text('{"schema":"other"}\n')
    with pytest.raises(ValueError):
        mtm.Model(bad)
