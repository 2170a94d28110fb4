"""End-to-end smoke tests for the _declutr extension."""

import json
import math
import os

import pytest

import declutr

FIXTURES = os.path.join(os.path.dirname(__file__), "..", "..", "data", "fixtures")


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("declutr")
    corpus = str(root / "corpus.jsonl")
    vocab_path = str(root / "vocab.tsv")
    declutr.gen_synthetic(corpus, topics=4, docs=24, doc_len=300, seed=3)
    vocab = declutr.Vocab.build(corpus)
    vocab.save(vocab_path)
    return {"root": root, "corpus": corpus, "vocab_path": vocab_path, "vocab": vocab}


def test_vocab_round_trip(workspace):
    vocab = workspace["vocab"]
    assert len(vocab) > 4
    ids = vocab.tokenize("t0w1 t0w2 unknowntoken")
    assert ids[-1] == 1  # UNK
    text = vocab.detokenize(ids[:2])
    assert vocab.tokenize(text) == ids[:2]
    assert vocab.fingerprint() == declutr.Vocab.load(workspace["vocab_path"]).fingerprint()


def test_sampled_pairs_have_the_inspection_shape(workspace):
    records = declutr.sample_pairs(
        workspace["corpus"], workspace["vocab_path"], count=6, seed=7, profile="desk-scale"
    )
    assert len(records) == 6
    for rec in records:
        assert rec["view"] in {"overlapping", "adjacent", "subsumed"}
        assert rec["anchor"] and rec["positive"] and rec["docId"]


def test_train_embed_retrieve(workspace):
    out_dir = str(workspace["root"] / "run")
    result = declutr.train(
        workspace["corpus"],
        workspace["vocab_path"],
        out_dir,
        profile="desk-scale",
        seed=5,
        total_steps=3,
        deterministic=True,
    )
    assert result["steps"] == 3
    assert os.path.exists(result["checkpoint"])
    with open(result["metrics"]) as f:
        records = [json.loads(line) for line in f if line.strip()]
    assert len(records) == 3
    assert records[0]["l"] == records[0]["l_contrastive"] + records[0]["l_mlm"]

    texts = ["t0w1 t0w2 t0w3", "t0w1 t0w4", "t1w1 t1w2 t1w3", "t1w5 t1w1"]
    emb = declutr.embed_texts(result["checkpoint"], workspace["vocab_path"], texts, batch_size=2)
    assert all(emb["ok"])
    assert len(emb["embeddings"]) == 4
    assert len(emb["embeddings"][0]) == 64  # desk-scale d_model
    precision = declutr.knn_precision_at1(emb["embeddings"], [0, 0, 1, 1])
    assert 0.0 <= precision <= 1.0


def test_linear_probe_on_separable_blobs():
    train = [[2.0, 2.0], [2.1, 1.9], [-2.0, -2.0], [-1.9, -2.1]]
    test = [[1.8, 2.2], [-2.2, -1.8]]
    report = declutr.train_linear_probe(train, [0, 0, 1, 1], test, [0, 1])
    assert report["kind"] == "accuracy"
    assert report["accuracy"] == 1.0


def test_spearman_values():
    assert declutr.spearman([1, 2, 3], [10, 20, 30]) == pytest.approx(1.0)
    assert declutr.spearman([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0)
    assert declutr.spearman([1, 2, 2, 3], [1, 2, 3, 4]) == pytest.approx(math.sqrt(0.9))


def test_contrastive_loss_matches_the_closed_form():
    identical = [[0.5, 0.25]] * 4  # 2AN = 4, every similarity ties
    assert declutr.contrastive_loss(identical, temperature=5e-2) == 4.0 * math.log(3.0)
    assert declutr.nt_xent_pair(identical, 1.0, 1, 3) == math.log(3.0)


def test_stlr_schedule_endpoints():
    assert declutr.stlr_learning_rate(0, 1000) == 5e-5 / 32.0
    assert declutr.stlr_learning_rate(100, 1000) == 5e-5
    assert declutr.stlr_learning_rate(1000, 1000) == pytest.approx(5e-5 / 32.0)


def test_aggregate_matches_the_published_average():
    value = declutr.aggregate_reports(os.path.join(FIXTURES, "table2_glove.json"))
    assert value == pytest.approx(65.47, abs=0.01)


def test_profile_config_round_trip():
    cfg = json.loads(declutr.profile_config("paper-defaults"))
    assert cfg["sampler"]["min_span_len"] == 32
    assert cfg["sampler"]["max_span_len"] == 512
    assert cfg["train"]["temperature"] == 5e-2
    assert cfg["train"]["lr_max"] == 5e-5
    desk = json.loads(declutr.profile_config("desk-scale"))
    assert desk["sampler"]["max_span_len"] == 64
    assert desk["train"]["batch_size"] == 8


def test_data_errors_surface_as_python_exceptions(workspace):
    with pytest.raises(declutr.DataError):
        declutr.Vocab.load("/nonexistent/vocab.tsv")
    with pytest.raises(declutr.DataError):
        declutr.aggregate_reports("/nonexistent/reports.json")
