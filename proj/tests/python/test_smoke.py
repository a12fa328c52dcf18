import json
import math
import os
import subprocess
from pathlib import Path

import pytest

import pymbc


def test_footprint_matches_closed_form():
    r = pymbc.footprint(1600)
    assert r["bytes_codebook"] == 512 * 768 * 4
    assert r["bytes_indices"] == 1600 * 12 * 8
    assert r["bytes_continuous_equivalent"] == 1600 * 12 * 768 * 4
    assert r["reduction_percent"] >= 97.0
    assert pymbc.footprint(0)["bytes_indices"] == 0


def test_parameter_delta():
    assert pymbc.parameter_delta(512, 768, 16, 6) == 512 * 768 + 6 * 3 * 16 * 768
    assert pymbc.parameter_delta(512, 768, 16, 6, shared_down=False) == 512 * 768 + 6 * 4 * 16 * 768


def test_metrics():
    assert pymbc.normalize_answer("The Cat!") == "cat"
    assert pymbc.exact_match(["The Paris"], ["paris"]) == 1.0
    assert math.isclose(pymbc.token_f1("paris france", "paris"), 2 / 3)
    assert pymbc.token_f1("", "") == 1.0
    with pytest.raises(ValueError):
        pymbc.exact_match(["a"], ["a", "b"])


def test_quantizer():
    cb = [[0.0, 0.0], [1.0, 1.0]]
    assert pymbc.nearest_codes([[0.9, 0.8], [0.5, 0.5], [0.1, 0.0]], cb) == [1, 0, 0]
    rows = pymbc.init_codebook(8, 3, seed=2)
    assert len(rows) == 8 and all(abs(x) <= 1 / 8 for r in rows for x in r)
    assert pymbc.codebook_perplexity([1.0] * 16) == pytest.approx(16.0)


def test_synthetic_corpus_is_deterministic():
    a = pymbc.gen_synthetic(40, seed=3)
    b = pymbc.gen_synthetic(40, seed=3)
    assert a == b
    assert len(a["documents"]) == 40
    assert len(a["train"]) + len(a["val"]) + len(a["test"]) == 40
    for r in a["train"]:
        assert r["answer"] not in r["question"].split()


def test_config_round_trip():
    cfg = json.loads(pymbc.default_config())
    assert cfg["train"]["beta_commit"] == 0.25
    assert json.loads(pymbc.canonical_config('{"seed": 4}'))["seed"] == 4
    with pytest.raises(ValueError, match="train.epoch"):
        pymbc.canonical_config('{"train": {"epoch": 1}}')


def _cli():
    path = os.environ.get("MBC_CLI")
    return path if path and Path(path).exists() else None


@pytest.mark.skipif(_cli() is None, reason="MBC_CLI not set")
def test_session_over_a_trained_checkpoint(tmp_path):
    cfg = {
        "seed": 2,
        "model": {"dim": 16, "tokens": 2, "encoder_heads": 2, "aggregator_heads": 2, "decoder_heads": 2,
                  "decoder_layers": 2, "n_lora": 1, "lora_rank": 2, "encoder_blocks": 1, "aggregator_blocks": 2},
        "train": {"epochs": 1, "batch_size": 4, "num_codes": 16, "learning_rate": 1e-3},
        "data": {"n_docs": 12, "val_fraction": 0.0, "test_fraction": 0.0},
    }
    (tmp_path / "cfg.json").write_text(json.dumps(cfg))
    subprocess.run([_cli(), "--config", str(tmp_path / "cfg.json"), "--out", str(tmp_path), "train"],
                   check=True, capture_output=True)
    s = pymbc.Session(str(tmp_path / "checkpoint.mbck"), group_size=4)
    before = s.global_hash
    corpus = pymbc.gen_synthetic(12, seed=2, val_fraction=0.0, test_fraction=0.0)
    for d in corpus["documents"]:
        codes = s.memorize(d["doc_id"], d["text"])
        assert len(codes) == 2 and all(0 <= c < 16 for c in codes)
    assert len(s) == 12
    for r in corpus["train"]:
        assert isinstance(s.answer(r["question"]), str)
    assert s.global_hash == before
    assert s.footprint()["bytes_indices"] == 12 * 2 * 8
