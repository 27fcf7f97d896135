import json
import math
import os
import struct
import sys

import numpy as np
import pytest

try:
    import specfuse as sf
except ImportError:
    import _core as sf


def test_schedule_and_diffusion():
    sched = sf.make_schedule(1000)
    assert sched.T == 1000
    assert sched.beta[0] == pytest.approx(1e-4)
    assert sched.beta[-1] == pytest.approx(0.02)
    assert all(b > a for a, b in zip(sched.alpha_bar[1:], sched.alpha_bar[:-1]))
    assert sched.alpha_bar[-1] < 0.01

    rng = np.random.default_rng(0)
    x0 = rng.standard_normal(1000)
    noise = rng.standard_normal(1000)
    xt = sf.forward_diffuse(x0, 500, noise, sched)
    ab = sched.alpha_bar[499]
    np.testing.assert_allclose(
        xt, math.sqrt(ab) * x0 + math.sqrt(1 - ab) * noise, rtol=0, atol=1e-12
    )


def test_tokenizer_roundtrip():
    corpus = ["a hyperspectral and lidar multimodal data of ground",
              "the ground has the lowest height"]
    vocab = sf.build_vocab(corpus, 300)
    assert vocab.vocab_size >= 259
    for text in corpus:
        ids = sf.tokenize(text, vocab)
        assert len(ids) == sf.max_tokens() == 77
        assert ids[0] == sf.sot_id()
        assert sf.eot_id() in ids
        assert sf.detokenize(ids, vocab) == text

    empty = sf.tokenize("", vocab)
    assert empty[:2] == [sf.sot_id(), sf.eot_id()]
    assert set(empty[2:]) == {sf.pad_id()}


def test_metrics_oracle():
    m = sf.metrics_from_confusion([50, 10, 5, 35], 2)
    assert m["oa"] == pytest.approx(0.85)
    assert m["kappa"] == pytest.approx(0.34 / 0.49, abs=1e-9)

    ev = sf.evaluate_map([1, 2, 2, 1], [1, 2, 1, 0], 2)
    assert ev["oa"] == pytest.approx(2 / 3)


def test_cli_pipeline(tmp_path):
    scene = str(tmp_path / "raw")
    prep = str(tmp_path / "prep")
    ckpt = str(tmp_path / "ckpt.bin")
    report = str(tmp_path / "report.txt")
    prompts = tmp_path / "prompts.json"
    prompts.write_text(json.dumps({
        "classes": [
            {"name": f"kind {c}",
             "differentiated": [f"kind {c} is first", f"kind {c} is second",
                                f"kind {c} is third"]}
            for c in range(3)
        ]
    }))

    assert sf.run_cli(["synth", "--out", scene, "--classes", "3",
                       "--size", "24x24", "--bands", "8", "--seed", "3"]) == 0
    assert sf.run_cli(["prepare", "--scene", scene, "--dim", "3",
                       "--out", prep]) == 0
    # re-preparing prepared data must fail with the data-error exit code
    assert sf.run_cli(["prepare", "--scene", prep, "--dim", "3",
                       "--out", prep + "2"]) == 3

    toy = ["--set", "pca_dim=3", "--set", "patch=7", "--set", "epochs=2",
           "--set", "train_per_class=4", "--set", "enc_filters=4,6,6",
           "--set", "dec_filters=6,4,4", "--set", "head_ch=4",
           "--set", "conv3d_ch=2", "--set", "text_width=16",
           "--set", "text_layers=1", "--set", "text_heads=2",
           "--set", "shared_dim=16", "--set", "refiner_depth=1",
           "--set", "refiner_heads=2", "--set", "vocab_size=290",
           "--set", "diffusion_steps=30"]
    assert sf.run_cli(["train", "--scene", prep, "--prompts", str(prompts),
                       "--out", ckpt, "--deterministic"] + toy) == 0
    assert sf.run_cli(["eval", "--ckpt", ckpt, "--scene", prep,
                       "--report", report]) == 0
    text = open(report).read()
    assert "Class(Train/Test)" in text
    assert "OA" in text and "Kappa" in text

    # invalid lambda weights are a config error naming the field
    assert sf.run_cli(["train", "--scene", prep, "--prompts", str(prompts),
                       "--out", ckpt, "--set", "lambda_c=0.5",
                       "--set", "lambda_n=0.5", "--set", "lambda_m=0.5"] + toy) == 2

    mp = str(tmp_path / "map.i32")
    png = str(tmp_path / "map.png")
    assert sf.run_cli(["predict", "--ckpt", ckpt, "--scene", prep,
                       "--out", mp, "--deterministic"]) == 0
    raw = open(mp, "rb").read()
    labels = struct.unpack(f"<{24 * 24}i", raw)
    assert all(1 <= v <= 3 for v in labels)
    assert sf.run_cli(["map", "--pred", mp, "--scene", prep, "--png", png]) == 0
    assert open(png, "rb").read(8) == b"\x89PNG\r\n\x1a\n"


def test_config_errors():
    assert sf.run_cli(["train", "--scene", "/nonexistent", "--prompts", "x",
                       "--out", "y", "--set", "alpha=notanumber"]) == 2
    assert sf.run_cli(["synth", "--out", "/tmp/x", "--size", "banana"]) == 2
