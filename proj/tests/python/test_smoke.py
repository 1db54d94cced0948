import json
import math

import numpy as np
import pytest

import parformer as pf


def test_share_map():
    assert pf.share_map(12, 3) == [0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 2, 2]
    assert pf.share_map(4, 1) == [0, 0, 0, 0]
    with pytest.raises(ValueError):
        pf.share_map(12, 5)


def test_ops_match_numpy():
    x = np.random.default_rng(0).normal(size=(4, 6))

    s = pf.softmax_rows(x)
    ref = np.exp(x - x.max(axis=1, keepdims=True))
    ref /= ref.sum(axis=1, keepdims=True)
    np.testing.assert_allclose(s, ref, rtol=0, atol=1e-12)
    np.testing.assert_allclose(s.sum(axis=1), 1.0, atol=1e-12)

    g = pf.gelu(x)
    ref_g = 0.5 * x * (1.0 + np.vectorize(math.erf)(x / math.sqrt(2.0)))
    np.testing.assert_allclose(g, ref_g, rtol=0, atol=1e-12)

    ln = pf.layer_norm(x, np.ones(6), np.zeros(6), 1e-5)
    mu = x.mean(axis=1, keepdims=True)
    var = x.var(axis=1, keepdims=True)
    np.testing.assert_allclose(ln, (x - mu) / np.sqrt(var + 1e-5), rtol=0, atol=1e-12)


def tiny_classify_config():
    cfg = json.loads(pf.default_config())
    cfg.update(
        task="classify",
        variant="parallel",
        depth=2,
        independent_layers=2,
        dim=16,
        heads=2,
        mlp_ratio=2,
        image_size=8,
        patch_size=4,
        channels=1,
        num_classes=3,
    )
    return json.dumps(cfg)


def test_model_classify_and_checkpoint(tmp_path):
    m = pf.Model(tiny_classify_config(), seed=0)
    assert m.param_count() > 0
    imgs = np.random.default_rng(1).random((2, 1, 8, 8))
    logits = m.forward_classify(imgs)
    assert logits.shape == (2, 3)
    assert np.isfinite(logits).all()

    path = str(tmp_path / "m.ckpt")
    m.save(path)
    m2 = pf.Model.load(path)
    np.testing.assert_array_equal(m2.forward_classify(imgs), logits)
    assert json.loads(m2.config_json()) == json.loads(m.config_json())


def test_model_seed_determinism():
    a = pf.Model(tiny_classify_config(), seed=7)
    b = pf.Model(tiny_classify_config(), seed=7)
    imgs = np.random.default_rng(2).random((1, 1, 8, 8))
    np.testing.assert_array_equal(a.forward_classify(imgs), b.forward_classify(imgs))


def test_model_lm():
    cfg = json.loads(pf.default_config())
    cfg.update(
        task="lm",
        variant="parallel",
        depth=2,
        independent_layers=2,
        dim=16,
        heads=2,
        mlp_ratio=2,
        vocab_size=11,
        context=8,
    )
    m = pf.Model(json.dumps(cfg), seed=3)
    out = m.forward_lm([[1, 2, 3], [4, 5, 6]])
    assert out.shape == (2, 3, 11)
    assert np.isfinite(out).all()
    with pytest.raises(ValueError):
        m.forward_lm([[99]])
    with pytest.raises(ValueError):
        m.forward_lm([[1, 2], [3]])


def test_presets():
    deit = json.loads(pf.preset_config("deit_ti"))
    assert deit["depth"] == 12 and deit["dim"] == 192 and deit["image_size"] == 224
    nlp = json.loads(pf.preset_config("nlp_small"))
    assert nlp["task"] == "lm" and nlp["dim"] == 128
    with pytest.raises(ValueError):
        pf.preset_config("nope")


def test_gradcheck_and_order_probe():
    r = pf.gradcheck("ops", seeds=1)
    assert r["pass"] and r["checks"] > 0 and r["worst_rel_err"] < 1e-4

    order = pf.measure_block_order(dim=4, heads=2, scheme="rk4", seed=2)
    assert not order["exact"]
    assert 3.0 < order["slope"] < 5.0
    assert len(order["errors"]) == 4
