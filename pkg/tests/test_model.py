import numpy as np
import pytest

from smile_lab import model
from smile_lab import tensor as T


ARCH = model.Architecture()


@pytest.fixture(scope="module")
def weights():
    return model.init_weights(ARCH, seed=0, with_target_head=True)


def test_init_shapes(weights):
    p = weights.params
    assert p["conv1_k"].shape == (3, 3, 1, 8)
    assert p["conv2_k"].shape == (3, 3, 8, 16)
    assert p["proj_w"].shape == (16, 32)
    assert p["src_w"].shape == (32, 20)
    assert p["tgt_w"].shape == (32, 5)
    assert weights.has_target_head


def test_init_deterministic():
    a = model.init_weights(ARCH, seed=3, with_target_head=True)
    b = model.init_weights(ARCH, seed=3, with_target_head=True)
    assert a.equal(b)
    assert not a.equal(model.init_weights(ARCH, seed=4, with_target_head=True))


def test_zero_input_zero_features(weights):
    # biases are zero at init, so a zero image produces zero features
    x = np.zeros((2, 16, 16, 1))
    feats = model.feature_extract(x, weights)
    assert np.array_equal(feats, np.zeros((2, 32)))


def test_feature_regression_lock(weights):
    """Pin the feature path against accidental changes."""
    rng = np.random.default_rng(0)
    x = rng.uniform(0.0, 1.0, size=(1, 16, 16, 1))
    feats = model.feature_extract(x, weights)
    assert feats.shape == (1, 32)
    digest = float(np.sum(feats * np.arange(1, 33)))
    assert digest == pytest.approx(_FEATURE_DIGEST, rel=1e-12)


def test_tensor_and_numpy_paths_agree(weights):
    rng = np.random.default_rng(2)
    x = rng.uniform(0.0, 1.0, size=(3, 16, 16, 1))
    wt = model.as_tensors(weights)
    assert np.allclose(model.feature_extract_t(x, wt).values,
                       model.feature_extract(x, weights), atol=1e-12)
    assert np.allclose(model.target_logits_t(x, wt).values,
                       model.target_logits(x, weights), atol=1e-12)
    assert np.allclose(model.source_logits_t(x, wt).values,
                       model.source_logits(x, weights), atol=1e-12)


def test_heads_are_affine_in_features(weights):
    rng = np.random.default_rng(4)
    xa = rng.uniform(size=(1, 16, 16, 1))
    xb = rng.uniform(size=(1, 16, 16, 1))
    fa = model.feature_extract(xa, weights)
    fb = model.feature_extract(xb, weights)
    za = model.target_logits(xa, weights)
    zb = model.target_logits(xb, weights)
    # affine map: logits(mix of features) equals mix of logits
    mixed_feats = 0.3 * fa + 0.7 * fb
    mixed_logits = mixed_feats @ weights.params["tgt_w"] + weights.params["tgt_b"]
    assert np.allclose(mixed_logits, 0.3 * za + 0.7 * zb, atol=1e-12)


def test_snapshot_is_independent(weights):
    snap = model.snapshot(weights)
    assert snap.equal(weights)
    snap.params["proj_w"][0, 0] += 1.0
    assert not snap.equal(weights)


def test_init_from_pretrained(weights):
    student, teacher = model.init_from_pretrained(weights, seed=9)
    for name in model.FE_PARAMS + model.SRC_HEAD_PARAMS:
        assert np.array_equal(student.params[name], weights.params[name])
        assert np.array_equal(teacher.params[name], weights.params[name])
    assert student.has_target_head
    assert not teacher.has_target_head
    # fresh target head, not copied
    s2, _ = model.init_from_pretrained(weights, seed=10)
    assert not np.array_equal(student.params["tgt_w"], s2.params["tgt_w"])


def test_checkpoint_round_trip(tmp_path, weights):
    path = tmp_path / "w.ckpt"
    model.save_checkpoint(weights, path)
    loaded = model.load_checkpoint(path)
    assert loaded.equal(weights)
    assert loaded.arch == weights.arch


def test_checkpoint_without_target_head(tmp_path, weights):
    _, teacher = model.init_from_pretrained(weights, seed=0)
    path = tmp_path / "t.ckpt"
    model.save_checkpoint(teacher, path)
    loaded = model.load_checkpoint(path)
    assert loaded.equal(teacher)
    assert not loaded.has_target_head


def test_checkpoint_rejects_garbage(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"not a checkpoint at all")
    with pytest.raises(model.CheckpointError):
        model.load_checkpoint(path)


def test_feature_gradient_flows(weights):
    wt = model.as_tensors(weights)
    x = np.random.default_rng(1).uniform(size=(2, 16, 16, 1))
    out = T.sum_of_squares(model.feature_extract_t(x, wt))
    T.backward(out)
    assert wt["conv1_k"].grad is not None
    assert np.any(wt["conv1_k"].grad != 0.0)


_FEATURE_DIGEST = 122.64590242761211
