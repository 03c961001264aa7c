import numpy as np
import pytest

from smile_lab import losses, model
from smile_lab import tensor as T
from smile_lab.mixup import mix


ARCH = model.Architecture()
RNG = np.random.default_rng(0)
X = RNG.uniform(0.0, 1.0, size=(6, 16, 16, 1))
Y = np.array([0, 1, 2, 3, 4, 0])
X_SRC = RNG.uniform(0.0, 1.0, size=(6, 16, 16, 1))
PAIR = np.array([3, 4, 5, 0, 1, 2])


@pytest.fixture()
def student():
    return model.init_weights(ARCH, seed=1, with_target_head=True)


def test_one_hot():
    out = losses.one_hot(np.array([2, 0]), 3)
    assert np.array_equal(out, [[0, 0, 1], [1, 0, 0]])
    with pytest.raises(ValueError):
        losses.one_hot(np.array([3]), 3)


def test_loss_weights_validation():
    with pytest.raises(ValueError):
        losses.LossWeights(fe=-0.1)


def test_task_loss_uniform_logits(student):
    # zero input and a zeroed head give zero logits: CE is ln(n_classes)
    student = model.snapshot(student)
    student.params["tgt_w"][:] = 0.0
    student.params["tgt_b"][:] = 0.0
    wt = model.as_tensors(student)
    out = losses.task_loss(np.zeros((4, 16, 16, 1)), np.array([0, 1, 2, 3]),
                           wt, ARCH.n_target_classes)
    assert float(out.values) == pytest.approx(np.log(5.0), abs=1e-12)


def test_mixup_loss_lambda_zero_is_task_loss(student):
    wt = model.as_tensors(student)
    plain = losses.task_loss(X, Y, wt, 5)
    mixed = losses.mixup_loss(X, Y, wt, 5, lam=0.0, pairing=PAIR)
    assert float(mixed.values) == float(plain.values)


def test_mixup_loss_lambda_one_is_paired_task_loss(student):
    wt = model.as_tensors(student)
    plain = losses.task_loss(X[PAIR], Y[PAIR], wt, 5)
    mixed = losses.mixup_loss(X, Y, wt, 5, lam=1.0, pairing=PAIR)
    assert float(mixed.values) == float(plain.values)


def test_mixup_loss_identity_pairing_collapses(student):
    # pairing each sample with itself makes the mixed input the input
    wt = model.as_tensors(student)
    ident = np.arange(6)
    mixed = losses.mixup_loss(X, Y, wt, 5, lam=0.5, pairing=ident)
    plain = losses.task_loss(X, Y, wt, 5)
    assert float(mixed.values) == pytest.approx(float(plain.values), abs=1e-12)


def test_mixup_loss_matches_weighted_ce_oracle(student):
    lam = 0.25
    x_mixed = mix(X, X[PAIR], lam)
    logits = model.target_logits(x_mixed, student)
    shifted = logits - logits.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    ce_i = -logp[np.arange(6), Y].mean()
    ce_j = -logp[np.arange(6), Y[PAIR]].mean()
    expected = (1.0 - lam) * ce_i + lam * ce_j

    wt = model.as_tensors(student)
    out = losses.mixup_loss(X, Y, wt, 5, lam=lam, pairing=PAIR)
    assert float(out.values) == pytest.approx(expected, abs=1e-10)


def test_feature_mixup_loss_zero_when_teacher_matches(student):
    # lam 0 keeps inputs unmixed, so identical weights give a zero residual
    wt = model.as_tensors(student)
    out = losses.feature_mixup_loss(X, wt, student, lam=0.0, pairing=PAIR)
    assert float(out.values) == 0.0


def test_feature_mixup_loss_numpy_oracle(student):
    teacher = model.init_weights(ARCH, seed=2, with_target_head=True)
    lam = 0.5
    x_mixed = mix(X, X[PAIR], lam)
    s_feats = model.feature_extract(x_mixed, student)
    t_feats = model.feature_extract(X, teacher)
    target = mix(t_feats, t_feats[PAIR], lam)
    expected = float(np.mean(np.sum((s_feats - target) ** 2, axis=1)))

    wt = model.as_tensors(student)
    out = losses.feature_mixup_loss(X, wt, teacher, lam=lam, pairing=PAIR)
    assert float(out.values) == pytest.approx(expected, rel=1e-12)


def test_source_label_mixup_loss_numpy_oracle(student):
    teacher = model.init_weights(ARCH, seed=2, with_target_head=True)
    lam = 0.25
    x_mixed = mix(X_SRC, X_SRC[PAIR], lam)
    s_out = model.source_logits(x_mixed, student)
    t_out = model.source_logits(X_SRC, teacher)
    target = mix(t_out, t_out[PAIR], lam)
    expected = float(np.mean(np.sum((s_out - target) ** 2, axis=1)))

    wt = model.as_tensors(student)
    out = losses.source_label_mixup_loss(X_SRC, wt, teacher, lam=lam,
                                         pairing=PAIR)
    assert float(out.values) == pytest.approx(expected, rel=1e-12)


def test_source_label_mixup_probs_space(student):
    teacher = model.init_weights(ARCH, seed=2, with_target_head=True)
    wt = model.as_tensors(student)
    logit_val = losses.source_label_mixup_loss(
        X_SRC, wt, teacher, lam=0.5, pairing=PAIR, compare_space="logits")
    prob_val = losses.source_label_mixup_loss(
        X_SRC, wt, teacher, lam=0.5, pairing=PAIR, compare_space="probs")
    assert float(logit_val.values) != float(prob_val.values)
    # probability rows have norm at most sqrt(2), so the mean sumsq of a
    # difference of two distributions is bounded by 2 per row
    assert 0.0 <= float(prob_val.values) <= 2.0
    with pytest.raises(ValueError):
        losses.source_label_mixup_loss(X_SRC, wt, teacher, lam=0.5,
                                       pairing=PAIR, compare_space="other")


def test_triplet_loss_weight_scaling(student):
    teacher = model.init_weights(ARCH, seed=2, with_target_head=True)
    lam = 0.5
    wt = model.as_tensors(student)
    mxp = float(losses.mixup_loss(X, Y, wt, 5, lam, PAIR).values)
    fe = float(losses.feature_mixup_loss(X, wt, teacher, lam, PAIR).values)
    fc = float(losses.source_label_mixup_loss(X_SRC, wt, teacher, lam,
                                              PAIR).values)
    for w in (losses.LossWeights(fe=0.01, fc=0.1),
              losses.LossWeights(fe=1.0, fc=0.0),
              losses.LossWeights(fe=0.0, fc=2.5)):
        total, parts = losses.triplet_loss(wt, teacher, X, Y, X_SRC, 5, lam,
                                           PAIR, PAIR, w)
        expected = mxp + w.fe * fe + w.fc * fc
        assert float(total.values) == pytest.approx(expected, rel=1e-12)
        assert parts["mxp"] == pytest.approx(mxp, rel=1e-12)


def test_triplet_loss_zero_weights_reduces_to_mixup(student):
    teacher = model.init_weights(ARCH, seed=2, with_target_head=True)
    wt = model.as_tensors(student)
    total, parts = losses.triplet_loss(wt, teacher, X, Y, None, 5, 0.5, PAIR,
                                       None, losses.LossWeights(fe=0.0, fc=0.0))
    plain = losses.mixup_loss(X, Y, wt, 5, 0.5, PAIR)
    assert float(total.values) == float(plain.values)
    assert parts["fe"] == 0.0 and parts["fc"] == 0.0


def test_triplet_loss_requires_source_batch(student):
    teacher = model.init_weights(ARCH, seed=2, with_target_head=True)
    wt = model.as_tensors(student)
    with pytest.raises(ValueError):
        losses.triplet_loss(wt, teacher, X, Y, None, 5, 0.5, PAIR, None,
                            losses.LossWeights(fe=0.0, fc=0.1))


def test_teacher_receives_no_gradient(student):
    teacher = model.init_weights(ARCH, seed=2, with_target_head=True)
    before = model.snapshot(teacher)
    wt = model.as_tensors(student)
    total, _ = losses.total_objective(wt, teacher, X, Y, X_SRC, 5, 0.5, PAIR,
                                      PAIR, losses.LossWeights(), True)
    T.backward(total)
    assert wt["conv1_k"].grad is not None
    assert teacher.equal(before)


def test_total_objective_breakdown(student):
    teacher = model.init_weights(ARCH, seed=2, with_target_head=True)
    wt = model.as_tensors(student)
    w = losses.LossWeights(fe=0.01, fc=0.1)
    total, bd = losses.total_objective(wt, teacher, X, Y, X_SRC, 5, 0.5, PAIR,
                                       PAIR, w, True)
    expected = bd.task + bd.mxp + w.fe * bd.fe + w.fc * bd.fc
    assert bd.total == pytest.approx(expected, rel=1e-12)
    assert float(total.values) == bd.total


def test_total_objective_without_mixup(student):
    wt = model.as_tensors(student)
    total, bd = losses.total_objective(wt, None, X, Y, None, 5, 0.0,
                                       np.arange(6), None,
                                       losses.LossWeights(), False)
    plain = losses.task_loss(X, Y, wt, 5)
    assert float(total.values) == float(plain.values)
    assert bd.mxp == 0.0 and bd.fe == 0.0 and bd.fc == 0.0
