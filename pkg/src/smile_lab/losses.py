"""The five loss terms of the self-distilled mixup objective.

All terms are computed on one shared set of student weight Tensors so a
single backward pass yields the full gradient. Teacher outputs enter as
constants; no gradient ever reaches teacher parameters.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict

import numpy as np

from . import model, tensor as T
from .mixup import mix


@dataclass
class LossWeights:
    fe: float = 0.01
    fc: float = 0.1

    def __post_init__(self):
        if self.fe < 0 or self.fc < 0:
            raise ValueError("loss weights must be >= 0")


@dataclass
class LossBreakdown:
    task: float = 0.0
    mxp: float = 0.0
    fe: float = 0.0
    fc: float = 0.0
    total: float = 0.0


def one_hot(labels: np.ndarray, n_classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    if len(labels) and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValueError("label out of range")
    out = np.zeros((len(labels), n_classes))
    out[np.arange(len(labels)), labels] = 1.0
    return out


def _mean_row_sumsq(diff: T.Tensor) -> T.Tensor:
    return T.scale(T.sum_of_squares(diff), 1.0 / diff.values.shape[0])


def task_loss(x: np.ndarray, y: np.ndarray,
              student_t: Dict[str, T.Tensor], n_classes: int) -> T.Tensor:
    logits = model.target_logits_t(x, student_t)
    return T.softmax_cross_entropy(logits, T.constant(one_hot(y, n_classes)))


def _weighted_ce(logits: T.Tensor, y_i: np.ndarray, y_j: np.ndarray,
                 n_classes: int, lam: float) -> T.Tensor:
    loss_i = T.softmax_cross_entropy(logits, T.constant(one_hot(y_i, n_classes)))
    if lam == 0.0:
        return loss_i
    loss_j = T.softmax_cross_entropy(logits, T.constant(one_hot(y_j, n_classes)))
    if lam == 1.0:
        return loss_j
    return T.add(T.scale(loss_i, 1.0 - lam), T.scale(loss_j, lam))


def mixup_loss(x: np.ndarray, y: np.ndarray, student_t: Dict[str, T.Tensor],
               n_classes: int, lam: float, pairing: np.ndarray) -> T.Tensor:
    """Sample-to-label mixup: lam-weighted cross-entropy on mixed inputs."""
    x_mixed = mix(x, x[pairing], lam)
    logits = model.target_logits_t(x_mixed, student_t)
    return _weighted_ce(logits, y, y[pairing], n_classes, lam)


def feature_mixup_loss(x: np.ndarray, student_t: Dict[str, T.Tensor],
                       teacher: model.ModelWeights, lam: float,
                       pairing: np.ndarray) -> T.Tensor:
    """Sample-to-feature mixup: student features on mixed inputs pulled
    toward the mix of teacher features on the unmixed inputs."""
    x_mixed = mix(x, x[pairing], lam)
    student_feats = model.feature_extract_t(x_mixed, student_t)
    teacher_feats = model.feature_extract(x, teacher)
    target = mix(teacher_feats, teacher_feats[pairing], lam)
    return _mean_row_sumsq(T.subtract(student_feats, T.constant(target)))


def source_label_mixup_loss(x_src: np.ndarray, student_t: Dict[str, T.Tensor],
                            teacher: model.ModelWeights, lam: float,
                            pairing: np.ndarray,
                            compare_space: str = "logits") -> T.Tensor:
    """Source-domain sample-to-label mixup: student source-head output on
    mixed inputs vs the mix of teacher source-head outputs.

    compare_space selects raw logits (default) or softmax probabilities.
    """
    if compare_space not in ("logits", "probs"):
        raise ValueError(f"unknown compare space {compare_space!r}")
    x_mixed = mix(x_src, x_src[pairing], lam)
    student_out = model.source_logits_t(x_mixed, student_t)
    teacher_out = model.source_logits(x_src, teacher)
    if compare_space == "probs":
        student_out = T.softmax(student_out)
        teacher_out = _softmax_rows(teacher_out)
    target = mix(teacher_out, teacher_out[pairing], lam)
    return _mean_row_sumsq(T.subtract(student_out, T.constant(target)))


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def triplet_loss(student_t: Dict[str, T.Tensor], teacher: model.ModelWeights,
                 x_tgt: np.ndarray, y_tgt: np.ndarray,
                 x_src: np.ndarray | None, n_target_classes: int,
                 lam: float, tgt_pairing: np.ndarray,
                 src_pairing: np.ndarray | None,
                 weights: LossWeights,
                 compare_space: str = "logits"):
    """gamma_fe * L_fe + gamma_fc * L_fc + L_mxp, with per-term values.

    Terms with zero weight are skipped entirely (they contribute neither to
    the value nor the graph), which keeps reduced modes bit-identical to the
    plain-mixup trainer.
    """
    if weights.fe > 0:
        # one forward on the mixed batch feeds both the mixup CE and the
        # feature term
        x_mixed = mix(x_tgt, x_tgt[tgt_pairing], lam)
        student_feats = model.feature_extract_t(x_mixed, student_t)
        logits = T.add(T.matmul(student_feats, student_t["tgt_w"]),
                       student_t["tgt_b"])
        mxp = _weighted_ce(logits, y_tgt, y_tgt[tgt_pairing], n_target_classes,
                           lam)
        teacher_feats = model.feature_extract(x_tgt, teacher)
        target = mix(teacher_feats, teacher_feats[tgt_pairing], lam)
        fe = _mean_row_sumsq(T.subtract(student_feats, T.constant(target)))
        parts = {"mxp": float(mxp.values), "fe": float(fe.values), "fc": 0.0}
        total = T.add(mxp, T.scale(fe, weights.fe))
    else:
        total = mixup_loss(x_tgt, y_tgt, student_t, n_target_classes, lam,
                           tgt_pairing)
        parts = {"mxp": float(total.values), "fe": 0.0, "fc": 0.0}
    if weights.fc > 0:
        if x_src is None or src_pairing is None:
            raise ValueError("source batch required when gamma_fc > 0")
        fc = source_label_mixup_loss(x_src, student_t, teacher, lam,
                                     src_pairing, compare_space)
        parts["fc"] = float(fc.values)
        total = T.add(total, T.scale(fc, weights.fc))
    return total, parts


def total_objective(student_t: Dict[str, T.Tensor],
                    teacher: model.ModelWeights | None,
                    x_tgt: np.ndarray, y_tgt: np.ndarray,
                    x_src: np.ndarray | None, n_target_classes: int,
                    lam: float, tgt_pairing: np.ndarray,
                    src_pairing: np.ndarray | None,
                    weights: LossWeights, use_mixup: bool,
                    compare_space: str = "logits"):
    """Task cross-entropy plus (optionally) the triplet regularizer."""
    task = task_loss(x_tgt, y_tgt, student_t, n_target_classes)
    breakdown = LossBreakdown(task=float(task.values))
    total = task
    if use_mixup:
        tri, parts = triplet_loss(student_t, teacher, x_tgt, y_tgt, x_src,
                                  n_target_classes, lam, tgt_pairing,
                                  src_pairing, weights, compare_space)
        breakdown.mxp = parts["mxp"]
        breakdown.fe = parts["fe"]
        breakdown.fc = parts["fc"]
        total = T.add(total, tri)
    breakdown.total = float(total.values)
    return total, breakdown
