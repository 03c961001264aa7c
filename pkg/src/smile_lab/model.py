"""Small CNN feature extractor with target and source classifier heads.

Weights live as plain numpy arrays; forward passes wrap them in autodiff
Tensors when gradients are needed.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict

import numpy as np

from . import tensor as T

_CKPT_MAGIC = b"SMWT"
_CKPT_VERSION = 1


class CheckpointError(ValueError):
    """Bad magic/version or architecture mismatch in a checkpoint."""


@dataclass
class Architecture:
    image_size: int = 16
    channels: int = 1
    conv1_filters: int = 8
    conv2_filters: int = 16
    kernel_size: int = 3
    feature_dim: int = 32
    n_source_classes: int = 20
    n_target_classes: int = 5

    def as_tuple(self):
        return (self.image_size, self.channels, self.conv1_filters,
                self.conv2_filters, self.kernel_size, self.feature_dim,
                self.n_source_classes, self.n_target_classes)


# Parameter names of the shared feature extractor.
FE_PARAMS = ("conv1_k", "conv1_b", "conv2_k", "conv2_b", "proj_w", "proj_b")
SRC_HEAD_PARAMS = ("src_w", "src_b")
TGT_HEAD_PARAMS = ("tgt_w", "tgt_b")


@dataclass
class ModelWeights:
    arch: Architecture
    params: Dict[str, np.ndarray] = field(default_factory=dict)

    def copy(self) -> "ModelWeights":
        return ModelWeights(self.arch,
                            {k: v.copy() for k, v in self.params.items()})

    def equal(self, other: "ModelWeights") -> bool:
        return (self.arch == other.arch
                and set(self.params) == set(other.params)
                and all(np.array_equal(self.params[k], other.params[k])
                        for k in self.params))

    @property
    def has_target_head(self) -> bool:
        return "tgt_w" in self.params


def _head_init(rng: np.random.Generator, d: int, n_classes: int):
    bound = 1.0 / np.sqrt(d)
    w = rng.uniform(-bound, bound, size=(d, n_classes))
    b = rng.uniform(-bound, bound, size=(n_classes,))
    return w, b


def init_weights(arch: Architecture, seed: int,
                 with_target_head: bool = False) -> ModelWeights:
    """He-style init for conv/dense, uniform [-1/sqrt(d), 1/sqrt(d)] heads."""
    rng = np.random.default_rng(seed)
    k = arch.kernel_size
    params: Dict[str, np.ndarray] = {}
    fan1 = k * k * arch.channels
    params["conv1_k"] = rng.normal(
        0.0, np.sqrt(2.0 / fan1), size=(k, k, arch.channels, arch.conv1_filters))
    params["conv1_b"] = np.zeros(arch.conv1_filters)
    fan2 = k * k * arch.conv1_filters
    params["conv2_k"] = rng.normal(
        0.0, np.sqrt(2.0 / fan2), size=(k, k, arch.conv1_filters, arch.conv2_filters))
    params["conv2_b"] = np.zeros(arch.conv2_filters)
    params["proj_w"] = rng.normal(
        0.0, np.sqrt(2.0 / arch.conv2_filters),
        size=(arch.conv2_filters, arch.feature_dim))
    params["proj_b"] = np.zeros(arch.feature_dim)
    params["src_w"], params["src_b"] = _head_init(
        rng, arch.feature_dim, arch.n_source_classes)
    if with_target_head:
        params["tgt_w"], params["tgt_b"] = _head_init(
            rng, arch.feature_dim, arch.n_target_classes)
    return ModelWeights(arch, params)


def as_tensors(weights: ModelWeights) -> Dict[str, T.Tensor]:
    """Fresh leaf Tensors for one forward/backward pass."""
    return {k: T.Tensor(v) for k, v in weights.params.items()}


def _global_mean_pool(x: T.Tensor) -> T.Tensor:
    # (N, H, W, C) -> (N, C), spatial mean
    n, h, w, c = x.values.shape
    vals = x.values.mean(axis=(1, 2))

    def backward(g):
        x._accumulate(np.broadcast_to(
            g[:, None, None, :] / (h * w), x.values.shape))

    return T.Tensor(vals, (x,), backward)


def feature_extract_t(x: np.ndarray, wt: Dict[str, T.Tensor]) -> T.Tensor:
    """conv-relu-conv-relu-pool-dense-relu on a batch (N, H, W, C)."""
    if x.ndim != 4:
        raise ValueError("expected a batch of shape (N, H, W, C)")
    h = T.relu(T.add(T.conv2d(T.constant(x), wt["conv1_k"]), wt["conv1_b"]))
    h = T.relu(T.add(T.conv2d(h, wt["conv2_k"]), wt["conv2_b"]))
    pooled = _global_mean_pool(h)
    return T.relu(T.add(T.matmul(pooled, wt["proj_w"]), wt["proj_b"]))


def target_logits_t(x: np.ndarray, wt: Dict[str, T.Tensor]) -> T.Tensor:
    feats = feature_extract_t(x, wt)
    return T.add(T.matmul(feats, wt["tgt_w"]), wt["tgt_b"])


def source_logits_t(x: np.ndarray, wt: Dict[str, T.Tensor]) -> T.Tensor:
    feats = feature_extract_t(x, wt)
    return T.add(T.matmul(feats, wt["src_w"]), wt["src_b"])


def _conv2d_np(x: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    # same padding/stride semantics as tensor.conv2d, without the graph
    n, h, w, cin = x.shape
    k, cout = kernel.shape[0], kernel.shape[3]
    p = k // 2
    padded = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))
    windows = np.lib.stride_tricks.sliding_window_view(
        padded, (k, k), axis=(1, 2)).transpose(0, 1, 2, 4, 5, 3)
    cols = windows.reshape(n * h * w, k * k * cin)
    return (cols @ kernel.reshape(k * k * cin, cout)).reshape(n, h, w, cout)


def feature_extract(x: np.ndarray, weights: ModelWeights) -> np.ndarray:
    """Gradient-free feature extraction (teacher / evaluation path)."""
    if x.ndim != 4:
        raise ValueError("expected a batch of shape (N, H, W, C)")
    p = weights.params
    h = np.maximum(_conv2d_np(x, p["conv1_k"]) + p["conv1_b"], 0.0)
    h = np.maximum(_conv2d_np(h, p["conv2_k"]) + p["conv2_b"], 0.0)
    pooled = h.mean(axis=(1, 2))
    return np.maximum(pooled @ p["proj_w"] + p["proj_b"], 0.0)


def target_logits(x: np.ndarray, weights: ModelWeights) -> np.ndarray:
    feats = feature_extract(x, weights)
    return feats @ weights.params["tgt_w"] + weights.params["tgt_b"]


def source_logits(x: np.ndarray, weights: ModelWeights) -> np.ndarray:
    feats = feature_extract(x, weights)
    return feats @ weights.params["src_w"] + weights.params["src_b"]


def init_from_pretrained(pretrained: ModelWeights, seed: int):
    """Student copies the pretrained FE and source head and gets a fresh
    target head; teacher is the same copy without a target head."""
    for name in FE_PARAMS + SRC_HEAD_PARAMS:
        if name not in pretrained.params:
            raise CheckpointError(f"pretrained weights missing {name}")
    student = ModelWeights(
        pretrained.arch,
        {k: pretrained.params[k].copy()
         for k in FE_PARAMS + SRC_HEAD_PARAMS})
    rng = np.random.default_rng(seed)
    student.params["tgt_w"], student.params["tgt_b"] = _head_init(
        rng, pretrained.arch.feature_dim, pretrained.arch.n_target_classes)
    teacher = ModelWeights(
        pretrained.arch,
        {k: pretrained.params[k].copy()
         for k in FE_PARAMS + SRC_HEAD_PARAMS})
    return student, teacher


def snapshot(weights: ModelWeights) -> ModelWeights:
    """Mutation-independent deep copy (the teacher update)."""
    return weights.copy()


def save_checkpoint(weights: ModelWeights, path) -> None:
    arch_vals = weights.arch.as_tuple()
    names = sorted(weights.params)
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sI", _CKPT_MAGIC, _CKPT_VERSION))
        fh.write(struct.pack(f"<{len(arch_vals)}I", *arch_vals))
        fh.write(struct.pack("<I", len(names)))
        for name in names:
            raw_name = name.encode()
            arr = weights.params[name]
            fh.write(struct.pack("<I", len(raw_name)))
            fh.write(raw_name)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.astype("<f8").tobytes())


def load_checkpoint(path) -> ModelWeights:
    raw = Path(path).read_bytes()
    try:
        off = struct.calcsize("<4sI")
        magic, version = struct.unpack("<4sI", raw[:off])
        if magic != _CKPT_MAGIC:
            raise CheckpointError("bad checkpoint magic")
        if version != _CKPT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        n_arch = len(Architecture().as_tuple())
        arch_vals = struct.unpack_from(f"<{n_arch}I", raw, off)
        off += 4 * n_arch
        arch = Architecture(*arch_vals)
        (n_params,) = struct.unpack_from("<I", raw, off)
        off += 4
        params: Dict[str, np.ndarray] = {}
        for _ in range(n_params):
            (name_len,) = struct.unpack_from("<I", raw, off)
            off += 4
            name = raw[off:off + name_len].decode()
            off += name_len
            (ndim,) = struct.unpack_from("<I", raw, off)
            off += 4
            shape = struct.unpack_from(f"<{ndim}I", raw, off)
            off += 4 * ndim
            count = int(np.prod(shape)) if shape else 1
            arr = np.frombuffer(raw, dtype="<f8", count=count,
                                offset=off).reshape(shape).copy()
            off += 8 * count
            params[name] = arr
    except struct.error as exc:
        raise CheckpointError(f"truncated checkpoint: {exc}") from exc
    return ModelWeights(arch, params)
