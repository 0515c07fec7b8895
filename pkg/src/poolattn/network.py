"""Desk-scale two-branch segmentation network and its training demo.

A small conv stem feeds the same feature map to the spatial-pool and
channel-pool attention branches; their outputs are concatenated along
channels and fused by a 1x1 classifier. Training on synthetic rectangle
images exists to demonstrate the gates growing away from their zero
initialization, not to claim segmentation quality.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import ops
from .attention import (CpaGrads, CpaMode, CpaModule, SpaGrads, SpaMode, SpaModule,
                        cpa_backward, cpa_forward, init_projection, spa_backward,
                        spa_forward, spa_module)
from .errors import ConfigurationError, NonFiniteError, TrainingDivergenceError
from .pooling import TOY_EVEN_MATCHED, TOY_ODD, TOY_ODD_MATCHED, PyramidSpec
from .rng import Rng

STEM_KERNEL = 3


@dataclass
class DpaNetMini:
    """Stem -> parallel SPA/CPA -> channel concat -> 1x1 fuse."""

    stem_w1: np.ndarray      # C x 3 x k x k
    stem_w2: np.ndarray      # C x C x k x k
    spa: SpaModule
    cpa: CpaModule
    fuse_w: np.ndarray       # classes x 2C

    @property
    def channels(self) -> int:
        return self.stem_w1.shape[0]

    @property
    def classes(self) -> int:
        return self.fuse_w.shape[0]

    def parameters(self) -> list[tuple[str, np.ndarray]]:
        """Weight arrays by name; the scalar gates are handled separately by the trainer."""
        named = [("stem_w1", self.stem_w1), ("stem_w2", self.stem_w2),
                 ("spa.w_q", self.spa.proj.w_q), ("spa.w_k", self.spa.proj.w_k),
                 ("spa.w_v", self.spa.proj.w_v)]
        if self.cpa.proj is not None:
            named += [("cpa.w_q", self.cpa.proj.w_q), ("cpa.w_k", self.cpa.proj.w_k),
                      ("cpa.w_v", self.cpa.proj.w_v)]
        named.append(("fuse_w", self.fuse_w))
        return named


def build_model(seed: int, channels: int = 16, classes: int = 2,
                spa_mode: SpaMode = SpaMode.ONLY_ODD,
                odd_spec: PyramidSpec = TOY_ODD,
                even_spec: PyramidSpec | None = None,
                cpa_mode: CpaMode = CpaMode.SUBTRACT,
                cpa_proj: bool = False,
                dtype: np.dtype = ops.F64) -> DpaNetMini:
    """Seed-deterministic model with both gates at exactly 0."""
    if spa_mode is SpaMode.MIXED and even_spec is None:
        odd_spec, even_spec = TOY_ODD_MATCHED, TOY_EVEN_MATCHED
    rng = Rng(seed)
    stem_w1 = ops.init_weight(rng, (channels, 3, STEM_KERNEL, STEM_KERNEL),
                              3 * STEM_KERNEL * STEM_KERNEL, dtype)
    stem_w2 = ops.init_weight(rng, (channels, channels, STEM_KERNEL, STEM_KERNEL),
                              channels * STEM_KERNEL * STEM_KERNEL, dtype)
    spa = spa_module(init_projection(rng, channels, dtype=dtype), spa_mode,
                     odd_spec=odd_spec, even_spec=even_spec)
    cpa = CpaModule(init_projection(rng, channels, dtype=dtype) if cpa_proj else None,
                    cpa_mode)
    fuse_w = ops.init_weight(rng, (classes, 2 * channels), 2 * channels, dtype)
    return DpaNetMini(stem_w1, stem_w2, spa, cpa, fuse_w)


def _stem(model: DpaNetMini, image: np.ndarray):
    pre1 = ops.conv2d_same(image, model.stem_w1)
    f1 = ops.relu(pre1)
    pre2 = ops.conv2d_same(f1, model.stem_w2)
    f2 = ops.relu(pre2)
    return pre1, f1, pre2, f2


def forward(model: DpaNetMini, image: np.ndarray) -> np.ndarray:
    """Logits with the same spatial size as the input image."""
    _, _, _, feats = _stem(model, image)
    spa_out, _ = spa_forward(feats, model.spa)
    cpa_out, _ = cpa_forward(feats, model.cpa)
    return ops.conv1x1(ops.concat_channels(spa_out, cpa_out), model.fuse_w)


@dataclass
class NetGrads:
    stem_w1: np.ndarray
    stem_w2: np.ndarray
    spa: SpaGrads
    cpa: CpaGrads
    fuse_w: np.ndarray
    image: np.ndarray


def backward(model: DpaNetMini, image: np.ndarray, grad_logits: np.ndarray) -> NetGrads:
    """Analytic gradients of a logits-contracted loss wrt every learnable and the image."""
    pre1, f1, pre2, feats = _stem(model, image)
    spa_out, _ = spa_forward(feats, model.spa)
    cpa_out, _ = cpa_forward(feats, model.cpa)
    cat = ops.concat_channels(spa_out, cpa_out)

    c, h, w = cat.shape
    g_flat = grad_logits.reshape(model.classes, h * w)
    d_fuse = ops.matmul(g_flat, ops.transpose2d(cat.reshape(c, h * w)))
    d_cat = ops.matmul(ops.transpose2d(model.fuse_w), g_flat).reshape(c, h, w)
    half = model.channels
    sg = spa_backward(feats, model.spa, np.ascontiguousarray(d_cat[:half]))
    cg = cpa_backward(feats, model.cpa, np.ascontiguousarray(d_cat[half:]))
    d_feats = sg.x + cg.x

    d_pre2 = d_feats * (pre2 > 0)
    d_f1, d_w2 = ops.conv2d_same_backward(f1, model.stem_w2, d_pre2)
    d_pre1 = d_f1 * (pre1 > 0)
    d_img, d_w1 = ops.conv2d_same_backward(image, model.stem_w1, d_pre1)
    return NetGrads(d_w1, d_w2, sg, cg, d_fuse, d_img)


# --- synthetic data -------------------------------------------------------

@dataclass(frozen=True)
class SynthSample:
    image: np.ndarray        # 3 x S x S
    labels: np.ndarray       # S x S int class ids {0 background, 1 object}


def synth_dataset(seed: int, count: int, size: int) -> list[SynthSample]:
    """Rectangle-on-background images; object covers 10-60% of the pixels."""
    if size < 8:
        raise ConfigurationError(f"synthetic images need size >= 8, got {size}")
    rng = Rng(seed)
    samples = []
    for _ in range(count):
        lo, hi = 0.10 * size * size, 0.60 * size * size
        while True:
            rh = rng.next_int(size // 4, size - 2)
            rw = rng.next_int(size // 4, size - 2)
            if lo <= rh * rw <= hi:
                break
        top = rng.next_int(0, size - rh)
        left = rng.next_int(0, size - rw)
        while True:
            bg = np.array([0.2 + 0.6 * rng.next_unit() for _ in range(3)])
            fg = np.array([0.2 + 0.6 * rng.next_unit() for _ in range(3)])
            if np.linalg.norm(fg - bg) >= 0.4:
                break
        labels = np.zeros((size, size), dtype=np.int64)
        labels[top : top + rh, left : left + rw] = 1
        image = np.where(labels[None, :, :] == 1, fg[:, None, None], bg[:, None, None])
        image = image + rng.fill_uniform((3, size, size), 0.05)
        samples.append(SynthSample(np.ascontiguousarray(image), labels))
    return samples


# --- training -------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    lr: float
    momentum: float
    steps: int
    seed: int
    poly_power: float | None = None
    image_size: int = 16
    batch: int = 4

    def __post_init__(self):
        if self.steps < 1:
            raise ConfigurationError(f"steps must be >= 1, got {self.steps}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigurationError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.batch < 1:
            raise ConfigurationError(f"batch must be >= 1, got {self.batch}")


def poly_lr(lr_initial: float, iteration: int, total: int, power: float = 0.9) -> float:
    """Polynomial decay: lr * (1 - iter/total)^power; hits 0 exactly at iter == total."""
    return lr_initial * (1.0 - iteration / total) ** power


@dataclass
class TrainedReport:
    final_loss: float
    pixel_accuracy: float
    lambda_final: float
    mu_final: float
    loss_curve: list[float]
    lambda_curve: list[float]
    mu_curve: list[float]

    def as_dict(self) -> dict:
        return {
            "final_loss": self.final_loss,
            "pixel_accuracy": self.pixel_accuracy,
            "lambda_final": self.lambda_final,
            "mu_final": self.mu_final,
            "loss_curve": self.loss_curve,
            "lambda_curve": self.lambda_curve,
            "mu_curve": self.mu_curve,
        }


def pixel_accuracy(model: DpaNetMini, data: list[SynthSample]) -> float:
    correct = 0
    total = 0
    for sample in data:
        pred = np.argmax(forward(model, sample.image), axis=0)
        correct += int((pred == sample.labels).sum())
        total += sample.labels.size
    return correct / total


def train(model: DpaNetMini, data: list[SynthSample], cfg: TrainConfig) -> TrainedReport:
    """SGD with momentum and optional poly decay; mutates the model in place."""
    if not data:
        raise ConfigurationError("training needs at least one sample")
    max_size = max(model.spa.k_spec.max_size, model.spa.v_spec.max_size)
    if cfg.image_size < max_size:
        raise ConfigurationError(f"image size {cfg.image_size} is below the largest "
                                 f"pyramid size {max_size}")
    if data[0].image.shape[1] != cfg.image_size:
        raise ConfigurationError(f"config image size {cfg.image_size} does not match "
                                 f"data samples of size {data[0].image.shape[1]}")

    lam = np.array(model.spa.lam, dtype=np.float64)
    mu = np.array(model.cpa.mu, dtype=np.float64)
    params = [arr for _, arr in model.parameters()] + [lam, mu]
    velocity = [np.zeros_like(p) for p in params]

    loss_curve: list[float] = []
    lam_curve: list[float] = []
    mu_curve: list[float] = []
    for step in range(cfg.steps):
        start = (step * cfg.batch) % len(data)
        indices = sorted((start + i) % len(data) for i in range(cfg.batch))
        grads = [np.zeros_like(p) for p in params]
        loss_total = 0.0
        for idx in indices:
            sample = data[idx]
            try:
                logits = forward(model, sample.image)
                loss, d_logits = ops.cross_entropy_logits(logits, sample.labels)
                net_grads = backward(model, sample.image, d_logits)
            except NonFiniteError as exc:
                raise TrainingDivergenceError(f"non-finite loss at step {step}") from exc
            loss_total += loss
            flat = [net_grads.stem_w1, net_grads.stem_w2, net_grads.spa.w_q,
                    net_grads.spa.w_k, net_grads.spa.w_v]
            if model.cpa.proj is not None:
                flat += [net_grads.cpa.w_q, net_grads.cpa.w_k, net_grads.cpa.w_v]
            flat += [net_grads.fuse_w, np.array(net_grads.spa.lam),
                     np.array(net_grads.cpa.mu)]
            for acc, g in zip(grads, flat):
                acc += g
        loss_mean = loss_total / len(indices)
        if not math.isfinite(loss_mean):
            raise TrainingDivergenceError(f"non-finite loss at step {step}")
        for g in grads:
            g /= len(indices)
        lr_t = (poly_lr(cfg.lr, step, cfg.steps, cfg.poly_power)
                if cfg.poly_power is not None else cfg.lr)
        ops.sgd_step(params, grads, lr_t, cfg.momentum, velocity)
        model.spa.lam = float(lam)
        model.cpa.mu = float(mu)
        loss_curve.append(loss_mean)
        lam_curve.append(model.spa.lam)
        mu_curve.append(model.cpa.mu)

    return TrainedReport(
        final_loss=loss_curve[-1],
        pixel_accuracy=pixel_accuracy(model, data),
        lambda_final=model.spa.lam,
        mu_final=model.cpa.mu,
        loss_curve=loss_curve,
        lambda_curve=lam_curve,
        mu_curve=mu_curve,
    )
