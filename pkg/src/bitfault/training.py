"""Victim construction and deterministic mini-batch SGD."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import nn


class TrainingDiverged(RuntimeError):
    """Loss went non-finite during training."""


@dataclass
class TrainConfig:
    epochs: int = 5
    batch_size: int = 64
    lr: float = 0.02
    momentum: float = 0.9
    lr_decay: float = 1.0  # per-epoch multiplier
    seed: int = 0


@dataclass
class TrainResult:
    model: nn.ModelGraph
    train_top1: float
    test_top1: float


def _he(rng, shape, fan_in):
    return rng.normal(0.0, math.sqrt(2.0 / fan_in), shape)


def _xavier(rng, shape, fan_in):
    return rng.normal(0.0, math.sqrt(1.0 / fan_in), shape)


def desk_cnn(seed=0, input_shape=(1, 28, 28), classes=10, channels=(32, 24), kernel=5, hidden=48):
    """Two conv + two fc victim, ~94K weights at the default shape.

    The only activation sits right after conv1; the conv2 -> fc tail is kept
    purely linear so that nearly every weight lies on an unbroken linear path
    to the logits. That makes the victim transparent to single-weight faults
    (a huge perturbed weight of either sign reaches the logits instead of
    dying in a downstream ReLU), which is the fragility regime the float
    exponent-flip experiment studies at desk scale.
    """
    rng = np.random.default_rng(seed)
    c, h, w = input_shape
    c1, c2 = channels
    k = kernel
    h1, w1 = (h - k + 1) // 2, (w - k + 1) // 2
    h2, w2 = h1 - k + 1, w1 - k + 1
    flat = c2 * h2 * w2
    layers = [
        nn.Conv2d(_he(rng, (c1, c, k, k), c * k * k)),
        nn.ReLU(),
        nn.MaxPool(2),
        nn.Conv2d(_xavier(rng, (c2, c1, k, k), c1 * k * k)),
        nn.Flatten(),
        nn.FullyConnected(_xavier(rng, (hidden, flat), flat)),
        nn.FullyConnected(_xavier(rng, (classes, hidden), hidden)),
    ]
    return nn.ModelGraph(layers, input_shape)


def small_mlp(seed=0, input_shape=(1, 28, 28), classes=10, hidden=32):
    """Flatten -> fc -> relu -> fc; cheap victim for smoke runs."""
    rng = np.random.default_rng(seed)
    flat = int(np.prod(input_shape))
    layers = [
        nn.Flatten(),
        nn.FullyConnected(_he(rng, (hidden, flat), flat)),
        nn.ReLU(),
        nn.FullyConnected(_he(rng, (classes, hidden), hidden)),
    ]
    return nn.ModelGraph(layers, input_shape)


def train_victim(model, dataset, config):
    """SGD with momentum on a float-mode model; returns a trained copy.

    The input model is never mutated, so epochs=0 hands back a bit-identical
    clone. Raises :class:`TrainingDiverged` on the first non-finite batch loss.
    """
    if model.mode != "float":
        raise nn.ModeError("train_victim needs a float-mode model")
    if config.epochs < 0 or config.batch_size < 1:
        raise ValueError(f"bad schedule: epochs={config.epochs} batch_size={config.batch_size}")
    out = model.clone()
    rng = np.random.default_rng(config.seed)
    n = len(dataset.train_images)
    vel = {
        i: (np.zeros_like(out.layers[i].weight), np.zeros_like(out.layers[i].bias))
        for i in out.weighted_indices()
    }
    for epoch in range(config.epochs):
        lr = config.lr * config.lr_decay**epoch
        order = rng.permutation(n)
        for lo in range(0, n, config.batch_size):
            idx = order[lo : lo + config.batch_size]
            gm = nn.backward(out, dataset.train_images[idx], dataset.train_labels[idx])
            if not math.isfinite(gm.loss):
                raise TrainingDiverged(
                    f"epoch {epoch}, batch {lo // config.batch_size}: loss={gm.loss!r}"
                )
            for i in out.weighted_indices():
                vw, vb = vel[i]
                vw *= config.momentum
                vw -= lr * gm.weight_grads[i]
                vb *= config.momentum
                vb -= lr * gm.bias_grads[i]
                out.layers[i].weight += vw
                out.layers[i].bias += vb
    train_top1 = nn.evaluate(out, dataset.train_images, dataset.train_labels).top1
    test_top1 = nn.evaluate(out, dataset.test_images, dataset.test_labels).top1
    return TrainResult(out, train_top1, test_top1)
