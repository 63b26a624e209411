"""Reference attacks the progressive search is measured against: uniform
random flips in the quantized bit planes, single float32 exponent-bit flips
on the float model, and layer-restricted progressive runs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import attack, bits, nn
from .attack import AttackTrace, BitFlip, FlipRecord, TracePoint
from .bits import BitAddress


@dataclass
class BaselineConfig:
    mode: str = "random"  # random | exponent | layer-restricted
    budget: int = 100
    target_bit: int = 30
    layers: tuple | None = None
    seed: int = 0
    trials: int = 5

    def __post_init__(self):
        if self.mode not in ("random", "exponent", "layer-restricted"):
            raise ValueError(f"unknown baseline mode {self.mode!r}")
        if self.budget < 1:
            raise ValueError(f"budget must be >= 1, got {self.budget}")
        if not 0 <= self.target_bit <= 31:
            raise ValueError(f"target_bit must be a float32 bit index in [0, 31], got {self.target_bit}")
        if self.trials < 1:
            raise ValueError(f"trials must be >= 1, got {self.trials}")
        if self.mode == "layer-restricted" and not self.layers:
            raise ValueError("layer-restricted mode needs a non-empty layer set")


def _bit_layout(model):
    """(layer index, weight count, n_bits) per weighted layer, plus the total."""
    rows = []
    total = 0
    for i in model.weighted_indices():
        q = model.layers[i].q
        rows.append((i, q.num_weights, q.n_bits))
        total += q.num_bits
    return rows, total


def _global_bit_address(rows, flat):
    for layer, count, n_bits in rows:
        span = count * n_bits
        if flat < span:
            return BitAddress(layer, flat // n_bits, flat % n_bits)
        flat -= span
    raise IndexError("flat bit index out of range")


def random_quantized_flips(model, dataset, budget, seed):
    """Flip ``budget`` distinct uniformly chosen stored bits, one at a time.

    Validation accuracy is recorded after every flip; there is no attack
    sample, so sample_loss stays empty in the trace. Mutates the model.
    """
    if model.mode != "quantized":
        raise nn.ModeError("random_quantized_flips requires a quantized model")
    rows, total = _bit_layout(model)
    if budget < 0 or budget > total:
        raise ValueError(f"budget {budget} outside [0, {total}] available bits")
    rng = np.random.default_rng(seed)
    picks = rng.choice(total, size=budget, replace=False)
    clean = attack.snapshot_codes(model)
    val = nn.evaluate(model, dataset.test_images, dataset.test_labels)
    points = [TracePoint(0, 0, None, val.top1, val.top5)]
    records = []
    for k, flat in enumerate(picks, start=1):
        address = _global_bit_address(rows, int(flat))
        q = model.layers[address.layer].q
        codes = q.codes.reshape(-1)
        before = int(bits.encode(codes[address.offset], q.n_bits)[address.bit])
        bits.flip_bits_inplace(codes, [address.offset], [address.bit], q.n_bits)
        val = nn.evaluate(model, dataset.test_images, dataset.test_labels)
        records.append(FlipRecord(k, address.layer, (BitFlip(address, before, 1 - before),), math.nan, {}))
        points.append(
            TracePoint(k, attack._hamming_vs_snapshot(model, clean), None, val.top1, val.top5)
        )
    return AttackTrace(
        "random-flip", seed, attack._uniform_n_bits(model), attack.STATUS_COMPLETED, points, records
    )


def _eligible_float_bits(model, target_bit):
    """(layer, offset) of every nonzero weight whose float32 target bit is 0."""
    layers, offsets = [], []
    for i in model.weighted_indices():
        w = model.layers[i].weight.reshape(-1)
        u = w.astype(np.float32).view(np.uint32)
        mask = (w != 0.0) & (((u >> np.uint32(target_bit)) & np.uint32(1)) == 0)
        hits = np.nonzero(mask)[0]
        layers.append(np.full(len(hits), i, np.int64))
        offsets.append(hits)
    return np.concatenate(layers), np.concatenate(offsets)


def float_exponent_flip(model, dataset, seed, target_bit=30):
    """Set one float32 bit of a uniformly chosen eligible weight to 1.

    Works on the float-mode model: the weight is reinterpreted in float32,
    the target bit (IEEE numbering: 31 sign, 30..23 exponent, default the top
    exponent bit) is set, and the result is stored back. ``bit_address`` in
    the resulting trace therefore uses IEEE bit numbering, unlike quantized
    traces. Mutates the model.
    """
    if model.mode != "float":
        raise nn.ModeError("float_exponent_flip requires a float-mode model")
    if not 0 <= target_bit <= 31:
        raise ValueError(f"target_bit must be a float32 bit index in [0, 31], got {target_bit}")
    layer_ids, offsets = _eligible_float_bits(model, target_bit)
    if len(offsets) == 0:
        raise ValueError(f"no weight has float32 bit {target_bit} clear")
    rng = np.random.default_rng(seed)
    pick = int(rng.integers(len(offsets)))
    layer, offset = int(layer_ids[pick]), int(offsets[pick])
    clean_val = nn.evaluate(model, dataset.test_images, dataset.test_labels)
    flat = model.layers[layer].weight.reshape(-1)
    before = float(flat[offset])
    u = np.array([before], np.float32).view(np.uint32)
    u |= np.uint32(1) << np.uint32(target_bit)
    after = float(u.view(np.float32)[0])
    flat[offset] = after
    val = nn.evaluate(model, dataset.test_images, dataset.test_labels)
    points = [
        TracePoint(0, 0, None, clean_val.top1, clean_val.top5),
        TracePoint(1, 1, None, val.top1, val.top5),
    ]
    address = BitAddress(layer, offset, target_bit)
    records = [FlipRecord(1, layer, (BitFlip(address, 0, 1),), math.nan, {})]
    meta = {
        "target_bit": target_bit,
        "weight_before": before,
        "weight_after": after,
        "val_loss": val.loss,
        "non_finite_loss": not math.isfinite(val.loss),
    }
    return AttackTrace("exponent-flip", seed, None, attack.STATUS_COMPLETED, points, records, meta)


def layer_restricted_attack(model, dataset, allowed_layers, config):
    """Progressive search with the cross-layer argmax confined to a layer set.

    With ``allowed_layers`` equal to every weighted index this is exactly
    :func:`attack.run_attack`. Mutates the model.
    """
    allowed = tuple(int(i) for i in allowed_layers)
    if not allowed:
        raise ValueError("allowed_layers must be non-empty")
    return attack.run_attack(model, dataset, attack.restricted_config(config, allowed))
