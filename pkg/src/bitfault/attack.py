"""Progressive gradient-guided search for the stored weight bits whose flips
most increase the victim's loss.

Each iteration ranks every layer's bits by the magnitude of the loss gradient
at the bit (restricted to flips the saturating rule can actually perform),
trial-flips the winners per layer to measure the realized attack-sample loss,
restores bit-exactly, and then permanently commits the flips of the layer
whose trial loss was largest. The loop repeats from the perturbed state until
validation accuracy reaches the stop threshold or a budget runs out.
"""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from . import bits, data, nn
from .bits import BitAddress


class NoEffectiveFlipError(RuntimeError):
    """Every allowed layer's gradient-directed flips are saturated or zero."""


class NonFiniteLossError(RuntimeError):
    """Gradient computation met a non-finite loss; carries the loss value."""

    def __init__(self, loss):
        super().__init__(f"non-finite loss {loss!r} during gradient computation")
        self.loss = loss


class TopologyError(ValueError):
    """Models disagree on layer structure, shapes, or code widths."""


STATUS_STOP = "reached-stop-accuracy"
STATUS_MAX_ITER = "max-iterations"
STATUS_BUDGET = "hamming-budget"
STATUS_NON_FINITE = "non-finite-loss"
STATUS_COMPLETED = "completed"


@dataclass
class AttackConfig:
    """Knobs for one progressive-search run.

    ``stop_accuracy=None`` resolves at run time to random guessing plus one
    point (1/num_classes + 0.01) from the model's output width. ``layers``
    restricts the cross-layer argmax to the given model layer indices.
    """

    flips_per_iter: int = 1
    sample_size: int = 128
    max_iterations: int = 50
    stop_accuracy: float | None = None
    hamming_budget: int | None = None
    seed: int = 0
    layers: tuple | None = None

    def __post_init__(self):
        if self.flips_per_iter < 1:
            raise ValueError(f"flips_per_iter must be >= 1, got {self.flips_per_iter}")
        if self.sample_size < 1:
            raise ValueError(f"sample_size must be >= 1, got {self.sample_size}")
        if self.max_iterations < 0:
            raise ValueError(f"max_iterations must be >= 0, got {self.max_iterations}")
        if self.stop_accuracy is not None and not 0.0 <= self.stop_accuracy <= 1.0:
            raise ValueError(f"stop_accuracy must lie in [0, 1], got {self.stop_accuracy}")
        if self.hamming_budget is not None and self.hamming_budget < 0:
            raise ValueError(f"hamming_budget must be >= 0, got {self.hamming_budget}")
        if self.layers is not None:
            self.layers = tuple(int(i) for i in self.layers)


@dataclass(frozen=True)
class BitFlip:
    address: BitAddress
    before: int
    after: int


@dataclass
class LayerCandidate:
    """In-layer election result: the elected flips and their trial loss.

    ``flips`` is empty and ``loss`` is -inf when the layer has no
    mask-effective bit (the sentinel the cross-layer argmax skips).
    """

    flips: tuple
    loss: float


@dataclass
class FlipRecord:
    """One committed iteration: where the argmax landed and why."""

    iteration: int
    layer: int
    flips: tuple
    loss: float
    candidate_losses: dict


@dataclass
class TracePoint:
    """Post-iteration snapshot; index 0 is the clean state."""

    n_flips: int
    hamming: int
    sample_loss: float | None
    val_top1: float
    val_top5: float | None


@dataclass
class AttackTrace:
    kind: str
    seed: int
    n_bits: int | None
    status: str
    points: list
    records: list
    meta: dict = field(default_factory=dict)

    @property
    def n_flips(self):
        return self.points[-1].n_flips

    @property
    def hamming(self):
        return self.points[-1].hamming

    @property
    def clean_top1(self):
        return self.points[0].val_top1

    @property
    def final_top1(self):
        return self.points[-1].val_top1


def _require_quantized(model):
    if model.mode != "quantized":
        raise nn.ModeError("attack requires a quantized model")


def _allowed_layers(model, config):
    weighted = model.weighted_indices()
    if config.layers is None:
        return weighted
    bad = [i for i in config.layers if i not in weighted]
    if bad or not config.layers:
        raise ValueError(f"layers must be a non-empty subset of weighted indices {weighted}, got {config.layers}")
    return config.layers


def _elect_bits(q, grad_flat, flips_per_iter):
    """Top mask-effective bits of one layer by |bit gradient|.

    Ties break to the lowest flat bit index (stable argsort); bits with zero
    gradient or already sitting at their gradient-directed value are excluded.
    Returns None when nothing is electable.
    """
    coeffs = bits.bit_coefficients(q.n_bits).astype(nn.FLOAT)
    bit_grads = grad_flat[:, None] * (q.step * coeffs)
    plane = bits.encode_plane(q.codes.reshape(-1), q.n_bits)
    toward_one = bit_grads > 0.0
    effective = (bit_grads != 0.0) & (plane.astype(bool) != toward_one)
    count = int(effective.sum())
    if count == 0:
        return None
    score = np.where(effective, np.abs(bit_grads), -1.0).reshape(-1)
    order = np.argsort(-score, kind="stable")
    chosen = order[: min(flips_per_iter, count)]
    offsets = chosen // q.n_bits
    positions = chosen % q.n_bits
    return offsets, positions, plane[offsets, positions]


def in_layer_search(model, layer_index, sample, flips_per_iter=1, grads=None):
    """Elect, trial-flip, measure, and bit-exactly restore one layer.

    The model leaves this function in the exact state it entered; the trial
    loss is the attack-sample loss with only this layer's elected flips
    applied. ``grads`` lets callers share one backward pass across layers.
    """
    _require_quantized(model)
    layer = model.layers[layer_index]
    if not layer.weighted:
        raise ValueError(f"layer {layer_index} ({layer.kind}) has no weights")
    if grads is None:
        grads = nn.backward(model, sample.inputs, sample.pseudo_targets)
    elected = _elect_bits(layer.q, grads.weight_grads[layer_index].reshape(-1), flips_per_iter)
    if elected is None:
        return LayerCandidate((), float("-inf"))
    offsets, positions, before = elected
    flat = layer.q.codes.reshape(-1)
    bits.flip_bits_inplace(flat, offsets, positions, layer.q.n_bits)
    loss = nn.cross_entropy(nn.forward(model, sample.inputs), sample.pseudo_targets)
    bits.flip_bits_inplace(flat, offsets, positions, layer.q.n_bits)  # exact undo
    flips = tuple(
        BitFlip(BitAddress(layer_index, int(o), int(p)), int(b), int(1 - b))
        for o, p, b in zip(offsets, positions, before)
    )
    return LayerCandidate(flips, float(loss))


def cross_layer_select(candidate_losses):
    """Layer index with the largest trial loss; ties go to the lowest index.

    NaN losses are skipped; if every candidate is the -inf sentinel (or NaN)
    there is nothing to commit and :class:`NoEffectiveFlipError` is raised.
    """
    if not candidate_losses:
        raise ValueError("cross_layer_select: empty candidate set")
    best_layer, best_loss = None, float("-inf")
    for layer in sorted(candidate_losses):
        loss = candidate_losses[layer]
        if not math.isnan(loss) and loss > best_loss:
            best_layer, best_loss = layer, loss
    if best_layer is None or best_loss == float("-inf"):
        raise NoEffectiveFlipError("no effective flip available")
    return best_layer


def _apply_flips(model, flips):
    for flip in flips:
        layer = model.layers[flip.address.layer]
        bits.flip_bits_inplace(
            layer.q.codes.reshape(-1), [flip.address.offset], [flip.address.bit], layer.q.n_bits
        )


def pbs_iteration(model, sample, config, iteration=1):
    """One full progressive step: per-layer elections, then commit the argmax.

    Mutates the model by exactly the committed flips. Gradients are taken at
    the current (already perturbed) state.
    """
    allowed = _allowed_layers(model, config)
    grads = nn.backward(model, sample.inputs, sample.pseudo_targets)
    if not grads.finite:
        raise NonFiniteLossError(grads.loss)
    candidates = {
        i: in_layer_search(model, i, sample, config.flips_per_iter, grads) for i in allowed
    }
    losses = {i: c.loss for i, c in candidates.items()}
    winner = cross_layer_select(losses)
    _apply_flips(model, candidates[winner].flips)
    return FlipRecord(iteration, winner, candidates[winner].flips, candidates[winner].loss, losses)


def snapshot_codes(model):
    """Copies of every weighted layer's codes, for exact restore/distance."""
    _require_quantized(model)
    return [model.layers[i].q.codes.copy() for i in model.weighted_indices()]


def _hamming_vs_snapshot(model, snapshot):
    total = 0
    for codes, i in zip(snapshot, model.weighted_indices()):
        q = model.layers[i].q
        total += bits.hamming_codes(q.codes, codes, q.n_bits)
    return total


def hamming_distance(model_a, model_b):
    """Stored-bit Hamming distance between two same-topology quantized models."""
    _require_quantized(model_a)
    _require_quantized(model_b)
    if len(model_a.layers) != len(model_b.layers):
        raise TopologyError(
            f"layer count differs: {len(model_a.layers)} vs {len(model_b.layers)}"
        )
    total = 0
    for i, (la, lb) in enumerate(zip(model_a.layers, model_b.layers)):
        if la.kind != lb.kind:
            raise TopologyError(f"layer {i}: kind {la.kind} vs {lb.kind}")
        if not la.weighted:
            continue
        if la.weight_shape != lb.weight_shape or la.q.n_bits != lb.q.n_bits:
            raise TopologyError(
                f"layer {i}: shape/width mismatch "
                f"{la.weight_shape}/{la.q.n_bits} vs {lb.weight_shape}/{lb.q.n_bits}"
            )
        total += bits.hamming_codes(la.q.codes, lb.q.codes, la.q.n_bits)
    return total


def model_bit_hash(model):
    """sha256 over every layer's (n_bits, step, codes); detects any bit drift."""
    _require_quantized(model)
    h = hashlib.sha256()
    for i in model.weighted_indices():
        q = model.layers[i].q
        h.update(struct.pack("<id", q.n_bits, q.step))
        h.update(np.ascontiguousarray(q.codes).tobytes())
    return h.hexdigest()


def _uniform_n_bits(model):
    widths = {model.layers[i].q.n_bits for i in model.weighted_indices()}
    return widths.pop() if len(widths) == 1 else None


def _resolve_stop(model, config):
    if config.stop_accuracy is not None:
        return config.stop_accuracy
    return 1.0 / model.num_classes + 0.01


def run_attack_on_sample(model, sample, val_images, val_labels, config):
    """Progressive search against a pre-drawn sample; mutates the model.

    Validation runs on the full (images, labels) split after every committed
    iteration. See :func:`run_attack` for the usual entry point.
    """
    _require_quantized(model)
    _allowed_layers(model, config)  # validate eagerly
    stop = _resolve_stop(model, config)
    clean = snapshot_codes(model)
    sample_loss = nn.cross_entropy(nn.forward(model, sample.inputs), sample.pseudo_targets)
    val = nn.evaluate(model, val_images, val_labels)
    points = [TracePoint(0, 0, sample_loss, val.top1, val.top5)]
    records = []
    meta = {"stop_accuracy": stop, "clean_val_loss": val.loss}
    status = STATUS_MAX_ITER
    iteration = 0
    while True:
        if points[-1].val_top1 <= stop:
            status = STATUS_STOP
            break
        if iteration >= config.max_iterations:
            status = STATUS_MAX_ITER
            break
        if (
            config.hamming_budget is not None
            and points[-1].hamming + config.flips_per_iter > config.hamming_budget
        ):
            status = STATUS_BUDGET
            break
        iteration += 1
        try:
            record = pbs_iteration(model, sample, config, iteration)
        except NonFiniteLossError as err:
            status = STATUS_NON_FINITE
            meta["non_finite_gradient_loss"] = repr(err.loss)
            break
        records.append(record)
        val = nn.evaluate(model, val_images, val_labels)
        points.append(
            TracePoint(
                points[-1].n_flips + len(record.flips),
                _hamming_vs_snapshot(model, clean),
                record.loss,
                val.top1,
                val.top5,
            )
        )
        if not math.isfinite(record.loss):
            status = STATUS_NON_FINITE
            break
    return AttackTrace("progressive", config.seed, _uniform_n_bits(model), status, points, records, meta)


def run_attack(model, dataset, config):
    """Draw the attack sample from the clean model, then run the search.

    Mutates ``model``; clone first to keep the clean victim. Only the test
    split of ``dataset`` is touched.
    """
    sample = data.draw_attack_sample(dataset, config.sample_size, model, config.seed)
    return run_attack_on_sample(model, sample, dataset.test_images, dataset.test_labels, config)


def restricted_config(config, allowed_layers):
    """Copy of ``config`` with the cross-layer argmax pinned to given layers."""
    return replace(config, layers=tuple(int(i) for i in allowed_layers))
