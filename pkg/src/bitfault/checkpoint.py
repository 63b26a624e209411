"""Binary model container: magic, JSON structure header, little-endian array
payload, sha256 digest.

Float weights and biases are stored as float64; quantized codes go at the
smallest signed width holding n_bits (int8 up to 8 bits, int16 up to 16),
sign-extended, with the step as a raw float64 so round-trips are bit-exact.
Loading verifies the digest and refuses corrupted files.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from . import nn
from .quantize import QuantizedLayer

MAGIC = b"BFMODEL1"
VERSION = 1
_DIGEST_BYTES = 32


class CheckpointError(ValueError):
    pass


def _codes_dtype(n_bits):
    return "<i1" if n_bits <= 8 else "<i2"


class _PayloadWriter:
    def __init__(self):
        self.chunks = []
        self.offset = 0

    def add(self, array, dtype):
        blob = np.ascontiguousarray(array.astype(dtype, copy=False)).tobytes()
        ref = {"dtype": dtype, "shape": list(array.shape), "offset": self.offset}
        self.chunks.append(blob)
        self.offset += len(blob)
        return ref


def _layer_entry(layer, payload):
    entry = {"kind": layer.kind}
    if layer.kind == "conv2d":
        entry["stride"] = layer.stride
        entry["padding"] = layer.padding
    elif layer.kind == "maxpool":
        entry["size"] = layer.size
        return entry
    elif layer.kind in ("relu", "flatten"):
        return entry
    elif layer.kind != "fc":
        raise CheckpointError(f"cannot serialize layer kind {layer.kind!r}")
    entry["bias"] = payload.add(layer.bias, "<f8")
    if layer.q is not None:
        entry["n_bits"] = layer.q.n_bits
        entry["step"] = payload.add(np.array([layer.q.step]), "<f8")
        entry["codes"] = payload.add(layer.q.codes, _codes_dtype(layer.q.n_bits))
    else:
        entry["weight"] = payload.add(layer.weight, "<f8")
    return entry


def save_checkpoint(model, path):
    """Serialize a model (either mode) to ``path``; returns the path."""
    mode = model.mode  # raises on mixed state
    payload = _PayloadWriter()
    header = {
        "format": "bitfault-checkpoint",
        "version": VERSION,
        "mode": mode,
        "input_shape": list(model.input_shape),
        "layers": [_layer_entry(layer, payload) for layer in model.layers],
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("ascii")
    blob = MAGIC + struct.pack("<II", VERSION, len(header_bytes)) + header_bytes
    blob += b"".join(payload.chunks)
    digest = hashlib.sha256(blob).digest()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(blob + digest)
    return path


def _read_ref(payload, ref):
    dtype = np.dtype(ref["dtype"])
    shape = tuple(ref["shape"])
    count = int(np.prod(shape, dtype=np.int64)) if shape else 1
    start = ref["offset"]
    end = start + count * dtype.itemsize
    if end > len(payload):
        raise CheckpointError(f"payload reference past end of file ({end} > {len(payload)})")
    return np.frombuffer(payload, dtype, count=count, offset=start).reshape(shape)


def _build_layer(entry, payload):
    kind = entry["kind"]
    if kind == "relu":
        return nn.ReLU()
    if kind == "flatten":
        return nn.Flatten()
    if kind == "maxpool":
        return nn.MaxPool(entry["size"])
    if kind not in ("fc", "conv2d"):
        raise CheckpointError(f"unknown layer kind {kind!r}")
    bias = _read_ref(payload, entry["bias"]).astype(nn.FLOAT)
    if "codes" in entry:
        codes = _read_ref(payload, entry["codes"]).astype(np.int64)
        step = float(_read_ref(payload, entry["step"])[0])
        q = QuantizedLayer(codes, step, entry["n_bits"])
        weight = np.zeros(codes.shape, nn.FLOAT)  # placeholder for construction
    else:
        q = None
        weight = _read_ref(payload, entry["weight"]).astype(nn.FLOAT)
    if kind == "fc":
        layer = nn.FullyConnected(weight, bias)
    else:
        layer = nn.Conv2d(weight, bias, stride=entry["stride"], padding=entry["padding"])
    if q is not None:
        layer.q = q
        layer.weight = None
    return layer


def load_checkpoint(path):
    """Deserialize a model, verifying magic, version, and sha256 digest."""
    path = Path(path)
    raw = path.read_bytes()
    floor = len(MAGIC) + 8 + _DIGEST_BYTES
    if len(raw) < floor:
        raise CheckpointError(f"{path}: truncated, {len(raw)} bytes < minimum {floor}")
    if raw[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {raw[:len(MAGIC)]!r}")
    body, digest = raw[:-_DIGEST_BYTES], raw[-_DIGEST_BYTES:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError(f"{path}: integrity digest mismatch")
    version, header_len = struct.unpack_from("<II", raw, len(MAGIC))
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    header_start = len(MAGIC) + 8
    header = json.loads(body[header_start : header_start + header_len].decode("ascii"))
    payload = body[header_start + header_len :]
    layers = [_build_layer(entry, payload) for entry in header["layers"]]
    model = nn.ModelGraph(layers, header["input_shape"])
    if model.mode != header["mode"]:
        raise CheckpointError(f"{path}: header mode {header['mode']!r} does not match contents")
    return model
