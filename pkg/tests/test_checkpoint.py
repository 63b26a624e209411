import hashlib
import struct

import numpy as np
import pytest

from bitfault import attack, checkpoint, nn, quantize
from bitfault.checkpoint import CheckpointError, load_checkpoint, save_checkpoint

import helpers


def _batch(model, n=4, seed=0):
    rng = np.random.default_rng(seed)
    return rng.normal(0.0, 1.0, (n,) + model.input_shape)


def test_float_round_trip_bit_exact(tmp_path):
    model = helpers.tiny_conv_net(0)
    path = save_checkpoint(model, tmp_path / "conv.ckpt")
    loaded = load_checkpoint(path)
    assert [l.kind for l in loaded.layers] == [l.kind for l in model.layers]
    assert loaded.input_shape == model.input_shape
    assert loaded.layers[0].stride == model.layers[0].stride
    assert loaded.layers[0].padding == model.layers[0].padding
    assert loaded.layers[2].size == model.layers[2].size
    for i in model.weighted_indices():
        assert np.array_equal(loaded.layers[i].weight, model.layers[i].weight)
        assert np.array_equal(loaded.layers[i].bias, model.layers[i].bias)
    x = _batch(model)
    assert np.array_equal(nn.forward(loaded, x), nn.forward(model, x))


@pytest.mark.parametrize("n_bits", [4, 8, 12])
def test_quantized_round_trip_bit_exact(tmp_path, n_bits):
    model = quantize.quantize_model(helpers.tiny_mlp(1), n_bits)
    # include the code only reachable by bit flips, not by quantization
    model.layers[0].q.codes.reshape(-1)[0] = -(2 ** (n_bits - 1))
    path = save_checkpoint(model, tmp_path / f"q{n_bits}.ckpt")
    loaded = load_checkpoint(path)
    assert loaded.mode == "quantized"
    for i in model.weighted_indices():
        qa, qb = model.layers[i].q, loaded.layers[i].q
        assert qb.n_bits == qa.n_bits
        assert qb.step == qa.step
        assert np.array_equal(qb.codes, qa.codes)
    assert attack.model_bit_hash(loaded) == attack.model_bit_hash(model)
    assert attack.hamming_distance(loaded, model) == 0
    x = _batch(model, seed=1)
    assert np.array_equal(nn.forward(loaded, x), nn.forward(model, x))


def test_int16_code_extremes_survive(tmp_path):
    model = quantize.quantize_model(helpers.tiny_mlp(2), 12)
    flat = model.layers[2].q.codes.reshape(-1)
    flat[0], flat[1] = 2047, -2048
    loaded = load_checkpoint(save_checkpoint(model, tmp_path / "wide.ckpt"))
    got = loaded.layers[2].q.codes.reshape(-1)
    assert (got[0], got[1]) == (2047, -2048)


def test_second_save_is_byte_identical(tmp_path):
    model = quantize.quantize_model(helpers.tiny_conv_net(3), 6)
    first = save_checkpoint(model, tmp_path / "a.ckpt")
    second = save_checkpoint(load_checkpoint(first), tmp_path / "b.ckpt")
    assert first.read_bytes() == second.read_bytes()


def test_corrupted_payload_is_refused(tmp_path):
    path = save_checkpoint(helpers.tiny_mlp(4), tmp_path / "c.ckpt")
    raw = bytearray(path.read_bytes())
    raw[len(raw) // 2] ^= 0xFF
    path.write_bytes(bytes(raw))
    with pytest.raises(CheckpointError, match="integrity digest mismatch"):
        load_checkpoint(path)


def test_bad_magic_is_refused(tmp_path):
    path = save_checkpoint(helpers.tiny_mlp(5), tmp_path / "m.ckpt")
    raw = bytearray(path.read_bytes())
    raw[:8] = b"NOTMODEL"
    path.write_bytes(bytes(raw))
    with pytest.raises(CheckpointError, match="bad magic"):
        load_checkpoint(path)


def test_truncated_file_is_refused(tmp_path):
    path = save_checkpoint(helpers.tiny_mlp(6), tmp_path / "t.ckpt")
    path.write_bytes(path.read_bytes()[:20])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(path)


def test_unsupported_version_is_refused(tmp_path):
    path = save_checkpoint(helpers.tiny_mlp(7), tmp_path / "v.ckpt")
    raw = path.read_bytes()
    body = bytearray(raw[:-32])
    struct.pack_into("<I", body, 8, 99)  # forge the version, keep digest valid
    body = bytes(body)
    path.write_bytes(body + hashlib.sha256(body).digest())
    with pytest.raises(CheckpointError, match="unsupported version 99"):
        load_checkpoint(path)


def test_dangling_payload_reference_is_refused(tmp_path):
    path = save_checkpoint(helpers.tiny_mlp(8), tmp_path / "d.ckpt")
    body = path.read_bytes()[:-32][:-8]  # drop payload bytes, re-sign
    path.write_bytes(body + hashlib.sha256(body).digest())
    with pytest.raises(CheckpointError, match="past end"):
        load_checkpoint(path)


def test_mixed_mode_model_cannot_be_saved(tmp_path):
    base = helpers.tiny_mlp(9)
    half = quantize.quantize_model(base, 8)
    hybrid = nn.ModelGraph([half.layers[0], nn.ReLU(), base.layers[2]], (4,))
    with pytest.raises(nn.ModeError):
        save_checkpoint(hybrid, tmp_path / "h.ckpt")


def test_save_creates_parent_directories(tmp_path):
    path = save_checkpoint(helpers.tiny_mlp(10), tmp_path / "deep" / "nest" / "x.ckpt")
    assert path.exists()
    assert load_checkpoint(path).num_weights() == helpers.tiny_mlp(10).num_weights()
