import struct

import numpy as np
import pytest

from tdm.checkpoint import MAGIC, CheckpointError, load_checkpoint, save_checkpoint
from tdm.denoiser import DenoiserConfig, TextPoseDenoiser, Vocabulary


@pytest.fixture
def model():
    cfg = DenoiserConfig(num_layers=1, num_heads=2, model_dim=8, ffn_dim=16, max_positions=6,
                         num_joints=4, vocab_size=5)
    return TextPoseDenoiser.create(cfg, Vocabulary(["a", "b"]), 100, np.random.default_rng(0))


def test_round_trip(model, tmp_path):
    path = save_checkpoint(tmp_path / "m.tdm", model, {"note": "x"}, {"extra/one": np.arange(3.0)})
    ck = load_checkpoint(path)
    assert ck.config == model.cfg and ck.vocab == model.vocab and ck.meta["note"] == "x"
    np.testing.assert_array_equal(ck.extra["extra/one"], np.arange(3.0))
    restored = ck.model()
    for k, p in model.params.items():
        assert restored.params[k].data.tobytes() == p.data.tobytes()
    assert path.read_bytes().startswith(MAGIC)
    assert not (tmp_path / "m.tdm.tmp").exists()


def test_identical_state_identical_bytes(model, tmp_path):
    a = save_checkpoint(tmp_path / "a.tdm", model, {"k": 1, "a": 2})
    b = save_checkpoint(tmp_path / "b.tdm", model, {"a": 2, "k": 1})
    assert a.read_bytes() == b.read_bytes()


def corrupt(path, fn):
    data = bytearray(path.read_bytes())
    path.write_bytes(bytes(fn(data)))


@pytest.mark.parametrize("mutate, pattern", [
    (lambda d: b"XXXXXXXX" + d[8:], "magic"),
    (lambda d: d[:-5], "truncated"),
    (lambda d: d + b"\0", "trailing"),
    (lambda d: d[:12] + b"}" + d[13:], "corrupt header"),
])
def test_corruption_detected(model, tmp_path, mutate, pattern):
    path = save_checkpoint(tmp_path / "m.tdm", model)
    corrupt(path, mutate)
    with pytest.raises(CheckpointError, match=pattern):
        load_checkpoint(path)


def test_shape_mismatch_detected(model, tmp_path):
    path = save_checkpoint(tmp_path / "m.tdm", model)
    data = path.read_bytes()
    # rewrite the header to claim a wider model than the stored tensors
    (hlen,) = struct.unpack("<I", data[8:12])
    header = data[12:12 + hlen].replace(b'"model_dim":8', b'"model_dim":12')
    path.write_bytes(data[:8] + struct.pack("<I", len(header)) + header + data[12 + hlen:])
    with pytest.raises(CheckpointError, match="shape"):
        load_checkpoint(path)


def test_missing_file(tmp_path):
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "nope.tdm")
