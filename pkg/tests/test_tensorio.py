import numpy as np
import pytest

from tedm.errors import FormatError, StorageError
from tedm.tensorio import (
    load_checkpoint,
    load_latents_file,
    save_checkpoint,
    save_latents_file,
)


@pytest.fixture
def tensors():
    rng = np.random.default_rng(0)
    return {
        "enc.weight": rng.standard_normal((4, 3, 3)).astype(np.float32),
        "enc.bias": rng.standard_normal(4).astype(np.float32),
        "scalar": np.float32(1.5),
    }


def test_checkpoint_roundtrip_bit_exact(tmp_path, tensors):
    p = str(tmp_path / "m.ckpt")
    save_checkpoint(p, tensors, meta={"kind": "denoiser", "note": "a b c"})
    loaded, meta = load_checkpoint(p)
    assert meta == {"kind": "denoiser", "note": "a b c"}
    assert set(loaded) == set(tensors)
    for name in tensors:
        np.testing.assert_array_equal(loaded[name], np.float32(tensors[name]))


def test_checkpoint_header_layout(tmp_path, tensors):
    p = str(tmp_path / "m.ckpt")
    save_checkpoint(p, tensors)
    blob = open(p, "rb").read()
    assert blob.startswith(b"TEDMCKPT\nversion 1\n")
    assert b"\nend\n" in blob


def test_checkpoint_deterministic_bytes(tmp_path, tensors):
    p1, p2 = str(tmp_path / "a.ckpt"), str(tmp_path / "b.ckpt")
    save_checkpoint(p1, tensors, meta={"k": "v"})
    save_checkpoint(p2, dict(reversed(list(tensors.items()))), meta={"k": "v"})
    assert open(p1, "rb").read() == open(p2, "rb").read()


def test_checkpoint_bad_magic(tmp_path):
    p = tmp_path / "bad.ckpt"
    p.write_bytes(b"NOTMAGIC\nversion 1\nend\n")
    with pytest.raises(FormatError):
        load_checkpoint(str(p))


def test_checkpoint_truncated_payload(tmp_path, tensors):
    p = str(tmp_path / "m.ckpt")
    save_checkpoint(p, tensors)
    blob = open(p, "rb").read()
    open(p, "wb").write(blob[:-8])
    with pytest.raises(FormatError):
        load_checkpoint(str(p))


def test_checkpoint_missing_file():
    with pytest.raises(StorageError):
        load_checkpoint("/nonexistent/dir/m.ckpt")


def test_latents_roundtrip(tmp_path):
    rng = np.random.default_rng(1)
    records = [
        (1, rng.standard_normal((6, 4, 4)).astype(np.float32)),
        (50, rng.standard_normal((6, 4, 4)).astype(np.float32)),
    ]
    p = str(tmp_path / "z.latz")
    save_latents_file(p, records)
    loaded = load_latents_file(p)
    assert [s for s, _ in loaded] == [1, 50]
    for (_, a), (_, b) in zip(records, loaded):
        np.testing.assert_array_equal(a, b)


def test_latents_header(tmp_path):
    p = str(tmp_path / "z.latz")
    save_latents_file(p, [(3, np.zeros((2, 2), dtype=np.float32))])
    blob = open(p, "rb").read()
    assert blob[:8] == b"TEDMLATZ"
    assert int.from_bytes(blob[8:10], "little") == 1


@pytest.mark.parametrize("cut", [4, 9, 12, 20])
def test_latents_truncation_raises(tmp_path, cut):
    p = str(tmp_path / "z.latz")
    save_latents_file(p, [(3, np.arange(12, dtype=np.float32).reshape(3, 4))])
    blob = open(p, "rb").read()
    open(p, "wb").write(blob[:cut])
    with pytest.raises(FormatError):
        load_latents_file(str(p))


def test_latents_bad_magic(tmp_path):
    p = tmp_path / "z.latz"
    p.write_bytes(b"WRONGMAG" + b"\x01\x00")
    with pytest.raises(FormatError):
        load_latents_file(str(p))
