import struct

import numpy as np
import pytest

from fmvp.formats import (
    CKPT_MAGIC, DATA_MAGIC, Dataset, FormatError, decode_checkpoint, decode_dataset,
    encode_checkpoint, encode_dataset, load_checkpoint, save_checkpoint,
)


def test_checkpoint_round_trip(tmp_path, np_rng):
    params = {"vnet.a": np_rng.normal(size=(2, 3)).astype(np.float32), "vnet.b": np.zeros(4, np.float32)}
    save_checkpoint(tmp_path / "p.ckpt", params)
    back = load_checkpoint(tmp_path / "p.ckpt")
    assert list(back) == list(params)
    for k in params:
        assert np.array_equal(back[k], params[k])


def test_checkpoint_layout():
    blob = encode_checkpoint({"w": np.array([1.5], np.float32)})
    assert blob[:8] == CKPT_MAGIC
    assert struct.unpack_from("<II", blob, 8) == (1, 1)
    assert blob[16:18] == struct.pack("<H", 1) and blob[18:19] == b"w"
    assert blob[19] == 1 and struct.unpack_from("<I", blob, 20) == (1,)
    assert struct.unpack_from("<f", blob, 24) == (1.5,)


def test_bad_magic_reports_bytes():
    with pytest.raises(FormatError, match="XXXXXXXX"):
        decode_checkpoint(b"XXXXXXXX" + bytes(8))
    with pytest.raises(FormatError, match="FMVPCKPT"):
        decode_dataset(encode_checkpoint({}))


def test_truncated_and_trailing():
    blob = encode_checkpoint({"w": np.ones((3, 3), np.float32)})
    with pytest.raises(FormatError):
        decode_checkpoint(blob[:-4])
    with pytest.raises(FormatError):
        decode_checkpoint(blob + b"\0")


def test_dataset_round_trip_bit_exact(np_rng):
    ds = Dataset(np_rng.uniform(size=(3, 1, 2, 4, 4)).astype(np.float32), np.array([0, 2, 1]), 3)
    blob = encode_dataset(ds)
    assert blob[:8] == DATA_MAGIC
    assert struct.unpack_from("<7I", blob, 8) == (1, 3, 1, 2, 4, 4, 3)
    assert struct.unpack_from("<H", blob, 36) == (0,)
    back = decode_dataset(blob)
    assert np.array_equal(back.x, ds.x) and np.array_equal(back.y, ds.y) and back.num_classes == 3
    assert encode_dataset(back) == blob
