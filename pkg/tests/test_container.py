import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from diffuserscope.container import ArrayContainer, ContainerError, read_container, sha256_file, write_container


def _write_raw(path, header: dict, payload: bytes):
    path.write_bytes(json.dumps(header).encode() + b"\n" + payload)
    return path


def test_round_trip_byte_identical(tmp_path):
    rng = np.random.default_rng(0)
    c = ArrayContainer(
        rng.random((3, 5, 4)).astype(np.float32),
        0.615,
        z_positions_um=[-10.0, 0.0, 10.0],
        seed=7,
        provenance="psfs cfg=abc",
        meta={"layout": "RMM"},
    )
    a = write_container(tmp_path / "a.bin", c)
    back = read_container(a)
    np.testing.assert_array_equal(back.data, c.data)
    assert back.z_positions_um == [-10.0, 0.0, 10.0] and back.seed == 7 and back.meta == {"layout": "RMM"}
    b = write_container(tmp_path / "b.bin", back)
    assert a.read_bytes() == b.read_bytes()
    assert sha256_file(a) == sha256_file(b)


def test_layout_on_disk(tmp_path):
    data = np.arange(6, dtype=np.float32).reshape(2, 3)
    path = write_container(tmp_path / "x.bin", ArrayContainer(data, 4.0))
    blob = path.read_bytes()
    head, payload = blob.split(b"\n", 1)
    header = json.loads(head)
    assert list(header) == sorted(header)
    assert header["dtype"] == "f32le" and header["shape"] == [2, 3] and header["seed"] is None
    assert payload == data.astype("<f4").tobytes()


def test_complex_payload(tmp_path):
    data = (np.arange(4) + 1j * np.arange(4)[::-1]).reshape(2, 2)
    back = read_container(write_container(tmp_path / "c.bin", ArrayContainer(data, 1.0)))
    assert back.data.dtype == np.dtype("<c8")
    np.testing.assert_array_equal(back.data, data.astype(np.complex64))


@settings(max_examples=25)
@given(
    shape=st.lists(st.integers(1, 5), min_size=1, max_size=3),
    seed=st.one_of(st.none(), st.integers(0, 2**31)),
    pitch=st.floats(1e-3, 1e3),
)
def test_round_trip_property(tmp_path_factory, shape, seed, pitch):
    d = tmp_path_factory.mktemp("rt")
    data = np.random.default_rng(0).normal(size=shape).astype(np.float32)
    c = ArrayContainer(data, pitch, seed=seed)
    once = write_container(d / "1.bin", c).read_bytes()
    twice = write_container(d / "2.bin", read_container(d / "1.bin")).read_bytes()
    assert once == twice


BASE = {"dtype": "f32le", "shape": [2, 2], "pitch_um": 1.0, "seed": 0, "provenance": ""}


@pytest.mark.parametrize(
    "change, payload_len, field",
    [
        ({}, 12, "shape"),
        ({"dtype": "f64le"}, 16, "dtype"),
        ({"pitch_um": -1.0}, 16, "pitch_um"),
        ({"seed": "zero"}, 16, "seed"),
        ({"shape": [2, -2]}, 16, "shape"),
        ({"z_positions_um": [0.0]}, 16, "z_positions_um"),
        ({"colour": 1}, 16, "colour"),
        ({"provenance": 3}, 16, "provenance"),
    ],
)
def test_validation_names_field(tmp_path, change, payload_len, field):
    path = _write_raw(tmp_path / "bad.bin", {**BASE, **change}, b"\0" * payload_len)
    with pytest.raises(ContainerError) as err:
        read_container(path)
    assert err.value.field == field
    assert "bad.bin" in str(err.value) and field in str(err.value)


def test_missing_field_and_bad_header(tmp_path):
    header = dict(BASE)
    del header["pitch_um"]
    with pytest.raises(ContainerError, match="pitch_um"):
        read_container(_write_raw(tmp_path / "m.bin", header, b"\0" * 16))
    (tmp_path / "n.bin").write_bytes(b"not json\n")
    with pytest.raises(ContainerError, match="header"):
        read_container(tmp_path / "n.bin")
    (tmp_path / "e.bin").write_bytes(b"{}")
    with pytest.raises(ContainerError, match="newline"):
        read_container(tmp_path / "e.bin")
    with pytest.raises(ContainerError, match="cannot read"):
        read_container(tmp_path / "absent.bin")


def test_atomic_write_leaves_no_temp(tmp_path):
    write_container(tmp_path / "sub" / "x.bin", ArrayContainer(np.zeros((2, 2), np.float32), 1.0))
    assert [p.name for p in (tmp_path / "sub").iterdir()] == ["x.bin"]


def test_writer_rejects_inconsistent_depths():
    with pytest.raises(ValueError, match="z_positions_um"):
        ArrayContainer(np.zeros((4, 4), np.float32), 1.0, z_positions_um=[0.0])
    with pytest.raises(ValueError, match="pitch_um"):
        ArrayContainer(np.zeros((4, 4), np.float32), 0.0)
