"""Array container: one UTF-8 JSON header line followed by a raw little-endian payload.

Header keys (sorted, compact separators):

``dtype``
    ``"f32le"`` or ``"c64le"``.
``shape``
    List of dimensions, row-major.
``pitch_um``
    Lateral sample pitch.
``z_positions_um``
    Optional list of depths for stacks and volumes.
``seed``
    Integer seed or ``null``.
``provenance``
    Free-form string naming the producing command, config hash and input hashes.
``meta``
    Optional JSON object with extra metadata.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = ["ArrayContainer", "ContainerError", "write_container", "read_container", "sha256_file", "write_json_atomic", "write_text_atomic"]

_DTYPES = {"f32le": np.dtype("<f4"), "c64le": np.dtype("<c8")}
_REQUIRED = ("dtype", "shape", "pitch_um", "seed", "provenance")
_OPTIONAL = ("z_positions_um", "meta")


class ContainerError(ValueError):
    """Malformed or inconsistent container file."""

    def __init__(self, path, field_name: str, message: str):
        self.path = str(path)
        self.field = field_name
        super().__init__(f"{self.path}: header field '{field_name}': {message}")


@dataclass
class ArrayContainer:
    data: np.ndarray
    pitch_um: float
    z_positions_um: list[float] | None = None
    seed: int | None = None
    provenance: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if not self.pitch_um > 0:
            raise ValueError(f"pitch_um must be positive, got {self.pitch_um!r}")
        z = self.z_positions_um
        if z is not None and (self.data.ndim == 0 or len(z) != self.data.shape[0]):
            raise ValueError("z_positions_um must list one depth per leading-axis slice")

    @property
    def dtype_tag(self) -> str:
        return "c64le" if np.iscomplexobj(self.data) else "f32le"

    def header(self) -> dict:
        h = {
            "dtype": self.dtype_tag,
            "shape": [int(s) for s in self.data.shape],
            "pitch_um": float(self.pitch_um),
            "seed": None if self.seed is None else int(self.seed),
            "provenance": str(self.provenance),
        }
        if self.z_positions_um is not None:
            h["z_positions_um"] = [float(z) for z in self.z_positions_um]
        if self.meta:
            h["meta"] = self.meta
        return h

    def to_bytes(self) -> bytes:
        header = json.dumps(self.header(), sort_keys=True, separators=(",", ":"), allow_nan=False)
        payload = np.ascontiguousarray(self.data, dtype=_DTYPES[self.dtype_tag]).tobytes(order="C")
        return header.encode("utf-8") + b"\n" + payload


def _atomic_write_bytes(path: Path, blob: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.chmod(tmp, 0o644)  # mkstemp creates 0600
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_container(path, container: ArrayContainer) -> Path:
    """Atomically write ``container`` to ``path``."""
    path = Path(path)
    _atomic_write_bytes(path, container.to_bytes())
    return path


def write_text_atomic(path, text: str) -> Path:
    """Atomically write UTF-8 text."""
    path = Path(path)
    _atomic_write_bytes(path, text.encode("utf-8"))
    return path


def write_json_atomic(path, obj) -> Path:
    """Atomically write a JSON document with sorted keys and a trailing newline."""
    path = Path(path)
    text = json.dumps(obj, sort_keys=True, indent=2, allow_nan=True) + "\n"
    _atomic_write_bytes(path, text.encode("utf-8"))
    return path


def read_container(path) -> ArrayContainer:
    """Read and validate a container file."""
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise ContainerError(path, "<file>", f"cannot read: {exc.strerror}") from exc
    nl = blob.find(b"\n")
    if nl < 0:
        raise ContainerError(path, "<header>", "missing newline terminating the JSON header")
    try:
        header = json.loads(blob[:nl].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ContainerError(path, "<header>", f"not valid UTF-8 JSON ({exc})") from exc
    if not isinstance(header, dict):
        raise ContainerError(path, "<header>", "header must be a JSON object")
    for key in _REQUIRED:
        if key not in header:
            raise ContainerError(path, key, "missing")
    extra = sorted(set(header) - set(_REQUIRED) - set(_OPTIONAL))
    if extra:
        raise ContainerError(path, extra[0], "unknown field")
    tag = header["dtype"]
    if tag not in _DTYPES:
        raise ContainerError(path, "dtype", f"unsupported tag {tag!r}")
    shape = header["shape"]
    if not isinstance(shape, list) or not all(isinstance(s, int) and s >= 0 for s in shape):
        raise ContainerError(path, "shape", f"must be a list of non-negative integers, got {shape!r}")
    pitch = header["pitch_um"]
    if not isinstance(pitch, (int, float)) or not pitch > 0:
        raise ContainerError(path, "pitch_um", f"must be positive, got {pitch!r}")
    seed = header["seed"]
    if seed is not None and not isinstance(seed, int):
        raise ContainerError(path, "seed", f"must be an integer or null, got {seed!r}")
    if not isinstance(header["provenance"], str):
        raise ContainerError(path, "provenance", "must be a string")
    z = header.get("z_positions_um")
    if z is not None and (not isinstance(z, list) or len(z) == 0 or len(z) != shape[0]):
        raise ContainerError(path, "z_positions_um", "must list one depth per leading-axis slice")
    dtype = _DTYPES[tag]
    payload = blob[nl + 1 :]
    expected = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    if len(payload) != expected:
        raise ContainerError(
            path, "shape", f"payload holds {len(payload)} bytes, header implies {expected}"
        )
    data = np.frombuffer(payload, dtype=dtype).reshape(shape).copy()
    return ArrayContainer(
        data=data,
        pitch_um=float(pitch),
        z_positions_um=None if z is None else [float(v) for v in z],
        seed=seed,
        provenance=header["provenance"],
        meta=header.get("meta", {}),
    )


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
