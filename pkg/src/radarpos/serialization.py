"""Binary dataset and checkpoint formats, both little-endian.

Dataset ("RPDW", version 1):
    magic 4s | version u16 | record count u32
    per record: label u8 | mode u8 | 512 float64 TOAs | 1024 float32
    features (channel-major: all of channel 0, then channel 1)

Checkpoint ("RPCK", version 1):
    magic 4s | version u16 | tensor count u32
    per tensor: name length u16 | UTF-8 name | rank u8 | dims u32[rank] |
    dtype u8 (0 = float32, 1 = float64) | raw row-major data

Each binary file carries a JSON sidecar at ``<path>.json``. The dataset
sidecar records seed, ratio, the generating specs and the train/test
boundary (the record stream itself is flat); the checkpoint sidecar
records the model configuration, seeds and training stage. Writes are
atomic (temp file + rename).
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import struct
import tempfile

import numpy as np

from .errors import FormatError
from .pdw import SEQ_LEN, DatasetSplit, SampleRecord

DATASET_MAGIC = b"RPDW"
CHECKPOINT_MAGIC = b"RPCK"
FORMAT_VERSION = 1

_RECORD_HEAD = struct.Struct("<BB")
_DTYPE_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_CODE_DTYPES = {0: np.dtype(np.float32), 1: np.dtype(np.float64)}


def atomic_write_bytes(path: str, payload: bytes) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def write_json(path: str, obj) -> None:
    atomic_write_bytes(path, (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode())


def read_json(path: str):
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


class _Reader:
    def __init__(self, buf: bytes, label: str):
        self.buf = buf
        self.pos = 0
        self.label = label

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError(f"{self.label}: truncated file")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, st: struct.Struct):
        return st.unpack(self.take(st.size))

    def done(self):
        if self.pos != len(self.buf):
            raise FormatError(f"{self.label}: {len(self.buf) - self.pos} trailing bytes")


# ---------------------------------------------------------------------------
# datasets
# ---------------------------------------------------------------------------


def _encode_record(rec: SampleRecord) -> bytes:
    if rec.features.shape != (2, SEQ_LEN):
        raise FormatError(f"record features must be (2, {SEQ_LEN})")
    if rec.toa_track.shape != (SEQ_LEN,):
        raise FormatError(f"record toa_track must be ({SEQ_LEN},)")
    return b"".join((
        _RECORD_HEAD.pack(rec.label & 0xFF, rec.mode & 0xFF),
        np.ascontiguousarray(rec.toa_track, dtype="<f8").tobytes(),
        np.ascontiguousarray(rec.features, dtype="<f4").tobytes(),
    ))


def _decode_record(rd: _Reader) -> SampleRecord:
    label, mode = rd.unpack(_RECORD_HEAD)
    toa = np.frombuffer(rd.take(SEQ_LEN * 8), dtype="<f8").astype(np.float64)
    feats = np.frombuffer(rd.take(2 * SEQ_LEN * 4), dtype="<f4").reshape(2, SEQ_LEN)
    return SampleRecord(features=feats.astype(np.float32), toa_track=toa,
                        label=int(label), mode=int(mode))


def _spec_to_dict(obj):
    if dataclasses.is_dataclass(obj):
        return {k: _spec_to_dict(v) for k, v in dataclasses.asdict(obj).items()}
    if isinstance(obj, dict):
        return {k: _spec_to_dict(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_spec_to_dict(v) for v in obj]
    return obj


def write_dataset(path: str, split: DatasetSplit, specs: dict | None = None) -> None:
    """Write a split as one flat record stream plus a JSON sidecar.

    The binary format has no train/test boundary; the sidecar's
    ``train_count`` carries it, along with seed, ratio and specs.
    """
    records = list(split.train) + list(split.test)
    head = DATASET_MAGIC + struct.pack("<HI", FORMAT_VERSION, len(records))
    payload = head + b"".join(_encode_record(r) for r in records)
    atomic_write_bytes(path, payload)
    sidecar = {
        "seed": split.seed,
        "ratio": list(split.ratio),
        "train_count": len(split.train),
        "test_count": len(split.test),
        "sha256": hashlib.sha256(payload).hexdigest(),
        "specs": _spec_to_dict(specs) if specs else {},
    }
    write_json(path + ".json", sidecar)


def read_dataset(path: str) -> DatasetSplit:
    with open(path, "rb") as fh:
        rd = _Reader(fh.read(), os.path.basename(path))
    magic = rd.take(4)
    if magic != DATASET_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    (version,) = rd.unpack(struct.Struct("<H"))
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    (count,) = rd.unpack(struct.Struct("<I"))
    records = [_decode_record(rd) for _ in range(count)]
    rd.done()

    sidecar_path = path + ".json"
    if os.path.exists(sidecar_path):
        side = read_json(sidecar_path)
        train_count = int(side.get("train_count", count))
        seed = int(side.get("seed", 0))
        ratio = tuple(side.get("ratio", ()))
    else:
        train_count, seed, ratio = count, 0, ()
    if not 0 <= train_count <= count:
        raise FormatError(f"{path}: sidecar train_count {train_count} out of range")
    return DatasetSplit(train=records[:train_count], test=records[train_count:],
                        ratio=ratio, seed=seed)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def write_checkpoint(path: str, tensors: dict, meta: dict | None = None) -> None:
    """Write named tensors (sorted by name for stable bytes) plus a sidecar."""
    chunks = [CHECKPOINT_MAGIC, struct.pack("<HI", FORMAT_VERSION, len(tensors))]
    for name in sorted(tensors):
        arr = np.asarray(tensors[name])
        if arr.dtype not in _DTYPE_CODES:
            raise FormatError(f"{name}: unsupported dtype {arr.dtype}")
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(struct.pack("<B", _DTYPE_CODES[arr.dtype]))
        chunks.append(np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<")).tobytes())
    atomic_write_bytes(path, b"".join(chunks))
    if meta is not None:
        write_json(path + ".json", meta)


def read_checkpoint(path: str):
    """Return (tensors dict, sidecar meta dict or {})."""
    with open(path, "rb") as fh:
        rd = _Reader(fh.read(), os.path.basename(path))
    magic = rd.take(4)
    if magic != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    version, count = rd.unpack(struct.Struct("<HI"))
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    tensors = {}
    for _ in range(count):
        (name_len,) = rd.unpack(struct.Struct("<H"))
        name = rd.take(name_len).decode("utf-8")
        (rank,) = rd.unpack(struct.Struct("<B"))
        dims = rd.unpack(struct.Struct(f"<{rank}I")) if rank else ()
        (code,) = rd.unpack(struct.Struct("<B"))
        if code not in _CODE_DTYPES:
            raise FormatError(f"{path}: unknown dtype code {code} for {name}")
        dtype = _CODE_DTYPES[code]
        n_items = int(np.prod(dims)) if dims else 1
        raw = rd.take(n_items * dtype.itemsize)
        arr = np.frombuffer(raw, dtype=dtype.newbyteorder("<")).astype(dtype)
        tensors[name] = arr.reshape(dims)
    rd.done()

    meta = read_json(path + ".json") if os.path.exists(path + ".json") else {}
    return tensors, meta
