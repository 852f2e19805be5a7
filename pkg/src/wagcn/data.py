"""Tensor files, dataset manifests, segment sampling and synthetic datasets.

Tensor file layout (all integers little-endian)::

    offset 0   magic   b"FTNS"
    offset 4   version u32 (currently 1)
    offset 8   dtype   u8   0 = float32, 1 = float64
    offset 9   ndim    u8
    offset 10  dims    ndim x u64
    ...        payload row-major little-endian values

Manifests are JSON Lines, one video per line::

    {"id": "v001", "label": 1, "feature_path": "features/v001.ftns",
     "frame_count": 1600, "anomaly_intervals": [[320, 640]], "crops": 1}

``feature_path`` is resolved relative to the manifest's directory. The
validator rejects, with the offending line number:

1. a normal video (label 0) carrying anomaly intervals,
2. an empty interval ``[a, a)`` or a reversed one,
3. overlapping or unsorted intervals,
4. an interval outside ``[0, frame_count)``,
5. a duplicate video id,
6. a feature file that does not exist.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ConfigError, CorruptionError, FormatError, ValidationError

MAGIC = b"FTNS"
VERSION = 1
FRAMES_PER_SEGMENT = 16
_DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODE_FOR = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


# -- tensor files ------------------------------------------------------------


def write_tensor(path, tensor) -> None:
    arr = np.asarray(tensor)
    if arr.dtype not in _CODE_FOR:
        raise FormatError(f"unsupported dtype {arr.dtype}; tensor files hold float32 or float64")
    if arr.ndim > 255:
        raise FormatError("too many dimensions")
    code = _CODE_FOR[arr.dtype]
    header = MAGIC + struct.pack("<IBB", VERSION, code, arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape)
    payload = np.ascontiguousarray(arr, dtype=_DTYPE_CODES[code]).tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)


def read_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        buf = fh.read()
    return decode_tensor(buf, str(path))


def decode_tensor(buf: bytes, where: str = "<buffer>") -> np.ndarray:
    if len(buf) < 10:
        raise CorruptionError(f"{where}: header truncated at offset {len(buf)}")
    if buf[:4] != MAGIC:
        raise FormatError(f"{where}: bad magic {buf[:4]!r} at offset 0")
    version, code, ndim = struct.unpack_from("<IBB", buf, 4)
    if version != VERSION:
        raise FormatError(f"{where}: unsupported version {version} at offset 4")
    if code not in _DTYPE_CODES:
        raise FormatError(f"{where}: unknown dtype code {code} at offset 8")
    dims_end = 10 + 8 * ndim
    if len(buf) < dims_end:
        raise CorruptionError(f"{where}: dimension table truncated at offset {len(buf)}")
    shape = struct.unpack_from(f"<{ndim}Q", buf, 10)
    dtype = _DTYPE_CODES[code]
    expected = dtype.itemsize * int(np.prod(shape, dtype=np.uint64))
    payload = buf[dims_end:]
    if len(payload) != expected:
        raise CorruptionError(
            f"{where}: payload is {len(payload)} bytes at offset {dims_end}, expected {expected} for shape {shape}"
        )
    arr = np.frombuffer(payload, dtype=dtype).reshape(shape)
    return arr.astype(dtype.newbyteorder("="))


# -- manifests ---------------------------------------------------------------


@dataclass
class VideoRecord:
    id: str
    label: int
    feature_path: str
    frame_count: int
    anomaly_intervals: list = field(default_factory=list)
    crops: int = 1
    root: Optional[str] = field(default=None, repr=False, compare=False)

    def resolved_path(self) -> Path:
        p = Path(self.feature_path)
        return p if p.is_absolute() or self.root is None else Path(self.root) / p

    def load_features(self) -> np.ndarray:
        """Features as C x T x D."""
        arr = read_tensor(self.resolved_path())
        if arr.ndim == 2:
            arr = arr[None]
        if arr.ndim != 3:
            raise ValidationError(f"video {self.id}: feature tensor must be 2-D or 3-D, got shape {arr.shape}")
        if arr.shape[0] != self.crops:
            raise ValidationError(f"video {self.id}: manifest says {self.crops} crops, file has {arr.shape[0]}")
        return arr

    def frame_labels(self) -> np.ndarray:
        labels = np.zeros(self.frame_count, dtype=np.int8)
        for start, end in self.anomaly_intervals:
            labels[start:end] = 1
        return labels

    def to_json(self) -> str:
        d = asdict(self)
        d.pop("root")
        return json.dumps(d)


@dataclass
class DatasetManifest:
    records: list
    path: Optional[str] = None

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @property
    def labels(self) -> set:
        return {r.label for r in self.records}


_FIELDS = {"id", "label", "feature_path", "frame_count", "anomaly_intervals", "crops"}


def parse_record(obj: dict, root=None, check_files: bool = True) -> VideoRecord:
    if not isinstance(obj, dict):
        raise ValidationError("record must be a JSON object")
    missing = {"id", "label", "feature_path", "frame_count"} - obj.keys()
    if missing:
        raise ValidationError(f"missing fields {sorted(missing)}")
    unknown = obj.keys() - _FIELDS
    if unknown:
        raise ValidationError(f"unknown fields {sorted(unknown)}")
    vid = obj["id"]
    if not isinstance(vid, str) or not vid:
        raise ValidationError("id must be a non-empty string")
    label = obj["label"]
    if label not in (0, 1) or isinstance(label, bool):
        raise ValidationError(f"video {vid}: label must be 0 or 1, got {label!r}")
    frames = obj["frame_count"]
    if not isinstance(frames, int) or frames < 1:
        raise ValidationError(f"video {vid}: frame_count must be a positive integer")
    crops = obj.get("crops", 1)
    if not isinstance(crops, int) or crops < 1:
        raise ValidationError(f"video {vid}: crops must be a positive integer")
    intervals = [list(iv) for iv in obj.get("anomaly_intervals", [])]
    if label == 0 and intervals:
        raise ValidationError(f"video {vid}: normal video has anomaly intervals")
    prev_end = 0
    for iv in intervals:
        if len(iv) != 2 or not all(isinstance(x, int) for x in iv):
            raise ValidationError(f"video {vid}: interval {iv} is not a [start, end) integer pair")
        start, end = iv
        if end <= start:
            raise ValidationError(f"video {vid}: interval [{start}, {end}) is empty")
        if start < 0 or end > frames:
            raise ValidationError(f"video {vid}: interval [{start}, {end}) outside [0, {frames})")
        if start < prev_end:
            raise ValidationError(f"video {vid}: interval [{start}, {end}) overlaps or precedes the previous one")
        prev_end = end
    rec = VideoRecord(vid, label, obj["feature_path"], frames, intervals, crops, None if root is None else str(root))
    if check_files and not rec.resolved_path().is_file():
        raise ValidationError(f"video {vid}: feature file {rec.resolved_path()} not found")
    return rec


def load_manifest(path, check_files: bool = True) -> DatasetManifest:
    path = Path(path)
    root = path.parent
    records, seen = [], set()
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                rec = parse_record(obj, root, check_files)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            except ValidationError as exc:
                raise ValidationError(f"{path}:{lineno}: {exc}") from None
            if rec.id in seen:
                raise ValidationError(f"{path}:{lineno}: duplicate video id {rec.id!r}")
            seen.add(rec.id)
            records.append(rec)
    return DatasetManifest(records, str(path))


def write_manifest(path, records) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(rec.to_json() + "\n")


# -- sampling ----------------------------------------------------------------


def sample_indices(T_full: int, T: int) -> np.ndarray:
    """Row indices floor(i * T_full / T), i = 0..T-1 (repeats when T_full < T)."""
    if T < 1 or T_full < 1:
        raise ValidationError(f"uniform sampling needs T >= 1 and T_full >= 1, got T={T}, T_full={T_full}")
    return (np.arange(T) * T_full) // T


def uniform_sample(features: np.ndarray, T: int) -> np.ndarray:
    return features[sample_indices(features.shape[0], T)]


# -- synthetic data ----------------------------------------------------------


@dataclass
class SynthConfig:
    num_normal: int = 40
    num_abnormal: int = 40
    test_normal: int = 20
    test_abnormal: int = 20
    D: int = 64
    segments: tuple = (60, 200)
    burst: tuple = (10, 50)
    delta: float = 3.0
    sigma: float = 1.0
    crops: int = 1
    crop_jitter: float = 0.1
    seed: int = 7

    def validate(self):
        if self.delta < 0:
            raise ConfigError("delta must be >= 0")
        if self.sigma <= 0:
            raise ConfigError("sigma must be > 0")
        lo, hi = self.segments
        blo, bhi = self.burst
        if not 1 <= lo <= hi:
            raise ConfigError(f"bad segment range {self.segments}")
        if not 1 <= blo <= bhi:
            raise ConfigError(f"bad burst range {self.burst}")
        if min(self.num_normal, self.num_abnormal, self.test_normal, self.test_abnormal) < 0:
            raise ConfigError("video counts must be >= 0")
        if self.D < 1 or self.crops < 1:
            raise ConfigError("D and crops must be positive")
        return self


@dataclass
class SynthDataset:
    train: DatasetManifest
    test: DatasetManifest
    mean: np.ndarray
    direction: np.ndarray


def synth_generate(cfg: SynthConfig, out_dir) -> SynthDataset:
    """Write a Gaussian anomaly-burst dataset: ``train.jsonl``, ``test.jsonl``, ``features/``.

    Normal segments are N(mu, sigma^2 I). Each abnormal video has one
    contiguous burst drawn from N(mu + delta * sigma * u, sigma^2 I) for a
    fixed unit vector u shared by both splits.
    """
    cfg.validate()
    out = Path(out_dir)
    (out / "features").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(cfg.seed)
    mu = rng.standard_normal(cfg.D)
    u = rng.standard_normal(cfg.D)
    u /= np.linalg.norm(u)

    def make_split(name, n_normal, n_abnormal):
        records = []
        labels = [0] * n_normal + [1] * n_abnormal
        for i, label in enumerate(labels):
            vid = f"{name}_{'abn' if label else 'nrm'}_{i:04d}"
            T = int(rng.integers(cfg.segments[0], cfg.segments[1] + 1))
            x = mu + cfg.sigma * rng.standard_normal((T, cfg.D))
            intervals = []
            if label:
                length = int(rng.integers(cfg.burst[0], cfg.burst[1] + 1))
                length = min(length, T)
                start = int(rng.integers(0, T - length + 1))
                x[start : start + length] += cfg.delta * cfg.sigma * u
                intervals = [[start * FRAMES_PER_SEGMENT, (start + length) * FRAMES_PER_SEGMENT]]
            crops = [x]
            for _ in range(cfg.crops - 1):
                crops.append(x + cfg.crop_jitter * cfg.sigma * rng.standard_normal(x.shape))
            rel = f"features/{vid}.ftns"
            write_tensor(out / rel, np.stack(crops))
            records.append(
                VideoRecord(vid, label, rel, T * FRAMES_PER_SEGMENT, intervals, cfg.crops, str(out))
            )
        write_manifest(out / f"{name}.jsonl", records)
        return DatasetManifest(records, str(out / f"{name}.jsonl"))

    train = make_split("train", cfg.num_normal, cfg.num_abnormal)
    test = make_split("test", cfg.test_normal, cfg.test_abnormal)
    with open(out / "synth_config.json", "w") as fh:
        json.dump(asdict(cfg), fh, indent=2, sort_keys=True)
    return SynthDataset(train, test, mu, u)


def ensure_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    if not os.access(p, os.W_OK):
        raise PermissionError(f"{p} is not writable")
    return p
