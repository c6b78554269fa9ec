"""File formats and core record types for ERP epoch data.

Three small binary formats (all little-endian) keep round trips bit-exact
and file sizes computable from the header alone:

* ``.erpc`` continuous recording: ``"ERPC"``, u32 version=1, u32 n_channels,
  u64 n_samples, f32 fs_hz, then f32 samples in [channel][sample] order.
* ``.erpe`` epoch set: ``"ERPE"``, u32 version=1, u32 n_epochs,
  u32 n_channels, u32 n_samples, f32 fs_hz, then one label byte per epoch,
  then f32 samples in [epoch][channel][sample] order.
* ``.erpm`` model: ``"ERPM"``, u32 version=1, ten u32 architecture fields,
  then f64 parameters in the canonical order defined by ``network``.

Signal payloads are stored as 32-bit floats (sensor precision); model
parameters as 64-bit floats (training precision).  In memory everything is
float64.  Events travel as a ``sample_index,label`` CSV and dataset
manifests as ``key=value`` text.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np

if TYPE_CHECKING:
    from .network import Network

FORMAT_VERSION = 1
_MAGIC_CONTINUOUS = b"ERPC"
_MAGIC_EPOCHS = b"ERPE"
_MAGIC_MODEL = b"ERPM"

# 10-20 cap montage and around-the-ear montage channel labels.
SCALP_CHANNELS = [
    "Fp1", "Fp2", "AFz", "F7", "F3", "Fz", "F4", "F8",
    "FC5", "FC1", "FC2", "FC6", "C3", "Cz", "C4",
    "CP5", "CP1", "CP2", "CP6", "P7", "P3", "Pz", "P4", "P8",
    "PO7", "PO3", "POz", "PO4", "PO8", "O1", "Oz", "O2",
]
EAR_CHANNELS = [f"L{i}" for i in range(1, 11)] + [f"R{i}" for i in range(1, 9)]
MONTAGE_CHANNEL_COUNTS = {"scalp": 32, "ear": 18}


class FileFormatError(ValueError):
    """Raised when a file fails magic/version/size/payload validation."""


def default_channel_names(n_channels: int) -> list[str]:
    return [f"ch{i:02d}" for i in range(n_channels)]


@dataclass
class ContinuousRecording:
    """Multichannel time series in microvolts, shape (n_channels, n_samples)."""

    data: np.ndarray
    fs_hz: float
    channel_names: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2:
            raise ValueError(f"data must be 2-D (channels, samples), got shape {self.data.shape}")
        if self.data.shape[0] < 1 or self.data.shape[1] < 1:
            raise ValueError("recording needs at least one channel and one sample")
        if not self.fs_hz > 0:
            raise ValueError(f"fs_hz must be positive, got {self.fs_hz}")
        if not np.isfinite(self.data).all():
            raise ValueError("recording contains non-finite samples")
        if not self.channel_names:
            self.channel_names = default_channel_names(self.data.shape[0])
        if len(self.channel_names) != self.data.shape[0]:
            raise ValueError(
                f"{len(self.channel_names)} channel names for {self.data.shape[0]} channels"
            )

    @property
    def n_channels(self) -> int:
        return self.data.shape[0]

    @property
    def n_samples(self) -> int:
        return self.data.shape[1]


@dataclass
class EventList:
    """Stimulus onsets (sample indices, strictly increasing) with binary labels."""

    sample_indices: np.ndarray
    labels: np.ndarray

    def __post_init__(self) -> None:
        self.sample_indices = np.asarray(self.sample_indices, dtype=np.int64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.sample_indices.ndim != 1 or self.labels.ndim != 1:
            raise ValueError("sample_indices and labels must be 1-D")
        if len(self.sample_indices) != len(self.labels):
            raise ValueError("sample_indices and labels differ in length")
        if np.any(self.sample_indices < 0):
            raise ValueError("sample indices must be non-negative")
        if len(self.sample_indices) > 1 and np.any(np.diff(self.sample_indices) <= 0):
            raise ValueError("sample indices must be strictly increasing")
        bad = set(np.unique(self.labels)) - {0, 1}
        if bad:
            raise ValueError(f"labels must be 0 or 1, found {sorted(bad)}")

    def __len__(self) -> int:
        return len(self.sample_indices)

    def __iter__(self):
        return iter(zip(self.sample_indices.tolist(), self.labels.tolist()))

    def check_against(self, recording: ContinuousRecording) -> None:
        """Every event index must fall inside the paired recording."""
        if len(self) and self.sample_indices[-1] >= recording.n_samples:
            raise ValueError(
                f"event at sample {self.sample_indices[-1]} outside recording "
                f"of {recording.n_samples} samples"
            )


@dataclass
class EpochSet:
    """Labeled fixed-size epochs, shape (n_epochs, n_channels, n_samples_per_epoch)."""

    data: np.ndarray
    labels: np.ndarray
    fs_hz: float
    channel_names: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.data = np.asarray(self.data, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.data.ndim != 3:
            raise ValueError(f"data must be 3-D (epoch, channel, sample), got {self.data.shape}")
        if min(self.data.shape) < 1:
            raise ValueError(f"all epoch dimensions must be positive, got {self.data.shape}")
        if self.labels.shape != (self.data.shape[0],):
            raise ValueError(
                f"{len(self.labels)} labels for {self.data.shape[0]} epochs"
            )
        bad = set(np.unique(self.labels)) - {0, 1}
        if bad:
            raise ValueError(f"labels must be 0 or 1, found {sorted(bad)}")
        if not self.fs_hz > 0:
            raise ValueError(f"fs_hz must be positive, got {self.fs_hz}")
        if not np.isfinite(self.data).all():
            raise ValueError("epoch data contains non-finite samples")
        if not self.channel_names:
            self.channel_names = default_channel_names(self.data.shape[1])
        if len(self.channel_names) != self.data.shape[1]:
            raise ValueError(
                f"{len(self.channel_names)} channel names for {self.data.shape[1]} channels"
            )

    @property
    def n_epochs(self) -> int:
        return self.data.shape[0]

    @property
    def n_channels(self) -> int:
        return self.data.shape[1]

    @property
    def n_samples_per_epoch(self) -> int:
        return self.data.shape[2]


@dataclass
class DatasetManifest:
    subject_id: str
    condition: str
    montage: str
    train_path: str
    test_path: str

    def __post_init__(self) -> None:
        if self.montage not in MONTAGE_CHANNEL_COUNTS:
            raise ValueError(
                f"montage must be one of {sorted(MONTAGE_CHANNEL_COUNTS)}, got {self.montage!r}"
            )

    def check_against(self, epochs: EpochSet) -> None:
        expected = MONTAGE_CHANNEL_COUNTS[self.montage]
        if epochs.n_channels != expected:
            raise ValueError(
                f"montage {self.montage!r} expects {expected} channels, "
                f"epoch file has {epochs.n_channels}"
            )


# ---------------------------------------------------------------------------
# binary helpers
# ---------------------------------------------------------------------------

def _read_exact(raw: bytes, offset: int, n: int, what: str) -> tuple[bytes, int]:
    if offset + n > len(raw):
        raise FileFormatError(f"truncated file: expected {n} bytes for {what}")
    return raw[offset:offset + n], offset + n


def _check_magic_version(raw: bytes, magic: bytes) -> int:
    chunk, offset = _read_exact(raw, 0, 4, "magic")
    if chunk != magic:
        raise FileFormatError(f"bad magic {chunk!r}, expected {magic!r}")
    chunk, offset = _read_exact(raw, offset, 4, "version")
    (version,) = struct.unpack("<I", chunk)
    if version != FORMAT_VERSION:
        raise FileFormatError(f"unsupported version {version}, expected {FORMAT_VERSION}")
    return offset


def _finite_or_raise(values: np.ndarray, what: str) -> None:
    if not np.isfinite(values).all():
        raise FileFormatError(f"{what} contains non-finite values")


# ---------------------------------------------------------------------------
# continuous recordings (.erpc)
# ---------------------------------------------------------------------------

def save_continuous(recording: ContinuousRecording, path: str | Path) -> None:
    payload = np.ascontiguousarray(recording.data, dtype="<f4")
    _finite_or_raise(payload, "recording")
    header = _MAGIC_CONTINUOUS + struct.pack(
        "<IIQf", FORMAT_VERSION, recording.n_channels, recording.n_samples,
        float(recording.fs_hz),
    )
    Path(path).write_bytes(header + payload.tobytes())


def load_continuous(path: str | Path) -> ContinuousRecording:
    raw = Path(path).read_bytes()
    offset = _check_magic_version(raw, _MAGIC_CONTINUOUS)
    chunk, offset = _read_exact(raw, offset, 16, "header")
    n_channels, n_samples, fs_hz = struct.unpack("<IQf", chunk)
    if n_channels < 1 or n_samples < 1:
        raise FileFormatError(f"invalid dimensions ({n_channels} channels, {n_samples} samples)")
    expected = offset + 4 * n_channels * n_samples
    if len(raw) != expected:
        raise FileFormatError(f"file is {len(raw)} bytes, header implies {expected}")
    data = np.frombuffer(raw, dtype="<f4", count=n_channels * n_samples, offset=offset)
    _finite_or_raise(data, "recording payload")
    return ContinuousRecording(
        data=data.reshape(n_channels, n_samples).astype(np.float64),
        fs_hz=float(fs_hz),
    )


# ---------------------------------------------------------------------------
# epoch sets (.erpe)
# ---------------------------------------------------------------------------

def save_epochs(epochs: EpochSet, path: str | Path) -> None:
    payload = np.ascontiguousarray(epochs.data, dtype="<f4")
    _finite_or_raise(payload, "epochs")
    header = _MAGIC_EPOCHS + struct.pack(
        "<IIIIf", FORMAT_VERSION, epochs.n_epochs, epochs.n_channels,
        epochs.n_samples_per_epoch, float(epochs.fs_hz),
    )
    labels = epochs.labels.astype(np.uint8).tobytes()
    Path(path).write_bytes(header + labels + payload.tobytes())


def load_epochs(path: str | Path) -> EpochSet:
    raw = Path(path).read_bytes()
    offset = _check_magic_version(raw, _MAGIC_EPOCHS)
    chunk, offset = _read_exact(raw, offset, 16, "header")
    n_epochs, n_channels, n_samples, fs_hz = struct.unpack("<IIIf", chunk)
    if n_epochs < 1 or n_channels < 1 or n_samples < 1:
        raise FileFormatError(
            f"invalid dimensions ({n_epochs} epochs, {n_channels} channels, {n_samples} samples)"
        )
    expected = offset + n_epochs + 4 * n_epochs * n_channels * n_samples
    if len(raw) != expected:
        raise FileFormatError(f"file is {len(raw)} bytes, header implies {expected}")
    labels = np.frombuffer(raw, dtype=np.uint8, count=n_epochs, offset=offset)
    bad = set(np.unique(labels)) - {0, 1}
    if bad:
        raise FileFormatError(f"labels must be 0 or 1, found {sorted(bad)}")
    offset += n_epochs
    data = np.frombuffer(raw, dtype="<f4", count=n_epochs * n_channels * n_samples, offset=offset)
    _finite_or_raise(data, "epoch payload")
    return EpochSet(
        data=data.reshape(n_epochs, n_channels, n_samples).astype(np.float64),
        labels=labels.astype(np.int64),
        fs_hz=float(fs_hz),
    )


# ---------------------------------------------------------------------------
# event lists (CSV)
# ---------------------------------------------------------------------------

_EVENTS_HEADER = "sample_index,label"


def save_events(events: EventList, path: str | Path) -> None:
    lines = [_EVENTS_HEADER]
    lines += [f"{s},{l}" for s, l in events]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_events(path: str | Path) -> EventList:
    text = Path(path).read_text(encoding="utf-8")
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0].strip() != _EVENTS_HEADER:
        raise FileFormatError(f'events file must start with header "{_EVENTS_HEADER}"')
    indices: list[int] = []
    labels: list[int] = []
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != 2:
            raise FileFormatError(f"line {lineno}: expected 2 fields, got {len(parts)}")
        try:
            idx, label = int(parts[0]), int(parts[1])
        except ValueError as exc:
            raise FileFormatError(f"line {lineno}: non-integer field") from exc
        if label not in (0, 1):
            raise FileFormatError(f"line {lineno}: label must be 0 or 1, got {label}")
        indices.append(idx)
        labels.append(label)
    try:
        return EventList(np.array(indices, dtype=np.int64), np.array(labels, dtype=np.int64))
    except ValueError as exc:
        raise FileFormatError(str(exc)) from exc


# ---------------------------------------------------------------------------
# models (.erpm)
# ---------------------------------------------------------------------------

def save_model(network: "Network", path: str | Path) -> None:
    header = _MAGIC_MODEL + struct.pack(
        "<I", FORMAT_VERSION
    ) + struct.pack("<10I", *network.arch.header_fields())
    params = network.params_vector()
    if not np.isfinite(params).all():
        raise ValueError("model parameters contain non-finite values")
    Path(path).write_bytes(header + params.astype("<f8").tobytes())


def load_model(path: str | Path) -> "Network":
    from .network import Architecture, Network

    raw = Path(path).read_bytes()
    offset = _check_magic_version(raw, _MAGIC_MODEL)
    chunk, offset = _read_exact(raw, offset, 40, "architecture header")
    fields = struct.unpack("<10I", chunk)
    try:
        arch = Architecture.from_header_fields(fields)
    except ValueError as exc:
        raise FileFormatError(f"invalid architecture header: {exc}") from exc
    expected = offset + 8 * arch.n_params
    if len(raw) != expected:
        raise FileFormatError(
            f"file is {len(raw)} bytes, architecture implies {expected} "
            f"({arch.n_params} parameters)"
        )
    params = np.frombuffer(raw, dtype="<f8", count=arch.n_params, offset=offset)
    _finite_or_raise(params, "model parameters")
    return Network.from_params_vector(arch, params.astype(np.float64))


# ---------------------------------------------------------------------------
# manifests and generic key=value files
# ---------------------------------------------------------------------------

def write_keyvalues(pairs: dict[str, object], path: str | Path) -> None:
    lines = [f"{key}={value}" for key, value in pairs.items()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_keyvalues(path: str | Path) -> dict[str, str]:
    pairs: dict[str, str] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise FileFormatError(f"line {lineno}: expected key=value, got {stripped!r}")
        key, _, value = stripped.partition("=")
        pairs[key.strip()] = value.strip()
    return pairs


_MANIFEST_KEYS = ("subject_id", "condition", "montage", "train_path", "test_path")


def save_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    write_keyvalues({key: getattr(manifest, key) for key in _MANIFEST_KEYS}, path)


def load_manifest(path: str | Path) -> DatasetManifest:
    pairs = read_keyvalues(path)
    missing = [key for key in _MANIFEST_KEYS if key not in pairs]
    if missing:
        raise FileFormatError(f"manifest missing keys: {', '.join(missing)}")
    try:
        return DatasetManifest(**{key: pairs[key] for key in _MANIFEST_KEYS})
    except ValueError as exc:
        raise FileFormatError(str(exc)) from exc
