"""Feature/annotation I/O, observation windows, resampling and synthetic videos."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .tensor import Tensor, interp_gather

FEATURE_MAGIC = b"BCGF"
FEATURE_VERSION = 1
_HEADER = struct.Struct("<4sIIII")


class DataError(ValueError):
    """Base class for ingestion failures."""


class MissingFileError(DataError, FileNotFoundError):
    pass


class CorruptHeaderError(DataError):
    pass


class NonFiniteValueError(DataError):
    pass


@dataclass
class FeatureSequence:
    video_id: str
    features: np.ndarray  # [D_i, l_s] float32
    snippet_interval: int = 1

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float32)
        if self.features.ndim != 2:
            raise DataError(f"{self.video_id}: features must be 2-D, got shape {self.features.shape}")
        if self.features.shape[0] < 1 or self.features.shape[1] < 2:
            raise DataError(f"{self.video_id}: need D_i >= 1 and l_s >= 2, got {self.features.shape}")
        if self.snippet_interval < 1:
            raise DataError(f"{self.video_id}: snippet interval must be positive")

    @property
    def dim(self) -> int:
        return self.features.shape[0]

    @property
    def length(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class GroundTruthInstance:
    t_start: float
    t_end: float

    def __post_init__(self):
        if not self.t_start < self.t_end:
            raise DataError(f"instance start {self.t_start} must precede end {self.t_end}")


@dataclass
class ObservationWindow:
    video_id: str
    window_start: int
    features: np.ndarray  # [D_i, l_w]
    instances: list[GroundTruthInstance] = field(default_factory=list)
    padded: bool = False
    # snippets of real data in this window (< l_w only for padded windows)
    valid_length: int = 0


# ---------------------------------------------------------------- feature files


def save_features(path: str | Path, seq: FeatureSequence) -> None:
    data = np.ascontiguousarray(seq.features, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(FEATURE_MAGIC, FEATURE_VERSION, seq.dim, seq.length, seq.snippet_interval))
        fh.write(data.tobytes())


def load_features(path: str | Path, video_id: str | None = None) -> FeatureSequence:
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(f"feature file not found: {path}")
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise CorruptHeaderError(f"{path}: file too short for header ({len(raw)} bytes)")
    magic, version, d_i, l_s, tau = _HEADER.unpack_from(raw)
    if magic != FEATURE_MAGIC:
        raise CorruptHeaderError(f"{path}: bad magic {magic!r}")
    if version != FEATURE_VERSION:
        raise CorruptHeaderError(f"{path}: unsupported version {version}")
    expected = d_i * l_s * 4
    body = raw[_HEADER.size :]
    if len(body) != expected:
        raise CorruptHeaderError(f"{path}: header declares {d_i}x{l_s} floats but body has {len(body)} bytes")
    feats = np.frombuffer(body, dtype="<f4").reshape(d_i, l_s).astype(np.float32)
    if not np.all(np.isfinite(feats)):
        raise NonFiniteValueError(f"{path}: feature matrix contains NaN or Inf")
    try:
        return FeatureSequence(video_id or path.stem, feats, tau)
    except DataError as exc:
        raise CorruptHeaderError(f"{path}: {exc}") from None


# ---------------------------------------------------------------- annotations


def save_annotations(path: str | Path, videos: dict[str, tuple[int, list[GroundTruthInstance]]]) -> None:
    doc = {
        "videos": [
            {
                "id": vid,
                "duration_snippets": int(duration),
                "instances": [{"start": float(g.t_start), "end": float(g.t_end)} for g in insts],
            }
            for vid, (duration, insts) in videos.items()
        ]
    }
    Path(path).write_text(json.dumps(doc, indent=1))


def load_annotations(path: str | Path) -> dict[str, tuple[int, list[GroundTruthInstance]]]:
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(f"annotation file not found: {path}")
    try:
        doc = json.loads(path.read_text())
        out = {}
        for v in doc["videos"]:
            insts = [GroundTruthInstance(float(i["start"]), float(i["end"])) for i in v["instances"]]
            out[str(v["id"])] = (int(v["duration_snippets"]), insts)
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise DataError(f"{path}: malformed annotation document ({exc})") from None
    return out


# ---------------------------------------------------------------- windows & resampling


def window_starts(l_s: int, l_w: int, stride: int) -> list[int]:
    if l_s <= l_w:
        return [0]
    starts = list(range(0, l_s - l_w + 1, stride))
    if starts[-1] + l_w < l_s:
        starts.append(l_s - l_w)
    return starts


def slide_windows(
    seq: FeatureSequence,
    annotations: list[GroundTruthInstance],
    l_w: int,
    stride: int | None = None,
) -> list[ObservationWindow]:
    """Cut ``seq`` into length-``l_w`` windows.

    Instances not fully inside a window are dropped from it. A sequence shorter
    than ``l_w`` yields one zero-padded window with ``padded=True``.
    """
    stride = l_w // 2 if stride is None else stride
    if l_w < 2:
        raise ValueError(f"l_w must be >= 2, got {l_w}")
    if not 1 <= stride <= l_w:
        raise ValueError(f"stride must be in [1, l_w], got {stride}")
    l_s = seq.length
    windows = []
    for start in window_starts(l_s, l_w, stride):
        feats = seq.features[:, start : start + l_w]
        padded = feats.shape[1] < l_w
        valid = feats.shape[1]
        if padded:
            feats = np.pad(feats, ((0, 0), (0, l_w - feats.shape[1])))
        local = [
            GroundTruthInstance(g.t_start - start, g.t_end - start)
            for g in annotations
            if g.t_start >= start and g.t_end <= start + l_w
        ]
        windows.append(ObservationWindow(seq.video_id, start, np.ascontiguousarray(feats), local, padded, valid))
    return windows


def rescale_linear(
    seq: FeatureSequence,
    target_len: int,
    annotations: list[GroundTruthInstance] | None = None,
) -> tuple[FeatureSequence, list[GroundTruthInstance]]:
    """Resample every channel onto ``target_len`` evenly spaced points over the same extent."""
    if target_len < 2:
        raise ValueError(f"target_len must be >= 2, got {target_len}")
    l_s = seq.length
    scale = target_len / l_s
    scaled = [GroundTruthInstance(g.t_start * scale, g.t_end * scale) for g in annotations or []]
    if target_len == l_s:
        return FeatureSequence(seq.video_id, seq.features.copy(), seq.snippet_interval), scaled
    src = np.arange(l_s, dtype=np.float64)
    dst = np.linspace(0.0, l_s - 1, target_len)
    out = np.stack([np.interp(dst, src, ch) for ch in seq.features.astype(np.float64)])
    return FeatureSequence(seq.video_id, out.astype(np.float32), seq.snippet_interval), scaled


def content_positions(i: int, j: int, n: int) -> np.ndarray:
    return i + np.arange(n, dtype=np.float64) * (j - i) / (n - 1)


def interp_content(f_c: Tensor, i: int, j: int, n: int = 16) -> Tensor:
    """``n`` linearly interpolated columns of ``f_c`` spanning locations ``i..j``."""
    if not i < j:
        raise ValueError(f"illegal pair ({i}, {j}): start must precede end")
    if i < 0 or j > f_c.shape[1] - 1:
        raise ValueError(f"pair ({i}, {j}) outside window of length {f_c.shape[1]}")
    if n < 2:
        raise ValueError(f"need at least 2 samples, got {n}")
    return interp_gather(f_c, content_positions(i, j, n))


# ---------------------------------------------------------------- synthetic data

# channel layout of generated features
ACTION_CH, ONSET_CH, OFFSET_CH = 0, 1, 2


def _pack_instances(rng: np.random.Generator, l_s: int, count: int, min_dur: int, max_dur: int):
    """Draw ``count`` non-overlapping integer intervals (with a 1-snippet gap) in [0, l_s]."""
    durations = rng.integers(min_dur, max_dur + 1, size=count)
    slack = l_s - int(durations.sum()) - (count + 1)
    if slack < 0:
        durations = np.full(count, min_dur)
        slack = l_s - int(durations.sum()) - (count + 1)
    if slack < 0:
        raise DataError(f"cannot pack {count} instances of >= {min_dur} snippets into {l_s} snippets")
    # distribute slack over count+1 gaps
    cuts = np.sort(rng.integers(0, slack + 1, size=count))
    gaps = np.diff(np.concatenate([[0], cuts, [slack]]))
    out, pos = [], 0
    for k in range(count):
        pos += 1 + int(gaps[k])
        out.append((pos, pos + int(durations[k])))
        pos += int(durations[k])
    return out


def synth_video(
    rng: np.random.Generator,
    video_id: str,
    l_s: int,
    d_i: int,
    n_instances: int,
    min_dur: int = 3,
    max_dur: int | None = None,
    noise: float = 0.1,
) -> tuple[FeatureSequence, list[GroundTruthInstance]]:
    if d_i < 3:
        raise DataError(f"synthetic features need D_i >= 3 (action/onset/offset channels), got {d_i}")
    max_dur = max(min_dur, max_dur if max_dur is not None else l_s // 4)
    spans = _pack_instances(rng, l_s, n_instances, min_dur, max_dur)
    feats = rng.normal(0.0, noise, size=(d_i, l_s))
    t = np.arange(l_s)
    for s, e in spans:
        # snippet n covers [n, n+1); action snippets are s..e-1
        feats[ACTION_CH, s:e] += 1.0
        feats[ONSET_CH] += np.maximum(0.0, 1.0 - np.abs(t - s) / 2.0)
        feats[OFFSET_CH] += np.maximum(0.0, 1.0 - np.abs(t - e) / 2.0)
        # remaining channels carry an instance-specific texture
        if d_i > 3:
            feats[3:, s:e] += rng.uniform(0.2, 0.6, size=(d_i - 3, 1))
    seq = FeatureSequence(video_id, feats.astype(np.float32), 1)
    return seq, [GroundTruthInstance(float(s), float(e)) for s, e in spans]


def synth_dataset(
    seed: int,
    n_videos: int,
    l_s: int,
    d_i: int,
    instances_per_video: tuple[int, int] = (1, 2),
    min_dur: int = 3,
    max_dur: int | None = None,
    noise: float = 0.1,
    prefix: str = "video",
) -> list[tuple[FeatureSequence, list[GroundTruthInstance]]]:
    """Deterministic synthetic corpus; video ``k`` depends only on ``(seed, k)``."""
    if n_videos < 1:
        raise DataError(f"n_videos must be >= 1, got {n_videos}")
    lo, hi = instances_per_video
    if not 1 <= lo <= hi:
        raise DataError(f"instances_per_video must satisfy 1 <= lo <= hi, got {instances_per_video}")
    out = []
    for k in range(n_videos):
        rng = np.random.default_rng([seed, k])
        count = int(rng.integers(lo, hi + 1))
        out.append(synth_video(rng, f"{prefix}_{k:04d}", l_s, d_i, count, min_dur, max_dur, noise))
    return out
