"""Turn raw object samples into normalized, padded, masked network input.

A sample is one tracked object at one timestamp: its pose, class label,
track id and the list of radar reflections the tracker associated to it.
Each reflection contributes five network features, in this order:

    [x_obj, y_obj, rcs, range, vr]

where (x_obj, y_obj) is the reflection position expressed in the tracked
object's own coordinate system (origin at the object, +x along its
heading). The azimuth angle is carried in the data format but is not a
network feature.

Also provides the track-wise train/val/test split and JSON-lines dataset
I/O.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Sequence, Tuple

import numpy as np

CLASSES = ("car", "pedestrian", "cyclist", "non_obstacle")
CLASS_TO_INDEX = {name: i for i, name in enumerate(CLASSES)}
N_FEATURES = 5
STD_FLOOR = 1e-6
DEFAULT_RANGE_CUTOFF = 75.0


class DatasetError(ValueError):
    """Malformed dataset content (carries a line number when applicable)."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class Reflection:
    """One radar detection, ego-motion compensated."""

    x: float
    y: float
    rcs: float
    range_m: float
    vr: float
    azimuth: float


@dataclass(frozen=True)
class ObjectPose:
    x: float
    y: float
    heading: float


@dataclass
class ObjectSample:
    """One tracked object at one timestamp; the unit of classification."""

    track_id: str
    class_label: str
    pose: ObjectPose
    reflections: List[Reflection]

    def __post_init__(self):
        if self.class_label not in CLASS_TO_INDEX:
            raise DatasetError(f"unknown class '{self.class_label}'")
        if len(self.reflections) < 1:
            raise DatasetError("a sample needs at least one reflection")

    @property
    def class_index(self) -> int:
        return CLASS_TO_INDEX[self.class_label]


@dataclass
class NormStats:
    """Per-feature mean and standard deviation (lengths N_FEATURES)."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.std = np.asarray(self.std, dtype=np.float64)
        if self.mean.shape != self.std.shape:
            raise ValueError("mean and std must have the same length")
        if np.any(self.std <= 0):
            raise ValueError("std components must be positive")

    @classmethod
    def identity(cls, n: int = N_FEATURES) -> "NormStats":
        return cls(np.zeros(n), np.ones(n))


@dataclass
class PaddedInput:
    """Fixed-size feature matrix plus validity mask feeding the network."""

    features: np.ndarray  # (pad_length, N_FEATURES)
    mask: np.ndarray      # (pad_length,) bool, True = real reflection
    m_real: int


def to_object_frame(refl: Reflection, pose: ObjectPose) -> Tuple[float, float]:
    """World position -> object coordinate system.

    Subtract the object position, then rotate by -heading so the object's
    heading axis becomes +x (length along +x, width along +y).
    """
    dx = refl.x - pose.x
    dy = refl.y - pose.y
    c = math.cos(pose.heading)
    s = math.sin(pose.heading)
    return c * dx + s * dy, -s * dx + c * dy


def build_feature_vector(refl: Reflection, pose: ObjectPose) -> np.ndarray:
    """The five per-reflection network features: [x_obj, y_obj, rcs, range, vr]."""
    x_obj, y_obj = to_object_frame(refl, pose)
    return np.array([x_obj, y_obj, refl.rcs, refl.range_m, refl.vr], dtype=np.float64)


def sample_feature_rows(sample: ObjectSample) -> np.ndarray:
    """Stack the feature vectors of all reflections of one sample, (M, 5)."""
    return np.stack(
        [build_feature_vector(r, sample.pose) for r in sample.reflections]
    )


def compute_norm_stats(samples: Iterable[ObjectSample]) -> NormStats:
    """Per-feature mean/std over all real reflections of the given samples.

    Uses the population (1/M) variance convention; std is floored at 1e-6
    so constant features stay usable. Compute this on the training split
    only and reuse the result for validation and test.
    """
    rows = [sample_feature_rows(s) for s in samples]
    if not rows:
        raise DatasetError("cannot compute normalization stats from an empty set")
    stacked = np.concatenate(rows, axis=0)
    mean = stacked.mean(axis=0)
    std = stacked.std(axis=0)  # numpy default ddof=0 = population convention
    return NormStats(mean, np.maximum(std, STD_FLOOR))


_overflow_count = 0


def overflow_count() -> int:
    """Number of pad_and_mask calls that had to drop reflections so far."""
    return _overflow_count


def reset_overflow_count() -> None:
    global _overflow_count
    _overflow_count = 0


def pad_and_mask(
    rows: np.ndarray, pad_length: int, stats: NormStats
) -> PaddedInput:
    """Normalize feature rows and place them in a fixed-size masked buffer.

    Real rows come first, padding rows are zero-filled, the mask is True
    exactly for the first m_real rows. If more rows arrive than fit, the
    pad_length highest-RCS reflections are kept (original order preserved)
    and the overflow counter is bumped.
    """
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2 or rows.shape[1] != N_FEATURES:
        raise DatasetError(f"expected (M, {N_FEATURES}) feature rows, got {rows.shape}")
    if rows.shape[0] < 1:
        raise DatasetError("cannot pad an empty reflection list")

    if rows.shape[0] > pad_length:
        global _overflow_count
        _overflow_count += 1
        order = np.argsort(-rows[:, 2], kind="stable")[:pad_length]
        rows = rows[np.sort(order)]

    m = rows.shape[0]
    features = np.zeros((pad_length, N_FEATURES), dtype=np.float64)
    features[:m] = (rows - stats.mean) / stats.std
    mask = np.zeros(pad_length, dtype=bool)
    mask[:m] = True
    return PaddedInput(features=features, mask=mask, m_real=m)


def prepare_input(
    sample: ObjectSample, pad_length: int, stats: NormStats
) -> PaddedInput:
    """Full per-sample pipeline: feature rows -> normalize -> pad and mask."""
    return pad_and_mask(sample_feature_rows(sample), pad_length, stats)


def trackwise_split(
    samples: Sequence[ObjectSample],
    ratios: Tuple[float, float, float] = (0.6, 0.2, 0.2),
    seed: int = 0,
) -> Tuple[List[ObjectSample], List[ObjectSample], List[ObjectSample]]:
    """Split at track granularity so no track's samples leak across splits.

    Tracks are shuffled per class with the seed and assigned by cumulative
    track count nearest the ratios.
    """
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError("split ratios must sum to 1")
    by_class: Dict[str, List[str]] = {c: [] for c in CLASSES}
    samples_by_track: Dict[str, List[ObjectSample]] = {}
    for s in samples:
        if s.track_id not in samples_by_track:
            by_class[s.class_label].append(s.track_id)
            samples_by_track[s.track_id] = []
        samples_by_track[s.track_id].append(s)

    rng = np.random.default_rng(seed)
    assigned: Tuple[List[str], List[str], List[str]] = ([], [], [])
    for label in CLASSES:
        tracks = by_class[label]
        if not tracks:
            continue
        if len(tracks) < 3:
            raise DatasetError(
                f"class '{label}' has only {len(tracks)} tracks; need at least 3"
            )
        tracks = list(tracks)
        rng.shuffle(tracks)
        n = len(tracks)
        b1 = int(n * ratios[0] + 0.5)
        b2 = int(n * (ratios[0] + ratios[1]) + 0.5)
        assigned[0].extend(tracks[:b1])
        assigned[1].extend(tracks[b1:b2])
        assigned[2].extend(tracks[b2:])

    def collect(track_ids: List[str]) -> List[ObjectSample]:
        out: List[ObjectSample] = []
        for tid in track_ids:
            out.extend(samples_by_track[tid])
        return out

    return collect(assigned[0]), collect(assigned[1]), collect(assigned[2])


def _sample_to_record(sample: ObjectSample) -> dict:
    return {
        "track_id": sample.track_id,
        "class": sample.class_label,
        "pose": {
            "x": sample.pose.x,
            "y": sample.pose.y,
            "heading": sample.pose.heading,
        },
        "reflections": [
            {
                "x": r.x,
                "y": r.y,
                "rcs": r.rcs,
                "range": r.range_m,
                "vr": r.vr,
                "azimuth": r.azimuth,
            }
            for r in sample.reflections
        ],
    }


def _record_to_sample(record: dict, line: int) -> ObjectSample:
    try:
        pose = record["pose"]
        reflections = [
            Reflection(
                x=float(r["x"]),
                y=float(r["y"]),
                rcs=float(r["rcs"]),
                range_m=float(r["range"]),
                vr=float(r["vr"]),
                azimuth=float(r["azimuth"]),
            )
            for r in record["reflections"]
        ]
        sample = ObjectSample(
            track_id=str(record["track_id"]),
            class_label=record["class"],
            pose=ObjectPose(
                x=float(pose["x"]),
                y=float(pose["y"]),
                heading=float(pose["heading"]),
            ),
            reflections=reflections,
        )
    except KeyError as exc:
        raise DatasetError(f"missing field {exc}", line) from exc
    except (TypeError, ValueError) as exc:
        if isinstance(exc, DatasetError):
            raise DatasetError(str(exc), line) from exc
        raise DatasetError(f"bad value: {exc}", line) from exc
    values = [sample.pose.x, sample.pose.y, sample.pose.heading]
    for r in sample.reflections:
        if r.range_m < 0:
            raise DatasetError(f"negative range {r.range_m}", line)
        values.extend((r.x, r.y, r.rcs, r.range_m, r.vr, r.azimuth))
    if not all(math.isfinite(v) for v in values):
        raise DatasetError("non-finite value", line)
    return sample


def write_dataset(samples: Iterable[ObjectSample], path: str) -> None:
    """Write one JSON object per line."""
    with open(path, "w", encoding="utf-8") as fh:
        for sample in samples:
            fh.write(json.dumps(_sample_to_record(sample)))
            fh.write("\n")


def read_dataset(
    path: str, range_cutoff: float | None = DEFAULT_RANGE_CUTOFF
) -> List[ObjectSample]:
    """Read a JSON-lines dataset, validating every line.

    Samples whose object range exceeds range_cutoff are dropped (pass
    None to keep everything). Parse problems raise DatasetError with the
    offending line number.
    """
    samples: List[ObjectSample] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                record = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"invalid JSON: {exc}", lineno) from exc
            sample = _record_to_sample(record, lineno)
            if range_cutoff is not None:
                if math.hypot(sample.pose.x, sample.pose.y) >= range_cutoff:
                    continue
            samples.append(sample)
    return samples
