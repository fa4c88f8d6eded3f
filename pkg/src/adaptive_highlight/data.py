"""Samples, ground truth, the on-disk dataset format and a synthetic generator.

On disk a split is a directory holding ``index.jsonl`` (one JSON object per
sample: ``video_id, user_id, T, D, n, offset, nbytes``) and ``features.bin``::

    b"AHLD1"  u32 record_count
    per record: u32 T, u32 D, u32 n,
                f32[T*D] video, f32[n*D] history, u8[T] labels

Integers and floats are little-endian.
"""

from __future__ import annotations

import itertools
import json
import struct
from dataclasses import dataclass, field, replace
from functools import reduce
from pathlib import Path

import numpy as np

MAGIC = b"AHLD1"
INDEX_NAME = "index.jsonl"
BLOB_NAME = "features.bin"
SPLITS = ("train", "val", "test")


class DatasetError(ValueError):
    pass


class MalformedHeaderError(DatasetError):
    pass


class DimensionMismatchError(DatasetError):
    pass


class TruncatedPayloadError(DatasetError):
    pass


@dataclass
class Sample:
    video_id: str
    user_id: str
    video: np.ndarray  # (T, D) float32
    history: np.ndarray  # (n, D) float32, oldest first
    labels: np.ndarray  # (T,) uint8

    def __post_init__(self):
        self.video = np.asarray(self.video, dtype=np.float32)
        self.history = np.asarray(self.history, dtype=np.float32).reshape(-1, self.video.shape[1])
        self.labels = np.asarray(self.labels, dtype=np.uint8)
        if self.video.ndim != 2:
            raise DimensionMismatchError(f"{self.video_id}: video must be (T, D), got {self.video.shape}")
        if self.labels.shape != (self.video.shape[0],):
            raise DimensionMismatchError(
                f"{self.video_id}: {self.labels.shape[0]} labels for {self.video.shape[0]} frames")
        if not np.isin(self.labels, (0, 1)).all():
            raise ValueError(f"{self.video_id}: labels must be binary")

    @property
    def num_frames(self):
        return self.video.shape[0]

    @property
    def feature_dim(self):
        return self.video.shape[1]

    @property
    def history_size(self):
        return self.history.shape[0]


def union_ground_truth(annotations):
    """Elementwise OR of several binary annotations of the same video."""
    annotations = [np.asarray(a, dtype=np.uint8) for a in annotations]
    if not annotations:
        raise ValueError("need at least one annotation")
    lengths = {a.shape for a in annotations}
    if len(lengths) != 1:
        raise DimensionMismatchError(f"annotation lengths differ: {sorted(lengths)}")
    return reduce(np.bitwise_or, annotations)


def restrict_history(sample, h):
    """Keep only the ``h`` most recent history elements."""
    if h < 0:
        raise ValueError("history size must be >= 0")
    if h >= sample.history_size:
        return sample
    return replace(sample, history=sample.history[sample.history_size - h:])


# ---------------------------------------------------------------------------
# serialization


def save_dataset(samples, path):
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    index_lines = []
    chunks = [MAGIC, struct.pack("<I", len(samples))]
    offset = len(MAGIC) + 4
    for s in samples:
        t, d = s.video.shape
        n = s.history_size
        record = b"".join([
            struct.pack("<3I", t, d, n),
            s.video.astype("<f4").tobytes(),
            s.history.astype("<f4").tobytes(),
            s.labels.astype(np.uint8).tobytes(),
        ])
        index_lines.append(json.dumps({
            "video_id": s.video_id, "user_id": s.user_id, "T": t, "D": d, "n": n,
            "offset": offset, "nbytes": len(record),
        }, sort_keys=True))
        chunks.append(record)
        offset += len(record)
    (path / BLOB_NAME).write_bytes(b"".join(chunks))
    (path / INDEX_NAME).write_text("".join(line + "\n" for line in index_lines))


def load_dataset(path):
    path = Path(path)
    try:
        blob = (path / BLOB_NAME).read_bytes()
        lines = [ln for ln in (path / INDEX_NAME).read_text().splitlines() if ln.strip()]
    except FileNotFoundError as exc:
        raise DatasetError(f"missing dataset file: {exc.filename}") from None
    if len(blob) < len(MAGIC) + 4 or blob[:len(MAGIC)] != MAGIC:
        raise MalformedHeaderError(f"{path / BLOB_NAME}: bad magic header")
    (count,) = struct.unpack_from("<I", blob, len(MAGIC))
    if count != len(lines):
        raise MalformedHeaderError(f"blob declares {count} records, index lists {len(lines)}")

    samples = []
    for i, line in enumerate(lines):
        try:
            entry = json.loads(line)
            t, d, n, offset = entry["T"], entry["D"], entry["n"], entry["offset"]
        except (json.JSONDecodeError, KeyError) as exc:
            raise MalformedHeaderError(f"record {i}: bad index entry ({exc})") from None
        if offset + 12 > len(blob):
            raise TruncatedPayloadError(f"record {i}: header past end of blob")
        header = struct.unpack_from("<3I", blob, offset)
        if header != (t, d, n):
            raise DimensionMismatchError(f"record {i}: index says T,D,n={(t, d, n)}, blob says {header}")
        pos = offset + 12
        need = 4 * t * d + 4 * n * d + t
        if pos + need > len(blob):
            raise TruncatedPayloadError(f"record {i}: payload needs {need} bytes, {len(blob) - pos} left")
        video = np.frombuffer(blob, "<f4", t * d, pos).reshape(t, d)
        pos += 4 * t * d
        history = np.frombuffer(blob, "<f4", n * d, pos).reshape(n, d)
        pos += 4 * n * d
        labels = np.frombuffer(blob, np.uint8, t, pos)
        samples.append(Sample(entry["video_id"], entry["user_id"], video.copy(), history.copy(), labels.copy()))
    return samples


def save_splits(splits, root):
    for name, samples in splits.items():
        save_dataset(samples, Path(root) / name)


def load_splits(root, names=SPLITS):
    root = Path(root)
    return {name: load_dataset(root / name) for name in names if (root / name).is_dir()}


# ---------------------------------------------------------------------------
# synthetic users


@dataclass(frozen=True)
class UserArchetype:
    user_id: str
    preference: np.ndarray  # distribution over event types

    @property
    def preferred(self):
        return tuple(int(e) for e in np.flatnonzero(self.preference))


@dataclass
class SyntheticDataset:
    splits: dict
    event_embeddings: np.ndarray
    users: dict = field(default_factory=dict)  # user_id -> UserArchetype

    @property
    def train(self):
        return self.splits["train"]

    @property
    def val(self):
        return self.splits["val"]

    @property
    def test(self):
        return self.splits["test"]


def preference_sets(num_events, max_preferred=2):
    """All event subsets of size 1..max_preferred; each event occurs equally often."""
    return [c for k in range(1, max_preferred + 1) for c in itertools.combinations(range(num_events), k)]


def _segment_events(rng, num_frames, num_events, seg_min, seg_max):
    """Per-frame event ids: shuffled blocks of every event, first block always complete."""
    longest = min(seg_max, num_frames // num_events)
    events = np.empty(num_frames, dtype=np.int64)
    pos = 0
    while pos < num_frames:
        for e in rng.permutation(num_events):
            length = int(rng.integers(seg_min, longest + 1))
            events[pos:pos + length] = e
            pos += length
            if pos >= num_frames:
                break
    return events


def _segments(events):
    bounds = np.flatnonzero(np.diff(events)) + 1
    starts = np.concatenate([[0], bounds])
    ends = np.concatenate([bounds, [len(events)]])
    return list(zip(starts.tolist(), ends.tolist()))


def generate_synthetic(num_users=(200, 40, 40), videos_per_user=4, num_events=6,
                       frame_range=(64, 256), feature_dim=64, noise=0.1, seed=0,
                       segment_range=(8, 32), max_preferred=2):
    """Users who like 1-2 event types; frames are noisy event embeddings.

    Every video contains every event type at least once (the first shuffled
    block always fits), so nothing in a video reveals its owner's taste. The
    last video of a user is the prediction target; each preferred-event segment
    of an earlier video becomes one history element (its mean feature).
    """
    if isinstance(num_users, int):
        num_users = (num_users, max(1, num_users // 5), max(1, num_users // 5))
    if len(num_users) != 3 or min(num_users) < 1:
        raise ValueError("num_users must give at least one user per split")
    if num_events < 2:
        raise ValueError("need at least 2 event types")
    if videos_per_user < 2:
        raise ValueError("videos_per_user must be >= 2 (history + target)")
    if noise < 0 or feature_dim < 1:
        raise ValueError("noise must be >= 0 and feature_dim >= 1")
    seg_min, seg_max = segment_range
    t_min, t_max = frame_range
    if not 1 <= seg_min <= seg_max or t_min > t_max:
        raise ValueError("invalid segment or frame range")
    if t_min < seg_min * num_events:
        raise ValueError(f"frame_range minimum {t_min} cannot hold {num_events} segments of >= {seg_min} frames")
    if not 1 <= max_preferred < num_events:
        raise ValueError("max_preferred must be in [1, num_events)")

    rng = np.random.default_rng(seed)
    emb = rng.standard_normal((num_events, feature_dim))
    emb /= np.linalg.norm(emb, axis=1, keepdims=True)

    choices = preference_sets(num_events, max_preferred)
    pool = []
    splits, users = {}, {}
    uid = 0
    for split, count in zip(SPLITS, num_users):
        samples = []
        for _ in range(count):
            if not pool:
                pool = [choices[i] for i in rng.permutation(len(choices))]
            preferred = pool.pop()
            pref = np.zeros(num_events)
            pref[list(preferred)] = 1.0 / len(preferred)
            user = UserArchetype(f"u{uid:05d}", pref)
            users[user.user_id] = user
            uid += 1

            history = []
            for k in range(videos_per_user):
                t = int(rng.integers(t_min, t_max + 1))
                events = _segment_events(rng, t, num_events, seg_min, seg_max)
                frames = (emb[events] + noise * rng.standard_normal((t, feature_dim))).astype(np.float32)
                labels = np.isin(events, preferred).astype(np.uint8)
                if k < videos_per_user - 1:
                    for lo, hi in _segments(events):
                        if labels[lo]:
                            history.append(frames[lo:hi].mean(axis=0))
                else:
                    samples.append(Sample(f"{split}-{user.user_id}-v{k}", user.user_id, frames,
                                          np.array(history, dtype=np.float32), labels))
        splits[split] = samples
    return SyntheticDataset(splits, emb.astype(np.float32), users)
