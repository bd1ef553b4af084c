"""Raw scanline ingestion, preprocessing, windowing, and dataset assembly.

The raw recording format is per-utterance echo intensity: (T, 64 scanlines,
S samples) of uint8, nominally S=946 (any uniform S >= 128 is accepted at
ingestion). Preprocessing resamples each scanline to 128 points, min-max
normalizes intensities to [-1, 1] with statistics fit on the train split
only, standardizes the 80 regression targets per column (again train-split
statistics), and slices each utterance into sliding 25-frame windows whose
target is the center frame's vector. Windows never cross utterance
boundaries, and an utterance never contributes windows to two splits.

On disk a dataset directory holds, per utterance, a frames tensor
(``<id>.frames.stn``, uint8), a targets tensor (``<id>.targets.stn``,
float32 (T, 80)), a sidecar ``<id>.json`` with id and frame rate, plus a
``manifest.json`` recording the split assignment.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, FormatError
from .rng import derive_rng
from .tensorio import read_tensor, write_tensor

RAW_SCANLINES = 64
RAW_SAMPLES = 946
MIN_RAW_SAMPLES = 128
FRAME_RATE = 82.0
IMAGE_HEIGHT = 128
IMAGE_WIDTH = 64
WINDOW = 25
WINDOW_CENTER = 12
TARGET_DIM = 80

SPLIT_NAMES = ("train", "dev", "test")
SPLIT_WEIGHTS = (310, 41, 87)

MANIFEST_NAME = "manifest.json"


# ---------------------------------------------------------------------------
# raw utterances
# ---------------------------------------------------------------------------

@dataclass
class RawUtterance:
    id: str
    frames: np.ndarray  # (T, 64, S) uint8
    frame_rate: float = FRAME_RATE

    def __post_init__(self):
        f = self.frames
        if f.ndim != 3:
            raise DataError(f"utterance {self.id}: frames must be (T, scanlines, samples), got {f.shape}")
        if f.shape[1] != RAW_SCANLINES:
            raise DataError(
                f"utterance {self.id}: expected {RAW_SCANLINES} scanlines, got {f.shape[1]}"
            )
        if f.shape[2] < MIN_RAW_SAMPLES:
            raise DataError(
                f"utterance {self.id}: needs >= {MIN_RAW_SAMPLES} samples per scanline, "
                f"got {f.shape[2]}"
            )
        if f.dtype != np.uint8:
            raise DataError(f"utterance {self.id}: frames must be uint8, got {f.dtype}")


def load_raw(frames_path: str | Path) -> RawUtterance:
    """Read one utterance from its frames tensor plus the JSON sidecar."""
    frames_path = Path(frames_path)
    frames = read_tensor(frames_path)
    if frames.dtype != np.uint8 or frames.ndim != 3:
        raise FormatError(
            f"{frames_path.name}: raw frames must be a rank-3 uint8 tensor, "
            f"got {frames.dtype} rank {frames.ndim}"
        )
    sidecar = frames_path.with_suffix("").with_suffix(".json")
    utt_id = frames_path.name.split(".")[0]
    rate = FRAME_RATE
    if sidecar.exists():
        meta = json.loads(sidecar.read_text())
        utt_id = meta.get("id", utt_id)
        rate = float(meta.get("frame_rate", rate))
    return RawUtterance(id=utt_id, frames=frames, frame_rate=rate)


# ---------------------------------------------------------------------------
# preprocessing
# ---------------------------------------------------------------------------

def downsample(frames: np.ndarray) -> np.ndarray:
    """Resample each scanline to 128 points; output is (T, 128, 64, 1).

    Linear interpolation along the echo axis with endpoints mapped to
    endpoints, so constants and affine ramps are reproduced exactly. The
    resampled echo axis becomes image height; scanlines become width.
    """
    t, lines, samples = frames.shape
    pos = np.linspace(0.0, samples - 1.0, IMAGE_HEIGHT)
    i0 = np.floor(pos).astype(np.intp)
    i0 = np.minimum(i0, samples - 2) if samples > 1 else i0
    frac = (pos - i0).astype(np.float32)
    f = frames.astype(np.float32)
    out = f[:, :, i0] * (1.0 - frac) + f[:, :, i0 + 1] * frac  # (T, 64, 128)
    return np.ascontiguousarray(out.transpose(0, 2, 1))[..., None]


@dataclass
class MinMaxStats:
    lo: float
    hi: float

    def __post_init__(self):
        if not self.hi > self.lo:
            raise DataError(f"degenerate intensity range: lo={self.lo}, hi={self.hi}")


def fit_minmax(arrays: list[np.ndarray]) -> MinMaxStats:
    lo = min(float(a.min()) for a in arrays)
    hi = max(float(a.max()) for a in arrays)
    return MinMaxStats(lo=lo, hi=hi)


def minmax_normalize(x: np.ndarray, stats: MinMaxStats) -> np.ndarray:
    """Map [lo, hi] to [-1, 1]; out-of-range values (dev/test) are clamped."""
    y = 2.0 * (x - stats.lo) / (stats.hi - stats.lo) - 1.0
    return np.clip(y, -1.0, 1.0, out=y)


@dataclass
class TargetStats:
    mean: np.ndarray  # (80,)
    std: np.ndarray   # (80,) population std

    def __post_init__(self):
        bad = np.flatnonzero(self.std <= 0)
        if bad.size:
            raise DataError(f"degenerate target: zero variance in column {int(bad[0])}")


def fit_target_stats(targets: np.ndarray) -> TargetStats:
    """Per-column mean and population standard deviation of (N, K) targets."""
    t64 = targets.astype(np.float64)
    return TargetStats(mean=t64.mean(axis=0), std=t64.std(axis=0))


def standardize_targets(targets: np.ndarray, stats: TargetStats) -> np.ndarray:
    return ((targets - stats.mean) / stats.std).astype(targets.dtype, copy=False)


def destandardize_targets(targets: np.ndarray, stats: TargetStats) -> np.ndarray:
    return (targets * stats.std + stats.mean).astype(targets.dtype, copy=False)


def window_starts(frame_count: int, window: int = WINDOW) -> range:
    """Start indices of the stride-1 sliding windows in one utterance."""
    return range(0, max(frame_count - window + 1, 0))


def split_by_utterance(n_utterances: int, seed: int = 0) -> dict[str, list[int]]:
    """Utterance-level split in the 310:41:87 proportion.

    Largest-remainder rounding with at least one utterance per split;
    assignment follows a seeded shuffle of the utterance indices.
    """
    if n_utterances < 3:
        raise DataError(f"need at least 3 utterances to split, got {n_utterances}")
    total = sum(SPLIT_WEIGHTS)
    quotas = [n_utterances * w / total for w in SPLIT_WEIGHTS]
    counts = [max(int(q), 1) for q in quotas]
    remainders = [q - int(q) for q in quotas]
    order = sorted(range(3), key=lambda i: remainders[i], reverse=True)
    i = 0
    while sum(counts) < n_utterances:
        counts[order[i % 3]] += 1
        i += 1
    while sum(counts) > n_utterances:
        # give back from the largest split, never below 1
        j = int(np.argmax(counts))
        counts[j] -= 1
    perm = derive_rng(seed, "split").permutation(n_utterances)
    out = {}
    at = 0
    for name, count in zip(SPLIT_NAMES, counts):
        out[name] = sorted(int(v) for v in perm[at:at + count])
        at += count
    return out


# ---------------------------------------------------------------------------
# windowed dataset
# ---------------------------------------------------------------------------

@dataclass
class WindowedDataset:
    """Preprocessed windows, materialized lazily at batch time.

    ``frames[u]`` is the normalized (T, 128, 64, 1) float32 block of
    utterance ``u``; a window (u, start) is ``frames[u][start:start+25]``
    and its target is ``targets[u][start + 12]``.
    """

    frames: list[np.ndarray]
    targets: list[np.ndarray]
    ids: list[str]
    splits: dict[str, list[int]]
    window_index: dict[str, list[tuple[int, int]]]
    input_stats: MinMaxStats
    target_stats: TargetStats
    window: int = WINDOW
    center: int = WINDOW_CENTER
    skipped: int = 0

    def size(self, split: str) -> int:
        return len(self.window_index[split])

    def batch(self, split: str, indices: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        index = self.window_index[split]
        xs = np.empty((len(indices), self.window, IMAGE_HEIGHT, IMAGE_WIDTH, 1),
                      dtype=np.float32)
        ys = np.empty((len(indices), self.targets[0].shape[1]), dtype=np.float32)
        for row, i in enumerate(indices):
            u, start = index[int(i)]
            xs[row] = self.frames[u][start:start + self.window]
            ys[row] = self.targets[u][start + self.center]
        return xs, ys

    def materialize(self, split: str) -> tuple[np.ndarray, np.ndarray]:
        return self.batch(split, np.arange(self.size(split)))


def build_dataset(utterances: list[RawUtterance], targets: list[np.ndarray],
                  splits: dict[str, list[int]], window: int = WINDOW,
                  input_stats: MinMaxStats | None = None,
                  target_stats: TargetStats | None = None) -> WindowedDataset:
    """Run the preprocessing chain and assemble the windowed dataset.

    Normalization statistics come from the train split only; pass
    ``input_stats``/``target_stats`` (e.g. from a checkpoint) to reuse
    stored statistics instead of refitting. Utterances shorter than one
    window are skipped (counted in ``skipped``).
    """
    if len(utterances) != len(targets):
        raise DataError(f"{len(utterances)} utterances but {len(targets)} target arrays")
    for utt, tgt in zip(utterances, targets):
        if len(tgt) != len(utt.frames):
            raise DataError(
                f"utterance {utt.id}: {len(utt.frames)} frames but {len(tgt)} target rows"
            )
    order = sorted(range(len(utterances)), key=lambda i: utterances[i].id)
    remap = {old: new for new, old in enumerate(order)}
    utterances = [utterances[i] for i in order]
    targets = [np.asarray(targets[i], dtype=np.float32) for i in order]
    splits = {name: sorted(remap[i] for i in members)
              for name, members in splits.items()}

    frames = [downsample(u.frames) for u in utterances]
    train_members = splits.get("train", [])
    if input_stats is None:
        if not train_members:
            raise DataError("train split is empty")
        input_stats = fit_minmax([frames[u] for u in train_members])
    frames = [minmax_normalize(f, input_stats) for f in frames]

    center = WINDOW_CENTER if window == WINDOW else window // 2
    window_index: dict[str, list[tuple[int, int]]] = {}
    skipped = 0
    for name, members in splits.items():
        rows: list[tuple[int, int]] = []
        for u in members:
            starts = window_starts(len(frames[u]), window)
            if len(starts) == 0:
                skipped += 1
            rows.extend((u, s) for s in starts)
        window_index[name] = rows

    if target_stats is None:
        if not window_index.get("train"):
            raise DataError("train split contains no full windows")
        train_targets = np.stack([
            targets[u][start + center]
            for u, start in window_index["train"]
        ])
        target_stats = fit_target_stats(train_targets)
    targets = [standardize_targets(t, target_stats) for t in targets]

    return WindowedDataset(
        frames=frames, targets=targets, ids=[u.id for u in utterances],
        splits=splits, window_index=window_index, input_stats=input_stats,
        target_stats=target_stats, window=window, center=center, skipped=skipped,
    )


# ---------------------------------------------------------------------------
# dataset directory I/O
# ---------------------------------------------------------------------------

def write_dataset_dir(path: str | Path, utterances: list[RawUtterance],
                      targets: list[np.ndarray], splits: dict[str, list[int]]) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    split_of = {}
    for name, members in splits.items():
        for u in members:
            split_of[u] = name
    entries = []
    for i, (utt, tgt) in enumerate(zip(utterances, targets)):
        frames_file = f"{utt.id}.frames.stn"
        targets_file = f"{utt.id}.targets.stn"
        write_tensor(path / frames_file, utt.frames)
        write_tensor(path / targets_file, np.asarray(tgt, dtype=np.float32))
        (path / f"{utt.id}.json").write_text(json.dumps(
            {"id": utt.id, "frame_rate": utt.frame_rate}, sort_keys=True) + "\n")
        entries.append({
            "id": utt.id,
            "frames_file": frames_file,
            "targets_file": targets_file,
            "split": split_of.get(i, "train"),
            "frame_count": int(len(utt.frames)),
        })
    manifest = {"format": "sonovox-dataset", "version": 1,
                "utterances": sorted(entries, key=lambda e: e["id"])}
    (path / MANIFEST_NAME).write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_dataset_dir(path: str | Path
                     ) -> tuple[list[RawUtterance], list[np.ndarray], dict[str, list[int]]]:
    path = Path(path)
    manifest_path = path / MANIFEST_NAME
    if not manifest_path.exists():
        raise DataError(f"{path} is not a dataset directory (no {MANIFEST_NAME})")
    manifest = json.loads(manifest_path.read_text())
    utterances = []
    targets = []
    splits: dict[str, list[int]] = {name: [] for name in SPLIT_NAMES}
    for i, entry in enumerate(manifest["utterances"]):
        utt = load_raw(path / entry["frames_file"])
        tgt = read_tensor(path / entry["targets_file"])
        if tgt.ndim != 2:
            raise FormatError(f"{entry['targets_file']}: targets must be rank 2, got {tgt.ndim}")
        utterances.append(utt)
        targets.append(tgt.astype(np.float32))
        splits.setdefault(entry["split"], []).append(i)
    return utterances, targets, splits


def load_windowed(path: str | Path, window: int = WINDOW,
                  input_stats: MinMaxStats | None = None,
                  target_stats: TargetStats | None = None) -> WindowedDataset:
    utterances, targets, splits = load_dataset_dir(path)
    return build_dataset(utterances, targets, splits, window=window,
                         input_stats=input_stats, target_stats=target_stats)


def dataset_fingerprint(path: str | Path) -> str:
    """Content hash of a dataset directory (file names + bytes, sorted)."""
    path = Path(path)
    digest = hashlib.sha256()
    for p in sorted(path.iterdir()):
        if p.is_file():
            digest.update(p.name.encode())
            digest.update(p.read_bytes())
    return digest.hexdigest()
