"""Crowd trajectory data: canonical format, windowing, and splits.

The canonical on-disk format is UTF-8 text with LF line endings, one
observation per line::

    frame_id<TAB>ped_id<TAB>x<TAB>y

Frames are annotation steps 0.4 s apart, coordinates are meters in world
frame, and ``#`` starts a comment line. ``convert_raw`` adapts the common
whitespace-separated four-column annotation layout (arbitrary column order,
raw video frame numbers at a fixed stride) into this format, splitting
pedestrians with tracking gaps into separate ids so that every id covers a
contiguous run of frames.
"""

import math
from dataclasses import dataclass

from .errors import DataFormatError, UsageError
from .rng import stream

FRAME_INTERVAL_S = 0.4
DEFAULT_T_OBS = 8
DEFAULT_T_PRED = 20
TRAIN_FRACTION = 0.8


@dataclass(frozen=True)
class FrameObservation:
    """All pedestrians annotated at one frame: (ped_id, x, y) entries."""

    frame_id: int
    entries: tuple  # ((ped_id, x, y), ...) sorted by ped_id

    def ped_ids(self):
        return tuple(e[0] for e in self.entries)

    def position(self, ped_id):
        for pid, x, y in self.entries:
            if pid == ped_id:
                return (x, y)
        return None


@dataclass(frozen=True)
class TrajectorySet:
    """One scene's annotated frames, immutable after construction."""

    scene_id: str
    frames: tuple  # (FrameObservation, ...) with strictly increasing ids
    frame_interval_s: float = FRAME_INTERVAL_S

    def n_frames(self):
        return len(self.frames)

    def ped_ids(self):
        ids = set()
        for f in self.frames:
            ids.update(f.ped_ids())
        return tuple(sorted(ids))


def make_trajectory_set(scene_id, observations) -> TrajectorySet:
    """Build a validated TrajectorySet from (frame, ped, x, y) tuples."""
    by_frame = {}
    seen = set()
    for frame, ped, x, y in observations:
        frame = int(frame)
        ped = int(ped)
        if not (math.isfinite(x) and math.isfinite(y)):
            raise DataFormatError(
                f"non-finite position for pedestrian {ped} at frame {frame}")
        if (frame, ped) in seen:
            raise DataFormatError(
                f"duplicate observation for pedestrian {ped} at frame {frame}")
        seen.add((frame, ped))
        by_frame.setdefault(frame, []).append((ped, float(x), float(y)))
    if not by_frame:
        raise DataFormatError("no observations")
    frames = tuple(
        FrameObservation(frame, tuple(sorted(by_frame[frame])))
        for frame in sorted(by_frame))
    return TrajectorySet(scene_id=scene_id, frames=frames)


def parse_canonical(text, scene_id="scene") -> TrajectorySet:
    """Parse canonical trajectory text into a TrajectorySet."""
    if hasattr(text, "read"):
        text = text.read()
    observations = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) != 4:
            raise DataFormatError(
                f"line {lineno}: expected 4 tab-separated fields, got {len(fields)}")
        try:
            frame = int(fields[0])
            ped = int(fields[1])
            x = float(fields[2])
            y = float(fields[3])
        except ValueError as exc:
            raise DataFormatError(f"line {lineno}: {exc}") from None
        if not (math.isfinite(x) and math.isfinite(y)):
            raise DataFormatError(f"line {lineno}: non-finite position")
        observations.append((frame, ped, x, y))
    if not observations:
        raise DataFormatError("no observations")
    return make_trajectory_set(scene_id, observations)


def serialize_canonical(ts: TrajectorySet) -> str:
    """Canonical text for a TrajectorySet; parse(serialize(ts)) == ts."""
    lines = []
    for frame in ts.frames:
        for ped, x, y in frame.entries:
            lines.append(f"{frame.frame_id}\t{ped}\t{x!r}\t{y!r}")
    return "\n".join(lines) + "\n"


_COLUMN_NAMES = ("frame", "id", "x", "y")


def convert_raw(text, column_order: str, frame_stride: int) -> str:
    """Convert a whitespace-separated 4-column annotation file to canonical text.

    ``column_order`` is a comma-separated permutation of ``frame,id,x,y``
    naming what each input column holds. Raw frame numbers must be
    multiples of ``frame_stride`` and are renumbered to annotation steps
    (frame // stride). Pedestrians with gaps in their annotation are split
    into separate ids: the first contiguous segment keeps the original id,
    later segments receive fresh ids above the largest one seen.
    """
    if hasattr(text, "read"):
        text = text.read()
    cols = tuple(c.strip() for c in column_order.split(","))
    if sorted(cols) != sorted(_COLUMN_NAMES):
        raise UsageError(
            f"column order must be a permutation of {','.join(_COLUMN_NAMES)}, "
            f"got {column_order!r}")
    if frame_stride <= 0:
        raise UsageError("frame stride must be positive")
    at = {name: cols.index(name) for name in _COLUMN_NAMES}

    rows = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split()
        if len(fields) != 4:
            raise DataFormatError(
                f"line {lineno}: expected 4 columns, got {len(fields)}")
        try:
            values = [float(v) for v in fields]
        except ValueError:
            raise DataFormatError(f"line {lineno}: non-numeric field") from None
        raw_frame = values[at["frame"]]
        raw_id = values[at["id"]]
        if abs(raw_frame - round(raw_frame)) > 1e-9:
            raise DataFormatError(f"line {lineno}: non-integral frame id")
        if abs(raw_id - round(raw_id)) > 1e-9:
            raise DataFormatError(f"line {lineno}: non-integral pedestrian id")
        frame = int(round(raw_frame))
        if frame % frame_stride != 0:
            raise DataFormatError(
                f"line {lineno}: frame id {frame} not divisible by stride "
                f"{frame_stride}")
        rows.append((frame // frame_stride, int(round(raw_id)),
                     values[at["x"]], values[at["y"]]))
    if not rows:
        raise DataFormatError("no observations")

    seen = set()
    for frame, ped, _, _ in rows:
        if (frame, ped) in seen:
            raise DataFormatError(
                f"duplicate observation for pedestrian {ped} at frame {frame}")
        seen.add((frame, ped))

    # Split pedestrians with annotation gaps into fresh ids per segment.
    by_ped = {}
    for frame, ped, x, y in rows:
        by_ped.setdefault(ped, []).append((frame, x, y))
    next_id = max(by_ped) + 1
    observations = []
    for ped in sorted(by_ped):
        track = sorted(by_ped[ped])
        current = ped
        prev_frame = None
        for frame, x, y in track:
            if prev_frame is not None and frame != prev_frame + 1:
                current = next_id
                next_id += 1
            observations.append((frame, current, x, y))
            prev_frame = frame
    return serialize_canonical(make_trajectory_set("converted", observations))


@dataclass(frozen=True)
class SequenceWindow:
    """T_pred consecutive frames of one scene, the unit of training/eval.

    The first ``t_obs`` frames are the observation span. Pedestrians
    present in only part of the window are kept; their absent steps simply
    contribute no nodes.
    """

    scene_id: str
    frames: tuple
    t_obs: int
    t_pred: int

    @property
    def start_frame(self):
        return self.frames[0].frame_id

    @property
    def window_id(self):
        return f"{self.scene_id}:{self.start_frame}"

    def ped_ids(self):
        ids = set()
        for f in self.frames:
            ids.update(f.ped_ids())
        return tuple(sorted(ids))

    def position(self, ped_id, step):
        """Position of a pedestrian at window step (None when absent)."""
        return self.frames[step].position(ped_id)


def window_sequences(ts: TrajectorySet, t_obs=DEFAULT_T_OBS,
                     t_pred=DEFAULT_T_PRED, stride=None):
    """Slide fixed-length windows over every run of consecutive frames.

    ``stride`` defaults to ``t_pred`` (non-overlapping windows). Windows
    whose observation span contains no pedestrian are dropped. Scenes with
    fewer than ``t_pred`` frames yield an empty list.
    """
    if not 0 < t_obs < t_pred:
        raise UsageError(f"need 0 < t_obs < t_pred, got {t_obs}, {t_pred}")
    if stride is None:
        stride = t_pred
    if stride < 1:
        raise UsageError("stride must be >= 1")

    runs = []
    run = [ts.frames[0]]
    for frame in ts.frames[1:]:
        if frame.frame_id == run[-1].frame_id + 1:
            run.append(frame)
        else:
            runs.append(run)
            run = [frame]
    runs.append(run)

    windows = []
    for run in runs:
        for start in range(0, len(run) - t_pred + 1, stride):
            frames = tuple(run[start:start + t_pred])
            if any(f.entries for f in frames[:t_obs]):
                windows.append(SequenceWindow(ts.scene_id, frames, t_obs, t_pred))
    return windows


def split_train_val(windows, seed: int):
    """Deterministic 80-20 split of a window list into train/validation."""
    n = len(windows)
    perm = stream(seed, "train-val-split").permutation(n)
    n_train = int(math.floor(TRAIN_FRACTION * n + 0.5))
    train = [windows[i] for i in perm[:n_train]]
    val = [windows[i] for i in perm[n_train:]]
    return train, val


def leave_one_out_splits(scenes, held_out_index: int, t_obs=DEFAULT_T_OBS,
                         t_pred=DEFAULT_T_PRED, stride=None, seed=0):
    """Hold out one scene for testing; split the rest 80-20 train/validation."""
    if not 0 <= held_out_index < len(scenes):
        raise UsageError(
            f"held-out index {held_out_index} out of range for "
            f"{len(scenes)} scenes")
    test = window_sequences(scenes[held_out_index], t_obs, t_pred, stride)
    pooled = []
    for i, scene in enumerate(scenes):
        if i != held_out_index:
            pooled.extend(window_sequences(scene, t_obs, t_pred, stride))
    train, val = split_train_val(pooled, seed)
    return train, val, test
