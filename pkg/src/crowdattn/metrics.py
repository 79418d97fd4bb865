"""Displacement-error metrics and the evaluation driver.

Average displacement error (ADE) is the mean Euclidean distance between
predicted and true positions over every aligned (pedestrian, step) pair in
the prediction span; final displacement error (FDE) is the mean distance at
the last predicted step only. Pairs whose truth is missing (the pedestrian
left the scene, or entered too late to be forecast) are skipped, and
aggregation across windows and scenes weights by contributing pairs rather
than by window.
"""

import math
from dataclasses import dataclass, field

from .data import window_sequences
from .errors import DataFormatError
from .inference import rollout
from .model import MODE_SOCIAL


def _distances(predicted, truth):
    pairs = []
    for key, (px, py) in predicted.items():
        if key in truth:
            tx, ty = truth[key]
            pairs.append(math.hypot(px - tx, py - ty))
    return pairs


def ade(predicted, truth) -> float:
    """Mean distance over aligned (ped, step) pairs; both args are
    {(ped_id, step): (x, y)} mappings."""
    pairs = _distances(predicted, truth)
    if not pairs:
        raise DataFormatError("nothing to evaluate")
    return math.fsum(pairs) / len(pairs)


def fde(predicted, truth, final_step: int) -> float:
    """Mean distance at the final predicted step only."""
    final_pred = {k: v for k, v in predicted.items() if k[1] == final_step}
    pairs = _distances(final_pred, truth)
    if not pairs:
        raise DataFormatError("nothing to evaluate at the final step")
    return math.fsum(pairs) / len(pairs)


def truth_tracks(window, t_from: int):
    """{(ped, step): position} for the window's frames from step t_from on."""
    truth = {}
    for t in range(t_from, len(window.frames)):
        for ped, x, y in window.frames[t].entries:
            truth[(ped, t)] = (x, y)
    return truth


@dataclass
class SceneEval:
    scene: str
    ade_m: float
    fde_m: float
    n_peds: int
    n_windows: int


@dataclass
class EvalReport:
    scenes: list = field(default_factory=list)
    aggregate: SceneEval | None = None

    def to_csv(self) -> str:
        lines = ["scene,ade_m,fde_m,n_peds,n_windows"]
        for row in self.scenes + ([self.aggregate] if self.aggregate else []):
            lines.append(f"{row.scene},{row.ade_m:.6f},{row.fde_m:.6f},"
                         f"{row.n_peds},{row.n_windows}")
        return "\n".join(lines) + "\n"


class _Accumulator:
    def __init__(self):
        self.dist = []
        self.final = []
        self.peds = 0
        self.windows = 0

    def add_window(self, predicted, truth, final_step):
        self.windows += 1
        contributing = set()
        for key, (px, py) in predicted.items():
            if key in truth:
                tx, ty = truth[key]
                d = math.hypot(px - tx, py - ty)
                self.dist.append(d)
                if key[1] == final_step:
                    self.final.append(d)
                contributing.add(key[0])
        self.peds += len(contributing)

    def merge(self, other):
        self.dist.extend(other.dist)
        self.final.extend(other.final)
        self.peds += other.peds
        self.windows += other.windows

    def row(self, scene):
        if not self.dist:
            raise DataFormatError(f"nothing to evaluate in scene {scene}")
        if not self.final:
            raise DataFormatError(
                f"no final-step truth to evaluate in scene {scene}")
        return SceneEval(scene=scene,
                         ade_m=math.fsum(self.dist) / len(self.dist),
                         fde_m=math.fsum(self.final) / len(self.final),
                         n_peds=self.peds, n_windows=self.windows)


def evaluate_scenes(scenes, params, mode=MODE_SOCIAL, t_obs=8, t_pred=20,
                    stride=None, deterministic=True, normals=None,
                    predictor=None) -> EvalReport:
    """Window each scene, forecast every window, and score ADE/FDE.

    ``predictor`` overrides the model rollout with any callable mapping a
    window to a Forecast (used for oracle baselines in tests).
    """
    if predictor is None:
        def predictor(window):
            return rollout(window, params, mode=mode,
                           deterministic=deterministic, normals=normals)
    report = EvalReport()
    total = _Accumulator()
    for scene in scenes:
        acc = _Accumulator()
        for window in window_sequences(scene, t_obs, t_pred, stride):
            forecast = predictor(window)
            truth = truth_tracks(window, t_obs)
            acc.add_window(forecast.predicted_tracks(), truth, t_pred - 1)
        report.scenes.append(acc.row(scene.scene_id))
        total.merge(acc)
    report.aggregate = total.row("aggregate")
    return report
