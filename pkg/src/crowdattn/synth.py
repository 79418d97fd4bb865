"""Synthetic crowd scenes for tests and desk-scale experiments.

Three generators, all deterministic per seed:

* ``constant_velocity`` - straight lines, one fixed velocity per pedestrian.
* ``head_on_swap`` - pairs approach along a shared line and sidestep via a
  smooth lateral offset peaking at their (randomized) closest approach.
  The meeting time depends on both walkers' speeds and starting points, so
  it cannot be read off either trajectory alone.
* ``crossing`` - perpendicular paths through a shared point with staggered
  arrival times and small avoidance offsets.

Velocities are meters per frame (frames are 0.4 s apart).
"""

import math

from .errors import UsageError
from .rng import stream
from .data import TrajectorySet, make_trajectory_set

KINDS = ("constant_velocity", "head_on_swap", "crossing")

SWAP_AMPLITUDE_M = 0.4
SWAP_WIDTH_FRAMES = 2.5


def synth_scene(kind: str, n_peds: int, n_frames: int, seed: int,
                starts=None, velocities=None) -> TrajectorySet:
    """Generate one synthetic scene; pedestrians are ids 1..n_peds.

    ``starts`` and ``velocities`` override the random draws for
    ``constant_velocity`` (one (x, y) pair per pedestrian).
    """
    if kind not in KINDS:
        raise UsageError(f"unknown scene kind {kind!r}, expected one of {KINDS}")
    if n_peds < 1:
        raise UsageError("need at least one pedestrian")
    if n_frames < 2:
        raise UsageError("need at least two frames")
    gen = stream(seed, f"synth:{kind}")
    if kind == "constant_velocity":
        obs = _constant_velocity(gen, n_peds, n_frames, starts, velocities)
    elif kind == "head_on_swap":
        obs = _head_on_swap(gen, n_peds, n_frames)
    else:
        obs = _crossing(gen, n_peds, n_frames)
    return make_trajectory_set(f"{kind}-{seed}", obs)


def _constant_velocity(gen, n_peds, n_frames, starts, velocities):
    obs = []
    for p in range(n_peds):
        if starts is not None:
            sx, sy = starts[p]
        else:
            sx, sy = gen.uniform(-3.0, 3.0, size=2)
        if velocities is not None:
            vx, vy = velocities[p]
        else:
            angle = gen.uniform(0.0, 2.0 * math.pi)
            speed = gen.uniform(0.2, 0.5)
            vx, vy = speed * math.cos(angle), speed * math.sin(angle)
        for k in range(n_frames):
            obs.append((k, p + 1, sx + k * vx, sy + k * vy))
    return obs


def _bump(k, t_meet):
    return math.exp(-((k - t_meet) / SWAP_WIDTH_FRAMES) ** 2)


def _head_on_swap(gen, n_peds, n_frames):
    """Pairs walk toward each other and sidestep right at closest approach."""
    obs = []
    for pair in range(n_peds // 2):
        base_y = 6.0 * pair
        va = gen.uniform(0.30, 0.55)
        vb = gen.uniform(0.30, 0.55)
        t_meet = gen.uniform(0.45, 0.80) * (n_frames - 1)
        meet_x = gen.uniform(-2.0, 2.0)
        ja, jb = gen.uniform(-0.05, 0.05, size=2)
        a, b = 2 * pair + 1, 2 * pair + 2
        for k in range(n_frames):
            off = SWAP_AMPLITUDE_M * _bump(k, t_meet)
            obs.append((k, a, meet_x - va * t_meet + va * k, base_y + ja - off))
            obs.append((k, b, meet_x + vb * t_meet - vb * k, base_y + jb + off))
    if n_peds % 2:
        obs.extend(_straggler(gen, n_peds, n_frames))
    return obs


def _crossing(gen, n_peds, n_frames):
    """Pairs on perpendicular paths, arrival at the shared point staggered."""
    obs = []
    for pair in range(n_peds // 2):
        shift = 8.0 * pair
        cx = gen.uniform(-2.0, 2.0) + shift
        cy = gen.uniform(-2.0, 2.0) + shift
        va = gen.uniform(0.30, 0.55)
        vb = gen.uniform(0.30, 0.55)
        t_meet = gen.uniform(0.45, 0.75) * (n_frames - 1)
        ta, tb = t_meet - 1.5, t_meet + 1.5
        a, b = 2 * pair + 1, 2 * pair + 2
        for k in range(n_frames):
            off = 0.25 * _bump(k, t_meet)
            # a walks +x and passes first, b walks +y and yields behind it
            obs.append((k, a, cx + va * (k - ta), cy - off))
            obs.append((k, b, cx - off, cy + vb * (k - tb)))
    if n_peds % 2:
        obs.extend(_straggler(gen, n_peds, n_frames))
    return obs


def _straggler(gen, ped_id, n_frames):
    sx, sy = gen.uniform(6.0, 9.0, size=2)
    angle = gen.uniform(0.0, 2.0 * math.pi)
    speed = gen.uniform(0.2, 0.5)
    vx, vy = speed * math.cos(angle), speed * math.sin(angle)
    return [(k, ped_id, sx + k * vx, sy + k * vy) for k in range(n_frames)]


def min_pairwise_distance(ts: TrajectorySet) -> float:
    """Smallest inter-pedestrian distance over all frames of a scene."""
    best = math.inf
    for frame in ts.frames:
        entries = frame.entries
        for i in range(len(entries)):
            for j in range(i + 1, len(entries)):
                d = math.hypot(entries[i][1] - entries[j][1],
                               entries[i][2] - entries[j][2])
                best = min(best, d)
    return best
