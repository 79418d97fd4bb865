"""Per-step spatio-temporal graphs over pedestrians.

Nodes are the pedestrians present at a step, with their world position as
the node feature. Every ordered pair of co-present pedestrians (u, v) gets
a directed spatial edge whose feature is position(v) - position(u), the
displacement from u to v; each endpoint therefore sees its neighbors
expressed from its own side, and features are antisymmetric. A pedestrian
present at both t-1 and t gets a temporal edge whose feature is its own
per-step displacement.
"""

from dataclasses import dataclass, field

from .errors import GraphError
from .data import SequenceWindow


@dataclass
class STGraphStep:
    """One time step: present nodes, their features, and both edge sets."""

    t: int
    nodes: tuple  # ped ids, ascending
    positions: dict  # ped id -> (x, y)
    spatial_edges: dict  # (u, v) -> (dx, dy), u != v, both present
    temporal_edges: dict  # v -> (dx, dy), v present at t-1 and t

    def neighbors(self, v):
        """Ordered spatial edges (v, u) of node v, ascending u."""
        if v not in self.positions:
            raise GraphError(f"node {v} is not present at step {self.t}")
        return [(v, u) for u in self.nodes if u != v]


def build_step(t, positions, prev_positions) -> STGraphStep:
    """Assemble one step from position dicts (prev may be empty/None)."""
    prev_positions = prev_positions or {}
    nodes = tuple(sorted(positions))
    spatial = {}
    for u in nodes:
        ux, uy = positions[u]
        for v in nodes:
            if u != v:
                vx, vy = positions[v]
                spatial[(u, v)] = (vx - ux, vy - uy)
    temporal = {}
    for v in nodes:
        if v in prev_positions:
            px, py = prev_positions[v]
            x, y = positions[v]
            temporal[v] = (x - px, y - py)
    return STGraphStep(t=t, nodes=nodes, positions=dict(positions),
                       spatial_edges=spatial, temporal_edges=temporal)


@dataclass
class STGraphSequence:
    """The unrolled graph for one window, plus presence bookkeeping."""

    window: SequenceWindow
    steps: list = field(default_factory=list)

    @property
    def t_obs(self):
        return self.window.t_obs

    @property
    def t_pred(self):
        return self.window.t_pred

    @property
    def window_id(self):
        return self.window.window_id

    def position(self, ped_id, t):
        """True position of a pedestrian at step t (None when absent)."""
        return self.steps[t].positions.get(ped_id)

    def present(self, ped_id, t):
        return ped_id in self.steps[t].positions


def build_sequence(window: SequenceWindow) -> STGraphSequence:
    """One STGraphStep per window frame, features from true positions."""
    seq = STGraphSequence(window=window)
    prev = {}
    for t, frame in enumerate(window.frames):
        positions = {ped: (x, y) for ped, x, y in frame.entries}
        seq.steps.append(build_step(t, positions, prev))
        prev = positions
    return seq
