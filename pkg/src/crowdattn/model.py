"""The attention-based recurrent trajectory model and its LSTM baseline.

Per time step the forward pass runs in a fixed order:

1. every temporal edge LSTM advances on the pedestrian's own displacement,
2. every directed spatial edge LSTM advances on the neighbor displacement,
3. each node scores its (freshly updated) spatial edge states against its
   own temporal edge state with scaled dot-product attention and collapses
   them into a context vector,
4. the node LSTM consumes the embedded position together with the embedded
   (temporal state, context) pair,
5. a linear head maps the node state to a bivariate Gaussian over the next
   position: mean directly, standard deviations through exp, correlation
   through tanh.

All pedestrians share one set of weights for each factor (node, spatial
edge, temporal edge), so the parameter count does not depend on crowd
size. In ``independent_lstm`` mode steps 2-3 are skipped and the context
vector is zero, which models every trajectory in isolation.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import GraphError, NumericalError, UsageError
from .rng import stream

POS_DIM = 2
EMBED_DIM = 64
EDGE_HIDDEN = 256
NODE_HIDDEN = 128
ATTN_DIM = 64
OUT_DIM = 5  # mu_x, mu_y, log sigma_x, log sigma_y, pre-tanh rho

RHO_LIMIT = 0.999
FORGET_BIAS = 1.0

MODE_SOCIAL = "social_attention"
MODE_INDEPENDENT = "independent_lstm"
MODES = (MODE_SOCIAL, MODE_INDEPENDENT)

# (name, rows, cols or None for vectors); biases are zeros, weights uniform
# in +-1/sqrt(fan_in), LSTM forget-gate bias 1.0.
_PARAM_SPECS = (
    ("temporal_embed.w", EMBED_DIM, POS_DIM),
    ("temporal_embed.b", EMBED_DIM, None),
    ("temporal_lstm.w_ih", 4 * EDGE_HIDDEN, EMBED_DIM),
    ("temporal_lstm.w_hh", 4 * EDGE_HIDDEN, EDGE_HIDDEN),
    ("temporal_lstm.b", 4 * EDGE_HIDDEN, None),
    ("spatial_embed.w", EMBED_DIM, POS_DIM),
    ("spatial_embed.b", EMBED_DIM, None),
    ("spatial_lstm.w_ih", 4 * EDGE_HIDDEN, EMBED_DIM),
    ("spatial_lstm.w_hh", 4 * EDGE_HIDDEN, EDGE_HIDDEN),
    ("spatial_lstm.b", 4 * EDGE_HIDDEN, None),
    ("attn.query_proj", ATTN_DIM, EDGE_HIDDEN),
    ("attn.key_proj", ATTN_DIM, EDGE_HIDDEN),
    ("node_embed_pos.w", EMBED_DIM, POS_DIM),
    ("node_embed_pos.b", EMBED_DIM, None),
    ("node_embed_ctx.w", EMBED_DIM, 2 * EDGE_HIDDEN),
    ("node_embed_ctx.b", EMBED_DIM, None),
    ("node_lstm.w_ih", 4 * NODE_HIDDEN, 2 * EMBED_DIM),
    ("node_lstm.w_hh", 4 * NODE_HIDDEN, NODE_HIDDEN),
    ("node_lstm.b", 4 * NODE_HIDDEN, None),
    ("node_out.w", OUT_DIM, NODE_HIDDEN),
    ("node_out.b", OUT_DIM, None),
)


class ModelParams:
    """All trainable weights, as an ordered name -> Tensor table."""

    def __init__(self, tensors):
        self.tensors = dict(tensors)

    def __getitem__(self, name):
        return self.tensors[name]

    def items(self):
        return self.tensors.items()

    def n_parameters(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def zero_grads(self):
        ad.zero_grads(self.tensors.values())

    def copy_arrays(self):
        """Snapshot of the raw weight arrays, keyed by name."""
        return {name: t.data.copy() for name, t in self.tensors.items()}

    @classmethod
    def from_arrays(cls, arrays):
        expected = [name for name, _, _ in _PARAM_SPECS]
        if sorted(arrays) != sorted(expected):
            missing = sorted(set(expected) - set(arrays))
            extra = sorted(set(arrays) - set(expected))
            raise UsageError(
                f"parameter table mismatch (missing {missing}, extra {extra})")
        return cls({name: ad.parameter(arrays[name], name=name)
                    for name in expected})


def init_model_params(seed: int) -> ModelParams:
    """Seeded initialization; every tensor draws from its own stream."""
    tensors = {}
    for name, rows, cols in _PARAM_SPECS:
        if cols is None:
            values = np.zeros(rows)
            if name.endswith("lstm.b"):
                h = rows // 4
                values[h:2 * h] = FORGET_BIAS
        else:
            bound = 1.0 / np.sqrt(cols)
            values = stream(seed, f"init:{name}").uniform(
                -bound, bound, size=(rows, cols))
        tensors[name] = ad.parameter(values, name=name)
    return ModelParams(tensors)


def embed(x, w, b):
    """relu(w @ x + b), the shared input embedding shape."""
    return ad.relu(ad.add(ad.matmul(w, x), b))


def lstm_step(h, c, x, w_ih, w_hh, b):
    """Single LSTM cell step; gate order input, forget, candidate, output."""
    n = h.shape[0]
    pre = ad.add(ad.add(ad.matmul(w_ih, x), ad.matmul(w_hh, h)), b)
    i = ad.sigmoid(ad.slice1d(pre, 0, n))
    f = ad.sigmoid(ad.slice1d(pre, n, 2 * n))
    g = ad.tanh(ad.slice1d(pre, 2 * n, 3 * n))
    o = ad.sigmoid(ad.slice1d(pre, 3 * n, 4 * n))
    c2 = ad.add(ad.mul(f, c), ad.mul(i, g))
    h2 = ad.mul(o, ad.tanh(c2))
    return h2, c2


def edge_step(kind, params, h, c, feature):
    """Advance one edge LSTM on its displacement feature."""
    if kind not in ("spatial", "temporal"):
        raise GraphError(f"unknown edge kind {kind!r}")
    x = ad.tensor(feature)
    e = embed(x, params[f"{kind}_embed.w"], params[f"{kind}_embed.b"])
    return lstm_step(h, c, e, params[f"{kind}_lstm.w_ih"],
                     params[f"{kind}_lstm.w_hh"], params[f"{kind}_lstm.b"])


def attention_scores(self_h, neighbor_hs, query_proj, key_proj, m, attn_dim):
    """Scaled dot-product scores of each neighbor edge state, as an m-vector.

    The dot products are scaled by m / sqrt(attn_dim): the projection width
    normalization of dot-product attention, with the neighbor count folded
    in because it varies from step to step.
    """
    if m < 1:
        raise GraphError("attention needs at least one neighbor")
    factor = m / np.sqrt(attn_dim)
    q = ad.matmul(query_proj, self_h)
    scores = [ad.scale(ad.matmul(q, ad.matmul(key_proj, h)), factor)
              for h in neighbor_hs]
    return ad.stack(scores)


def attention_combine(scores, neighbor_hs):
    """Softmax the scores and blend the neighbor states into a context."""
    weights = ad.softmax(scores)
    return weights, ad.weighted_sum(weights, neighbor_hs)


def node_step(params, position, temporal_h, context, node_h, node_c):
    """Advance one node LSTM and produce the raw 5-vector output."""
    x = ad.tensor(position)
    e = embed(x, params["node_embed_pos.w"], params["node_embed_pos.b"])
    a = embed(ad.concat([temporal_h, context]),
              params["node_embed_ctx.w"], params["node_embed_ctx.b"])
    h2, c2 = lstm_step(node_h, node_c, ad.concat([e, a]),
                       params["node_lstm.w_ih"], params["node_lstm.w_hh"],
                       params["node_lstm.b"])
    raw = ad.add(ad.matmul(params["node_out.w"], h2), params["node_out.b"])
    return h2, c2, raw


@dataclass
class GaussianParams2D:
    """Bivariate Gaussian over the next position, as scalar tensors."""

    mu_x: object
    mu_y: object
    sigma_x: object
    sigma_y: object
    rho: object

    def as_floats(self):
        return (self.mu_x.item(), self.mu_y.item(), self.sigma_x.item(),
                self.sigma_y.item(), self.rho.item())

    @classmethod
    def from_floats(cls, mu_x, mu_y, sigma_x, sigma_y, rho):
        return cls(ad.tensor(mu_x), ad.tensor(mu_y), ad.tensor(sigma_x),
                   ad.tensor(sigma_y), ad.tensor(rho))


def gaussian_head(raw) -> GaussianParams2D:
    """Map the raw 5-vector to Gaussian parameters.

    Standard deviations go through exp (always positive), the correlation
    through tanh clamped to +-0.999 to keep the likelihood away from the
    degenerate |rho| = 1 ridge.
    """
    if not np.isfinite(raw.data).all():
        raise NumericalError("gaussian head received non-finite values")
    return GaussianParams2D(
        mu_x=ad.pick(raw, 0),
        mu_y=ad.pick(raw, 1),
        sigma_x=ad.exp(ad.pick(raw, 2)),
        sigma_y=ad.exp(ad.pick(raw, 3)),
        rho=ad.clamp(ad.tanh(ad.pick(raw, 4)), -RHO_LIMIT, RHO_LIMIT),
    )


@dataclass
class AttentionRecord:
    """Per node and step: softmax weights over its spatial edges."""

    node: int
    t: int
    neighbor_ids: tuple
    weights: np.ndarray
    context: np.ndarray


class HiddenState:
    """Recurrent state for the entities present at the current step.

    Entities appearing for the first time start from zero vectors; entities
    that leave are dropped (and start fresh if they ever reappear).
    """

    def __init__(self, temporal=None, spatial=None, node=None):
        self.temporal = temporal or {}  # ped -> (h, c), size EDGE_HIDDEN
        self.spatial = spatial or {}    # (v, u) -> (h, c), size EDGE_HIDDEN
        self.node = node or {}          # ped -> (h, c), size NODE_HIDDEN

    @classmethod
    def empty(cls):
        return cls()


def _zeros(n):
    return ad.tensor(np.zeros(n))


_ZERO_CONTEXT = None


def _zero_context():
    global _ZERO_CONTEXT
    if _ZERO_CONTEXT is None:
        _ZERO_CONTEXT = ad.tensor(np.zeros(EDGE_HIDDEN))
    return _ZERO_CONTEXT


@dataclass
class StepOutput:
    gaussians: dict    # ped -> GaussianParams2D (for the next step)
    attention: dict    # ped -> AttentionRecord (social mode, m >= 1 only)
    hidden: HiddenState


def forward_step(step, hidden: HiddenState, params: ModelParams,
                 mode: str = MODE_SOCIAL) -> StepOutput:
    """Run one graph step; returns per-node Gaussians and the new state."""
    if mode not in MODES:
        raise UsageError(f"unknown mode {mode!r}, expected one of {MODES}")
    social = mode == MODE_SOCIAL

    temporal = {}
    for v in step.nodes:
        if v in step.temporal_edges:
            h, c = hidden.temporal.get(v) or (_zeros(EDGE_HIDDEN),
                                              _zeros(EDGE_HIDDEN))
            temporal[v] = edge_step("temporal", params, h, c,
                                    step.temporal_edges[v])
        else:
            temporal[v] = (_zeros(EDGE_HIDDEN), _zeros(EDGE_HIDDEN))

    spatial = {}
    if social:
        for (u, v), feature in sorted(step.spatial_edges.items()):
            h, c = hidden.spatial.get((u, v)) or (_zeros(EDGE_HIDDEN),
                                                  _zeros(EDGE_HIDDEN))
            spatial[(u, v)] = edge_step("spatial", params, h, c, feature)

    gaussians = {}
    attention = {}
    node = {}
    for v in step.nodes:
        temporal_h = temporal[v][0]
        edges = step.neighbors(v)
        if social and edges:
            neighbor_hs = [spatial[e][0] for e in edges]
            scores = attention_scores(temporal_h, neighbor_hs,
                                      params["attn.query_proj"],
                                      params["attn.key_proj"],
                                      len(edges), ATTN_DIM)
            weights, context = attention_combine(scores, neighbor_hs)
            attention[v] = AttentionRecord(
                node=v, t=step.t,
                neighbor_ids=tuple(u for _, u in edges),
                weights=weights.data.copy(),
                context=context.data.copy())
        else:
            context = _zero_context()
        node_h, node_c = hidden.node.get(v) or (_zeros(NODE_HIDDEN),
                                                _zeros(NODE_HIDDEN))
        h2, c2, raw = node_step(params, step.positions[v], temporal_h,
                                context, node_h, node_c)
        node[v] = (h2, c2)
        gaussians[v] = gaussian_head(raw)

    return StepOutput(gaussians=gaussians, attention=attention,
                      hidden=HiddenState(temporal=temporal, spatial=spatial,
                                         node=node))
