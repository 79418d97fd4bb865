"""Autoregressive rollout: fit on observed steps, then predict forward.

The model consumes true features for the observed span. From the first
predicted step on, the pedestrians still present at the last observed frame
are advanced using the model's own output positions, which also rebuild the
node, spatial-edge, and temporal-edge features for the next step. Positions
are either the predicted mean (deterministic mode, the default for
reproducible evaluation) or draws from the predicted Gaussian.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .data import SequenceWindow
from .errors import DataFormatError, UsageError
from .model import MODE_SOCIAL, GaussianParams2D, HiddenState, forward_step
from .rng import NormalStream
from .stgraph import build_step


def sample_bivariate(g, normals) -> tuple:
    """One draw from a bivariate Gaussian given a standard-normal pair.

    ``g`` is a GaussianParams2D or a (mu_x, mu_y, sigma_x, sigma_y, rho)
    tuple; ``normals`` supplies the pair (a NormalStream or an explicit
    (z1, z2) tuple).
    """
    if isinstance(g, GaussianParams2D):
        mu_x, mu_y, sigma_x, sigma_y, rho = g.as_floats()
    else:
        mu_x, mu_y, sigma_x, sigma_y, rho = g
    z1, z2 = normals.pair() if hasattr(normals, "pair") else normals
    x = mu_x + sigma_x * z1
    y = mu_y + sigma_y * (rho * z1 + math.sqrt(1.0 - rho * rho) * z2)
    return x, y


@dataclass
class Forecast:
    """Predicted future for one window.

    ``positions`` and ``gaussians`` are keyed by (ped_id, step) for steps
    in [t_obs, t_obs + horizon); attention records cover every forward
    step that was executed, observed ones included.
    """

    window_id: str
    t_obs: int
    horizon: int
    ped_ids: tuple
    positions: dict = field(default_factory=dict)
    gaussians: dict = field(default_factory=dict)
    attention: list = field(default_factory=list)

    def predicted_tracks(self):
        return dict(self.positions)


def rollout(window: SequenceWindow, params, mode: str = MODE_SOCIAL,
            horizon: int | None = None, deterministic: bool = True,
            normals: NormalStream | None = None) -> Forecast:
    """Forecast one window; pure function of (window, params) when
    deterministic, bitwise reproducible per stream otherwise."""
    t_obs = window.t_obs
    if len(window.frames) < 1 or t_obs < 1:
        raise DataFormatError("rollout needs at least one observed frame")
    if horizon is None:
        horizon = window.t_pred - t_obs
    if horizon < 1:
        raise UsageError("horizon must be >= 1")
    if not deterministic and normals is None:
        raise UsageError("sampling rollout needs a normal stream")

    frames = window.frames[:t_obs]
    observed = [{ped: (x, y) for ped, x, y in f.entries} for f in frames]
    rollout_peds = tuple(sorted(observed[-1]))
    if not rollout_peds:
        raise DataFormatError("no pedestrians present at the last observed frame")

    forecast = Forecast(window_id=window.window_id, t_obs=t_obs,
                        horizon=horizon, ped_ids=rollout_peds)
    hidden = HiddenState.empty()
    positions = {}
    prev = {}
    with ad.no_grad():
        for t in range(t_obs + horizon - 1):
            if t < t_obs:
                positions = observed[t]
            step = build_step(t, positions, prev)
            out = forward_step(step, hidden, params, mode)
            hidden = out.hidden
            forecast.attention.extend(out.attention[v]
                                      for v in sorted(out.attention))
            target_t = t + 1
            if target_t >= t_obs:
                prev = positions
                positions = {}
                for v in rollout_peds:
                    g = out.gaussians[v]
                    floats = g.as_floats()
                    if deterministic:
                        pos = (floats[0], floats[1])
                    else:
                        pos = sample_bivariate(floats, normals)
                    positions[v] = pos
                    forecast.positions[(v, target_t)] = pos
                    forecast.gaussians[(v, target_t)] = floats
            else:
                prev = positions
    return forecast


def forecast_csv(forecasts) -> str:
    """CSV of predicted Gaussians and positions, one row per (ped, step)."""
    lines = ["window_id,ped_id,t,mu_x,mu_y,sigma_x,sigma_y,rho,xhat,yhat"]
    for fc in forecasts:
        for (ped, t) in sorted(fc.positions):
            mu_x, mu_y, sx, sy, rho = fc.gaussians[(ped, t)]
            x, y = fc.positions[(ped, t)]
            lines.append(f"{fc.window_id},{ped},{t},{mu_x!r},{mu_y!r},"
                         f"{sx!r},{sy!r},{rho!r},{x!r},{y!r}")
    return "\n".join(lines) + "\n"


def attention_csv(forecasts) -> str:
    """CSV of attention weights, one row per (ped, step, neighbor)."""
    lines = ["window_id,ped_id,t,neighbor_id,weight"]
    for fc in forecasts:
        for rec in fc.attention:
            for u, w in zip(rec.neighbor_ids, rec.weights):
                lines.append(f"{fc.window_id},{rec.node},{rec.t},{u},{w!r}")
    return "\n".join(lines) + "\n"
