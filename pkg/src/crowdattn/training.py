"""Joint maximum-likelihood training of the trajectory model.

The loss is the negative log-likelihood of each pedestrian's true next
position under the predicted bivariate Gaussian, summed over every
(pedestrian, step) pair in the prediction span of a window and averaged
per contributing pair within a batch. Training uses teacher forcing: true
positions feed the network at every step, and predicted-position feedback
is reserved for inference rollouts.

Optimization is Adam with global-norm gradient clipping. Everything is
deterministic given (seed, data, config): shuffles come from derived
streams, batches accumulate window gradients in ascending window order,
and the reported checkpoint is the best-validation epoch (the last epoch
when there is no validation split).
"""

import math
import time
from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from .errors import NumericalError, UsageError
from .model import (MODE_SOCIAL, MODES, GaussianParams2D, HiddenState,
                    ModelParams, forward_step, init_model_params)
from .rng import stream
from .stgraph import STGraphSequence, build_sequence

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class TrainConfig:
    learning_rate: float = 0.001
    epochs: int = 100
    batch_size: int = 8
    grad_clip_norm: float = 10.0
    seed: int = 0
    t_obs: int = 8
    t_pred: int = 20
    mode: str = MODE_SOCIAL

    def validate(self):
        if self.learning_rate <= 0:
            raise UsageError("learning_rate must be positive")
        if self.epochs <= 0 or self.batch_size <= 0:
            raise UsageError("epochs and batch_size must be positive")
        if self.grad_clip_norm <= 0:
            raise UsageError("grad_clip_norm must be positive")
        if not 0 < self.t_obs < self.t_pred:
            raise UsageError("need 0 < t_obs < t_pred")
        if self.mode not in MODES:
            raise UsageError(f"mode must be one of {MODES}")

    def as_dict(self):
        return asdict(self)


def bivariate_nll(g: GaussianParams2D, target):
    """Negative log density of ``target`` under a bivariate Gaussian.

    Differentiable in all five parameters. Sigmas must be positive and
    |rho| < 1; the head guarantees both, so a violation here means an
    upstream bug rather than bad data.
    """
    sx, sy, r = g.sigma_x.item(), g.sigma_y.item(), g.rho.item()
    if not (sx > 0 and sy > 0):
        raise NumericalError(f"bivariate_nll: sigma must be positive, got "
                             f"({sx}, {sy})")
    if abs(r) >= 1:
        raise NumericalError(f"bivariate_nll: |rho| must be < 1, got {r}")

    tx, ty = ad.tensor(target[0]), ad.tensor(target[1])
    dx = ad.div(ad.sub(tx, g.mu_x), g.sigma_x)
    dy = ad.div(ad.sub(ty, g.mu_y), g.sigma_y)
    one_minus_r2 = ad.sub(ad.tensor(1.0), ad.mul(g.rho, g.rho))
    z = ad.add(ad.add(ad.mul(dx, dx), ad.mul(dy, dy)),
               ad.scale(ad.mul(g.rho, ad.mul(dx, dy)), -2.0))
    return ad.add(
        ad.add(ad.add(ad.tensor(LOG_2PI), ad.log(g.sigma_x)),
               ad.log(g.sigma_y)),
        ad.add(ad.scale(ad.log(one_minus_r2), 0.5),
               ad.div(z, ad.scale(one_minus_r2, 2.0))))


def sequence_loss(seq: STGraphSequence, params: ModelParams,
                  config: TrainConfig):
    """Teacher-forced loss over one window.

    Returns (loss tensor, number of contributing (pedestrian, step) pairs).
    The output at step t is scored against the true position at t + 1, for
    targets inside the prediction span; a pair contributes only when the
    pedestrian is present at both steps. The sum is exactly rounded, so the
    loss is invariant under pedestrian relabeling.
    """
    terms = []
    hidden = HiddenState.empty()
    for t, step in enumerate(seq.steps):
        out = forward_step(step, hidden, params, config.mode)
        hidden = out.hidden
        target_t = t + 1
        if target_t < config.t_obs or target_t >= len(seq.steps):
            continue
        for v in step.nodes:
            target = seq.position(v, target_t)
            if target is not None:
                terms.append(bivariate_nll(out.gaussians[v], target))
    if not terms:
        return ad.tensor(0.0), 0
    return ad.tsum(ad.stack(terms)), len(terms)


def clip_global_norm(params: ModelParams, max_norm: float) -> float:
    """Scale all gradients so their global norm is at most ``max_norm``.

    Returns the applied factor (1.0 when no clipping was needed). The
    direction of the gradient is preserved exactly.
    """
    if max_norm <= 0:
        raise UsageError("max_norm must be positive")
    squares = []
    for name, t in params.items():
        if t.grad is None:
            continue
        if not np.isfinite(t.grad).all():
            raise NumericalError(f"non-finite gradient in tensor {name}")
        squares.append(float(np.dot(t.grad.ravel(), t.grad.ravel())))
    total = math.sqrt(math.fsum(squares))
    if total <= max_norm:
        return 1.0
    factor = max_norm / total
    for _, t in params.items():
        if t.grad is not None:
            t.grad *= factor
    return factor


class AdamState:
    """First/second moment estimates plus the shared step counter."""

    def __init__(self, params: ModelParams):
        self.m = {name: np.zeros_like(t.data) for name, t in params.items()}
        self.v = {name: np.zeros_like(t.data) for name, t in params.items()}
        self.t = 0

    def copy(self):
        dup = AdamState.__new__(AdamState)
        dup.m = {k: a.copy() for k, a in self.m.items()}
        dup.v = {k: a.copy() for k, a in self.v.items()}
        dup.t = self.t
        return dup


def adam_step(params: ModelParams, moments: AdamState, lr: float,
              beta1=ADAM_BETA1, beta2=ADAM_BETA2, eps=ADAM_EPS):
    """One bias-corrected Adam update over all parameters in fixed order."""
    moments.t += 1
    t = moments.t
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for name, p in params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        m = moments.m[name]
        v = moments.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


@dataclass
class EpochLog:
    epoch: int
    train_nll: float
    val_nll: float | None
    grad_norm_mean: float
    wallclock_s: float


@dataclass
class TrainResult:
    params: ModelParams
    moments: AdamState
    best_epoch: int
    logs: list = field(default_factory=list)


def _mean_nll(sequences, params, config):
    total = 0.0
    count = 0
    with ad.no_grad():
        for seq in sequences:
            loss, n = sequence_loss(seq, params, config)
            total += loss.item()
            count += n
    return (total / count) if count else None


def train(train_windows, val_windows, config: TrainConfig,
          initial_params: ModelParams | None = None,
          updates_limit: int | None = None,
          progress=None) -> TrainResult:
    """Run the full optimization loop over pre-windowed data.

    ``updates_limit`` caps the total number of Adam updates (handy for
    fixed-budget experiments); ``progress`` is an optional callable
    receiving each EpochLog. The best-validation parameters are returned
    (the final ones when there is no validation data).
    """
    config.validate()
    if not train_windows:
        raise UsageError("training split is empty")

    train_seqs = [build_sequence(w) for w in train_windows]
    val_seqs = [build_sequence(w) for w in val_windows]

    params = initial_params if initial_params is not None \
        else init_model_params(config.seed)
    moments = AdamState(params)

    best = None  # (val_nll, epoch, param arrays, moment state)
    logs = []
    updates = 0
    stop = False
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        order = stream(config.seed, f"epoch-shuffle:{epoch}").permutation(
            len(train_seqs))
        epoch_sum = 0.0
        epoch_terms = 0
        norms = []
        for lo in range(0, len(order), config.batch_size):
            batch = sorted(int(i) for i in order[lo:lo + config.batch_size])
            params.zero_grads()
            batch_terms = 0
            for i in batch:
                seq = train_seqs[i]
                with ad.Tape() as tape:
                    loss, n = sequence_loss(seq, params, config)
                if n == 0:
                    continue
                if not math.isfinite(loss.item()):
                    raise NumericalError(
                        f"non-finite loss at epoch {epoch}, "
                        f"window {seq.window_id}")
                ad.backward(tape, loss)
                batch_terms += n
                epoch_sum += loss.item()
            if batch_terms == 0:
                continue
            epoch_terms += batch_terms
            for _, p in params.items():
                if p.grad is not None:
                    p.grad /= batch_terms
            norms.append(_global_norm(params))
            clip_global_norm(params, config.grad_clip_norm)
            adam_step(params, moments, config.learning_rate)
            updates += 1
            if updates_limit is not None and updates >= updates_limit:
                stop = True
                break

        train_nll = (epoch_sum / epoch_terms) if epoch_terms else None
        val_nll = _mean_nll(val_seqs, params, config)
        log = EpochLog(epoch=epoch,
                       train_nll=train_nll if train_nll is not None else math.nan,
                       val_nll=val_nll,
                       grad_norm_mean=float(np.mean(norms)) if norms else 0.0,
                       wallclock_s=time.perf_counter() - t0)
        logs.append(log)
        if progress is not None:
            progress(log)
        if val_nll is not None and (best is None or val_nll < best[0]):
            best = (val_nll, epoch, params.copy_arrays(), moments.copy())
        if stop:
            break

    if best is not None:
        final_params = ModelParams.from_arrays(best[2])
        final_moments = best[3]
        best_epoch = best[1]
    else:
        final_params = params
        final_moments = moments
        best_epoch = logs[-1].epoch if logs else 0
    return TrainResult(params=final_params, moments=final_moments,
                       best_epoch=best_epoch, logs=logs)


def _global_norm(params: ModelParams) -> float:
    squares = [float(np.dot(t.grad.ravel(), t.grad.ravel()))
               for _, t in params.items() if t.grad is not None]
    return math.sqrt(math.fsum(squares))
