"""Attention-based recurrent trajectory prediction for pedestrians in crowds.

The package trains a shared-weight recurrent mixture over a per-step
spatio-temporal graph of pedestrians, predicts future positions as
bivariate Gaussians, and exposes the learned per-neighbor attention
weights. See the README for the data format and CLI walkthrough.
"""

from .autodiff import (Tape, Tensor, backward, finite_difference_check,
                       no_grad, parameter, tensor)
from .data import (SequenceWindow, TrajectorySet, leave_one_out_splits,
                   parse_canonical, serialize_canonical, split_train_val,
                   window_sequences)
from .inference import Forecast, rollout, sample_bivariate
from .metrics import EvalReport, ade, evaluate_scenes, fde
from .model import (MODE_INDEPENDENT, MODE_SOCIAL, AttentionRecord,
                    GaussianParams2D, HiddenState, ModelParams, forward_step,
                    gaussian_head, init_model_params)
from .stgraph import STGraphSequence, STGraphStep, build_sequence
from .synth import synth_scene
from .training import (AdamState, TrainConfig, TrainResult, adam_step,
                       bivariate_nll, clip_global_norm, sequence_loss, train)

__version__ = "0.1.0"
