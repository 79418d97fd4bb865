"""Command-line interface.

Subcommands: ``convert``, ``synth``, ``train``, ``evaluate``, ``predict``,
``attention``. Training reads a flat ``key = value`` config file whose keys
mirror the run-configuration fields; command-line flags override file
values. All randomness derives from the single ``seed`` via tagged
sub-streams, so identical inputs and seeds give byte-identical outputs.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

import argparse
import csv
import sys
from dataclasses import dataclass, field
from pathlib import Path

from .checkpoint import (Checkpoint, build_checkpoint, load_checkpoint,
                         restore_model, save_checkpoint)
from .data import (leave_one_out_splits, parse_canonical, split_train_val,
                   window_sequences, convert_raw, serialize_canonical)
from .errors import (CrowdAttnError, DataFormatError, NumericalError,
                     ShapeError, UsageError)
from .inference import attention_csv, forecast_csv, rollout
from .metrics import evaluate_scenes
from .model import MODES
from .rng import NormalStream
from .synth import KINDS, synth_scene
from .training import TrainConfig, train

CHECKPOINT_NAME = "checkpoint.satn"
LOG_NAME = "train_log.csv"
RESOLVED_CONFIG_NAME = "config.resolved"


@dataclass
class RunConfig:
    """Training run settings: optimizer config plus data wiring."""

    train: TrainConfig = field(default_factory=TrainConfig)
    scenes: list = field(default_factory=list)
    held_out_index: int | None = None
    window_stride: int | None = None
    out_dir: str = "out"

    def validate(self):
        self.train.validate()
        if not self.scenes:
            raise UsageError("config must list at least one scene file")
        for path in self.scenes:
            if not Path(path).exists():
                raise DataFormatError(f"scene file not found: {path}")


_TRAIN_KEYS = {"learning_rate": float, "epochs": int, "batch_size": int,
               "grad_clip_norm": float, "seed": int, "t_obs": int,
               "t_pred": int, "mode": str}
_RUN_KEYS = {"scenes": str, "held_out_index": int, "window_stride": int,
             "out_dir": str}
VALID_CONFIG_KEYS = sorted(_TRAIN_KEYS) + sorted(_RUN_KEYS)


def parse_config_file(path) -> dict:
    values = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise DataFormatError(f"cannot read config file: {exc}") from None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise UsageError(f"config line {lineno}: expected key = value")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in _TRAIN_KEYS and key not in _RUN_KEYS:
            raise UsageError(
                f"config line {lineno}: invalid key {key!r}; valid keys are "
                f"{', '.join(VALID_CONFIG_KEYS)}")
        values[key] = value
    return values


def build_run_config(file_values: dict, overrides: dict) -> RunConfig:
    merged = dict(file_values)
    merged.update({k: v for k, v in overrides.items() if v is not None})
    run = RunConfig()
    for key, value in merged.items():
        if key in _TRAIN_KEYS:
            try:
                setattr(run.train, key, _TRAIN_KEYS[key](value))
            except ValueError:
                raise UsageError(f"config key {key}: bad value {value!r}") \
                    from None
        elif key == "scenes":
            parts = value.split(",") if isinstance(value, str) else list(value)
            run.scenes = [p.strip() for p in parts if p.strip()]
        elif key in ("held_out_index", "window_stride"):
            try:
                setattr(run, key, int(value))
            except ValueError:
                raise UsageError(f"config key {key}: bad value {value!r}") \
                    from None
        elif key == "out_dir":
            run.out_dir = str(value)
    return run


def _load_scene(path):
    p = Path(path)
    if not p.exists():
        raise DataFormatError(f"scene file not found: {path}")
    return parse_canonical(p.read_text(encoding="utf-8"), scene_id=p.stem)


def resolved_config_text(run: RunConfig) -> str:
    items = dict(run.train.as_dict())
    items["scenes"] = ",".join(run.scenes)
    items["held_out_index"] = run.held_out_index
    items["window_stride"] = run.window_stride
    items["out_dir"] = run.out_dir
    lines = [f"{key} = {items[key]}" for key in sorted(items)]
    return "\n".join(lines) + "\n"


def cmd_convert(args) -> int:
    raw = Path(args.input)
    if not raw.exists():
        raise DataFormatError(f"input file not found: {args.input}")
    canonical = convert_raw(raw.read_text(encoding="utf-8"),
                            args.columns, args.stride)
    Path(args.out).write_text(canonical, encoding="utf-8")
    print(f"wrote {args.out}")
    return 0


def cmd_synth(args) -> int:
    ts = synth_scene(args.kind, args.peds, args.frames, args.seed)
    Path(args.out).write_text(serialize_canonical(ts), encoding="utf-8")
    print(f"wrote {args.out} ({args.kind}, {args.peds} peds, "
          f"{args.frames} frames)")
    return 0


def cmd_train(args) -> int:
    file_values = parse_config_file(args.config) if args.config else {}
    overrides = {"seed": args.seed, "mode": args.mode, "out_dir": args.out}
    run = build_run_config(file_values, overrides)
    run.validate()

    scenes = [_load_scene(p) for p in run.scenes]
    cfg = run.train
    if run.held_out_index is not None:
        train_w, val_w, _ = leave_one_out_splits(
            scenes, run.held_out_index, cfg.t_obs, cfg.t_pred,
            run.window_stride, cfg.seed)
    else:
        pooled = []
        for scene in scenes:
            pooled.extend(window_sequences(scene, cfg.t_obs, cfg.t_pred,
                                           run.window_stride))
        train_w, val_w = split_train_val(pooled, cfg.seed)
    if not train_w:
        raise DataFormatError("no training windows could be built")

    out_dir = Path(run.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    result = train(train_w, val_w, cfg)

    ckpt = build_checkpoint(result.params, result.moments, cfg,
                            result.best_epoch)
    save_checkpoint(ckpt, out_dir / CHECKPOINT_NAME)
    with open(out_dir / LOG_NAME, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "train_nll", "val_nll", "grad_norm_mean",
                         "wallclock_s"])
        for log in result.logs:
            writer.writerow([log.epoch, f"{log.train_nll:.6f}",
                             "" if log.val_nll is None else f"{log.val_nll:.6f}",
                             f"{log.grad_norm_mean:.6f}",
                             f"{log.wallclock_s:.3f}"])
    (out_dir / RESOLVED_CONFIG_NAME).write_text(resolved_config_text(run),
                                                encoding="utf-8")
    last = result.logs[-1]
    print(f"trained {len(result.logs)} epochs; best epoch "
          f"{result.best_epoch}; final train nll {last.train_nll:.4f}; "
          f"checkpoint at {out_dir / CHECKPOINT_NAME}")
    return 0


def _load_model(args):
    ckpt = load_checkpoint(args.checkpoint)
    params, _ = restore_model(ckpt, expected_mode=args.mode)
    return ckpt, params


def cmd_evaluate(args) -> int:
    ckpt, params = _load_model(args)
    scenes = [_load_scene(p) for p in args.data.split(",")]
    cfg = ckpt.config
    normals = None
    if not args.deterministic:
        normals = NormalStream(args.seed if args.seed is not None else 0,
                               "evaluate-sampling")
    report = evaluate_scenes(scenes, params, mode=ckpt.mode,
                             t_obs=cfg["t_obs"], t_pred=cfg["t_pred"],
                             stride=args.stride,
                             deterministic=args.deterministic,
                             normals=normals)
    text = report.to_csv()
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    agg = report.aggregate
    print(f"aggregate ade {agg.ade_m:.4f} m, fde {agg.fde_m:.4f} m "
          f"({agg.n_peds} tracks, {agg.n_windows} windows)", file=sys.stderr)
    return 0


def _select_window(args, cfg):
    scene = _load_scene(args.data)
    windows = window_sequences(scene, cfg["t_obs"], cfg["t_pred"],
                               args.stride)
    if not windows:
        raise DataFormatError(f"no windows of length {cfg['t_pred']} in "
                              f"{args.data}")
    if not 0 <= args.window_index < len(windows):
        raise UsageError(f"window index {args.window_index} out of range, "
                         f"{len(windows)} windows available")
    return windows[args.window_index]


def cmd_predict(args) -> int:
    ckpt, params = _load_model(args)
    window = _select_window(args, ckpt.config)
    normals = None
    if not args.deterministic:
        normals = NormalStream(args.seed if args.seed is not None else 0,
                               "predict-sampling")
    forecast = rollout(window, params, mode=ckpt.mode,
                       deterministic=args.deterministic, normals=normals)
    text = forecast_csv([forecast])
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def cmd_attention(args) -> int:
    ckpt, params = _load_model(args)
    window = _select_window(args, ckpt.config)
    forecast = rollout(window, params, mode=ckpt.mode, deterministic=True)
    text = attention_csv([forecast])
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="crowdattn",
                     description="Attention-based crowd trajectory prediction")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("convert", help="convert a raw 4-column annotation "
                                       "file to canonical format")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--columns", default="frame,id,x,y",
                   help="comma-separated layout of the input columns")
    p.add_argument("--stride", type=int, required=True,
                   help="raw frame-number stride between annotations")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("synth", help="generate a synthetic scene")
    p.add_argument("--kind", choices=KINDS, required=True)
    p.add_argument("--peds", type=int, default=2)
    p.add_argument("--frames", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--mode", choices=MODES, default=None)
    p.add_argument("--out", default=None, help="output directory override")
    p.set_defaults(func=cmd_train)

    for name, fn in (("evaluate", cmd_evaluate), ("predict", cmd_predict),
                     ("attention", cmd_attention)):
        p = sub.add_parser(name)
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--data", required=True,
                       help="canonical scene file(s), comma separated")
        p.add_argument("--mode", choices=MODES, default=None,
                       help="require the checkpoint to match this mode")
        p.add_argument("--out", default=None)
        p.add_argument("--stride", type=int, default=None)
        if name != "attention":
            p.add_argument("--deterministic", action="store_true",
                           default=True)
            p.add_argument("--sample", dest="deterministic",
                           action="store_false",
                           help="sample from the predicted Gaussians")
            p.add_argument("--seed", type=int, default=None)
        if name != "evaluate":
            p.add_argument("--window-index", type=int, default=0)
        p.set_defaults(func=fn)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except DataFormatError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except (NumericalError, ShapeError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except CrowdAttnError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
