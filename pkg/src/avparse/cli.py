"""Command-line entry point: generate, train, eval, gradcheck, masks, rerun.

Every command materializes its resolved configuration into a JSON manifest
before doing real work; `avparse rerun <manifest>` replays it and, since
all commands are seed-deterministic, reproduces the artifacts byte for
byte. Exit codes: 0 success, 1 usage, 2 data or I/O problem, 3 numerical
failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import __version__
from . import losses, metrics, trainer
from .datagen import DatasetFormatError, GenConfig, generate, load_dataset, save_dataset
from .model import CheckpointError, ModelConfig, init_params, forward, load_checkpoint, save_checkpoint
from .teacher import TeacherState, adaptive_threshold_mask, topk_mask, teacher_predict
from .tensor import GradCheckError, grad_check
from .trainer import TrainConfig, TrainingDivergedError

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _default_seed():
    env = os.environ.get("AVVP_SEED")
    return int(env) if env else 0


def _config_dict(args):
    config = {k: v for k, v in vars(args).items() if k not in ("func", "command")}
    return config


def write_manifest(path, command, config):
    payload = {
        "tool": "avparse",
        "version": __version__,
        "command": command,
        "config": config,
    }
    with open(path, "w", encoding="ascii") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _manifest_path(artifact_path):
    return str(artifact_path) + ".manifest.json"


# ---------------------------------------------------------------------------
# subcommands

def cmd_generate(args):
    config = GenConfig(
        n_videos=args.videos, T=args.T, C=args.C, d_a=args.d_a, d_v=args.d_v,
        events_min=args.events_min, events_max=args.events_max,
        mix_audio=args.mix_audio, mix_visual=args.mix_visual, mix_av=args.mix_av,
        sigma=args.sigma, prototype_scale=args.prototype_scale, seed=args.seed)
    write_manifest(_manifest_path(args.out), "generate", _config_dict(args))
    dataset = generate(config)
    save_dataset(dataset, args.out, encoding=args.encoding)
    print(f"wrote {len(dataset)} videos to {args.out}")
    return EXIT_OK


def cmd_train(args):
    dataset = load_dataset(args.data)
    model_config = ModelConfig(T=dataset.T, C=dataset.C, d_a=dataset.d_a, d_v=dataset.d_v,
                               d_model=args.d_model, n_heads=args.n_heads, seed=args.seed)
    train_config = TrainConfig(
        epochs=args.epochs, lr=args.lr, optimizer=args.optimizer, momentum=args.momentum,
        alpha=args.alpha, mask_mode=args.mask_mode, gamma=args.gamma, k=args.k,
        tau_a=args.tau_a, tau_v=args.tau_v,
        enable_ema=not args.no_ema, enable_cma=not args.no_cma,
        label_gate=not args.no_label_gate, warmup_epochs=args.warmup,
        ema_every=args.ema_every, mask_every=args.mask_every, seed=args.seed)
    write_manifest(_manifest_path(args.out), "train", _config_dict(args))
    state = trainer.train(model_config, train_config, dataset, progress=print)
    save_checkpoint(args.out, state.params, state.teacher.params)
    log_path = args.log or args.out + ".log.csv"
    trainer.write_history_csv(state.history, log_path)
    print(f"wrote checkpoint {args.out} and log {log_path}")
    return EXIT_OK


def cmd_eval(args):
    student, _teacher = load_checkpoint(args.checkpoint)
    dataset = load_dataset(args.data)
    cfg = student.config
    if (dataset.T, dataset.C, dataset.d_a, dataset.d_v) != (cfg.T, cfg.C, cfg.d_a, cfg.d_v):
        raise DatasetFormatError(
            f"dataset dims (T={dataset.T}, C={dataset.C}, d_a={dataset.d_a}, d_v={dataset.d_v}) "
            f"do not match checkpoint (T={cfg.T}, C={cfg.C}, d_a={cfg.d_a}, d_v={cfg.d_v})")
    scores = []
    predictions = []
    for sample in dataset:
        pred = trainer.predict_sample(student, sample, args.threshold)
        predictions.append((sample.id, pred))
        scores.append(metrics.evaluate_video(pred, sample.segment_gt))
    report = metrics.aggregate(scores)
    print(report.table())
    print()
    print(report.csv())
    if args.csv:
        with open(args.csv, "w", encoding="ascii") as fh:
            fh.write(report.csv() + "\n")
    if args.dump_pred:
        metrics.save_grid_file(args.dump_pred, predictions)
    return EXIT_OK


def cmd_gradcheck(args):
    # Toy instance: T=4 segments, C=3 classes, 8-dim features, 16-dim model.
    rng = np.random.default_rng(args.seed)
    model_config = ModelConfig(T=4, C=3, d_a=8, d_v=8, d_model=16, n_heads=2, seed=args.seed)
    params = init_params(model_config)
    audio = rng.normal(0.0, 1.0, size=(4, 8))
    visual = rng.normal(0.0, 1.0, size=(4, 8))
    label = np.array([1, 1, 0])

    teacher = TeacherState(params=params.copy(), alpha=0.9)
    probs = teacher_predict(teacher, audio, visual)
    mask = adaptive_threshold_mask(probs, 1.0, label)
    fwd0 = forward(params, audio, visual)
    pairs = losses.select_valid_pairs(fwd0.p_audio, fwd0.p_visual, label, 0.4, 0.4)
    if mask.count == 0 or len(pairs) == 0:
        raise GradCheckError("toy instance produced an empty mask or pair set")

    def objective():
        fwd = forward(params, audio, visual)
        loss, _ = losses.total_loss(fwd, label, mask=mask, pairs=pairs)
        return loss

    err = grad_check(objective, params.tensors(), epsilon=args.epsilon)
    print(f"max relative gradient error: {err:.3e} (tolerance {args.tolerance:.3e})")
    if err >= args.tolerance:
        print("FAIL: gradient error above tolerance")
        return EXIT_NUMERIC
    print("OK")
    return EXIT_OK


def cmd_masks(args):
    student, teacher_params = load_checkpoint(args.checkpoint)
    dataset = load_dataset(args.data)
    teacher = TeacherState(params=teacher_params, alpha=args.alpha)
    out_lines = []
    for sample in dataset:
        if args.video and sample.id != args.video:
            continue
        probs = teacher_predict(teacher, sample.audio_features, sample.visual_features)
        if args.mask_mode == "adaptive":
            mask = adaptive_threshold_mask(probs, args.gamma, sample.video_label,
                                           label_gate=not args.no_label_gate)
        else:
            mask = topk_mask(probs, args.k, sample.video_label,
                             label_gate=not args.no_label_gate)
        out_lines.append(f"video {sample.id} source={mask.source} param={mask.param} "
                         f"count={mask.count}")
        out_lines.append(mask.as_text())
    text = "\n".join(out_lines)
    if args.out:
        with open(args.out, "w", encoding="ascii") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    return EXIT_OK


def cmd_rerun(args):
    with open(args.manifest, encoding="ascii") as fh:
        payload = json.load(fh)
    command = payload["command"]
    stored = dict(payload["config"])
    stored.pop("func", None)
    argv = [command]
    for key, value in stored.items():
        if key == "func":
            continue
        flag = "--" + key.replace("_", "-")
        if isinstance(value, bool):
            if value:
                argv.append(flag)
        elif value is not None:
            argv.extend([flag, str(value)])
    return run(argv)


# ---------------------------------------------------------------------------
# argument wiring

def build_parser():
    parser = _Parser(prog="avparse",
                     description="Weakly-supervised audio-visual video parsing toolkit")
    parser.add_argument("--version", action="version", version=f"avparse {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    seed = _default_seed()
    fmt = dict(formatter_class=argparse.ArgumentDefaultsHelpFormatter)

    g = sub.add_parser("generate", help="write a synthetic dataset with planted events", **fmt)
    g.add_argument("--videos", type=int, default=200, help="number of videos")
    g.add_argument("--T", type=int, default=10, help="segments per video")
    g.add_argument("--C", type=int, default=5, help="number of event classes")
    g.add_argument("--d-a", type=int, default=16, help="audio feature dim")
    g.add_argument("--d-v", type=int, default=16, help="visual feature dim")
    g.add_argument("--events-min", type=int, default=1)
    g.add_argument("--events-max", type=int, default=3)
    g.add_argument("--mix-audio", type=float, default=0.1, help="audio-only event weight")
    g.add_argument("--mix-visual", type=float, default=0.1, help="visual-only event weight")
    g.add_argument("--mix-av", type=float, default=0.8, help="audio-visual event weight")
    g.add_argument("--sigma", type=float, default=0.3, help="feature noise scale")
    g.add_argument("--prototype-scale", type=float, default=2.0)
    g.add_argument("--encoding", choices=("text", "binary"), default="text")
    g.add_argument("--seed", type=int, default=seed)
    g.add_argument("--out", required=True, help="output dataset path")
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train on a dataset file", **fmt)
    t.add_argument("--data", required=True, help="dataset path")
    t.add_argument("--out", required=True, help="checkpoint output path")
    t.add_argument("--log", default=None, help="training log CSV path (default: <out>.log.csv)")
    t.add_argument("--epochs", type=int, default=20)
    t.add_argument("--lr", type=float, default=0.05)
    t.add_argument("--optimizer", choices=trainer.OPTIMIZERS, default="sgd")
    t.add_argument("--momentum", type=float, default=0.9)
    t.add_argument("--d-model", type=int, default=64)
    t.add_argument("--n-heads", type=int, default=4)
    t.add_argument("--alpha", type=float, default=0.999, help="EMA momentum")
    t.add_argument("--mask-mode", choices=("adaptive", "topk"), default="adaptive")
    t.add_argument("--gamma", type=float, default=2.0, help="adaptive threshold scale")
    t.add_argument("--k", type=int, default=3, help="top-k mask size")
    t.add_argument("--tau-a", type=float, default=0.5, help="audio valid-pair threshold")
    t.add_argument("--tau-v", type=float, default=0.5, help="visual valid-pair threshold")
    t.add_argument("--no-ema", action="store_true", help="disable the teacher and pseudo loss")
    t.add_argument("--no-cma", action="store_true", help="disable the cross-modal agreement loss")
    t.add_argument("--no-label-gate", action="store_true")
    t.add_argument("--warmup", type=int, default=1, help="epochs before pseudo loss engages")
    t.add_argument("--ema-every", type=int, default=1, help="steps between EMA updates")
    t.add_argument("--mask-every", type=int, default=1, help="epochs between mask refreshes")
    t.add_argument("--seed", type=int, default=seed)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a dataset", **fmt)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--threshold", type=float, default=0.5)
    e.add_argument("--csv", default=None, help="also write the report CSV here")
    e.add_argument("--dump-pred", default=None, help="write predicted grids to this file")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("gradcheck", help="finite-difference check of the full training loss", **fmt)
    c.add_argument("--tolerance", type=float, default=1e-5)
    c.add_argument("--epsilon", type=float, default=1e-5)
    c.add_argument("--seed", type=int, default=seed)
    c.set_defaults(func=cmd_gradcheck)

    m = sub.add_parser("masks", help="export teacher pseudo masks as text grids", **fmt)
    m.add_argument("--checkpoint", required=True)
    m.add_argument("--data", required=True)
    m.add_argument("--mask-mode", choices=("adaptive", "topk"), default="adaptive")
    m.add_argument("--gamma", type=float, default=2.0)
    m.add_argument("--k", type=int, default=3)
    m.add_argument("--alpha", type=float, default=0.999)
    m.add_argument("--no-label-gate", action="store_true")
    m.add_argument("--video", default=None, help="restrict to one video id")
    m.add_argument("--out", default=None, help="write grids here instead of stdout")
    m.set_defaults(func=cmd_masks)

    r = sub.add_parser("rerun", help="re-execute a command from its manifest", **fmt)
    r.add_argument("manifest")
    r.set_defaults(func=cmd_rerun)
    return parser


def run(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DatasetFormatError, CheckpointError, metrics.GridFileError,
            OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (GradCheckError, TrainingDivergedError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, TypeError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def main():
    sys.exit(run())
