"""Command-line entry point: ``tdm {train,generate,eval,gradcheck,synth,plot}``.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import yaml

from .checkpoint import CheckpointError, load_checkpoint
from .config import ConfigError, load_config
from .data_io import (DatasetError, SamplePair, format_record, generate_synthetic, load_dataset,
                      save_dataset, scan_vocabulary)
from .denoiser import DenoiserConfig, DenoiserError, TextPoseDenoiser, UnknownTokenError, Vocabulary
from .diffusion import NOISE_MODES, SamplerConfig, SamplingError
from .evaluation import EvaluationError, evaluate_model
from .gradcheck import run_gradcheck
from .plotting import plot_pairs
from .schedule import cosine_schedule
from .skeleton import (PoseError, SkeletonConfigError, default_topology, dump_skeleton, load_skeleton,
                       topology_from_dict)
from .training import TrainingError, init_seed_rng, run_training

log = logging.getLogger("tdm")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    """Bad input from the operator; reported with exit code 2."""


def _fail(msg: str, code: int) -> int:
    print(f"tdm: error: {msg}", file=sys.stderr)
    return code


def _topology(path: Optional[Path]):
    if path is None:
        return default_topology()
    if not Path(path).exists():
        raise UsageError(f"skeleton config not found: {path}")
    return load_skeleton(path)


def _load_model(path):
    if not Path(path).exists():
        raise UsageError(f"checkpoint not found: {path}")
    ckpt = load_checkpoint(path)
    sched_meta = ckpt.meta.get("schedule", {})
    sched = cosine_schedule(int(sched_meta.get("T", 1000)), float(sched_meta.get("s", 0.008)))
    topo = topology_from_dict(ckpt.meta["skeleton"]) if "skeleton" in ckpt.meta else None
    return ckpt.model(), sched, topo


def _sampler(args) -> SamplerConfig:
    return SamplerConfig(args.iterations, args.mode)


# ---------------------------------------------------------------------------
# subcommands


def cmd_train(args) -> int:
    overrides = list(args.set or [])
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    cfg = load_config(args.config, overrides)
    tcfg = cfg.train_config()
    topo = _topology(cfg.resolve(cfg.data.skeleton))
    for key in ("dataset", "vocab"):
        if getattr(cfg.data, key) is None:
            raise ConfigError(f"data.{key}: required for training")
    dataset_path, vocab_path = cfg.resolve(cfg.data.dataset), cfg.resolve(cfg.data.vocab)
    for key, p in (("data.dataset", dataset_path), ("data.vocab", vocab_path)):
        if not p.exists():
            raise ConfigError(f"{key}: file not found: {p}")
    try:
        vocab = Vocabulary.load(vocab_path)
    except ValueError as exc:
        raise ConfigError(f"data.vocab: {exc}") from exc
    dataset = load_dataset(dataset_path, vocab, topo)
    if not dataset:
        raise ConfigError(f"data.dataset: {dataset_path} holds no records")

    m = cfg.model
    model_cfg = DenoiserConfig(m.num_layers, m.num_heads, m.model_dim, m.ffn_dim, m.max_positions,
                               m.dropout_rate, topo.num_joints, len(vocab), m.cross_attention,
                               m.condition_bias)
    longest = max(max(p.pose.num_frames, len(p.tokens)) for p in dataset)
    if longest > model_cfg.max_positions:
        raise ConfigError(f"model.max_positions: {model_cfg.max_positions} < longest sequence {longest}")
    sched = cosine_schedule(cfg.schedule.T, cfg.schedule.s)
    model = TextPoseDenoiser.create(model_cfg, vocab, sched.T, init_seed_rng(cfg.seed))
    out_dir = cfg.resolve(cfg.output_dir)
    resume = args.resume
    if resume is not None and not Path(resume).exists():
        raise UsageError(f"resume checkpoint not found: {resume}")

    run = run_training(dataset, model, sched, topo, tcfg, out_dir, resume_from=resume)
    last = run.history[-1] if run.history else None
    if last is not None:
        print(f"trained to step {tcfg.max_steps}: joint={last.joint:.5f} bone={last.bone:.5f} "
              f"total={last.total:.5f}")
    for path in run.checkpoints:
        print(f"checkpoint {path}")
    return EXIT_OK


def cmd_generate(args) -> int:
    model, sched, _ = _load_model(args.checkpoint)
    words = args.text.split()
    if not words:
        raise UsageError("--text is empty")
    try:
        tokens = model.vocab.encode(words)
    except UnknownTokenError as exc:
        raise UsageError(str(exc)) from exc
    if args.frames < 1 or args.frames > model.cfg.max_positions:
        raise UsageError(f"--frames must lie in [1, {model.cfg.max_positions}]")
    rng = np.random.default_rng(args.seed)
    pose = model.generate(tokens, args.frames, sched, _sampler(args), rng)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(format_record(SamplePair(args.id, tokens, pose), model.vocab) + "\n", encoding="utf-8")
    print(f"wrote {args.frames} frame(s) to {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    model, sched, topo = _load_model(args.checkpoint)
    if args.skeleton is not None or topo is None:
        topo = _topology(args.skeleton)
    if not Path(args.dataset).exists():
        raise UsageError(f"dataset not found: {args.dataset}")
    dataset = load_dataset(args.dataset, model.vocab, topo)
    report = evaluate_model(model, dataset, sched, _sampler(args), args.seed, args.out)
    s = report["summary"]
    mean = "n/a" if s["mean_dtw"] is None else f"{s['mean_dtw']:.5f}"
    print(f"evaluated {s['evaluated']}/{s['count']} (failed {s['failed']}): mean DTW {mean}; report {args.out}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    report = run_gradcheck(args.seed, args.params)
    print(report.format())
    return EXIT_OK if report.passed else EXIT_RUNTIME


def cmd_synth(args) -> int:
    topo = _topology(args.skeleton)
    try:
        pairs, vocab = generate_synthetic(args.seed, args.samples, topo, args.vocab_size, args.max_len,
                                          args.min_len, args.frames_per_token)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_dataset(out / "dataset.jsonl", pairs, vocab)
    vocab.save(out / "vocab.txt")
    (out / "skeleton.yaml").write_text(dump_skeleton(topo), encoding="utf-8")
    config = {
        "seed": args.seed,
        "output_dir": "run",
        "data": {"dataset": "dataset.jsonl", "vocab": "vocab.txt", "skeleton": "skeleton.yaml"},
    }
    (out / "config.yaml").write_text(yaml.safe_dump(config, sort_keys=False), encoding="utf-8")
    print(f"wrote {len(pairs)} samples, vocabulary, skeleton and config.yaml to {out}")
    return EXIT_OK


def cmd_plot(args) -> int:
    topo = _topology(args.skeleton)
    if not Path(args.pose).exists():
        raise UsageError(f"pose file not found: {args.pose}")
    pairs = load_dataset(args.pose, scan_vocabulary(args.pose), topo)
    written = plot_pairs(pairs, topo, args.out_dir)
    print(f"wrote {len(written)} SVG frame(s) and coords.csv to {args.out_dir}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tdm", description="Text-conditioned pose diffusion toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        p = sub.add_parser(name, help=help_)
        p.set_defaults(func=fn)
        return p

    def sampler_args(p):
        p.add_argument("--iterations", type=int, default=5, help="denoiser calls (default 5)")
        p.add_argument("--mode", choices=NOISE_MODES, default="fresh",
                       help="re-noising between steps: fresh Gaussian noise or none")

    p = add("train", cmd_train, "train a denoiser from a run config")
    p.add_argument("--config", required=True, type=Path)
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config field")
    p.add_argument("--resume", type=Path, help="continue from a training checkpoint")
    p.add_argument("--seed", type=int, help="override the config seed")

    p = add("generate", cmd_generate, "sample a pose sequence for a text")
    p.add_argument("--checkpoint", required=True, type=Path)
    p.add_argument("--text", required=True, help="whitespace-separated tokens")
    p.add_argument("--frames", required=True, type=int)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--id", default="generated", help="record id in the output file")
    p.add_argument("--seed", type=int, default=0)
    sampler_args(p)

    p = add("eval", cmd_eval, "DTW evaluation of a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True, type=Path)
    p.add_argument("--dataset", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path, help="report file (JSON)")
    p.add_argument("--skeleton", type=Path, help="override the checkpoint's skeleton")
    p.add_argument("--seed", type=int, default=0)
    sampler_args(p)

    p = add("gradcheck", cmd_gradcheck, "finite-difference check of all gradient rules")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--params", type=int, default=24, help="model parameters to probe")

    p = add("synth", cmd_synth, "write a synthetic text-to-pose corpus")
    p.add_argument("--out-dir", required=True, type=Path)
    p.add_argument("--samples", type=int, default=8)
    p.add_argument("--vocab-size", type=int, default=6)
    p.add_argument("--min-len", type=int, default=1)
    p.add_argument("--max-len", type=int, default=3)
    p.add_argument("--frames-per-token", type=int, default=4)
    p.add_argument("--skeleton", type=Path)
    p.add_argument("--seed", type=int, default=0)

    p = add("plot", cmd_plot, "render pose records as SVG frames plus a CSV")
    p.add_argument("--pose", required=True, type=Path, help="pose file in dataset record format")
    p.add_argument("--out-dir", required=True, type=Path)
    p.add_argument("--skeleton", type=Path)
    p.add_argument("--seed", type=int, default=0, help="accepted for uniformity; plotting is deterministic")
    return parser


USAGE_ERRORS = (UsageError, ConfigError, CheckpointError, DatasetError, SkeletonConfigError, PoseError,
                EvaluationError)
RUNTIME_ERRORS = (TrainingError, SamplingError, DenoiserError, OSError, ValueError, RuntimeError)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except USAGE_ERRORS as exc:
        return _fail(str(exc), EXIT_USAGE)
    except RUNTIME_ERRORS as exc:
        return _fail(f"{type(exc).__name__}: {exc}", EXIT_RUNTIME)
    except Exception as exc:  # anything unforeseen is still a runtime failure, not a crash
        log.debug("unhandled error", exc_info=True)
        return _fail(f"unexpected {type(exc).__name__}: {exc}", EXIT_RUNTIME)


if __name__ == "__main__":
    sys.exit(main())
