"""Command-line entry points for every pipeline stage.

Exit codes: 0 ok, 1 usage error, 2 runtime error.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import control, evalkit
from .config import PipelineConfig
from .dataset import inject_corruption, load_all
from .errors import GraspForgeError
from .pagtoy.model import ModelConfig, PagModel
from .pagtoy.train import (
    build_training_samples,
    feature_dim,
    load_checkpoint,
    save_checkpoint,
    train,
    write_loss_csv,
)
from .pipeline import generate, validate_store


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # usage errors exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _load_config(args: argparse.Namespace) -> PipelineConfig:
    config = PipelineConfig.from_file(args.config) if args.config else PipelineConfig()
    if getattr(args, "seed", None) is not None:
        config.global_seed = args.seed
    if getattr(args, "workers", None) is not None:
        config.n_workers = args.workers
    if getattr(args, "out", None) is not None and args.command == "generate":
        config.output_root = str(args.out)
    config.validate()
    return config


def _out_dir(args: argparse.Namespace) -> Path:
    out = Path(args.out if args.out else ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _cmd_generate(args: argparse.Namespace) -> int:
    config = _load_config(args)
    summary = generate(config)
    print(f"episodes written: {summary.episodes_written}")
    print(f"skipped: {json.dumps(summary.skipped)}")
    print(f"wall time: {summary.wall_time:.2f} s ({summary.throughput:.1f} episodes/s)")
    for w in summary.workers:
        print(f"  worker {w.worker_id}: shard {w.shard_uuid} records {w.written} "
              f"mesh loads {w.mesh_loads}")
    return 0


def _cmd_validate(args: argparse.Namespace) -> int:
    config = _load_config(args)
    root = args.out if args.out else config.output_root
    report = validate_store(root, mu=config.mu)
    print(f"shards seen: {report.load.shards_seen} (empty: {report.load.shards_empty})")
    print(f"records loaded: {report.load.loaded} missing: {report.load.missing}")
    print(f"missing_rate: {report.load.missing_rate:.6f}")
    print(f"episodes checked: {report.episodes_checked}")
    print(f"violations: {json.dumps(report.violations)}")
    return 0


def _split_dataset(config: PipelineConfig, data_root: str):
    episodes, _ = load_all(data_root)
    if len(episodes) < 2:
        raise GraspForgeError(f"dataset under {data_root} has too few episodes")
    n_eval = min(config.eval_scenes, max(1, len(episodes) // 5))
    train_eps = episodes[:-n_eval]
    eval_scenes = [
        evalkit.EvalScene(layout=ep.layout, target_id=ep.target_id, episode=ep)
        for ep in episodes[-n_eval:]
    ]
    return train_eps, eval_scenes


def _train_model(config: PipelineConfig, episodes, seed: int):
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 12345])))
    synthetic, grounding = build_training_samples(
        episodes, rng, vocab=config.vocab, samples_per_episode=config.samples_per_episode
    )
    model_cfg = ModelConfig(
        feature_dim=feature_dim(),
        vocab=config.vocab,
        embed_dim=config.embed_dim,
        hidden_dim=config.hidden_dim,
        vf_hidden=config.vf_hidden,
    )
    model = PagModel.create(model_cfg, rng)
    return train(
        model,
        synthetic,
        grounding,
        steps=config.train_steps,
        learning_rate=config.learning_rate,
        rng=rng,
        batch_size=config.batch_size,
        mix_ratio=config.mixer_ratio,
    )


def _cmd_train_toy(args: argparse.Namespace) -> int:
    config = _load_config(args)
    if args.steps is not None:
        config.train_steps = args.steps
    out = _out_dir(args)
    data_root = args.data if args.data else config.output_root
    train_eps, _ = _split_dataset(config, data_root)
    result = _train_model(config, train_eps, config.global_seed)
    save_checkpoint(out / "model.ckpt", result.model)
    write_loss_csv(out / "losses.csv", result.curve)
    first = np.mean([row[3] for row in result.curve[:50]])
    last = np.mean([row[3] for row in result.curve[-50:]])
    print(f"trained {config.train_steps} steps on {len(train_eps)} episodes")
    print(f"loss: {first:.3f} -> {last:.3f}")
    print(f"checkpoint: {out / 'model.ckpt'}")
    return 0


def _cmd_eval(args: argparse.Namespace) -> int:
    config = _load_config(args)
    out = _out_dir(args)
    data_root = args.data if args.data else config.output_root
    _, eval_scenes = _split_dataset(config, data_root)
    policies = [evalkit.OraclePolicy()]
    if args.model:
        policies.append(evalkit.PagPolicy(load_checkpoint(args.model),
                                          integration_steps=config.integration_steps))
    results = []
    for policy in policies:
        results.extend(
            evalkit.run_benchmark(
                policy,
                eval_scenes,
                attempt_limit=config.attempt_limit,
                max_steps=config.eval_max_steps,
                mu=config.mu,
                seed=config.global_seed,
            )
        )
    evalkit.write_trials_csv(out / "trials.csv", results)
    spl_values = evalkit.spl(evalkit.TrialSet.from_results(results))
    evalkit.write_spl_csv(out / "spl.csv", spl_values)
    for method in spl_values:
        method_results = [r for r in results if r.method_id == method]
        sr = evalkit.success_rate(method_results, config.attempt_limit)
        print(f"{method}: success rate {sr:.3f} spl {spl_values[method]:.3f}")
    return 0


def _cmd_scaling(args: argparse.Namespace) -> int:
    config = _load_config(args)
    out = _out_dir(args)
    budgets = [int(b) for b in args.budgets.split(",")]
    data_root = args.data if args.data else config.output_root
    train_eps, eval_scenes = _split_dataset(config, data_root)
    run_cfg = evalkit.ScalingRunConfig(
        vocab=config.vocab,
        train_steps=config.train_steps,
        learning_rate=config.learning_rate,
        batch_size=config.batch_size,
        mix_ratio=config.mixer_ratio,
        samples_per_episode=config.samples_per_episode,
        embed_dim=config.embed_dim,
        hidden_dim=config.hidden_dim,
        vf_hidden=config.vf_hidden,
        seed=config.global_seed,
        max_steps=config.eval_max_steps,
        attempt_limit=config.attempt_limit,
        mu=config.mu,
        integration_steps=config.integration_steps,
        axis=args.axis,
    )
    rows = evalkit.scaling_report(budgets, train_eps, eval_scenes, run_cfg)
    evalkit.write_scaling_csv(out / "scaling.csv", rows)
    for row in rows:
        print(f"budget {row.budget}: episodes {row.episodes_used} frames {row.frames_used} "
              f"success {row.success_rate:.3f} spl {row.spl:.3f}")
    return 0


def _cmd_filter_demo(args: argparse.Namespace) -> int:
    config = _load_config(args)
    out = _out_dir(args)
    traces = control.comparison_step_responses(
        cutoff=config.filter_cutoff,
        sample_rate=config.filter_sample_rate,
        n_samples=args.samples,
    )
    path = out / "step_response.csv"
    names = list(traces)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample"] + names)
        for i in range(args.samples):
            writer.writerow([i] + [f"{traces[n][i]:.9f}" for n in names])
    print(f"wrote {path} ({args.samples} samples, {len(names)} filters)")
    return 0


def _cmd_inject_corruption(args: argparse.Namespace) -> int:
    config = _load_config(args)
    root = args.out if args.out else config.output_root
    rng = np.random.Generator(np.random.PCG64(config.global_seed))
    log = inject_corruption(root, args.kind, rng)
    print(json.dumps(log))
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="graspforge", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, out_help: str) -> None:
        p.add_argument("--config", type=str, default=None, help="config file path")
        p.add_argument("--seed", type=int, default=None, help="override global_seed")
        p.add_argument("--out", type=str, default=None, help=out_help)

    p = sub.add_parser("generate", help="generate an episode dataset")
    common(p, "dataset root directory")
    p.add_argument("--workers", type=int, default=None, help="override n_workers")

    p = sub.add_parser("validate", help="load a store and audit invariants")
    common(p, "dataset root directory")

    p = sub.add_parser("train-toy", help="train the toy policy on a dataset")
    common(p, "output directory for checkpoint + losses.csv")
    p.add_argument("--data", type=str, default=None, help="dataset root (default: config output_root)")
    p.add_argument("--steps", type=int, default=None, help="override train_steps")

    p = sub.add_parser("eval", help="closed-loop benchmark on held-out scenes")
    common(p, "output directory for trials.csv + spl.csv")
    p.add_argument("--data", type=str, default=None, help="dataset root")
    p.add_argument("--model", type=str, default=None, help="checkpoint to evaluate")

    p = sub.add_parser("scaling", help="train/eval across data budgets")
    common(p, "output directory for scaling.csv")
    p.add_argument("--budgets", type=str, required=True, help="comma-separated frame budgets")
    p.add_argument("--data", type=str, default=None, help="dataset root")
    p.add_argument("--axis", type=str, default="frames",
                   choices=("frames", "categories", "instances"))

    p = sub.add_parser("filter-demo", help="step-response CSV for the filter variants")
    common(p, "output directory for step_response.csv")
    p.add_argument("--samples", type=int, default=2000)

    p = sub.add_parser("inject-corruption", help="corrupt a store for fault testing")
    common(p, "dataset root directory")
    p.add_argument("--kind", type=str, default="flip", choices=("truncate", "flip", "delete"))
    return parser


_COMMANDS = {
    "generate": _cmd_generate,
    "validate": _cmd_validate,
    "train-toy": _cmd_train_toy,
    "eval": _cmd_eval,
    "scaling": _cmd_scaling,
    "filter-demo": _cmd_filter_demo,
    "inject-corruption": _cmd_inject_corruption,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except (GraspForgeError, OSError, ValueError) as exc:
        print(f"graspforge: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
