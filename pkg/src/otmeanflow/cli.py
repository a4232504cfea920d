"""Command-line entry point: train, generate, eval, bench.

Every command takes an output directory and writes only inside it.  A
manifest text file records the config snapshot, seed, timestamps, and every
output path, so any run can be reproduced from manifest + seed.
"""

from __future__ import annotations

import argparse
import csv
import importlib.metadata
import subprocess
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import nets
from .config import ConfigError, load_config, parse_config_text, render_config
from .data import PointBatch, sample, save_csv
from .evaluation import MetricRow, generate, w2_squared
from .plots import bench_figure, scatter_overlay, training_curves
from .training import train

EVAL_REPS = 3
BENCH_SEEDS = (0, 1, 2)


def _build_id() -> str:
    try:
        out = subprocess.run(
            ["git", "rev-parse", "--short", "HEAD"],
            capture_output=True,
            text=True,
            timeout=5,
            cwd=Path(__file__).parent,
        )
        if out.returncode == 0:
            return out.stdout.strip()
    except OSError:
        pass
    try:
        return "v" + importlib.metadata.version("otmeanflow")
    except importlib.metadata.PackageNotFoundError:
        return "unknown"


@dataclass
class RunManifest:
    """Record of one CLI invocation; every listed output exists at run end."""

    command: str
    seed: int
    config_text: str = ""
    build_id: str = field(default_factory=_build_id)
    started: str = ""
    finished: str = ""
    outputs: list[str] = field(default_factory=list)

    def start(self):
        self.started = time.strftime("%Y-%m-%dT%H:%M:%S")
        return self

    def write(self, path: Path):
        self.finished = time.strftime("%Y-%m-%dT%H:%M:%S")
        missing = [p for p in self.outputs if not Path(p).exists()]
        if missing:
            raise FileNotFoundError(f"manifest lists missing outputs: {missing}")
        lines = [
            f"command = {self.command}",
            f"seed = {self.seed}",
            f"build = {self.build_id}",
            f"started = {self.started}",
            f"finished = {self.finished}",
        ]
        lines += [f"output = {p}" for p in self.outputs]
        body = "\n".join(lines) + "\n"
        if self.config_text:
            indented = "\n".join("    " + ln for ln in self.config_text.rstrip().splitlines())
            body += "config:\n" + indented + "\n"
        path.write_text(body)


def _out_dir(arg: str) -> Path:
    out = Path(arg)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    out = _out_dir(args.out)
    manifest = RunManifest(command="train", seed=cfg.seed, config_text=render_config(cfg)).start()
    metrics_path = out / "metrics.csv"
    state, rows = train(cfg, metrics_path=metrics_path)
    ckpt_path = out / "checkpoint.npz"
    nets.save_checkpoint(
        ckpt_path, state.params, state.ema, state.step, extra={"config": render_config(cfg)}
    )
    (out / "config.txt").write_text(render_config(cfg))
    manifest.outputs += [str(metrics_path), str(ckpt_path), str(out / "config.txt")]
    if rows:
        curves_path = out / "training_curves.svg"
        training_curves(rows, curves_path)
        manifest.outputs.append(str(curves_path))
    rng = np.random.default_rng(cfg.seed + 500)
    x0 = sample(cfg.source, cfg.eval_batch, rng).points
    x1 = sample(cfg.target, cfg.eval_batch, rng).points
    overlay_path = out / "samples.svg"
    scatter_overlay(generate(state.ema, x0, 1), x1, overlay_path, title="one-step samples")
    manifest.outputs.append(str(overlay_path))
    manifest.write(out / "manifest.txt")
    if rows:
        last = rows[-1]
        print(f"final: step={last[0]} loss={last[1]:.5f} w2@1={last[2]:.5f} w2@2={last[3]:.5f}")
    return 0


def _load_run(checkpoint_path: str, use_ema: bool):
    params, ema, step, extra = nets.load_checkpoint(checkpoint_path)
    config_text = extra.get("config", "")
    cfg = parse_config_text(config_text, name=f"{checkpoint_path}[config]") if config_text else None
    return (ema if use_ema else params), cfg, step


def cmd_generate(args) -> int:
    model, cfg, _ = _load_run(args.checkpoint, args.ema)
    if cfg is None:
        print("checkpoint carries no config; cannot infer the source dataset", file=sys.stderr)
        return 1
    out = _out_dir(args.out)
    manifest = RunManifest(
        command="generate", seed=args.seed, config_text=render_config(cfg)
    ).start()
    rng = np.random.default_rng(args.seed)
    x0 = sample(cfg.source, args.n, rng).points
    points = generate(model, x0, args.nfe)
    csv_path = out / "generated.csv"
    save_csv(csv_path, PointBatch(points))
    svg_path = out / "generated.svg"
    target = sample(cfg.target, args.n, rng).points
    scatter_overlay(points, target, svg_path, title=f"NFE={args.nfe}")
    manifest.outputs += [str(csv_path), str(svg_path)]
    manifest.write(out / "manifest.txt")
    print(f"wrote {args.n} points at NFE={args.nfe} to {csv_path}")
    return 0


def cmd_eval(args) -> int:
    model, cfg, _ = _load_run(args.checkpoint, args.ema)
    if cfg is None:
        print("checkpoint carries no config; cannot infer the dataset pair", file=sys.stderr)
        return 1
    out = _out_dir(args.out)
    manifest = RunManifest(command="eval", seed=args.seed, config_text=render_config(cfg)).start()
    nfes = [int(s) for s in args.nfe.split(",")]
    rng = np.random.default_rng(args.seed)
    metric_rows = []
    for nfe in nfes:
        values = []
        t0 = time.perf_counter()
        for _ in range(EVAL_REPS):
            x0 = sample(cfg.source, args.n, rng).points
            x1 = sample(cfg.target, args.n, rng).points
            values.append(w2_squared(generate(model, x0, nfe), x1))
        wall_ms = (time.perf_counter() - t0) / EVAL_REPS * 1000.0
        metric_rows.append(MetricRow("w2_squared", nfe, float(np.mean(values)), wall_ms))
    csv_path = out / "eval.csv"
    with open(csv_path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["name", "nfe", "value", "wall_ms"])
        for row in metric_rows:
            wr.writerow([row.name, row.nfe, f"{row.value:.6f}", f"{row.wall_ms:.2f}"])
    x0 = sample(cfg.source, args.n, rng).points
    x1 = sample(cfg.target, args.n, rng).points
    svg_path = out / "eval_samples.svg"
    scatter_overlay(generate(model, x0, nfes[0]), x1, svg_path, title=f"NFE={nfes[0]}")
    manifest.outputs += [str(csv_path), str(svg_path)]
    manifest.write(out / "manifest.txt")
    for row in metric_rows:
        print(f"w2_squared nfe={row.nfe}: {row.value:.6f}")
    return 0


def _bench_one(config_path: str, seed: int, eval_n: int):
    """Train one config at one seed; returns (w2@1, w2@2, ms/step)."""
    cfg = load_config(config_path)
    cfg.seed = seed
    cfg.eval_every = 0
    t0 = time.perf_counter()
    state, _ = train(cfg)
    ms_per_step = (time.perf_counter() - t0) / max(cfg.iterations, 1) * 1000.0
    rng = np.random.default_rng(seed + 9000)
    w1s, w2s = [], []
    for _ in range(EVAL_REPS):
        x0 = sample(cfg.source, eval_n, rng).points
        x1 = sample(cfg.target, eval_n, rng).points
        w1s.append(w2_squared(generate(state.ema, x0, 1), x1))
        w2s.append(w2_squared(generate(state.ema, x0, 2), x1))
    return float(np.mean(w1s)), float(np.mean(w2s)), ms_per_step


def cmd_bench(args) -> int:
    config_dir = Path(args.config)
    if not config_dir.is_dir():
        print(f"bench expects a directory of configs: {config_dir}", file=sys.stderr)
        return 1
    config_paths = sorted(config_dir.glob("*.txt")) + sorted(config_dir.glob("*.cfg"))
    if not config_paths:
        print(f"no config files (*.txt, *.cfg) in {config_dir}", file=sys.stderr)
        return 1
    out = _out_dir(args.out)
    manifest = RunManifest(command="bench", seed=BENCH_SEEDS[0]).start()
    table = []
    failures = 0
    for path in config_paths:
        cfg = load_config(path)
        pair = f"{cfg.source.kind}_to_{cfg.target.kind}"
        per_seed = []
        status = "ok"
        for seed in BENCH_SEEDS:
            try:
                per_seed.append(_bench_one(str(path), seed, args.eval_n))
            except (FloatingPointError, ValueError) as exc:
                print(f"{path.name} seed={seed} failed: {exc}", file=sys.stderr)
                status = "failed"
                failures += 1
                break
        if status == "ok":
            means = np.mean(np.asarray(per_seed), axis=0)
            row = {
                "pair": pair,
                "coupling": cfg.coupling.kind,
                "w2_nfe1": f"{means[0]:.5f}",
                "w2_nfe2": f"{means[1]:.5f}",
                "ms_per_step": f"{means[2]:.2f}",
                "status": status,
            }
        else:
            row = {
                "pair": pair,
                "coupling": cfg.coupling.kind,
                "w2_nfe1": "failed",
                "w2_nfe2": "failed",
                "ms_per_step": "failed",
                "status": status,
            }
        table.append(row)
        print(
            f"{pair} {cfg.coupling.kind}: w2@1={row['w2_nfe1']} "
            f"w2@2={row['w2_nfe2']} ms/step={row['ms_per_step']}"
        )
    table.sort(key=lambda r: (r["pair"], r["coupling"]))
    table_path = out / "bench.csv"
    with open(table_path, "w", newline="") as fh:
        wr = csv.DictWriter(
            fh, fieldnames=["pair", "coupling", "w2_nfe1", "w2_nfe2", "ms_per_step", "status"]
        )
        wr.writeheader()
        wr.writerows(table)
    manifest.outputs.append(str(table_path))
    numeric = [r for r in table if r["status"] == "ok"]
    if numeric:
        fig_path = out / "bench.svg"
        bench_figure(numeric, fig_path)
        manifest.outputs.append(str(fig_path))
    manifest.write(out / "manifest.txt")
    return 1 if failures else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="otmeanflow")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a model from a config file")
    p_train.add_argument("--config", required=True)
    p_train.add_argument("--out", required=True)
    p_train.add_argument("--seed", type=int, default=None, help="override the config seed")
    p_train.set_defaults(func=cmd_train)

    p_gen = sub.add_parser("generate", help="sample points from a checkpoint")
    p_gen.add_argument("--checkpoint", required=True)
    p_gen.add_argument("--out", required=True)
    p_gen.add_argument("--nfe", type=int, default=1)
    p_gen.add_argument("--n", type=int, default=2000)
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.add_argument("--ema", action=argparse.BooleanOptionalAction, default=True)
    p_gen.set_defaults(func=cmd_generate)

    p_eval = sub.add_parser("eval", help="score a checkpoint with squared Wasserstein")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--out", required=True)
    p_eval.add_argument("--nfe", default="1,2", help="comma-separated NFE list")
    p_eval.add_argument("--n", type=int, default=2000)
    p_eval.add_argument("--seed", type=int, default=0)
    p_eval.add_argument("--ema", action=argparse.BooleanOptionalAction, default=True)
    p_eval.set_defaults(func=cmd_eval)

    p_bench = sub.add_parser("bench", help="run a directory of configs over 3 seeds")
    p_bench.add_argument("--config", required=True, help="directory of config files")
    p_bench.add_argument("--out", required=True)
    p_bench.add_argument("--eval-n", type=int, default=2000)
    p_bench.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
