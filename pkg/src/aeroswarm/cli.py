"""Command-line experiment runner.

Verbs: ``train``, ``eval``, ``sweep``, ``dump-defaults``. Configuration is
layered as defaults < ``--config`` file < ``AEROSWARM_*`` environment
variables < ``--seed``.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

from . import config as config_mod
from . import learner
from .checkpoint import CheckpointError, load_checkpoint
from .config import PHASES, ConfigError, ScenarioConfig
from .metrics import write_csv

log = logging.getLogger("aeroswarm")

SWEEP_USERS = (60, 80, 100, 120, 140)
TRACE_COLUMNS = ("episode", "step", "uav_id", "x", "y", "z", "action", "collision_flag")
PLOT_SCRIPT = Path(__file__).with_name("plot_metrics.py")


class ExperimentError(RuntimeError):
    pass


class TraceWriter:
    """Per-step UAV positions and actions of the learned policy."""

    def __init__(self, path: Path):
        self.fh = open(path, "w", newline="", encoding="utf-8")
        self.w = csv.writer(self.fh, lineterminator="\n")
        self.w.writerow(TRACE_COLUMNS)

    def __call__(self, episode, state, actions):
        step = state.step_index - 1
        for i, (pos, a) in enumerate(zip(state.uav_pos, actions)):
            self.w.writerow([episode, step, i, repr(float(pos[0])), repr(float(pos[1])),
                             repr(float(pos[2])), int(a), int(bool(state.collided[i]))])

    def close(self):
        self.fh.close()


def _prepare_dir(out_dir) -> Path:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_probe"
        probe.write_bytes(b"")
        probe.unlink()
    except OSError as exc:
        raise ExperimentError(f"output directory {out} is not writable: {exc}") from None
    return out


def _snapshot(cfg: ScenarioConfig, out: Path) -> None:
    config_mod.save(cfg, out / "config.ini")
    (out / "plot_metrics.py").write_text(PLOT_SCRIPT.read_text(encoding="utf-8"), encoding="utf-8")


def _train_into(cfg, out: Path, episodes, trace: bool, ckpt_dir: Path):
    metrics = out / "metrics.csv"
    metrics.write_text("", encoding="utf-8")
    tracer = TraceWriter(out / "trace.csv") if trace else None
    try:
        res = learner.train(cfg, episodes=episodes, checkpoint_dir=ckpt_dir,
                            on_record=lambda r: write_csv(metrics, [r], append=True),
                            trace=tracer)
    finally:
        if tracer:
            tracer.close()
    return res


def run_experiment(cfg: ScenarioConfig, mode: str, out_dir, episodes: int | None = None,
                   trace: bool = False, checkpoint=None) -> int:
    """Run one experiment and write its artefacts under ``out_dir``.

    train  metrics.csv, config.ini, plot_metrics.py, checkpoints/, optional trace.csv
    eval   greedy rollouts of ``checkpoint`` (default out_dir/checkpoints/latest.bin)
           written to out_dir/eval/
    sweep  one train run per user count in out_dir/M<m>/ plus a combined sweep.csv
    """
    out = _prepare_dir(out_dir)
    if mode == "train":
        _snapshot(cfg, out)
        res = _train_into(cfg, out, episodes, trace, out / "checkpoints")
        log.info("trained %d episodes into %s", res.state.next_episode, out)
    elif mode == "eval":
        ckpt = Path(checkpoint) if checkpoint else out / "checkpoints" / "latest.bin"
        if not ckpt.exists():
            raise ExperimentError(f"checkpoint {ckpt} not found")
        ts = load_checkpoint(ckpt, cfg)
        dest = _prepare_dir(out / "eval")
        _snapshot(cfg, dest)
        n_eval = cfg.total_episodes if episodes is None else episodes
        tracer = TraceWriter(dest / "trace.csv") if trace else None
        try:
            records = learner.evaluate(cfg, ts, n_eval, trace=tracer)
        finally:
            if tracer:
                tracer.close()
        write_csv(dest / "metrics.csv", records)
        log.info("evaluated %s over %d episodes", ckpt, n_eval)
    elif mode == "sweep":
        _snapshot(cfg, out)
        combined = out / "sweep.csv"
        combined.write_text("", encoding="utf-8")
        for m in SWEEP_USERS:
            cfg_m = cfg.replace(n_users_per_phase={p: m for p in PHASES})
            sub = _prepare_dir(out / f"M{m}")
            _snapshot(cfg_m, sub)
            res = _train_into(cfg_m, sub, episodes, trace, sub / "checkpoints")
            write_csv(combined, res.records, extra={"m_users": m}, append=True)
            log.info("sweep M=%d done", m)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return 0


def build_config(path=None, seed=None, environ=None) -> ScenarioConfig:
    cfg = config_mod.load(path) if path else ScenarioConfig()
    cfg = config_mod.apply_env_overrides(cfg, environ)
    if seed is not None:
        cfg = cfg.replace(seed=seed)
    return cfg


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="aeroswarm", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="verb", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="config file (INI sections per module)")
    common.add_argument("--seed", type=int)
    common.add_argument("-v", "--verbose", action="store_true")
    run = argparse.ArgumentParser(add_help=False, parents=[common])
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument("--episodes", type=int, help="stop after this many episodes")
    run.add_argument("--trace", action="store_true", help="write per-step trace.csv")
    sub.add_parser("train", parents=[run], help="train and log against both baselines")
    ev = sub.add_parser("eval", parents=[run], help="greedy rollouts from a checkpoint")
    ev.add_argument("--checkpoint", help="defaults to OUT/checkpoints/latest.bin")
    sub.add_parser("sweep", parents=[run], help=f"train once per user count {SWEEP_USERS}")
    dd = sub.add_parser("dump-defaults", parents=[common], help="print the effective config")
    dd.add_argument("--out", help="write to this file instead of stdout")
    return p


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg_path = args.config
        if cfg_path is None and args.verb == "eval" and (Path(args.out) / "config.ini").exists():
            # evaluate under the configuration the checkpoint was trained with
            cfg_path = Path(args.out) / "config.ini"
        cfg = build_config(cfg_path, args.seed)
        if args.verb == "dump-defaults":
            text = config_mod.to_text(cfg)
            if args.out:
                Path(args.out).write_text(text, encoding="utf-8")
            else:
                sys.stdout.write(text)
            return 0
        if args.episodes is not None and args.episodes < 0:
            raise ExperimentError("--episodes must be non-negative")
        return run_experiment(cfg, args.verb, args.out, args.episodes, args.trace,
                              getattr(args, "checkpoint", None))
    except (ConfigError, CheckpointError, ExperimentError, OSError) as exc:
        print(f"aeroswarm: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
