"""Command-line pipeline.

Every subcommand reads and writes inside the working directory given by
``--out`` (default ``run``)::

    events.csv                 synth / ingest
    events_filtered.csv        filter
    split/{train,validation,test}.csv
    models/{idm,gipps,fvd}.params, models/{rnn,ddpg}.npz
    policies/{ef_ddqn,ef_ppo}/manifest.json
    calibration/, logs/        fitness histories and training logs
    eval/metrics.csv           eval
    stats/                     stats
    report/                    report
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .calibration import run_ga
from .cf_models import PARAMS_BY_KIND, RuleBasedModel, load_model, save_model
from .config import PRESETS, dump_config, load_config
from .data import filter_events, load_events, split, synthesize_events, write_events
from .ensemble import load_policy, save_policy
from .errors import ArtifactError, ConfigError, DataError, EnsembleFollowerError
from .evaluation import (write_rows, compare_models, emit_report, selection_stats, weight_stats,
                         write_metrics_csv, write_per_event_csv)
from .rl.cloning import train_rnn_cloning
from .rl.ddpg import train_ddpg_lowlevel
from .rl.ddqn import train_ef_ddqn
from .rl.ppo import train_ef_ppo

logger = logging.getLogger("ensemble_follower")

RULE_MODELS = tuple(PARAMS_BY_KIND)
DEFAULT_ROSTER = ("idm", "gipps", "fvd", "rnn", "ddpg")
POLICIES = ("ef_ddqn", "ef_ppo")
SPLITS = ("train", "validation", "test")


class Workdir:
    def __init__(self, root):
        self.root = Path(root)

    def path(self, *parts, mkdir: bool = False) -> Path:
        p = self.root.joinpath(*parts)
        if mkdir:
            p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def require(self, *parts) -> Path:
        p = self.path(*parts)
        if not p.exists():
            raise ArtifactError(f"{p} not found; run the producing subcommand first")
        return p

    def events_source(self) -> Path:
        filtered = self.path("events_filtered.csv")
        return filtered if filtered.exists() else self.require("events.csv")

    def split_events(self, name: str, cfg):
        return load_events(self.require("split", f"{name}.csv"), dt=cfg.kinematics.dt)

    def model_path(self, name: str) -> Path:
        for suffix in (".params", ".npz"):
            p = self.path("models", name + suffix)
            if p.exists():
                return p
        raise ArtifactError(f"no model file for {name!r} under {self.path('models')}")

    def load_roster(self, names):
        return [load_model(self.model_path(n), n) for n in names]


def _write_history(path: Path, history) -> Path:
    return write_rows(path, ("generation", "best_fitness"), list(enumerate(history)))


# --- subcommands ---------------------------------------------------------------


def cmd_config(args, cfg, wd):
    text = dump_config(cfg)
    if args.write:
        wd.path("config.yaml", mkdir=True).write_text(text, encoding="utf-8")
    sys.stdout.write(text)


def cmd_synth(args, cfg, wd):
    synth = cfg.synth
    if args.n_events is not None:
        synth = replace(synth, n_events=args.n_events)
    if args.profile is not None:
        synth = replace(synth, leader_profile=args.profile)
    events = synthesize_events(synth, cfg.kinematics)
    write_events(events, wd.path("events.csv", mkdir=True))
    logger.info("wrote %d synthetic events", len(events))


def cmd_ingest(args, cfg, wd):
    schema = {}
    for item in args.column or []:
        if "=" not in item:
            raise ConfigError(f"--column expects canonical=source, got {item!r}")
        key, value = item.split("=", 1)
        schema[key] = value
    diagnostics: list[str] = []
    events = load_events(args.source, schema, dt=cfg.kinematics.dt, diagnostics=diagnostics)
    if not events:
        raise DataError(f"{args.source}: no usable events ({len(diagnostics)} rejected)")
    write_events(events, wd.path("events.csv", mkdir=True))
    wd.path("ingest_diagnostics.txt").write_text("".join(d + "\n" for d in diagnostics),
                                                 encoding="utf-8")
    logger.info("ingested %d events (%d rejected)", len(events), len(diagnostics))


def cmd_filter(args, cfg, wd):
    events = load_events(wd.require("events.csv"), dt=cfg.kinematics.dt)
    f = cfg.filter
    kept = filter_events(events, f.min_duration, f.low_speed_threshold, f.max_low_speed_run)
    write_events(kept, wd.path("events_filtered.csv"))
    logger.info("kept %d of %d events", len(kept), len(events))


def cmd_split(args, cfg, wd):
    events = load_events(wd.events_source(), dt=cfg.kinematics.dt)
    ds = split(events, cfg.split.ratios, cfg.split.seed)
    rows = []
    for name in SPLITS:
        part = getattr(ds, name)
        write_events(part, wd.path("split", f"{name}.csv", mkdir=True))
        rows.extend((name, ev.event_id) for ev in part)
    write_rows(wd.path("split", "assignment.csv"), ("split", "event_id"), rows)


def cmd_calibrate(args, cfg, wd):
    events = wd.split_events("train", cfg)
    result = run_ga(args.model, events, cfg.ga, cfg=cfg.kinematics)
    save_model(wd.path("models", f"{args.model}.params", mkdir=True),
               RuleBasedModel(result.best_params, args.model))
    wd.path("calibration", f"{args.model}.txt", mkdir=True).write_text(result.to_text(),
                                                                       encoding="utf-8")
    _write_history(wd.path("calibration", f"{args.model}_fitness.csv"), result.fitness_history)
    logger.info("%s: best fitness %.6f after %d generations", args.model, result.best_fitness,
                result.generations)


def cmd_train_rnn(args, cfg, wd):
    result = train_rnn_cloning(wd.split_events("train", cfg), cfg.cloning)
    save_model(wd.path("models", "rnn.npz", mkdir=True), result.model)
    result.log.write_csv(wd.path("logs", "rnn.csv", mkdir=True))


def cmd_train_ddpg(args, cfg, wd):
    result = train_ddpg_lowlevel(wd.split_events("train", cfg), cfg.ddpg, cfg.reward, cfg.kinematics)
    save_model(wd.path("models", "ddpg.npz", mkdir=True), result.model)
    result.log.write_csv(wd.path("logs", "ddpg.csv", mkdir=True))


def _roster(args):
    return [n.strip() for n in args.roster.split(",") if n.strip()]


def cmd_train_ef_ddqn(args, cfg, wd):
    roster = wd.load_roster(_roster(args))
    result = train_ef_ddqn(wd.split_events("train", cfg), roster, cfg.ddqn, cfg.reward, cfg.kinematics)
    save_policy(wd.path("policies", "ef_ddqn"), result.policy)
    result.log.write_csv(wd.path("logs", "ef_ddqn.csv", mkdir=True))


def cmd_train_ef_ppo(args, cfg, wd):
    roster = wd.load_roster(_roster(args))
    result = train_ef_ppo(wd.split_events("train", cfg), roster, cfg.ppo, cfg.reward, cfg.kinematics)
    save_policy(wd.path("policies", "ef_ppo"), result.policy)
    result.log.write_csv(wd.path("logs", "ef_ppo.csv", mkdir=True))
    a = result.audit
    write_rows(wd.path("logs", "ef_ppo_simplex.csv"),
                ("n_vectors", "min_weight", "max_sum_error", "max_range_excursion"),
                [[a.n_vectors, a.min_weight, a.max_sum_error, a.max_range_excursion]])


def _candidates(args, wd):
    names = _roster(args)
    models = wd.load_roster(names)
    for name in POLICIES:
        manifest = wd.path("policies", name, "manifest.json")
        if manifest.exists():
            models.append(load_policy(manifest))
    return models


def _evaluate(args, cfg, wd):
    events = wd.split_events(args.split, cfg)
    meta = {"preset": cfg.preset, "seed": cfg.synth.seed, "split": args.split}
    return compare_models(_candidates(args, wd), events, cfg.kinematics, meta), events


def cmd_eval(args, cfg, wd):
    report, _ = _evaluate(args, cfg, wd)
    out = wd.path("eval", "metrics.csv", mkdir=True)
    write_metrics_csv(report, out)
    write_per_event_csv(report, wd.path("eval", "per_event.csv"))
    with out.open(encoding="utf-8") as fh:
        sys.stdout.write(fh.read())


def _ensemble_stats(cfg, wd, events):
    sel = wts = None
    if wd.path("policies", "ef_ddqn", "manifest.json").exists():
        sel = selection_stats(load_policy(wd.path("policies", "ef_ddqn")), events, cfg.kinematics)
    if wd.path("policies", "ef_ppo", "manifest.json").exists():
        wts = weight_stats(load_policy(wd.path("policies", "ef_ppo")), events, cfg.kinematics)
    return sel, wts


def cmd_stats(args, cfg, wd):
    events = wd.split_events(args.split, cfg)
    sel, wts = _ensemble_stats(cfg, wd, events)
    if sel is None and wts is None:
        raise ArtifactError("no trained ensemble policy found under policies/")
    if sel is not None:
        write_rows(wd.path("stats", "selection_stats.csv", mkdir=True), sel.header, sel.rows())
    if wts is not None:
        write_rows(wd.path("stats", "weight_stats.csv", mkdir=True), wts.header, wts.rows())


def cmd_report(args, cfg, wd):
    report, events = _evaluate(args, cfg, wd)
    sel, wts = _ensemble_stats(cfg, wd, events)
    paths = emit_report(report, wd.path("report"), sel, wts, cfg.eval.max_overlays)
    logger.info("wrote %d report files", len(paths))


# --- argument parsing ----------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ensemble-follower",
                                     description="Car-following model calibration, training and evaluation.")
    parser.add_argument("--config", help="YAML file overriding preset values")
    parser.add_argument("--seed", type=int, help="seed applied to every stochastic component")
    parser.add_argument("--preset", choices=PRESETS, default=None,
                        help="parameter preset (default: paper)")
    parser.add_argument("--out", default="run", help="working directory (default: run)")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("config", help="print the resolved configuration")
    p.add_argument("--write", action="store_true", help="also save it as <out>/config.yaml")
    p.set_defaults(func=cmd_config)

    p = sub.add_parser("synth", help="generate synthetic events")
    p.add_argument("--n-events", type=int)
    p.add_argument("--profile", help="leader profile override")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", help="import events from a CSV file")
    p.add_argument("source")
    p.add_argument("--column", action="append", metavar="CANONICAL=SOURCE",
                   help="map a canonical column to a header in the source file")
    p.set_defaults(func=cmd_ingest)

    sub.add_parser("filter", help="drop short or crawling events").set_defaults(func=cmd_filter)
    sub.add_parser("split", help="train/validation/test split").set_defaults(func=cmd_split)

    p = sub.add_parser("calibrate", help="GA calibration of a rule-based model")
    p.add_argument("model", choices=RULE_MODELS)
    p.set_defaults(func=cmd_calibrate)

    sub.add_parser("train-rnn", help="behavioural cloning of the LSTM policy").set_defaults(
        func=cmd_train_rnn)
    sub.add_parser("train-ddpg", help="actor-critic training of the MLP policy").set_defaults(
        func=cmd_train_ddpg)

    for name, func, help_ in (("train-ef-ddqn", cmd_train_ef_ddqn, "train the model selector"),
                              ("train-ef-ppo", cmd_train_ef_ppo, "train the weight blender"),
                              ("eval", cmd_eval, "compare every candidate on a split"),
                              ("stats", cmd_stats, "ensemble selection and weight statistics"),
                              ("report", cmd_report, "metrics, trajectories and plots")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--roster", default=",".join(DEFAULT_ROSTER),
                       help="comma-separated low-level model names, in action order")
        if name in ("eval", "stats", "report"):
            p.add_argument("--split", choices=SPLITS, default="test")
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.preset, args.seed)
        args.func(args, cfg, Workdir(args.out))
    except EnsembleFollowerError as exc:
        print(f"error [{exc.category}]: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
