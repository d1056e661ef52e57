"""Metrics, the model comparison harness, ensemble statistics and report files."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .calibration import EventBatch
from .data import TimeSeriesEvent
from .errors import ArtifactError, ConfigError, DataError
from .kinematics import KinematicsConfig
from .simulation import HISTORY, Rollout

logger = logging.getLogger(__name__)

METRIC_COLUMNS = ("model", "rmspe_spacing_mean", "rmspe_spacing_std", "rmspe_speed_mean",
                  "rmspe_speed_std", "collision_rate")
PER_EVENT_COLUMNS = ("model", "event_id", "rmspe_spacing", "rmspe_speed", "collided", "n_steps")


def rmspe(sim, obs) -> float:
    """Root mean square percentage error: sqrt(sum((sim - obs)^2) / sum(obs^2))."""
    sim = np.asarray(sim, dtype=float)
    obs = np.asarray(obs, dtype=float)
    if sim.shape != obs.shape or sim.size == 0:
        raise DataError(f"rmspe needs equal, non-empty series (got {sim.shape} and {obs.shape})")
    denom = float(np.sum(obs ** 2))
    if denom == 0.0:
        raise DataError("rmspe is undefined when every observation is zero")
    return float(np.sqrt(np.sum((sim - obs) ** 2) / denom))


def collision_rate(collided) -> float:
    collided = np.asarray(list(collided), dtype=bool)
    if collided.size == 0:
        raise DataError("collision rate needs at least one event")
    return float(collided.mean())


@dataclass
class EventResult:
    event_id: str
    rmspe_spacing: float
    rmspe_speed: float
    collided: bool
    n_steps: int
    spacing_sim: np.ndarray
    speed_sim: np.ndarray


@dataclass
class ModelSummary:
    name: str
    rmspe_spacing_mean: float
    rmspe_spacing_std: float
    rmspe_speed_mean: float
    rmspe_speed_std: float
    collision_rate: float

    def row(self) -> list:
        return [self.name, self.rmspe_spacing_mean, self.rmspe_spacing_std, self.rmspe_speed_mean,
                self.rmspe_speed_std, self.collision_rate]


def summarize(name: str, results: list[EventResult]) -> ModelSummary:
    """Mean and population std of the per-event RMSPEs plus the collision rate."""
    s = np.array([r.rmspe_spacing for r in results])
    v = np.array([r.rmspe_speed for r in results])
    return ModelSummary(name, float(s.mean()), float(s.std()), float(v.mean()), float(v.std()),
                        collision_rate(r.collided for r in results))


@dataclass
class EvaluationReport:
    events: list[TimeSeriesEvent]
    results: dict[str, list[EventResult]]
    metadata: dict = field(default_factory=dict)

    @property
    def model_names(self) -> list[str]:
        return list(self.results)

    @property
    def summaries(self) -> list[ModelSummary]:
        return [summarize(name, rows) for name, rows in self.results.items()]

    def summary(self, name: str) -> ModelSummary:
        return summarize(name, self.results[name])


def _series_rmspe(sim_row, obs_row, mask_row) -> float:
    if not mask_row.any():
        return 0.0
    return rmspe(sim_row[mask_row], obs_row[mask_row])


def evaluate_rollout(batch: EventBatch, sim: Rollout) -> list[EventResult]:
    """Per-event metrics over the samples each lane reached before stopping or crashing."""
    mask = sim.valid_mask()
    out = []
    for i, ev in enumerate(batch.events):
        n = len(ev)
        out.append(EventResult(
            event_id=ev.event_id,
            rmspe_spacing=_series_rmspe(sim.spacing[i], batch.spacing[i], mask[i]),
            rmspe_speed=_series_rmspe(sim.speed[i], batch.fv_speed[i], mask[i]),
            collided=bool(sim.collided[i]),
            n_steps=int(sim.n_steps[i]),
            spacing_sim=sim.spacing[i, :n].copy(),
            speed_sim=sim.speed[i, :n].copy(),
        ))
    return out


def evaluate_model(model, events, cfg: KinematicsConfig = KinematicsConfig()) -> list[EventResult]:
    batch = events if isinstance(events, EventBatch) else EventBatch(events)
    return evaluate_rollout(batch, batch.simulate(model.propose, cfg, history=model.history))


def compare_models(models, events, cfg: KinematicsConfig = KinematicsConfig(),
                   metadata: dict | None = None) -> EvaluationReport:
    """Simulate every candidate on every event; candidates keep their given order."""
    models = list(models)
    if not models:
        raise ConfigError("compare_models needs at least one candidate")
    names = [m.name for m in models]
    if len(set(names)) != len(names):
        raise ConfigError(f"candidate names must be unique, got {names}")
    batch = EventBatch(events)
    results = {}
    for model in models:
        results[model.name] = evaluate_model(model, batch, cfg)
        logger.info("evaluated %s on %d events", model.name, len(batch))
    return EvaluationReport(list(batch.events), results, dict(metadata or {}))


# --- ensemble statistics -------------------------------------------------------


@dataclass
class DecisionTrace:
    """Per-step high-level decisions of an ensemble rollout, flattened over active steps."""

    decisions: np.ndarray
    spacing: np.ndarray
    lv_speed: np.ndarray
    rel_speed: np.ndarray
    lv_speed_change: np.ndarray
    rollout: Rollout


def lv_speed_change(lv_speed: np.ndarray, t, lag: int = HISTORY) -> np.ndarray:
    """Percent change of leader speed over the preceding ``lag`` samples (clamped at the start).

    ``lv_speed`` is one series, or (E, T) with ``t`` a pair ``(event_index, step)``.
    """
    if lv_speed.ndim == 2:
        rows, t = t
        now, before = lv_speed[rows, t], lv_speed[rows, np.maximum(t - lag, 0)]
    else:
        now, before = lv_speed[t], lv_speed[np.maximum(np.asarray(t) - lag, 0)]
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(before > 0, 100.0 * (now - before) / before, 0.0)


def trace_decisions(policy, events, cfg: KinematicsConfig = KinematicsConfig()) -> DecisionTrace:
    batch = EventBatch(events)
    decisions, states = [], []

    def propose(windows):
        acc, decision, _ = policy.decide(windows)
        decisions.append(decision)
        states.append(windows[:, -1, :].copy())
        return acc

    sim = batch.simulate(propose, cfg, history=policy.history)
    n_t = len(decisions)
    active = sim.stepped[:, :n_t]
    dec = np.stack(decisions, axis=1)[active]
    st = np.stack(states, axis=1)[active]
    change = lv_speed_change(batch.lv_speed, np.nonzero(active))
    return DecisionTrace(dec, st[:, 0], st[:, 1] + st[:, 2], st[:, 2], change, sim)


def _mean_std(x):
    return (float(np.mean(x)), float(np.std(x))) if len(x) else (float("nan"), float("nan"))


@dataclass
class SelectionStats:
    model_names: list[str]
    ratio: np.ndarray
    spacing: list[tuple[float, float]]
    lv_speed: list[tuple[float, float]]
    rel_speed: list[tuple[float, float]]
    lv_speed_change: list[tuple[float, float]]

    def rows(self) -> list[list]:
        out = []
        for i, name in enumerate(self.model_names):
            out.append([name, float(self.ratio[i]), *self.spacing[i], *self.lv_speed[i],
                        *self.rel_speed[i], *self.lv_speed_change[i]])
        return out

    header = ("model", "ratio_pct", "spacing_mean", "spacing_std", "lv_speed_mean", "lv_speed_std",
              "rel_speed_mean", "rel_speed_std", "lv_speed_change_pct_mean",
              "lv_speed_change_pct_std")


def selection_stats(policy, events, cfg: KinematicsConfig = KinematicsConfig()) -> SelectionStats:
    """How often each roster model is chosen, and the conditions at those instants."""
    if policy.mode != "discrete":
        raise ConfigError("selection_stats needs a discrete policy")
    tr = trace_decisions(policy, events, cfg)
    k = policy.k
    counts = np.bincount(tr.decisions, minlength=k)
    ratio = 100.0 * counts / max(counts.sum(), 1)
    per = lambda x: [_mean_std(x[tr.decisions == i]) for i in range(k)]  # noqa: E731
    return SelectionStats(policy.model_names, ratio, per(tr.spacing), per(tr.lv_speed),
                          per(tr.rel_speed), per(tr.lv_speed_change))


@dataclass
class WeightStats:
    model_names: list[str]
    mean: np.ndarray
    std: np.ndarray
    primary: np.ndarray
    dominating: np.ndarray

    header = ("model", "weight_mean", "weight_std", "primary_pct", "dominating_pct")

    def rows(self) -> list[list]:
        return [[name, float(self.mean[i]), float(self.std[i]), float(self.primary[i]),
                 float(self.dominating[i])] for i, name in enumerate(self.model_names)]


def weight_stats_from(weights: np.ndarray, names) -> WeightStats:
    weights = np.asarray(weights, dtype=float)
    k = weights.shape[1]
    primary = 100.0 * np.bincount(np.argmax(weights, axis=1), minlength=k) / len(weights)
    dominating = 100.0 * (weights > 0.5).mean(axis=0)
    return WeightStats(list(names), weights.mean(axis=0), weights.std(axis=0), primary, dominating)


def weight_stats(policy, events, cfg: KinematicsConfig = KinematicsConfig()) -> WeightStats:
    if policy.mode != "convex":
        raise ConfigError("weight_stats needs a convex policy")
    tr = trace_decisions(policy, events, cfg)
    return weight_stats_from(tr.decisions, policy.model_names)


# --- files ---------------------------------------------------------------------


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_rows(path: Path, header, rows) -> Path:
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])
    return path


def write_metrics_csv(report: EvaluationReport, path) -> Path:
    return write_rows(Path(path), METRIC_COLUMNS, [s.row() for s in report.summaries])


def write_per_event_csv(report: EvaluationReport, path) -> Path:
    rows = [[name, r.event_id, r.rmspe_spacing, r.rmspe_speed, r.collided, r.n_steps]
            for name, results in report.results.items() for r in results]
    return write_rows(Path(path), PER_EVENT_COLUMNS, rows)


def write_trajectory_csv(report: EvaluationReport, index: int, path) -> Path:
    ev = report.events[index]
    header = ["t", "spacing_obs", "speed_obs", "lv_speed"]
    cols = [np.arange(len(ev)) * ev.dt, ev.spacing, ev.fv_speed, ev.lv_speed]
    for name, results in report.results.items():
        header += [f"spacing_{name}", f"speed_{name}"]
        cols += [results[index].spacing_sim, results[index].speed_sim]
    rows = [["" if isinstance(v, float) and np.isnan(v) else v for v in map(float, row)]
            for row in zip(*cols)]
    return write_rows(Path(path), header, rows)


def read_metrics_csv(path) -> dict[str, dict[str, float]]:
    with Path(path).open(encoding="utf-8", newline="") as fh:
        return {row["model"]: {k: float(v) for k, v in row.items() if k != "model"}
                for row in csv.DictReader(fh)}


# --- plots ---------------------------------------------------------------------


def _pyplot():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    matplotlib.rcParams["svg.hashsalt"] = "ensemble-follower"
    matplotlib.rcParams["svg.fonttype"] = "none"
    return plt


def plot_overlay(report: EvaluationReport, index: int):
    """Observed vs simulated spacing and speed for one event; x axis spans the event duration."""
    plt = _pyplot()
    ev = report.events[index]
    t = np.arange(len(ev)) * ev.dt
    fig, (ax_s, ax_v) = plt.subplots(2, 1, sharex=True, figsize=(8, 6))
    ax_s.plot(t, ev.spacing, color="black", lw=2, label="observed")
    ax_v.plot(t, ev.fv_speed, color="black", lw=2, label="observed")
    for name, results in report.results.items():
        ax_s.plot(t, results[index].spacing_sim, lw=1, label=name)
        ax_v.plot(t, results[index].speed_sim, lw=1, label=name)
    ax_s.set_ylabel("spacing [m]")
    ax_v.set_ylabel("follower speed [m/s]")
    ax_v.set_xlabel("time [s]")
    ax_v.set_xlim(0.0, ev.duration)
    ax_s.set_title(f"event {ev.event_id}")
    ax_s.legend(fontsize=7, ncol=2)
    fig.tight_layout()
    return fig


def plot_rmspe_bars(report: EvaluationReport):
    plt = _pyplot()
    summaries = report.summaries
    names = [s.name for s in summaries]
    x = np.arange(len(names))
    fig, ax = plt.subplots(figsize=(max(6, len(names) * 1.1), 4))
    ax.bar(x - 0.2, [s.rmspe_spacing_mean for s in summaries], 0.4,
           yerr=[s.rmspe_spacing_std for s in summaries], label="spacing", capsize=3)
    ax.bar(x + 0.2, [s.rmspe_speed_mean for s in summaries], 0.4,
           yerr=[s.rmspe_speed_std for s in summaries], label="speed", capsize=3)
    ax.set_xticks(x)
    ax.set_xticklabels(names, rotation=30, ha="right")
    ax.set_ylabel("RMSPE")
    ax.legend()
    fig.tight_layout()
    return fig


def plot_distribution(names, values, ylabel: str, title: str):
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(max(5, len(names) * 1.1), 3.5))
    ax.bar(np.arange(len(names)), values)
    ax.set_xticks(np.arange(len(names)))
    ax.set_xticklabels(names, rotation=30, ha="right")
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    fig.tight_layout()
    return fig


def _save_svg(fig, path: Path) -> Path:
    plt = _pyplot()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def emit_report(report: EvaluationReport, out_dir, selection: SelectionStats | None = None,
                weights: WeightStats | None = None, max_overlays: int = 4) -> list[Path]:
    """Write metrics, per-event and trajectory CSVs, plus SVG plots. Returns the written paths."""
    if not report.results:
        raise ConfigError("cannot emit a report without models")
    out = Path(out_dir)
    try:
        (out / "trajectories").mkdir(parents=True, exist_ok=True)
        (out / "plots").mkdir(exist_ok=True)
    except OSError as exc:
        raise ArtifactError(f"cannot create report directory {out}: {exc}") from exc
    written = [write_metrics_csv(report, out / "metrics.csv"),
               write_per_event_csv(report, out / "per_event.csv")]
    for i, ev in enumerate(report.events):
        written.append(write_trajectory_csv(report, i, out / "trajectories" / f"{ev.event_id}.csv"))
    for i in range(min(max_overlays, len(report.events))):
        written.append(_save_svg(plot_overlay(report, i),
                                 out / "plots" / f"overlay_{report.events[i].event_id}.svg"))
    written.append(_save_svg(plot_rmspe_bars(report), out / "plots" / "rmspe.svg"))
    if selection is not None:
        written.append(write_rows(out / "selection_stats.csv", SelectionStats.header,
                                   selection.rows()))
        written.append(_save_svg(plot_distribution(selection.model_names, selection.ratio,
                                                   "selected [%]", "EF-DDQN selections"),
                                 out / "plots" / "selection.svg"))
    if weights is not None:
        written.append(write_rows(out / "weight_stats.csv", WeightStats.header, weights.rows()))
        written.append(_save_svg(plot_distribution(weights.model_names, weights.mean,
                                                   "mean weight", "EF-PPO weights"),
                                 out / "plots" / "weights.svg"))
    meta = out / "report.json"
    meta.write_text(json.dumps({"models": report.model_names, "n_events": len(report.events),
                                "metadata": report.metadata}, indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")
    written.append(meta)
    return written
