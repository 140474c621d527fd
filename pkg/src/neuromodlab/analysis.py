"""Activation introspection for evolved controllers.

Two views of a recorded dataset:

* location statistics: per neuron and per within-episode timestep, the
  distribution of ``|a_std|`` pooled over every episode that reached that
  timestep;
* reward-cue statistics: per neuron, ``a_std`` at the end-state step split
  by whether the goal was found, with a separation score.

Timesteps are 1-based. Step ``k`` holds the activations computed from the
k-th observation of the episode; for episodes that reach an end state the
end-state presentation is the step after the last action.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .ctgraph import CtGraphConfig
from .harness import EpisodeTrace, TrialConfig, run_evaluation
from .neuromod import Genome

QUANTILES = (0.25, 0.5, 0.75)
TINY = 1e-12
LOCATION_COLUMNS = ["neuron", "timestep", "count", "mean_abs", "std_abs", "q25", "median", "q75"]
CUE_COLUMNS = ["neuron", "goal_found", "count", "mean", "std", "q25", "median", "q75", "separation"]
LONG_COLUMNS = ["family", "neuron", "key", "statistic", "value"]


class AnalysisError(ValueError):
    pass


@dataclass
class ActivationDataset:
    neuron_ids: tuple[int, ...]
    traces: list[EpisodeTrace]

    def __len__(self) -> int:
        return len(self.traces)


def episode_activations(trace: EpisodeTrace) -> np.ndarray:
    """``(steps, neurons)`` array of ``a_std``, end-state step included."""
    recs = list(trace.steps) + ([trace.terminal] if trace.terminal is not None else [])
    if recs and recs[0].a_std is None:
        raise AnalysisError("trace was recorded without activations")
    return np.array([r.a_std for r in recs]).reshape(len(recs), -1)


def collect_dataset(genome: Genome, trial: TrialConfig, env: CtGraphConfig, features,
                    n_trials: int, seed) -> ActivationDataset:
    """Run ``n_trials`` trials of ``genome`` and keep every activation trace."""
    ids = tuple(n.id for n in genome.neurons)
    if n_trials <= 0:
        return ActivationDataset(ids, [])
    cfg = replace(trial, record_activations=True, trials_per_eval=n_trials)
    results = run_evaluation(cfg, env, genome, features, seed)
    return ActivationDataset(ids, [t for r in results for t in r.episode_traces])


def _describe(values: np.ndarray) -> tuple:
    if values.size == 0:
        return (0,) + (np.nan,) * 5
    q = np.quantile(values, QUANTILES)
    return (values.size, float(values.mean()), float(values.std()), *map(float, q))


@dataclass
class LocationStats:
    """Arrays are ``(neurons, timesteps)``; column ``k`` is timestep ``k + 1``."""

    neuron_ids: tuple[int, ...]
    count: np.ndarray
    mean_abs: np.ndarray
    std_abs: np.ndarray
    q25: np.ndarray
    median: np.ndarray
    q75: np.ndarray

    @property
    def timesteps(self) -> np.ndarray:
        return np.arange(1, self.count.shape[0] + 1)

    def row(self, neuron_id: int) -> int:
        return self.neuron_ids.index(neuron_id)


def location_stats(dataset: ActivationDataset) -> LocationStats:
    """Distribution of ``|a_std|`` per neuron and timestep, pooled over episodes."""
    n = len(dataset.neuron_ids)
    acts = [np.abs(episode_activations(t)) for t in dataset.traces]
    horizon = max((a.shape[0] for a in acts), default=0)
    count = np.zeros(horizon, dtype=np.int64)
    out = {k: np.full((n, horizon), np.nan) for k in ("mean", "std", "q25", "median", "q75")}
    for step in range(horizon):
        rows = [a[step] for a in acts if a.shape[0] > step]
        count[step] = len(rows)
        block = np.array(rows)
        for i in range(n):
            _, mean, std, q25, med, q75 = _describe(block[:, i])
            out["mean"][i, step], out["std"][i, step] = mean, std
            out["q25"][i, step], out["median"][i, step], out["q75"][i, step] = q25, med, q75
    return LocationStats(dataset.neuron_ids, count, out["mean"], out["std"], out["q25"],
                         out["median"], out["q75"])


@dataclass
class CueStats:
    """Per neuron, statistics of end-state ``a_std``; index 0 = goal not found, 1 = found."""

    neuron_ids: tuple[int, ...]
    count: np.ndarray  # (2,)
    mean: np.ndarray  # (neurons, 2)
    std: np.ndarray
    q25: np.ndarray
    median: np.ndarray
    q75: np.ndarray
    separation: np.ndarray  # (neurons,)

    def row(self, neuron_id: int) -> int:
        return self.neuron_ids.index(neuron_id)


def separation_score(found: np.ndarray, not_found: np.ndarray) -> float:
    """``|mean_found - mean_not_found| / pooled std``.

    Differences and spreads below ``TINY`` count as exactly zero, so a
    constant neuron scores 0 and two distinct constant classes score ``inf``.
    """
    n1, n0 = found.size, not_found.size
    diff = abs(found.mean() - not_found.mean())
    dof = n1 + n0 - 2
    if dof > 0:
        pooled = np.sqrt(((n1 - 1) * found.var(ddof=1 if n1 > 1 else 0)
                          + (n0 - 1) * not_found.var(ddof=1 if n0 > 1 else 0)) / dof)
    else:
        pooled = 0.0
    if diff <= TINY:
        return 0.0
    if pooled <= TINY:
        return float("inf")
    return float(diff / pooled)


def reward_cue_stats(dataset: ActivationDataset) -> CueStats:
    """End-state activations split by goal found / not found.

    Episodes that crashed or were cut short never show an end-state image
    and are left out.
    """
    found, missed = [], []
    for t in dataset.traces:
        if t.terminal is None:
            continue
        if t.terminal.a_std is None:
            raise AnalysisError("trace was recorded without activations")
        (found if t.goal_found else missed).append(np.asarray(t.terminal.a_std))
    if not found:
        raise AnalysisError("no episode found the goal (class goal_found=True is empty)")
    if not missed:
        raise AnalysisError("every episode found the goal (class goal_found=False is empty)")
    n = len(dataset.neuron_ids)
    classes = [np.array(missed).reshape(-1, n), np.array(found).reshape(-1, n)]
    shape = (n, 2)
    mean, std, q25, med, q75 = (np.empty(shape) for _ in range(5))
    sep = np.empty(n)
    for i in range(n):
        for c, block in enumerate(classes):
            _, mean[i, c], std[i, c], q25[i, c], med[i, c], q75[i, c] = _describe(block[:, i])
        sep[i] = separation_score(classes[1][:, i], classes[0][:, i])
    count = np.array([classes[0].shape[0], classes[1].shape[0]])
    return CueStats(dataset.neuron_ids, count, mean, std, q25, med, q75, sep)


# -- report files -----------------------------------------------------------------

def _fmt(x) -> str:
    return repr(float(x))


def export_report(out_dir, location: Optional[LocationStats] = None,
                  cue: Optional[CueStats] = None) -> dict[str, Path]:
    """Write the CSV report tables into ``out_dir`` and return their paths.

    ``location_stats.csv`` and ``reward_cue_stats.csv`` are tidy tables,
    ``location_mean_abs.csv`` is wide (one column per neuron) and
    ``stats_long.csv`` repeats everything as (family, neuron, key, statistic, value).
    A missing statistics family gives header-only files.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {name: out / f"{name}.csv" for name in
             ("location_stats", "location_mean_abs", "reward_cue_stats", "stats_long")}
    long_rows = []

    with open(paths["location_stats"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(LOCATION_COLUMNS)
        if location is not None:
            for i, nid in enumerate(location.neuron_ids):
                for k, step in enumerate(location.timesteps):
                    vals = [location.mean_abs[i, k], location.std_abs[i, k], location.q25[i, k],
                            location.median[i, k], location.q75[i, k]]
                    w.writerow([nid, step, location.count[k], *map(_fmt, vals)])
                    long_rows += [["location", nid, step, name, _fmt(v)]
                                  for name, v in zip(LOCATION_COLUMNS[3:], vals)]

    with open(paths["location_mean_abs"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        ids = location.neuron_ids if location is not None else ()
        w.writerow(["timestep", "count"] + [f"n{nid}" for nid in ids])
        if location is not None:
            for k, step in enumerate(location.timesteps):
                w.writerow([step, location.count[k]] + [_fmt(v) for v in location.mean_abs[:, k]])

    with open(paths["reward_cue_stats"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(CUE_COLUMNS)
        if cue is not None:
            for i, nid in enumerate(cue.neuron_ids):
                for c in (1, 0):
                    vals = [cue.mean[i, c], cue.std[i, c], cue.q25[i, c], cue.median[i, c],
                            cue.q75[i, c]]
                    w.writerow([nid, c, cue.count[c], *map(_fmt, vals), _fmt(cue.separation[i])])
                    key = "found" if c else "not_found"
                    long_rows += [["reward_cue", nid, key, name, _fmt(v)]
                                  for name, v in zip(CUE_COLUMNS[3:8], vals)]
                long_rows.append(["reward_cue", nid, "both", "separation", _fmt(cue.separation[i])])

    with open(paths["stats_long"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(LONG_COLUMNS)
        w.writerows(long_rows)
    return paths


def read_location_csv(path) -> LocationStats:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    ids = tuple(dict.fromkeys(int(r["neuron"]) for r in rows))
    horizon = max((int(r["timestep"]) for r in rows), default=0)
    arrays = {k: np.full((len(ids), horizon), np.nan) for k in LOCATION_COLUMNS[3:]}
    count = np.zeros(horizon, dtype=np.int64)
    for r in rows:
        i, k = ids.index(int(r["neuron"])), int(r["timestep"]) - 1
        count[k] = int(r["count"])
        for name in arrays:
            arrays[name][i, k] = float(r[name])
    return LocationStats(ids, count, arrays["mean_abs"], arrays["std_abs"], arrays["q25"],
                         arrays["median"], arrays["q75"])


def read_cue_csv(path) -> CueStats:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    ids = tuple(dict.fromkeys(int(r["neuron"]) for r in rows))
    arrays = {k: np.full((len(ids), 2), np.nan) for k in CUE_COLUMNS[3:8]}
    sep = np.zeros(len(ids))
    count = np.zeros(2, dtype=np.int64)
    for r in rows:
        i, c = ids.index(int(r["neuron"])), int(r["goal_found"])
        count[c] = int(r["count"])
        sep[i] = float(r["separation"])
        for name in arrays:
            arrays[name][i, c] = float(r[name])
    return CueStats(ids, count, arrays["mean"], arrays["std"], arrays["q25"], arrays["median"],
                    arrays["q75"], sep)


def summarize(location: LocationStats, cue: Optional[CueStats] = None,
              top: int = 3) -> list[str]:
    """Short human-readable notes: peak timestep per neuron and the strongest cue neurons."""
    lines = []
    for i, nid in enumerate(location.neuron_ids):
        if location.count.size == 0 or np.all(np.isnan(location.mean_abs[i])):
            continue
        k = int(np.nanargmax(location.mean_abs[i]))
        lines.append(f"neuron {nid}: peak |a| {location.mean_abs[i, k]:.3f} at timestep {k + 1}")
    if cue is not None:
        order = np.argsort(-cue.separation, kind="stable")[:top]
        for i in order:
            lines.append(f"neuron {cue.neuron_ids[i]}: cue separation {cue.separation[i]:.3f}")
    return lines

