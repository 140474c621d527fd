"""Trials, episodes and task switching.

A trial is a fixed number of episodes. The goal (task) is drawn at trial
start and replaced by a different goal at stochastically drawn change
points. The controller's plastic weights persist across all episodes of a
trial and are reset from the genome only when a new trial begins;
activations are cleared at the start of every episode.

The scalar reward never reaches the controller. When an episode ends in an
end state the controller is shown the end-state image ``end_presentations``
more times (propagate + plasticity, no action), which is the only way it can
see the reward cue. One presentation is not enough for a modulatory neuron's
response to reach its targets, hence the default of two.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import ctgraph
from .ctgraph import CtGraphConfig, Phase
from .neuromod import Genome, NetworkState, discretize_action, hebbian_update, init_state, propagate


class ScheduleError(ValueError):
    pass


@dataclass(frozen=True)
class TrialConfig:
    episodes_per_trial: int = 100
    num_tasks: int = 2
    change_window: tuple[int, int] = (35, 65)
    trials_per_eval: int = 4
    max_steps_per_episode: Optional[int] = None
    record_activations: bool = False
    end_presentations: int = 2

    def __post_init__(self):
        object.__setattr__(self, "change_window", tuple(self.change_window))
        lo, hi = self.change_window
        if self.num_tasks < 1:
            raise ScheduleError("num_tasks must be >= 1")
        if self.episodes_per_trial < 1 or self.trials_per_eval < 1:
            raise ScheduleError("episodes_per_trial and trials_per_eval must be >= 1")
        if self.num_tasks == 2 and not 1 <= lo <= hi < self.episodes_per_trial:
            raise ScheduleError(
                f"change window {self.change_window} must satisfy 1 <= lo <= hi < {self.episodes_per_trial}")
        if self.end_presentations < 1:
            raise ScheduleError("end_presentations must be >= 1")
        if self.num_tasks > self.episodes_per_trial:
            raise ScheduleError("more tasks than episodes in a trial")

    def max_steps(self, env: CtGraphConfig) -> int:
        if self.max_steps_per_episode is not None:
            return self.max_steps_per_episode
        return env.episode_length + 2


@dataclass
class StepRecord:
    phase: Phase
    obs_id: int
    action: int  # -1 for the action-free end-state presentation
    reward: float
    output: float
    a_std: Optional[np.ndarray] = None
    a_mod: Optional[np.ndarray] = None


@dataclass
class EpisodeTrace:
    goal: int
    steps: list[StepRecord] = field(default_factory=list)
    terminal: Optional[StepRecord] = None
    total_reward: float = 0.0
    goal_found: bool = False
    reached_end: bool = False
    truncated: bool = False

    @property
    def length(self) -> int:
        return len(self.steps)

    @property
    def crashed(self) -> bool:
        return not self.reached_end and not self.truncated


@dataclass
class TrialResult:
    episode_traces: list[EpisodeTrace]
    change_points: list[int]
    goals: list[int]
    trial_reward: float

    @property
    def episode_rewards(self) -> np.ndarray:
        return np.array([t.total_reward for t in self.episode_traces])

    def episode_goals(self) -> list[int]:
        return [t.goal for t in self.episode_traces]


def schedule_tasks(config: TrialConfig, num_goals: int, rng) -> tuple[list[int], list[int]]:
    """Draw the goal sequence and the episodes at which each new goal starts.

    Two tasks: the change point is uniform over the (inclusive) change
    window. More tasks: the trial is cut into equal segments and every
    boundary is jittered by up to 15% of a segment.
    """
    rng = np.random.default_rng(rng)
    if config.num_tasks > 1 and num_goals < 2:
        raise ScheduleError("task changes need at least two goals")
    goals = [int(rng.integers(num_goals))]
    for _ in range(config.num_tasks - 1):
        nxt = int(rng.integers(num_goals - 1))
        goals.append(nxt + (nxt >= goals[-1]))

    n = config.episodes_per_trial
    if config.num_tasks == 1:
        changes = []
    elif config.num_tasks == 2:
        lo, hi = config.change_window
        changes = [int(rng.integers(lo, hi + 1))]
    else:
        seg = n / config.num_tasks
        jitter = int(np.floor(0.15 * seg))
        if seg - 2 * jitter < 1:
            raise ScheduleError("trial too short for the requested number of tasks")
        changes = [int(round(k * seg)) + int(rng.integers(-jitter, jitter + 1))
                   for k in range(1, config.num_tasks)]
    return goals, changes


def episode_goals(goals: Sequence[int], changes: Sequence[int], episodes: int) -> np.ndarray:
    out = np.empty(episodes, dtype=np.int64)
    bounds = [0, *changes, episodes]
    for goal, start, stop in zip(goals, bounds[:-1], bounds[1:]):
        out[start:stop] = goal
    return out


def trial_schedules(config: TrialConfig, env: CtGraphConfig, seed) -> tuple[list, np.ndarray]:
    """Schedules for every trial of one evaluation, plus the ``(trials, episodes)`` goal matrix."""
    rng = np.random.default_rng(seed)
    schedules = [schedule_tasks(config, ctgraph.num_end_states(env), rng)
                 for _ in range(config.trials_per_eval)]
    matrix = np.stack([episode_goals(g, c, config.episodes_per_trial) for g, c in schedules])
    return schedules, matrix


class NetworkAgent:
    """Adapter that drives a genome's network through the harness."""

    def __init__(self, genome: Genome):
        self.genome = genome
        self.state: NetworkState = init_state(genome)

    def begin_trial(self) -> None:
        self.state = init_state(self.genome)

    def begin_episode(self, goal: int) -> None:
        self.state.reset_activations()

    def act(self, inputs) -> tuple[int, float]:
        out = propagate(self.state, inputs)
        hebbian_update(self.state, inputs)
        return discretize_action(out), out

    def observe_terminal(self, inputs) -> float:
        out = propagate(self.state, inputs)
        hebbian_update(self.state, inputs)
        return out

    def activations(self) -> tuple[np.ndarray, np.ndarray]:
        return self.state.a_std.copy(), self.state.a_mod.copy()


class OracleAgent:
    """Test double with perfect task knowledge: replays the goal's action sequence."""

    def __init__(self, env: CtGraphConfig):
        self.env = env
        self._plan: list[int] = []

    def begin_trial(self) -> None:
        pass

    def begin_episode(self, goal: int) -> None:
        self._plan = list(reversed(ctgraph.oracle_actions(goal, self.env)))

    def act(self, inputs) -> tuple[int, float]:
        return self._plan.pop(), 0.0

    def observe_terminal(self, inputs) -> float:
        return 0.0

    def activations(self):
        return None, None


def as_agent(genome_or_agent):
    return NetworkAgent(genome_or_agent) if isinstance(genome_or_agent, Genome) else genome_or_agent


def run_episode(env: CtGraphConfig, goal: int, agent, features, max_steps: int,
                record: bool = False, end_presentations: int = 2) -> EpisodeTrace:
    """Run one episode. ``features`` maps observation pixels to controller inputs."""
    agent.begin_episode(goal)
    state, obs = ctgraph.reset(env, goal)
    trace = EpisodeTrace(goal)
    for _ in range(max_steps):
        phase = state.phase
        inputs = features(obs.pixels)
        action, out = agent.act(inputs)
        state, res = ctgraph.step(state, action, env)
        rec = StepRecord(phase, obs.obs_id, action, res.reward, out)
        if record:
            rec.a_std, rec.a_mod = agent.activations()
        trace.steps.append(rec)
        trace.total_reward += res.reward
        obs = res.observation
        if res.done:
            if state.phase == Phase.END:
                trace.reached_end = True
                trace.goal_found = obs.obs_id == ctgraph.OBS_END_GOAL
                inputs = features(obs.pixels)
                for _ in range(end_presentations):
                    out = agent.observe_terminal(inputs)
                trace.terminal = StepRecord(Phase.END, obs.obs_id, -1, 0.0, out)
                if record:
                    trace.terminal.a_std, trace.terminal.a_mod = agent.activations()
            return trace
    trace.truncated = True
    return trace


def run_trial(config: TrialConfig, env: CtGraphConfig, agent, features, rng=None,
              schedule=None) -> TrialResult:
    """Run a full trial. Plastic weights persist across its episodes."""
    agent = as_agent(agent)
    if schedule is None:
        schedule = schedule_tasks(config, ctgraph.num_end_states(env), rng)
    goals, changes = schedule
    per_episode = episode_goals(goals, changes, config.episodes_per_trial)
    agent.begin_trial()
    max_steps = config.max_steps(env)
    traces = [run_episode(env, int(g), agent, features, max_steps, config.record_activations,
                          config.end_presentations)
              for g in per_episode]
    return TrialResult(traces, list(changes), list(goals), float(sum(t.total_reward for t in traces)))


def run_evaluation(config: TrialConfig, env: CtGraphConfig, agent, features, seed) -> list[TrialResult]:
    """All trials of one evaluation, with schedules drawn from ``seed``."""
    schedules, _ = trial_schedules(config, env, seed)
    agent = as_agent(agent)
    return [run_trial(config, env, agent, features, schedule=s) for s in schedules]


STEP_COLUMNS = ["trial", "episode", "step", "goal", "phase", "obs", "action", "reward", "output"]
EPISODE_COLUMNS = ["trial", "episode", "goal", "reward", "length", "goal_found", "crashed"]


def export_traces(results: Sequence[TrialResult], step_path, episode_path) -> None:
    """One row per step, and one row per episode."""
    with open(step_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(STEP_COLUMNS)
        for ti, res in enumerate(results):
            for ei, tr in enumerate(res.episode_traces):
                rows = list(tr.steps) + ([tr.terminal] if tr.terminal is not None else [])
                for si, rec in enumerate(rows, start=1):
                    w.writerow([ti, ei, si, tr.goal, rec.phase.name.lower(),
                                ctgraph.OBS_NAMES[rec.obs_id], rec.action, repr(rec.reward),
                                repr(rec.output)])
    export_episode_summary(results, episode_path)


def export_episode_summary(results: Sequence[TrialResult], path) -> None:
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(EPISODE_COLUMNS)
        for ti, res in enumerate(results):
            for ei, tr in enumerate(res.episode_traces):
                w.writerow([ti, ei, tr.goal, repr(tr.total_reward), tr.length,
                            int(tr.goal_found), int(tr.crashed)])
