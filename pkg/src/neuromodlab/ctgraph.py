"""Configurable tree-graph (CT-graph) environment.

A deterministic, partially observable decision tree. An episode walks
``start -> wait -> decision -> wait -> ... -> decision -> wait -> end``;
every wait state shares one image and every decision state shares another,
so the agent cannot tell where it is from the current observation alone.
One end state is the goal; its image carries a bright square reward cue.

Actions are integers: ``0`` is the wait action, ``1..b`` select a branch at
a decision state. Anything else is a wrong action and leads to the crash
state, which terminates the episode.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path

import numpy as np

WAIT = 0

CUE_SIZE = 4
CUE_VALUE = 1.0


class ConfigError(ValueError):
    """Invalid environment configuration or argument."""


class EpisodeDoneError(RuntimeError):
    """Raised when stepping an episode that already terminated."""


class Phase(enum.IntEnum):
    START = 0
    WAIT = 1
    DECISION = 2
    END = 3
    CRASH = 4
    DONE = 5


# Row order of the observation table; shared with the compiled evaluator.
OBS_START = 0
OBS_WAIT = 1
OBS_DECISION = 2
OBS_END_GOAL = 3
OBS_END_NOGOAL = 4
OBS_CRASH = 5
NUM_OBS = 6

OBS_NAMES = ("start", "wait", "decision", "end_goal", "end_nogoal", "crash")


@dataclass(frozen=True)
class CtGraphConfig:
    branching_factor: int = 2
    depth: int = 2
    obs_side: int = 12
    goal_reward: float = 1.0
    crash_reward: float = 0.0
    step_reward: float = 0.0
    obs_seed: int = 0
    wait_delay: int = 1

    def __post_init__(self):
        if self.branching_factor < 2:
            raise ConfigError(f"branching_factor must be >= 2, got {self.branching_factor}")
        if self.depth < 1:
            raise ConfigError(f"depth must be >= 1, got {self.depth}")
        if self.obs_side < CUE_SIZE:
            raise ConfigError(f"obs_side must be >= {CUE_SIZE}, got {self.obs_side}")
        if self.wait_delay < 0:
            raise ConfigError(f"wait_delay must be >= 0, got {self.wait_delay}")

    @property
    def num_actions(self) -> int:
        return self.branching_factor + 1

    @property
    def episode_length(self) -> int:
        """Number of actions on every non-crashing path."""
        return 1 + self.depth * (self.wait_delay + 1) + self.wait_delay

    @property
    def obs_size(self) -> int:
        return self.obs_side * self.obs_side


@dataclass(frozen=True)
class EnvState:
    phase: Phase
    level: int
    path: tuple[int, ...]
    goal_index: int
    waits_left: int = 0

    @property
    def done(self) -> bool:
        return self.phase in (Phase.END, Phase.CRASH, Phase.DONE)


@dataclass(frozen=True)
class Observation:
    pixels: np.ndarray = field(repr=False)
    obs_id: int = -1

    def as_image(self, side: int) -> np.ndarray:
        return self.pixels.reshape(side, side)


@dataclass(frozen=True)
class StepResult:
    observation: Observation
    reward: float
    done: bool


def num_end_states(config: CtGraphConfig) -> int:
    return config.branching_factor ** config.depth


def path_index(path, branching_factor: int) -> int:
    """Base-b value of a choice path, first choice most significant."""
    index = 0
    for choice in path:
        index = index * branching_factor + choice
    return index


def index_path(index: int, config: CtGraphConfig) -> tuple[int, ...]:
    digits = []
    for _ in range(config.depth):
        index, digit = divmod(index, config.branching_factor)
        digits.append(digit)
    return tuple(reversed(digits))


def _smooth_pattern(rng: np.random.Generator, side: int) -> np.ndarray:
    img = rng.random((side, side))
    for _ in range(2):
        img = (img + np.roll(img, 1, 0) + np.roll(img, -1, 0)
               + np.roll(img, 1, 1) + np.roll(img, -1, 1)) / 5.0
    lo, hi = img.min(), img.max()
    return (img - lo) / (hi - lo)


@lru_cache(maxsize=64)
def _image_table(obs_seed: int, side: int) -> np.ndarray:
    rng = np.random.default_rng(obs_seed)
    start, wait, decision, end, crash = (_smooth_pattern(rng, side) for _ in range(5))
    end_goal = end.copy()
    end_goal[:CUE_SIZE, :CUE_SIZE] = CUE_VALUE
    table = np.stack([start, wait, decision, end_goal, end, crash]).reshape(NUM_OBS, side * side)
    table.setflags(write=False)
    return table


def observation_table(config: CtGraphConfig) -> np.ndarray:
    """All observation images as a read-only ``(NUM_OBS, obs_side**2)`` array."""
    return _image_table(config.obs_seed, config.obs_side)


def obs_id_for(phase: Phase, goal_found: bool = False) -> int:
    if phase == Phase.START:
        return OBS_START
    if phase == Phase.WAIT:
        return OBS_WAIT
    if phase == Phase.DECISION:
        return OBS_DECISION
    if phase == Phase.END:
        return OBS_END_GOAL if goal_found else OBS_END_NOGOAL
    if phase in (Phase.CRASH, Phase.DONE):
        return OBS_CRASH
    raise ConfigError(f"unknown phase {phase!r}")


def observation_for(phase: Phase, goal_found: bool, config: CtGraphConfig) -> Observation:
    obs_id = obs_id_for(phase, goal_found)
    return Observation(observation_table(config)[obs_id], obs_id)


def _observe(state: EnvState, config: CtGraphConfig) -> Observation:
    found = state.phase == Phase.END and path_index(state.path, config.branching_factor) == state.goal_index
    return observation_for(state.phase, found, config)


def reset(config: CtGraphConfig, goal_index: int) -> tuple[EnvState, Observation]:
    if not 0 <= goal_index < num_end_states(config):
        raise ConfigError(
            f"goal_index {goal_index} out of range for {num_end_states(config)} end states")
    state = EnvState(Phase.START, 0, (), goal_index)
    return state, _observe(state, config)


def _after_wait(state: EnvState, config: CtGraphConfig, waits_left: int) -> EnvState:
    # Where a correct wait action (or a finished decision) leads.
    if waits_left > 0:
        return replace(state, phase=Phase.WAIT, waits_left=waits_left)
    if state.level < config.depth:
        return replace(state, phase=Phase.DECISION, waits_left=0)
    return replace(state, phase=Phase.END, waits_left=0)


def step(state: EnvState, action: int, config: CtGraphConfig) -> tuple[EnvState, StepResult]:
    if state.done:
        raise EpisodeDoneError(f"episode already terminated in phase {state.phase.name}")

    if state.phase in (Phase.START, Phase.WAIT):
        if action != WAIT:
            return _crash(state, config)
        if state.phase == Phase.START:
            nxt = _after_wait(state, config, config.wait_delay)
        else:
            nxt = _after_wait(state, config, state.waits_left - 1)
    elif state.phase == Phase.DECISION:
        if not 1 <= action <= config.branching_factor:
            return _crash(state, config)
        moved = replace(state, level=state.level + 1, path=state.path + (action - 1,))
        nxt = _after_wait(moved, config, config.wait_delay)
    else:  # pragma: no cover - guarded by state.done
        raise EpisodeDoneError(f"cannot step from phase {state.phase.name}")

    obs = _observe(nxt, config)
    if nxt.phase == Phase.END:
        found = path_index(nxt.path, config.branching_factor) == nxt.goal_index
        reward = config.goal_reward if found else config.step_reward
        return nxt, StepResult(obs, reward, True)
    return nxt, StepResult(obs, config.step_reward, False)


def _crash(state: EnvState, config: CtGraphConfig) -> tuple[EnvState, StepResult]:
    nxt = replace(state, phase=Phase.CRASH, waits_left=0)
    return nxt, StepResult(_observe(nxt, config), config.crash_reward, True)


def oracle_actions(goal_index: int, config: CtGraphConfig) -> list[int]:
    """The only non-crashing action sequence that ends at ``goal_index``."""
    if not 0 <= goal_index < num_end_states(config):
        raise ConfigError(f"goal_index {goal_index} out of range")
    actions = [WAIT] * (1 + config.wait_delay)
    for choice in index_path(goal_index, config):
        actions.append(choice + 1)
        actions.extend([WAIT] * config.wait_delay)
    return actions


def run_actions(config: CtGraphConfig, goal_index: int, actions) -> tuple[EnvState, list[StepResult]]:
    """Replay a fixed action sequence; stops at the first terminal step."""
    state, _ = reset(config, goal_index)
    results = []
    for action in actions:
        state, res = step(state, action, config)
        results.append(res)
        if res.done:
            break
    return state, results


def enumerate_outcomes(config: CtGraphConfig, max_len: int | None = None):
    """Brute-force every action sequence up to ``max_len`` for every goal.

    Yields ``(actions, end_index_or_None, crashed)`` for each sequence that
    terminates exactly at its last action.  Used as a test oracle.
    """
    if max_len is None:
        max_len = config.episode_length
    for length in range(1, max_len + 1):
        for actions in itertools.product(range(config.num_actions), repeat=length):
            state, results = run_actions(config, 0, actions)
            if len(results) != length or not results[-1].done:
                continue
            if state.phase == Phase.CRASH:
                yield actions, None, True
            else:
                yield actions, path_index(state.path, config.branching_factor), False


def export_observations_csv(config: CtGraphConfig, directory) -> list[Path]:
    """Write each observation image as a ``obs_side x obs_side`` CSV matrix."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, pixels in zip(OBS_NAMES, observation_table(config)):
        path = directory / f"obs_{name}.csv"
        np.savetxt(path, pixels.reshape(config.obs_side, config.obs_side),
                   delimiter=",", fmt="%.17g")
        paths.append(path)
    return paths
