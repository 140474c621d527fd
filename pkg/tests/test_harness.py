import csv

import numpy as np
import pytest
from scipy import stats

from neuromodlab import ctgraph, evolve, harness
from neuromodlab.harness import OracleAgent, ScheduleError, TrialConfig
from neuromodlab.neuromod import Connection, Genome, Neuron, NeuronKind, PlasticityRule


def constant_wait_genome():
    return Genome((Neuron(16),), tuple(Connection(i, 16, -1.0) for i in range(16)),
                  PlasticityRule(), 16).validate()


def plastic_genome(seed=0):
    return evolve.initial_genome(np.random.default_rng(seed), weight_bound=3.0)


@pytest.mark.parametrize("kwargs", [dict(change_window=(0, 10)), dict(change_window=(50, 100)),
                                    dict(change_window=(60, 40)), dict(num_tasks=0),
                                    dict(episodes_per_trial=3, num_tasks=4), dict(end_presentations=0)])
def test_trial_config_invariants(kwargs):
    with pytest.raises(ScheduleError):
        TrialConfig(**kwargs)


def test_default_max_steps(env):
    assert TrialConfig().max_steps(env) == 2 * env.depth + 4


def test_single_task_has_no_changes():
    goals, changes = harness.schedule_tasks(TrialConfig(num_tasks=1), 4, 0)
    assert changes == [] and len(goals) == 1


def test_schedule_two_tasks_in_window():
    rng = np.random.default_rng(0)
    for _ in range(500):
        goals, changes = harness.schedule_tasks(TrialConfig(), 4, rng)
        assert len(goals) == 2 and goals[0] != goals[1]
        assert 35 <= changes[0] <= 65


def test_change_points_uniform_chi_square():
    rng = np.random.default_rng(12345)
    cfg = TrialConfig()
    draws = [harness.schedule_tasks(cfg, 4, rng)[1][0] for _ in range(10000)]
    counts = np.bincount(draws, minlength=66)[35:66]
    assert counts.sum() == 10000
    assert stats.chisquare(counts).pvalue > 0.01


def test_new_goal_uniform_over_others():
    rng = np.random.default_rng(7)
    pairs = [tuple(harness.schedule_tasks(TrialConfig(), 4, rng)[0]) for _ in range(12000)]
    firsts = np.bincount([p[0] for p in pairs], minlength=4)
    assert stats.chisquare(firsts).pvalue > 0.01
    second_given_zero = np.bincount([p[1] for p in pairs if p[0] == 0], minlength=4)
    assert second_given_zero[0] == 0
    assert stats.chisquare(second_given_zero[1:]).pvalue > 0.01


def test_many_task_schedule():
    cfg = TrialConfig(num_tasks=4)
    rng = np.random.default_rng(1)
    for _ in range(200):
        goals, changes = harness.schedule_tasks(cfg, 4, rng)
        assert len(goals) == 4 and len(changes) == 3
        assert all(a != b for a, b in zip(goals, goals[1:]))
        assert all(0 < a < b for a, b in zip(changes, changes[1:]))
        for k, c in enumerate(changes, start=1):
            assert abs(c - 25 * k) <= 3


def test_schedule_needs_two_goals():
    with pytest.raises(ScheduleError):
        harness.schedule_tasks(TrialConfig(), 1, 0)


def test_episode_goals_layout():
    g = harness.episode_goals([2, 0], [40], 100)
    assert np.all(g[:40] == 2) and np.all(g[40:] == 0)


def test_oracle_episode(env):
    agent = OracleAgent(env)
    for goal in range(4):
        tr = harness.run_episode(env, goal, agent, lambda p: np.zeros(16), 10)
        assert tr.total_reward == env.goal_reward
        assert tr.length == 2 * env.depth + 2
        assert tr.goal_found and tr.reached_end and not tr.crashed


def test_constant_wait_network_crashes_at_first_decision(env, one_hot_features):
    tr = harness.run_episode(env, 0, harness.NetworkAgent(constant_wait_genome()),
                             one_hot_features, 10)
    assert tr.length == 3 and tr.crashed
    assert [s.action for s in tr.steps] == [0, 0, 0]
    assert tr.terminal is None


def test_truncation_flagged(env):
    tr = harness.run_episode(env, 0, OracleAgent(env), lambda p: np.zeros(16), 3)
    assert tr.truncated and not tr.crashed and tr.length == 3
    assert tr.total_reward == 0.0


def test_oracle_trial_single_task(env):
    cfg = TrialConfig(num_tasks=1, episodes_per_trial=30)
    res = harness.run_trial(cfg, env, OracleAgent(env), lambda p: np.zeros(16), rng=0)
    assert res.trial_reward == 30 * env.goal_reward


def test_trace_reward_bookkeeping(env, quick_features):
    res = harness.run_trial(TrialConfig(), env, plastic_genome(3), quick_features, rng=2)
    assert res.trial_reward == pytest.approx(sum(t.total_reward for t in res.episode_traces))
    for tr in res.episode_traces:
        assert tr.total_reward == sum(s.reward for s in tr.steps)
        assert tr.length <= TrialConfig().max_steps(env)
    assert res.trial_reward <= 100 * env.goal_reward


def test_weights_persist_across_episodes(env, one_hot_features):
    genome = plastic_genome(4)
    agent = harness.NetworkAgent(genome)
    agent.begin_trial()
    harness.run_episode(env, 0, agent, one_hot_features, 6)
    after_first = agent.state.weights.copy()
    agent.begin_episode(1)
    assert np.array_equal(agent.state.weights, after_first)
    assert not agent.state.a_std.any()
    agent.begin_trial()
    assert np.array_equal(agent.state.weights, genome.compiled.weights)


def test_harness_does_not_touch_genome(env, quick_features):
    genome = plastic_genome(5)
    text = genome.dumps()
    harness.run_trial(TrialConfig(), env, genome, quick_features, rng=0)
    assert genome.dumps() == text


def test_recorded_activations(env, quick_features):
    genome = plastic_genome(6)
    res = harness.run_trial(TrialConfig(record_activations=True, episodes_per_trial=40,
                                        change_window=(10, 20)),
                            env, genome, quick_features, rng=1)
    for tr in res.episode_traces:
        for rec in tr.steps + ([tr.terminal] if tr.terminal else []):
            assert rec.a_std.shape == (len(genome.neurons),)
            assert np.all(np.abs(rec.a_std) < 1) and np.all(np.abs(rec.a_mod) < 1)


def test_rerun_is_identical(env, quick_features):
    g = plastic_genome(7)
    a = harness.run_evaluation(TrialConfig(), env, g, quick_features, seed=11)
    b = harness.run_evaluation(TrialConfig(), env, g, quick_features, seed=11)
    assert [r.episode_rewards.tolist() for r in a] == [r.episode_rewards.tolist() for r in b]
    assert [r.change_points for r in a] == [r.change_points for r in b]


@pytest.mark.parametrize("endp", [1, 2, 3])
def test_compiled_evaluator_matches_harness(env, quick_features, endp):
    trial = TrialConfig(end_presentations=endp)
    for seed in range(12):
        genome = evolve.initial_genome(np.random.default_rng(seed), weight_bound=3.0)
        rng = np.random.default_rng(100 + seed)
        for _ in range(25):
            genome = evolve.mutate(genome, evolve.MutationRates(add_neuron_prob=0.3,
                                                                add_connection_prob=0.5), rng)
        results = harness.run_evaluation(trial, env, genome, quick_features, seed=seed)
        _, goals = harness.trial_schedules(trial, env, seed)
        fast = evolve.episode_rewards(genome, env, trial, quick_features.table(env), goals)
        slow = np.stack([r.episode_rewards for r in results])
        assert np.array_equal(fast, slow)


def test_compiled_evaluator_matches_harness_with_step_costs(quick_features):
    env = ctgraph.CtGraphConfig(crash_reward=-1.0, step_reward=-0.05)
    trial = TrialConfig()
    genome = evolve.initial_genome(np.random.default_rng(42), weight_bound=3.0)
    results = harness.run_evaluation(trial, env, genome, quick_features, seed=3)
    _, goals = harness.trial_schedules(trial, env, 3)
    fast = evolve.episode_rewards(genome, env, trial, quick_features.table(env), goals)
    assert np.allclose(fast, np.stack([r.episode_rewards for r in results]), atol=1e-12)


def test_export_csv(env, quick_features, tmp_path):
    results = harness.run_evaluation(TrialConfig(trials_per_eval=2), env, plastic_genome(8),
                                     quick_features, seed=0)
    steps, episodes = tmp_path / "steps.csv", tmp_path / "episodes.csv"
    harness.export_traces(results, steps, episodes)
    with open(episodes, encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == harness.EPISODE_COLUMNS
    assert len(rows) == 2 * 100
    assert [float(r["reward"]) for r in rows[:100]] == results[0].episode_rewards.tolist()
    with open(steps, encoding="utf-8") as fh:
        step_rows = list(csv.DictReader(fh))
    expected = sum(t.length + (t.terminal is not None)
                   for r in results for t in r.episode_traces)
    assert len(step_rows) == expected
    assert list(step_rows[0]) == harness.STEP_COLUMNS
