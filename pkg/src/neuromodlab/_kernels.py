"""Compiled inner loops shared by the Python API and the fast evaluator.

Networks are dense: ``weights[j, i]`` is the connection from source ``j`` to
neuron ``i`` where sources ``0..n_in-1`` are inputs and ``n_in + k`` is
neuron ``k``. Absent connections hold 0 and are never plastic.
"""

import math

import numpy as np
from numba import njit

# Phase codes mirror ctgraph.Phase; observation rows mirror ctgraph.OBS_*.
_START, _WAIT, _DECISION, _END, _CRASH = 0, 1, 2, 3, 4
_OBS_START, _OBS_WAIT, _OBS_DECISION, _OBS_END_GOAL, _OBS_END_NOGOAL = 0, 1, 2, 3, 4

ACTION_LOW = -0.33
ACTION_HIGH = 0.33


@njit(cache=True)
def propagate(x, a_std, a_mod, weights, src_mod):
    n_in = x.shape[0]
    n = a_std.shape[0]
    new_std = np.empty(n)
    new_mod = np.empty(n)
    for i in range(n):
        s = 0.0
        m = 0.0
        for j in range(n_in + n):
            w = weights[j, i]
            if w == 0.0:
                continue
            pre = x[j] if j < n_in else a_std[j - n_in]
            if src_mod[j]:
                m += w * pre
            else:
                s += w * pre
        new_std[i] = math.tanh(0.5 * s)
        new_mod[i] = math.tanh(0.5 * m)
    a_std[:] = new_std
    a_mod[:] = new_mod


@njit(cache=True)
def hebbian(x, a_std, a_mod, weights, plastic, rule, bound):
    n_in = x.shape[0]
    n = a_std.shape[0]
    alpha, ca, cb, cc, cd = rule[0], rule[1], rule[2], rule[3], rule[4]
    for i in range(n):
        mod = a_mod[i]
        if mod == 0.0:
            continue
        post = a_std[i]
        for j in range(n_in + n):
            if not plastic[j, i]:
                continue
            pre = x[j] if j < n_in else a_std[j - n_in]
            delta = alpha * (ca * pre * post + cb * pre + cc * post + cd)
            w = weights[j, i] + mod * delta
            if w > bound:
                w = bound
            elif w < -bound:
                w = -bound
            weights[j, i] = w


@njit(cache=True)
def discretize(value):
    if value < ACTION_LOW:
        return 0
    if value <= ACTION_HIGH:
        return 1
    return 2


@njit(cache=True)
def run_trials(weights0, src_mod, plastic, rule, bound, out_idx, table, goals,
               branching, depth, delay, goal_reward, crash_reward, step_reward, max_steps,
               end_presentations):
    """Episode rewards for every trial; mirrors harness.run_trial without traces.

    ``goals`` is ``(trials, episodes)``: the goal index active in each episode.
    """
    n_trials, n_eps = goals.shape
    n = weights0.shape[1]
    rewards = np.zeros((n_trials, n_eps))
    a_std = np.zeros(n)
    a_mod = np.zeros(n)
    for t in range(n_trials):
        weights = weights0.copy()
        for e in range(n_eps):
            goal = goals[t, e]
            a_std[:] = 0.0
            a_mod[:] = 0.0
            phase = _START
            level = 0
            pidx = 0
            waits = 0
            obs = _OBS_START
            total = 0.0
            for _ in range(max_steps):
                x = table[obs]
                propagate(x, a_std, a_mod, weights, src_mod)
                hebbian(x, a_std, a_mod, weights, plastic, rule, bound)
                act = discretize(a_std[out_idx])
                crashed = False
                if phase == _START or phase == _WAIT:
                    if act != 0:
                        crashed = True
                    elif phase == _START:
                        waits = delay
                    else:
                        waits -= 1
                else:
                    if act < 1 or act > branching:
                        crashed = True
                    else:
                        level += 1
                        pidx = pidx * branching + (act - 1)
                        waits = delay
                if crashed:
                    total += crash_reward
                    break
                if waits > 0:
                    phase = _WAIT
                    obs = _OBS_WAIT
                elif level < depth:
                    phase = _DECISION
                    obs = _OBS_DECISION
                else:
                    # End state: show the end image, no further actions.
                    obs = _OBS_END_GOAL if pidx == goal else _OBS_END_NOGOAL
                    total += goal_reward if pidx == goal else step_reward
                    x = table[obs]
                    for _k in range(end_presentations):
                        propagate(x, a_std, a_mod, weights, src_mod)
                        hebbian(x, a_std, a_mod, weights, plastic, rule, bound)
                    break
                total += step_reward
            rewards[t, e] = total
    return rewards
