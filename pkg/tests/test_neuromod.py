import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from neuromodlab import neuromod
from neuromodlab.neuromod import (Connection, Genome, GenomeError, Neuron, NeuronKind,
                                  PlasticityRule)


def random_genome(rng, n_in=4, max_hidden=4, density=0.6, bound=1.0, genome_id=0):
    n_hidden = int(rng.integers(0, max_hidden + 1))
    out = n_in
    ids = [out] + [n_in + 1 + k for k in range(n_hidden)]
    neurons = [Neuron(out)] + [
        Neuron(i, NeuronKind.MODULATORY if rng.random() < 0.4 else NeuronKind.STANDARD)
        for i in ids[1:]]
    sources = list(range(n_in)) + ids
    conns = [Connection(p, q, float(rng.uniform(-bound, bound)))
             for p in sources for q in ids if rng.random() < density]
    rule = PlasticityRule(float(rng.uniform(0, 1)), *map(float, rng.uniform(-1, 1, 4)))
    return Genome(tuple(neurons), tuple(conns), rule, out, n_in, genome_id, bound).validate()


class StraightLineNet:
    """Dictionary-based re-implementation of the dynamics, written from the equations."""

    def __init__(self, genome):
        self.g = genome
        self.kind = {n.id: n.kind for n in genome.neurons}
        self.w = {(c.pre, c.post): c.weight for c in genome.connections}
        self.std = {n.id: 0.0 for n in genome.neurons}
        self.mod = {n.id: 0.0 for n in genome.neurons}

    def _pre(self, src, x):
        return x[src] if src < self.g.num_inputs else self.std[src]

    def _is_mod_source(self, src):
        return src >= self.g.num_inputs and self.kind[src] == NeuronKind.MODULATORY

    def propagate(self, x):
        new_std, new_mod = {}, {}
        for i in self.std:
            s = sum(w * self._pre(p, x) for (p, q), w in self.w.items()
                    if q == i and not self._is_mod_source(p))
            m = sum(w * self._pre(p, x) for (p, q), w in self.w.items()
                    if q == i and self._is_mod_source(p))
            new_std[i] = math.tanh(s / 2.0)
            new_mod[i] = math.tanh(m / 2.0)
        self.std, self.mod = new_std, new_mod
        return self.std[self.g.output_id]

    def hebbian(self, x):
        r = self.g.rule
        for (p, q), w in list(self.w.items()):
            if self._is_mod_source(p):
                continue
            pre, post = self._pre(p, x), self.std[q]
            dw = r.alpha * (r.A * pre * post + r.B * pre + r.C * post + r.D)
            nw = w + self.mod[q] * dw
            self.w[(p, q)] = min(self.g.weight_bound, max(-self.g.weight_bound, nw))


def test_matches_straight_line_oracle():
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(1000):
        g = random_genome(rng, bound=float(rng.choice([1.0, 3.0])))
        ref = StraightLineNet(g)
        state = neuromod.init_state(g)
        for _ in range(5):
            x = rng.uniform(-1, 1, g.num_inputs)
            out = neuromod.propagate(state, x)
            neuromod.hebbian_update(state, x)
            ref_out = ref.propagate(x)
            ref.hebbian(x)
            worst = max(worst, abs(out - ref_out))
            for k, v in state.live_weights.items():
                worst = max(worst, abs(v - ref.w[k]))
            for nid, a in zip(state.net.neuron_ids, state.a_mod):
                worst = max(worst, abs(a - ref.mod[nid]))
    assert worst <= 1e-12


def test_hand_computed_step():
    # input 0 -> n2 (std), input 1 -> n3 (mod), n3 -> n2 (modulatory edge)
    g = Genome((Neuron(2), Neuron(3, NeuronKind.MODULATORY)),
               (Connection(0, 2, 0.5), Connection(1, 3, 0.8), Connection(3, 2, 0.6)),
               PlasticityRule(0.5, 1.0, 0.0, 0.0, 0.0), output_id=2, num_inputs=2)
    s = neuromod.init_state(g)
    x = np.array([1.0, 1.0])
    neuromod.propagate(s, x)
    neuromod.hebbian_update(s, x)
    # First pass: n3 has not fired yet, so no modulation and no weight change.
    assert s.a_mod[0] == 0.0
    assert s.live_weights[(0, 2)] == 0.5
    neuromod.propagate(s, x)
    a3 = math.tanh(0.4)
    assert s.a_mod[0] == pytest.approx(math.tanh(0.3 * a3), abs=1e-15)
    post = math.tanh(0.25)
    neuromod.hebbian_update(s, x)
    expected = 0.5 + math.tanh(0.3 * a3) * 0.5 * post
    assert s.live_weights[(0, 2)] == pytest.approx(expected, abs=1e-15)
    assert s.live_weights[(3, 2)] == 0.6  # modulatory edges are fixed


def test_weights_stay_in_bound():
    g = Genome((Neuron(2), Neuron(3, NeuronKind.MODULATORY)),
               (Connection(0, 2, 0.9), Connection(1, 3, 1.0), Connection(3, 2, 1.0),
                Connection(2, 3, 1.0)),
               PlasticityRule(1.0, 1.0, 1.0, 1.0, 1.0), output_id=2, num_inputs=2)
    s = neuromod.init_state(g)
    for _ in range(50):
        neuromod.propagate(s, [1.0, 1.0])
        neuromod.hebbian_update(s, [1.0, 1.0])
    assert s.live_weights[(0, 2)] == 1.0


def test_no_modulatory_neurons_means_no_plasticity():
    rng = np.random.default_rng(5)
    g = random_genome(rng, max_hidden=3)
    g = Genome(tuple(Neuron(n.id) for n in g.neurons), g.connections, g.rule, g.output_id,
               g.num_inputs)
    s = neuromod.init_state(g)
    before = s.weights.copy()
    for _ in range(200):
        x = rng.uniform(-1, 1, g.num_inputs)
        neuromod.propagate(s, x)
        neuromod.hebbian_update(s, x)
    assert np.array_equal(before, s.weights)


def test_genome_is_not_touched_by_runtime():
    rng = np.random.default_rng(9)
    g = random_genome(rng)
    snapshot = g.dumps()
    s = neuromod.init_state(g)
    for _ in range(20):
        x = rng.uniform(-1, 1, g.num_inputs)
        neuromod.propagate(s, x)
        neuromod.hebbian_update(s, x)
    assert g.dumps() == snapshot
    with pytest.raises(ValueError):
        g.compiled.weights[0, 0] = 1.0


@pytest.mark.parametrize("value,action", [(-1.0, 0), (-0.34, 0), (-0.33, 1), (0.0, 1),
                                          (0.33, 1), (0.3300001, 2), (1.0, 2)])
def test_discretize(value, action):
    assert neuromod.discretize_action(value) == action


def test_input_shape_checked():
    g = random_genome(np.random.default_rng(1))
    with pytest.raises(GenomeError):
        neuromod.propagate(neuromod.init_state(g), np.zeros(g.num_inputs + 1))


@pytest.mark.parametrize("mutation", [
    lambda d: d["neurons"].append({"id": d["neurons"][0]["id"], "kind": "standard"}),
    lambda d: d.update(output_id=999),
    lambda d: d["connections"].append({"pre": 0, "post": 12345, "weight": 0.1}),
    lambda d: d["connections"].append(dict(d["connections"][0])),
    lambda d: d["connections"][0].update(weight=5.0),
    lambda d: d.update(schema="other/9"),
    lambda d: d.pop("rule"),
])
def test_invalid_genomes_rejected(mutation):
    g = random_genome(np.random.default_rng(3), density=1.0)
    doc = g.to_dict()
    mutation(doc)
    with pytest.raises(GenomeError):
        Genome.from_dict(doc)


def test_modulatory_output_rejected():
    with pytest.raises(GenomeError):
        Genome((Neuron(1, NeuronKind.MODULATORY),), (), PlasticityRule(), 1, 1).validate()


def test_loads_rejects_garbage():
    with pytest.raises(GenomeError):
        Genome.loads("{not json")


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_genome_round_trip(seed, tmp_path_factory):
    g = random_genome(np.random.default_rng(seed), genome_id=seed % 1000)
    assert Genome.loads(g.dumps()) == g
    path = tmp_path_factory.mktemp("g") / "genome.json"
    g.save(path)
    back = Genome.load(path)
    assert back == g
    assert json.loads(path.read_text())["schema"] == neuromod.SCHEMA


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_activations_bounded(seed):
    rng = np.random.default_rng(seed)
    g = random_genome(rng, bound=3.0)
    s = neuromod.init_state(g)
    for _ in range(10):
        x = rng.uniform(0, 1, g.num_inputs)
        neuromod.propagate(s, x)
        neuromod.hebbian_update(s, x)
        assert np.all(np.abs(s.a_std) < 1) and np.all(np.abs(s.a_mod) < 1)
        assert np.all(np.abs(s.weights) <= 3.0)
