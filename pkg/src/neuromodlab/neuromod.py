"""Neuromodulated plastic controller: genome, runtime state and dynamics.

Each neuron carries two activations per step::

    a_std[i] = tanh(0.5 * sum_{j standard} w[j, i] * a_std[j])
    a_mod[i] = tanh(0.5 * sum_{j modulatory} w[j, i] * a_std[j])

Inputs count as standard sources. Neuron sums read the previous step's
activations (one synchronous pass per environment step). After each pass,
every connection leaving a standard source is updated by the modulated
Hebbian rule::

    w[j, i] += a_mod[i] * alpha * (A*pre*post + B*pre + C*post + D)

and clamped to the weight bound. Connections leaving modulatory neurons are
fixed.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from . import _kernels

SCHEMA = "neuromodlab.genome/1"
NUM_INPUTS = 16
WEIGHT_BOUND = 1.0


class GenomeError(ValueError):
    pass


class NeuronKind(str, enum.Enum):
    STANDARD = "standard"
    MODULATORY = "modulatory"


@dataclass(frozen=True)
class Neuron:
    id: int
    kind: NeuronKind = NeuronKind.STANDARD


@dataclass(frozen=True)
class Connection:
    pre: int
    post: int
    weight: float


@dataclass(frozen=True)
class PlasticityRule:
    alpha: float = 0.0
    A: float = 0.0
    B: float = 0.0
    C: float = 0.0
    D: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.alpha, self.A, self.B, self.C, self.D], dtype=float)


@dataclass(frozen=True)
class Genome:
    """Controller description. Input ids are ``0..num_inputs-1``; neuron ids follow.

    Treated as immutable: mutation operators build new genomes.
    """

    neurons: tuple[Neuron, ...]
    connections: tuple[Connection, ...]
    rule: PlasticityRule
    output_id: int
    num_inputs: int = NUM_INPUTS
    genome_id: int = 0
    weight_bound: float = WEIGHT_BOUND

    def __post_init__(self):
        object.__setattr__(self, "neurons", tuple(self.neurons))
        object.__setattr__(self, "connections", tuple(self.connections))

    def validate(self) -> "Genome":
        ids = [n.id for n in self.neurons]
        if len(set(ids)) != len(ids):
            raise GenomeError("duplicate neuron ids")
        if any(i < self.num_inputs for i in ids):
            raise GenomeError("neuron ids must not overlap input ids")
        kinds = {n.id: n.kind for n in self.neurons}
        if self.output_id not in kinds:
            raise GenomeError(f"output neuron {self.output_id} does not exist")
        if kinds[self.output_id] != NeuronKind.STANDARD:
            raise GenomeError("output neuron must be standard")
        seen = set()
        for c in self.connections:
            if not (0 <= c.pre < self.num_inputs or c.pre in kinds):
                raise GenomeError(f"connection source {c.pre} does not resolve")
            if c.post not in kinds:
                raise GenomeError(f"connection target {c.post} is not a neuron")
            if (c.pre, c.post) in seen:
                raise GenomeError(f"duplicate connection {c.pre}->{c.post}")
            seen.add((c.pre, c.post))
            if not -self.weight_bound <= c.weight <= self.weight_bound or not np.isfinite(c.weight):
                raise GenomeError(f"weight {c.weight} outside [-{self.weight_bound}, {self.weight_bound}]")
        return self

    @property
    def num_modulatory(self) -> int:
        return sum(n.kind == NeuronKind.MODULATORY for n in self.neurons)

    def neuron_kind(self, neuron_id: int) -> NeuronKind:
        for n in self.neurons:
            if n.id == neuron_id:
                return n.kind
        raise KeyError(neuron_id)

    def weights_dict(self) -> dict[tuple[int, int], float]:
        return {(c.pre, c.post): c.weight for c in self.connections}

    @cached_property
    def compiled(self) -> "CompiledNet":
        return CompiledNet.from_genome(self)

    def to_dict(self) -> dict:
        return {
            "schema": SCHEMA,
            "genome_id": self.genome_id,
            "num_inputs": self.num_inputs,
            "output_id": self.output_id,
            "weight_bound": self.weight_bound,
            "rule": {"alpha": self.rule.alpha, "A": self.rule.A, "B": self.rule.B,
                     "C": self.rule.C, "D": self.rule.D},
            "neurons": [{"id": n.id, "kind": n.kind.value} for n in self.neurons],
            "connections": [{"pre": c.pre, "post": c.post, "weight": c.weight}
                            for c in self.connections],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Genome":
        if doc.get("schema") != SCHEMA:
            raise GenomeError(f"unsupported genome schema {doc.get('schema')!r}")
        try:
            genome = cls(
                neurons=tuple(Neuron(int(n["id"]), NeuronKind(n["kind"])) for n in doc["neurons"]),
                connections=tuple(Connection(int(c["pre"]), int(c["post"]), float(c["weight"]))
                                  for c in doc["connections"]),
                rule=PlasticityRule(**{k: float(v) for k, v in doc["rule"].items()}),
                output_id=int(doc["output_id"]),
                num_inputs=int(doc.get("num_inputs", NUM_INPUTS)),
                genome_id=int(doc.get("genome_id", 0)),
                weight_bound=float(doc.get("weight_bound", WEIGHT_BOUND)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise GenomeError(f"malformed genome document: {exc}") from exc
        return genome.validate()

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def loads(cls, text: str) -> "Genome":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise GenomeError(f"genome is not valid JSON: {exc}") from exc
        return cls.from_dict(doc)

    def save(self, path) -> None:
        Path(path).write_text(self.dumps() + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Genome":
        return cls.loads(Path(path).read_text(encoding="utf-8"))


@dataclass(frozen=True)
class CompiledNet:
    """Dense arrays consumed by the kernels. Neuron order follows ``genome.neurons``."""

    neuron_ids: tuple[int, ...]
    num_inputs: int
    weights: np.ndarray = field(repr=False)
    mask: np.ndarray = field(repr=False)
    src_mod: np.ndarray = field(repr=False)
    plastic: np.ndarray = field(repr=False)
    rule: np.ndarray = field(repr=False)
    bound: float
    out_idx: int

    @classmethod
    def from_genome(cls, genome: Genome) -> "CompiledNet":
        genome.validate()
        n_in = genome.num_inputs
        ids = tuple(n.id for n in genome.neurons)
        index = {nid: n_in + k for k, nid in enumerate(ids)}
        size = n_in + len(ids)
        weights = np.zeros((size, len(ids)))
        mask = np.zeros((size, len(ids)), dtype=np.bool_)
        for c in genome.connections:
            row = c.pre if c.pre < n_in else index[c.pre]
            col = index[c.post] - n_in
            weights[row, col] = c.weight
            mask[row, col] = True
        src_mod = np.zeros(size, dtype=np.bool_)
        for n in genome.neurons:
            if n.kind == NeuronKind.MODULATORY:
                src_mod[index[n.id]] = True
        plastic = mask & ~src_mod[:, None]
        for arr in (weights, mask, src_mod, plastic):
            arr.setflags(write=False)
        return cls(ids, n_in, weights, mask, src_mod, plastic, genome.rule.as_array(),
                   float(genome.weight_bound), index[genome.output_id] - n_in)

    def source_id(self, row: int) -> int:
        return row if row < self.num_inputs else self.neuron_ids[row - self.num_inputs]


@dataclass
class NetworkState:
    """Mutable runtime state: live (plastic) weights and both activations per neuron."""

    net: CompiledNet
    weights: np.ndarray
    a_std: np.ndarray
    a_mod: np.ndarray

    @property
    def live_weights(self) -> dict[tuple[int, int], float]:
        net = self.net
        return {(net.source_id(r), net.neuron_ids[c]): float(self.weights[r, c])
                for r, c in zip(*np.nonzero(net.mask))}

    @property
    def output(self) -> float:
        return float(self.a_std[self.net.out_idx])

    def reset_activations(self) -> None:
        self.a_std[:] = 0.0
        self.a_mod[:] = 0.0

    def copy(self) -> "NetworkState":
        return NetworkState(self.net, self.weights.copy(), self.a_std.copy(), self.a_mod.copy())


def init_state(genome: Genome) -> NetworkState:
    net = genome.compiled
    n = len(net.neuron_ids)
    return NetworkState(net, np.array(net.weights), np.zeros(n), np.zeros(n))


def _inputs(state: NetworkState, inputs) -> np.ndarray:
    x = np.ascontiguousarray(inputs, dtype=float)
    if x.shape != (state.net.num_inputs,):
        raise GenomeError(f"expected {state.net.num_inputs} inputs, got shape {x.shape}")
    return x


def propagate(state: NetworkState, inputs) -> float:
    """One synchronous update of every neuron; returns the output activation."""
    _kernels.propagate(_inputs(state, inputs), state.a_std, state.a_mod,
                       state.weights, state.net.src_mod)
    return state.output


def hebbian_update(state: NetworkState, inputs) -> None:
    """Apply the modulated plasticity rule using the activations of the last propagate."""
    net = state.net
    _kernels.hebbian(_inputs(state, inputs), state.a_std, state.a_mod, state.weights,
                     net.plastic, net.rule, net.bound)


def discretize_action(value: float) -> int:
    """Map an output activation to 0 (wait), 1 (choice 1) or 2 (choice 2)."""
    return int(_kernels.discretize(float(value)))
