"""Mutation-only genetic algorithm over controller genomes.

Each generation every individual is evaluated on the same task schedules
(common random numbers), the elite is copied unchanged and the rest of the
next population is bred by tournament selection followed by mutation.
All randomness is drawn from streams derived from ``rng_seed``, the
generation index and the child's slot, so the trace does not depend on how
evaluations are spread over worker processes.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional

import multiprocessing as mp
import numpy as np

from . import _kernels, ctgraph
from .ctgraph import CtGraphConfig
from .harness import TrialConfig, trial_schedules
from .neuromod import Connection, Genome, Neuron, NeuronKind, PlasticityRule

log = logging.getLogger(__name__)

LOG_COLUMNS = ["generation", "best_fitness", "mean_fitness", "std_fitness", "best_genome_id"]
CHECKPOINT_SCHEMA = "neuromodlab.population/1"


@dataclass(frozen=True)
class MutationRates:
    weight_perturb_prob: float = 0.8
    weight_sigma: float = 0.1
    weight_perturb_fraction: float = 1.0
    add_connection_prob: float = 0.1
    del_connection_prob: float = 0.05
    add_neuron_prob: float = 0.03
    del_neuron_prob: float = 0.01
    flip_kind_prob: float = 0.02
    rule_perturb_prob: float = 0.2
    rule_sigma: float = 0.1

    def __post_init__(self):
        for name, value in asdict(self).items():
            if name.endswith(("_prob", "_fraction")) and not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {value}")
            if name.endswith("_sigma") and value < 0:
                raise ValueError(f"{name} must be >= 0, got {value}")

    @classmethod
    def zero(cls) -> "MutationRates":
        return cls(**{k: 0.0 for k in asdict(cls())})


@dataclass(frozen=True)
class EvolutionConfig:
    population_size: int = 150
    generations: int = 100
    tournament_segment: int = 5
    elite_fraction: float = 0.05
    rates: MutationRates = field(default_factory=MutationRates)
    rng_seed: int = 0
    resample_eval_seeds: bool = True
    seed_direct_connections: bool = True
    seed_standard: int = 1
    seed_modulatory: int = 1
    seed_recurrent: bool = False
    weight_bound: float = 1.0
    alpha_max: float = 1.0
    target_fitness: Optional[float] = None
    checkpoint_every: int = 10
    validation_trials: int = 0
    validation_pool: int = 15

    def __post_init__(self):
        if isinstance(self.rates, dict):
            object.__setattr__(self, "rates", MutationRates(**self.rates))
        if self.population_size < 1 or self.generations < 1:
            raise ValueError("population_size and generations must be >= 1")
        if self.tournament_segment < 1 or self.population_size < self.tournament_segment:
            raise ValueError("population_size must be >= tournament_segment >= 1")
        if not 0.0 <= self.elite_fraction <= 1.0:
            raise ValueError("elite_fraction must be in [0, 1]")
        if self.weight_bound <= 0 or self.alpha_max <= 0:
            raise ValueError("weight_bound and alpha_max must be positive")
        if self.seed_standard < 0 or self.seed_modulatory < 0:
            raise ValueError("seed_standard and seed_modulatory must be >= 0")
        if self.validation_trials < 0 or self.validation_pool < 1:
            raise ValueError("validation_trials must be >= 0 and validation_pool >= 1")

    @property
    def num_elites(self) -> int:
        return min(self.population_size, math.ceil(self.elite_fraction * self.population_size))


@dataclass
class Individual:
    genome: Genome
    fitness: Optional[float] = None

    @property
    def id(self) -> int:
        return self.genome.genome_id


def stream(seed: int, name: str, *keys: int) -> np.random.Generator:
    """Named, reproducible RNG sub-stream: ``SeedSequence([seed, crc32(name), *keys])``."""
    return np.random.default_rng([int(seed), zlib.crc32(name.encode()), *map(int, keys)])


def stream_seed(seed: int, name: str, *keys: int) -> int:
    return int(np.random.SeedSequence([int(seed), zlib.crc32(name.encode()), *map(int, keys)])
               .generate_state(1, np.uint64)[0])


# -- fitness ---------------------------------------------------------------

def _table(features, env: CtGraphConfig) -> np.ndarray:
    if isinstance(features, np.ndarray):
        return features
    return features.table(env)


def episode_rewards(genome: Genome, env: CtGraphConfig, trial: TrialConfig, table: np.ndarray,
                    goals: np.ndarray) -> np.ndarray:
    """``(trials, episodes)`` rewards from the compiled evaluator."""
    net = genome.compiled
    return _kernels.run_trials(net.weights, net.src_mod, net.plastic, net.rule, net.bound,
                               net.out_idx, table, goals, env.branching_factor, env.depth,
                               env.wait_delay, env.goal_reward, env.crash_reward,
                               env.step_reward, trial.max_steps(env), trial.end_presentations)


def evaluate_fitness(genome: Genome, env: CtGraphConfig, trial: TrialConfig, features,
                     eval_seed) -> float:
    """Mean over trials of the summed episode rewards of each trial."""
    _, goals = trial_schedules(trial, env, eval_seed)
    return float(episode_rewards(genome, env, trial, _table(features, env), goals).sum(axis=1).mean())


def fitness_upper_bound(env: CtGraphConfig, trial: TrialConfig) -> float:
    return trial.episodes_per_trial * env.goal_reward


_WORKER: dict = {}


def _worker_init(env, trial, table):
    _WORKER.update(env=env, trial=trial, table=table)


def _worker_eval(args):
    genome, goals = args
    w = _WORKER
    return float(episode_rewards(genome, w["env"], w["trial"], w["table"], goals).sum(axis=1).mean())


class Evaluator:
    """Evaluates whole populations, optionally across worker processes.

    Results come back in population order, so the worker count never
    changes the outcome.
    """

    def __init__(self, env: CtGraphConfig, trial: TrialConfig, features, workers: int = 1):
        self.env = env
        self.trial = trial
        self.table = np.ascontiguousarray(_table(features, env))
        self.workers = max(1, int(workers))
        self._pool = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    def __call__(self, genomes: list[Genome], eval_seed, trials: Optional[int] = None) -> list[float]:
        trial = self.trial if trials is None else replace(self.trial, trials_per_eval=trials)
        _, goals = trial_schedules(trial, self.env, eval_seed)
        if self.workers == 1:
            return [float(episode_rewards(g, self.env, self.trial, self.table, goals).sum(axis=1).mean())
                    for g in genomes]
        if self._pool is None:
            self._pool = ProcessPoolExecutor(self.workers, mp_context=mp.get_context("fork"),
                                             initializer=_worker_init,
                                             initargs=(self.env, self.trial, self.table))
        chunk = max(1, len(genomes) // (4 * self.workers))
        return list(self._pool.map(_worker_eval, [(g, goals) for g in genomes], chunksize=chunk))


# -- genomes -----------------------------------------------------------------

def random_rule(rng: np.random.Generator, alpha_max: float = 1.0) -> PlasticityRule:
    return PlasticityRule(float(rng.uniform(0, alpha_max)), *map(float, rng.uniform(-1, 1, 4)))


def initial_genome(rng: np.random.Generator, genome_id: int = 0, num_inputs: int = 16,
                   direct: bool = True, weight_bound: float = 1.0,
                   alpha_max: float = 1.0, n_standard: int = 1, n_modulatory: int = 1,
                   recurrent: bool = False) -> Genome:
    """Seed topology: one output plus ``n_standard`` standard and ``n_modulatory``
    modulatory hidden neurons.

    Inputs feed every hidden neuron and, with ``direct``, the output too; all
    hidden neurons feed the output. ``recurrent`` adds a connection from every
    neuron (output included) to every hidden neuron, self-loops too.
    """
    out = num_inputs
    std = [num_inputs + 1 + k for k in range(n_standard)]
    mod = [num_inputs + 1 + n_standard + k for k in range(n_modulatory)]
    neurons = ((Neuron(out),) + tuple(Neuron(i) for i in std)
               + tuple(Neuron(i, NeuronKind.MODULATORY) for i in mod))
    hidden = std + mod
    pairs = [(i, h) for h in hidden for i in range(num_inputs)]
    if direct:
        pairs += [(i, out) for i in range(num_inputs)]
    pairs += [(h, out) for h in hidden]
    if recurrent:
        pairs += [(p, h) for p in [out] + hidden for h in hidden]
    weights = rng.uniform(-weight_bound, weight_bound, len(pairs))
    conns = tuple(Connection(p, q, float(w)) for (p, q), w in zip(pairs, weights))
    return Genome(neurons, conns, random_rule(rng, alpha_max), out, num_inputs, genome_id,
                  weight_bound).validate()


def _clip(x, bound):
    return float(min(bound, max(-bound, x)))


def mutate(genome: Genome, rates: MutationRates, rng: np.random.Generator,
           genome_id: Optional[int] = None, alpha_max: float = 1.0) -> Genome:
    """Apply each mutation operator independently with its own probability.

    Weight noise is scaled by the genome's weight bound and learning-rate
    noise by ``alpha_max``, so the same rates work for any ranges.
    """
    bound = genome.weight_bound
    neurons = list(genome.neurons)
    conns = {(c.pre, c.post): c.weight for c in genome.connections}
    rule = genome.rule

    if rng.random() < rates.weight_perturb_prob and conns:
        noise = rng.normal(0.0, rates.weight_sigma * bound, len(conns))
        if rates.weight_perturb_fraction < 1.0:
            noise *= rng.random(len(conns)) < rates.weight_perturb_fraction
        conns = {k: _clip(w + d, bound) for (k, w), d in zip(conns.items(), noise)}

    if rng.random() < rates.add_connection_prob:
        sources = list(range(genome.num_inputs)) + [n.id for n in neurons]
        free = [(p, n.id) for p in sources for n in neurons if (p, n.id) not in conns]
        if free:
            conns[free[int(rng.integers(len(free)))]] = float(rng.uniform(-bound, bound))

    if rng.random() < rates.del_connection_prob and conns:
        keys = list(conns)
        del conns[keys[int(rng.integers(len(keys)))]]

    if rng.random() < rates.add_neuron_prob:
        new_id = max(n.id for n in neurons) + 1
        kind = NeuronKind.MODULATORY if rng.random() < 0.5 else NeuronKind.STANDARD
        sources = list(range(genome.num_inputs)) + [n.id for n in neurons]
        targets = [n.id for n in neurons]
        pre = sources[int(rng.integers(len(sources)))]
        post = targets[int(rng.integers(len(targets)))]
        neurons.append(Neuron(new_id, kind))
        conns[(pre, new_id)] = float(rng.uniform(-bound, bound))
        conns[(new_id, post)] = float(rng.uniform(-bound, bound))

    if rng.random() < rates.del_neuron_prob:
        hidden = [n for n in neurons if n.id != genome.output_id]
        if hidden:
            victim = hidden[int(rng.integers(len(hidden)))].id
            neurons = [n for n in neurons if n.id != victim]
            conns = {k: w for k, w in conns.items() if victim not in k}

    if rng.random() < rates.flip_kind_prob:
        hidden = [i for i, n in enumerate(neurons) if n.id != genome.output_id]
        if hidden:
            i = hidden[int(rng.integers(len(hidden)))]
            kind = (NeuronKind.STANDARD if neurons[i].kind == NeuronKind.MODULATORY
                    else NeuronKind.MODULATORY)
            neurons[i] = Neuron(neurons[i].id, kind)

    if rng.random() < rates.rule_perturb_prob:
        d = rng.normal(0.0, rates.rule_sigma, 5)
        rule = PlasticityRule(float(np.clip(rule.alpha + alpha_max * d[0], 0.0, alpha_max)),
                              _clip(rule.A + d[1], 1.0), _clip(rule.B + d[2], 1.0),
                              _clip(rule.C + d[3], 1.0), _clip(rule.D + d[4], 1.0))

    return replace(genome, neurons=tuple(neurons),
                   connections=tuple(Connection(p, q, w) for (p, q), w in conns.items()),
                   rule=rule,
                   genome_id=genome.genome_id if genome_id is None else genome_id)


# -- selection -------------------------------------------------------------------

def _rank_key(ind: Individual):
    return (-ind.fitness, ind.id)


def tournament_select(population: list[Individual], segment_size: int,
                      rng: np.random.Generator) -> Individual:
    """Best of ``segment_size`` individuals drawn without replacement; ties go to the lower id."""
    if not population:
        raise ValueError("empty population")
    if segment_size > len(population):
        raise ValueError(f"segment of {segment_size} from a population of {len(population)}")
    if any(ind.fitness is None for ind in population):
        raise ValueError("tournament over unevaluated individuals")
    picks = rng.choice(len(population), size=segment_size, replace=False)
    return min((population[i] for i in picks), key=_rank_key)


def tournament_win_probabilities(fitnesses, segment_size: int) -> np.ndarray:
    """Exact chance of each individual winning one tournament (distinct fitnesses)."""
    fitnesses = np.asarray(fitnesses, dtype=float)
    n = len(fitnesses)
    order = np.argsort(-fitnesses, kind="stable")
    probs = np.empty(n)
    total = math.comb(n, segment_size)
    for rank, idx in enumerate(order):
        # Winner at this rank: it is drawn and the rest come from the worse ones.
        probs[idx] = math.comb(n - rank - 1, segment_size - 1) / total
    return probs


def next_generation(population: list[Individual], config: EvolutionConfig, generation: int,
                    next_id: int) -> tuple[list[Individual], int]:
    """Elites survive unchanged; the remainder are mutated tournament winners.

    Returns the new (unevaluated) population and the next free genome id.
    """
    ranked = sorted(population, key=_rank_key)
    elites = [Individual(ind.genome) for ind in ranked[:config.num_elites]]
    rng = stream(config.rng_seed, "selection", generation)
    children = []
    for slot in range(config.population_size - len(elites)):
        parent = tournament_select(population, config.tournament_segment, rng)
        child_rng = stream(config.rng_seed, "mutation", generation, slot)
        children.append(Individual(mutate(parent.genome, config.rates, child_rng, next_id,
                                          config.alpha_max)))
        next_id += 1
    return elites + children, next_id


# -- main loop ---------------------------------------------------------------------------

@dataclass
class EvolutionState:
    generation: int
    population: list[Individual]
    next_id: int
    best: Optional[Individual] = None
    selected: Optional[Individual] = None

    def to_dict(self) -> dict:
        return {
            "schema": CHECKPOINT_SCHEMA,
            "generation": self.generation,
            "next_id": self.next_id,
            "population": [ind.genome.to_dict() for ind in self.population],
            "best": None if self.best is None else {"fitness": self.best.fitness,
                                                    "genome": self.best.genome.to_dict()},
            "selected": None if self.selected is None else {
                "fitness": self.selected.fitness, "genome": self.selected.genome.to_dict()},
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "EvolutionState":
        if doc.get("schema") != CHECKPOINT_SCHEMA:
            raise ValueError(f"unsupported checkpoint schema {doc.get('schema')!r}")
        def individual(entry):
            if entry is None:
                return None
            return Individual(Genome.from_dict(entry["genome"]), float(entry["fitness"]))

        return cls(int(doc["generation"]),
                   [Individual(Genome.from_dict(g)) for g in doc["population"]],
                   int(doc["next_id"]), individual(doc.get("best")), individual(doc.get("selected")))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "EvolutionState":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def initial_state(config: EvolutionConfig) -> EvolutionState:
    pop = [Individual(initial_genome(stream(config.rng_seed, "init", i), i,
                                     direct=config.seed_direct_connections,
                                     weight_bound=config.weight_bound,
                                     alpha_max=config.alpha_max,
                                     n_standard=config.seed_standard,
                                     n_modulatory=config.seed_modulatory,
                                     recurrent=config.seed_recurrent))
           for i in range(config.population_size)]
    return EvolutionState(0, pop, config.population_size)


def generation_eval_seed(config: EvolutionConfig, generation: int) -> int:
    return stream_seed(config.rng_seed, "schedules", generation if config.resample_eval_seeds else 0)


def validation_candidates(state: EvolutionState, pool: int) -> list[Individual]:
    """Top ``pool`` of the evaluated population plus the best-ever genome, without duplicates."""
    ranked = sorted(state.population, key=_rank_key)[:pool]
    if state.best is not None and all(ind.id != state.best.id for ind in ranked):
        ranked.append(state.best)
    return ranked


def run_evolution(config: EvolutionConfig, env: CtGraphConfig, trial: TrialConfig, features,
                  workers: int = 1, state: Optional[EvolutionState] = None,
                  on_generation: Optional[Callable[[dict, EvolutionState], None]] = None):
    """Evolve for ``config.generations`` generations (or until ``target_fitness``).

    Returns ``(best_genome, log_rows, final_state)``. ``state`` resumes from
    a checkpoint taken at the start of a generation.

    The best genome is the best-ever individual by generation fitness. With
    ``validation_trials`` set, the final population's leaders and the best-ever
    individual are instead re-scored on a fresh, larger batch of schedules and
    the winner is returned (also kept as ``final_state.selected``). One
    generation's score comes from a few schedules and favours lucky genomes.
    """
    state = state or initial_state(config)
    rows = []
    finished = False
    with Evaluator(env, trial, features, workers) as evaluate:
        while state.generation < config.generations:
            gen = state.generation
            fits = evaluate([ind.genome for ind in state.population], generation_eval_seed(config, gen))
            for ind, f in zip(state.population, fits):
                ind.fitness = f
            champion = min(state.population, key=_rank_key)
            if state.best is None or champion.fitness > state.best.fitness:
                state.best = Individual(champion.genome, champion.fitness)
            arr = np.array(fits)
            row = {"generation": gen, "best_fitness": champion.fitness,
                   "mean_fitness": float(arr.mean()), "std_fitness": float(arr.std()),
                   "best_genome_id": champion.id}
            rows.append(row)
            log.info("gen %d best %.2f mean %.2f", gen, row["best_fitness"], row["mean_fitness"])
            done = (gen + 1 >= config.generations
                    or (config.target_fitness is not None and champion.fitness >= config.target_fitness))
            if not done:
                pop, next_id = next_generation(state.population, config, gen, state.next_id)
                state = EvolutionState(gen + 1, pop, next_id, state.best)
            if on_generation is not None:
                on_generation(row, state)
            if done:
                finished = True
                break
        if config.validation_trials and finished:
            cands = validation_candidates(state, config.validation_pool)
            scores = evaluate([c.genome for c in cands], stream_seed(config.rng_seed, "validation"),
                              config.validation_trials)
            pick = max(zip(cands, scores), key=lambda cs: (cs[1], -cs[0].id))
            state.selected = Individual(pick[0].genome, pick[1])
            log.info("validation pick %d: %.2f", pick[0].id, pick[1])
            return state.selected.genome, rows, state
    return state.best.genome, rows, state


def write_log(rows, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=LOG_COLUMNS)
        w.writeheader()
        for row in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def read_log(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [{"generation": int(r["generation"]), "best_fitness": float(r["best_fitness"]),
                 "mean_fitness": float(r["mean_fitness"]), "std_fitness": float(r["std_fitness"]),
                 "best_genome_id": int(r["best_genome_id"])} for r in csv.DictReader(fh)]
