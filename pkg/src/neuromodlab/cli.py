"""Command-line entry point: ``neuromodlab {pretrain,evolve,evaluate,analyze}``.

Exit codes: 0 success, 1 usage or configuration error (bad flags, bad
config, missing or unreadable input files), 2 runtime failure (training did
not converge, analysis impossible on the recorded data, unwritable output).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import platform
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, analysis, config as config_mod, evolve, features, harness
from .ctgraph import ConfigError
from .neuromod import Genome, GenomeError

AUTOENCODER_FILE = "autoencoder.json"
LOG_FILE = "evolution_log.csv"
BEST_FILE = "best_genome.json"


class UsageError(Exception):
    """Bad input: reported with exit code 1."""


class RuntimeFailure(Exception):
    """The command ran but could not produce a valid result: exit code 2."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_metadata(out: Path, command: str, cfg, argv, inputs=None, extra=None) -> Path:
    """Provenance record: resolved config, inputs with hashes, library versions."""
    import numba

    doc = {
        "command": command,
        "argv": list(argv),
        "config": cfg.to_dict(),
        "inputs": {k: {"path": str(v), "sha256": _sha256(v)} for k, v in (inputs or {}).items()},
        "versions": {"neuromodlab": __version__, "numpy": np.__version__,
                     "numba": numba.__version__, "python": platform.python_version()},
    }
    doc.update(extra or {})
    path = out / f"metadata_{command}.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _out_dir(cfg) -> Path:
    out = Path(cfg.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise RuntimeFailure(f"cannot create output directory {out}: {exc}") from exc
    return out


def _features_path(args, cfg) -> Path:
    if getattr(args, "features", None):
        return Path(args.features)
    if cfg.features.load:
        return Path(cfg.features.load)
    return Path(cfg.out) / AUTOENCODER_FILE


def _load_features(path: Path):
    if not path.exists():
        raise UsageError(f"autoencoder artifact not found: {path} (run 'pretrain' first or pass --features)")
    try:
        return features.FeatureExtractor.load(path)
    except (ValueError, KeyError, TypeError) as exc:
        raise UsageError(f"cannot read autoencoder artifact {path}: {exc}") from exc


def _load_genome(path) -> Genome:
    try:
        return Genome.load(path)
    except FileNotFoundError as exc:
        raise UsageError(f"genome file not found: {path}") from exc
    except GenomeError as exc:
        raise UsageError(f"cannot parse genome {path}: {exc}") from exc


# -- commands -------------------------------------------------------------------

def cmd_pretrain(args, cfg) -> int:
    out = _out_dir(cfg)
    fs = cfg.features
    fe = features.build_features(cfg.env, fs.epochs, fs.learning_rate, fs.init_seed, fs.replicate)
    path = out / AUTOENCODER_FILE
    fe.save(path)
    mse = fe.meta["final_mse"]
    write_metadata(out, "pretrain", cfg, args.argv, extra={"final_mse": mse})
    print(f"autoencoder: {path}")
    print(f"final_mse: {mse:.6g}")
    if not mse < fs.mse_ceiling:
        raise RuntimeFailure(f"autoencoder did not converge: MSE {mse:.6g} >= ceiling {fs.mse_ceiling}")
    return 0


def cmd_evolve(args, cfg) -> int:
    out = _out_dir(cfg)
    fpath = _features_path(args, cfg)
    fe = _load_features(fpath)
    ckpt_dir = out / "checkpoints"
    ckpt_dir.mkdir(exist_ok=True)
    ecfg = cfg.evolution
    state, rows = None, []
    if args.resume:
        try:
            state = evolve.EvolutionState.load(args.resume)
        except (OSError, ValueError, KeyError) as exc:
            raise UsageError(f"cannot load checkpoint {args.resume}: {exc}") from exc
        log_path = out / LOG_FILE
        if log_path.exists():
            rows = [r for r in evolve.read_log(log_path) if r["generation"] < state.generation]

    def on_generation(row, st):
        rows.append(row)
        gen = row["generation"]
        if ecfg.checkpoint_every and (gen + 1) % ecfg.checkpoint_every == 0:
            if st.generation == gen + 1:
                # population of the next generation, not yet evaluated
                st.save(ckpt_dir / f"state_gen{st.generation:04d}.json")
            st.best.genome.save(ckpt_dir / f"best_gen{gen:04d}.json")
            evolve.write_log(rows, out / LOG_FILE)
        print(f"gen {gen:4d}  best {row['best_fitness']:8.3f}  mean {row['mean_fitness']:8.3f}",
              flush=True)

    best, _, state = evolve.run_evolution(ecfg, cfg.env, cfg.trial, fe, workers=args.workers,
                                          state=state, on_generation=on_generation)
    evolve.write_log(rows, out / LOG_FILE)
    best.save(out / BEST_FILE)
    state.save(ckpt_dir / "final_state.json")
    extra = {"best_fitness": state.best.fitness, "generations_run": len(rows)}
    if state.selected is not None:
        extra.update(selected_genome_id=state.selected.id, validation_fitness=state.selected.fitness)
    write_metadata(out, "evolve", cfg, args.argv, inputs={"features": fpath}, extra=extra)
    if state.selected is not None:
        print(f"best genome: {out / BEST_FILE} (validation fitness {state.selected.fitness:.3f})")
    else:
        print(f"best genome: {out / BEST_FILE} (fitness {state.best.fitness:.3f})")
    return 0


def cmd_evaluate(args, cfg) -> int:
    out = _out_dir(cfg)
    trial = replace(cfg.trial, trials_per_eval=args.trials or cfg.eval_trials)
    inputs = {}
    if args.oracle:
        agent = harness.OracleAgent(cfg.env)
        fe = (lambda pixels: np.zeros(16))
    else:
        if not args.genome:
            raise UsageError("evaluate needs a genome file or --oracle")
        agent = _load_genome(args.genome)
        fpath = _features_path(args, cfg)
        fe = _load_features(fpath)
        inputs = {"genome": Path(args.genome), "features": fpath}
    results = harness.run_evaluation(trial, cfg.env, agent, fe, cfg.sub_seed("eval"))
    harness.export_traces(results, out / "eval_steps.csv", out / "eval_episodes.csv")
    rewards = np.stack([r.episode_rewards for r in results])
    mean = float(rewards.mean())
    write_metadata(out, "evaluate", cfg, args.argv, inputs=inputs,
                   extra={"mean_reward_per_episode": mean})
    for i, r in enumerate(results):
        print(f"trial {i}: reward {r.trial_reward:.3f}  goals {r.goals}  changes {r.change_points}")
    print(f"mean_reward_per_episode: {mean:.6f}")
    return 0


def cmd_analyze(args, cfg) -> int:
    out = _out_dir(cfg)
    genome = _load_genome(args.genome)
    fpath = _features_path(args, cfg)
    fe = _load_features(fpath)
    n = args.trials or cfg.analysis_trials
    data = analysis.collect_dataset(genome, cfg.trial, cfg.env, fe, n, cfg.sub_seed("eval"))
    loc = analysis.location_stats(data)
    try:
        cue = analysis.reward_cue_stats(data)
    except analysis.AnalysisError as exc:
        analysis.export_report(out / "analysis", loc, None)
        raise RuntimeFailure(f"reward-cue statistics unavailable: {exc}") from exc
    paths = analysis.export_report(out / "analysis", loc, cue)
    write_metadata(out, "analyze", cfg, args.argv,
                   inputs={"genome": Path(args.genome), "features": fpath})
    for line in analysis.summarize(loc, cue):
        print(line)
    for p in paths.values():
        print(f"wrote {p}")
    return 0


COMMANDS = {"pretrain": cmd_pretrain, "evolve": cmd_evolve, "evaluate": cmd_evaluate,
            "analyze": cmd_analyze}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="neuromodlab",
                     description="Evolve neuromodulated plastic controllers on the CT-graph.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("--config", help="run configuration (JSON)")
        p.add_argument("--seed", type=int, help="global seed; overrides the config file")
        p.add_argument("--workers", type=int, default=1, help="evaluation processes")
        p.add_argument("--out", help="output directory; overrides the config file")
        p.add_argument("-v", "--verbose", action="store_true")

    common(sub.add_parser("pretrain", help="train the autoencoder feature extractor"))
    p = sub.add_parser("evolve", help="evolve controllers")
    common(p)
    p.add_argument("--features", help=f"autoencoder artifact (default: <out>/{AUTOENCODER_FILE})")
    p.add_argument("--generations", type=int, help="override evolution.generations")
    p.add_argument("--resume", help="continue from a state checkpoint")
    p = sub.add_parser("evaluate", help="evaluate a genome over several trials")
    common(p)
    p.add_argument("genome", nargs="?", help="genome file")
    p.add_argument("--oracle", action="store_true", help="evaluate the perfect-knowledge test double")
    p.add_argument("--features")
    p.add_argument("--trials", type=int)
    p = sub.add_parser("analyze", help="activation statistics for a genome")
    common(p)
    p.add_argument("genome")
    p.add_argument("--features")
    p.add_argument("--trials", type=int)
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    args.argv = argv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.workers < 1:
            raise UsageError("--workers must be >= 1")
        cfg = config_mod.resolve(args.config, args.seed, args.out)
        if getattr(args, "generations", None) is not None:
            cfg = _with_generations(cfg, args.generations)
        if getattr(args, "trials", None) is not None and args.trials < 1:
            raise UsageError("--trials must be >= 1")
        return COMMANDS[args.command](args, cfg)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (RuntimeFailure, analysis.AnalysisError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def _with_generations(cfg, generations: int):
    doc = cfg.to_dict()
    doc["evolution"]["generations"] = generations
    return config_mod.from_dict(doc)


if __name__ == "__main__":
    sys.exit(main())
