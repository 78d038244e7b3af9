"""
Command-line entry point: ``python -m app.cli <verb> ...``.

Verbs:
    run       full LESR loop driven by a config file
    train     train one program pair and write its curve and trajectories
    eval      evaluate a saved policy with its program pair
    analyze   Lipschitz array of a trajectory CSV

Exit codes: 0 success, 1 method failure, 2 usage or input error.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from dotenv import load_dotenv

from app.config import get_settings
from app.models.dsl import DslError, NonFiniteOutputError
from app.models.env import make_env
from app.models.lipschitz import LipschitzError, accumulate_feedback
from app.models.llm import ExtractionError, GeneratorUnavailableError, NoValidCandidatesError, format_program_file, load_program_pair
from app.models.orchestrator import MissingApiKeyError, run_lesr
from app.models.td3 import evaluate, train
from app.schemas.config import ConfigError, RunConfig, load_config, validate_config
from app.utils import io
from app.utils.logging import configure_logging

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2

USAGE_ERRORS = (ConfigError, DslError, ExtractionError, io.ArtifactError, MissingApiKeyError,
                LipschitzError, FileNotFoundError)
METHOD_ERRORS = (GeneratorUnavailableError, NoValidCandidatesError, NonFiniteOutputError)


def _load_run_config(args: argparse.Namespace) -> RunConfig:
    settings = get_settings()
    overrides = {"seed": args.seed, "output_dir": args.out}
    if args.config is None:
        return validate_config({k: v for k, v in overrides.items() if v is not None})
    return load_config(
        args.config,
        overrides=overrides,
        defaults={"endpoint": settings.llm_endpoint, "model": settings.llm_model},
    )


def _read_programs(path: str, cfg: RunConfig):
    text = Path(path).read_text(encoding="utf-8")
    env = make_env(cfg.env_id)
    return load_program_pair(text, env.observation_dim, cfg.max_outputs)


def cmd_run(args: argparse.Namespace) -> int:
    cfg = _load_run_config(args)
    # The generator is built inside run_lesr from the resumed manifest config.
    manifest = run_lesr(cfg, resume=args.resume)

    best = manifest.find_candidate(manifest.best_candidate_id) if manifest.best_candidate_id is not None else None
    if best is not None:
        mean = best.mean_lipschitz
        print(f"Best candidate: {best.candidate_id} (iteration {best.iteration})")
        print(f"  score during search: {best.score:.4f}")
        print(f"  mean Lipschitz:      {mean:.4f}" if mean is not None else "  mean Lipschitz:      n/a")
        print("  repr:\n" + "\n".join(f"    {line}" for line in best.repr_text.splitlines()))
        print("  reward:\n" + "\n".join(f"    {line}" for line in best.reward_text.splitlines()))
    if manifest.final is not None and manifest.final.score is not None:
        print(f"Final score after {manifest.final.total_steps} steps: {manifest.final.score:.4f}")
    print(f"Manifest: {Path(cfg.output_dir) / 'manifest.json'}")
    return EXIT_OK if manifest.status == "completed" else EXIT_FAILURE


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _load_run_config(args)
    repr_program, reward_program = _read_programs(args.program, cfg)
    steps = args.steps or cfg.final_steps
    out_dir = Path(cfg.output_dir)

    result = train(cfg.env_id, repr_program, reward_program, cfg.train_config(steps))
    io.write_text(out_dir / "program.dsl", format_program_file(repr_program, reward_program))
    io.write_curve(out_dir / "train_curve.csv", result.curve)
    if result.disqualified:
        logger.error(f"Training disqualified: {result.reason}")
        return EXIT_FAILURE

    io.write_trajectories(out_dir / "trajectories.csv", result.trajectories)
    io.write_policy(out_dir / "policy.bin", result.actor)
    if cfg.feedback_variant != "spectral":
        array = accumulate_feedback(result.trajectories, cfg.feedback_variant, cfg.tau, cfg.discount,
                                    cfg.exact_pair_limit)
        if array is not None:
            io.write_lipschitz(out_dir / "lipschitz.csv", array)
    print(f"Score after {steps} steps: {result.score:.4f}")
    print(f"Critic spectral-norm bound: {result.critic_bound():.4f}")
    print(f"Artifacts: {out_dir}")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = _load_run_config(args)
    actor = io.read_policy(args.policy)
    repr_program, _ = _read_programs(args.program, cfg)
    env = make_env(cfg.env_id)
    augmented_dim = env.observation_dim + repr_program.output_dim
    input_dims = {
        "augmented": augmented_dim,
        "source": env.observation_dim,
        "added": repr_program.output_dim,
    }
    # The configured input wins when several layouts share a width.
    candidates = [cfg.policy_input] + [name for name in input_dims if name != cfg.policy_input]
    policy_input = next((name for name in candidates if input_dims[name] == actor.input_dim), None)
    if policy_input is None:
        raise io.ArtifactError(
            f"policy expects {actor.input_dim} inputs; the program gives {augmented_dim}, "
            f"the source state has {env.observation_dim} and F adds {repr_program.output_dim}"
        )

    episodes = args.episodes or cfg.eval_episodes
    score, trajectories = evaluate(actor, cfg.env_id, episodes, cfg.seed, repr_program, policy_input, cfg.horizon)
    out_path = Path(args.out) / "eval.csv" if args.out else Path(args.policy).parent / "eval.csv"
    io.write_eval(out_path, trajectories)
    print(f"Score over {episodes} episodes: {score:.4f}")
    print(f"Evaluation table: {out_path}")
    return EXIT_OK


def cmd_analyze(args: argparse.Namespace) -> int:
    trajectories = io.read_trajectories(args.trajectory_csv)
    array = accumulate_feedback(trajectories, variant=args.variant, tau=args.tau, gamma=args.discount,
                                exact_pair_limit=args.exact_pair_limit)
    if array is None:
        raise LipschitzError("no episode in the file has two or more steps")
    if args.out:
        path = io.write_lipschitz(args.out, array)
        print(f"Lipschitz array written to {path}")
    else:
        print(io.lipschitz_frame(array).to_csv(index=False, float_format="%.17g"), end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lesr", description="LLM-guided state representation search")
    subparsers = parser.add_subparsers(dest="verb", required=True)

    def add_common(sub: argparse.ArgumentParser, config_required: bool = False) -> None:
        sub.add_argument("--config", required=config_required, help="Flat key = value configuration file")
        sub.add_argument("--seed", type=int, help="Override the configured seed")
        sub.add_argument("--out", help="Override the output directory")

    run = subparsers.add_parser("run", help="Run the full search")
    add_common(run, config_required=True)
    run.add_argument("--resume", action="store_true", help="Continue an unfinished run in the output directory")
    run.set_defaults(handler=cmd_run)

    train_parser = subparsers.add_parser("train", help="Train one program pair")
    add_common(train_parser)
    train_parser.add_argument("--program", required=True, help="Program file with repr:/reward: sections")
    train_parser.add_argument("--steps", type=int, help="Training steps (default: final_steps)")
    train_parser.set_defaults(handler=cmd_train)

    eval_parser = subparsers.add_parser("eval", help="Evaluate a saved policy")
    add_common(eval_parser)
    eval_parser.add_argument("--policy", required=True, help="policy.bin file")
    eval_parser.add_argument("--program", required=True, help="Program file the policy was trained with")
    eval_parser.add_argument("--episodes", type=int, help="Evaluation episodes (default: eval_episodes)")
    eval_parser.set_defaults(handler=cmd_eval)

    analyze = subparsers.add_parser("analyze", help="Lipschitz array of a trajectory CSV")
    analyze.add_argument("trajectory_csv", help="CSV with columns t, sc_0..sc_n, r (and optionally episode, s_i)")
    analyze.add_argument("--variant", choices=["reward", "discounted"], default="reward")
    analyze.add_argument("--discount", type=float, default=0.99)
    analyze.add_argument("--tau", type=float, default=0.9)
    analyze.add_argument("--exact-pair-limit", type=int, default=2000)
    analyze.add_argument("--out", help="Write the array as CSV instead of printing it")
    analyze.set_defaults(handler=cmd_analyze)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    load_dotenv()
    configure_logging(get_settings().log_level)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_USAGE

    try:
        return args.handler(args)
    except USAGE_ERRORS as e:
        logger.error(str(e))
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except METHOD_ERRORS as e:
        logger.error(str(e))
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
