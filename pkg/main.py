#!/usr/bin/env python3
"""
Main entry point for JunctionMind RL.
Reward-function benchmark for DQN traffic-signal control at a four-arm junction.
"""

import os
import sys
import argparse
import logging
from pathlib import Path

# Add the current directory to the path
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from core.config_loader import PROFILE_ALIASES, ConfigLoader
from core.experiment_runner import CONTROLLERS, ExperimentRunner, RunSummary
from core.results_store import ResultsStore
from core.rewards import list_rewards

logger = logging.getLogger(__name__)

PROFILES = ["desk", "full", *PROFILE_ALIASES]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="JunctionMind RL - reward benchmark for DQN signal control")
    parser.add_argument("--config", "-c", default="config.yaml", help="Configuration file path")
    parser.add_argument("--profile", "-p", choices=PROFILES, help="Apply a named profile")
    parser.add_argument("--verbose", "-v", action="store_true", help="Debug logging")
    subparsers = parser.add_subparsers(dest="command", required=True)

    # Subcommand copy of --profile; leaving it out keeps the global value
    profile_args = argparse.ArgumentParser(add_help=False)
    profile_args.add_argument("--profile", "-p", choices=PROFILES, default=argparse.SUPPRESS,
                              help="Apply a named profile")

    train = subparsers.add_parser("train", parents=[profile_args],
                                  help="Train DQN replicas for one reward configuration")
    train.add_argument("--reward", "-r", required=True, help="Reward catalogue name (see list-rewards)")
    train.add_argument("--episodes", type=int, help="Training episodes per replica")
    train.add_argument("--replicas", type=int, help="Independently seeded replicas")
    train.add_argument("--seed", type=int, help="Base seed")
    train.add_argument("--output", "-o", help="Output directory")
    train.add_argument("--resume", action="store_true", help="Resume replicas from their checkpoints")

    scenario_args = argparse.ArgumentParser(add_help=False)
    scenario_args.add_argument("--scenario", default="normal",
                               help="normal, peak, oversaturated or custom")
    scenario_args.add_argument("--vehicle-rate", type=float, help="Override the vehicle demand (veh/h)")
    scenario_args.add_argument("--ped-rate", type=float, help="Override the pedestrian demand (ped/h)")
    scenario_args.add_argument("--controller", choices=CONTROLLERS, default="mo", help="Controller to run")
    scenario_args.add_argument("--checkpoint", help="Checkpoint directory for the dqn controller")
    scenario_args.add_argument("--reward", "-r", help="Reward name recorded with the run")
    scenario_args.add_argument("--seed", type=int, help="Seed (base seed for evaluate)")

    evaluate = subparsers.add_parser("evaluate", parents=[scenario_args, profile_args],
                                     help="Greedy evaluation over independent replications")
    evaluate.add_argument("--replications", "-n", type=int, help="Number of replications")
    evaluate.add_argument("--output", "-o", help="Output directory")

    trace = subparsers.add_parser("trace", parents=[scenario_args, profile_args],
                                  help="Write a JSONL decision trace")
    trace.add_argument("--output", "-o", help="Trace file path")

    report = subparsers.add_parser("report", parents=[profile_args],
                                   help="Comparison table from evaluation summaries")
    report.add_argument("files", nargs="*", help="Summary JSON files written by evaluate")
    report.add_argument("--from-store", action="store_true", help="Use every run in the results database")
    report.add_argument("--scenario", help="Only runs of this scenario (with --from-store)")
    report.add_argument("--output", "-o", help="Output directory")

    subparsers.add_parser("list-rewards", parents=[profile_args], help="List the 30 reward configurations")
    subparsers.add_parser("stats", parents=[profile_args], help="Show results database statistics")
    return parser


def main(argv=None):
    """Main function with command line interface."""
    args = build_parser().parse_args(argv)

    logging.basicConfig(format='%(asctime)s - %(name)s - %(levelname)s - %(message)s')
    logging.getLogger().setLevel(logging.DEBUG if args.verbose else logging.INFO)

    try:
        config = ConfigLoader(args.config, profile=args.profile)
        if not args.verbose:
            level = str(config.get('logging.level', 'INFO')).upper()
            logging.getLogger().setLevel(getattr(logging, level, logging.INFO))

        if args.command == "list-rewards":
            show_rewards()
            return
        if args.command == "stats":
            show_statistics(config)
            return

        runner = ExperimentRunner(config)
        if args.command == "train":
            train_reward(runner, args)
        elif args.command == "evaluate":
            evaluate_controller(runner, args)
        elif args.command == "trace":
            path = runner.trace(args.controller, args.scenario, seed=args.seed, checkpoint=args.checkpoint,
                                reward_name=args.reward, output_path=args.output,
                                scenario_overrides=scenario_overrides(args))
            print(f"✅ Trace written to {path}")
        elif args.command == "report":
            build_report(runner, config, args)

    except KeyboardInterrupt:
        print("\nInterrupted.")
        sys.exit(130)
    except Exception as e:
        logger.error(f"Error: {e}")
        sys.exit(1)


def scenario_overrides(args):
    return {'vehicle_rate': args.vehicle_rate, 'ped_rate': args.ped_rate}


def show_rewards():
    """Print every catalogue name with its table label."""
    rewards = list_rewards()
    print(f"\n🏁 Reward configurations ({len(rewards)})")
    print("=" * 50)
    for name, label in rewards:
        print(f"  {name:<26} {label}")


def train_reward(runner, args):
    selection = runner.train(args.reward, replicas=args.replicas, episodes=args.episodes, seed=args.seed,
                             output_dir=args.output, resume=args.resume)

    print(f"\n🚦 Training finished: {selection['reward_name']}")
    print("=" * 50)
    print(f"Selection scenario: {selection['scenario']} ({selection['selection_replications']} replications)")
    for controller, value in selection['baselines'].items():
        print(f"  {controller.upper()} combined mean wait: {value:.2f} s")
    for entry in selection['replicas']:
        if entry.get('status') != 'ok':
            print(f"  ❌ replica {entry['replica']}: {entry.get('error', 'failed')}")
            continue
        marker = "⭐" if entry['best'] else "  "
        print(f"  {marker} replica {entry['replica']}: {entry['combined_mean']:.2f} s "
              f"(vs MO {entry['margin_vs_mo']:+.2f}, vs VA {entry['margin_vs_va']:+.2f})")
    if selection['best_checkpoint']:
        print(f"\nBest checkpoint: {selection['best_checkpoint']}")


def evaluate_controller(runner, args):
    summary, _ = runner.evaluate(args.controller, args.scenario, replications=args.replications,
                                 seed_base=args.seed, checkpoint=args.checkpoint, reward_name=args.reward,
                                 scenario_overrides=scenario_overrides(args), output_dir=args.output)
    row = summary.table_row()
    print(f"\n📊 {row['label']} on {row['scenario']} ({row['replications']} replications)")
    print("=" * 50)
    print(f"Vehicles:    {row['vehicles']} s")
    print(f"Pedestrians: {row['pedestrians']} s")
    print(f"Combined:    {summary.combined_mean:.2f} s")


def build_report(runner, config, args):
    if args.from_store:
        store = ResultsStore(config.get('storage', {}))
        try:
            runs = store.get_runs(scenario=args.scenario)
        finally:
            store.close()
        summaries = [RunSummary(**{k: v for k, v in run.items() if k in RunSummary.__dataclass_fields__})
                     for run in runs]
    else:
        missing = [f for f in args.files if not Path(f).exists()]
        if missing:
            raise FileNotFoundError(f"Summary files not found: {', '.join(missing)}")
        summaries = runner.load_summaries(args.files)

    table, _ = runner.report(summaries, output_dir=args.output)
    print("\n📋 Comparison (mean ± std waiting time, s)")
    print("=" * 70)
    print(table.to_string(index=False))


def show_statistics(config):
    """Show results database statistics."""
    store = ResultsStore(config.get('storage', {}))
    try:
        stats = store.get_statistics()
    finally:
        store.close()

    print("\n📊 JunctionMind RL Statistics")
    print("=" * 30)
    print(f"Evaluation runs: {stats.get('total_runs', 0)}")
    print(f"Replications: {stats.get('total_replications', 0)}")
    print(f"Database size: {stats.get('database_size', 0) / 1024 / 1024:.1f} MB")

    if stats.get('by_controller'):
        print("\nRuns by controller:")
        for controller, count in stats['by_controller'].items():
            print(f"  {controller}: {count}")

    if stats.get('best_by_scenario'):
        print("\nBest combined mean wait per scenario:")
        for best in stats['best_by_scenario']:
            label = best['reward_name'] or best['controller']
            print(f"  {best['scenario']}: {label} ({best['combined_mean']:.2f} s)")


if __name__ == "__main__":
    main()
