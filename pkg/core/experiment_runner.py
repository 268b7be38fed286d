#!/usr/bin/env python3
"""
Experiment harness for JunctionMind RL.

Trains independently seeded DQN replicas on the demand curriculum, selects
the best one against the reference controllers, evaluates any controller on
the normal, peak and oversaturated scenarios, captures per-decision traces
and builds comparison reports.
"""

import json
import logging
from dataclasses import asdict, dataclass, field
from multiprocessing import Pool
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, List, Optional, Tuple

import numpy as np
import pandas as pd
import psutil
from tqdm import tqdm

from . import __version__
from .baselines import StagePolicy, make_baseline
from .config_loader import ConfigError, ConfigLoader
from .dqn_agent import AgentConfig, DQNAgent, EpisodeStats, TrainingError, curriculum_rate, run_episode
from .environment import SimulationError, TrafficEnvironment
from .neural_net import NetworkConfig, WeightsFileError
from .rewards import named_spec, spec_from_config
from .results_store import ResultsStore
from .simulation import DemandSchedule

logger = logging.getLogger(__name__)

CONTROLLERS = ('dqn', 'mo', 'va', 'random')
SIM_SECTIONS = ('simulation', 'junction', 'controller', 'sensors', 'encoder')


class ReportError(ValueError):
    """Raised when summaries cannot be compared."""


@dataclass
class ScenarioConfig:
    name: str
    vehicle_rate: float
    ped_rate: float
    arm_split: Dict[str, float]
    episode_steps: int = 3000
    replications: int = 100
    seed_base: int = 0

    def demand_overrides(self) -> Dict[str, Any]:
        return {'vehicle_rate': self.vehicle_rate, 'ped_rate': self.ped_rate, 'arm_split': dict(self.arm_split)}


@dataclass
class RunSummary:
    reward_name: Optional[str]
    controller: str
    scenario: str
    replications: int
    vehicle_mean: float
    vehicle_std: float
    ped_mean: float
    ped_std: float
    combined_mean: float
    seed_base: int
    config_hash: str
    sim_config_hash: str
    code_version: str
    checkpoint: Optional[str] = None
    replication_means: List[Dict[str, float]] = field(default_factory=list)

    @property
    def label(self) -> str:
        return self.reward_name if self.controller == 'dqn' and self.reward_name else self.controller

    def to_dict(self) -> Dict:
        return asdict(self)

    def table_row(self) -> Dict[str, Any]:
        return {
            'label': self.label,
            'controller': self.controller,
            'scenario': self.scenario,
            'replications': self.replications,
            'vehicles': f"{self.vehicle_mean:.2f} ± {self.vehicle_std:.2f}",
            'pedestrians': f"{self.ped_mean:.2f} ± {self.ped_std:.2f}",
            'combined': round(self.combined_mean, 2),
        }


def ped_rate_for(vehicle_rate: float, harness: Dict) -> float:
    """Pedestrian demand scaled in proportion to the vehicle demand."""
    return harness.get('ped_rate_base', 360.0) * vehicle_rate / harness.get('ped_rate_reference', 1714.0)


def summarize(records: List[Dict]) -> Dict[str, float]:
    """Mean and population std of the per-replication means."""
    vehicle = np.array([r['mean_vehicle_wait'] for r in records], dtype=float)
    ped = np.array([r['mean_ped_wait'] for r in records], dtype=float)
    return {
        'vehicle_mean': float(vehicle.mean()),
        'vehicle_std': float(vehicle.std(ddof=0)),
        'ped_mean': float(ped.mean()),
        'ped_std': float(ped.std(ddof=0)),
        'combined_mean': float(0.5 * (vehicle.mean() + ped.mean())),
    }


def checkpoint_reward(checkpoint: Optional[str]) -> Optional[str]:
    """Reward name recorded in a checkpoint's agent.json, if any."""
    meta_path = Path(checkpoint) / 'agent.json' if checkpoint else None
    if meta_path is None or not meta_path.exists():
        return None
    return json.loads(meta_path.read_text()).get('reward_name')


def _episode_seed(seed: int, replica: int, episode: int) -> int:
    return int(np.random.SeedSequence([seed, replica, episode]).generate_state(1)[0])


def _worker_count(configured: Optional[int], tasks: int) -> int:
    workers = configured or psutil.cpu_count(logical=False) or 1
    return max(1, min(int(workers), tasks))


def _parallel_map(func: Callable, tasks: List, workers: int, desc: str, progress: bool) -> List:
    """Ordered map over ``tasks``, in worker processes when more than one worker is allowed."""
    disable = None if progress else True
    if workers <= 1:
        return [func(task) for task in tqdm(tasks, desc=desc, disable=disable)]
    with Pool(workers) as pool:
        return list(tqdm(pool.imap(func, tasks), total=len(tasks), desc=desc, disable=disable))


# ----------------------------------------------------------------------
# Process-level tasks (top level so they can be pickled)
# ----------------------------------------------------------------------

def _train_replica_task(args: Tuple[Dict, str, int, int, int, str, bool]) -> Dict:
    config_data, reward_name, replica, episodes, seed, output_dir, resume = args
    runner = ExperimentRunner(ConfigLoader.from_dict(config_data))
    try:
        return runner.train_replica(reward_name, replica, episodes, seed, output_dir, resume=resume)
    except (TrainingError, SimulationError) as e:
        logger.error(f"Replica {replica} of {reward_name} failed: {e}")
        return {'replica': replica, 'status': 'failed', 'error': str(e), 'checkpoint': None}


def _replication_task(args: Tuple[Dict, str, Optional[str], Optional[str], Dict, int, int]) -> Dict:
    config_data, controller, checkpoint, reward_name, scenario_data, replication, seed = args
    runner = ExperimentRunner(ConfigLoader.from_dict(config_data))
    scenario = ScenarioConfig(**scenario_data)
    env = runner.build_environment(scenario, reward_name)
    policy = runner.make_policy(controller, env, checkpoint, seed)
    return runner.run_replication(policy, env, replication, seed)


class ExperimentRunner:
    """Orchestrates training, evaluation, tracing and reporting."""

    def __init__(self, config: ConfigLoader):
        self.config = config
        self.harness = config.get_harness_config()
        self.progress = bool(self.harness.get('progress', True))
        self.output_dir = Path(self.harness.get('output_dir', './runs'))

    # ------------------------------------------------------------------
    # Building blocks
    # ------------------------------------------------------------------

    def scenario(self, name: str, replications: Optional[int] = None, seed_base: Optional[int] = None,
                 overrides: Optional[Dict] = None) -> ScenarioConfig:
        scenarios = self.harness.get('scenarios', {})
        overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
        if name not in scenarios and name != 'custom':
            raise ConfigError(f"Unknown scenario '{name}'. Available: {', '.join(sorted(scenarios))}, custom")
        data = dict(scenarios.get(name, {}))
        data.update(overrides)
        if 'vehicle_rate' not in data:
            raise ConfigError(f"Scenario '{name}' needs a vehicle_rate")
        vehicle_rate = float(data['vehicle_rate'])
        return ScenarioConfig(
            name=name,
            vehicle_rate=vehicle_rate,
            ped_rate=float(data['ped_rate']) if 'ped_rate' in data else ped_rate_for(vehicle_rate, self.harness),
            arm_split=dict(data.get('arm_split') or self.config.get('demand.arm_split')),
            episode_steps=int(data.get('episode_steps', self.harness.get('episode_steps', 3000))),
            replications=int(replications or self.harness.get('replications', 100)),
            seed_base=int(self.harness.get('seed', 0) if seed_base is None else seed_base),
        )

    def reward_spec(self, reward_name: Optional[str]):
        if not reward_name:
            return None
        return spec_from_config(reward_name, self.config.get('rewards', {}))

    def build_environment(self, scenario: ScenarioConfig, reward_name: Optional[str] = None,
                          strict_safety: bool = True) -> TrafficEnvironment:
        return TrafficEnvironment.from_config(self.config, self.reward_spec(reward_name),
                                              demand_overrides=scenario.demand_overrides(),
                                              episode_steps=scenario.episode_steps,
                                              strict_safety=strict_safety)

    def layer_sizes(self, observation_size: int) -> List[int]:
        return NetworkConfig.from_dict(self.config.get('network', {})).layer_sizes(observation_size, 3)

    def make_policy(self, controller: str, env: TrafficEnvironment, checkpoint: Optional[str] = None,
                    seed: int = 0) -> StagePolicy:
        if controller not in CONTROLLERS:
            raise ConfigError(f"Unknown controller '{controller}'; choose one of {', '.join(CONTROLLERS)}")
        if controller == 'dqn':
            if not checkpoint:
                raise ConfigError("The dqn controller needs --checkpoint")
            agent = DQNAgent.load_checkpoint(checkpoint)
            if agent.network.layer_sizes[0] != env.observation_size:
                raise WeightsFileError(f"Checkpoint input size {agent.network.layer_sizes[0]} does not match "
                                       f"observation size {env.observation_size}")
            agent.epsilon = 0.0
            return agent
        return make_baseline(controller, env.controller, self.config.get('baselines', {}), seed=seed)

    def sim_config_hash(self) -> str:
        return self.config.section_hash(*SIM_SECTIONS)

    def run_replication(self, policy: StagePolicy, env: TrafficEnvironment, replication: int,
                        seed: int) -> Dict:
        """One evaluation run with a greedy policy; returns its MetricsRecord."""
        policy.reset(seed)
        observation = env.reset(seed)
        while not env.done:
            stage = policy.act(observation, env.frame, env.ctrl)
            observation, _, _, _ = env.step(stage)
        record = {'replication': replication, 'seed': seed}
        record.update(env.metrics().to_dict())
        return record

    # ------------------------------------------------------------------
    # Evaluate
    # ------------------------------------------------------------------

    def evaluate(self, controller: str, scenario_name: str = 'normal', replications: Optional[int] = None,
                 seed_base: Optional[int] = None, checkpoint: Optional[str] = None,
                 reward_name: Optional[str] = None, scenario_overrides: Optional[Dict] = None,
                 output_dir: Optional[str] = None, store: bool = True) -> Tuple[RunSummary, pd.DataFrame]:
        """Greedy evaluation over independent replications; writes the CSV and the summary JSON."""
        scenario = self.scenario(scenario_name, replications, seed_base, scenario_overrides)
        if controller == 'dqn' and not reward_name:
            reward_name = checkpoint_reward(checkpoint)

        logger.info(f"Evaluating {controller} on {scenario.name} ({scenario.vehicle_rate:.0f} veh/h, "
                    f"{scenario.replications} replications, seed base {scenario.seed_base})")
        tasks = [(self.config.config, controller, checkpoint, reward_name, asdict(scenario), i,
                  scenario.seed_base + i) for i in range(scenario.replications)]
        workers = _worker_count(self.harness.get('parallel_workers'), len(tasks))
        records = _parallel_map(_replication_task, tasks, workers, f"{controller}/{scenario.name}", self.progress)

        stats = summarize(records)
        summary = RunSummary(
            reward_name=reward_name if controller == 'dqn' else None,
            controller=controller,
            scenario=scenario.name,
            replications=scenario.replications,
            seed_base=scenario.seed_base,
            config_hash=self.config.config_hash(),
            sim_config_hash=self.sim_config_hash(),
            code_version=__version__,
            checkpoint=checkpoint,
            replication_means=[{'replication': r['replication'], 'vehicle': r['mean_vehicle_wait'],
                                'pedestrian': r['mean_ped_wait']} for r in records],
            **stats,
        )
        frame = pd.DataFrame(records)

        out = Path(output_dir) if output_dir else self.output_dir / 'eval'
        out.mkdir(parents=True, exist_ok=True)
        stem = f"{summary.label}_{scenario.name}"
        frame.to_csv(out / f"{stem}.csv", index=False)
        with open(out / f"{stem}_summary.json", 'w') as f:
            json.dump(summary.to_dict(), f, indent=2, sort_keys=True)
        logger.info(f"{summary.label} on {scenario.name}: vehicles {summary.vehicle_mean:.2f} ± "
                    f"{summary.vehicle_std:.2f} s, pedestrians {summary.ped_mean:.2f} ± {summary.ped_std:.2f} s")

        if store:
            results = ResultsStore(self.config.get('storage', {}))
            try:
                results.store_run(summary.to_dict(), records)
            finally:
                results.close()
        return summary, frame

    # ------------------------------------------------------------------
    # Train
    # ------------------------------------------------------------------

    def train_replica(self, reward_name: str, replica: int, episodes: int, seed: int, output_dir: str,
                      resume: bool = False) -> Dict:
        """Train one agent on the curriculum; writes its checkpoint and training log."""
        replica_dir = Path(output_dir) / f"replica_{replica:02d}"
        curriculum = self.harness.get('curriculum', {})
        start_rate = curriculum.get('start_rate', 1200.0)
        end_rate = curriculum.get('end_rate', 2571.0)
        log_every = max(1, int(self.harness.get('log_every', 10)))
        checkpoint_every = int(self.harness.get('checkpoint_every', 0) or 0)

        base = self.scenario('custom', overrides={'vehicle_rate': start_rate})
        env = self.build_environment(base, reward_name)
        agent_config = AgentConfig.from_dict(self.config.get_agent_config())
        dtype = self.config.get('network.dtype', 'float64')

        rows: List[Dict] = []
        if resume and (replica_dir / 'agent.json').exists():
            agent = DQNAgent.load_checkpoint(str(replica_dir), agent_config)
            log_path = replica_dir / 'training_log.csv'
            if log_path.exists():
                rows = pd.read_csv(log_path).to_dict('records')[:agent.episodes_done]
            logger.info(f"Resuming replica {replica} at episode {agent.episodes_done + 1}")
        else:
            agent = DQNAgent(agent_config, self.layer_sizes(env.observation_size), seed=seed + replica,
                             reward_name=reward_name, replica=replica, dtype=dtype)

        demand_base = dict(self.config.get('demand', {}))
        for episode in tqdm(range(agent.episodes_done + 1, episodes + 1), desc=f"replica {replica}",
                            disable=None if self.progress else True, position=replica, leave=False):
            rate = curriculum_rate(episode, episodes, start_rate, end_rate)
            demand_base.update({'vehicle_rate': rate, 'ped_rate': ped_rate_for(rate, self.harness)})
            env.set_demand(DemandSchedule.from_dict(demand_base))
            agent.set_episode_epsilon(episode, episodes)

            result = run_episode(agent, env, train_mode=True, seed=_episode_seed(seed, replica, episode))
            metrics = env.metrics()
            stats = EpisodeStats(
                episode=episode, epsilon=result['epsilon'], vehicle_rate=rate,
                total_reward=result['total_reward'], decisions=result['decisions'],
                mean_loss=float(np.mean(result['losses'])) if result['losses'] else None,
                updates=len(result['losses']), synced=result['synced'],
                mean_vehicle_wait=metrics.mean_vehicle_wait, mean_ped_wait=metrics.mean_ped_wait,
            )
            rows.append(stats.to_dict())
            if episode % log_every == 0 or episode == episodes:
                logger.info(f"[{reward_name} r{replica}] episode {episode}/{episodes} rate {rate:.0f} "
                            f"eps {stats.epsilon:.3f} reward {stats.total_reward:.2f} "
                            f"veh wait {stats.mean_vehicle_wait:.2f}s ped wait {stats.mean_ped_wait:.2f}s")
            if checkpoint_every and episode % checkpoint_every == 0 and episode < episodes:
                agent.save_checkpoint(str(replica_dir))
                pd.DataFrame(rows).to_csv(replica_dir / 'training_log.csv', index=False)

        agent.save_checkpoint(str(replica_dir), extra={'config_hash': self.config.config_hash()})
        pd.DataFrame(rows).to_csv(replica_dir / 'training_log.csv', index=False)
        return {'replica': replica, 'status': 'ok', 'checkpoint': str(replica_dir),
                'episodes': agent.episodes_done}

    def train(self, reward_name: str, replicas: Optional[int] = None, episodes: Optional[int] = None,
              seed: Optional[int] = None, output_dir: Optional[str] = None, resume: bool = False) -> Dict:
        """Train ``replicas`` agents, evaluate them against the baselines and record the best."""
        named_spec(reward_name)
        replicas = int(replicas or self.harness.get('replicas', 10))
        episodes = int(episodes or self.harness.get('episodes', 1500))
        seed = int(self.harness.get('seed', 0) if seed is None else seed)
        out = Path(output_dir) if output_dir else self.output_dir / 'train' / reward_name
        out.mkdir(parents=True, exist_ok=True)

        logger.info(f"Training {replicas} replicas of {reward_name} for {episodes} episodes (seed {seed})")
        tasks = [(self.config.config, reward_name, r, episodes, seed, str(out), resume) for r in range(replicas)]
        workers = _worker_count(self.harness.get('parallel_workers'), len(tasks))
        results = _parallel_map(_train_replica_task, tasks, workers, f"train {reward_name}", self.progress)

        selection = self.select_best(reward_name, results, seed, str(out))
        with open(out / 'selection.json', 'w') as f:
            json.dump(selection, f, indent=2, sort_keys=True)
        logger.info(f"Selection written to {out / 'selection.json'} (best replica: {selection.get('best_replica')})")
        return selection

    def select_best(self, reward_name: str, results: List[Dict], seed: int, output_dir: str) -> Dict:
        """Score every trained replica on the selection scenario next to both baselines."""
        scenario_name = self.harness.get('selection_scenario', 'peak')
        n = int(self.harness.get('selection_replications', 3))
        seed_base = seed + int(self.harness.get('selection_seed_offset', 100000))
        eval_dir = str(Path(output_dir) / 'selection')

        baselines = {}
        for controller in ('mo', 'va'):
            summary, _ = self.evaluate(controller, scenario_name, n, seed_base, output_dir=eval_dir, store=False)
            baselines[controller] = summary.combined_mean

        entries = []
        for result in results:
            entry = dict(result)
            if result.get('status') == 'ok':
                summary, _ = self.evaluate('dqn', scenario_name, n, seed_base, checkpoint=result['checkpoint'],
                                           reward_name=reward_name, output_dir=eval_dir, store=False)
                entry.update({
                    'combined_mean': summary.combined_mean,
                    'vehicle_mean': summary.vehicle_mean,
                    'ped_mean': summary.ped_mean,
                    'margin_vs_mo': baselines['mo'] - summary.combined_mean,
                    'margin_vs_va': baselines['va'] - summary.combined_mean,
                })
            entries.append(entry)

        scored = [e for e in entries if 'combined_mean' in e]
        best = min(scored, key=lambda e: (e['combined_mean'], e['replica'])) if scored else None
        for entry in entries:
            entry['best'] = best is not None and entry['replica'] == best['replica']
        return {
            'reward_name': reward_name,
            'scenario': scenario_name,
            'selection_replications': n,
            'seed': seed,
            'baselines': baselines,
            'replicas': entries,
            'best_replica': best['replica'] if best else None,
            'best_checkpoint': best['checkpoint'] if best else None,
            'config_hash': self.config.config_hash(),
            'code_version': __version__,
        }

    # ------------------------------------------------------------------
    # Trace
    # ------------------------------------------------------------------

    def trace(self, controller: str, scenario_name: str = 'peak', seed: Optional[int] = None,
              checkpoint: Optional[str] = None, reward_name: Optional[str] = None,
              output_path: Optional[str] = None, scenario_overrides: Optional[Dict] = None) -> Path:
        """One episode written as JSONL, one record per decision point plus the closing interval."""
        scenario = self.scenario(scenario_name, 1, seed, scenario_overrides)
        seed = scenario.seed_base
        if controller == 'dqn' and not reward_name:
            reward_name = checkpoint_reward(checkpoint)
        reward_name = reward_name or 'queues'
        env = self.build_environment(scenario, reward_name)
        policy = self.make_policy(controller, env, checkpoint, seed)
        path = Path(output_path) if output_path else self.output_dir / 'traces' / f"{controller}_{scenario.name}_{seed}.jsonl"
        path.parent.mkdir(parents=True, exist_ok=True)

        policy.reset(seed)
        observation = env.reset(seed)
        pending: Dict[str, Any] = {'reward': None, 'context': None, 'rewards': None}
        try:
            with open(path, 'w') as f:
                while not env.done:
                    stage = policy.act(observation, env.frame, env.ctrl)
                    f.write(json.dumps(self._trace_record('decision', env, stage, pending)) + '\n')
                    observation, reward, _, info = env.step(stage)
                    context = info['context']
                    pending = {'reward': reward, 'context': context.to_dict(),
                               'rewards': env.all_rewards(context)}
                f.write(json.dumps(self._trace_record('episode_end', env, None, pending)) + '\n')
        except OSError as e:
            logger.error(f"Failed to write trace {path}: {e}")
            raise
        logger.info(f"Trace with {env.decisions} decisions written to {path}")
        return path

    def _trace_record(self, kind: str, env: TrafficEnvironment, stage: Optional[int],
                      pending: Dict[str, Any]) -> Dict[str, Any]:
        return {
            'kind': kind,
            'decision': env.decisions,
            'step': env.world.step,
            't': env.time,
            'controller_state': env.ctrl.to_dict(),
            'frame': env.frame.to_dict(),
            'action': stage,
            'reward_name': env.reward_spec.name if env.reward_spec else None,
            'reward': pending['reward'],
            'rewards': pending['rewards'],
            'context': pending['context'],
        }

    # ------------------------------------------------------------------
    # Report
    # ------------------------------------------------------------------

    @staticmethod
    def load_summaries(paths: Iterable[str]) -> List[RunSummary]:
        summaries = []
        for path in paths:
            with open(path) as f:
                data = json.load(f)
            known = {k: v for k, v in data.items() if k in RunSummary.__dataclass_fields__}
            summaries.append(RunSummary(**known))
        return summaries

    def report(self, summaries: List[RunSummary], output_dir: Optional[str] = None) -> Tuple[pd.DataFrame, pd.DataFrame]:
        """Comparison table sorted by combined mean wait, plus the long-format CSV for box plots."""
        if not summaries:
            raise ReportError("report needs at least one summary")
        hashes = {s.sim_config_hash for s in summaries}
        if len(hashes) > 1:
            raise ReportError(f"Summaries come from {len(hashes)} different simulation configurations; "
                              f"refusing to compare them")

        table = pd.DataFrame([s.table_row() for s in summaries])
        table = table.sort_values(['combined', 'label', 'scenario'], kind='mergesort').reset_index(drop=True)

        long_rows = []
        for s in summaries:
            for entry in s.replication_means:
                for mode in ('vehicle', 'pedestrian'):
                    long_rows.append({'reward': s.label, 'scenario': s.scenario, 'mode': mode,
                                      'replication': entry['replication'], 'mean_wait': entry[mode]})
        long_format = pd.DataFrame(long_rows, columns=['reward', 'scenario', 'mode', 'replication', 'mean_wait'])

        out = Path(output_dir) if output_dir else self.output_dir / 'report'
        out.mkdir(parents=True, exist_ok=True)
        table.to_csv(out / 'comparison.csv', index=False)
        long_format.to_csv(out / 'waits_long.csv', index=False)
        logger.info(f"Report with {len(table)} rows written to {out}")
        return table, long_format
