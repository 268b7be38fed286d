#!/usr/bin/env python3
"""Tests for the SQLite results store."""

import logging
import shutil
import tempfile
from pathlib import Path

from core.results_store import ResultsStore

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)


def make_summary(controller='mo', scenario='normal', reward_name=None, combined=20.0):
    return {
        'reward_name': reward_name, 'controller': controller, 'scenario': scenario, 'replications': 2,
        'vehicle_mean': combined + 1.0, 'vehicle_std': 0.5, 'ped_mean': combined - 1.0, 'ped_std': 0.25,
        'combined_mean': combined, 'seed_base': 0, 'config_hash': 'c' * 64, 'sim_config_hash': 's' * 64,
        'code_version': '1.0.0', 'checkpoint': None,
        'replication_means': [{'replication': 0, 'vehicle': combined + 0.5, 'pedestrian': combined - 1.25},
                              {'replication': 1, 'vehicle': combined + 1.5, 'pedestrian': combined - 0.75}],
    }


def make_records():
    return [
        {'replication': 0, 'seed': 0, 'mean_vehicle_wait': 20.5, 'mean_ped_wait': 18.75, 'vehicles_exited': 400,
         'peds_exited': 80, 'decisions': 150},
        {'replication': 1, 'seed': 1, 'mean_vehicle_wait': 21.5, 'mean_ped_wait': 19.25, 'vehicles_exited': 410,
         'peds_exited': 77, 'decisions': 148},
    ]


def test_store_and_fetch_run():
    print("🧪 Testing the results store")
    print("=" * 50)
    store = ResultsStore({'results_db': ':memory:'})
    try:
        run_id = store.store_run(make_summary(), make_records())
        run = store.get_run(run_id)
        assert run['controller'] == 'mo' and run['scenario'] == 'normal'
        assert run['combined_mean'] == 20.0
        assert run['run_id'] == run_id
        assert len(run['replication_means']) == 2

        replications = store.get_replications(run_id)
        assert [r['seed'] for r in replications] == [0, 1]
        assert replications[1]['decisions'] == 148
        assert store.get_run(run_id + 1) is None
        print("✅ Run and replications stored")
    finally:
        store.close()


def test_filters_and_statistics():
    store = ResultsStore({'results_db': ':memory:'})
    try:
        store.store_run(make_summary('mo', 'normal', combined=22.0), make_records())
        store.store_run(make_summary('va', 'normal', combined=19.0), make_records())
        store.store_run(make_summary('dqn', 'peak', reward_name='queues', combined=30.0), make_records())

        assert len(store.get_runs()) == 3
        assert [r['controller'] for r in store.get_runs(scenario='normal')] == ['mo', 'va']
        assert [r['scenario'] for r in store.get_runs(reward_name='queues')] == ['peak']

        stats = store.get_statistics()
        assert stats['total_runs'] == 3 and stats['total_replications'] == 6
        assert stats['by_controller'] == {'dqn': 1, 'mo': 1, 'va': 1}
        best = {b['scenario']: b for b in stats['best_by_scenario']}
        assert best['normal']['controller'] == 'va' and best['normal']['combined_mean'] == 19.0
        assert best['peak']['reward_name'] == 'queues'
        assert 'database_size' not in stats
    finally:
        store.close()


def test_database_file_is_created():
    temp_dir = Path(tempfile.mkdtemp())
    try:
        db_path = temp_dir / 'nested' / 'results.sqlite'
        store = ResultsStore({'results_db': str(db_path)})
        store.store_run(make_summary(), make_records())
        assert store.get_statistics()['database_size'] > 0
        store.close()
        assert db_path.exists()

        reopened = ResultsStore({'results_db': str(db_path)})
        assert len(reopened.get_runs()) == 1, "Runs must persist across connections"
        reopened.close()
    finally:
        shutil.rmtree(temp_dir)


if __name__ == "__main__":
    test_store_and_fetch_run()
    test_filters_and_statistics()
    test_database_file_is_created()
    print("\n🎉 Results store tests passed!")
