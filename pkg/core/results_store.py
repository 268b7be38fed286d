#!/usr/bin/env python3
"""
Results store for JunctionMind RL.
Keeps every evaluation run and its per-replication metrics in SQLite.
"""

import json
import logging
import sqlite3
from pathlib import Path
from typing import Any, Dict, List, Optional

logger = logging.getLogger(__name__)


class ResultsStore:
    """Registry of RunSummaries and MetricsRecords."""

    def __init__(self, config: Dict):
        self.config = config
        self.db_path = config.get('results_db', './data/results.sqlite')

        if self.db_path != ':memory:':
            Path(self.db_path).parent.mkdir(parents=True, exist_ok=True)

        self._init_sqlite_db()

    def _init_sqlite_db(self):
        """Initialize SQLite database with required tables."""
        self.conn = sqlite3.connect(self.db_path, check_same_thread=False)
        self.conn.row_factory = sqlite3.Row
        self.conn.execute("PRAGMA foreign_keys = ON")

        self._create_tables()
        logger.info(f"Results database initialized: {self.db_path}")

    def _create_tables(self):
        """Create tables for runs and replications."""

        self.conn.execute('''
            CREATE TABLE IF NOT EXISTS runs (
                id INTEGER PRIMARY KEY AUTOINCREMENT,
                reward_name TEXT,
                controller TEXT NOT NULL,
                scenario TEXT NOT NULL,
                replications INTEGER NOT NULL,
                vehicle_mean REAL NOT NULL,
                vehicle_std REAL NOT NULL,
                ped_mean REAL NOT NULL,
                ped_std REAL NOT NULL,
                combined_mean REAL NOT NULL,
                seed_base INTEGER NOT NULL,
                config_hash TEXT NOT NULL,
                sim_config_hash TEXT NOT NULL,
                code_version TEXT NOT NULL,
                checkpoint TEXT,
                summary_json TEXT,
                created_date TIMESTAMP DEFAULT CURRENT_TIMESTAMP
            )
        ''')

        self.conn.execute('''
            CREATE TABLE IF NOT EXISTS replications (
                run_id INTEGER NOT NULL,
                replication INTEGER NOT NULL,
                seed INTEGER NOT NULL,
                mean_vehicle_wait REAL NOT NULL,
                mean_ped_wait REAL NOT NULL,
                vehicles_exited INTEGER,
                peds_exited INTEGER,
                metrics_json TEXT,
                PRIMARY KEY (run_id, replication),
                FOREIGN KEY (run_id) REFERENCES runs(id)
            )
        ''')

        indexes = [
            "CREATE INDEX IF NOT EXISTS idx_runs_scenario ON runs(scenario)",
            "CREATE INDEX IF NOT EXISTS idx_runs_reward ON runs(reward_name)",
        ]
        for index_sql in indexes:
            try:
                self.conn.execute(index_sql)
            except sqlite3.Error as e:
                logger.warning(f"Failed to create index: {e}")

        self.conn.commit()

    def store_run(self, summary: Dict, records: List[Dict]) -> int:
        """Store one RunSummary and its per-replication records; returns the run id."""
        try:
            cursor = self.conn.execute('''
                INSERT INTO runs (reward_name, controller, scenario, replications,
                                  vehicle_mean, vehicle_std, ped_mean, ped_std, combined_mean,
                                  seed_base, config_hash, sim_config_hash, code_version,
                                  checkpoint, summary_json)
                VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?)
            ''', (
                summary.get('reward_name'), summary['controller'], summary['scenario'],
                summary['replications'], summary['vehicle_mean'], summary['vehicle_std'],
                summary['ped_mean'], summary['ped_std'], summary['combined_mean'],
                summary['seed_base'], summary['config_hash'], summary['sim_config_hash'],
                summary['code_version'], summary.get('checkpoint'),
                json.dumps(summary, sort_keys=True, default=str),
            ))
            run_id = cursor.lastrowid
            self.conn.executemany('''
                INSERT INTO replications (run_id, replication, seed, mean_vehicle_wait, mean_ped_wait,
                                          vehicles_exited, peds_exited, metrics_json)
                VALUES (?, ?, ?, ?, ?, ?, ?, ?)
            ''', [
                (run_id, r['replication'], r['seed'], r['mean_vehicle_wait'], r['mean_ped_wait'],
                 r.get('vehicles_exited'), r.get('peds_exited'), json.dumps(r, sort_keys=True, default=str))
                for r in records
            ])
            self.conn.commit()
            logger.info(f"Stored run {run_id}: {summary['controller']} on {summary['scenario']}")
            return run_id
        except sqlite3.Error as e:
            self.conn.rollback()
            logger.error(f"Failed to store run: {e}")
            raise

    def get_run(self, run_id: int) -> Optional[Dict]:
        row = self.conn.execute('SELECT * FROM runs WHERE id = ?', (run_id,)).fetchone()
        return self._row_to_summary(row) if row else None

    def get_runs(self, scenario: Optional[str] = None, reward_name: Optional[str] = None) -> List[Dict]:
        sql = 'SELECT * FROM runs'
        clauses, params = [], []
        if scenario:
            clauses.append('scenario = ?')
            params.append(scenario)
        if reward_name:
            clauses.append('reward_name = ?')
            params.append(reward_name)
        if clauses:
            sql += ' WHERE ' + ' AND '.join(clauses)
        sql += ' ORDER BY id'
        return [self._row_to_summary(row) for row in self.conn.execute(sql, params).fetchall()]

    def get_replications(self, run_id: int) -> List[Dict]:
        rows = self.conn.execute(
            'SELECT metrics_json FROM replications WHERE run_id = ? ORDER BY replication', (run_id,)
        ).fetchall()
        return [json.loads(row['metrics_json']) for row in rows]

    def _row_to_summary(self, row) -> Dict:
        summary = json.loads(row['summary_json']) if row['summary_json'] else {}
        summary.update({'run_id': row['id'], 'created_date': row['created_date']})
        return summary

    def get_statistics(self) -> Dict[str, Any]:
        """Counts and the best run per scenario."""
        stats = {}

        stats['total_runs'] = self.conn.execute('SELECT COUNT(*) FROM runs').fetchone()[0]
        stats['total_replications'] = self.conn.execute('SELECT COUNT(*) FROM replications').fetchone()[0]

        by_controller = self.conn.execute('''
            SELECT controller, COUNT(*) as count
            FROM runs
            GROUP BY controller
        ''').fetchall()
        stats['by_controller'] = {row[0]: row[1] for row in by_controller}

        best = self.conn.execute('''
            SELECT scenario, controller, reward_name, MIN(combined_mean) as combined_mean
            FROM runs
            GROUP BY scenario
            ORDER BY scenario
        ''').fetchall()
        stats['best_by_scenario'] = [
            {'scenario': row[0], 'controller': row[1], 'reward_name': row[2], 'combined_mean': row[3]}
            for row in best
        ]

        if self.db_path != ':memory:':
            stats['database_size'] = self.conn.execute(
                "SELECT page_count * page_size as size FROM pragma_page_count(), pragma_page_size()"
            ).fetchone()[0]

        return stats

    def close(self):
        if getattr(self, 'conn', None) is not None:
            self.conn.close()
            self.conn = None

    def __del__(self):
        """Close database connection."""
        try:
            self.close()
        except Exception:
            pass
