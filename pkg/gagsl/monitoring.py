"""
Trial tracking for experiment runs.
Every trial of every stage is logged to a SQLite database inside the run directory.
"""
import json
import logging
import sqlite3
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional

from gagsl.config import TRIALS_DB_NAME

logger = logging.getLogger(__name__)


class TrialTracker:
    """Track and store per-trial outcomes of a run."""

    def __init__(self, run_dir):
        self.db_path = Path(run_dir) / TRIALS_DB_NAME
        self.db_path.parent.mkdir(parents=True, exist_ok=True)
        self._init_database()

    def _init_database(self):
        """Initialize SQLite database for trial logs."""
        conn = sqlite3.connect(self.db_path)
        cursor = conn.cursor()

        cursor.execute("""
            CREATE TABLE IF NOT EXISTS trial_logs (
                id INTEGER PRIMARY KEY AUTOINCREMENT,
                timestamp TEXT NOT NULL,
                stage TEXT NOT NULL,
                trial INTEGER NOT NULL,
                seed INTEGER NOT NULL,
                model TEXT NOT NULL,
                attack TEXT,
                rate REAL,
                auc REAL,
                f1_macro REAL,
                f1_micro REAL,
                best_epoch INTEGER,
                runtime REAL NOT NULL,
                success BOOLEAN NOT NULL,
                error_message TEXT,
                extra TEXT
            )
        """)

        conn.commit()
        conn.close()

    def log_trial(
        self,
        stage: str,
        trial: int,
        seed: int,
        model: str,
        runtime: float,
        attack: Optional[str] = None,
        rate: Optional[float] = None,
        auc: Optional[float] = None,
        f1_macro: Optional[float] = None,
        f1_micro: Optional[float] = None,
        best_epoch: Optional[int] = None,
        success: bool = True,
        error_message: Optional[str] = None,
        extra: Optional[Dict[str, Any]] = None,
    ):
        """Log one trial with its metrics."""
        try:
            conn = sqlite3.connect(self.db_path)
            cursor = conn.cursor()

            cursor.execute("""
                INSERT INTO trial_logs (
                    timestamp, stage, trial, seed, model, attack, rate, auc, f1_macro,
                    f1_micro, best_epoch, runtime, success, error_message, extra
                )
                VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?)
            """, (
                datetime.now().isoformat(),
                stage,
                trial,
                seed,
                model,
                attack,
                rate,
                auc,
                f1_macro,
                f1_micro,
                best_epoch,
                runtime,
                success,
                error_message,
                json.dumps(extra, sort_keys=True) if extra else None,
            ))

            conn.commit()
            conn.close()
        except sqlite3.Error as e:
            logger.warning("Error logging trial %d of %s: %s", trial, stage, e)

    def get_trials(self, stage: Optional[str] = None, model: Optional[str] = None) -> List[Dict[str, Any]]:
        """Trials in insertion order, optionally filtered."""
        conn = sqlite3.connect(self.db_path)
        conn.row_factory = sqlite3.Row
        cursor = conn.cursor()

        query = "SELECT * FROM trial_logs WHERE 1 = 1"
        params: List[Any] = []
        if stage is not None:
            query += " AND stage = ?"
            params.append(stage)
        if model is not None:
            query += " AND model = ?"
            params.append(model)
        cursor.execute(query + " ORDER BY id", params)

        rows = cursor.fetchall()
        conn.close()

        return [dict(row) for row in rows]

    def get_summary(self) -> Dict[str, Dict[str, Any]]:
        """Trial count, success rate, mean metrics and runtime per model."""
        conn = sqlite3.connect(self.db_path)
        cursor = conn.cursor()

        cursor.execute("""
            SELECT
                model,
                COUNT(*) as total_trials,
                SUM(CASE WHEN success = 1 THEN 1 ELSE 0 END) * 1.0 / COUNT(*) as success_rate,
                AVG(auc) as avg_auc,
                AVG(f1_macro) as avg_f1_macro,
                AVG(f1_micro) as avg_f1_micro,
                AVG(runtime) as avg_runtime
            FROM trial_logs
            GROUP BY model
            ORDER BY model
        """)

        rows = cursor.fetchall()
        conn.close()

        return {
            row[0]: {
                "total_trials": row[1],
                "success_rate": round(row[2] or 0, 3),
                "avg_auc": round(row[3] or 0, 4),
                "avg_f1_macro": round(row[4] or 0, 4),
                "avg_f1_micro": round(row[5] or 0, 4),
                "avg_runtime": round(row[6] or 0, 3),
            }
            for row in rows
        }

    def get_failed_trials(self, limit: int = 20) -> List[Dict[str, Any]]:
        """Failed trials for review."""
        conn = sqlite3.connect(self.db_path)
        conn.row_factory = sqlite3.Row
        cursor = conn.cursor()

        cursor.execute("""
            SELECT timestamp, stage, trial, seed, model, attack, rate, error_message
            FROM trial_logs
            WHERE success = 0
            ORDER BY id DESC
            LIMIT ?
        """, (limit,))

        rows = cursor.fetchall()
        conn.close()

        return [dict(row) for row in rows]


# Trackers by run directory
_trackers: Dict[str, TrialTracker] = {}


def get_trial_tracker(run_dir) -> TrialTracker:
    """Get or create the tracker of a run directory."""
    key = str(Path(run_dir).resolve())
    if key not in _trackers:
        _trackers[key] = TrialTracker(run_dir)
    return _trackers[key]
