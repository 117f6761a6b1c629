"""
Test suite for the SQLite trial tracker.
"""
import logging

from gagsl.monitoring import TrialTracker, get_trial_tracker


class TestTrialTracker:
    """Test trial logging and queries."""

    def test_filters_and_summary(self, tmp_path):
        """Test stage/model filters and per-model means."""
        tracker = TrialTracker(tmp_path)
        tracker.log_trial("run", 0, 11, "gagsl", 1.0, auc=0.9, f1_macro=0.8, f1_micro=0.85, best_epoch=3)
        tracker.log_trial("run", 0, 11, "gcn", 0.5, auc=0.7, f1_macro=0.6, f1_micro=0.65, best_epoch=2)
        tracker.log_trial("sweep:edge_add@0.5", 0, 11, "gagsl", 1.0, attack="edge_add", rate=0.5,
                          auc=0.7, f1_macro=0.6, f1_micro=0.6, extra={"intra_mean": 0.4})

        assert len(tracker.get_trials(stage="run")) == 2
        gagsl = tracker.get_trials(model="gagsl")
        assert [t["stage"] for t in gagsl] == ["run", "sweep:edge_add@0.5"]
        assert gagsl[1]["extra"] == '{"intra_mean": 0.4}'

        summary = tracker.get_summary()
        assert summary["gagsl"]["total_trials"] == 2
        assert summary["gagsl"]["avg_auc"] == 0.8
        assert summary["gcn"]["avg_f1_micro"] == 0.65

    def test_failed_trials(self, tmp_path):
        """Test that failures are listed newest first and lower the success rate."""
        tracker = TrialTracker(tmp_path)
        tracker.log_trial("run", 0, 1, "gagsl", 0.2)
        tracker.log_trial("run", 1, 2, "gagsl", 0.0, success=False, error_message="stage 'train' failed")
        failed = tracker.get_failed_trials()
        assert len(failed) == 1
        assert failed[0]["seed"] == 2
        assert tracker.get_summary()["gagsl"]["success_rate"] == 0.5

    def test_database_errors_are_logged_not_raised(self, tmp_path, caplog):
        """Test that a broken database does not abort the run."""
        tracker = TrialTracker(tmp_path)
        tracker.db_path.unlink()
        tracker.db_path.mkdir()
        with caplog.at_level(logging.WARNING, logger="gagsl.monitoring"):
            tracker.log_trial("run", 0, 1, "gagsl", 0.1)
        assert "Error logging trial" in caplog.text

    def test_tracker_cached_per_directory(self, tmp_path):
        """Test that one run directory maps to one tracker."""
        assert get_trial_tracker(tmp_path) is get_trial_tracker(tmp_path / ".." / tmp_path.name)
        assert (tmp_path / "trials.db").exists()
