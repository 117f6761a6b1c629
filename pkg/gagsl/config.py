"""
Configuration settings for the GaGSL structure-learning toolkit.
Every default used by the pipeline lives here as a module-level constant.
"""
import logging
import os
from dotenv import load_dotenv

load_dotenv()  # a .env file may set GAGSL_LOG_LEVEL

# Logging, the only environment variable the program reads
LOG_LEVEL = os.getenv("GAGSL_LOG_LEVEL", "INFO").upper()
LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"

# Artifact versioning, written into manifests and checkpoints
ARTIFACT_VERSION = "1.0.0"
CHECKPOINT_FORMAT_VERSION = 1

# Graph core
SYMMETRY_TOL = 1e-9
DEGREE_FLOOR = 1e-12  # floor on D^{-1/2} for isolated nodes
EIGEN_MAX_NODES = 4000  # dense Jacobi cap
EIGEN_SYMMETRY_TOL = 1e-8
JACOBI_MAX_SWEEPS = 100
JACOBI_TOL = 1e-10  # off(M) <= JACOBI_TOL * ||M||_F
DEFAULT_KNN_K = 10
DEFAULT_KNN_METRIC = "cosine"

# Splits (per class fractions for synthetic data)
TRAIN_FRACTION = 0.1
VAL_FRACTION = 0.2

# Non-graph datasets bundled with scikit-learn: name -> (train per class, val count)
SKLEARN_DATASETS = {
    "wine": (10, 20),
    "cancer": (10, 20),
    "digits": (10, 20),
}

# Augmentation
WAVELET_SAMPLE_POINTS = 8  # d
WAVELET_T_MAX = 20.0  # t grid is evenly spaced on [0, WAVELET_T_MAX]
WAVELET_SCALE_FACTORS = (0.5, 2.0)  # s = factor / lambda_2
SPECTRAL_GAP_FLOOR = 1e-3
PPR_ALPHA = 0.15
PPR_TOP_K = 5  # "keep 5 edges for each node"

# Structure estimator
NEIGHBOR_HOPS = 2  # h
CANDIDATE_TOP_K = 5  # k
HIDDEN_DIM = 16
MLP_HIDDEN_DIM = 16
GAMMA1 = 0.1
GAMMA2 = 0.1
MU = 1.0

# GIB trainer
PROJECTION_DIM = 16
LEARNING_RATE = 0.01  # classifier and MI calculator
ESTIMATOR_LEARNING_RATE = 0.01  # tuned over {0.1, 0.01, 0.001}
WEIGHT_DECAY = 5e-4
BETA = 0.01
TAU = 0.5
CONTRASTIVE_SAMPLE_CAP = 256  # B = min(N, cap)
COSINE_EPS = 1e-12
CLASSIFIER_DROPOUT = 0.5  # grid {0.3, 0.5, 0.7, 0.9}
MI_DROPOUT = 0.2  # grid {0.2, 0.4, 0.6, 0.8}
EPOCHS = 50  # T
ESTIMATOR_EPOCHS = 1  # T_v
MI_EPOCHS = 1  # T_m
CLASSIFIER_EPOCHS = 4  # T_c

# Adam
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

# Robustness harness
EDGE_DELETE_RATES = (0.05, 0.10, 0.15)
EDGE_ADD_RATES = (0.25, 0.50, 0.75)
FEATURE_NOISE_RATES = (0.1, 0.3, 0.5)
HISTOGRAM_BINS = 10

# Experiments
DEFAULT_TRIALS = 10
DEFAULT_SEED = 0
DEFAULT_OUTPUT_DIR = "runs"
TRIALS_DB_NAME = "trials.db"  # per-run SQLite trial log
GAMMA_SENSITIVITY_VALUES = (0.0, 0.1, 0.3, 0.5, 0.7, 0.9, 1.0)
BETA_SENSITIVITY_VALUES = (0.0, 0.001, 0.01, 0.05, 0.1)


_logging_configured = False


def setup_logging(level: str = None) -> None:
    """Configure the root logger once; later calls only adjust the level."""
    global _logging_configured
    resolved = (level or LOG_LEVEL).upper()
    if not _logging_configured:
        logging.basicConfig(level=resolved, format=LOG_FORMAT)
        _logging_configured = True
    else:
        logging.getLogger().setLevel(resolved)


def progress_disabled() -> bool:
    """Progress bars follow the log level: shown at INFO or more verbose."""
    return logging.getLogger().getEffectiveLevel() > logging.INFO
