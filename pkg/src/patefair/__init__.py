"""PATE with fairness auditing.

Teacher ensembles on disjoint private shards label a public set through a
Gaussian noisy-argmax vote; students trained on clean and noisy labels are
compared through model sensitivity, excessive risk and their upper bounds.
"""

from .config import ExperimentConfig
from .harness import run_pipeline, sweep, verify_bounds

__version__ = "0.1.0"

__all__ = ["ExperimentConfig", "run_pipeline", "sweep", "verify_bounds", "__version__"]
