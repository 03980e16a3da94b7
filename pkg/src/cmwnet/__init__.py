"""Class-aware meta-learned sample re-weighting on synthetic biased data."""

from . import biasgen, config, metaloop, metrics, models, numkit, taskfam

__all__ = ["biasgen", "config", "metaloop", "metrics", "models", "numkit",
           "taskfam"]
__version__ = "0.1.0"
