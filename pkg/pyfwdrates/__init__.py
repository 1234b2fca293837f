"""pyfwdrates computes forward and backward transition rates of non-Markov multi-state models and values insurance cash flows with them."""

__version__ = "0.1.0"

from .pipeline import FWR_PIPELINE, run_pipeline  # noqa: E402,F401
