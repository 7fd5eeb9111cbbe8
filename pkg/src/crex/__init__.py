"""crex: a curriculum-learning laboratory for sentence-level relation extraction.

Pipeline: ingest or synthesize a corpus, split it into stratified folds,
estimate per-instance difficulty by cross review, cut difficulty buckets,
and train a small graph-attention relation classifier through an
easiest-first curriculum, comparing against shuffled and hardest-first
controls with micro-F1 scoring.
"""

__version__ = "0.1.0"

from .kernels import active_backend

__all__ = ["active_backend", "__version__"]
