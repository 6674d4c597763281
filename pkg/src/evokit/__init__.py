"""Evolution strategies with learned recombination weights, classic baselines,
BBOB-style benchmark tasks, and a meta-training outer loop."""

__version__ = "0.1.0"
