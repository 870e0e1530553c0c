"""Basketball tracking-data analytics: preprocessing, rule-based play
labeling, trajectory/activity models, and annotation tooling."""

__version__ = "0.1.0"
