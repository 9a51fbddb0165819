"""OPC recipe development pipeline: RL placement search, feature labeling,
decision-tree summarization, and recipe emission over a self-contained
lithography and edge-based OPC stack."""

__version__ = "0.1.0"
