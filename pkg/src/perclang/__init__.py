"""Workbench for a typed probabilistic formal language.

Subpackages cover corpus generation (grammar, typegraph, corpus), scoring of
autoregressive-model outputs (evaluation), bipartite bond-percolation theory
and simulation (percolation), transition-point fitting and curve collapse
(analysis), and the mapping from training iterations to percolation edge
probability (bridge). The ``perclang`` CLI exposes the pipeline.
"""

__version__ = "0.1.0"
