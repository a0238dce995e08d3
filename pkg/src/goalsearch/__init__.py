"""Goal-directed object search in a simulated 2D semantic world.

A desk-scale testbed combining incremental semantic occupancy mapping, a
Gaussian-mixture experience memory of past find locations, a proposer/evaluator
direction-reasoning loop with a pluggable language-model backend, and
tour-planned repeated search.
"""

__version__ = "0.1.0"
