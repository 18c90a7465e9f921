"""Waypoint-constrained shortest paths solved by constraint search, guided by a small GCN."""

from wayprobe.graph import Instance, WeightedGraph, load_graph, load_instances
from wayprobe.oracle import brute_force_solve, dijkstra_all_pairs
from wayprobe.solver import SolverConfig, solve_instance

__all__ = [
    "Instance",
    "WeightedGraph",
    "load_graph",
    "load_instances",
    "brute_force_solve",
    "dijkstra_all_pairs",
    "SolverConfig",
    "solve_instance",
]
__version__ = "0.1.0"
