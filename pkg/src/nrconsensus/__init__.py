"""Robust asynchronous Newton-Raphson consensus (raNRC) over lossy directed networks."""

from .costs import CostFunction, QuadraticCost, SmoothHuberRegressionCost, load_housing
from .engine import ExperimentConfig, TrajectoryRecord, mass_audit, run, simulate, sweep
from .graph import DirectedGraph, from_edge_list, is_strongly_connected, random_geometric_digraph
from .oracle import OracleResult, gradient_descent_minimize, newton_minimize
from .ranrc import BroadcastMessage, NodeState, RanrcParams, initialize, phi, receive, threshold, wake_up

__version__ = "0.1.0"
