"""Multi-link channel allocation for WiFi-7 networks via tree-structured best-arm identification."""
from .channel import PhyParams, ScenarioSpec, Topology, generate_topology, path_loss, map_rate, compute_sinr
from .csma import ThroughputEngine, build_graph, enumerate_feasible_states, stationary_distribution, network_throughput
from .problem import Mode, MloConfig, NetworkEnv, TableEnv, ResidualEnv, config_space, exhaustive_search, optimum
from .search import BaiParams, run_bai_mcts, run_uct, run_dng_mcts, run_random

__version__ = "0.1.0"
