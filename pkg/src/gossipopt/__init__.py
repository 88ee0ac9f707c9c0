"""Decentralized optimization over gossip networks.

Dual accelerated methods with single-step and Chebyshev multi-step gossip,
centralized and decentralized baselines, worst-case instances with matching
lower-bound curves, and an experiment harness with a simulated-time model.
"""

from .errors import (ConfigError, ConvergenceError, DivergenceError, GossipMatrixError,
                     GossipOptError, ParameterError)
from .topology import (Graph, GossipMatrix, SpectralInfo, build_graph, diameter, gossip_matrix,
                       laplacian, spectral_info, validate_gossip)
from .gossip import ChebyshevParams, accelerated_gossip, chebyshev_params, gossip_round
from .objectives import (GlobalObjective, LocalObjective, LogisticObjective, QuadraticObjective,
                         make_least_squares, make_logistic, reference_solution)
from .solvers import TimeModel, Trace, dagd, diging, extra, msda, ssda

__version__ = "0.1.0"
