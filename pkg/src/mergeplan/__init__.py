"""Game-theoretic merge negotiation toolkit.

Quantal level-k driver models over a discretized two-car merge, Bayesian
tracking of the human driver's latent cognitive state, and an anytime
open-loop chance-constrained Monte-Carlo belief tree search for the robot.
"""

__version__ = "0.1.0"

WIRE_SCHEMA_VERSION = 1
TRACE_SCHEMA = "mergeplan.trace.v1"
