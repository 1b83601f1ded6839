"""Agent-based epidemic simulator with composable interventions.

Simulates daily disease spread over three sparse interaction networks
(household cliques, occupation groups, random encounters) for populations
of 100k+ agents, with testing, self-quarantine, two-dose vaccination, and
hybrid digital+manual contact tracing layered on top.  All randomness is
drawn from counter-based streams, so any (config, seed) pair reproduces
bit-identical results regardless of parallelism.
"""

__version__ = "0.1.0"
