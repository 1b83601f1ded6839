"""Counter-based random streams for schedule-independent reproducibility.

Every stochastic phase of the simulator draws from its own Philox
substream keyed by a tuple such as (seed, run, step, phase).  Distinct
keys yield independent streams and identical keys identical streams, so
ensemble runs can execute serially, in any order, or in parallel worker
processes and still produce bit-identical output.
"""

from __future__ import annotations

import numpy as np

__all__ = ["substream", "CALIBRATION_RUN"]

# Run-index namespace reserved for calibration passes so they can never
# collide with ensemble run indices.
CALIBRATION_RUN = 2**32


def substream(*key: int) -> np.random.Generator:
    """Return the Philox generator identified by an integer key tuple."""
    entropy = tuple(int(k) for k in key)
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))
