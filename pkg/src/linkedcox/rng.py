"""Counter-based random streams keyed by (seed, replication, variable).

Each simulated variable draws from its own Philox stream, so a replication
can be generated on any worker without touching the state of another, and
adding a variable to a generator never shifts the draws of existing ones.
Within a stream, subject ``i`` always receives the ``i``-th draw, hence the
first ``m`` subjects of a size-``n`` sample do not depend on ``n``.
"""

import zlib

import numpy as np

__all__ = ["stream", "tag_code"]

_MASK64 = (1 << 64) - 1


def tag_code(tag):
    """Stable 32-bit code for a variable tag (``hash()`` is salted per process)."""
    return zlib.crc32(tag.encode("utf-8"))


def stream(seed, replication, tag):
    """Return an independent generator for one simulated variable.

    Parameters
    ----------
    seed : int
        Master seed (any 64-bit integer; negative values are folded).
    replication : int
        Replication index within a Monte-Carlo study.
    tag : str
        Variable name, e.g. ``"x1"`` or ``"linkage"``.
    """
    entropy = [int(seed) & _MASK64, int(replication) & _MASK64, tag_code(tag)]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))
