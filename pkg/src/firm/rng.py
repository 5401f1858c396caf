"""Named, independent random substreams derived from one experiment seed."""
from __future__ import annotations

import zlib

import numpy as np


def substream(seed: int, *names: str | int) -> np.random.Generator:
    """Return a generator keyed by ``(seed, names...)``.

    Each name path maps to its own ``SeedSequence`` spawn key, so adding or
    removing draws on one stream never shifts another.
    """
    key = tuple(n if isinstance(n, int) else zlib.crc32(n.encode()) for n in names)
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=key))
