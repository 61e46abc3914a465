"""Keyed random streams.

Every stream is a Philox (counter-based) generator whose key is derived from
``(seed, *keys)``, so a replicate's draws do not depend on which worker runs
it or in what order.
"""

import numpy as np


def generator(seed, *keys):
    keys = tuple(int(k) for k in keys)
    ss = np.random.SeedSequence(int(seed), spawn_key=keys)
    return np.random.Generator(np.random.Philox(ss))
