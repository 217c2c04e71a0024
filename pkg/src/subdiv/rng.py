"""Reproducible random streams.

Every replicate draws from its own Philox (counter-based) generator whose key
is derived from ``(master_seed, branch_tag, index)`` through
:class:`numpy.random.SeedSequence`.  Results therefore do not depend on the
order in which replicates are scheduled.
"""
import zlib

import numpy as np

_U64 = (1 << 64) - 1


def _tag_id(tag):
    if isinstance(tag, (int, np.integer)):
        return int(tag) & 0xFFFFFFFF
    return zlib.crc32(str(tag).encode("utf-8"))


def _seed_sequence(master_seed, tag, index):
    return np.random.SeedSequence(int(master_seed) & _U64,
                                  spawn_key=(_tag_id(tag), int(index)))


def stream(master_seed, tag="", index=0):
    """Return the generator for replicate ``index`` of branch ``tag``."""
    return np.random.Generator(np.random.Philox(_seed_sequence(master_seed, tag, index)))


def derive_seed(master_seed, tag="", index=0):
    """Derive a child 64-bit seed, e.g. for one point of an effort sweep."""
    return int(_seed_sequence(master_seed, tag, index).generate_state(1, np.uint64)[0])


def as_generator(seed_or_rng, tag="run"):
    if isinstance(seed_or_rng, np.random.Generator):
        return seed_or_rng
    return stream(seed_or_rng, tag, 0)
