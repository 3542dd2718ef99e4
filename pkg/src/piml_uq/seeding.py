"""Deterministic seed derivation: every random stream is ``(master, label, index)``."""

import zlib

import numpy as np


def derive_seed(master, label, index=0):
    """64-bit seed for the stream named ``label`` under ``master``.

    Labels are hashed with CRC-32 so the mapping is stable across Python
    processes (unlike ``hash``).
    """
    ss = np.random.SeedSequence([int(master) & 0xFFFFFFFFFFFFFFFF,
                                 zlib.crc32(label.encode("utf-8")), int(index)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])
