"""Counter-based random streams.

Every random draw in the package comes from a Philox4x64 generator whose
128-bit key is built from ``(master_seed, index, purpose)``::

    key = master_seed + 2**64 * (index * 2**16 + purpose)

``index`` is the orbit (or replicate) number inside an ensemble and
``purpose`` separates independent uses of the same orbit (initial point,
calibration, validation, ...).  Because the key depends only on these three
integers, the draws an orbit sees never depend on which worker runs it or in
what order.
"""

from enum import IntEnum

import numpy as np

_U64 = 2**64


class Purpose(IntEnum):
    ORBIT = 1
    IID = 2
    CALIBRATION = 3
    VALIDATION = 4
    RETURNS = 5
    CORRELATION = 6
    ANNULUS = 7
    SHORT_RETURNS = 8


def stream_key(master_seed, index=0, purpose=Purpose.ORBIT):
    master_seed = int(master_seed)
    index = int(index)
    purpose = int(purpose)
    if not 0 <= master_seed < _U64:
        raise ValueError(f"master seed must fit in 64 bits, got {master_seed}")
    if index < 0 or not 0 <= purpose < 2**16:
        raise ValueError("index must be >= 0 and purpose < 2**16")
    stream_id = (index << 16) | purpose
    if stream_id >= _U64:
        raise ValueError("stream index too large")
    return master_seed + _U64 * stream_id


def bit_generator(master_seed, index=0, purpose=Purpose.ORBIT):
    return np.random.Philox(key=stream_key(master_seed, index, purpose))


def generator(master_seed, index=0, purpose=Purpose.ORBIT):
    """Return a ``numpy.random.Generator`` for one (seed, index, purpose) stream."""
    return np.random.Generator(bit_generator(master_seed, index, purpose))
