"""Process-wide PDE solve counters.

Every sparse triangular solve against a PDE operator (prior elliptic operator
or implicit-Euler transport step) is tallied here, so callers can prove that a
phase performed no PDE work.
"""

import threading
from contextlib import contextmanager

_lock = threading.Lock()
_counts = {"transport": 0, "prior": 0}


def add(kind, nrhs=1):
    with _lock:
        _counts[kind] += int(nrhs)


def snapshot():
    with _lock:
        return dict(_counts)


def total():
    with _lock:
        return sum(_counts.values())


def reset():
    with _lock:
        for key in _counts:
            _counts[key] = 0


@contextmanager
def track():
    """Yield a dict that is filled with the solves performed inside the block."""
    before = snapshot()
    delta = {}
    try:
        yield delta
    finally:
        after = snapshot()
        delta.update({k: after[k] - before[k] for k in after})
