"""Deterministic seed derivation.

Every random component (bootstrap draws, network init, corpus synthesis)
takes a seed derived from one root seed plus a string label, so that a run
is reproducible from a single ``--seed`` flag and the derivation itself is
portable: splitmix64 over the root, folding in an FNV-1a hash of the label.
"""

MASK64 = 0xFFFFFFFFFFFFFFFF


def splitmix64(state: int) -> int:
    """One splitmix64 step: returns the next 64-bit value for ``state``."""
    z = (state + 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return (z ^ (z >> 31)) & MASK64


def _fnv1a(data: bytes) -> int:
    h = 0xCBF29CE484222325
    for b in data:
        h = ((h ^ b) * 0x100000001B3) & MASK64
    return h


def derive_seed(root: int, *labels: object) -> int:
    """Derive a component seed from ``root`` and any hashable labels.

    Labels are folded in via their string form, so derive_seed(s, "rf", 3)
    is stable across runs and platforms.
    """
    state = splitmix64(root & MASK64)
    for label in labels:
        state = splitmix64(state ^ _fnv1a(str(label).encode("utf-8")))
    return state
