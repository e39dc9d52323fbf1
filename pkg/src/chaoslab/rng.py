"""splitmix64 stream: the simulator's only randomness.

Pure 64-bit integer arithmetic, so the same seed yields the same draw
sequence in any language. One stream per world; draws happen strictly in
event-processing order.
"""

from __future__ import annotations

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


def splitmix64(state: int) -> tuple[int, int]:
    """Advance state once; return (new_state, output)."""
    state = (state + _GOLDEN) & _MASK
    z = state
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK
    return state, z ^ (z >> 31)


class Splitmix64:
    """Seeded splitmix64 stream."""

    __slots__ = ("state", "draws")

    def __init__(self, seed: int):
        self.state = seed & _MASK
        self.draws = 0

    def next_u64(self) -> int:
        self.state, out = splitmix64(self.state)
        self.draws += 1
        return out

    def below(self, n: int) -> int:
        """Uniform integer in [0, n). Modulo reduction; bias is irrelevant here."""
        if n <= 0:
            raise ValueError("below() needs n > 0")
        return self.next_u64() % n

    def chance_bp(self, prob_bp: int) -> bool:
        """True with probability prob_bp/10000. Never draws when prob_bp == 0.

        Skipping the draw for zero-probability checks keeps a prob_bp=0 fault
        byte-identical to no fault at all under the same seed.
        """
        if prob_bp <= 0:
            return False
        if prob_bp >= 10000:
            return True
        return self.below(10000) < prob_bp
