"""Deterministic per-seed random streams.

Every sampling decision in this library is driven by a small counter-derived
stream: a splitmix64-style finalizer turns ``(base_seed, root, hop, index)``
into a nonzero 64-bit state, and an xorshift64 step advances it.  The exact
constants below are the wire-level determinism contract of this artifact:
changing any of them changes every sampled neighborhood.

The pure-Python implementation here is the reference; the compiled kernels in
:mod:`fsa.kernels` replicate the same arithmetic bit for bit (covered by
tests).
"""

from __future__ import annotations

MASK64 = (1 << 64) - 1

# splitmix64 increment / finalizer constants (Steele et al.), plus one extra
# odd multiplier so (root, hop, index) land in distinct lanes of the mix.
GOLDEN = 0x9E3779B97F4A7C15
MIX1 = 0xBF58476D1CE4E5B9
MIX2 = 0x94D049BB133111EB
ROOT_MULT = 0xBF58476D1CE4E5B9
HOP_MULT = 0x94D049BB133111EB
INDEX_MULT = 0xD6E8FEB86659FD93

# state handed out if the mix ever lands on 0 (xorshift64 fixes 0 forever)
ZERO_ESCAPE = GOLDEN

__all__ = [
    "RngStream",
    "derive_stream",
    "splitmix64",
    "xorshift64",
]


def splitmix64(z: int) -> int:
    """One splitmix64 finalization round of ``z`` (64-bit wrapping)."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * MIX1) & MASK64
    z = ((z ^ (z >> 27)) * MIX2) & MASK64
    return z ^ (z >> 31)


def xorshift64(x: int) -> int:
    """One xorshift64 step with shift triple (13, 7, 17)."""
    x &= MASK64
    x ^= (x << 13) & MASK64
    x ^= x >> 7
    x ^= (x << 17) & MASK64
    return x


class RngStream:
    """A 64-bit xorshift stream.  Value type: cheap to copy, never shared.

    The state is always nonzero; ``next_u64`` returns the new state, so the
    advanced stream is fully described by the returned value.
    """

    __slots__ = ("state",)

    def __init__(self, state: int):
        state &= MASK64
        if state == 0:
            state = ZERO_ESCAPE
        self.state = state

    def next_u64(self) -> int:
        """Advance the stream and return the new 64-bit state."""
        self.state = xorshift64(self.state)
        return self.state

    def uniform_index(self, bound: int) -> int:
        """Next value reduced modulo ``bound`` (bound >= 1).

        Plain modulo reduction: the bias is at most bound/2**64, which is
        negligible for the int32-sized bounds used here.
        """
        if bound <= 0:
            raise ValueError(f"uniform_index bound must be >= 1, got {bound}")
        return self.next_u64() % bound

    def copy(self) -> "RngStream":
        return RngStream(self.state)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, RngStream) and other.state == self.state

    def __repr__(self) -> str:
        return f"RngStream(0x{self.state:016x})"


def derive_stream(base_seed: int, root: int, hop: int, index: int) -> RngStream:
    """Derive the sampling stream for one (root, hop, slot) decision point.

    ``root`` is the position of the seed/root in its batch (not the node ID),
    so repeated nodes in a batch draw independent samples.  ``hop`` is 0 for
    the single-hop operator and 1/2 for the two-hop operator's stages;
    ``index`` is the first-hop slot that a second-hop sample hangs off.
    """
    z = base_seed + GOLDEN * (1 + root * ROOT_MULT + hop * HOP_MULT + index * INDEX_MULT)
    return RngStream(splitmix64(z & MASK64))
