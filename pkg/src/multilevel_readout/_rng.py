"""Counter-based splitmix64 streams shared by the compiled and pure-Python kernels.

Every Monte Carlo trial owns a 64-bit key derived from ``(seed, stream, trial)``,
so results never depend on how trials are scheduled across workers.
"""

MASK64 = 0xFFFFFFFFFFFFFFFF
GOLDEN = 0x9E3779B97F4A7C15
INV_2_53 = 1.0 / 9007199254740992.0


def mix64(z):
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def trial_key(seed, stream, trial):
    k = mix64((seed + GOLDEN) & MASK64)
    k = mix64((k + (stream + 1) * GOLDEN) & MASK64)
    return mix64((k + (trial + 1) * GOLDEN) & MASK64)


class SplitMix:
    __slots__ = ("state",)

    def __init__(self, key):
        self.state = key & MASK64

    def next_u64(self):
        self.state = (self.state + GOLDEN) & MASK64
        return mix64(self.state)

    def next_double(self):
        return (self.next_u64() >> 11) * INV_2_53
