"""Fixed 64-bit mixing, shared by fingerprints and the hashed embedder.

splitmix64 gives deterministic, process-independent hashes (unlike builtin
``hash``, which is salted per interpreter run).
"""

_M64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _M64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _M64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _M64
    return x ^ (x >> 31)


def mix64(values, seed: int = 0x51F7) -> int:
    h = seed
    for v in values:
        h = splitmix64(h ^ (v & _M64))
    return h
