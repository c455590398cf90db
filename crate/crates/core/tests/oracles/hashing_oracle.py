"""Reference values for the hashing encoder, computed with numpy.

Prints the cosine between encode([a, b]) and encode([a, c]) at dim 16 and
seed 0, and the first three components of the token vector for "a".
"""
import numpy as np

MASK = (1 << 64) - 1
GAMMA = 0x9E3779B97F4A7C15


def fnv1a64(data: bytes) -> int:
    h = 0xCBF29CE484222325
    for b in data:
        h = ((h ^ b) * 0x100000001B3) & MASK
    return h


def splitmix(state):
    while True:
        state = (state + GAMMA) & MASK
        z = state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK
        yield z ^ (z >> 31)


def token_vector(word: str, dim: int, seed: int) -> np.ndarray:
    stream = splitmix(((seed * GAMMA) & MASK) ^ fnv1a64(word.encode()))
    uniform = lambda: (next(stream) >> 11) / float(1 << 53)
    out = []
    while len(out) < dim:
        u1 = 1.0 - uniform()
        u2 = uniform()
        r = np.sqrt(-2.0 * np.log(u1))
        out += [r * np.cos(2 * np.pi * u2), r * np.sin(2 * np.pi * u2)]
    v = np.array(out[:dim])
    return v / np.linalg.norm(v)


def encode(words, dim=16, seed=0):
    s = sum(token_vector(w, dim, seed) for w in words)
    return s / np.linalg.norm(s)


if __name__ == "__main__":
    print(repr(float(encode(["a", "b"]) @ encode(["a", "c"]))))
    print([repr(float(x)) for x in token_vector("a", 16, 0)[:3]])
