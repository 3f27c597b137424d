#!/usr/bin/env python3
"""Independent reference for the toy patch encoder golden file.

Re-derives the seeded weights with a pure-Python MT19937-64 and recomputes
patch flatten + matrix product with plain loops. Writes
tests/data/toy_encoder_seed7.golden ("k h" header, then one value per line).
"""
import math
import pathlib
import sys


class MT19937_64:
    NN, MM = 312, 156
    MATRIX_A = 0xB5026F5AA96619E9
    UM, LM = 0xFFFFFFFF80000000, 0x7FFFFFFF
    MASK = (1 << 64) - 1

    def __init__(self, seed):
        self.mt = [0] * self.NN
        self.mt[0] = seed & self.MASK
        for i in range(1, self.NN):
            prev = self.mt[i - 1]
            self.mt[i] = (6364136223846793005 * (prev ^ (prev >> 62)) + i) & self.MASK
        self.mti = self.NN

    def _twist(self):
        mag = (0, self.MATRIX_A)
        for i in range(self.NN):
            x = (self.mt[i] & self.UM) | (self.mt[(i + 1) % self.NN] & self.LM)
            self.mt[i] = self.mt[(i + self.MM) % self.NN] ^ (x >> 1) ^ mag[x & 1]
        self.mti = 0

    def __call__(self):
        if self.mti >= self.NN:
            self._twist()
        x = self.mt[self.mti]
        self.mti += 1
        x ^= (x >> 29) & 0x5555555555555555
        x ^= (x << 17) & 0x71D67FFFEDA60000
        x ^= (x << 37) & 0xFFF7EEE000000000
        x ^= x >> 43
        return x & self.MASK


def uniform(rng, lo, hi):
    return lo + (hi - lo) * ((rng() >> 11) * 2.0 ** -53)


def test_image(h, w):
    return [[[((y * 7 + x * 3 + c * 11) % 256) / 255.0 for c in range(3)] for x in range(w)] for y in range(h)]


def main():
    # The C++ standard pins the 10000th output of a default-seeded mt19937_64.
    check = MT19937_64(5489)
    for _ in range(9999):
        check()
    assert check() == 9981545732273789042, "MT19937-64 reference mismatch"

    seed, patch, width, size = 7, 16, 8, 32
    d = patch * patch * 3
    scale = 1.0 / math.sqrt(d)
    rng = MT19937_64(seed)
    weights = [[uniform(rng, -scale, scale) for _ in range(d)] for _ in range(width)]

    img = test_image(size, size)
    grid = size // patch
    rows = []
    for p in range(grid * grid):
        y0, x0 = (p // grid) * patch, (p % grid) * patch
        vec = [img[y0 + y][x0 + x][c] for y in range(patch) for x in range(patch) for c in range(3)]
        row = []
        for i in range(width):
            acc = 0.0
            for j in range(d):
                acc += weights[i][j] * vec[j]
            row.append(acc + 0.0)
        rows.append(row)

    out = pathlib.Path(sys.argv[1]) if len(sys.argv) > 1 else (
        pathlib.Path(__file__).resolve().parent.parent / "data" / "toy_encoder_seed7.golden")
    with open(out, "w") as f:
        f.write(f"{len(rows)} {width}\n")
        for row in rows:
            for v in row:
                f.write(repr(v) + "\n")


if __name__ == "__main__":
    main()
