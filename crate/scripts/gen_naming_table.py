#!/usr/bin/env python3
"""Generate the basic-color-term naming table.

The table covers the sRGB-encoded unit cube with a G x G x G grid. Each cell
stores the mean, over S^3 evenly spaced samples inside the cell, of a softmax
over negative squared distances to eleven prototype colors in scaled CIELAB
(D65), then renormalized to sum to one.

Binary layout (little-endian):
    b"CNTB" | u32 version | u32 grid | grid^3 cells x 11 float32

Cells are ordered with the red index varying slowest:
    cell = (r * grid + g) * grid + b

Usage: gen_naming_table.py [OUTPUT] [--grid 32] [--samples 4] [--tau 0.08]
"""

import argparse
import struct

import numpy as np

VERSION = 1

# Term order is fixed: black, blue, brown, gray, green, orange, pink, purple,
# red, white, yellow.
PROTOTYPES_8BIT = [
    (20, 20, 20),
    (30, 80, 200),
    (120, 70, 30),
    (128, 128, 128),
    (40, 160, 60),
    (245, 140, 30),
    (245, 160, 190),
    (130, 50, 160),
    (200, 30, 35),
    (245, 245, 245),
    (245, 225, 40),
]

# CIELAB is divided by this before distances are taken.
OPPONENT_SCALE = 40.0

SRGB_TO_XYZ = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ]
)
WHITE_D65 = np.array([0.95047, 1.0, 1.08883])


def srgb_decode(c):
    c = np.asarray(c, dtype=np.float64)
    return np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)


def lab_f(t):
    d = 6.0 / 29.0
    return np.where(t > d**3, np.cbrt(t), t / (3.0 * d * d) + 4.0 / 29.0)


def opponent(rgb):
    """sRGB-encoded values in [0,1] -> CIELAB / OPPONENT_SCALE."""
    xyz = srgb_decode(rgb) @ SRGB_TO_XYZ.T / WHITE_D65
    fx, fy, fz = lab_f(xyz[..., 0]), lab_f(xyz[..., 1]), lab_f(xyz[..., 2])
    lab = np.stack([116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)], axis=-1)
    return lab / OPPONENT_SCALE


def soft_names(rgb, protos, tau):
    o = opponent(rgb)
    d2 = ((o[..., None, :] - protos) ** 2).sum(-1)
    logits = -d2 / tau
    logits -= logits.max(-1, keepdims=True)
    w = np.exp(logits)
    return w / w.sum(-1, keepdims=True)


def build(grid, samples, tau):
    protos = opponent(np.array(PROTOTYPES_8BIT, dtype=np.float64) / 255.0)
    offs = (np.arange(samples) + 0.5) / samples
    table = np.zeros((grid, grid, grid, 11), dtype=np.float64)
    gi = np.arange(grid)
    for r in range(grid):
        # sample coordinates for every (g, b) cell of this red slab
        rs = (r + offs) / grid
        gs = (gi[:, None] + offs[None, :]) / grid
        bs = gs
        R, G, B = np.meshgrid(rs, gs.ravel(), bs.ravel(), indexing="ij")
        rgb = np.stack([R, G, B], axis=-1)
        names = soft_names(rgb, protos, tau)
        names = names.reshape(samples, grid, samples, grid, samples, 11)
        cell = names.mean(axis=(0, 2, 4))
        table[r] = cell / cell.sum(-1, keepdims=True)
    return table


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("output", nargs="?", default="crates/core/assets/naming_table.bin")
    ap.add_argument("--grid", type=int, default=32)
    ap.add_argument("--samples", type=int, default=4)
    ap.add_argument("--tau", type=float, default=0.08)
    args = ap.parse_args()

    table = build(args.grid, args.samples, args.tau)
    with open(args.output, "wb") as f:
        f.write(b"CNTB")
        f.write(struct.pack("<II", VERSION, args.grid))
        f.write(table.astype("<f4").tobytes())


if __name__ == "__main__":
    main()
