"""Named closed-form and seeded random field generators.

Random fields are piecewise constant on square cells of a fixed size, so the
same (seed, cell) pair denotes the same continuum field on every grid of a
refinement ladder.  Per-cell uniforms come from splitmix64 applied to the
64-bit mix of (seed, cell_ix, cell_iy); the generator is pinned here so runs
are reproducible bit for bit at the level of sampled parameters.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError

_MASK = np.uint64(0xFFFFFFFFFFFFFFFF)


def _splitmix64(z: np.ndarray) -> np.ndarray:
    z = (z + np.uint64(0x9E3779B97F4A7C15)) & _MASK
    z = ((z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)) & _MASK
    z = ((z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)) & _MASK
    return z ^ (z >> np.uint64(31))


def cell_uniform(seed: int, ix: np.ndarray, iy: np.ndarray, stream: int = 0) -> np.ndarray:
    """Deterministic uniform in [0, 1) per lattice cell."""
    with np.errstate(over="ignore"):
        z = (np.uint64(seed & 0xFFFFFFFF) << np.uint64(32)) ^ np.uint64(stream)
        z = _splitmix64(z + (ix.astype(np.int64).astype(np.uint64) << np.uint64(20))
                        + iy.astype(np.int64).astype(np.uint64) * np.uint64(0x9E37)
                        + np.uint64(0x1234567))
    return (z >> np.uint64(11)).astype(np.float64) / float(1 << 53)


def checkerboard(lam: float, Lam: float, seed: int, cell: float = 0.25):
    """Piecewise-constant field with values uniform in [lam, Lam]."""
    def fn(x, y):
        ix = np.floor(np.asarray(x, float) / cell + 1e3).astype(np.int64)
        iy = np.floor(np.asarray(y, float) / cell + 1e3).astype(np.int64)
        u = cell_uniform(seed, ix, iy)
        return lam + (Lam - lam) * u
    return fn


def random_bounded_vector(seed: int, cell: float = 0.25, amplitude: float = 1.0):
    """Vector field with components uniform in [-amplitude, amplitude]."""
    def fn(x, y):
        ix = np.floor(np.asarray(x, float) / cell + 1e3).astype(np.int64)
        iy = np.floor(np.asarray(y, float) / cell + 1e3).astype(np.int64)
        u1 = cell_uniform(seed, ix, iy, stream=1)
        u2 = cell_uniform(seed, ix, iy, stream=2)
        return (amplitude * (2.0 * u1 - 1.0), amplitude * (2.0 * u2 - 1.0))
    return fn


def scalar_by_name(name: str, **kw):
    """Scalar catalog: constant, radial, checkerboard, quadratic, abs, sin,
    linear, zero."""
    if name == "constant":
        c = float(kw.get("value", 1.0))
        return lambda x, y: np.full_like(np.asarray(x, float), c)
    if name == "radial":
        c0 = float(kw.get("c0", 1.0))
        c1 = float(kw.get("c1", 0.5))
        return lambda x, y: c0 + c1 * (np.asarray(x) ** 2 + np.asarray(y) ** 2)
    if name == "checkerboard":
        return checkerboard(float(kw.get("lam", 1.0)), float(kw.get("Lam", 2.0)),
                            int(kw.get("seed", 0)), float(kw.get("cell", 0.25)))
    if name == "quadratic":
        s = float(kw.get("scale", 0.5))
        return lambda x, y: s * (np.asarray(x) ** 2 + np.asarray(y) ** 2)
    if name == "abs":
        return lambda x, y: np.abs(np.asarray(x, float))
    if name == "sin":
        k = float(kw.get("k", 2.0))
        amp = float(kw.get("amplitude", 1.0))
        off = float(kw.get("offset", 0.0))
        return lambda x, y: off + amp * np.sin(k * np.asarray(x)) * np.cos(k * np.asarray(y))
    if name == "linear":
        a = float(kw.get("a", 1.0))
        b = float(kw.get("b", 0.0))
        c = float(kw.get("c", 0.0))
        return lambda x, y: a * np.asarray(x) + b * np.asarray(y) + c
    if name == "zero":
        return lambda x, y: np.zeros_like(np.asarray(x, float))
    raise ConfigError(f"unknown scalar field name {name!r}")


def vector_by_name(name: str, **kw):
    """Vector catalog: constant, rotational, random-bounded, gradient-radial,
    zero."""
    if name == "constant":
        c1 = float(kw.get("f1", 1.0))
        c2 = float(kw.get("f2", 0.0))
        return lambda x, y: (np.full_like(np.asarray(x, float), c1),
                             np.full_like(np.asarray(x, float), c2))
    if name == "rotational":
        w = float(kw.get("omega", 1.0))
        return lambda x, y: (-w * np.asarray(y, float), w * np.asarray(x, float))
    if name == "random-bounded":
        return random_bounded_vector(int(kw.get("seed", 0)), float(kw.get("cell", 0.25)),
                                     float(kw.get("amplitude", 1.0)))
    if name == "gradient-radial":
        c = float(kw.get("scale", 1.0))
        return lambda x, y: (c * np.asarray(x, float), c * np.asarray(y, float))
    if name == "zero":
        return lambda x, y: (np.zeros_like(np.asarray(x, float)),
                             np.zeros_like(np.asarray(x, float)))
    raise ConfigError(f"unknown vector field name {name!r}")
