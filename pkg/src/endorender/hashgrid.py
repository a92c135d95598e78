"""Multiresolution hash encoding of points in the unit cube.

Tables are stored as one ``(levels, table_size, features)`` float64 array.
The lookup, gather and scatter loops are compiled with numba.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from numba import njit

PRIMES = np.array([1, 2654435761, 805459861], dtype=np.uint64)


@dataclass(frozen=True)
class HashGridConfig:
    levels: int = 16
    features_per_level: int = 2
    table_size: int = 2 ** 19
    base_resolution: int = 16
    finest_resolution: int = 2048
    init_scale: float = 1e-4

    def __post_init__(self):
        if self.levels < 1:
            raise ValueError("levels must be >= 1")
        if self.table_size < 1 or self.table_size & (self.table_size - 1):
            raise ValueError(f"table_size must be a power of two, got {self.table_size}")
        if not (self.finest_resolution >= self.base_resolution >= 1):
            raise ValueError("need finest_resolution >= base_resolution >= 1")

    @property
    def growth(self) -> float:
        if self.levels == 1:
            return 1.0
        return float(np.exp((np.log(self.finest_resolution) - np.log(self.base_resolution))
                            / (self.levels - 1)))

    @property
    def resolutions(self) -> np.ndarray:
        # floor of N_min * b^l; the tiny slack keeps exact powers from rounding down
        r = self.base_resolution * self.growth ** np.arange(self.levels)
        return np.floor(r + 1e-9).astype(np.int64)

    @property
    def output_dim(self) -> int:
        return self.levels * self.features_per_level

    def to_dict(self) -> dict:
        return asdict(self)


def init_tables(cfg: HashGridConfig, rng: np.random.Generator) -> np.ndarray:
    return rng.uniform(-cfg.init_scale, cfg.init_scale,
                       size=(cfg.levels, cfg.table_size, cfg.features_per_level))


def spatial_hash(corner: np.ndarray, table_size: int) -> np.ndarray:
    """``(c_x*p1 XOR c_y*p2 XOR c_z*p3) mod T`` on integer corners (..., 3)."""
    c = corner.astype(np.uint64)
    h = (c[..., 0] * PRIMES[0]) ^ (c[..., 1] * PRIMES[1]) ^ (c[..., 2] * PRIMES[2])
    return (h & np.uint64(table_size - 1)).astype(np.int64)


@dataclass
class EncodeContext:
    """Saved lookups from a forward pass, consumed by :func:`encode_backward`."""

    index: np.ndarray    # (N, L, 8) flat row index into tables.reshape(L*T, F)
    weight: np.ndarray   # (N, L, 8) trilinear weights


@njit(cache=True)
def _lookup_kernel(x, res, table_size, index, weight):
    N, L = index.shape[0], index.shape[1]
    mask = np.uint64(table_size - 1)
    p1, p2, p3 = np.uint64(1), np.uint64(2654435761), np.uint64(805459861)
    for n in range(N):
        for lv in range(L):
            r = res[lv]
            px, py, pz = x[n, 0] * r, x[n, 1] * r, x[n, 2] * r
            fx, fy, fz = np.floor(px), np.floor(py), np.floor(pz)
            tx, ty, tz = px - fx, py - fy, pz - fz
            bx, by, bz = np.uint64(fx), np.uint64(fy), np.uint64(fz)
            off = lv * table_size
            # corner k = 4*z_bit + 2*y_bit + x_bit
            for k in range(8):
                ox, oy, oz = k & 1, (k >> 1) & 1, (k >> 2) & 1
                h = ((bx + np.uint64(ox)) * p1) ^ ((by + np.uint64(oy)) * p2) ^ ((bz + np.uint64(oz)) * p3)
                index[n, lv, k] = off + np.int64(h & mask)
                wx = tx if ox else 1.0 - tx
                wy = ty if oy else 1.0 - ty
                wz = tz if oz else 1.0 - tz
                weight[n, lv, k] = wx * wy * wz


@njit(cache=True)
def _gather_kernel(index, weight, flat, out):
    N, L = index.shape[0], index.shape[1]
    F = flat.shape[1]
    for n in range(N):
        for lv in range(L):
            for f in range(F):
                acc = 0.0
                for k in range(8):
                    acc += weight[n, lv, k] * flat[index[n, lv, k], f]
                out[n, lv * F + f] = acc


@njit(cache=True)
def _scatter_kernel(index, weight, upstream, scratch, touched, rows, n_rows):
    # accumulate into a zeroed scratch buffer, recording each row on first touch
    N, L = index.shape[0], index.shape[1]
    F = scratch.shape[1]
    for n in range(N):
        for lv in range(L):
            for k in range(8):
                row = index[n, lv, k]
                if not touched[row]:
                    touched[row] = True
                    rows[n_rows] = row
                    n_rows += 1
                w = weight[n, lv, k]
                for f in range(F):
                    scratch[row, f] += w * upstream[n, lv * F + f]
    return n_rows


@njit(cache=True)
def _flush_kernel(scratch, touched, rows, n_rows, flat_grad):
    # one add per touched row, so repeated backward passes add identical totals
    for i in range(n_rows):
        row = rows[i]
        for f in range(scratch.shape[1]):
            flat_grad[row, f] += scratch[row, f]
            scratch[row, f] = 0.0
        touched[row] = False


_SCRATCH: dict[tuple, tuple[np.ndarray, np.ndarray]] = {}


def _scratch_for(shape: tuple) -> tuple[np.ndarray, np.ndarray]:
    if shape not in _SCRATCH:
        _SCRATCH.clear()
        _SCRATCH[shape] = (np.zeros(shape), np.zeros(shape[0], dtype=np.bool_))
    return _SCRATCH[shape]


def corner_lookup(x: np.ndarray, cfg: HashGridConfig) -> EncodeContext:
    x = np.ascontiguousarray(np.clip(np.asarray(x, dtype=np.float64).reshape(-1, 3), 0.0, 1.0))
    N, L = len(x), cfg.levels
    index = np.empty((N, L, 8), dtype=np.int64)
    weight = np.empty((N, L, 8))
    _lookup_kernel(x, cfg.resolutions.astype(np.float64), cfg.table_size, index, weight)
    return EncodeContext(index=index, weight=weight)


def encode(x: np.ndarray, tables: np.ndarray, cfg: HashGridConfig,
           return_context: bool = False):
    """Encode points (N, 3) in [0, 1]^3 into features (N, L*F).

    Levels are concatenated coarse to fine, each contributing F features.
    """
    ctx = corner_lookup(x, cfg)
    flat = tables.reshape(cfg.levels * cfg.table_size, cfg.features_per_level)
    feats = np.empty((len(ctx.index), cfg.output_dim))
    _gather_kernel(ctx.index, ctx.weight, flat, feats)
    if return_context:
        return feats, ctx
    return feats


def encode_backward(ctx: EncodeContext | list[EncodeContext], upstream, grad_tables: np.ndarray,
                    cfg: HashGridConfig) -> None:
    """Accumulate ``d loss / d tables`` into ``grad_tables`` in place.

    Accepts parallel lists of contexts and upstream gradients. The pass sums
    into a private buffer first and then adds that total to each touched row,
    so the result depends only on input order and two identical calls add
    exactly the same amount.
    """
    if isinstance(ctx, EncodeContext):
        ctx, upstream = [ctx], [upstream]
    flat = grad_tables.reshape(-1, cfg.features_per_level)
    scratch, touched = _scratch_for(flat.shape)
    rows = np.empty(sum(c.index.size for c in ctx), dtype=np.int64)
    n_rows = 0
    for c, u in zip(ctx, upstream):
        u = np.ascontiguousarray(np.asarray(u, dtype=np.float64).reshape(len(c.index), cfg.output_dim))
        n_rows = _scatter_kernel(c.index, c.weight, u, scratch, touched, rows, n_rows)
    _flush_kernel(scratch, touched, rows, n_rows, flat)
