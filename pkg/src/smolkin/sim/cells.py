"""Cell-list neighbour search for short-range pairs, periodic or open."""
from __future__ import annotations

import math

import numba as nb
import numpy as np


@nb.njit(cache=True)
def _cell_coords(pos, idx, cell, periodic, L):
    n = idx.size
    d = pos.shape[1]
    cc = np.empty((n, d), dtype=np.int64)
    dims = np.empty(d, dtype=np.int64)
    if periodic:
        nc = int(math.floor(L / cell))
        for k in range(d):
            dims[k] = nc
        csz = L / nc
        for a in range(n):
            for k in range(d):
                c = int(math.floor(pos[idx[a], k] / csz))
                cc[a, k] = c % nc
    else:
        lo = np.full(d, np.inf)
        for a in range(n):
            for k in range(d):
                lo[k] = min(lo[k], pos[idx[a], k])
        for k in range(d):
            dims[k] = 1
        for a in range(n):
            for k in range(d):
                c = int(math.floor((pos[idx[a], k] - lo[k]) / cell))
                cc[a, k] = c
                if c + 1 > dims[k]:
                    dims[k] = c + 1
    return cc, dims


@nb.njit(cache=True)
def _linear(c, dims):
    key = 0
    for k in range(c.size):
        key = key * dims[k] + c[k]
    return key


@nb.njit(cache=True)
def build_cells(pos, idx, cell, periodic, L):
    """Sort ``idx`` by cell. Returns (sorted keys, particle order, cell coords, dims)."""
    cc, dims = _cell_coords(pos, idx, cell, periodic, L)
    n = idx.size
    keys = np.empty(n, dtype=np.int64)
    for a in range(n):
        keys[a] = _linear(cc[a], dims)
    order = np.argsort(keys, kind="mergesort")
    return keys[order], idx[order], cc[order], dims


@nb.njit(cache=True)
def min_image(dx, L):
    h = 0.5 * L
    if -h <= dx <= h:
        return dx
    return dx - L * math.floor(dx / L + 0.5)


@nb.njit(cache=True)
def pair_dist2(pos, i, j, periodic, L):
    s = 0.0
    for k in range(pos.shape[1]):
        dx = pos[j, k] - pos[i, k]
        if periodic:
            dx = min_image(dx, L)
        s += dx * dx
    return s


@nb.njit(cache=True)
def _push(out_i, out_j, cnt, i, j):
    if cnt == out_i.size:
        out_i = np.concatenate((out_i, np.empty_like(out_i)))
        out_j = np.concatenate((out_j, np.empty_like(out_j)))
    out_i[cnt] = min(i, j)
    out_j[cnt] = max(i, j)
    return out_i, out_j


@nb.njit(cache=True)
def pairs_within(pos, idx, rcut, periodic, L):
    """All unordered pairs (i < j) from ``idx`` closer than ``rcut``.

    Uses a dense cell table (counting sort) when the grid is small enough,
    otherwise sorted cell keys with binary search.
    """
    n = idx.size
    d = pos.shape[1]
    out_i = np.empty(64, dtype=np.int64)
    out_j = np.empty(64, dtype=np.int64)
    cnt = 0
    if n < 2:
        return out_i[:0], out_j[:0]
    r2 = rcut * rcut
    if periodic and d == 3 and int(math.floor(L / rcut)) >= 3 and n > 32:
        return torus_pairs(pos, idx, rcut, L, L / max(3.0, math.floor((2.0 * n) ** (1.0 / 3.0))))
    if n <= 32 or (periodic and int(math.floor(L / rcut)) < 3):
        for a in range(n):
            for b in range(a + 1, n):
                i, j = idx[a], idx[b]
                if pair_dist2(pos, i, j, periodic, L) < r2:
                    out_i, out_j = _push(out_i, out_j, cnt, i, j)
                    cnt += 1
        return out_i[:cnt], out_j[:cnt]
    # cells no smaller than rcut, but not so many that the table dwarfs n
    cell = rcut
    if periodic:
        cell = max(rcut, L / max(3.0, math.floor((2.0 * n) ** (1.0 / d))))
    else:
        vol = 1.0
        for k in range(d):
            lo_k = np.inf
            hi_k = -np.inf
            for a in range(n):
                x = pos[idx[a], k]
                lo_k = min(lo_k, x)
                hi_k = max(hi_k, x)
            vol *= max(hi_k - lo_k, rcut)
        cell = max(rcut, (vol / (2.0 * n)) ** (1.0 / d))
    cc, dims = _cell_coords(pos, idx, cell, periodic, L)
    total = 1
    for k in range(d):
        total *= dims[k]
        if total > 4 * n + 1_000_000:
            break
    dense = total <= 4 * n + 1_000_000
    keys = np.empty(n, dtype=np.int64)
    for a in range(n):
        keys[a] = _linear(cc[a], dims)
    if dense:
        start = np.zeros(total + 1, dtype=np.int64)
        for a in range(n):
            start[keys[a] + 1] += 1
        for c in range(total):
            start[c + 1] += start[c]
        fill = start[:-1].copy()
        part = np.empty(n, dtype=np.int64)
        for a in range(n):
            part[fill[keys[a]]] = a
            fill[keys[a]] += 1
    else:
        part = np.argsort(keys, kind="mergesort")
        skeys = keys[part]
    noff = 3 ** d
    nb_c = np.empty(d, dtype=np.int64)
    for a in range(n):
        i = idx[a]
        for o in range(noff):
            rem = o
            ok = True
            for k in range(d):
                off = rem % 3 - 1
                rem //= 3
                c = cc[a, k] + off
                if periodic:
                    c %= dims[k]
                elif c < 0 or c >= dims[k]:
                    ok = False
                nb_c[k] = c
            if not ok:
                continue
            key = _linear(nb_c, dims)
            if dense:
                lo, hi = start[key], start[key + 1]
            else:
                lo = np.searchsorted(skeys, key)
                hi = np.searchsorted(skeys, key, side="right")
            for b in range(lo, hi):
                j = idx[part[b]]
                if j <= i:
                    continue
                if pair_dist2(pos, i, j, periodic, L) < r2:
                    out_i, out_j = _push(out_i, out_j, cnt, i, j)
                    cnt += 1
    return out_i[:cnt], out_j[:cnt]


@nb.njit(cache=True)
def pairs_brute(pos, idx, rcut, periodic, L):
    n = idx.size
    out_i = np.empty(n * (n - 1) // 2 + 1, dtype=np.int64)
    out_j = np.empty_like(out_i)
    cnt = 0
    r2 = rcut * rcut
    for a in range(n):
        for b in range(a + 1, n):
            i, j = idx[a], idx[b]
            if pair_dist2(pos, i, j, periodic, L) < r2:
                out_i[cnt] = min(i, j)
                out_j[cnt] = max(i, j)
                cnt += 1
    return out_i[:cnt], out_j[:cnt]


class CellIndex:
    """Spatial hash over the alive particles with cells of side >= ``cell``."""

    def __init__(self, pos, alive, cell, periodic=False, L=1.0):
        self.pos = np.ascontiguousarray(pos, dtype=float)
        self.members = np.flatnonzero(alive).astype(np.int64)
        self.cell = float(cell)
        self.periodic = bool(periodic)
        self.L = float(L)
        if self.members.size:
            self.keys, self.order, _, self.dims = build_cells(
                self.pos, self.members, self.cell, self.periodic, self.L)
        else:
            self.keys = np.zeros(0, np.int64)
            self.order = np.zeros(0, np.int64)

    def indexed(self) -> np.ndarray:
        return np.sort(self.order)

    def pairs(self, rcut=None):
        r = self.cell if rcut is None else rcut
        i, j = pairs_within(self.pos, self.members, r, self.periodic, self.L)
        return _as_pair_array(i, j)


def brute_force_pairs(pos, alive, rcut, periodic=False, L=1.0):
    idx = np.flatnonzero(alive).astype(np.int64)
    i, j = pairs_brute(np.ascontiguousarray(pos, float), idx, float(rcut), bool(periodic), float(L))
    return _as_pair_array(i, j)


def _as_pair_array(i, j):
    p = np.stack([i, j], axis=1) if len(i) else np.zeros((0, 2), np.int64)
    if len(p):
        p = p[np.lexsort((p[:, 1], p[:, 0]))]
    return p


@nb.njit(cache=True)
def torus_pairs(pos, idx, rcut, L, cell=0.0):
    """Specialized 3-D periodic version of :func:`pairs_within`.

    Cell-sorted coordinates and a half-shell stencil; same pair set. Cells
    have side ``max(rcut, cell)``.
    """
    n = idx.size
    nc = int(math.floor(L / max(rcut, cell)))
    if nc < 3:
        return pairs_brute(pos, idx, rcut, True, L)
    csz = L / nc
    half = 0.5 * L
    ncell = nc * nc * nc
    key = np.empty(n, dtype=np.int64)
    for a in range(n):
        i = idx[a]
        cx = int(pos[i, 0] / csz) % nc
        cy = int(pos[i, 1] / csz) % nc
        cz = int(pos[i, 2] / csz) % nc
        key[a] = (cx * nc + cy) * nc + cz
    start = np.zeros(ncell + 1, dtype=np.int64)
    for a in range(n):
        start[key[a] + 1] += 1
    for c in range(ncell):
        start[c + 1] += start[c]
    fill = start[:-1].copy()
    sx = np.empty(n)
    sy = np.empty(n)
    sz = np.empty(n)
    sid = np.empty(n, dtype=np.int64)
    for a in range(n):
        q = fill[key[a]]
        fill[key[a]] += 1
        i = idx[a]
        sx[q] = pos[i, 0]
        sy[q] = pos[i, 1]
        sz[q] = pos[i, 2]
        sid[q] = i
    r2 = rcut * rcut
    cap = 64 + 4 * n
    out_i = np.empty(cap, dtype=np.int64)
    out_j = np.empty(cap, dtype=np.int64)
    cnt = 0
    for cx in range(nc):
        for cy in range(nc):
            for cz in range(nc):
                c0 = (cx * nc + cy) * nc + cz
                a0, a1 = start[c0], start[c0 + 1]
                if a0 == a1:
                    continue
                for o in range(14):
                    # own cell, then 13 forward neighbours
                    if o == 0:
                        ox, oy, oz = 0, 0, 0
                    else:
                        m = o + 13  # offsets 14..26 of the 27-stencil
                        ox = m // 9 - 1
                        oy = (m // 3) % 3 - 1
                        oz = m % 3 - 1
                    nx = (cx + ox) % nc
                    ny = (cy + oy) % nc
                    nz = (cz + oz) % nc
                    c1 = (nx * nc + ny) * nc + nz
                    b0, b1 = start[c1], start[c1 + 1]
                    for a in range(a0, a1):
                        xa, ya, za = sx[a], sy[a], sz[a]
                        bb = a + 1 if o == 0 else b0
                        for b in range(bb, b1):
                            dx = sx[b] - xa
                            if dx > half:
                                dx -= L
                            elif dx < -half:
                                dx += L
                            dy = sy[b] - ya
                            if dy > half:
                                dy -= L
                            elif dy < -half:
                                dy += L
                            dz = sz[b] - za
                            if dz > half:
                                dz -= L
                            elif dz < -half:
                                dz += L
                            if dx * dx + dy * dy + dz * dz < r2:
                                if cnt == out_i.size:
                                    out_i = np.concatenate((out_i, np.empty_like(out_i)))
                                    out_j = np.concatenate((out_j, np.empty_like(out_j)))
                                i, j = sid[a], sid[b]
                                out_i[cnt] = min(i, j)
                                out_j[cnt] = max(i, j)
                                cnt += 1
    return out_i[:cnt], out_j[:cnt]
