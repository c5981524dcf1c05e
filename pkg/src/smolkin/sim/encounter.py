"""Encounter-driven engine for constant-diffusivity, constant-strength runs.

When ``d(.)`` and ``alpha(.,.)`` are constant, a particle's path does not
depend on what it has collided with. Every particle can therefore follow a
fixed Brownian path ("ghost path") and the collision process is a
thinning of pair clocks along those paths.

The engine advances all paths with coarse steps ``Delta``. For a pair that can
possibly come within the prune radius during a coarse step, the two paths
are refined by dyadic Brownian-bridge midpoints down to leaves of length
``delta <= c_dt eps^2``. A node is pruned when the relative chord stays
further than ``r_prune + k * sigma_bridge`` from the origin. On each leaf the
pair accumulates hazard ``alpha V_eps(x_j - x_i) delta`` (positions frozen
at the leaf start, as in the fixed-step scheme). A pair collides at the end
of the leaf where its cumulative hazard first exceeds an Exp(1) threshold,
provided both members are still alive then.

Midpoints are keyed by (particle, coarse step, tree node), so a particle's
refined path is the same whichever partner asks for it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numba as nb
import numpy as np
from numba import types
from numba.typed import Dict

from .. import rng
from .cells import min_image
from .stepper import ACC_MASS_CAP, _table

_TAG_STEP = 1
_TAG_BRIDGE = 2
_TAG_CLOCK = 3
_TAG_ORDER = 4


@dataclass(frozen=True)
class EncounterPolicy:
    """Coarse step ``Delta = T / 2^coarse_pow``; leaves of length ``<= c_dt eps^2``."""

    c_dt: float = 0.02
    coarse_dt: float = 2.0 ** -15
    k_sigma: float = 5.0
    max_rate_dt: float = 0.2

    def levels(self, eps: float) -> int:
        return max(0, int(math.ceil(math.log2(self.coarse_dt / (self.c_dt * eps * eps)))))

    def leaf(self, eps: float) -> float:
        return self.coarse_dt / 2 ** self.levels(eps)


@nb.njit(cache=True)
def _seg_dist(ax, ay, az, bx, by, bz):
    # distance from the origin to the segment [a, b]
    dx, dy, dz = bx - ax, by - ay, bz - az
    l2 = dx * dx + dy * dy + dz * dz
    t = 0.0
    if l2 > 0.0:
        t = -(ax * dx + ay * dy + az * dz) / l2
        if t < 0.0:
            t = 0.0
        elif t > 1.0:
            t = 1.0
    px, py, pz = ax + t * dx, ay + t * dy, az + t * dz
    return math.sqrt(px * px + py * py + pz * pz)


@nb.njit(cache=True)
def _grow_f(a, n):
    b = np.empty(max(2 * a.shape[0], n), dtype=a.dtype)
    b[: a.shape[0]] = a
    return b


@nb.njit(cache=True)
def _grow2(a, n):
    b = np.empty((max(2 * a.shape[0], n), a.shape[1]), dtype=a.dtype)
    b[: a.shape[0]] = a
    return b


@nb.njit(cache=True)
def _wrap(d, half, L):
    if d > half:
        return d - L
    if d < -half:
        return d + L
    return d


@nb.njit(cache=True)
def chord_pairs(mid, h, idx, base, hcap, L):
    """Pairs whose chord midpoints are closer than ``base + h_i + h_j``.

    Cells have side ``>= base + 2 hcap``; particles with ``h > hcap`` get an
    extra wide search so the result is exact for every ``h``.
    """
    n = idx.size
    cs = base + 2.0 * hcap
    nc = int(math.floor(L / cs))
    out_i = np.empty(64 + 2 * n, dtype=np.int64)
    out_j = np.empty(64 + 2 * n, dtype=np.int64)
    cnt = 0
    half = 0.5 * L
    if nc < 3:
        for a in range(n):
            for b in range(a + 1, n):
                i, j = idx[a], idx[b]
                dx = _wrap(mid[j, 0] - mid[i, 0], half, L)
                dy = _wrap(mid[j, 1] - mid[i, 1], half, L)
                dz = _wrap(mid[j, 2] - mid[i, 2], half, L)
                lim = base + h[i] + h[j]
                if dx * dx + dy * dy + dz * dz < lim * lim:
                    if cnt == out_i.size:
                        out_i = _grow_f(out_i, cnt + 1)
                        out_j = _grow_f(out_j, cnt + 1)
                    out_i[cnt] = min(i, j)
                    out_j[cnt] = max(i, j)
                    cnt += 1
        return out_i[:cnt], out_j[:cnt]
    csz = L / nc
    ncell = nc * nc * nc
    cx = np.empty(n, dtype=np.int64)
    cy = np.empty(n, dtype=np.int64)
    cz = np.empty(n, dtype=np.int64)
    start = np.zeros(ncell + 1, dtype=np.int64)
    hmax = 0.0
    for a in range(n):
        i = idx[a]
        cx[a] = int(mid[i, 0] / csz) % nc
        cy[a] = int(mid[i, 1] / csz) % nc
        cz[a] = int(mid[i, 2] / csz) % nc
        start[(cx[a] * nc + cy[a]) * nc + cz[a] + 1] += 1
        if h[i] > hmax:
            hmax = h[i]
    for c in range(ncell):
        start[c + 1] += start[c]
    fill = start[:-1].copy()
    sx = np.empty(n)
    sy = np.empty(n)
    sz = np.empty(n)
    sh = np.empty(n)
    sid = np.empty(n, dtype=np.int64)
    for a in range(n):
        c = (cx[a] * nc + cy[a]) * nc + cz[a]
        q = fill[c]
        fill[c] += 1
        i = idx[a]
        sx[q] = mid[i, 0]
        sy[q] = mid[i, 1]
        sz[q] = mid[i, 2]
        sh[q] = h[i]
        sid[q] = i
    for x0 in range(nc):
        for y0 in range(nc):
            for z0 in range(nc):
                c0 = (x0 * nc + y0) * nc + z0
                a0, a1 = start[c0], start[c0 + 1]
                if a0 == a1:
                    continue
                for o in range(14):
                    if o == 0:
                        ox, oy, oz = 0, 0, 0
                    else:
                        m = o + 13
                        ox = m // 9 - 1
                        oy = (m // 3) % 3 - 1
                        oz = m % 3 - 1
                    c1 = (((x0 + ox) % nc) * nc + (y0 + oy) % nc) * nc + (z0 + oz) % nc
                    b0, b1 = start[c1], start[c1 + 1]
                    for a in range(a0, a1):
                        xa, ya, za, ha = sx[a], sy[a], sz[a], sh[a]
                        bb = a + 1 if o == 0 else b0
                        for b in range(bb, b1):
                            dx = _wrap(sx[b] - xa, half, L)
                            dy = _wrap(sy[b] - ya, half, L)
                            dz = _wrap(sz[b] - za, half, L)
                            lim = base + ha + sh[b]
                            if dx * dx + dy * dy + dz * dz < lim * lim:
                                if cnt == out_i.size:
                                    out_i = _grow_f(out_i, cnt + 1)
                                    out_j = _grow_f(out_j, cnt + 1)
                                i, j = sid[a], sid[b]
                                out_i[cnt] = min(i, j)
                                out_j[cnt] = max(i, j)
                                cnt += 1
    if hmax <= hcap:
        return out_i[:cnt], out_j[:cnt]
    # wide search for large movers, skipping cell pairs already examined
    for c0 in range(ncell):
        for a in range(start[c0], start[c0 + 1]):
            if sh[a] <= hcap:
                continue
            x0 = c0 // (nc * nc)
            y0 = (c0 // nc) % nc
            z0 = c0 % nc
            reach = base + sh[a] + hmax
            m = int(math.ceil(reach / csz))
            full = 2 * m + 1 >= nc
            lo = 0 if full else -m
            hi = nc - 1 if full else m
            for ox in range(lo, hi + 1):
                for oy in range(lo, hi + 1):
                    for oz in range(lo, hi + 1):
                        if full:
                            nx, ny, nz = ox, oy, oz
                        else:
                            nx, ny, nz = (x0 + ox) % nc, (y0 + oy) % nc, (z0 + oz) % nc
                        ddx = (nx - x0) % nc
                        ddy = (ny - y0) % nc
                        ddz = (nz - z0) % nc
                        if ((ddx <= 1 or ddx == nc - 1) and (ddy <= 1 or ddy == nc - 1)
                                and (ddz <= 1 or ddz == nc - 1)):
                            continue
                        c1 = (nx * nc + ny) * nc + nz
                        for b in range(start[c1], start[c1 + 1]):
                            if sh[b] > hcap and sid[b] < sid[a]:
                                continue  # the other large mover reports it
                            dx = _wrap(sx[b] - sx[a], half, L)
                            dy = _wrap(sy[b] - sy[a], half, L)
                            dz = _wrap(sz[b] - sz[a], half, L)
                            lim = base + sh[a] + sh[b]
                            if dx * dx + dy * dy + dz * dz < lim * lim:
                                if cnt == out_i.size:
                                    out_i = _grow_f(out_i, cnt + 1)
                                    out_j = _grow_f(out_j, cnt + 1)
                                i, j = sid[a], sid[b]
                                out_i[cnt] = min(i, j)
                                out_j[cnt] = max(i, j)
                                cnt += 1
    return out_i[:cnt], out_j[:cnt]


@nb.njit(cache=True)
def encounter_kernel(pos0, mass0, D, alpha, rt, vt, eps, L, seed, n_coarse, dtc, levels,
                     k_sigma, annihilation, snap_steps, g_rmax, g_bins, g_t0, g_t1):
    """Run the engine from ``pos0`` for ``n_coarse`` coarse steps on the torus of side L.

    Returns death times, masses, event rows, accumulators, snapshots, g histogram, stats.
    """
    N = pos0.shape[0]
    pos = pos0.copy()
    mass = mass0.copy()
    alive = np.ones(N, dtype=np.bool_)
    death = np.full(N, np.inf)
    R = rt[-1]
    r_int = R * eps
    r_prune = max(r_int, g_rmax * eps)
    sig_c = math.sqrt(2.0 * D * dtc)
    s_rel = 4.0 * D  # relative per-coordinate variance rate
    leaf = dtc / 2.0 ** levels
    vscale = alpha / (eps * eps)

    s_step = rng.key2(seed, _TAG_STEP)
    s_br = rng.key2(seed, _TAG_BRIDGE)
    s_clk = rng.key2(seed, _TAG_CLOCK)
    s_ord = rng.key2(seed, _TAG_ORDER)

    H = Dict.empty(key_type=types.int64, value_type=types.float64)

    inc = np.zeros((N, 3))
    mid = np.zeros((N, 3))
    hlen = np.zeros(N)
    # half-chord cap: ~1% of 3-d Gaussian increments exceed it
    hcap = 0.5 * 3.4 * sig_c
    z3 = np.empty(3)
    zi = np.empty(3)
    zj = np.empty(3)

    # outputs
    ev = np.empty((64, 5), dtype=np.int64)
    ev_t = np.empty(64)
    ev_x = np.empty((64, 3))
    n_ev = 0
    acc_un = 0.0
    cap = ACC_MASS_CAP
    acc_m = np.zeros((cap, cap))
    n_snap = snap_steps.size
    snap_pos = np.empty((n_snap, N, 3))
    snap_alive = np.zeros((n_snap, N), dtype=np.bool_)
    snap_mass = np.zeros((n_snap, N), dtype=np.int64)
    ghist = np.zeros(g_bins)
    stats = np.zeros(4)  # candidate pairs, nodes visited, leaves, threshold crossings

    # DFS stack: node id, level, t_start, then 12 offsets (i_a, i_b, j_a, j_b)
    depth = 2 * (levels + 2)
    st_node = np.empty(depth, dtype=np.int64)
    st_lev = np.empty(depth, dtype=np.int64)
    st_t = np.empty(depth)
    st_o = np.empty((depth, 12))

    # per-step leaf records and collision candidates
    rec_p = np.empty(256, dtype=np.int64)
    rec_t = np.empty(256)
    rec_h = np.empty(256)
    rec_r = np.empty(256)
    cand_p = np.empty(64, dtype=np.int64)
    cand_t = np.empty(64)
    cand_x = np.empty((64, 6))
    o = np.empty(12)
    mi = np.empty(3)
    mj = np.empty(3)

    snap_k = 0
    while snap_k < n_snap and snap_steps[snap_k] == 0:
        snap_pos[snap_k] = pos
        snap_alive[snap_k] = alive
        snap_mass[snap_k] = mass
        snap_k += 1

    for s in range(n_coarse):
        t0 = s * dtc
        idx = np.flatnonzero(alive).astype(np.int64)
        if idx.size == 0:
            break
        for a in range(idx.size):
            i = idx[a]
            rng.normal3(rng.key3(s_step, s, i), z3)
            hh = 0.0
            for k in range(3):
                inc[i, k] = sig_c * z3[k]
                m = pos[i, k] + 0.5 * inc[i, k]
                mid[i, k] = m - L * math.floor(m / L)
                hh += inc[i, k] * inc[i, k]
            hlen[i] = 0.5 * math.sqrt(hh)
        z_root = k_sigma * 0.5 * math.sqrt(s_rel * dtc)
        pi, pj = chord_pairs(mid, hlen, idx, r_prune + z_root, hcap, L)

        n_rec = 0
        n_cand = 0
        for p in range(pi.size):
            i, j = pi[p], pj[p]
            # relative start (minimum image) and the two chords
            r0x = min_image(pos[j, 0] - pos[i, 0], L)
            r0y = min_image(pos[j, 1] - pos[i, 1], L)
            r0z = min_image(pos[j, 2] - pos[i, 2], L)
            if _seg_dist(r0x, r0y, r0z, r0x + inc[j, 0] - inc[i, 0],
                         r0y + inc[j, 1] - inc[i, 1], r0z + inc[j, 2] - inc[i, 2]) > r_prune + z_root:
                continue
            stats[0] += 1
            key = i * N + j
            h_run = H.get(key, 0.0)
            thr = -math.log(rng.to_unit(rng.key3(s_clk, i, j)))
            crossed = False
            sp = 0
            st_node[0] = 1
            st_lev[0] = 0
            st_t[0] = t0
            for k in range(3):
                st_o[0, k] = 0.0
                st_o[0, 3 + k] = inc[i, k]
                st_o[0, 6 + k] = 0.0
                st_o[0, 9 + k] = inc[j, k]
            sp = 1
            while sp > 0 and not crossed:
                sp -= 1
                node = st_node[sp]
                lev = st_lev[sp]
                ta = st_t[sp]
                for k in range(12):
                    o[k] = st_o[sp, k]
                stats[1] += 1
                ax = r0x + o[6] - o[0]
                ay = r0y + o[7] - o[1]
                az = r0z + o[8] - o[2]
                if lev == levels:
                    stats[2] += 1
                    r = math.sqrt(ax * ax + ay * ay + az * az)
                    if r >= r_prune:
                        continue
                    hz = 0.0
                    if r < r_int:
                        hz = vscale * _table(r / eps, rt, vt) * leaf
                    if n_rec == rec_p.size:
                        rec_p = _grow_f(rec_p, n_rec + 1)
                        rec_t = _grow_f(rec_t, n_rec + 1)
                        rec_h = _grow_f(rec_h, n_rec + 1)
                        rec_r = _grow_f(rec_r, n_rec + 1)
                    rec_p[n_rec] = p
                    rec_t[n_rec] = ta
                    rec_h[n_rec] = hz
                    rec_r[n_rec] = r
                    n_rec += 1
                    if hz > 0.0:
                        h_run += hz
                        if h_run >= thr:
                            crossed = True
                            stats[3] += 1
                            if n_cand == cand_p.size:
                                cand_p = _grow_f(cand_p, n_cand + 1)
                                cand_t = _grow_f(cand_t, n_cand + 1)
                                cand_x = _grow2(cand_x, n_cand + 1)
                            cand_p[n_cand] = p
                            cand_t[n_cand] = ta + leaf
                            for k in range(3):
                                cand_x[n_cand, k] = pos[i, k] + o[k]
                                cand_x[n_cand, 3 + k] = pos[j, k] + o[6 + k]
                            n_cand += 1
                    continue
                bx = r0x + o[9] - o[3]
                by = r0y + o[10] - o[4]
                bz = r0z + o[11] - o[5]
                ln = dtc / 2.0 ** lev
                if lev > 0:
                    zc = k_sigma * 0.5 * math.sqrt(s_rel * ln)
                    if _seg_dist(ax, ay, az, bx, by, bz) > r_prune + zc:
                        continue
                # bridge midpoints for both particles
                sd = math.sqrt(2.0 * D * ln / 4.0)
                rng.normal3(rng.key4(s_br, i, s, node), zi)
                rng.normal3(rng.key4(s_br, j, s, node), zj)
                for k in range(3):
                    mi[k] = 0.5 * (o[k] + o[3 + k]) + sd * zi[k]
                    mj[k] = 0.5 * (o[6 + k] + o[9 + k]) + sd * zj[k]
                tm = ta + 0.5 * ln
                # push right then left so the left half is processed first
                st_node[sp] = 2 * node + 1
                st_lev[sp] = lev + 1
                st_t[sp] = tm
                for k in range(3):
                    st_o[sp, k] = mi[k]
                    st_o[sp, 3 + k] = o[3 + k]
                    st_o[sp, 6 + k] = mj[k]
                    st_o[sp, 9 + k] = o[9 + k]
                sp += 1
                st_node[sp] = 2 * node
                st_lev[sp] = lev + 1
                st_t[sp] = ta
                for k in range(3):
                    st_o[sp, k] = o[k]
                    st_o[sp, 3 + k] = mi[k]
                    st_o[sp, 6 + k] = o[6 + k]
                    st_o[sp, 9 + k] = mj[k]
                sp += 1
            if crossed:
                if key in H:
                    del H[key]
            elif h_run > 0.0:
                H[key] = h_run

        # realize candidates in time order (ties in random order)
        if n_cand > 0:
            tie = np.empty(n_cand)
            for c in range(n_cand):
                tie[c] = rng.to_unit(rng.key4(s_ord, s, pi[cand_p[c]], pj[cand_p[c]]))
            o1 = np.argsort(tie)
            o2 = np.argsort(cand_t[:n_cand][o1], kind="mergesort")
            for q in range(n_cand):
                c = o1[o2[q]]
                i, j = pi[cand_p[c]], pj[cand_p[c]]
                tc = cand_t[c]
                if death[i] < tc or death[j] < tc or not (alive[i] and alive[j]):
                    continue
                if n_ev == ev.shape[0]:
                    ev = _grow2(ev, n_ev + 1)
                    ev_t = _grow_f(ev_t, n_ev + 1)
                    ev_x = _grow2(ev_x, n_ev + 1)
                mi_, mj_ = mass[i], mass[j]
                ev[n_ev, 0] = i
                ev[n_ev, 1] = j
                ev[n_ev, 2] = mi_
                ev[n_ev, 3] = mj_
                ev_t[n_ev] = tc
                if annihilation:
                    alive[i] = False
                    alive[j] = False
                    death[i] = tc
                    death[j] = tc
                    ev[n_ev, 4] = -1
                    for k in range(3):
                        ev_x[n_ev, k] = cand_x[c, k]
                else:
                    u = rng.to_unit(rng.key4(s_ord, s, j, i))
                    if u * (mi_ + mj_) < mi_:
                        keep, gone, off = i, j, 0
                    else:
                        keep, gone, off = j, i, 3
                    mass[keep] = mi_ + mj_
                    alive[gone] = False
                    death[gone] = tc
                    ev[n_ev, 4] = keep
                    for k in range(3):
                        ev_x[n_ev, k] = cand_x[c, off + k]
                n_ev += 1

        # leaf records: count only while both members are alive
        for q in range(n_rec):
            p = rec_p[q]
            i, j = pi[p], pj[p]
            t = rec_t[q]
            if t >= death[i] or t >= death[j]:
                continue
            hz = rec_h[q]
            if hz > 0.0:
                acc_un += hz
                mi_, mj_ = mass0[i] if annihilation else mass[i], mass0[j] if annihilation else mass[j]
                if mi_ <= cap and mj_ <= cap:
                    acc_m[mi_ - 1, mj_ - 1] += hz
                    acc_m[mj_ - 1, mi_ - 1] += hz
            if g_bins > 0 and t >= g_t0 and t < g_t1:
                b = int(rec_r[q] / eps / g_rmax * g_bins)
                if b < g_bins:
                    ghist[b] += leaf

        for a in range(idx.size):
            i = idx[a]
            for k in range(3):
                x = pos[i, k] + inc[i, k]
                pos[i, k] = x - L * math.floor(x / L)
        while snap_k < n_snap and snap_steps[snap_k] == s + 1:
            snap_pos[snap_k] = pos
            snap_alive[snap_k] = alive
            snap_mass[snap_k] = mass
            snap_k += 1

    while snap_k < n_snap:
        snap_pos[snap_k] = pos
        snap_alive[snap_k] = alive
        snap_mass[snap_k] = mass
        snap_k += 1
    return (death, mass, ev[:n_ev], ev_t[:n_ev], ev_x[:n_ev], acc_un, acc_m,
            snap_pos, snap_alive, snap_mass, ghist, stats)
