"""Numba kernels behind the CSC matrix operations and the field update.

All kernels follow the same parallel layout: columns are independent work
items, output offsets come from a prefix sum over per-column counts, so
concurrent writers never overlap.  Scratch accumulators are per-chunk
(one chunk per worker) and use a stamp trick instead of clearing: a slot
is valid only if its stamp equals the current column's stamp.
"""

import numpy as np
from numba import njit, prange


@njit(cache=True, parallel=True)
def spgemm_bounds(b_colptr, b_rowidx, a_colptr, bounds):
    # upper bound on nnz of each output column: sum of nnz(A[:,u]) over u in B[:,j]
    n = b_colptr.size - 1
    for j in prange(n):
        t = 0
        for p in range(b_colptr[j], b_colptr[j + 1]):
            u = b_rowidx[p]
            t += a_colptr[u + 1] - a_colptr[u]
        bounds[j] = t


@njit(cache=True, parallel=True)
def spgemm_numeric(a_colptr, a_rowidx, a_vals,
                   b_colptr, b_rowidx, b_vals,
                   pad_ptr, rows_pad, vals_pad, counts,
                   chunk_bounds, marker, accum, touched, stamp0):
    n_chunks = chunk_bounds.size - 1
    for c in prange(n_chunks):
        mark = marker[c]
        acc = accum[c]
        tch = touched[c]
        for j in range(chunk_bounds[c], chunk_bounds[c + 1]):
            stamp = stamp0 + j
            k = 0
            for p in range(b_colptr[j], b_colptr[j + 1]):
                u = b_rowidx[p]
                bv = b_vals[p]
                for q in range(a_colptr[u], a_colptr[u + 1]):
                    r = a_rowidx[q]
                    if mark[r] != stamp:
                        mark[r] = stamp
                        acc[r] = a_vals[q] * bv
                        tch[k] = r
                        k += 1
                    else:
                        acc[r] += a_vals[q] * bv
            sub = tch[:k]
            sub.sort()
            w = pad_ptr[j]
            cnt = 0
            for t in range(k):
                r = sub[t]
                v = acc[r]
                if v != 0.0:
                    rows_pad[w + cnt] = r
                    vals_pad[w + cnt] = v
                    cnt += 1
            counts[j] = cnt


@njit(cache=True, parallel=True)
def compact_padded(pad_ptr, counts, out_colptr, rows_pad, vals_pad,
                   rows_out, vals_out):
    n = counts.size
    for j in prange(n):
        w = out_colptr[j]
        p = pad_ptr[j]
        for t in range(counts[j]):
            rows_out[w + t] = rows_pad[p + t]
            vals_out[w + t] = vals_pad[p + t]


@njit(cache=True)
def transpose_kernel(n_rows, colptr, rowidx, vals, t_colptr, t_rowidx, t_vals):
    # t_colptr must arrive zeroed, length n_rows + 1
    n_cols = colptr.size - 1
    nnz = colptr[n_cols]
    for p in range(nnz):
        t_colptr[rowidx[p] + 1] += 1
    for i in range(n_rows):
        t_colptr[i + 1] += t_colptr[i]
    cursor = t_colptr[:n_rows].copy()
    for j in range(n_cols):
        for p in range(colptr[j], colptr[j + 1]):
            r = rowidx[p]
            w = cursor[r]
            t_rowidx[w] = j
            t_vals[w] = vals[p]
            cursor[r] = w + 1


@njit(cache=True, parallel=True)
def skeleton_count(p_colptr, p_rowidx, p_vals, l_colptr, l_rowidx, l_vals,
                   counts):
    # row is of interest when phi > 0, or phi == 0 and lt > 0
    n = counts.size
    for j in prange(n):
        a = p_colptr[j]
        ae = p_colptr[j + 1]
        b = l_colptr[j]
        be = l_colptr[j + 1]
        c = 0
        while a < ae or b < be:
            if b >= be or (a < ae and p_rowidx[a] < l_rowidx[b]):
                if p_vals[a] > 0.0:
                    c += 1
                a += 1
            elif a >= ae or l_rowidx[b] < p_rowidx[a]:
                if l_vals[b] > 0.0:
                    c += 1
                b += 1
            else:
                if p_vals[a] > 0.0 or (p_vals[a] == 0.0 and l_vals[b] > 0.0):
                    c += 1
                a += 1
                b += 1
        counts[j] = c


@njit(cache=True, parallel=True)
def skeleton_fill(p_colptr, p_rowidx, p_vals, l_colptr, l_rowidx, l_vals,
                  s_colptr, s_rowidx):
    n = s_colptr.size - 1
    for j in prange(n):
        a = p_colptr[j]
        ae = p_colptr[j + 1]
        b = l_colptr[j]
        be = l_colptr[j + 1]
        w = s_colptr[j]
        while a < ae or b < be:
            if b >= be or (a < ae and p_rowidx[a] < l_rowidx[b]):
                if p_vals[a] > 0.0:
                    s_rowidx[w] = p_rowidx[a]
                    w += 1
                a += 1
            elif a >= ae or l_rowidx[b] < p_rowidx[a]:
                if l_vals[b] > 0.0:
                    s_rowidx[w] = l_rowidx[b]
                    w += 1
                b += 1
            else:
                if p_vals[a] > 0.0 or (p_vals[a] == 0.0 and l_vals[b] > 0.0):
                    s_rowidx[w] = p_rowidx[a]
                    w += 1
                a += 1
                b += 1


@njit(cache=True, parallel=True)
def expand_kernel(a_colptr, a_rowidx, a_vals, s_colptr, s_rowidx,
                  out_vals, bad_col):
    # copy A's values onto the skeleton pattern; explicit zeros elsewhere.
    # a nonzero of A whose position is missing from S flags bad_col[j].
    n = s_colptr.size - 1
    for j in prange(n):
        a = a_colptr[j]
        ae = a_colptr[j + 1]
        for p in range(s_colptr[j], s_colptr[j + 1]):
            r = s_rowidx[p]
            while a < ae and a_rowidx[a] < r:
                if a_vals[a] != 0.0:
                    bad_col[j] = a_rowidx[a]
                a += 1
            if a < ae and a_rowidx[a] == r:
                out_vals[p] = a_vals[a]
                a += 1
            else:
                out_vals[p] = 0.0
        while a < ae:
            if a_vals[a] != 0.0:
                bad_col[j] = a_rowidx[a]
            a += 1


@njit(cache=True, parallel=True)
def update_kernel(s_colptr, s_rowidx, phi_hat, lt_hat,
                  w, a, e, e_base, mu, dt, deltas, nan_col):
    # one Euler update per skeleton column.  Uniform couplings with zero
    # diagonal collapse to per-column aggregates; the base layer (row 0)
    # is special: no pair penalty (cells claim free territory unhindered)
    # and a signed band interaction, so cells gain the mass the base
    # loses (see field.step docs).
    n = s_colptr.size - 1
    for j in prange(n):
        p0 = s_colptr[j]
        p1 = s_colptr[j + 1]
        ni = p1 - p0
        deltas[j] = 0.0
        if ni == 0:
            continue
        sl = 0.0
        sp = 0.0
        sr = 0.0
        for p in range(p0, p1):
            sl += lt_hat[p]
            sp += phi_hat[p]
            sr += np.sqrt(phi_hat[p])
        has_base = s_rowidx[p0] == 0
        rb = np.sqrt(phi_hat[p0]) if has_base else 0.0
        sp_cells = sp - phi_hat[p0] if has_base else sp
        n_cells = ni - 1 if has_base else ni
        inv_ni = 1.0 / ni
        nif = float(ni)
        # the base is passive: cells pay no penalty against it (free
        # growth into unclaimed territory), but the base is crowded out
        # by every cell present, so walls of leftover base collapse
        agg_w = w * max(n_cells - 1.0, 0.0) * sp_cells
        if has_base:
            agg_w += w * sp_cells
        agg = 0.5 * a * (nif - 1.0) * sl + agg_w
        for p in range(p0, p1):
            phi_j = phi_hat[p]
            rj = np.sqrt(phi_j)
            al_j = a * (sl - lt_hat[p])
            if s_rowidx[p] == 0:
                w_j = w * sp_cells
                eterm = -e_base * rj * (sr - rj)
            else:
                w_j = w * (sp_cells - phi_j)
                if has_base:
                    eterm = rj * (e * (sr - rj - rb) + e_base * rb)
                else:
                    eterm = rj * e * (sr - rj)
            pair_sum = nif * (0.5 * al_j + w_j) - agg
            d = -mu * inv_ni * (pair_sum - eterm)
            v = phi_j + d * dt
            if v != v:
                nan_col[j] = 1
                v = phi_j
            if v > 1.0:
                v = 1.0
            elif v <= 0.0:
                v = 0.0
            phi_hat[p] = v


@njit(cache=True, parallel=True)
def column_sums_counts(colptr, vals, sums, counts):
    n = colptr.size - 1
    for j in prange(n):
        s = 0.0
        c = 0
        for p in range(colptr[j], colptr[j + 1]):
            v = vals[p]
            s += v
            if v != 0.0:
                c += 1
        sums[j] = s
        counts[j] = c


@njit(cache=True, parallel=True)
def normalize_compact(colptr, rowidx, vals, old_vals, sums,
                      out_colptr, out_rowidx, out_vals,
                      base_mass_col, deltas):
    # scale each positive-sum column to unit sum, drop zeros, and record
    # the post-normalization change against old_vals (same pattern).
    n = colptr.size - 1
    for j in prange(n):
        s = sums[j]
        w = out_colptr[j]
        bm = 0.0
        maxd = 0.0
        inv = 1.0 / s if s > 0.0 else 0.0
        for p in range(colptr[j], colptr[j + 1]):
            v = vals[p]
            nv = v * inv if s > 0.0 else v
            if nv != 0.0:
                out_rowidx[w] = rowidx[p]
                out_vals[w] = nv
                if rowidx[p] == 0:
                    bm += nv
                w += 1
            dd = abs(nv - old_vals[p])
            if dd > maxd:
                maxd = dd
        base_mass_col[j] = bm
        deltas[j] = maxd


@njit(cache=True, parallel=True)
def point_triangle_distances(points, tri_a, tri_b, tri_c, out):
    # closest-point-on-triangle distance (Ericson, Real-Time Collision
    # Detection, 5.1.5), minimized over all triangles per point.
    n = points.shape[0]
    m = tri_a.shape[0]
    for i in prange(n):
        px = points[i, 0]
        py = points[i, 1]
        pz = points[i, 2]
        best = 1e300
        for t in range(m):
            ax = tri_a[t, 0]
            ay = tri_a[t, 1]
            az = tri_a[t, 2]
            abx = tri_b[t, 0] - ax
            aby = tri_b[t, 1] - ay
            abz = tri_b[t, 2] - az
            acx = tri_c[t, 0] - ax
            acy = tri_c[t, 1] - ay
            acz = tri_c[t, 2] - az
            apx = px - ax
            apy = py - ay
            apz = pz - az
            d1 = abx * apx + aby * apy + abz * apz
            d2 = acx * apx + acy * apy + acz * apz
            if d1 <= 0.0 and d2 <= 0.0:
                qx, qy, qz = ax, ay, az
            else:
                bpx = px - tri_b[t, 0]
                bpy = py - tri_b[t, 1]
                bpz = pz - tri_b[t, 2]
                d3 = abx * bpx + aby * bpy + abz * bpz
                d4 = acx * bpx + acy * bpy + acz * bpz
                if d3 >= 0.0 and d4 <= d3:
                    qx, qy, qz = tri_b[t, 0], tri_b[t, 1], tri_b[t, 2]
                else:
                    vc = d1 * d4 - d3 * d2
                    if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
                        denom = d1 - d3
                        vv = d1 / denom if denom != 0.0 else 0.0
                        qx = ax + vv * abx
                        qy = ay + vv * aby
                        qz = az + vv * abz
                    else:
                        cpx = px - tri_c[t, 0]
                        cpy = py - tri_c[t, 1]
                        cpz = pz - tri_c[t, 2]
                        d5 = abx * cpx + aby * cpy + abz * cpz
                        d6 = acx * cpx + acy * cpy + acz * cpz
                        if d6 >= 0.0 and d5 <= d6:
                            qx, qy, qz = tri_c[t, 0], tri_c[t, 1], tri_c[t, 2]
                        else:
                            vb = d5 * d2 - d1 * d6
                            if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
                                denom = d2 - d6
                                ww = d2 / denom if denom != 0.0 else 0.0
                                qx = ax + ww * acx
                                qy = ay + ww * acy
                                qz = az + ww * acz
                            else:
                                va = d3 * d6 - d5 * d4
                                if va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
                                    denom = (d4 - d3) + (d5 - d6)
                                    ww = (d4 - d3) / denom if denom != 0.0 else 0.0
                                    qx = tri_b[t, 0] + ww * (tri_c[t, 0] - tri_b[t, 0])
                                    qy = tri_b[t, 1] + ww * (tri_c[t, 1] - tri_b[t, 1])
                                    qz = tri_b[t, 2] + ww * (tri_c[t, 2] - tri_b[t, 2])
                                else:
                                    denom = va + vb + vc
                                    vv = vb / denom if denom != 0.0 else 0.0
                                    ww = vc / denom if denom != 0.0 else 0.0
                                    qx = ax + vv * abx + ww * acx
                                    qy = ay + vv * aby + ww * acy
                                    qz = az + vv * abz + ww * acz
            dx = px - qx
            dy = py - qy
            dz = pz - qz
            d = dx * dx + dy * dy + dz * dz
            if d < best:
                best = d
        out[i] = np.sqrt(best)
