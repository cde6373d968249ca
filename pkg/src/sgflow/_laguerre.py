"""Compiled kernels for Laguerre (power) cell construction.

Cells are built one seed at a time by half-space clipping in coordinates
centered on the seed: the power inequality against a competitor at offset
``delta`` with weight ``wc`` reads ``2 delta . y <= |delta|^2 + wi - wc``.
Working in centered coordinates keeps the plane data well conditioned even
for seeds far from the origin.

The polytope is stored as a soup of convex face polygons.  Clipping a face
polygon by a plane is a Sutherland-Hodgman pass; the new cap face is
recovered by collecting the on-plane points and ordering them angularly
around their mean (valid because the cap of a convex body is convex).
"""

import numpy as np
from numba import njit, prange

# Face tags: non-negative values are global competitor-image indices,
# negative values encode the six walls of the starting box as
# -(1 + 2*axis + side) with side 0 -> low, 1 -> high.

STATUS_UNCHANGED = 0
STATUS_CUT = 1
STATUS_EMPTY = 2
STATUS_OVERFLOW = 3


@njit(cache=True)
def _init_box(fv, fnv, ftag, blo, bhi):
    """Fill the face arrays with the axis-aligned starting box."""
    corners = np.empty((8, 3))
    for k in range(8):
        corners[k, 0] = blo[0] if (k & 1) == 0 else bhi[0]
        corners[k, 1] = blo[1] if (k & 2) == 0 else bhi[1]
        corners[k, 2] = blo[2] if (k & 4) == 0 else bhi[2]
    f = 0
    for axis in range(3):
        for side in range(2):
            val = blo[axis] if side == 0 else bhi[axis]
            m = 0
            for k in range(8):
                if (corners[k, axis] == val):
                    fv[f, m, 0] = corners[k, 0]
                    fv[f, m, 1] = corners[k, 1]
                    fv[f, m, 2] = corners[k, 2]
                    m += 1
            # order the 4 corners of the axis-aligned rectangle as a cycle
            a1 = (axis + 1) % 3
            a2 = (axis + 2) % 3
            c1 = 0.5 * (blo[a1] + bhi[a1])
            c2 = 0.5 * (blo[a2] + bhi[a2])
            for p in range(3):
                best = p
                bestang = 1e30
                for q in range(p, 4):
                    ang = np.arctan2(fv[f, q, a2] - c2, fv[f, q, a1] - c1)
                    if ang < bestang:
                        bestang = ang
                        best = q
                if best != p:
                    for d in range(3):
                        tmp = fv[f, p, d]
                        fv[f, p, d] = fv[f, best, d]
                        fv[f, best, d] = tmp
            fnv[f] = 4
            ftag[f] = -(1 + 2 * axis + side)
            f += 1
    return 6


@njit(cache=True)
def _clip_by_plane(fv, fnv, ftag, nf, gv, gnv, gtag, cap, n0, n1, n2, b,
                   tag, eps, dtol, maxv, maxf):
    """Clip the polytope by ``n . y <= b``; returns (new_nf, status)."""
    any_out = False
    any_in = False
    has_coplanar = False
    for f in range(nf):
        all_on = fnv[f] >= 3
        for k in range(fnv[f]):
            s = n0 * fv[f, k, 0] + n1 * fv[f, k, 1] + n2 * fv[f, k, 2] - b
            if s > eps:
                any_out = True
                all_on = False
            elif s < -eps:
                any_in = True
                all_on = False
        if all_on:
            has_coplanar = True
    if not any_out:
        return nf, STATUS_UNCHANGED
    if not any_in:
        return 0, STATUS_EMPTY

    ncap = 0
    gf = 0
    for f in range(nf):
        m = fnv[f]
        out_cnt = 0
        ok = True
        for k in range(m):
            k2 = k + 1 if k + 1 < m else 0
            si = n0 * fv[f, k, 0] + n1 * fv[f, k, 1] + n2 * fv[f, k, 2] - b
            sj = n0 * fv[f, k2, 0] + n1 * fv[f, k2, 1] + n2 * fv[f, k2, 2] - b
            keep_i = si <= eps
            keep_j = sj <= eps
            if keep_i:
                if out_cnt >= maxv:
                    ok = False
                    break
                gv[gf, out_cnt, 0] = fv[f, k, 0]
                gv[gf, out_cnt, 1] = fv[f, k, 1]
                gv[gf, out_cnt, 2] = fv[f, k, 2]
                out_cnt += 1
                if si >= -eps and ncap < cap.shape[0]:
                    cap[ncap, 0] = fv[f, k, 0]
                    cap[ncap, 1] = fv[f, k, 1]
                    cap[ncap, 2] = fv[f, k, 2]
                    ncap += 1
            if keep_i != keep_j:
                t = si / (si - sj)
                if t < 0.0:
                    t = 0.0
                elif t > 1.0:
                    t = 1.0
                px = fv[f, k, 0] + t * (fv[f, k2, 0] - fv[f, k, 0])
                py = fv[f, k, 1] + t * (fv[f, k2, 1] - fv[f, k, 1])
                pz = fv[f, k, 2] + t * (fv[f, k2, 2] - fv[f, k, 2])
                if out_cnt >= maxv:
                    ok = False
                    break
                gv[gf, out_cnt, 0] = px
                gv[gf, out_cnt, 1] = py
                gv[gf, out_cnt, 2] = pz
                out_cnt += 1
                if ncap < cap.shape[0]:
                    cap[ncap, 0] = px
                    cap[ncap, 1] = py
                    cap[ncap, 2] = pz
                    ncap += 1
        if not ok:
            return nf, STATUS_OVERFLOW
        if out_cnt >= 3:
            gnv[gf] = out_cnt
            gtag[gf] = ftag[f]
            gf += 1
            if gf >= maxf:
                return nf, STATUS_OVERFLOW

    # A face already coplanar with the cutting plane bounds the polytope
    # there; adding a cap would duplicate it and inflate the moments.
    if has_coplanar:
        ncap = 0

    # deduplicate cap points in place
    nd = 0
    for k in range(ncap):
        dup = False
        for q in range(nd):
            dx = cap[k, 0] - cap[q, 0]
            dy = cap[k, 1] - cap[q, 1]
            dz = cap[k, 2] - cap[q, 2]
            if dx * dx + dy * dy + dz * dz < dtol * dtol:
                dup = True
                break
        if not dup:
            cap[nd, 0] = cap[k, 0]
            cap[nd, 1] = cap[k, 1]
            cap[nd, 2] = cap[k, 2]
            nd += 1
    if nd >= 3:
        if gf >= maxf:
            return nf, STATUS_OVERFLOW
        # orthonormal basis (u, w) of the plane
        nn = np.sqrt(n0 * n0 + n1 * n1 + n2 * n2)
        ax, ay, az = 1.0, 0.0, 0.0
        if abs(n0) >= abs(n1) and abs(n0) >= abs(n2):
            ax, ay, az = 0.0, 1.0, 0.0
        ux = ay * n2 - az * n1
        uy = az * n0 - ax * n2
        uz = ax * n1 - ay * n0
        un = np.sqrt(ux * ux + uy * uy + uz * uz)
        ux /= un
        uy /= un
        uz /= un
        wx = (n1 * uz - n2 * uy) / nn
        wy = (n2 * ux - n0 * uz) / nn
        wz = (n0 * uy - n1 * ux) / nn
        cx = 0.0
        cy = 0.0
        cz = 0.0
        for k in range(nd):
            cx += cap[k, 0]
            cy += cap[k, 1]
            cz += cap[k, 2]
        cx /= nd
        cy /= nd
        cz /= nd
        ang = np.empty(nd)
        for k in range(nd):
            dx = cap[k, 0] - cx
            dy = cap[k, 1] - cy
            dz = cap[k, 2] - cz
            ang[k] = np.arctan2(dx * wx + dy * wy + dz * wz,
                                dx * ux + dy * uy + dz * uz)
        for p in range(nd):
            best = p
            for q in range(p + 1, nd):
                if ang[q] < ang[best]:
                    best = q
            if best != p:
                tmpa = ang[p]
                ang[p] = ang[best]
                ang[best] = tmpa
                for d in range(3):
                    tmp = cap[p, d]
                    cap[p, d] = cap[best, d]
                    cap[best, d] = tmp
        if nd > maxv:
            return nf, STATUS_OVERFLOW
        for k in range(nd):
            gv[gf, k, 0] = cap[k, 0]
            gv[gf, k, 1] = cap[k, 1]
            gv[gf, k, 2] = cap[k, 2]
        gnv[gf] = nd
        gtag[gf] = tag
        gf += 1

    if gf == 0:
        return 0, STATUS_EMPTY
    for f in range(gf):
        fnv[f] = gnv[f]
        ftag[f] = gtag[f]
        for k in range(gnv[f]):
            fv[f, k, 0] = gv[f, k, 0]
            fv[f, k, 1] = gv[f, k, 1]
            fv[f, k, 2] = gv[f, k, 2]
    return gf, STATUS_CUT


@njit(cache=True)
def _max_vertex_dist2(fv, fnv, nf):
    r2 = 0.0
    for f in range(nf):
        for k in range(fnv[f]):
            d2 = (fv[f, k, 0] * fv[f, k, 0] + fv[f, k, 1] * fv[f, k, 1]
                  + fv[f, k, 2] * fv[f, k, 2])
            if d2 > r2:
                r2 = d2
    return r2


@njit(cache=True)
def _moments(fv, fnv, nf):
    """Volume, centroid and second moment about the origin of the polytope.

    Tetrahedral fan from the vertex mean (interior for a convex body);
    each tetra contributes its exact polynomial moments.
    """
    px = 0.0
    py = 0.0
    pz = 0.0
    cnt = 0
    for f in range(nf):
        for k in range(fnv[f]):
            px += fv[f, k, 0]
            py += fv[f, k, 1]
            pz += fv[f, k, 2]
            cnt += 1
    if cnt == 0:
        return 0.0, 0.0, 0.0, 0.0, 0.0
    px /= cnt
    py /= cnt
    pz /= cnt
    vol = 0.0
    cx = 0.0
    cy = 0.0
    cz = 0.0
    m2 = 0.0
    for f in range(nf):
        m = fnv[f]
        for k in range(1, m - 1):
            ax = fv[f, 0, 0] - px
            ay = fv[f, 0, 1] - py
            az = fv[f, 0, 2] - pz
            bx = fv[f, k, 0] - px
            by = fv[f, k, 1] - py
            bz = fv[f, k, 2] - pz
            ex = fv[f, k + 1, 0] - px
            ey = fv[f, k + 1, 1] - py
            ez = fv[f, k + 1, 2] - pz
            det = (ax * (by * ez - bz * ey) - ay * (bx * ez - bz * ex)
                   + az * (bx * ey - by * ex))
            v = abs(det) / 6.0
            if v == 0.0:
                continue
            vol += v
            sx = px + fv[f, 0, 0] + fv[f, k, 0] + fv[f, k + 1, 0]
            sy = py + fv[f, 0, 1] + fv[f, k, 1] + fv[f, k + 1, 1]
            sz = pz + fv[f, 0, 2] + fv[f, k, 2] + fv[f, k + 1, 2]
            cx += v * sx / 4.0
            cy += v * sy / 4.0
            cz += v * sz / 4.0
            q = (px * px + py * py + pz * pz
                 + fv[f, 0, 0] * fv[f, 0, 0] + fv[f, 0, 1] * fv[f, 0, 1]
                 + fv[f, 0, 2] * fv[f, 0, 2]
                 + fv[f, k, 0] * fv[f, k, 0] + fv[f, k, 1] * fv[f, k, 1]
                 + fv[f, k, 2] * fv[f, k, 2]
                 + fv[f, k + 1, 0] * fv[f, k + 1, 0]
                 + fv[f, k + 1, 1] * fv[f, k + 1, 1]
                 + fv[f, k + 1, 2] * fv[f, k + 1, 2])
            m2 += v / 20.0 * (sx * sx + sy * sy + sz * sz + q)
    if vol > 0.0:
        cx /= vol
        cy /= vol
        cz /= vol
    return vol, cx, cy, cz, m2


@njit(cache=True)
def _face_area(fv, fnv, f):
    """Unsigned area of a (planar convex) face polygon."""
    m = fnv[f]
    sx = 0.0
    sy = 0.0
    sz = 0.0
    for k in range(1, m - 1):
        ax = fv[f, k, 0] - fv[f, 0, 0]
        ay = fv[f, k, 1] - fv[f, 0, 1]
        az = fv[f, k, 2] - fv[f, 0, 2]
        bx = fv[f, k + 1, 0] - fv[f, 0, 0]
        by = fv[f, k + 1, 1] - fv[f, 0, 1]
        bz = fv[f, k + 1, 2] - fv[f, 0, 2]
        sx += ay * bz - az * by
        sy += az * bx - ax * bz
        sz += ax * by - ay * bx
    return 0.5 * np.sqrt(sx * sx + sy * sy + sz * sz)


@njit(cache=True)
def _build_one_cell(r, rows, seeds, weights, img_pts, img_w, cand_idx, cand_cnt,
                    box_lo, box_hi, wmax, eps, dtol, maxv, maxf,
                    vol, cen, m2, nbr_img, nbr_area, nbr_cnt,
                    empty, certified, overflow, r2_out,
                    fv_out, fnv_out, ftag_out, nf_out, keep_faces):
    i = rows[r]
    fv = np.empty((maxf, maxv, 3))
    fnv = np.zeros(maxf, dtype=np.int64)
    ftag = np.zeros(maxf, dtype=np.int64)
    gv = np.empty((maxf, maxv, 3))
    gnv = np.zeros(maxf, dtype=np.int64)
    gtag = np.zeros(maxf, dtype=np.int64)
    cap = np.empty((4 * maxf, 3))

    zx = seeds[i, 0]
    zy = seeds[i, 1]
    zz = seeds[i, 2]
    wi = weights[i]
    blo = np.empty(3)
    bhi = np.empty(3)
    for d in range(3):
        blo[d] = box_lo[i, d]
        bhi[d] = box_hi[i, d]
    nf = _init_box(fv, fnv, ftag, blo, bhi)
    r2 = _max_vertex_dist2(fv, fnv, nf)
    is_empty = False
    cert = False
    over = False
    dw = wmax - wi
    for k in range(cand_cnt[r]):
        c = cand_idx[r, k]
        dx = img_pts[c, 0] - zx
        dy = img_pts[c, 1] - zy
        dz = img_pts[c, 2] - zz
        d2 = dx * dx + dy * dy + dz * dz
        rad = np.sqrt(r2)
        t = r2 + dw
        if t < 0.0:
            t = 0.0
        thresh = rad + np.sqrt(t)
        if d2 >= thresh * thresh:
            cert = True
            break
        if d2 == 0.0:
            # identical positions: the lower-weighted seed loses everything
            if wi < img_w[c]:
                is_empty = True
                break
            continue
        b = d2 + wi - img_w[c]
        # eps is a length; scale by |n| so classification is by distance
        nf, status = _clip_by_plane(fv, fnv, ftag, nf, gv, gnv, gtag, cap,
                                    2.0 * dx, 2.0 * dy, 2.0 * dz, b,
                                    c, eps * 2.0 * np.sqrt(d2), dtol,
                                    maxv, maxf)
        if status == STATUS_EMPTY:
            is_empty = True
            break
        if status == STATUS_OVERFLOW:
            over = True
            break
        if status == STATUS_CUT:
            r2 = _max_vertex_dist2(fv, fnv, nf)

    r2_out[i] = r2
    if over:
        overflow[i] = True
        return
    if is_empty:
        empty[i] = True
        vol[i] = 0.0
        cen[i, 0] = np.nan
        cen[i, 1] = np.nan
        cen[i, 2] = np.nan
        m2[i] = 0.0
        nbr_cnt[i] = 0
        certified[i] = True
        return

    v, cx, cy, cz, q = _moments(fv, fnv, nf)
    vol[i] = v
    cen[i, 0] = cx + zx
    cen[i, 1] = cy + zy
    cen[i, 2] = cz + zz
    m2[i] = q
    nn = 0
    for f in range(nf):
        a = _face_area(fv, fnv, f)
        if a <= 0.0:
            continue
        if nn < nbr_img.shape[1]:
            nbr_img[i, nn] = ftag[f]
            nbr_area[i, nn] = a
            nn += 1
        else:
            overflow[i] = True
            return
    nbr_cnt[i] = nn
    certified[i] = cert
    if keep_faces:
        m = nf if nf <= fv_out.shape[1] else fv_out.shape[1]
        nf_out[i] = m
        for f in range(m):
            fnv_out[i, f] = fnv[f]
            ftag_out[i, f] = ftag[f]
            for k in range(fnv[f]):
                fv_out[i, f, k, 0] = fv[f, k, 0] + zx
                fv_out[i, f, k, 1] = fv[f, k, 1] + zy
                fv_out[i, f, k, 2] = fv[f, k, 2] + zz


@njit(cache=True, parallel=True)
def build_cells(rows, seeds, weights, img_pts, img_w, cand_idx, cand_cnt,
                box_lo, box_hi, wmax, eps, dtol, maxv, maxf,
                fv_out, fnv_out, ftag_out, nf_out, keep_faces):
    """Construct the cells listed in ``rows``; outputs go to disjoint slots.

    ``cand_idx``/``cand_cnt`` are indexed by position in ``rows``; all other
    per-cell arrays are indexed by the global cell id.
    """
    n = seeds.shape[0]
    maxnbr = maxf
    vol = np.zeros(n)
    cen = np.zeros((n, 3))
    m2 = np.zeros(n)
    nbr_img = np.full((n, maxnbr), -1, dtype=np.int64)
    nbr_area = np.zeros((n, maxnbr))
    nbr_cnt = np.zeros(n, dtype=np.int64)
    empty = np.zeros(n, dtype=np.bool_)
    certified = np.zeros(n, dtype=np.bool_)
    overflow = np.zeros(n, dtype=np.bool_)
    r2_out = np.zeros(n)
    for r in prange(rows.shape[0]):
        _build_one_cell(r, rows, seeds, weights, img_pts, img_w,
                        cand_idx, cand_cnt, box_lo, box_hi, wmax,
                        eps, dtol, maxv, maxf,
                        vol, cen, m2, nbr_img, nbr_area, nbr_cnt,
                        empty, certified, overflow, r2_out,
                        fv_out, fnv_out, ftag_out, nf_out, keep_faces)
    return (vol, cen, m2, nbr_img, nbr_area, nbr_cnt, empty, certified,
            overflow, r2_out)


@njit(cache=True, parallel=True)
def assign_points(points, img_pts, img_w, img_owner):
    """Power-diagram owner of each query point (brute force over images)."""
    m = points.shape[0]
    out = np.empty(m, dtype=np.int64)
    for p in prange(m):
        best = -1
        bestval = 1e300
        for c in range(img_pts.shape[0]):
            dx = points[p, 0] - img_pts[c, 0]
            dy = points[p, 1] - img_pts[c, 1]
            dz = points[p, 2] - img_pts[c, 2]
            val = dx * dx + dy * dy + dz * dz - img_w[c]
            if val < bestval:
                bestval = val
                best = c
        out[p] = img_owner[best]
    return out


