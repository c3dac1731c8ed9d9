"""Compiled inner loops of the image-method tracer."""
import math

import numpy as np
from numba import njit

TOL = 1e-9
REFLECT_OFFSET = 1e-6


@njit(cache=True, nogil=True)
def _inside_strict(x, y, vx, vy, s, e, tol):
    # even-odd test, False within tol of the boundary
    inside = False
    n = e - s
    for i in range(n):
        x1 = vx[s + i]
        y1 = vy[s + i]
        j = s + (i + 1) % n
        x2 = vx[j]
        y2 = vy[j]
        ex = x2 - x1
        ey = y2 - y1
        seg2 = ex * ex + ey * ey
        t = 0.0
        if seg2 > 0.0:
            t = ((x - x1) * ex + (y - y1) * ey) / seg2
            if t < 0.0:
                t = 0.0
            elif t > 1.0:
                t = 1.0
        dx = x - (x1 + t * ex)
        dy = y - (y1 + t * ey)
        if math.sqrt(dx * dx + dy * dy) <= tol:
            return False
        if (y1 > y) != (y2 > y):
            xc = x1 + (y - y1) * ex / ey
            if x < xc:
                inside = not inside
    return inside


@njit(cache=True, nogil=True)
def _segment_blocked(ax, ay, az, bx, by, bz, t_lo, t_hi,
                     vx, vy, voff, bbox, bzlo, bzhi, bconvex):
    """True when the sub-segment ``[t_lo, t_hi]`` of a->b enters any prism."""
    dx = bx - ax
    dy = by - ay
    dz = bz - az
    seg_len = math.sqrt(dx * dx + dy * dy + dz * dz)
    sx0 = min(ax, bx)
    sx1 = max(ax, bx)
    sy0 = min(ay, by)
    sy1 = max(ay, by)
    zmin = min(az, bz)
    zmax = max(az, bz)
    nb = len(bzlo)
    for k in range(nb):
        if zmin >= bzhi[k] or zmax <= bzlo[k]:
            continue
        if sx1 < bbox[k, 0] or sx0 > bbox[k, 2] or sy1 < bbox[k, 1] or sy0 > bbox[k, 3]:
            continue
        t_in = t_lo
        t_out = t_hi
        lo = bzlo[k] + TOL
        hi = bzhi[k] - TOL
        if dz == 0.0:
            if not (lo < az < hi):
                continue
        else:
            ta = (lo - az) / dz
            tb = (hi - az) / dz
            if ta > tb:
                ta, tb = tb, ta
            t_in = max(t_in, ta)
            t_out = min(t_out, tb)
            if t_in >= t_out:
                continue
        s = voff[k]
        e = voff[k + 1]
        n = e - s
        if bconvex[k]:
            empty = False
            for i in range(n):
                x1 = vx[s + i]
                y1 = vy[s + i]
                j = s + (i + 1) % n
                ex = vx[j] - x1
                ey = vy[j] - y1
                L = math.sqrt(ex * ex + ey * ey)
                nx = ey / L
                ny = -ex / L
                f0 = nx * (ax - x1) + ny * (ay - y1) + TOL
                fd = nx * dx + ny * dy
                if fd == 0.0:
                    if f0 >= 0.0:
                        empty = True
                        break
                    continue
                t = -f0 / fd
                if fd < 0.0:
                    if t > t_in:
                        t_in = t
                else:
                    if t < t_out:
                        t_out = t
                if t_in >= t_out:
                    empty = True
                    break
            if not empty:
                return True
        else:
            # general simple polygon: split at edge crossings, probe midpoints
            ts = np.empty(n + 2)
            m = 0
            ts[m] = t_in
            m += 1
            for i in range(n):
                x1 = vx[s + i]
                y1 = vy[s + i]
                j = s + (i + 1) % n
                ex = vx[j] - x1
                ey = vy[j] - y1
                den = dx * ey - dy * ex
                if den == 0.0:
                    continue
                t = ((x1 - ax) * ey - (y1 - ay) * ex) / den
                w = ((x1 - ax) * dy - (y1 - ay) * dx) / den
                if w >= 0.0 and w <= 1.0 and t > t_in and t < t_out:
                    ts[m] = t
                    m += 1
            ts[m] = t_out
            m += 1
            tt = np.sort(ts[:m])
            for i in range(m - 1):
                if (tt[i + 1] - tt[i]) * seg_len <= TOL:
                    continue
                tm = 0.5 * (tt[i] + tt[i + 1])
                if _inside_strict(ax + tm * dx, ay + tm * dy, vx, vy, s, e, TOL):
                    return True
    return False


@njit(cache=True, nogil=True)
def trace_rx(tx, rx, fp0, fp1, fn, fzlo, fzhi,
             seq_f, seq_ord, seq_img, seq_idx,
             vx, vy, voff, bbox, bzlo, bzhi, bconvex,
             ground_on, ground_z,
             out_len, out_ord, out_seq, out_ux, out_pts):
    """Enumerate valid paths from ``tx`` to ``rx``.

    Only the facet sequences listed in ``seq_idx`` (ascending) are tried.
    Writes path length, reflection order, sequence index (-1 LoS, -2 ground),
    departure x-direction and interaction points into the ``out_*`` buffers
    and returns the number of paths.
    """
    cnt = 0
    # LoS
    if not _segment_blocked(tx[0], tx[1], tx[2], rx[0], rx[1], rx[2], 0.0, 1.0,
                            vx, vy, voff, bbox, bzlo, bzhi, bconvex):
        dx = rx[0] - tx[0]
        dy = rx[1] - tx[1]
        dz = rx[2] - tx[2]
        L = math.sqrt(dx * dx + dy * dy + dz * dz)
        # a receiver on top of the transmitter has no finite path gain
        if L > 0.0:
            out_len[cnt] = L
            out_ord[cnt] = 0
            out_seq[cnt] = -1
            out_ux[cnt] = dx / L
            cnt += 1
    # flat-ground specular bounce
    if ground_on and tx[2] > ground_z and rx[2] > ground_z:
        h1 = tx[2] - ground_z
        h2 = rx[2] - ground_z
        u = h1 / (h1 + h2)
        gx = tx[0] + u * (rx[0] - tx[0])
        gy = tx[1] + u * (rx[1] - tx[1])
        ok = not _segment_blocked(tx[0], tx[1], tx[2], gx, gy, ground_z, 0.0, 1.0,
                                  vx, vy, voff, bbox, bzlo, bzhi, bconvex)
        if ok:
            ok = not _segment_blocked(gx, gy, ground_z, rx[0], rx[1], rx[2], 0.0, 1.0,
                                      vx, vy, voff, bbox, bzlo, bzhi, bconvex)
        if ok:
            dx = gx - tx[0]
            dy = gy - tx[1]
            dz = ground_z - tx[2]
            L1 = math.sqrt(dx * dx + dy * dy + dz * dz)
            ex = rx[0] - gx
            ey = rx[1] - gy
            ez = rx[2] - ground_z
            out_len[cnt] = L1 + math.sqrt(ex * ex + ey * ey + ez * ez)
            out_ord[cnt] = 1
            out_seq[cnt] = -2
            out_ux[cnt] = dx / L1
            out_pts[cnt, 0, 0] = gx
            out_pts[cnt, 0, 1] = gy
            out_pts[cnt, 0, 2] = ground_z
            cnt += 1
    depth = seq_f.shape[1]
    pts = np.empty((depth, 3))
    for si in range(len(seq_idx)):
        s = seq_idx[si]
        n = seq_ord[s]
        X0 = rx[0]
        X1 = rx[1]
        X2 = rx[2]
        valid = True
        for k in range(n - 1, -1, -1):
            f = seq_f[s, k]
            nx = fn[f, 0]
            ny = fn[f, 1]
            px = fp0[f, 0]
            py = fp0[f, 1]
            dX = nx * (X0 - px) + ny * (X1 - py)
            if dX <= 0.0:
                valid = False
                break
            Ix = seq_img[s, k, 0]
            Iy = seq_img[s, k, 1]
            dI = nx * (Ix - px) + ny * (Iy - py)
            if dI >= 0.0:
                valid = False
                break
            u = dI / (dI - dX)
            Px = Ix + u * (X0 - Ix)
            Py = Iy + u * (X1 - Iy)
            ex = fp1[f, 0] - px
            ey = fp1[f, 1] - py
            v = ((Px - px) * ex + (Py - py) * ey) / (ex * ex + ey * ey)
            if v < 0.0 or v > 1.0:
                valid = False
                break
            Pz = tx[2] + u * (X2 - tx[2])
            if Pz < fzlo[f] or Pz > fzhi[f]:
                valid = False
                break
            pts[k, 0] = Px
            pts[k, 1] = Py
            pts[k, 2] = Pz
            X0 = Px
            X1 = Py
            X2 = Pz
        if not valid:
            continue
        # occlusion of every leg
        L = 0.0
        for k in range(n + 1):
            if k == 0:
                a0, a1, a2 = tx[0], tx[1], tx[2]
            else:
                a0, a1, a2 = pts[k - 1, 0], pts[k - 1, 1], pts[k - 1, 2]
            if k == n:
                b0, b1, b2 = rx[0], rx[1], rx[2]
            else:
                b0, b1, b2 = pts[k, 0], pts[k, 1], pts[k, 2]
            dx = b0 - a0
            dy = b1 - a1
            dz = b2 - a2
            seg = math.sqrt(dx * dx + dy * dy + dz * dz)
            if seg <= 2 * REFLECT_OFFSET:
                valid = False
                break
            t_lo = REFLECT_OFFSET / seg if k > 0 else 0.0
            t_hi = 1.0 - REFLECT_OFFSET / seg if k < n else 1.0
            if _segment_blocked(a0, a1, a2, b0, b1, b2, t_lo, t_hi,
                                vx, vy, voff, bbox, bzlo, bzhi, bconvex):
                valid = False
                break
            L += seg
        if not valid:
            continue
        out_len[cnt] = L
        out_ord[cnt] = n
        out_seq[cnt] = s
        d0 = pts[0, 0] - tx[0]
        d1 = pts[0, 1] - tx[1]
        d2 = pts[0, 2] - tx[2]
        out_ux[cnt] = d0 / math.sqrt(d0 * d0 + d1 * d1 + d2 * d2)
        for k in range(n):
            out_pts[cnt, k, 0] = pts[k, 0]
            out_pts[cnt, k, 1] = pts[k, 1]
            out_pts[cnt, k, 2] = pts[k, 2]
        cnt += 1
    return cnt


@njit(cache=True, nogil=True)
def radio_map_chunk(tx, rxs, idx, wavelength, gamma_abs,
                    fp0, fp1, fn, fzlo, fzhi, seq_f, seq_ord, seq_img, cell_ptr, cell_seq,
                    vx, vy, voff, bbox, bzlo, bzhi, bconvex, ground_on, ground_z,
                    out_power):
    """Power sum for receivers ``idx``; receiver ``i`` tries ``cell_seq[cell_ptr[i]:cell_ptr[i+1]]``."""
    cap = len(seq_ord) + 2
    depth = max(seq_f.shape[1], 1)
    lens = np.empty(cap)
    ords = np.empty(cap, dtype=np.int64)
    seqs = np.empty(cap, dtype=np.int64)
    uxs = np.empty(cap)
    pts = np.empty((cap, depth, 3))
    scale = wavelength / (4.0 * math.pi)
    g2 = gamma_abs * gamma_abs
    for ii in range(len(idx)):
        i = idx[ii]
        cnt = trace_rx(tx, rxs[i], fp0, fp1, fn, fzlo, fzhi, seq_f, seq_ord, seq_img,
                       cell_seq[cell_ptr[i]:cell_ptr[i + 1]],
                       vx, vy, voff, bbox, bzlo, bzhi, bconvex, ground_on, ground_z,
                       lens, ords, seqs, uxs, pts)
        p = 0.0
        for k in range(cnt):
            a = scale / lens[k]
            p += a * a * g2 ** ords[k]
        out_power[i] = p


@njit(cache=True)
def _beam_rows(I, A, B, y, eps):
    """x-interval of the beam (wedge I->[A,B], beyond AB) on the line at ``y``."""
    xl = -np.inf
    xh = np.inf
    # three half-planes a*x + b*y + c >= -eps, with unit (a, b)
    s = (A[0] - I[0]) * (B[1] - I[1]) - (A[1] - I[1]) * (B[0] - I[0])
    sg = 1.0 if s > 0 else -1.0
    planes = np.empty((3, 3))
    # left side: sg*cross(A-I, X-I) >= 0
    ax = -(A[1] - I[1]) * sg
    ay = (A[0] - I[0]) * sg
    planes[0, 0] = ax
    planes[0, 1] = ay
    planes[0, 2] = -(ax * I[0] + ay * I[1])
    # right side: sg*cross(X-I, B-I) >= 0
    bx = (B[1] - I[1]) * sg
    by = -(B[0] - I[0]) * sg
    planes[1, 0] = bx
    planes[1, 1] = by
    planes[1, 2] = -(bx * I[0] + by * I[1])
    # beyond the aperture, away from I
    nx = -(B[1] - A[1])
    ny = B[0] - A[0]
    if nx * (I[0] - A[0]) + ny * (I[1] - A[1]) > 0:
        nx = -nx
        ny = -ny
    planes[2, 0] = nx
    planes[2, 1] = ny
    planes[2, 2] = -(nx * A[0] + ny * A[1])
    for k in range(3):
        L = math.sqrt(planes[k, 0] ** 2 + planes[k, 1] ** 2)
        if L == 0.0:
            continue
        a = planes[k, 0] / L
        b = planes[k, 1] / L
        c = planes[k, 2] / L
        rhs = -eps - b * y - c
        if a > 0:
            xl = max(xl, rhs / a)
        elif a < 0:
            xh = min(xh, rhs / a)
        elif rhs > 0:
            return 1.0, -1.0
    return xl, xh


@njit(cache=True)
def beam_cell_lists(seq_img, seq_ord, seq_ap, x0, y0, cs, nx, ny, eps):
    """CSR lists of sequences whose final beam may contain each cell centre.

    Every cell's list is ascending in sequence index.
    """
    S = len(seq_ord)
    counts = np.zeros(nx * ny + 1, dtype=np.int64)
    ptr = np.zeros(nx * ny + 1, dtype=np.int64)
    out = np.empty(0, dtype=np.int64)
    fill = np.empty(0, dtype=np.int64)
    for p in range(2):
        if p == 1:
            for c in range(nx * ny):
                ptr[c + 1] = ptr[c] + counts[c]
            out = np.empty(ptr[nx * ny], dtype=np.int64)
            fill = ptr[:-1].copy()
        for s in range(S):
            n = seq_ord[s]
            I = seq_img[s, n - 1]
            A = seq_ap[s, 0]
            B = seq_ap[s, 1]
            for j in range(ny):
                y = y0 + (j + 0.5) * cs
                xl, xh = _beam_rows(I, A, B, y, eps)
                if xl > xh:
                    continue
                lo = 0
                if xl > -np.inf:
                    lo = max(0, int(math.ceil((xl - x0) / cs - 0.5)))
                hi = nx - 1
                if xh < np.inf:
                    hi = min(nx - 1, int(math.floor((xh - x0) / cs - 0.5)))
                for i in range(lo, hi + 1):
                    c = j * nx + i
                    if p == 0:
                        counts[c] += 1
                    else:
                        out[fill[c]] = s
                        fill[c] += 1
    return ptr, out
