"""Per-pixel gather rasterization kernels (forward, backward, visibility).

Splats arrive pre-sorted front to back in ``order`` and are binned into
TILE x TILE pixel blocks. Binning only prunes the candidate list: each pixel
still applies the exact support-box test to every splat that could touch it,
in the same global order, so output equals a plain per-pixel gather over all
splats. Accumulation inside a pixel is sequential.
"""
import math

import numba
import numpy as np


@numba.njit(cache=True, nogil=True)
def _splat_alpha(k, px, py, mean2d, conic, opac, rad, alpha_max):
    """Return (alpha, gaussian_value, clamped); alpha < 0 when the pixel is outside the support."""
    dx = px - mean2d[k, 0]
    dy = py - mean2d[k, 1]
    r = rad[k]
    if dx > r or dx < -r or dy > r or dy < -r:
        return -1.0, 0.0, False
    q = conic[k, 0] * dx * dx + 2.0 * conic[k, 1] * dx * dy + conic[k, 2] * dy * dy
    g = math.exp(-0.5 * q)
    a = opac[k] * g
    if a > alpha_max:
        return alpha_max, g, True
    return a, g, False


TILE = 8


@numba.njit(cache=True, nogil=True)
def bin_tiles(mean2d, rad, order, H, W):
    """CSR lists of splats (in ``order``) whose support box touches each TILE x TILE block."""
    tw = (W + TILE - 1) // TILE
    th = (H + TILE - 1) // TILE
    counts = np.zeros(tw * th + 1, dtype=np.int64)
    for j in range(order.shape[0]):
        k = order[j]
        x0, x1, y0, y1 = _tile_range(mean2d[k, 0], mean2d[k, 1], rad[k], tw, th)
        for ty in range(y0, y1 + 1):
            for tx in range(x0, x1 + 1):
                counts[ty * tw + tx + 1] += 1
    ptr = np.cumsum(counts)
    fill = ptr[:-1].copy()
    ids = np.empty(ptr[-1], dtype=np.int64)
    for j in range(order.shape[0]):
        k = order[j]
        x0, x1, y0, y1 = _tile_range(mean2d[k, 0], mean2d[k, 1], rad[k], tw, th)
        for ty in range(y0, y1 + 1):
            for tx in range(x0, x1 + 1):
                t = ty * tw + tx
                ids[fill[t]] = k
                fill[t] += 1
    return ptr, ids


@numba.njit(cache=True, nogil=True)
def _tile_range(mx, my, r, tw, th):
    # pixel centers sit at integer coordinates; tile t covers pixels t*TILE .. t*TILE + TILE - 1
    x0 = max(0, int(math.ceil(mx - r)) // TILE)
    x1 = min(tw - 1, int(math.floor(mx + r)) // TILE)
    y0 = max(0, int(math.ceil(my - r)) // TILE)
    y1 = min(th - 1, int(math.floor(my + r)) // TILE)
    return x0, x1, y0, y1


@numba.njit(cache=True, nogil=True)
def raster_forward(mean2d, conic, depth, color, opac, rad, ptr, ids, H, W, bg, alpha_max,
                   t_min):
    tw = (W + TILE - 1) // TILE
    out = np.empty((H, W, 3))
    dmap = np.empty((H, W))
    accum = np.empty((H, W))
    for row in range(H):
        for col in range(W):
            px = float(col)
            py = float(row)
            T = 1.0
            c0 = 0.0
            c1 = 0.0
            c2 = 0.0
            d = 0.0
            wsum = 0.0
            t = (row // TILE) * tw + col // TILE
            for j in range(ptr[t], ptr[t + 1]):
                k = ids[j]
                a, g, cl = _splat_alpha(k, px, py, mean2d, conic, opac, rad, alpha_max)
                if a <= 0.0:
                    continue
                w = a * T
                wsum += w
                c0 += w * color[k, 0]
                c1 += w * color[k, 1]
                c2 += w * color[k, 2]
                d += w * depth[k]
                T = T * (1.0 - a)
                if T < t_min:
                    break
            out[row, col, 0] = c0 + T * bg[0]
            out[row, col, 1] = c1 + T * bg[1]
            out[row, col, 2] = c2 + T * bg[2]
            dmap[row, col] = d
            accum[row, col] = wsum  # equals 1 - T; summed so it matches the color weights
    return out, dmap, accum


@numba.njit(cache=True, nogil=True)
def raster_backward(mean2d, conic, depth, color, opac, rad, ptr, ids, H, W, bg, alpha_max,
                    t_min, g_color, g_depth, g_accum):
    """Gradients w.r.t. per-splat 2D mean, conic (a, b, c), depth, color and opacity."""
    N = mean2d.shape[0]
    gm = np.zeros((N, 2))
    gcon = np.zeros((N, 3))
    gz = np.zeros(N)
    gc = np.zeros((N, 3))
    go = np.zeros(N)
    tw = (W + TILE - 1) // TILE
    M = 1
    for t in range(ptr.shape[0] - 1):
        M = max(M, ptr[t + 1] - ptr[t])
    idx = np.empty(M, dtype=np.int64)
    alph = np.empty(M)
    Tb = np.empty(M)
    gv = np.empty(M)
    clamp = np.empty(M, dtype=np.bool_)
    for row in range(H):
        for col in range(W):
            px = float(col)
            py = float(row)
            T = 1.0
            n = 0
            t = (row // TILE) * tw + col // TILE
            for j in range(ptr[t], ptr[t + 1]):
                k = ids[j]
                a, g, cl = _splat_alpha(k, px, py, mean2d, conic, opac, rad, alpha_max)
                if a <= 0.0:
                    continue
                idx[n] = k
                alph[n] = a
                Tb[n] = T
                gv[n] = g
                clamp[n] = cl
                n += 1
                T = T * (1.0 - a)
                if T < t_min:
                    break
            if n == 0:
                continue
            T_final = T
            gr = g_color[row, col, 0]
            gg = g_color[row, col, 1]
            gb = g_color[row, col, 2]
            gd = g_depth[row, col]
            ga = g_accum[row, col]
            # suffix sums of everything composited behind splat m
            s0 = T_final * bg[0]
            s1 = T_final * bg[1]
            s2 = T_final * bg[2]
            sz = 0.0
            for m in range(n - 1, -1, -1):
                k = idx[m]
                a = alph[m]
                Tk = Tb[m]
                w = a * Tk
                gc[k, 0] += gr * w
                gc[k, 1] += gg * w
                gc[k, 2] += gb * w
                gz[k] += gd * w
                inv = 1.0 / (1.0 - a)
                dLda = (gr * (Tk * color[k, 0] - s0 * inv)
                        + gg * (Tk * color[k, 1] - s1 * inv)
                        + gb * (Tk * color[k, 2] - s2 * inv)
                        + gd * (Tk * depth[k] - sz * inv)
                        + ga * T_final * inv)
                s0 += w * color[k, 0]
                s1 += w * color[k, 1]
                s2 += w * color[k, 2]
                sz += w * depth[k]
                if clamp[m]:
                    continue
                go[k] += dLda * gv[m]
                dLdq = -0.5 * a * dLda
                dx = px - mean2d[k, 0]
                dy = py - mean2d[k, 1]
                ca = conic[k, 0]
                cb = conic[k, 1]
                cc = conic[k, 2]
                gm[k, 0] += dLdq * (-2.0) * (ca * dx + cb * dy)
                gm[k, 1] += dLdq * (-2.0) * (cb * dx + cc * dy)
                gcon[k, 0] += dLdq * dx * dx
                gcon[k, 1] += dLdq * 2.0 * dx * dy
                gcon[k, 2] += dLdq * dy * dy
    return gm, gcon, gz, gc, go


@numba.njit(cache=True, nogil=True)
def raster_weights(mean2d, conic, opac, rad, ptr, ids, H, W, alpha_max, t_min):
    """Per-splat sums over pixels of the compositing weight and of the bare alpha."""
    N = mean2d.shape[0]
    wsum = np.zeros(N)
    asum = np.zeros(N)
    tw = (W + TILE - 1) // TILE
    for row in range(H):
        for col in range(W):
            px = float(col)
            py = float(row)
            T = 1.0
            stopped = False
            t = (row // TILE) * tw + col // TILE
            for j in range(ptr[t], ptr[t + 1]):
                k = ids[j]
                a, g, cl = _splat_alpha(k, px, py, mean2d, conic, opac, rad, alpha_max)
                if a <= 0.0:
                    continue
                asum[k] += a
                if not stopped:
                    wsum[k] += a * T
                    T = T * (1.0 - a)
                    if T < t_min:
                        stopped = True
    return wsum, asum
