"""Windowed SSIM with an analytic gradient.

The 11x11 Gaussian window (sigma 1.5) is applied as two banded matrices,
``F(x) = (Gh @ x @ Gw.T) / norm``, where ``norm`` renormalizes the window at
image borders. ``F`` is linear, so its adjoint is cheap to apply.
"""
from functools import lru_cache

import numpy as np

C1 = 0.01**2
C2 = 0.03**2
WINDOW = 11
SIGMA = 1.5


@lru_cache(maxsize=32)
def _band(n, size=WINDOW, sigma=SIGMA):
    half = size // 2
    k = np.exp(-0.5 * (np.arange(-half, half + 1) / sigma) ** 2)
    k /= k.sum()
    G = np.zeros((n, n))
    for i in range(n):
        for off in range(-half, half + 1):
            j = i + off
            if 0 <= j < n:
                G[i, j] = k[off + half]
    G.setflags(write=False)
    return G


@lru_cache(maxsize=32)
def _filters(h, w):
    Gh, Gw = _band(h), _band(w)
    norm = np.outer(Gh.sum(axis=1), Gw.sum(axis=1))
    norm.setflags(write=False)
    return Gh, Gw, norm


def _sep(x, A, B):
    """``A @ x[c] @ B.T`` for every channel c of a (C, H, W) stack, as two GEMMs."""
    C, H, W = x.shape
    t = (x.reshape(C * H, W) @ B.T).reshape(C, H, -1)
    t = A @ t.transpose(1, 0, 2).reshape(H, -1)
    return t.reshape(A.shape[0], C, -1).transpose(1, 0, 2)


def _filt(x, Gh, Gw, norm):
    return _sep(x, Gh, Gw) / norm


def _filt_adjoint(y, Gh, Gw, norm):
    return _sep(y / norm, Gh.T, Gw.T)


def _check_pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a, b = a[:, :, None], b[:, :, None]
    return a, b


def _stats(a, b):
    """Channel-first filtered moments used by SSIM."""
    x = np.transpose(a, (2, 0, 1))
    y = np.transpose(b, (2, 0, 1))
    F = _filters(x.shape[1], x.shape[2])
    mu_x, mu_y, exx, eyy, exy = np.split(_filt(np.concatenate([x, y, x * x, y * y, x * y]), *F), 5)
    n1 = 2 * mu_x * mu_y + C1
    d1 = mu_x**2 + mu_y**2 + C1
    n2 = 2 * (exy - mu_x * mu_y) + C2
    d2 = (exx - mu_x**2) + (eyy - mu_y**2) + C2
    return x, y, F, mu_x, mu_y, n1, d1, n2, d2


def ssim_map(a, b):
    """Per-pixel SSIM of two images in [0, 1], averaged over channels; shape (H, W)."""
    a, b = _check_pair(a, b)
    *_, n1, d1, n2, d2 = _stats(a, b)
    return np.mean((n1 * n2) / (d1 * d2), axis=0)


def ssim_and_grad(a, b):
    """Mean SSIM and its gradient with respect to ``a``."""
    a, b = _check_pair(a, b)
    x, y, F, mu_x, mu_y, n1, d1, n2, d2 = _stats(a, b)
    S = (n1 * n2) / (d1 * d2)
    value = float(np.mean(S))
    g = np.full_like(S, 1.0 / S.size)
    gS = g * S
    d_mu = gS * (2 * mu_y / n1 - 2 * mu_x / d1 - 2 * mu_y / n2 + 2 * mu_x / d2)
    d_exx = -gS / d2
    d_exy = 2 * gS / n2
    a_mu, a_xx, a_xy = np.split(_filt_adjoint(np.concatenate([d_mu, d_exx, d_exy]), *F), 3)
    grad = a_mu + 2 * x * a_xx + y * a_xy
    return value, np.transpose(grad, (1, 2, 0)).reshape(a.shape)
