"""Slow, straight-line reference implementations used only by the tests.

Nothing here imports the code under test beyond plain data containers.
"""

import math

import numpy as np


def conv2d_loops(x, k, pad):
    b, cin, h, w = x.shape
    cout, _, kh, kw = k.shape
    xp = np.zeros((b, cin, h + 2 * pad, w + 2 * pad))
    xp[:, :, pad : pad + h, pad : pad + w] = x
    ho, wo = h + 2 * pad - kh + 1, w + 2 * pad - kw + 1
    out = np.zeros((b, cout, ho, wo))
    for n in range(b):
        for o in range(cout):
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0
                    for c in range(cin):
                        for u in range(kh):
                            for v in range(kw):
                                acc += xp[n, c, i + u, j + v] * k[o, c, u, v]
                    out[n, o, i, j] = acc
    return out


def dft2_centered(x):
    """Direct O(N^2) sum with the DC term at (H//2, W//2), orthonormal."""
    h, w = x.shape
    out = np.zeros((h, w), dtype=complex)
    ys = np.arange(h) - h // 2
    xs = np.arange(w) - w // 2
    for a, ky in enumerate(ys):
        for b, kx in enumerate(xs):
            phase = np.exp(-2j * np.pi * (np.outer(ys, np.ones(w)) * ky / h + np.outer(np.ones(h), xs) * kx / w))
            out[a, b] = np.sum(x * phase)
    return out / math.sqrt(h * w)


def ssim_loops(a, b, data_range, win=11, sigma=1.5, k1=0.01, k2=0.03):
    ax = np.arange(win) - (win - 1) / 2
    g1 = np.exp(-(ax**2) / (2 * sigma**2))
    g = np.outer(g1, g1)
    g /= g.sum()
    c1, c2 = (k1 * data_range) ** 2, (k2 * data_range) ** 2
    h, w = a.shape
    vals = []
    for i in range(h - win + 1):
        for j in range(w - win + 1):
            pa = a[i : i + win, j : j + win]
            pb = b[i : i + win, j : j + win]
            ma = np.sum(g * pa)
            mb = np.sum(g * pb)
            va = np.sum(g * (pa - ma) ** 2)
            vb = np.sum(g * (pb - mb) ** 2)
            cov = np.sum(g * (pa - ma) * (pb - mb))
            vals.append(((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma**2 + mb**2 + c1) * (va + vb + c2)))
    return float(np.mean(vals))


def numeric_grad(f, arrays, h=1e-6):
    """Central differences of scalar ``f(arrays)`` w.r.t. each array in ``arrays`` (a dict)."""
    grads = {}
    for name, arr in arrays.items():
        g = np.zeros_like(arr)
        flat = g.reshape(-1)
        for idx in range(arr.size):
            plus = {k: v.copy() for k, v in arrays.items()}
            minus = {k: v.copy() for k, v in arrays.items()}
            plus[name].reshape(-1)[idx] += h
            minus[name].reshape(-1)[idx] -= h
            flat[idx] = (f(plus) - f(minus)) / (2 * h)
        grads[name] = g
    return grads


def max_rel_err(analytic, numeric, floor=1e-8):
    a = np.asarray(analytic, float).ravel()
    n = np.asarray(numeric, float).ravel()
    return float(np.max(np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)))


def straight_line_block(x, kernels):
    """conv-ReLU x4, conv, residual, written without any shared helpers."""
    h = x
    for i, k in enumerate(kernels):
        h = conv2d_loops(h, k, (k.shape[2] - 1) // 2)
        if i < len(kernels) - 1:
            h = np.maximum(h, 0)
    return h + x
