"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The backend is picked once at import time from ``KITCHENPLAN_BACKEND``
(``numba`` or ``numpy``). When numba is requested but cannot be imported we
fall back to numpy with a warning. Both paths share the same signatures so
callers never branch on the backend.
"""
from __future__ import annotations

import os
import warnings

import numpy as np

_requested = os.environ.get("KITCHENPLAN_BACKEND", "numba").strip().lower()
if _requested not in ("numba", "numpy"):
    raise ValueError(f"KITCHENPLAN_BACKEND must be 'numba' or 'numpy', got {_requested!r}")

try:
    from numba import njit
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dep in practice
    HAVE_NUMBA = False

if _requested == "numba" and not HAVE_NUMBA:  # pragma: no cover
    warnings.warn("numba is not importable; using the numpy kernels", RuntimeWarning)

BACKEND = "numba" if (_requested == "numba" and HAVE_NUMBA) else "numpy"

UNREACHED = np.iinfo(np.int32).max


# --------------------------------------------------------------------------
# numpy reference kernels
# --------------------------------------------------------------------------

def bfs_distances_numpy(passable: np.ndarray, sources: np.ndarray) -> np.ndarray:
    """Multi-source 4-connected BFS distance map over ``passable`` cells.

    ``sources`` is an ``(k, 2)`` int array of ``(row, col)`` pairs; sources on
    impassable cells are ignored. Unreached cells hold ``UNREACHED``.
    """
    h, w = passable.shape
    dist = np.full((h, w), UNREACHED, dtype=np.int32)
    frontier = np.zeros((h, w), dtype=bool)
    for r, c in sources:
        if passable[r, c]:
            frontier[r, c] = True
    visited = frontier.copy()
    d = 0
    while frontier.any():
        dist[frontier] = d
        grown = np.zeros_like(frontier)
        grown[1:, :] |= frontier[:-1, :]
        grown[:-1, :] |= frontier[1:, :]
        grown[:, 1:] |= frontier[:, :-1]
        grown[:, :-1] |= frontier[:, 1:]
        frontier = grown & passable & ~visited
        visited |= frontier
        d += 1
    return dist


def conv3x3_forward_numpy(x: np.ndarray, kernel: np.ndarray, bias: float) -> np.ndarray:
    """Same-padded 3x3 convolution of ``x`` (B, H, W, C) to one channel (B, H, W)."""
    b, h, w, c = x.shape
    padded = np.zeros((b, h + 2, w + 2, c), dtype=x.dtype)
    padded[:, 1:-1, 1:-1, :] = x
    out = np.full((b, h, w), bias, dtype=x.dtype)
    for dy in range(3):
        for dx in range(3):
            out += padded[:, dy:dy + h, dx:dx + w, :] @ kernel[dy, dx]
    return out


def conv3x3_backward_numpy(x: np.ndarray, kernel: np.ndarray, grad_out: np.ndarray):
    """Gradients of :func:`conv3x3_forward_numpy` w.r.t. input, kernel and bias."""
    b, h, w, c = x.shape
    padded = np.zeros((b, h + 2, w + 2, c), dtype=x.dtype)
    padded[:, 1:-1, 1:-1, :] = x
    grad_padded = np.zeros_like(padded)
    grad_kernel = np.zeros_like(kernel)
    for dy in range(3):
        for dx in range(3):
            window = padded[:, dy:dy + h, dx:dx + w, :]
            grad_kernel[dy, dx] = np.einsum("bhw,bhwc->c", grad_out, window)
            grad_padded[:, dy:dy + h, dx:dx + w, :] += grad_out[..., None] * kernel[dy, dx]
    return grad_padded[:, 1:-1, 1:-1, :], grad_kernel, float(grad_out.sum())


# --------------------------------------------------------------------------
# numba kernels
# --------------------------------------------------------------------------

if HAVE_NUMBA:

    @njit(cache=True)
    def _bfs_distances_numba(passable, sources):
        h, w = passable.shape
        dist = np.full((h, w), UNREACHED, dtype=np.int32)
        queue = np.empty(h * w, dtype=np.int64)
        head = 0
        tail = 0
        for i in range(sources.shape[0]):
            r = sources[i, 0]
            c = sources[i, 1]
            if passable[r, c] and dist[r, c] == UNREACHED:
                dist[r, c] = 0
                queue[tail] = r * w + c
                tail += 1
        while head < tail:
            cell = queue[head]
            head += 1
            r = cell // w
            c = cell % w
            nd = dist[r, c] + 1
            for k in range(4):
                if k == 0:
                    rr, cc = r - 1, c
                elif k == 1:
                    rr, cc = r + 1, c
                elif k == 2:
                    rr, cc = r, c - 1
                else:
                    rr, cc = r, c + 1
                if 0 <= rr < h and 0 <= cc < w and passable[rr, cc] and dist[rr, cc] == UNREACHED:
                    dist[rr, cc] = nd
                    queue[tail] = rr * w + cc
                    tail += 1
        return dist

    @njit(cache=True)
    def _conv3x3_forward_numba(x, kernel, bias):
        b, h, w, c = x.shape
        out = np.empty((b, h, w), dtype=x.dtype)
        for n in range(b):
            for i in range(h):
                for j in range(w):
                    acc = bias
                    for dy in range(3):
                        ii = i + dy - 1
                        if ii < 0 or ii >= h:
                            continue
                        for dx in range(3):
                            jj = j + dx - 1
                            if jj < 0 or jj >= w:
                                continue
                            for ch in range(c):
                                acc += x[n, ii, jj, ch] * kernel[dy, dx, ch]
                    out[n, i, j] = acc
        return out

    @njit(cache=True)
    def _conv3x3_backward_numba(x, kernel, grad_out):
        b, h, w, c = x.shape
        grad_x = np.zeros_like(x)
        grad_kernel = np.zeros_like(kernel)
        grad_bias = 0.0
        for n in range(b):
            for i in range(h):
                for j in range(w):
                    g = grad_out[n, i, j]
                    if g == 0.0:
                        continue
                    grad_bias += g
                    for dy in range(3):
                        ii = i + dy - 1
                        if ii < 0 or ii >= h:
                            continue
                        for dx in range(3):
                            jj = j + dx - 1
                            if jj < 0 or jj >= w:
                                continue
                            for ch in range(c):
                                grad_kernel[dy, dx, ch] += g * x[n, ii, jj, ch]
                                grad_x[n, ii, jj, ch] += g * kernel[dy, dx, ch]
        return grad_x, grad_kernel, grad_bias


def _as_sources(sources) -> np.ndarray:
    arr = np.asarray(sources, dtype=np.int64)
    return arr.reshape(-1, 2)


if BACKEND == "numba":

    def bfs_distances(passable: np.ndarray, sources) -> np.ndarray:
        return _bfs_distances_numba(np.ascontiguousarray(passable, dtype=np.bool_), _as_sources(sources))

    def conv3x3_forward(x: np.ndarray, kernel: np.ndarray, bias: float) -> np.ndarray:
        return _conv3x3_forward_numba(np.ascontiguousarray(x), np.ascontiguousarray(kernel), float(bias))

    def conv3x3_backward(x: np.ndarray, kernel: np.ndarray, grad_out: np.ndarray):
        gx, gk, gb = _conv3x3_backward_numba(
            np.ascontiguousarray(x), np.ascontiguousarray(kernel), np.ascontiguousarray(grad_out)
        )
        return gx, gk, float(gb)

else:

    def bfs_distances(passable: np.ndarray, sources) -> np.ndarray:
        return bfs_distances_numpy(np.asarray(passable, dtype=bool), _as_sources(sources))

    conv3x3_forward = conv3x3_forward_numpy
    conv3x3_backward = conv3x3_backward_numpy
