"""Masked sparse aggregation kernels.

All three kernels share one data layout:

* ``indptr, cols, vals`` -- CSR rows of the normalized adjacency (every row
  holds at least its self-loop, so no row is empty);
* ``t_indptr, t_perm`` -- the same entries regrouped by column;
* ``xw`` -- ``(G, N, F)`` per-input-group products ``U[:, g] @ W[g, :]``;
* ``bounds`` -- ``(B + 1,)`` contiguous output-block boundaries;
* ``masks`` -- ``(G, B, E)`` per-group, per-block, per-entry mask values.

The numba versions are used when ``bgcl._accel.USE_NUMBA`` is set; the numpy
versions are the reference fallback. Each path is deterministic on its own.
"""
import numpy as np

from . import _accel
from ._accel import njit


@njit
def _forward_nb(indptr, cols, vals, xw, bounds, masks):
    G, N, F = xw.shape
    B = bounds.shape[0] - 1
    out = np.zeros((N, F))
    for v in range(N):
        for e in range(indptr[v], indptr[v + 1]):
            u = cols[e]
            c = vals[e]
            for g in range(G):
                for b in range(B):
                    w = c * masks[g, b, e]
                    for j in range(bounds[b], bounds[b + 1]):
                        out[v, j] += w * xw[g, u, j]
    return out


@njit
def _grad_xw_nb(t_indptr, t_perm, rows, vals, grad_out, bounds, masks):
    G = masks.shape[0]
    B = bounds.shape[0] - 1
    N, F = grad_out.shape
    gxw = np.zeros((G, N, F))
    for u in range(N):
        for k in range(t_indptr[u], t_indptr[u + 1]):
            e = t_perm[k]
            v = rows[e]
            c = vals[e]
            for g in range(G):
                for b in range(B):
                    w = c * masks[g, b, e]
                    for j in range(bounds[b], bounds[b + 1]):
                        gxw[g, u, j] += w * grad_out[v, j]
    return gxw


@njit
def _grad_masks_nb(rows, cols, vals, xw, grad_out, bounds):
    G = xw.shape[0]
    B = bounds.shape[0] - 1
    E = rows.shape[0]
    gm = np.zeros((G, B, E))
    for e in range(E):
        v = rows[e]
        u = cols[e]
        c = vals[e]
        for g in range(G):
            for b in range(B):
                acc = 0.0
                for j in range(bounds[b], bounds[b + 1]):
                    acc += xw[g, u, j] * grad_out[v, j]
                gm[g, b, e] = c * acc
    return gm


def _forward_np(indptr, cols, vals, xw, bounds, masks):
    G, N, F = xw.shape
    out = np.zeros((N, F))
    starts = indptr[:-1]
    for g in range(G):
        gathered = xw[g][cols]
        for b in range(len(bounds) - 1):
            lo, hi = bounds[b], bounds[b + 1]
            if hi == lo:
                continue
            w = vals * masks[g, b]
            out[:, lo:hi] += np.add.reduceat(w[:, None] * gathered[:, lo:hi], starts, axis=0)
    return out


def _grad_xw_np(t_indptr, t_perm, rows, vals, grad_out, bounds, masks):
    G = masks.shape[0]
    N, F = grad_out.shape
    gxw = np.zeros((G, N, F))
    starts = t_indptr[:-1]
    gathered = grad_out[rows[t_perm]]
    vals_t = vals[t_perm]
    for g in range(G):
        for b in range(len(bounds) - 1):
            lo, hi = bounds[b], bounds[b + 1]
            if hi == lo:
                continue
            w = vals_t * masks[g, b][t_perm]
            gxw[g][:, lo:hi] = np.add.reduceat(w[:, None] * gathered[:, lo:hi], starts, axis=0)
    return gxw


def _grad_masks_np(rows, cols, vals, xw, grad_out, bounds):
    G = xw.shape[0]
    B = len(bounds) - 1
    gm = np.zeros((G, B, rows.shape[0]))
    g_rows = grad_out[rows]
    for g in range(G):
        x_cols = xw[g][cols]
        for b in range(B):
            lo, hi = bounds[b], bounds[b + 1]
            gm[g, b] = vals * np.sum(x_cols[:, lo:hi] * g_rows[:, lo:hi], axis=1)
    return gm


def masked_aggregate(indptr, cols, vals, xw, bounds, masks, use_numba=None):
    """``out[v, j] = sum_g sum_{e in row v} vals[e] * masks[g, block(j), e] * xw[g, cols[e], j]``."""
    if _pick(use_numba):
        return _forward_nb(indptr, cols, vals, xw, bounds, masks)
    return _forward_np(indptr, cols, vals, xw, bounds, masks)


def masked_aggregate_grad_xw(t_indptr, t_perm, rows, vals, grad_out, bounds, masks, use_numba=None):
    if _pick(use_numba):
        return _grad_xw_nb(t_indptr, t_perm, rows, vals, grad_out, bounds, masks)
    return _grad_xw_np(t_indptr, t_perm, rows, vals, grad_out, bounds, masks)


def masked_aggregate_grad_masks(rows, cols, vals, xw, grad_out, bounds, use_numba=None):
    if _pick(use_numba):
        return _grad_masks_nb(rows, cols, vals, xw, grad_out, bounds)
    return _grad_masks_np(rows, cols, vals, xw, grad_out, bounds)


def _pick(use_numba):
    if use_numba is None:
        return _accel.USE_NUMBA
    return bool(use_numba) and _accel.HAS_NUMBA
