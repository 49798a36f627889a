"""Geometry kernels: farthest point sampling, exact kNN, inverse-distance interpolation.

All functions accept a single cloud ``(n, 3)`` or a batch ``(B, n, 3)``.
Squared distances are always formed by explicit differencing so that the
same pair of points yields the same float regardless of where it appears;
every tie breaks toward the lowest index.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffcore import Tensor, gather_rows, reduce_sum, scale

ZERO_DIST = 1e-10


@dataclass
class SampleResult:
    indices: np.ndarray  # (..., m) in selection order
    min_dists: np.ndarray  # (..., n) distance of each point to the selected set


@dataclass
class KnnResult:
    neighbor_idx: np.ndarray  # (..., s, k)
    neighbor_sqdist: np.ndarray  # (..., s, k), ascending per row


def _sqdist_to(points: np.ndarray, q: np.ndarray) -> np.ndarray:
    d = points - q[..., None, :]
    return np.einsum("...i,...i->...", d, d)


def pairwise_sqdist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """(..., s, 3) x (..., n, 3) -> (..., s, n) squared Euclidean distances."""
    d = a[..., :, None, :] - b[..., None, :, :]
    return np.einsum("...i,...i->...", d, d)


def farthest_point_sample(points, m: int) -> SampleResult:
    """Greedy farthest-first selection of ``m`` points.

    The seed is the point farthest (squared distance) from the centroid; each
    following pick maximises the distance to the already selected set.
    """
    pts = np.asarray(points, dtype=np.float64)
    single = pts.ndim == 2
    if single:
        pts = pts[None]
    b, n, _ = pts.shape
    if not 1 <= m <= n:
        raise ValueError(f"cannot sample m={m} points from n={n}")
    if not np.all(np.isfinite(pts)):
        raise ValueError("points must be finite")
    rows = np.arange(b)
    centroid = pts.mean(axis=1)
    cur = np.argmax(_sqdist_to(pts, centroid), axis=1)
    idx = np.empty((b, m), dtype=np.int64)
    mind = np.full((b, n), np.inf)
    for j in range(m):
        idx[:, j] = cur
        np.minimum(mind, _sqdist_to(pts, pts[rows, cur]), out=mind)
        cur = np.argmax(mind, axis=1)
    res = SampleResult(idx, np.sqrt(mind))
    if single:
        res = SampleResult(idx[0], res.min_dists[0])
    return res


def knn(query, reference, k: int) -> KnnResult:
    """Exact k nearest reference points of every query point (brute force)."""
    return multi_knn(query, reference, (k,))[0]


def multi_knn(query, reference, ks) -> list:
    """:func:`knn` for several ``k`` at once; one sort serves every scale."""
    q = np.asarray(query, dtype=np.float64)
    r = np.asarray(reference, dtype=np.float64)
    n = r.shape[-2]
    for k in ks:
        if not 1 <= k <= n:
            raise ValueError(f"k={k} must lie in [1, {n}]")
    d = pairwise_sqdist(q, r)
    kmax = max(ks)
    if kmax < n:
        # stable order: equal distances keep ascending reference index
        part = np.argpartition(d, kmax - 1, axis=-1)[..., :kmax]
        cutoff = np.take_along_axis(d, part, axis=-1).max(axis=-1, keepdims=True)
        key = np.where(d <= cutoff, d, np.inf)
        order = np.argsort(key, axis=-1, kind="stable")[..., :kmax]
    else:
        order = np.argsort(d, axis=-1, kind="stable")
    dist = np.take_along_axis(d, order, axis=-1)
    return [KnnResult(order[..., :k], dist[..., :k]) for k in ks]


def idw_weights(target, source) -> tuple:
    """Indices and weights of the 3-NN inverse-squared-distance interpolation.

    A target closer than ``1e-10`` to its nearest source copies it exactly
    (weights ``[1, 0, 0]``).
    """
    src = np.asarray(source, dtype=np.float64)
    if src.shape[-2] < 3:
        raise ValueError(f"interpolation needs at least 3 source points, got {src.shape[-2]}")
    nn = knn(target, src, 3)
    inv = 1.0 / np.maximum(nn.neighbor_sqdist, ZERO_DIST**2)
    w = inv / inv.sum(axis=-1, keepdims=True)
    hit = nn.neighbor_sqdist[..., 0] < ZERO_DIST**2
    w[hit] = (1.0, 0.0, 0.0)
    return nn.neighbor_idx, w


def interpolate_idw(target, source, source_feats) -> Tensor:
    """Propagate ``source_feats`` (…, s, d) to ``target`` points; differentiable in the features."""
    if not isinstance(source_feats, Tensor):
        source_feats = Tensor(source_feats)
    idx, w = idw_weights(target, source)
    picked = gather_rows(source_feats, idx)  # (..., t, 3, d)
    return reduce_sum(scale(picked, w[..., None]), axis=-2)


def take_rows(arr: np.ndarray, idx: np.ndarray) -> np.ndarray:
    """Plain-array counterpart of ``gather_rows``: rows of ``arr`` (…, n, c) at ``idx`` (…, *rest)."""
    arr = np.asarray(arr)
    if arr.ndim == 2:
        return arr[idx]
    b = arr.shape[0]
    lead = np.arange(b).reshape((b,) + (1,) * (idx.ndim - 1))
    return arr[lead, idx]
