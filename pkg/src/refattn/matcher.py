"""Top-K correspondence matching between LR (query) and Ref (key) features.

Both feature maps are unfolded into ``patch x patch`` neighbourhoods, each
column is L2-normalised, and every query keeps the K keys with the largest
inner product.  Ties go to the lowest key index.

Similarity values are always produced by one fixed-order accumulation
(:func:`ordered_dot`), so the blocked search and the brute-force oracle agree
bit for bit.  The blocked search only uses a BLAS product to shortlist
candidates; shortlisted pairs are then re-scored with the ordered sum.
"""
from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Tuple

import numpy as np

from .errors import ShapeError
from .numerics import im2col, ndar

NORM_FLOOR = 1e-12
# BLAS and ordered sums of unit vectors differ by far less than this
_SHORTLIST_SLACK = 1e-9
_BLOCK_ROWS = 256


@dataclass
class CorrespondenceMap:
    """Top-K Ref positions (flat indices) and similarities for every query position."""

    k: int
    patch: int
    positions: np.ndarray      # int64 [H1*W1, K]
    similarities: np.ndarray   # float64 [H1*W1, K]
    query_shape: Tuple[int, int]
    key_shape: Tuple[int, int]

    def top1(self) -> np.ndarray:
        return self.positions[:, 0]

    def key_coords(self) -> Tuple[np.ndarray, np.ndarray]:
        """(row, col) in the key grid of every stored match, each [H1*W1, K]."""
        return np.divmod(self.positions, self.key_shape[1])

    def save(self, path) -> None:
        """NDAR dump of [2, N, K] (positions as floats, similarities) plus a JSON sidecar."""
        path = Path(path)
        ndar.save(path, np.stack([self.positions.astype(np.float64), self.similarities]))
        meta = {"k": self.k, "patch": self.patch, "query_shape": list(self.query_shape),
                "key_shape": list(self.key_shape)}
        path.with_suffix(".json").write_text(json.dumps(meta, indent=2))

    @classmethod
    def load(cls, path) -> "CorrespondenceMap":
        path = Path(path)
        meta = json.loads(path.with_suffix(".json").read_text())
        data = ndar.load(path)
        return cls(meta["k"], meta["patch"], np.rint(data[0]).astype(np.int64), data[1],
                   tuple(meta["query_shape"]), tuple(meta["key_shape"]))


def _features(x) -> np.ndarray:
    arr = np.asarray(getattr(x, "data", x), dtype=np.float64)
    if arr.ndim != 3:
        raise ShapeError(f"matching expects [C,H,W] features, got {arr.shape}")
    return arr


def normalized_patches(x, patch: int) -> np.ndarray:
    """Unfold [C,H,W] into zero-padded patches and L2-normalise each column."""
    if patch % 2 == 0:
        raise ValueError(f"patch size must be odd, got {patch}")
    cols = im2col(_features(x), patch, patch, 1, patch // 2)
    norms = np.sqrt((cols * cols).sum(axis=0))
    return cols / np.maximum(norms, NORM_FLOOR)


def ordered_dot(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Column-wise inner products summed strictly in feature order, clipped to [-1, 1].

    ``a`` and ``b`` are [D, N]; the result is [N].  Each step is one rounded
    multiply and one rounded add, the same arithmetic a scalar loop performs.
    """
    acc = np.zeros(a.shape[1])
    for d in range(a.shape[0]):
        acc += a[d] * b[d]
    return np.clip(acc, -1.0, 1.0)


def _check_args(q, k_feat, k: int, patch: int):
    q, kf = _features(q), _features(k_feat)
    if q.shape[0] != kf.shape[0]:
        raise ShapeError(f"query {q.shape} and key {kf.shape} have different channel counts")
    n_keys = kf.shape[1] * kf.shape[2]
    if k < 1 or k > n_keys:
        raise ValueError(f"k must be in [1, {n_keys}] for a {kf.shape[1]}x{kf.shape[2]} key grid, got {k}")
    return q, kf


def _workers() -> int:
    env = os.environ.get("REFATTN_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def _search_block(qn: np.ndarray, kn: np.ndarray, rows: np.ndarray, k: int):
    approx = qn[:, rows].T @ kn                     # [B, N2]
    kth = -np.partition(-approx, k - 1, axis=1)[:, k - 1:k]
    cand_r, cand_c = np.nonzero(approx >= kth - _SHORTLIST_SLACK)
    exact = ordered_dot(qn[:, rows[cand_r]], kn[:, cand_c])
    # rows ascending, then similarity descending, then key index ascending
    order = np.lexsort((cand_c, -exact, cand_r))
    cand_r, cand_c, exact = cand_r[order], cand_c[order], exact[order]
    starts = np.searchsorted(cand_r, np.arange(len(rows)))
    take = starts[:, None] + np.arange(k)[None, :]
    return cand_c[take], exact[take]


def match(q_feat, k_feat, k: int = 1, patch: int = 3) -> CorrespondenceMap:
    """Top-``k`` matches of every query patch among all key patches."""
    q, kf = _check_args(q_feat, k_feat, k, patch)
    qn = normalized_patches(q, patch)
    kn = normalized_patches(kf, patch)
    n1 = qn.shape[1]
    blocks = [np.arange(s, min(s + _BLOCK_ROWS, n1)) for s in range(0, n1, _BLOCK_ROWS)]
    workers = min(_workers(), len(blocks))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda rows: _search_block(qn, kn, rows, k), blocks))
    else:
        results = [_search_block(qn, kn, rows, k) for rows in blocks]
    positions = np.concatenate([r[0] for r in results]).astype(np.int64)
    sims = np.concatenate([r[1] for r in results])
    return CorrespondenceMap(k, patch, positions, sims, q.shape[1:], kf.shape[1:])


def brute_force_match(q_feat, k_feat, k: int = 1, patch: int = 3) -> CorrespondenceMap:
    """Exhaustive double loop with a full sort per query; the oracle for :func:`match`."""
    q, kf = _check_args(q_feat, k_feat, k, patch)
    qn = normalized_patches(q, patch).T.tolist()
    kn = normalized_patches(kf, patch).T.tolist()
    positions = np.empty((len(qn), k), dtype=np.int64)
    sims = np.empty((len(qn), k))
    for i, qv in enumerate(qn):
        scored = []
        for j, kv in enumerate(kn):
            acc = 0.0
            for a, b in zip(qv, kv):
                acc += a * b
            scored.append((min(1.0, max(-1.0, acc)), j))
        scored.sort(key=lambda t: (-t[0], t[1]))
        for n in range(k):
            sims[i, n], positions[i, n] = scored[n]
    return CorrespondenceMap(k, patch, positions, sims, q.shape[1:], kf.shape[1:])


def similarity_map(cmap: CorrespondenceMap) -> np.ndarray:
    """Top-1 similarity per query, shaped like the query grid."""
    return cmap.similarities[:, 0].reshape(cmap.query_shape)


def rescale_map(cmap: CorrespondenceMap, factor: int, key_shape: Tuple[int, int]) -> CorrespondenceMap:
    """Propagate a coarse map to a grid ``factor`` times finer.

    A fine query inherits the match of its coarse parent; the matched key keeps
    the query's sub-cell offset so the displacement p_k - p is preserved.
    """
    if factor == 1:
        return cmap
    h1, w1 = cmap.query_shape
    fh, fw = h1 * factor, w1 * factor
    ky, kx = cmap.key_coords()                                      # [N1, K]
    yy, xx = np.meshgrid(np.arange(fh), np.arange(fw), indexing="ij")
    parent = (yy // factor) * w1 + (xx // factor)
    fy = ky[parent.ravel()] * factor + (yy.ravel() % factor)[:, None]
    fx = kx[parent.ravel()] * factor + (xx.ravel() % factor)[:, None]
    fy = np.clip(fy, 0, key_shape[0] - 1)
    fx = np.clip(fx, 0, key_shape[1] - 1)
    return CorrespondenceMap(cmap.k, cmap.patch, (fy * key_shape[1] + fx).astype(np.int64),
                             cmap.similarities[parent.ravel()].copy(), (fh, fw), tuple(key_shape))


def pyramid_maps(q_feats, k_feats, k: int = 1, patch: int = 3, per_scale: bool = False) -> list:
    """Correspondence maps for scales 1..3 (coarsest-scale matching propagated by default)."""
    if per_scale:
        return [match(q, kf, k, patch) for q, kf in zip(q_feats, k_feats)]
    coarse = match(q_feats[-1], k_feats[-1], k, patch)
    n = len(q_feats)
    return [rescale_map(coarse, 2 ** (n - 1 - l), tuple(k_feats[l].shape[1:])) for l in range(n)]
