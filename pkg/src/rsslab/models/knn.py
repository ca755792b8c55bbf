"""Fingerprinting baselines on raw RSS vectors."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DimensionMismatch, ValidationError

_CHUNK = 256


@dataclass
class FingerprintDb:
    """Reference RSS vectors ``rss`` (M, A) recorded at ``positions`` (M, 2).

    ``k`` neighbors are averaged by ``knn_predict``; ``m_interp`` neighbors
    are inverse-distance weighted by ``knn_interp_predict``.
    """

    rss: np.ndarray
    positions: np.ndarray
    k: int = 5
    m_interp: int = 3
    eps_d: float = 1e-9

    def __post_init__(self):
        self.rss = np.asarray(self.rss, dtype=float)
        self.positions = np.asarray(self.positions, dtype=float)
        if self.rss.ndim != 2 or len(self.rss) == 0:
            raise ValidationError("fingerprint database needs a non-empty (M, num_aps) RSS matrix")
        if self.positions.shape != (len(self.rss), 2):
            raise ValidationError("positions must be (M, 2), one per fingerprint")
        if not np.all(np.isfinite(self.rss)):
            raise ValidationError("fingerprint RSS must be finite; impute first")
        if not 1 <= self.k <= len(self.rss):
            raise ValidationError(f"k must lie in [1, {len(self.rss)}], got {self.k}")
        if not 1 <= self.m_interp <= self.k:
            raise ValidationError(f"m_interp must lie in [1, k={self.k}], got {self.m_interp}")
        if self.eps_d < 0:
            raise ValidationError("eps_d must be >= 0")

    @property
    def num_aps(self) -> int:
        return self.rss.shape[1]


def _queries(db: FingerprintDb, rss) -> tuple[np.ndarray, bool]:
    q = np.asarray(rss, dtype=float)
    single = q.ndim == 1
    q = q.reshape(1, -1) if single else q
    if q.ndim != 2 or q.shape[1] != db.num_aps:
        raise DimensionMismatch(f"query has {q.shape[-1]} RSS values, database has {db.num_aps}")
    return q, single


def _neighbors(db: FingerprintDb, q: np.ndarray, count: int):
    """Indices and distances of the ``count`` nearest entries, ties to lower index."""
    idx = np.empty((len(q), count), dtype=np.intp)
    dist = np.empty((len(q), count))
    for s in range(0, len(q), _CHUNK):
        d = np.sqrt(np.sum((q[s: s + _CHUNK, None, :] - db.rss[None, :, :]) ** 2, axis=2))
        order = np.argsort(d, axis=1, kind="stable")[:, :count]
        idx[s: s + _CHUNK] = order
        dist[s: s + _CHUNK] = np.take_along_axis(d, order, axis=1)
    return idx, dist


def knn_predict(db: FingerprintDb, rss):
    """Centroid of the positions of the ``k`` nearest fingerprints."""
    q, single = _queries(db, rss)
    idx, _ = _neighbors(db, q, db.k)
    out = db.positions[idx].mean(axis=1)
    return out[0] if single else out


def knn_interp_predict(db: FingerprintDb, rss):
    """Inverse-distance weighted position of the ``m_interp`` nearest fingerprints.

    Weights are ``1 / (d + eps_d)``. A query that exactly matches one or more
    fingerprints returns their (mean) position.
    """
    q, single = _queries(db, rss)
    idx, dist = _neighbors(db, q, db.m_interp)
    pos = db.positions[idx]
    exact = dist == 0.0
    w = np.where(exact.any(axis=1, keepdims=True), exact.astype(float), 1.0 / (dist + db.eps_d))
    w = w / w.sum(axis=1, keepdims=True)  # normalize first so M=1 returns the position exactly
    out = np.einsum("qm,qmd->qd", w, pos)
    return out[0] if single else out
