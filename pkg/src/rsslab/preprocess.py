"""Filtering, stream alignment, windowing, normalization and splits."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .dataio import Recording
from .errors import DegenerateVariance, EmptyOverlap, UnknownRecording, ValidationError
from .seeding import derive_rng


def moving_average(series, n: int) -> np.ndarray:
    """Centered moving average that ignores missing (NaN) entries.

    The window covers ``i - (n-1)//2 .. i + n//2`` and shrinks at the ends.
    An output is NaN only if every input in its window is NaN. Works along
    axis 0 of 1-D or 2-D input.
    """
    if int(n) != n or n < 1:
        raise ValidationError(f"window size must be a positive integer, got {n}")
    x = np.asarray(series, dtype=float)
    if n == 1:
        return x.copy()
    flat = x.reshape(len(x), -1)
    valid = ~np.isnan(flat)
    vals = np.where(valid, flat, 0.0)
    zero = np.zeros((1, flat.shape[1]))
    csum = np.concatenate([zero, np.cumsum(vals, axis=0)])
    ccnt = np.concatenate([zero, np.cumsum(valid, axis=0)])
    idx = np.arange(len(x))
    lo = np.clip(idx - (n - 1) // 2, 0, len(x))
    hi = np.clip(idx + n // 2 + 1, 0, len(x))
    s = csum[hi] - csum[lo]
    c = ccnt[hi] - ccnt[lo]
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(c > 0, s / np.maximum(c, 1), np.nan)
    return out.reshape(x.shape)


def impute(rss) -> np.ndarray:
    """Forward-fill, then back-fill, missing readings per column."""
    a = np.array(rss, dtype=float)
    for j in range(a.shape[1]):
        col = a[:, j]
        ok = ~np.isnan(col)
        if not ok.any():
            raise ValidationError(f"column {j} has no readings to impute from")
        idx = np.where(ok, np.arange(len(col)), 0)
        np.maximum.accumulate(idx, out=idx)
        filled = col[idx]
        first = np.argmax(ok)
        filled[:first] = col[first]
        a[:, j] = filled
    return a


def align_streams(cam_t, cam_xy, rec: Recording) -> tuple[Recording, np.ndarray]:
    """Attach camera positions to RSS samples by nearest frame in time.

    RSS samples outside the camera time span are dropped.

    Returns:
        (recording with positions resampled onto the RSS timestamps,
         absolute time residual of every kept sample in seconds)
    Raises:
        EmptyOverlap: the two streams do not overlap in time.
    """
    cam_t = np.asarray(cam_t, dtype=float)
    cam_xy = np.asarray(cam_xy, dtype=float).reshape(-1, 2)
    if len(cam_t) == 0 or len(rec) == 0:
        raise EmptyOverlap("empty stream")
    if np.any(np.diff(cam_t) <= 0):
        raise ValidationError("camera timestamps must be strictly increasing")
    keep = (rec.t >= cam_t[0]) & (rec.t <= cam_t[-1])
    if not keep.any():
        raise EmptyOverlap(
            f"camera [{cam_t[0]}, {cam_t[-1]}] and RSS [{rec.t[0]}, {rec.t[-1]}] do not overlap"
        )
    t = rec.t[keep]
    j = np.clip(np.searchsorted(cam_t, t), 1, len(cam_t) - 1) if len(cam_t) > 1 else np.zeros(len(t), int)
    if len(cam_t) > 1:
        left_closer = (t - cam_t[j - 1]) <= (cam_t[j] - t)
        j = np.where(left_closer, j - 1, j)
    residual = np.abs(t - cam_t[j])
    out = Recording(name=rec.name, receiver_id=rec.receiver_id, ap_ids=rec.ap_ids, t=t, xy=cam_xy[j],
                    rss=rec.rss[keep], meta=dict(rec.meta))
    return out, residual


@dataclass
class CorrelationReport:
    """Pearson correlations of each AP stream with x and y, raw and filtered."""

    ap_ids: tuple[str, ...]
    n: int
    raw: np.ndarray  # (num_aps, 2)
    filtered: np.ndarray  # (num_aps, 2)

    @property
    def mean_abs_raw(self) -> float:
        return float(np.mean(np.abs(self.raw)))

    @property
    def mean_abs_filtered(self) -> float:
        return float(np.mean(np.abs(self.filtered)))

    @property
    def ratio(self) -> float:
        return self.mean_abs_filtered / self.mean_abs_raw


def _pearson(a: np.ndarray, b: np.ndarray) -> float:
    a = a - a.mean()
    b = b - b.mean()
    da, db = np.sqrt(a @ a), np.sqrt(b @ b)
    if da == 0 or db == 0:
        raise DegenerateVariance("series is constant")
    return float(a @ b / (da * db))


def _corr_matrix(rss: np.ndarray, xy: np.ndarray) -> np.ndarray:
    return np.array([[_pearson(rss[:, j], xy[:, k]) for k in range(2)] for j in range(rss.shape[1])])


def window_correlation(rec: Recording, n: int) -> CorrelationReport:
    if len(rec) < n:
        raise ValidationError(f"recording has {len(rec)} rows, fewer than n={n}")
    rss = impute(rec.rss)
    raw = _corr_matrix(rss, rec.xy)
    filt = _corr_matrix(moving_average(rss, n), moving_average(rec.xy, n))
    return CorrelationReport(rec.ap_ids, n, raw, filt)


@dataclass
class WindowSample:
    rss_window: np.ndarray  # (num_aps, window_len)
    label: np.ndarray  # (2,)
    source_recording: str
    t_center_s: float
    raw_rss: np.ndarray  # (num_aps,) unfiltered reading at the window center


@dataclass
class WindowSet:
    """Struct-of-arrays collection of windows.

    ``X`` is (B, num_aps, window_len); ``y`` is (B, 2); ``raw_rss`` is the
    imputed but unfiltered RSS at each window center, in dBm, used by the
    fingerprinting baselines.
    """

    X: np.ndarray
    y: np.ndarray
    source: np.ndarray
    t_center: np.ndarray
    raw_rss: np.ndarray
    ap_ids: tuple[str, ...] = ()
    normalized: bool = False

    def __len__(self) -> int:
        return len(self.X)

    def __getitem__(self, i) -> WindowSample:
        return WindowSample(self.X[i], self.y[i], str(self.source[i]), float(self.t_center[i]), self.raw_rss[i])

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def subset(self, idx) -> "WindowSet":
        idx = np.asarray(idx)
        return WindowSet(self.X[idx], self.y[idx], self.source[idx], self.t_center[idx], self.raw_rss[idx],
                         self.ap_ids, self.normalized)

    @property
    def window_len(self) -> int:
        return self.X.shape[2]

    @classmethod
    def concat(cls, sets: list["WindowSet"]) -> "WindowSet":
        if not sets:
            raise ValidationError("nothing to concatenate")
        ap_ids = sets[0].ap_ids
        if any(s.ap_ids != ap_ids for s in sets):
            raise ValidationError("window sets have different AP ids")
        return cls(
            np.concatenate([s.X for s in sets]),
            np.concatenate([s.y for s in sets]),
            np.concatenate([s.source for s in sets]),
            np.concatenate([s.t_center for s in sets]),
            np.concatenate([s.raw_rss for s in sets]),
            ap_ids,
            sets[0].normalized,
        )


def make_windows(rec: Recording, n: int = 50, stride: int = 1, filter_n: int | None = None) -> WindowSet:
    """Slide a length-``n`` window over an imputed, filtered recording.

    RSS and positions are smoothed with ``moving_average(filter_n)``
    (``filter_n`` defaults to ``n``). Each window is labelled with the
    filtered position at its center index ``start + n // 2``. Output is not
    normalized; see ``Normalizer``.
    """
    if n < 1 or stride < 1:
        raise ValidationError("n and stride must be >= 1")
    if len(rec) < n:
        raise ValidationError(f"recording {rec.name} has {len(rec)} rows, fewer than n={n}")
    filter_n = n if filter_n is None else filter_n
    raw = impute(rec.rss)
    rss = moving_average(raw, filter_n)
    pos = moving_average(rec.xy, filter_n)
    starts = np.arange(0, len(rec) - n + 1, stride)
    centers = starts + n // 2
    view = np.lib.stride_tricks.sliding_window_view(rss, n, axis=0)  # (L-n+1, A, n)
    X = np.ascontiguousarray(view[starts])
    return WindowSet(
        X=X,
        y=pos[centers].copy(),
        source=np.full(len(starts), rec.name, dtype=object),
        t_center=rec.t[centers].copy(),
        raw_rss=raw[centers].copy(),
        ap_ids=rec.ap_ids,
    )


def windows_from_recordings(recs: list[Recording], n: int = 50, stride: int = 1,
                            filter_n: int | None = None) -> WindowSet:
    return WindowSet.concat([make_windows(r, n, stride, filter_n) for r in recs])


@dataclass
class Normalizer:
    """Per-AP RSS z-scoring and per-axis min-max position scaling."""

    rss_mean: np.ndarray
    rss_std: np.ndarray
    pos_min: np.ndarray
    pos_max: np.ndarray

    @classmethod
    def fit(cls, ws: WindowSet) -> "Normalizer":
        if ws.normalized:
            raise ValidationError("fit the normalizer on raw windows")
        if len(ws) == 0:
            raise ValidationError("cannot fit a normalizer on an empty set")
        mean = ws.X.mean(axis=(0, 2))
        std = ws.X.std(axis=(0, 2))
        std = np.where(std > 1e-12, std, 1.0)
        return cls(mean, std, ws.y.min(axis=0), ws.y.max(axis=0))

    def transform(self, ws: WindowSet) -> WindowSet:
        if ws.normalized:
            raise ValidationError("window set is already normalized")
        X = (ws.X - self.rss_mean[None, :, None]) / self.rss_std[None, :, None]
        return WindowSet(X, self.scale_positions(ws.y), ws.source, ws.t_center, ws.raw_rss, ws.ap_ids, True)

    @property
    def _span(self) -> np.ndarray:
        # a constant axis has span 0: it scales to 0 and always unscales to its value
        span = self.pos_max - self.pos_min
        return np.where(span > 1e-12, span, 0.0)

    def scale_positions(self, xy) -> np.ndarray:
        span = self._span
        return (np.asarray(xy, dtype=float) - self.pos_min) / np.where(span > 0, span, 1.0)

    def unscale_positions(self, z) -> np.ndarray:
        return np.asarray(z, dtype=float) * self._span + self.pos_min

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("rss_mean", "rss_std", "pos_min", "pos_max")}

    @classmethod
    def from_dict(cls, d: dict) -> "Normalizer":
        return cls(*(np.asarray(d[k], dtype=float) for k in ("rss_mean", "rss_std", "pos_min", "pos_max")))


class SplitMode(str, enum.Enum):
    RANDOM_FRACTION = "random_fraction"
    LEAVE_ONE_RECORDING_OUT = "leave_one_recording_out"


@dataclass(frozen=True)
class SplitSpec:
    mode: SplitMode = SplitMode.RANDOM_FRACTION
    train_fraction: float = 0.75
    holdout_recording: str | None = None
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "mode", SplitMode(self.mode))
        if self.mode is SplitMode.RANDOM_FRACTION and not 0.0 < self.train_fraction < 1.0:
            raise ValidationError(f"train_fraction must lie in (0, 1), got {self.train_fraction}")
        if self.mode is SplitMode.LEAVE_ONE_RECORDING_OUT and not self.holdout_recording:
            raise ValidationError("leave-one-recording-out needs holdout_recording")


def split_indices(sources, spec: SplitSpec) -> tuple[np.ndarray, np.ndarray]:
    sources = np.asarray(sources, dtype=object)
    n = len(sources)
    if spec.mode is SplitMode.RANDOM_FRACTION:
        perm = derive_rng(spec.seed, "split").permutation(n)
        n_train = int(round(spec.train_fraction * n))
        return np.sort(perm[:n_train]), np.sort(perm[n_train:])
    if spec.holdout_recording not in set(sources.tolist()):
        raise UnknownRecording(f"no recording named {spec.holdout_recording!r}")
    test = sources == spec.holdout_recording
    return np.flatnonzero(~test), np.flatnonzero(test)


def split(ws: WindowSet, spec: SplitSpec) -> tuple[WindowSet, WindowSet]:
    """Partition windows into disjoint train and test sets."""
    tr, te = split_indices(ws.source, spec)
    return ws.subset(tr), ws.subset(te)
