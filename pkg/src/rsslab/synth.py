"""Synthetic indoor scene: access points, path loss, trajectories, recordings.

RSS from one AP at floor position ``p`` is::

    tx_power - 10 n log10(max(r, r0) / r0)      log-distance mean
      + field(p)                                frozen shadowing + multipath
      + receiver offsets                        per device, per AP
      + N(0, noise_sigma)                       fresh per sample

The frozen field is a sum of random Fourier features, so its value at a
point depends only on the AP's seed and the point itself.
"""
from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .dataio import Recording
from .errors import ValidationError
from .geometry import GroundPoint
from .seeding import derive_rng, derive_seed
from .uncertainty import UncertaintyBudget, corrupt_labels

N_FEATURES = 64


@dataclass(frozen=True)
class AccessPoint:
    id: str
    position: tuple[float, float]
    tx_power_dbm: float = -30.0
    multipath_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "position", tuple(float(v) for v in self.position))
        if not all(math.isfinite(v) for v in self.position):
            raise ValidationError(f"AP {self.id}: position must be finite")
        if not -30.0 <= self.tx_power_dbm <= 30.0:
            raise ValidationError(f"AP {self.id}: tx_power_dbm must lie in [-30, 30]")


@dataclass(frozen=True)
class SignalModel:
    path_loss_exponent: float = 2.0
    ref_distance_m: float = 1.0
    shadowing_sigma_db: float = 2.0
    shadowing_corr_length_m: float = 2.0
    multipath_field_scale_db: float = 6.0
    multipath_corr_length_m: float = 0.5
    noise_sigma_db: float = 6.0

    def __post_init__(self):
        if not self.path_loss_exponent > 0:
            raise ValidationError("path_loss_exponent must be > 0")
        if not (self.ref_distance_m > 0 and self.shadowing_corr_length_m > 0 and self.multipath_corr_length_m > 0):
            raise ValidationError("reference and correlation lengths must be > 0")
        for name in ("shadowing_sigma_db", "multipath_field_scale_db", "noise_sigma_db"):
            if not getattr(self, name) >= 0:
                raise ValidationError(f"{name} must be >= 0")


class Pattern(str, enum.Enum):
    LAWNMOWER_Y_MAJOR = "lawnmower_y_major"
    LAWNMOWER_X_MAJOR = "lawnmower_x_major"
    RANDOM_WAYPOINT = "random_waypoint"


@dataclass(frozen=True)
class TrajectorySpec:
    """Calibration walk over an axis-aligned ``region = (x0, y0, x1, y1)``.

    ``lane_spacing_m`` is the distance between lawnmower legs and
    ``lane_offset_m`` shifts the first leg away from the region edge;
    ``start_fraction`` is where along the path the walk begins (``None`` draws
    it from the seed).
    """

    region: tuple[float, float, float, float] = (0.0, 0.0, 4.0, 6.0)
    pattern: Pattern = Pattern.LAWNMOWER_Y_MAJOR
    speed_mps: float = 0.5
    duration_s: float = 60.0
    sample_rate_hz: float = 10.0
    lane_spacing_m: float = 0.5
    lane_offset_m: float = 0.0
    start_fraction: float | None = None
    calibration_grade: bool = True

    def __post_init__(self):
        object.__setattr__(self, "pattern", Pattern(self.pattern))
        object.__setattr__(self, "region", tuple(float(v) for v in self.region))
        x0, y0, x1, y1 = self.region
        if not (x1 >= x0 and y1 >= y0):
            raise ValidationError(f"region {self.region} is not (x0, y0, x1, y1) with x1>=x0, y1>=y0")
        if self.speed_mps < 0:
            raise ValidationError("speed_mps must be >= 0")
        if self.calibration_grade and self.speed_mps > 0.5:
            raise ValidationError("calibration-grade walks must keep speed_mps <= 0.5")
        if not self.sample_rate_hz > 0:
            raise ValidationError("sample_rate_hz must be > 0")
        if self.duration_s < 0:
            raise ValidationError("duration_s must be >= 0")
        if not self.lane_spacing_m > 0:
            raise ValidationError("lane_spacing_m must be > 0")
        if not 0 <= self.lane_offset_m < self.lane_spacing_m:
            raise ValidationError("lane_offset_m must lie in [0, lane_spacing_m)")

    @property
    def num_samples(self) -> int:
        return int(round(self.duration_s * self.sample_rate_hz))


@dataclass(frozen=True)
class ReceiverProfile:
    id: str = "A"
    gain_offset_db: float = 0.0
    per_ap_offset_db: dict = field(default_factory=dict)
    dropout_prob: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.dropout_prob < 1.0:
            raise ValidationError("dropout_prob must lie in [0, 1)")

    def offset_for(self, ap_id: str) -> float:
        return self.gain_offset_db + float(self.per_ap_offset_db.get(ap_id, 0.0))


# -- signal model --------------------------------------------------------------


def _fourier_field(seed: int, name: str, pts: np.ndarray, scale: float, corr_len: float) -> np.ndarray:
    """Stationary Gaussian-like field with squared-exponential correlation."""
    if scale == 0.0:
        return np.zeros(len(pts))
    rng = derive_rng(seed, name)
    omega = rng.normal(0.0, 1.0 / corr_len, size=(N_FEATURES, 2))
    phase = rng.uniform(0.0, 2.0 * np.pi, size=N_FEATURES)
    # elementwise rather than a matmul so each point's value does not depend on the batch
    arg = pts[:, :1] * omega[:, 0] + pts[:, 1:2] * omega[:, 1] + phase
    return scale * math.sqrt(2.0 / N_FEATURES) * np.cos(arg).sum(axis=1)


def frozen_field(ap: AccessPoint, model: SignalModel, pts) -> np.ndarray:
    """Shadowing plus multipath deviation (dB) of ``ap`` at floor points."""
    pts = np.asarray(pts, dtype=float).reshape(-1, 2)
    return (_fourier_field(ap.multipath_seed, "shadowing", pts, model.shadowing_sigma_db, model.shadowing_corr_length_m)
            + _fourier_field(ap.multipath_seed, "multipath", pts, model.multipath_field_scale_db,
                             model.multipath_corr_length_m))


def path_loss_mean(ap: AccessPoint, model: SignalModel, pts) -> np.ndarray:
    pts = np.asarray(pts, dtype=float).reshape(-1, 2)
    r = np.linalg.norm(pts - np.asarray(ap.position), axis=1)
    r = np.maximum(r, model.ref_distance_m)
    return ap.tx_power_dbm - 10.0 * model.path_loss_exponent * np.log10(r / model.ref_distance_m)


def mean_rss(ap: AccessPoint, model: SignalModel, pts, rx: ReceiverProfile | None = None) -> np.ndarray:
    """Noise-free RSS (dBm) at each point: path loss + frozen field + receiver offset."""
    out = path_loss_mean(ap, model, pts) + frozen_field(ap, model, pts)
    if rx is not None:
        out = out + rx.offset_for(ap.id)
    return out


def rss_at(ap: AccessPoint, model: SignalModel, pos, rx: ReceiverProfile, rng: np.random.Generator | None) -> float:
    """One RSS reading at ``pos``; ``rng`` supplies the per-sample noise."""
    value = float(mean_rss(ap, model, np.asarray(pos, dtype=float), rx)[0])
    if model.noise_sigma_db > 0 and rng is not None:
        value += rng.normal(0.0, model.noise_sigma_db)
    return value


# -- trajectories ----------------------------------------------------------------


def _lawnmower_vertices(spec: TrajectorySpec) -> np.ndarray:
    x0, y0, x1, y1 = spec.region
    major_y = spec.pattern is Pattern.LAWNMOWER_Y_MAJOR
    lo, hi = (x0, x1) if major_y else (y0, y1)
    a, b = (y0, y1) if major_y else (x0, x1)
    lo_lane = min(lo + spec.lane_offset_m, hi)
    n_lanes = int(math.floor((hi - lo_lane) / spec.lane_spacing_m + 1e-9)) + 1
    lanes = lo_lane + spec.lane_spacing_m * np.arange(n_lanes)
    if hi - lanes[-1] > 1e-9:
        lanes = np.append(lanes, hi)
    verts = []
    for i, c in enumerate(lanes):
        ends = (a, b) if i % 2 == 0 else (b, a)
        for e in ends:
            verts.append((c, e) if major_y else (e, c))
    return np.asarray(verts, dtype=float)


def _walk_polyline(verts: np.ndarray, s: np.ndarray) -> np.ndarray:
    seg = np.linalg.norm(np.diff(verts, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = cum[-1]
    if total == 0.0:
        return np.repeat(verts[:1], len(s), axis=0)
    # ping-pong along the path
    s = np.mod(s, 2.0 * total)
    s = np.where(s > total, 2.0 * total - s, s)
    k = np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(seg) - 1)
    frac = np.where(seg[k] > 0, (s - cum[k]) / np.where(seg[k] > 0, seg[k], 1.0), 0.0)
    return verts[k] + frac[:, None] * (verts[k + 1] - verts[k])


def generate_trajectory(spec: TrajectorySpec, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Timestamps (s) and positions (m) of a constant-speed walk.

    Returns:
        (t, xy) with ``t[i] = i / sample_rate_hz``.
    """
    n = spec.num_samples
    t = np.arange(n) / spec.sample_rate_hz
    rng = derive_rng(seed, "trajectory")
    x0, y0, x1, y1 = spec.region
    if spec.pattern is Pattern.RANDOM_WAYPOINT:
        # enough waypoints to outlast the walk at the given speed
        mean_leg = 0.5 * math.hypot(x1 - x0, y1 - y0) + 1e-9
        n_way = int(spec.speed_mps * spec.duration_s / mean_leg) + 3
        verts = np.column_stack([rng.uniform(x0, x1, n_way), rng.uniform(y0, y1, n_way)])
    else:
        verts = _lawnmower_vertices(spec)
    seg = np.linalg.norm(np.diff(verts, axis=0), axis=1)
    total = float(seg.sum())
    start = spec.start_fraction if spec.start_fraction is not None else rng.uniform()
    if spec.pattern is Pattern.RANDOM_WAYPOINT:
        start = 0.0
    s = start * total + spec.speed_mps * t
    xy = _walk_polyline(verts, s)
    xy[:, 0] = np.clip(xy[:, 0], x0, x1)
    xy[:, 1] = np.clip(xy[:, 1], y0, y1)
    return t, xy


# -- recordings -------------------------------------------------------------------


def generate_recording(
    aps: list[AccessPoint],
    model: SignalModel,
    spec: TrajectorySpec,
    rx: ReceiverProfile,
    budget: UncertaintyBudget,
    seed: int,
    name: str = "synthetic",
) -> Recording:
    """Simulate one calibration recording.

    Positions in the returned recording are the noisy labels; the exact path
    is kept in ``truth_xy``. Dropped packets are NaN.
    """
    if not aps:
        raise ValidationError("need at least one access point")
    t, truth = generate_trajectory(spec, derive_seed(seed, "walk"))
    n = len(t)
    rss = np.empty((n, len(aps)))
    noise_rng = derive_rng(seed, "rss_noise")
    drop_rng = derive_rng(seed, "dropout")
    for j, ap in enumerate(aps):
        rss[:, j] = mean_rss(ap, model, truth, rx)
    if model.noise_sigma_db > 0:
        rss += noise_rng.normal(0.0, model.noise_sigma_db, size=rss.shape)
    if rx.dropout_prob > 0:
        rss[drop_rng.uniform(size=rss.shape) < rx.dropout_prob] = np.nan
    labels = corrupt_labels(truth, budget, derive_seed(seed, "labels"))
    meta = {
        "seed": int(seed),
        "generator": {
            "aps": [asdict(a) for a in aps],
            "signal_model": asdict(model),
            "trajectory": {**asdict(spec), "pattern": spec.pattern.value},
            "receiver": asdict(rx),
            "budget": budget.to_dict(),
        },
    }
    return Recording(name=name, receiver_id=rx.id, ap_ids=tuple(a.id for a in aps),
                     t=t, xy=labels, rss=rss, truth_xy=truth, meta=meta)


# -- default scenes ---------------------------------------------------------------

REGION = (0.0, 0.0, 4.0, 6.0)
# sample counts of the four reference recordings (three on receiver A, one on B)
DEFAULT_RECORDINGS = (("exp5", 883, "A"), ("exp6", 1865, "A"), ("exp7", 2317, "A"), ("exp8", 1092, "B"))


def default_aps(seed: int = 0) -> list[AccessPoint]:
    """Three APs at three corners of the 4 m x 6 m region."""
    corners = [(0.0, 0.0), (4.0, 0.0), (0.0, 6.0)]
    return [AccessPoint(id=f"AP{i + 1}", position=c, tx_power_dbm=-30.0,
                        multipath_seed=derive_seed(seed, "ap", i)) for i, c in enumerate(corners)]


def default_receivers() -> dict[str, ReceiverProfile]:
    return {
        "A": ReceiverProfile(id="A", gain_offset_db=0.0, per_ap_offset_db={}, dropout_prob=0.02),
        "B": ReceiverProfile(id="B", gain_offset_db=-2.0, per_ap_offset_db={"AP1": 1.0, "AP3": -1.0},
                             dropout_prob=0.05),
    }


def default_budget() -> UncertaintyBudget:
    """Base-installation label budget with the 5 cm timing term."""
    return UncertaintyBudget.from_components(0.0023, 0.050, 0.014, 0.082, eps_temp_m=0.05)


def default_dataset(
    seed: int = 0,
    model: SignalModel | None = None,
    spec: TrajectorySpec | None = None,
    budget: UncertaintyBudget | None = None,
    recordings=DEFAULT_RECORDINGS,
) -> list[Recording]:
    """Four recordings with the reference sample counts, shared AP geometry."""
    model = model or SignalModel()
    spec = spec or TrajectorySpec(region=REGION)
    budget = budget if budget is not None else default_budget()
    aps = default_aps(seed)
    rxs = default_receivers()
    out = []
    for i, (name, count, rx_id) in enumerate(recordings):
        s = TrajectorySpec(**{**asdict(spec), "duration_s": count / spec.sample_rate_hz})
        out.append(generate_recording(aps, model, s, rxs[rx_id], budget, derive_seed(seed, "recording", i), name=name))
    return out


def base_recording(seed: int = 7, duration_s: float = 60.0) -> Recording:
    """One default-scene walk on receiver A with all generator defaults."""
    spec = TrajectorySpec(region=REGION, duration_s=duration_s)
    return generate_recording(default_aps(seed), SignalModel(), spec, default_receivers()["A"],
                              default_budget(), seed, name="base")
