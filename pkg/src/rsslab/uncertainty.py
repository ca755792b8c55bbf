"""Label-uncertainty budget of vision-assisted RSS calibration.

Four independent spatial terms (pixel quantization, marker misplacement,
detector jitter, foot-point heuristic) add in quadrature to ``sigma_t``; the
timing misalignment term ``eps_temp`` joins them for ``sigma_label``.

Only the marker term needs simulation. Each Monte-Carlo trial misplaces the
markers, refits the homography against the nominal pixel observations and
measures how far a grid of probe pixels lands from where they should.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .errors import DegenerateConfiguration, ValidationError
from .geometry import (
    DEGENERACY_TOL,
    CameraSetup,
    _dlt_rows,
    ideal_homography,
    isotropic_normalization,
    pixel_pitch,
    probe_grid,
    world_to_pixel,
)
from .seeding import derive_rng

logger = logging.getLogger(__name__)

DEFAULT_TRIALS = 10_000
MAX_DISCARD_RATE = 0.01
# trials per work unit; fixed so results do not depend on the worker count
CHUNK = 500


@dataclass(frozen=True)
class SpatialErrorConfig:
    """Inputs of the spatial error model.

    ``tag_sigma_m`` is the 2-D placement error of a marker when the marked-out
    footprint is ``tag_reference_fov_m`` wide. Placement error is taken to grow
    in proportion to the surveyed span (markers laid out with tape over a
    footprint k times larger carry k times the error). Set
    ``tag_reference_fov_m=None`` to apply ``tag_sigma_m`` as an absolute error.
    """

    setup: CameraSetup = field(default_factory=CameraSetup)
    tag_sigma_m: float = 0.10
    det_jitter_px: float = 3.0
    foot_sigma_m: float = 0.082
    trials: int = DEFAULT_TRIALS
    seed: int = 0
    tag_reference_fov_m: float | None = 5.0
    probes_per_side: int = 9

    def __post_init__(self):
        for name in ("tag_sigma_m", "det_jitter_px", "foot_sigma_m"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ValidationError(f"{name} must be >= 0, got {v}")
        if int(self.trials) != self.trials or self.trials < 1:
            raise ValidationError(f"trials must be a positive integer, got {self.trials}")
        if self.tag_reference_fov_m is not None and not self.tag_reference_fov_m > 0:
            raise ValidationError("tag_reference_fov_m must be > 0 or None")
        if self.probes_per_side < 1:
            raise ValidationError("probes_per_side must be >= 1")

    @property
    def effective_tag_sigma_m(self) -> float:
        if self.tag_reference_fov_m is None:
            return self.tag_sigma_m
        return self.tag_sigma_m * self.setup.fov_ground_m / self.tag_reference_fov_m

    def to_dict(self) -> dict:
        d = asdict(self)
        d["setup"] = self.setup.to_dict()
        return d


@dataclass(frozen=True)
class TemporalConfig:
    f_cam_hz: float = 30.0
    f_rss_hz: float = 10.0
    dt_align_s: float = 0.01
    speed_mps: float = 0.5

    def __post_init__(self):
        for name in ("f_cam_hz", "f_rss_hz"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValidationError(f"{name} must be > 0, got {v}")
        # a stationary receiver (speed 0) is allowed and gives zero error
        for name in ("dt_align_s", "speed_mps"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ValidationError(f"{name} must be >= 0, got {v}")


@dataclass(frozen=True)
class UncertaintyBudget:
    sigma_px_m: float = 0.0
    sigma_tag_m: float = 0.0
    sigma_det_m: float = 0.0
    sigma_foot_m: float = 0.0
    sigma_t_m: float = 0.0
    eps_temp_m: float = 0.0
    sigma_label_m: float = 0.0

    @classmethod
    def from_components(cls, sigma_px_m, sigma_tag_m, sigma_det_m, sigma_foot_m, eps_temp_m=0.0):
        comps = (sigma_px_m, sigma_tag_m, sigma_det_m, sigma_foot_m, eps_temp_m)
        if any(not (math.isfinite(c) and c >= 0) for c in comps):
            raise ValidationError(f"budget components must be finite and >= 0, got {comps}")
        sigma_t = root_sum_square(sigma_px_m, sigma_tag_m, sigma_det_m, sigma_foot_m)
        return cls(
            sigma_px_m=float(sigma_px_m),
            sigma_tag_m=float(sigma_tag_m),
            sigma_det_m=float(sigma_det_m),
            sigma_foot_m=float(sigma_foot_m),
            sigma_t_m=sigma_t,
            eps_temp_m=float(eps_temp_m),
            sigma_label_m=root_sum_square(sigma_t, eps_temp_m),
        )

    def with_temporal(self, eps_temp_m: float) -> "UncertaintyBudget":
        return replace(self, eps_temp_m=float(eps_temp_m), sigma_label_m=label_uncertainty(self, eps_temp_m))

    def to_dict(self) -> dict:
        return asdict(self)


def root_sum_square(*values: float) -> float:
    # math.hypot is correctly rounded-ish and overflow safe
    return float(math.hypot(*values))


def sigma_px(setup: CameraSetup) -> float:
    """Pixel quantization term: half the ground pitch of one pixel."""
    return pixel_pitch(setup) / 2.0


def sigma_det(cfg: SpatialErrorConfig) -> float:
    return cfg.det_jitter_px * pixel_pitch(cfg.setup)


def _tag_trial_errors(cfg: SpatialErrorConfig, start: int, stop: int):
    """Mean squared probe displacement for trials ``start..stop-1``.

    Returns (array of per-trial values, NaN for discarded trials).
    """
    setup = cfg.setup
    markers = setup.markers
    h_true = ideal_homography(setup)
    pix = world_to_pixel(h_true, markers)
    probes = probe_grid(setup, cfg.probes_per_side)
    truth = probes * (setup.fov_ground_m / setup.resolution_px)
    per_axis = cfg.effective_tag_sigma_m / math.sqrt(2.0)

    # pixel-side normalization is shared by every trial
    t_pix = isotropic_normalization(pix)
    pix_n = pix @ t_pix[:2, :2].T + t_pix[:2, 2]
    probes_n = probes @ t_pix[:2, :2].T + t_pix[:2, 2]
    probes_h = np.column_stack([probes_n, np.ones(len(probes))])

    n = stop - start
    out = np.empty(n)
    design = np.empty((n, 2 * len(markers), 9))
    t_worlds = np.empty((n, 3, 3))
    for i in range(n):
        rng = derive_rng(cfg.seed, "sigma_tag", start + i)
        world = markers + rng.normal(0.0, per_axis, size=markers.shape)
        t_w = isotropic_normalization(world)
        world_n = world @ t_w[:2, :2].T + t_w[:2, 2]
        design[i] = _dlt_rows(world_n, pix_n)
        t_worlds[i] = t_w
    _, s, vt = np.linalg.svd(design)
    for i in range(n):
        if s[i, -2] < DEGENERACY_TOL * s[i, 0]:
            out[i] = np.nan
            continue
        hn = vt[i, -1].reshape(3, 3)
        q = np.linalg.solve(hn, probes_h.T).T
        q = q[:, :2] / q[:, 2:]
        t_w = t_worlds[i]
        world_est = (q - t_w[:2, 2]) / t_w[0, 0]
        out[i] = np.mean(np.sum((world_est - truth) ** 2, axis=1))
    return out


def _chunk_job(args):
    cfg, start, stop = args
    return _tag_trial_errors(cfg, start, stop)


def sigma_tag_mc(cfg: SpatialErrorConfig, workers: int = 1) -> float:
    """Monte-Carlo RMS ground displacement caused by marker misplacement.

    Bit-identical for a given config regardless of ``workers``.

    Raises:
        DegenerateConfiguration: more than 1% of trials had to be discarded.
    """
    if cfg.effective_tag_sigma_m == 0.0:
        return 0.0
    bounds = [(s, min(s + CHUNK, cfg.trials)) for s in range(0, cfg.trials, CHUNK)]
    jobs = [(cfg, a, b) for a, b in bounds]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_chunk_job, jobs))
    else:
        parts = [_chunk_job(j) for j in jobs]
    per_trial = np.concatenate(parts)
    bad = np.isnan(per_trial)
    if bad.any():
        logger.warning("sigma_tag: discarded %d/%d degenerate trials", bad.sum(), cfg.trials)
        if bad.mean() > MAX_DISCARD_RATE:
            raise DegenerateConfiguration(
                f"{bad.sum()} of {cfg.trials} trials degenerate (limit {MAX_DISCARD_RATE:.0%})"
            )
    return float(np.sqrt(np.mean(per_trial[~bad])))


def spatial_budget(cfg: SpatialErrorConfig, workers: int = 1) -> UncertaintyBudget:
    return UncertaintyBudget.from_components(
        sigma_px(cfg.setup), sigma_tag_mc(cfg, workers=workers), sigma_det(cfg), cfg.foot_sigma_m
    )


def temporal_error(cfg: TemporalConfig) -> tuple[float, float]:
    """Worst-case stream misalignment and the position error it induces.

    Returns:
        (dt_s, eps_temp_m) with ``dt_s = max(1/f_cam, 1/f_rss, dt_align)``.
    """
    dt = max(1.0 / cfg.f_cam_hz, 1.0 / cfg.f_rss_hz, cfg.dt_align_s)
    return dt, cfg.speed_mps * dt


def label_uncertainty(spatial: UncertaintyBudget, eps_temp_m: float) -> float:
    if spatial.sigma_t_m < 0 or eps_temp_m < 0:
        raise ValidationError("inputs must be >= 0")
    return root_sum_square(spatial.sigma_t_m, eps_temp_m)


def corrupt_labels(truth, budget: UncertaintyBudget | float, seed: int) -> np.ndarray:
    """Add isotropic Gaussian label noise whose 2-D RMS is ``sigma_label``."""
    sigma = budget.sigma_label_m if isinstance(budget, UncertaintyBudget) else float(budget)
    if not math.isfinite(sigma) or sigma < 0:
        raise ValidationError(f"sigma_label must be finite and >= 0, got {sigma}")
    pts = np.asarray(truth, dtype=float).reshape(-1, 2)
    if sigma == 0.0:
        return pts.copy()
    rng = derive_rng(seed, "label_noise")
    return pts + rng.normal(0.0, sigma / math.sqrt(2.0), size=pts.shape)


# -- Table-1 style reporting --------------------------------------------------

TABLE_COLUMNS = ("sigma_px_m", "sigma_tag_m", "sigma_det_m", "sigma_foot_m", "sigma_t_m")
TABLE_HEADERS = ("sigma_px", "sigma_tag", "sigma_det", "sigma_foot", "sigma_t")


def format_budget_table(rows: list[tuple[str, UncertaintyBudget]], temporal: bool = False) -> str:
    cols = list(TABLE_COLUMNS)
    heads = list(TABLE_HEADERS)
    if temporal:
        cols += ["eps_temp_m", "sigma_label_m"]
        heads += ["eps_temp", "sigma_label"]
    name_w = max([len("Scenario")] + [len(n) for n, _ in rows])
    widths = [max(len(h), 7) for h in heads]
    lines = [
        "  ".join(["Scenario".ljust(name_w)] + [h.rjust(w) for h, w in zip(heads, widths)]),
        "  ".join(["".ljust(name_w)] + ["[m]".rjust(w) for w in widths]),
    ]
    for name, b in rows:
        vals = [f"{getattr(b, c):.4f}" for c in cols]
        lines.append("  ".join([name.ljust(name_w)] + [v.rjust(w) for v, w in zip(vals, widths)]))
    return "\n".join(lines) + "\n"


def paper_scenarios(trials: int = DEFAULT_TRIALS, seed: int = 0) -> list[tuple[str, SpatialErrorConfig]]:
    """The base installation and the two enlarged-footprint variants."""
    base = CameraSetup(height_m=3.0, fov_ground_m=5.0, resolution_px=1080)
    large = CameraSetup(height_m=15.0, fov_ground_m=25.0, resolution_px=1080)
    return [
        ("Base (5 m FoV, 10 cm tags)", SpatialErrorConfig(setup=base, tag_sigma_m=0.10, trials=trials, seed=seed)),
        ("Large FoV (25 m, 10 cm tags)", SpatialErrorConfig(setup=large, tag_sigma_m=0.10, trials=trials, seed=seed)),
        ("Large FoV (25 m, 30 cm tags)", SpatialErrorConfig(setup=large, tag_sigma_m=0.30, trials=trials, seed=seed)),
    ]
