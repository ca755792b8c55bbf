"""Evaluation runs.

r1  data efficiency: CNN error vs. number of labelled windows (random splits)
r2  leave-one-recording-out generalization with per-axis errors
r3  kNN vs kNN+interp vs CNN on a common split, per recording

Every run returns a BenchReport whose ``config`` block (plus the dataset
fingerprints it records) is enough to re-run it bit-identically.
"""
from __future__ import annotations

import hashlib
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .dataio import Recording, atomic_write_text, dump_json, recording_csv_text
from .errors import ValidationError
from .models import (
    FingerprintDb,
    TrainConfig,
    cnn_forward,
    evaluate,
    knn_interp_predict,
    knn_predict,
    train_cnn,
)
from .preprocess import Normalizer, SplitMode, SplitSpec, WindowSet, split, windows_from_recordings
from .seeding import derive_seed
from .synth import (
    DEFAULT_RECORDINGS,
    REGION,
    AccessPoint,
    Pattern,
    SignalModel,
    TrajectorySpec,
    default_budget,
    default_receivers,
    generate_recording,
)

RUNS = ("r1", "r2", "r3")
DEFAULT_FRACTIONS = (0.05, 0.1, 0.25, 0.5, 0.75, 0.95)
# bench training defaults: cosine-annealed Adam on a fixed step budget
BENCH_TRAIN = TrainConfig(epochs=300, batch_size=32, learning_rate=1e-2, lr_schedule="cosine")


@dataclass(frozen=True)
class BenchConfig:
    window_len: int = 50
    stride: int = 1
    filter_n: int | None = None
    fractions: tuple = DEFAULT_FRACTIONS
    seeds: tuple = (0, 1, 2)
    train: TrainConfig = BENCH_TRAIN
    # gradient steps per training run; epochs = ceil(steps / batches per epoch).
    # None trains for train.epochs regardless of set size.
    train_steps: int | None = 6000
    r3_train_fraction: float = 0.75
    knn_k: int = 1
    interp_m: int = 3
    single_precision: bool = False

    def __post_init__(self):
        object.__setattr__(self, "fractions", tuple(float(f) for f in self.fractions))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if isinstance(self.train, dict):
            object.__setattr__(self, "train", TrainConfig(**self.train))
        if not self.fractions or not all(0.0 < f < 1.0 for f in self.fractions):
            raise ValidationError("fractions must be a non-empty subset of (0, 1)")
        if not self.seeds:
            raise ValidationError("need at least one seed")
        if self.train_steps is not None and self.train_steps < 1:
            raise ValidationError("train_steps must be >= 1")
        if self.window_len < 1 or self.stride < 1:
            raise ValidationError("window_len and stride must be >= 1")
        if not 0.0 < self.r3_train_fraction < 1.0:
            raise ValidationError("r3_train_fraction must lie in (0, 1)")
        if self.knn_k < 1 or self.interp_m < 1:
            raise ValidationError("knn_k and interp_m must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["fractions"] = list(self.fractions)
        d["seeds"] = list(self.seeds)
        d["train"] = self.train.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "BenchConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ValidationError(f"unknown bench config keys: {sorted(extra)}")
        d = dict(d)
        if isinstance(d.get("train"), dict):
            unknown = set(d["train"]) - set(TrainConfig.__dataclass_fields__)
            if unknown:
                raise ValidationError(f"unknown train config keys: {sorted(unknown)}")
            d["train"] = TrainConfig(**d["train"])
        return cls(**d)


@dataclass
class BenchReport:
    run_id: str
    rows: list[dict]
    config: dict
    seeds: list[int]
    wall_time_s: float | None = None
    # plot-ready per-sample predictions: list of dicts with group, recording, x, y, x_pred, y_pred
    scatter: list[dict] = field(default_factory=list)

    def to_dict(self, deterministic: bool = False) -> dict:
        return {
            "run_id": self.run_id,
            "rows": self.rows,
            "config": self.config,
            "seeds": list(self.seeds),
            "wall_time_s": None if deterministic else self.wall_time_s,
        }


def dataset_fingerprint(recs: list[Recording]) -> list[dict]:
    return [{"name": r.name, "rows": len(r), "receiver_id": r.receiver_id,
             "sha256": hashlib.sha256(recording_csv_text(r).encode()).hexdigest()} for r in recs]


# -- shared pieces ---------------------------------------------------------------------


def _train_for(cfg: BenchConfig, n_train: int, seed: int) -> TrainConfig:
    epochs = cfg.train.epochs
    if cfg.train_steps is not None:
        epochs = max(1, math.ceil(cfg.train_steps / math.ceil(n_train / cfg.train.batch_size)))
    return TrainConfig(**{**cfg.train.to_dict(), "epochs": epochs, "seed": seed})


def fit_cnn(train_ws: WindowSet, cfg: BenchConfig, seed: int):
    """Normalize, train, and return (model, normalizer, train config)."""
    norm = Normalizer.fit(train_ws)
    tn = norm.transform(train_ws)
    tcfg = _train_for(cfg, len(tn), seed)
    res = train_cnn(tn.X, tn.y, tcfg)
    return res.model, norm, tcfg


def predict_cnn(model, norm: Normalizer, ws: WindowSet, single_precision: bool = False) -> np.ndarray:
    return norm.unscale_positions(cnn_forward(model, norm.transform(ws).X, single_precision))


def _stats(pred: np.ndarray, truth: np.ndarray) -> dict:
    e = evaluate(pred, truth)
    return {"n": len(truth), "mean_l2_m": e.mean_l2_m, "std_l2_m": e.std_l2_m,
            "mae_x_m": float(e.per_axis_mae_m[0]), "mae_y_m": float(e.per_axis_mae_m[1])}


def _scatter(group: str, ws: WindowSet, pred: np.ndarray) -> list[dict]:
    return [{"group": group, "recording": str(s), "x": float(t[0]), "y": float(t[1]),
             "x_pred": float(p[0]), "y_pred": float(p[1])} for s, t, p in zip(ws.source, ws.y, pred)]


def _windows(recs: list[Recording], cfg: BenchConfig) -> WindowSet:
    if not recs:
        raise ValidationError("dataset is empty")
    return windows_from_recordings(recs, cfg.window_len, cfg.stride, cfg.filter_n)


def _run_jobs(fn, jobs: list, workers: int) -> list:
    if workers <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, jobs))


def _snapshot(cfg: BenchConfig, recs: list[Recording], **extra) -> dict:
    return {"bench": cfg.to_dict(), "dataset": dataset_fingerprint(recs), **extra}


# -- r1 ---------------------------------------------------------------------------------


def _r1_job(args):
    ws, cfg, fraction, seed = args
    tr, te = split(ws, SplitSpec(SplitMode.RANDOM_FRACTION, fraction, seed=seed))
    model, norm, _ = fit_cnn(tr, cfg, seed)
    pred = predict_cnn(model, norm, te, cfg.single_precision)
    return {"fraction": fraction, "seed": seed, "n_train": len(tr), **_stats(pred, te.y)}


def run_r1(recs: list[Recording], fractions=None, cfg: BenchConfig = BenchConfig(), workers: int = 1) -> BenchReport:
    """CNN error vs. train fraction, one training run per (fraction, seed).

    Rows hold, per fraction, the mean over seeds of the per-seed mean L2
    error and of its std; ``per_seed`` keeps the individual runs.
    """
    t0 = time.perf_counter()
    if fractions is not None:
        cfg = BenchConfig(**{**cfg.__dict__, "fractions": tuple(fractions)})
    ws = _windows(recs, cfg)
    jobs = [(ws, cfg, f, s) for f in cfg.fractions for s in cfg.seeds]
    results = _run_jobs(_r1_job, jobs, workers)
    rows = []
    for f in cfg.fractions:
        runs = [r for r in results if r["fraction"] == f]
        rows.append({
            "fraction": f,
            "n_train": runs[0]["n_train"],
            "mean_l2_m": float(np.mean([r["mean_l2_m"] for r in runs])),
            "std_l2_m": float(np.mean([r["std_l2_m"] for r in runs])),
            "seed_spread_m": float(np.std([r["mean_l2_m"] for r in runs])),
            "per_seed": [{k: r[k] for k in ("seed", "mean_l2_m", "std_l2_m")} for r in runs],
        })
    return BenchReport("r1", rows, _snapshot(cfg, recs), list(cfg.seeds), time.perf_counter() - t0)


def spearman(a, b) -> float:
    """Rank correlation (average ranks for ties)."""
    def ranks(v):
        v = np.asarray(v, dtype=float)
        order = np.argsort(v, kind="stable")
        r = np.empty(len(v))
        r[order] = np.arange(len(v), dtype=float)
        for val in np.unique(v):
            m = v == val
            r[m] = r[m].mean()
        return r
    ra, rb = ranks(a), ranks(b)
    if np.std(ra) == 0 or np.std(rb) == 0:
        return 0.0
    return float(np.corrcoef(ra, rb)[0, 1])


# -- r2 ---------------------------------------------------------------------------------


def _r2_job(args):
    ws, cfg, holdout = args
    seed = cfg.seeds[0]
    tr, te = split(ws, SplitSpec(SplitMode.LEAVE_ONE_RECORDING_OUT, holdout_recording=holdout))
    model, norm, _ = fit_cnn(tr, cfg, seed)
    pred = predict_cnn(model, norm, te, cfg.single_precision)
    train_pred = predict_cnn(model, norm, tr, cfg.single_precision)
    row = {"holdout": holdout, "n_train": len(tr), **_stats(pred, te.y),
           "train_mean_l2_m": evaluate(train_pred, tr.y).mean_l2_m}
    return row, _scatter(holdout, te, pred)


def run_r2(recs: list[Recording], cfg: BenchConfig = BenchConfig(), workers: int = 1) -> BenchReport:
    """One fold per recording: train on the rest, test on it."""
    t0 = time.perf_counter()
    names = [r.name for r in recs]
    if len(recs) < 2:
        raise ValidationError("leave-one-recording-out needs at least 2 recordings")
    if len(set(names)) != len(names):
        raise ValidationError(f"recording names must be unique, got {names}")
    ws = _windows(recs, cfg)
    out = _run_jobs(_r2_job, [(ws, cfg, n) for n in names], workers)
    rows = [r for r, _ in out]
    scatter = [p for _, s in out for p in s]
    return BenchReport("r2", rows, _snapshot(cfg, recs), [cfg.seeds[0]], time.perf_counter() - t0, scatter)


def r2_dataset(seed: int = 0) -> list[Recording]:
    """Recordings for the leave-one-recording-out run.

    Two APs sit just below the region and one just above it, all near the
    x centre, so path loss changes mostly with y. Each recording walks y-major
    legs with its own lane offset, so every held-out walk is on unseen lanes.
    """
    aps = [AccessPoint(id=f"AP{i + 1}", position=p, tx_power_dbm=-30.0,
                       multipath_seed=derive_seed(seed, "ap", i))
           for i, p in enumerate([(1.5, -1.0), (2.5, -1.0), (2.0, 7.0)])]
    model = SignalModel(noise_sigma_db=4.0)
    rxs = default_receivers()
    out = []
    for i, (name, count, rx_id) in enumerate(DEFAULT_RECORDINGS):
        spec = TrajectorySpec(region=REGION, pattern=Pattern.LAWNMOWER_Y_MAJOR, lane_spacing_m=0.5,
                              lane_offset_m=0.5 * i / len(DEFAULT_RECORDINGS), duration_s=count / 10.0)
        out.append(generate_recording(aps, model, spec, rxs[rx_id], default_budget(),
                                      derive_seed(seed, "recording", i), name=name))
    return out


# -- r3 ---------------------------------------------------------------------------------

METHODS = ("knn", "knn_interp", "cnn")


def run_r3(recs: list[Recording], cfg: BenchConfig = BenchConfig()) -> BenchReport:
    """Fit all three methods on one random split and score each recording's test windows."""
    t0 = time.perf_counter()
    seed = cfg.seeds[0]
    ws = _windows(recs, cfg)
    if len(ws) < 2:
        raise ValidationError("need at least 2 windows to split")
    tr, te = split(ws, SplitSpec(SplitMode.RANDOM_FRACTION, cfg.r3_train_fraction, seed=seed))
    if len(tr) == 0 or len(te) == 0:
        raise ValidationError("train/test split left one side empty")
    knn_db = FingerprintDb(tr.raw_rss, tr.y, k=min(cfg.knn_k, len(tr)), m_interp=1)
    m = min(cfg.interp_m, len(tr))
    interp_db = FingerprintDb(tr.raw_rss, tr.y, k=m, m_interp=m)
    model, norm, _ = fit_cnn(tr, cfg, seed)
    preds = {
        "knn": knn_predict(knn_db, te.raw_rss),
        "knn_interp": knn_interp_predict(interp_db, te.raw_rss),
        "cnn": predict_cnn(model, norm, te, cfg.single_precision),
    }
    rows, scatter = [], []
    for name in dict.fromkeys(str(s) for s in te.source):
        mask = te.source == name
        for method in METHODS:
            rows.append({"recording": name, "method": method, **_stats(preds[method][mask], te.y[mask])})
    for method in METHODS:
        scatter += _scatter(method, te, preds[method])
    return BenchReport("r3", rows, _snapshot(cfg, recs), [seed], time.perf_counter() - t0, scatter)


# -- output -------------------------------------------------------------------------------


def format_report(report: BenchReport) -> str:
    """Aligned text table."""
    if report.run_id == "r1":
        head = f"{'fraction':>8}  {'n_train':>7}  {'mean_l2_m':>9}  {'std_l2_m':>8}  {'seed_spread':>11}"
        lines = [head] + [
            f"{r['fraction']:8.2f}  {r['n_train']:7d}  {r['mean_l2_m']:9.3f}  {r['std_l2_m']:8.3f}  {r['seed_spread_m']:11.3f}"
            for r in report.rows]
    elif report.run_id == "r2":
        head = f"{'holdout':<10}  {'mean_l2_m':>9}  {'std_l2_m':>8}  {'mae_x_m':>7}  {'mae_y_m':>7}  {'train_l2_m':>10}"
        lines = [head] + [
            f"{r['holdout']:<10}  {r['mean_l2_m']:9.3f}  {r['std_l2_m']:8.3f}  {r['mae_x_m']:7.3f}  "
            f"{r['mae_y_m']:7.3f}  {r['train_mean_l2_m']:10.3f}" for r in report.rows]
    else:
        recs = list(dict.fromkeys(r["recording"] for r in report.rows))
        cell = {(r["recording"], r["method"]): f"{r['mean_l2_m']:.3f} +- {r['std_l2_m']:.3f}" for r in report.rows}
        head = f"{'recording':<10}" + "".join(f"  {m:>16}" for m in METHODS)
        lines = [head] + [f"{rec:<10}" + "".join(f"  {cell.get((rec, m), '-'):>16}" for m in METHODS)
                          for rec in recs]
    return "\n".join(lines) + "\n"


def _csv(header: list[str], rows: list[list]) -> str:
    def fmt(v):
        return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)
    return "\n".join([",".join(header)] + [",".join(fmt(v) for v in r) for r in rows]) + "\n"


def emit_plots(report: BenchReport, directory) -> list[Path]:
    """Write plot-ready CSV series for ``report`` into ``directory``."""
    if not report.rows:
        raise ValidationError("report has no rows to plot")
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    files = {}
    if report.run_id == "r1":
        files["r1_curve.csv"] = _csv(
            ["fraction", "n_train", "mean_l2_m", "std_l2_m", "lower_m", "upper_m"],
            [[r["fraction"], r["n_train"], r["mean_l2_m"], r["std_l2_m"],
              r["mean_l2_m"] - r["std_l2_m"], r["mean_l2_m"] + r["std_l2_m"]] for r in report.rows])
    elif report.run_id == "r2":
        files["r2_folds.csv"] = _csv(
            ["holdout", "mean_l2_m", "std_l2_m", "mae_x_m", "mae_y_m"],
            [[r["holdout"], r["mean_l2_m"], r["std_l2_m"], r["mae_x_m"], r["mae_y_m"]] for r in report.rows])
    elif report.run_id == "r3":
        files["r3_table.csv"] = _csv(
            ["recording", "method", "mean_l2_m", "std_l2_m"],
            [[r["recording"], r["method"], r["mean_l2_m"], r["std_l2_m"]] for r in report.rows])
    else:
        raise ValidationError(f"unknown run id {report.run_id!r}")
    if report.scatter:
        files[f"{report.run_id}_scatter.csv"] = _csv(
            ["group", "recording", "x", "y", "x_pred", "y_pred"],
            [[p["group"], p["recording"], p["x"], p["y"], p["x_pred"], p["y_pred"]] for p in report.scatter])
    out = []
    for name, text in files.items():
        atomic_write_text(d / name, text)
        out.append(d / name)
    return out


def write_report(report: BenchReport, directory, deterministic: bool = False) -> list[Path]:
    """JSON report, text table and plot CSVs."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    atomic_write_text(d / f"{report.run_id}_report.json", dump_json(report.to_dict(deterministic)))
    atomic_write_text(d / f"{report.run_id}_table.txt", format_report(report))
    return [d / f"{report.run_id}_report.json", d / f"{report.run_id}_table.txt"] + emit_plots(report, d)


def run(run_id: str, recs: list[Recording], cfg: BenchConfig = BenchConfig(), workers: int = 1) -> BenchReport:
    if run_id == "r1":
        return run_r1(recs, None, cfg, workers)
    if run_id == "r2":
        return run_r2(recs, cfg, workers)
    if run_id == "r3":
        return run_r3(recs, cfg)
    raise ValidationError(f"unknown run {run_id!r}; expected one of {RUNS}")
