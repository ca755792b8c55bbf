"""Command-line entry point: ``rsslab <subcommand> [options]``.

Settings come from built-in defaults, then a JSON config file (``--config``
or the ``RSSLAB_CONFIG`` environment variable), then command-line flags.
Every run writes the fully resolved settings to ``resolved_config.json`` in
its output directory.

Exit codes: 0 success, 1 usage error, 2 data or validation error.
"""
from __future__ import annotations

import argparse
import copy
import io
import json
import logging
import os
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .bench import BenchConfig, format_report, r2_dataset, run as run_bench, write_report
from .dataio import (
    ModelArtifact,
    atomic_write_bytes,
    atomic_write_text,
    convert_recording,
    dump_json,
    load_model,
    read_dataset,
    save_model,
    write_recording,
)
from .errors import RssLabError, ValidationError
from .geometry import CameraSetup
from .models import (
    CnnModel,
    FingerprintDb,
    TrainConfig,
    cnn_forward,
    evaluate,
    knn_interp_predict,
    knn_predict,
    train_cnn,
)
from .preprocess import Normalizer, SplitSpec, WindowSet, split, split_indices, windows_from_recordings
from .synth import DEFAULT_RECORDINGS, SignalModel, TrajectorySpec, default_dataset
from .uncertainty import (
    SpatialErrorConfig,
    TemporalConfig,
    format_budget_table,
    paper_scenarios,
    spatial_budget,
    temporal_error,
)

log = logging.getLogger("rsslab")
CONFIG_ENV = "RSSLAB_CONFIG"
SNAPSHOT = "resolved_config.json"


class UsageError(Exception):
    pass


# -- configuration -----------------------------------------------------------------


def default_config() -> dict:
    sp = SpatialErrorConfig()
    return {
        "seed": 0,
        "out_dir": "rsslab_out",
        "verbosity": 0,
        "workers": 1,
        "uncertainty": {
            # "paper": base row plus the two 25 m rows; "single": only the setup below
            "scenarios": "paper",
            "camera": {k: v for k, v in sp.setup.to_dict().items() if k != "marker_world_positions"},
            "tag_sigma_m": sp.tag_sigma_m,
            "det_jitter_px": sp.det_jitter_px,
            "foot_sigma_m": sp.foot_sigma_m,
            "trials": sp.trials,
            "tag_reference_fov_m": sp.tag_reference_fov_m,
            "probes_per_side": sp.probes_per_side,
            "temporal": asdict(TemporalConfig()),
        },
        "synth": {
            "signal": asdict(SignalModel()),
            "trajectory": {**asdict(TrajectorySpec()), "pattern": TrajectorySpec().pattern.value},
            "recordings": [list(r) for r in DEFAULT_RECORDINGS],
        },
        "preprocess": {
            "window_len": 50,
            "stride": 1,
            "filter_n": None,
            "split": {"mode": "random_fraction", "train_fraction": 0.75, "holdout_recording": None},
        },
        "train": {
            "model": "cnn",
            "k": 5,
            "m_interp": 3,
            "eps_d": 1e-9,
            "cnn": TrainConfig().to_dict(),
        },
        "bench": BenchConfig().to_dict(),
    }


# sections whose values are free-form lists/dicts rather than nested settings
_LEAVES = {("synth", "recordings"), ("uncertainty", "camera", "marker_world_positions"),
           ("bench", "fractions"), ("bench", "seeds")}


def merge_config(base: dict, override: dict, path=()) -> dict:
    """Recursive merge; keys not present in ``base`` are rejected."""
    out = copy.deepcopy(base)
    for k, v in override.items():
        where = ".".join(path + (k,))
        if k not in base and not (path == ("uncertainty", "camera") and k == "marker_world_positions"):
            raise ValidationError(f"unknown config key {where!r}")
        if isinstance(base.get(k), dict) and (*path, k) not in _LEAVES:
            if not isinstance(v, dict):
                raise ValidationError(f"config key {where!r} must be an object")
            out[k] = merge_config(base[k], v, path + (k,))
        else:
            out[k] = v
    return out


def load_config_file(path) -> dict:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"config file not found: {p}")
    try:
        data = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ValidationError(f"{p}: line {e.lineno} column {e.colno}: {e.msg}") from None
    if not isinstance(data, dict):
        raise ValidationError(f"{p}: top level must be a JSON object")
    return data


def resolve_config(args: argparse.Namespace) -> dict:
    cfg = default_config()
    path = args.config or os.environ.get(CONFIG_ENV)
    if path:
        cfg = merge_config(cfg, load_config_file(path))
    # flags win over the file
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.out is not None:
        cfg["out_dir"] = args.out
    if args.workers is not None:
        cfg["workers"] = args.workers
    if args.verbose:
        cfg["verbosity"] = args.verbose
    cmd = args.command
    if cmd == "simulate-uncertainty":
        if args.trials is not None:
            cfg["uncertainty"]["trials"] = args.trials
        if args.scenarios is not None:
            cfg["uncertainty"]["scenarios"] = args.scenarios
    if cmd in ("preprocess", "train", "bench") and args.window_len is not None:
        cfg["preprocess"]["window_len"] = args.window_len
        cfg["bench"]["window_len"] = args.window_len
    if cmd in ("preprocess", "train"):
        if args.stride is not None:
            cfg["preprocess"]["stride"] = args.stride
        sp = cfg["preprocess"]["split"]
        for flag, key in (("split_mode", "mode"), ("train_fraction", "train_fraction"), ("holdout", "holdout_recording")):
            if getattr(args, flag) is not None:
                sp[key] = getattr(args, flag)
    if cmd == "train":
        if args.model is not None:
            cfg["train"]["model"] = args.model
        if args.epochs is not None:
            cfg["train"]["cnn"]["epochs"] = args.epochs
    if cmd == "bench" and args.steps is not None:
        cfg["bench"]["train_steps"] = args.steps
    if int(cfg["workers"]) < 1:
        raise ValidationError("workers must be >= 1")
    return cfg


def write_snapshot(cfg: dict, out: Path, command: str, extra: dict | None = None) -> None:
    snap = {"command": command, "version": __version__, "config": cfg}
    if extra:
        snap.update(extra)
    atomic_write_text(out / SNAPSHOT, dump_json(snap))


# -- builders from config sections ----------------------------------------------------


def _spatial_configs(u: dict, seed: int) -> list[tuple[str, SpatialErrorConfig]]:
    if u["scenarios"] == "paper":
        out = []
        for name, c in paper_scenarios(int(u["trials"]), seed):
            out.append((name, SpatialErrorConfig(
                setup=c.setup, tag_sigma_m=c.tag_sigma_m, det_jitter_px=float(u["det_jitter_px"]),
                foot_sigma_m=float(u["foot_sigma_m"]), trials=int(u["trials"]), seed=seed,
                tag_reference_fov_m=u["tag_reference_fov_m"], probes_per_side=int(u["probes_per_side"]))))
        return out
    if u["scenarios"] != "single":
        raise ValidationError(f"uncertainty.scenarios must be 'paper' or 'single', got {u['scenarios']!r}")
    setup = CameraSetup.from_dict(u["camera"])
    name = f"{setup.fov_ground_m:g} m FoV, {setup.height_m:g} m height"
    return [(name, SpatialErrorConfig(
        setup=setup, tag_sigma_m=float(u["tag_sigma_m"]), det_jitter_px=float(u["det_jitter_px"]),
        foot_sigma_m=float(u["foot_sigma_m"]), trials=int(u["trials"]), seed=seed,
        tag_reference_fov_m=u["tag_reference_fov_m"], probes_per_side=int(u["probes_per_side"])))]


def _synth_dataset(cfg: dict):
    s = cfg["synth"]
    recs = [tuple(r) for r in s["recordings"]]
    for r in recs:
        if len(r) != 3:
            raise ValidationError(f"synth.recordings entries must be [name, samples, receiver], got {list(r)}")
    return default_dataset(int(cfg["seed"]), SignalModel(**s["signal"]), TrajectorySpec(**s["trajectory"]),
                           recordings=recs)


def _windows(recs, cfg: dict) -> WindowSet:
    p = cfg["preprocess"]
    return windows_from_recordings(recs, int(p["window_len"]), int(p["stride"]), p["filter_n"])


def _split_spec(cfg: dict) -> SplitSpec:
    sp = cfg["preprocess"]["split"]
    return SplitSpec(mode=sp["mode"], train_fraction=float(sp["train_fraction"]),
                     holdout_recording=sp["holdout_recording"], seed=int(cfg["seed"]))


def _npy_bytes(a: np.ndarray) -> bytes:
    buf = io.BytesIO()
    np.save(buf, a, allow_pickle=False)
    return buf.getvalue()


# -- subcommands ---------------------------------------------------------------------------


def cmd_simulate_uncertainty(args, cfg: dict, out: Path) -> int:
    u = cfg["uncertainty"]
    seed = int(cfg["seed"])
    dt, eps = temporal_error(TemporalConfig(**u["temporal"]))
    rows, budgets = [], []
    for name, sc in _spatial_configs(u, seed):
        b = spatial_budget(sc, workers=int(cfg["workers"])).with_temporal(eps)
        rows.append((name, b))
        budgets.append({"scenario": name, "config": sc.to_dict(), "budget": b.to_dict()})
    table = format_budget_table(rows, temporal=True)
    report = {"temporal": {"dt_s": dt, "eps_temp_m": eps}, "scenarios": budgets}
    atomic_write_text(out / "uncertainty_table.txt", table)
    atomic_write_text(out / "uncertainty_budget.json", dump_json(report))
    write_snapshot(cfg, out, args.command)
    sys.stdout.write(table)
    sys.stdout.write(f"dt = {dt:.4f} s, eps_temp = {eps:.4f} m\n")
    return 0


def cmd_gen_synth(args, cfg: dict, out: Path) -> int:
    recs = _synth_dataset(cfg)
    for r in recs:
        write_recording(r, out / f"{r.name}.csv")
    write_snapshot(cfg, out, args.command)
    print(f"wrote {len(recs)} recordings to {out}")
    return 0


def cmd_convert(args, cfg: dict, out: Path) -> int:
    mapping = load_config_file(args.map)
    src = Path(args.src)
    if not src.is_file():
        raise FileNotFoundError(f"input file not found: {src}")
    name = args.name or src.stem
    rec = convert_recording(src, mapping, out / f"{name}.csv", name=name, receiver_id=args.receiver)
    write_snapshot(cfg, out, args.command, {"source": str(src), "column_map": mapping})
    print(f"converted {len(rec)} rows from {src} to {out / (name + '.csv')}")
    return 0


def cmd_preprocess(args, cfg: dict, out: Path) -> int:
    recs = read_dataset(args.data)
    ws = _windows(recs, cfg)
    tr, te = split_indices(ws.source, _split_spec(cfg))
    norm = Normalizer.fit(ws.subset(tr)) if len(tr) else None
    arrays = {"X": ws.X, "y": ws.y, "t_center": ws.t_center, "raw_rss": ws.raw_rss,
              "source": ws.source.astype(str), "train_idx": tr, "test_idx": te}
    for name, a in arrays.items():
        atomic_write_bytes(out / f"{name}.npy", _npy_bytes(a))
    manifest = {"num_windows": len(ws), "ap_ids": list(ws.ap_ids), "window_len": ws.window_len,
                "split": {**cfg["preprocess"]["split"], "seed": int(cfg["seed"]), "n_train": len(tr), "n_test": len(te)},
                "normalization": None if norm is None else norm.to_dict(),
                "note": "X and y are unnormalized; apply the train-split normalization before training",
                "recordings": sorted({str(s) for s in ws.source}),
                "arrays": {k: {"file": f"{k}.npy", "shape": list(v.shape), "dtype": v.dtype.str}
                           for k, v in arrays.items()}}
    atomic_write_text(out / "manifest.json", dump_json(manifest))
    write_snapshot(cfg, out, args.command, {"data": str(args.data)})
    print(f"wrote {len(ws)} windows to {out}")
    return 0


def cmd_train(args, cfg: dict, out: Path) -> int:
    recs = read_dataset(args.data)
    ws = _windows(recs, cfg)
    spec = _split_spec(cfg)
    tr, _ = split(ws, spec)
    if len(tr) == 0:
        raise ValidationError("training split is empty")
    t = cfg["train"]
    kind = t["model"]
    p = cfg["preprocess"]
    hyper = {"window_len": int(p["window_len"]), "stride": int(p["stride"]), "filter_n": p["filter_n"],
             "ap_ids": list(ws.ap_ids), "split": {**cfg["preprocess"]["split"], "seed": int(cfg["seed"])}}
    summary = {"model": kind, "n_train": len(tr)}
    t0 = time.perf_counter()
    if kind == "cnn":
        tcfg = TrainConfig(**{**t["cnn"], "seed": int(cfg["seed"])})
        norm = Normalizer.fit(tr)
        res = train_cnn(norm.transform(tr).X, norm.scale_positions(tr.y), tcfg)
        art = ModelArtifact("cnn", {**hyper, "train": tcfg.to_dict()}, res.model.payload(), norm.to_dict())
        summary["loss_history"] = res.history
    elif kind in ("knn", "knn_interp"):
        k = int(t["k"]) if kind == "knn" else max(int(t["k"]), int(t["m_interp"]))
        db = FingerprintDb(tr.raw_rss, tr.y, k=k, m_interp=int(t["m_interp"]), eps_d=float(t["eps_d"]))
        art = ModelArtifact(kind, {**hyper, "k": db.k, "m_interp": db.m_interp, "eps_d": db.eps_d},
                            {"rss": db.rss, "positions": db.positions}, {})
    else:
        raise ValidationError(f"train.model must be cnn, knn or knn_interp, got {kind!r}")
    if not args.deterministic:
        summary["train_time_s"] = time.perf_counter() - t0
    save_model(art, out / "model.rsslab")
    atomic_write_text(out / "train_summary.json", dump_json(summary))
    write_snapshot(cfg, out, args.command, {"data": str(args.data)})
    print(f"trained {kind} on {len(tr)} windows -> {out / 'model.rsslab'}")
    return 0


def predict_artifact(art: ModelArtifact, ws: WindowSet) -> np.ndarray:
    h = art.hyperparameters
    if list(ws.ap_ids) != list(h["ap_ids"]):
        raise ValidationError(f"data AP ids {list(ws.ap_ids)} do not match the model's {h['ap_ids']}")
    if art.kind == "cnn":
        model = CnnModel.from_payload(art.payload)
        norm = Normalizer.from_dict(art.normalization)
        return norm.unscale_positions(cnn_forward(model, norm.transform(ws).X))
    db = FingerprintDb(art.payload["rss"], art.payload["positions"], k=int(h["k"]),
                       m_interp=int(h["m_interp"]), eps_d=float(h["eps_d"]))
    return knn_predict(db, ws.raw_rss) if art.kind == "knn" else knn_interp_predict(db, ws.raw_rss)


def cmd_eval(args, cfg: dict, out: Path) -> int:
    art = load_model(args.model)
    h = art.hyperparameters
    recs = read_dataset(args.data)
    ws = windows_from_recordings(recs, int(h["window_len"]), int(h["stride"]), h["filter_n"])
    if args.subset == "test":
        sp = h["split"]
        _, ws = split(ws, SplitSpec(mode=sp["mode"], train_fraction=float(sp["train_fraction"]),
                                    holdout_recording=sp["holdout_recording"], seed=int(sp["seed"])))
    if len(ws) == 0:
        raise ValidationError("evaluation set is empty")
    pred = predict_artifact(art, ws)
    overall = evaluate(pred, ws.y).to_dict()
    overall.pop("errors", None)
    per_rec = {}
    for name in dict.fromkeys(str(s) for s in ws.source):
        m = ws.source == name
        d = evaluate(pred[m], ws.y[m]).to_dict()
        d.pop("errors", None)
        per_rec[name] = d
    metrics = {"model": art.kind, "subset": args.subset, "n": len(ws), "overall": overall, "per_recording": per_rec}
    atomic_write_text(out / "metrics.json", dump_json(metrics))
    write_snapshot(cfg, out, args.command, {"model": str(args.model), "data": str(args.data), "subset": args.subset})
    print(f"{art.kind}: mean L2 {overall['mean_l2_m']:.3f} m +- {overall['std_l2_m']:.3f} over {len(ws)} windows")
    return 0


def cmd_bench(args, cfg: dict, out: Path) -> int:
    bcfg = BenchConfig.from_dict({**cfg["bench"], "seeds": tuple(cfg["bench"]["seeds"]),
                                  "fractions": tuple(cfg["bench"]["fractions"])})
    if args.data is not None:
        recs = read_dataset(args.data)
    elif args.run == "r2":
        recs = r2_dataset(int(cfg["seed"]))
    else:
        recs = _synth_dataset(cfg)
    report = run_bench(args.run, recs, bcfg, workers=int(cfg["workers"]))
    write_report(report, out, deterministic=args.deterministic)
    write_snapshot(cfg, out, args.command, {"run": args.run, "data": None if args.data is None else str(args.data)})
    sys.stdout.write(format_report(report))
    return 0


COMMANDS = {
    "simulate-uncertainty": cmd_simulate_uncertainty,
    "gen-synth": cmd_gen_synth,
    "convert": cmd_convert,
    "preprocess": cmd_preprocess,
    "train": cmd_train,
    "eval": cmd_eval,
    "bench": cmd_bench,
}


# -- argument parsing ---------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help=f"JSON config file (default: ${CONFIG_ENV} if set)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int, help="global seed")
    common.add_argument("--workers", type=int, help="worker processes for parallel jobs")
    common.add_argument("--deterministic", action="store_true", help="omit wall-clock fields from outputs")
    common.add_argument("-v", "--verbose", action="count", default=0)

    p = _Parser(prog="rsslab", description="Camera-labelled RSS localization toolkit.")
    p.add_argument("--version", action="version", version=f"rsslab {__version__}")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("simulate-uncertainty", parents=[common], help="label-uncertainty budget table")
    s.add_argument("--trials", type=int, help="Monte-Carlo trials per scenario")
    s.add_argument("--scenarios", choices=["paper", "single"])

    sub.add_parser("gen-synth", parents=[common], help="write a synthetic dataset")

    s = sub.add_parser("convert", parents=[common], help="convert a foreign CSV to the canonical layout")
    s.add_argument("src")
    s.add_argument("--map", required=True, help="JSON column map")
    s.add_argument("--name")
    s.add_argument("--receiver")

    windowing = argparse.ArgumentParser(add_help=False)
    windowing.add_argument("--data", required=True, help="recording directory")
    windowing.add_argument("--window-len", type=int)
    windowing.add_argument("--stride", type=int)
    windowing.add_argument("--split-mode", choices=["random_fraction", "leave_one_recording_out"])
    windowing.add_argument("--train-fraction", type=float)
    windowing.add_argument("--holdout", help="recording held out in leave_one_recording_out mode")

    sub.add_parser("preprocess", parents=[common, windowing], help="window a dataset into .npy arrays")

    s = sub.add_parser("train", parents=[common, windowing], help="fit a model and save its artifact")
    s.add_argument("--model", choices=["cnn", "knn", "knn_interp"])
    s.add_argument("--epochs", type=int)

    s = sub.add_parser("eval", parents=[common], help="score a saved model")
    s.add_argument("--model", required=True, help="model artifact path")
    s.add_argument("--data", required=True)
    s.add_argument("--subset", choices=["test", "all"], default="test")

    s = sub.add_parser("bench", parents=[common], help="run an evaluation (r1, r2, r3)")
    s.add_argument("--run", required=True, choices=["r1", "r2", "r3"])
    s.add_argument("--data", help="recording directory (default: synthetic)")
    s.add_argument("--steps", type=int, help="gradient steps per training run")
    s.add_argument("--window-len", type=int)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(e, file=sys.stderr)
        return 1
    except SystemExit as e:  # --help / --version
        return 0 if e.code in (0, None) else 1
    if args.command is None:
        parser.print_help(sys.stderr)
        return 1
    try:
        cfg = resolve_config(args)
        logging.basicConfig(level=logging.WARNING - 10 * min(int(cfg["verbosity"]), 2),
                            format="%(levelname)s %(name)s: %(message)s")
        out = Path(cfg["out_dir"])
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](args, cfg, out)
    except (RssLabError, ValueError, TypeError, KeyError, OSError) as e:
        msg = str(e) if not isinstance(e, KeyError) else f"missing key {e}"
        print(f"rsslab {args.command}: error: {msg}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
