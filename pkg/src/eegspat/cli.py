"""Command-line pipeline: synthesize, preprocess, train, evaluate, analyze,
and sweep.

Configuration precedence is command-line flags over the ``--config`` JSON
file over built-in defaults.  Every run writes ``run_config.json`` (the
resolved configuration plus its SHA-256 fingerprint) into its output
directory; identical fingerprints and seeds reproduce identical artifacts.
Outputs land under ``--out``, defaulting to ``$EEGSPAT_OUT_ROOT/<command>``.
"""

import argparse
import json
import os
import sys

import numpy as np

from . import analysis, featsel, preprocess, synthgen, viz
from .data import ContinuousRecording, EpochedDataset, load_events_csv, save_events_csv
from .errors import EegspatError, MissingInputError, UnknownModelError
from .fileio import atomic_write_text, write_csv
from .models import (
    BUILDERS,
    TrainConfig,
    TrainedModel,
    config_fingerprint,
    evaluate,
    train,
)

ANALYZE_KINDS = ("filters", "topo", "slope", "elastic", "rank", "diff")


def _default_out(command):
    root = os.environ.get("EEGSPAT_OUT_ROOT", ".")
    return os.path.join(root, command)


def _load_config_file(path):
    if path is None:
        return {}
    if not os.path.exists(path):
        raise MissingInputError(f"config file not found: {path}")
    with open(path) as fh:
        return json.load(fh)


def _resolve(flag_values: dict, file_values: dict, defaults: dict):
    """flags > config file > defaults, keyed by the default dict."""
    out = {}
    for key, default in defaults.items():
        if flag_values.get(key) is not None:
            out[key] = flag_values[key]
        elif key in file_values:
            out[key] = file_values[key]
        else:
            out[key] = default
    return out


def _write_run_config(out_dir, resolved):
    doc = dict(resolved)
    doc["fingerprint"] = config_fingerprint(resolved)
    atomic_write_text(
        os.path.join(out_dir, "run_config.json"),
        json.dumps(doc, indent=2, sort_keys=True),
    )
    return doc["fingerprint"]


def _require_file(path, what):
    if path is None or not os.path.exists(path):
        raise MissingInputError(f"{what} not found: {path}")
    return path


def _load_model(model_dir):
    _require_file(os.path.join(model_dir, "spec.json"), "model spec")
    _require_file(os.path.join(model_dir, "params.bin"), "model parameters")
    _require_file(os.path.join(model_dir, "meta.json"), "model metadata")
    return TrainedModel.load(model_dir)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_synth(args):
    file_cfg = _load_config_file(args.config)
    defaults = {
        f.name: getattr(synthgen.SynthConfig(), f.name)
        for f in synthgen.SynthConfig.__dataclass_fields__.values()
    }
    resolved = _resolve({"seed": args.seed}, file_cfg, defaults)
    for key in ("attention_window", "attention_ramp"):
        if isinstance(resolved.get(key), list):
            resolved[key] = tuple(resolved[key])
    resolved["window"] = tuple(resolved["window"])
    resolved["sensory_latencies"] = tuple(resolved["sensory_latencies"])
    resolved["sensory_polarities"] = tuple(resolved["sensory_polarities"])
    config = synthgen.SynthConfig(**resolved)
    out = args.out or _default_out("synth")
    os.makedirs(out, exist_ok=True)
    _write_run_config(out, {**resolved, "command": "synth", "continuous": args.continuous})
    if args.continuous:
        corrupt = [int(c) for c in args.corrupt_channels.split(",") if c != ""]
        rec = synthgen.emit_continuous(config, corrupt_channels=corrupt)
        rec.save(os.path.join(out, "continuous.eegc"))
        save_events_csv(rec.events, os.path.join(out, "events.csv"))
        print(f"wrote {rec.n_channels}x{rec.n_samples} continuous samples to {out}")
    else:
        dataset, truth = synthgen.generate(config)
        dataset.save(os.path.join(out, "dataset.eegd"))
        truth.save(os.path.join(out, "groundtruth.json"))
        print(f"wrote {len(dataset)} epoched samples to {out}")
    return 0


def cmd_preprocess(args):
    rec_path = _require_file(args.recording, "continuous recording")
    ev_path = _require_file(args.events, "event CSV")
    events = load_events_csv(ev_path)
    rec = ContinuousRecording.load(rec_path, events=events)
    window = tuple(float(v) for v in args.window.split(","))
    out = args.out or _default_out("preprocess")
    os.makedirs(out, exist_ok=True)
    _write_run_config(
        out,
        {
            "command": "preprocess",
            "recording": os.path.abspath(rec_path),
            "events": os.path.abspath(ev_path),
            "window": list(window),
            "lo": args.lo,
            "hi": args.hi,
        },
    )
    dataset = preprocess.run_pipeline(rec, window=window, lo=args.lo, hi=args.hi)
    from .data import assign_splits

    assign_splits(dataset, policy="stratified", seed=args.seed or 0)
    dataset.save(os.path.join(out, "dataset.eegd"))
    print(f"wrote {len(dataset)} epoched samples to {out}")
    return 0


def cmd_train(args):
    if args.model not in BUILDERS:
        raise UnknownModelError(
            f"unknown model {args.model!r}; expected one of {sorted(BUILDERS)}"
        )
    data_path = _require_file(args.data, "dataset")
    dataset = EpochedDataset.load(data_path)
    file_cfg = _load_config_file(args.config)
    defaults = {
        "epochs": None,
        "batch_size": 64,
        "lr0": 0.01,
        "decay": 0.001,
        "lam_l1": 0.001,
        "lam_l2": 0.001,
        "alpha1": 0.6,
        "alpha2": 0.4,
        "seed": 0,
    }
    flags = {
        "epochs": args.epochs,
        "batch_size": args.batch,
        "alpha1": args.alpha1,
        "alpha2": args.alpha2,
        "lam_l1": args.lambda1,
        "lam_l2": args.lambda2,
        "seed": args.seed,
    }
    resolved = _resolve(flags, file_cfg, defaults)
    config = TrainConfig(**resolved)
    out = args.out or _default_out("train")
    os.makedirs(out, exist_ok=True)
    _write_run_config(out, {**config.resolved(args.model), "command": "train"})

    def progress(rec):
        aucs = " ".join(
            f"{k.removeprefix('val_auc_')}={v:.3f}"
            for k, v in rec.items()
            if k.startswith("val_auc_")
        )
        print(f"epoch {rec['epoch']:4d} loss={rec['train_loss']:.4f} {aucs}")

    model = train(args.model, dataset, config, progress=progress if args.verbose else None)
    model.save(out)
    print(f"trained {args.model} for {model.config['epochs']} epochs -> {out}")
    return 0


def cmd_eval(args):
    model = _load_model(args.model_dir)
    dataset = EpochedDataset.load(_require_file(args.data, "dataset"))
    out = args.out or _default_out("eval")
    os.makedirs(out, exist_ok=True)
    _write_run_config(
        out,
        {
            "command": "eval",
            "model_dir": os.path.abspath(args.model_dir),
            "data": os.path.abspath(args.data),
            "split": args.split,
            "model_fingerprint": model.fingerprint,
        },
    )
    report = evaluate(model, dataset, split=args.split)
    write_csv(os.path.join(out, "metrics.csv"), ["head", "entry", "value"], report.rows())
    for head, rep in sorted(report.heads.items()):
        write_csv(
            os.path.join(out, f"confusion_{head}.csv"),
            ["true\\pred"] + [str(i) for i in range(rep["confusion"].shape[1])],
            [[i] + rep["confusion"][i].tolist() for i in range(rep["confusion"].shape[0])],
        )
        print(f"{head}: macro AUC = {rep['macro']:.4f}")
    return 0


def _analyze_filters(args, out):
    model = _load_model(args.model_dir)
    filters = analysis.extract_spatial_filters(model)
    from .montage import get_montage

    labels = get_montage().labels
    write_csv(
        os.path.join(out, "spatial_filters.csv"),
        ["filter"] + labels,
        [[i + 1] + list(filters.weights[i]) for i in range(filters.weights.shape[0])],
    )


def _analyze_topo(args, out):
    model = _load_model(args.model_dir)
    filters = analysis.extract_spatial_filters(model)
    from .montage import get_montage

    montage = get_montage()
    idx = args.filter - 1
    if not 0 <= idx < filters.weights.shape[0]:
        raise UnknownModelError(
            f"filter {args.filter} out of range 1..{filters.weights.shape[0]}"
        )
    topo = analysis.topography_export(filters.weights[idx], montage)
    write_csv(
        os.path.join(out, f"topo_filter{args.filter}.csv"),
        ["label", "weight"],
        list(zip(topo.labels, topo.weights)),
    )
    viz.svg_topomap(
        os.path.join(out, f"topo_filter{args.filter}.svg"),
        topo.grid,
        topo.extent,
        electrodes_2d=topo.electrodes_2d,
        labels=topo.labels,
        title=f"spatial filter {args.filter}",
    )


def _analyze_slope(args, out):
    model = _load_model(args.model_dir)
    dataset = EpochedDataset.load(_require_file(args.data, "dataset"))
    idx = dataset.indices(args.split)
    fmap = analysis.erp_feature_map(
        model, dataset, args.filter - 1, task="relative", idx=idx
    )
    slopes = analysis.slope_analysis(fmap)
    write_csv(
        os.path.join(out, f"slopes_filter{args.filter}.csv"),
        ["time_ms", "slope", "residual"],
        list(zip(slopes.times * 1000.0, slopes.slopes, slopes.residuals)),
    )
    write_csv(
        os.path.join(out, f"erp_map_filter{args.filter}.csv"),
        ["time_ms"] + [f"class_{k}" for k in range(fmap.values.shape[0])],
        [
            [fmap.times[t] * 1000.0] + list(fmap.values[:, t])
            for t in range(fmap.values.shape[1])
        ],
    )


def _analyze_elastic(args, out):
    model = _load_model(args.model_dir)
    dataset = EpochedDataset.load(_require_file(args.data, "dataset"))
    lam_grid = featsel.LAMBDA_GRID
    if args.lambda1 is not None and args.lambda2 is not None:
        lam_grid = None
    if lam_grid is None:
        rows, fits = featsel.rank_filters_by_regression(
            model, dataset, lam_grid=(args.lambda1,)
        )
    else:
        rows, fits = featsel.rank_filters_by_regression(model, dataset, lam_grid=lam_grid)
    write_csv(
        os.path.join(out, "elastic_scores.csv"),
        ["filter", "r2_pct", "lam1", "lam2"],
        [[r["filter"], r["r2_pct"], r["lam1"], r["lam2"]] for r in rows],
    )
    heatmap = featsel.beta_heatmap(fits, dataset.times())
    write_csv(
        os.path.join(out, "beta_heatmap.csv"),
        ["filter"] + [f"{t:.1f}" for t in heatmap.times_ms],
        heatmap.rows(),
    )
    ticks = [
        (i, f"{heatmap.times_ms[i]:.0f}")
        for i in range(0, len(heatmap.times_ms), 50)
    ]
    viz.svg_heatmap(
        os.path.join(out, "beta_heatmap.svg"),
        heatmap.matrix,
        row_labels=[f"filter {i + 1}" for i in range(heatmap.matrix.shape[0])],
        x_ticks=ticks,
        title="|beta| per spatial filter and time point (ms)",
    )


def _analyze_rank(args, out):
    model = _load_model(args.model_dir)
    dataset = EpochedDataset.load(_require_file(args.data, "dataset"))
    rows = analysis.rank_filters_by_classification(model, dataset)
    write_csv(
        os.path.join(out, "filter_rank.csv"),
        ["filter", "accuracy_pct"],
        [[r["filter"], r["accuracy_pct"]] for r in rows],
    )


def _analyze_diff(args, out):
    mtm = _load_model(_require_file(args.mtm_dir, "multi-task model directory"))
    att = _load_model(_require_file(args.attloc_dir, "attended-location model directory"))
    dataset = EpochedDataset.load(_require_file(args.data, "dataset"))
    report = analysis.differential_sample_analysis(mtm, att, dataset, split=args.split)
    atomic_write_text(
        os.path.join(out, "diff_report.json"),
        json.dumps(report.count_fields(), indent=2, sort_keys=True),
    )
    write_csv(
        os.path.join(out, "diff_maps.csv"),
        ["time_ms", "diff_map", "correct_map"],
        list(zip(report.times * 1000.0, report.diff_map, report.correct_map)),
    )
    print(f"disagreement set: {report.total} samples")


def cmd_analyze(args):
    out = args.out or _default_out("analyze")
    os.makedirs(out, exist_ok=True)
    resolved = {"command": "analyze", "kind": args.kind}
    for key in ("model_dir", "mtm_dir", "attloc_dir", "data", "filter", "split"):
        value = getattr(args, key, None)
        if value is not None:
            resolved[key] = value
    _write_run_config(out, resolved)
    handler = {
        "filters": _analyze_filters,
        "topo": _analyze_topo,
        "slope": _analyze_slope,
        "elastic": _analyze_elastic,
        "rank": _analyze_rank,
        "diff": _analyze_diff,
    }[args.kind]
    handler(args, out)
    print(f"analysis {args.kind} -> {out}")
    return 0


def cmd_sweep(args):
    grid_doc = _load_config_file(_require_file(args.grid, "sweep grid"))
    dataset_path = _require_file(args.data, "dataset")
    dataset = EpochedDataset.load(dataset_path)
    out = args.out or _default_out("sweep")
    os.makedirs(out, exist_ok=True)
    keys = sorted(grid_doc)
    combos = [{}]
    for key in keys:
        combos = [dict(c, **{key: v}) for c in combos for v in grid_doc[key]]
    _write_run_config(out, {"command": "sweep", "model": args.model, "grid": grid_doc})
    summary = []
    for i, combo in enumerate(combos):
        run_dir = os.path.join(out, f"run_{i:03d}")
        os.makedirs(run_dir, exist_ok=True)
        config = TrainConfig(**{**{"seed": args.seed or 0}, **combo})
        model = train(args.model, dataset, config)
        model.save(run_dir)
        last = model.history[-1]
        row = [i] + [combo[k] for k in keys] + [last["train_loss"]]
        for head in sorted(model.network.spec.outputs):
            row.append(last.get(f"val_auc_{head}", ""))
        summary.append(row)
        print(f"run {i}: {combo} -> loss {last['train_loss']:.4f}")
    heads = sorted(BUILDERS[args.model]().outputs)
    write_csv(
        os.path.join(out, "sweep_summary.csv"),
        ["run"] + keys + ["train_loss"] + [f"val_auc_{h}" for h in heads],
        summary,
    )
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(
        prog="eegspat",
        description="Spatial-attention EEG decoding pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--config", help="JSON overrides for the generator config")
    p.add_argument("--continuous", action="store_true",
                   help="emit a continuous recording + event CSV instead")
    p.add_argument("--corrupt-channels", default="",
                   help="comma-separated channel indices to corrupt")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("preprocess", help="clean and epoch a continuous recording")
    p.add_argument("--recording", required=True)
    p.add_argument("--events", required=True)
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--window", default="-0.2,0.5",
                   help="epoch window in seconds relative to onset")
    p.add_argument("--lo", type=float, default=1.0)
    p.add_argument("--hi", type=float, default=45.0)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="train one of the three models")
    p.add_argument("--model", required=True, choices=sorted(BUILDERS))
    p.add_argument("--data", required=True)
    p.add_argument("--out")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--alpha1", type=float)
    p.add_argument("--alpha2", type=float)
    p.add_argument("--lambda1", type=float)
    p.add_argument("--lambda2", type=float)
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a trained model on a split")
    p.add_argument("--model-dir", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out")
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("analyze", help="model interpretation reports")
    p.add_argument("--kind", required=True, choices=ANALYZE_KINDS)
    p.add_argument("--model-dir")
    p.add_argument("--mtm-dir")
    p.add_argument("--attloc-dir")
    p.add_argument("--data")
    p.add_argument("--out")
    p.add_argument("--filter", type=int, default=1, help="1-based spatial filter index")
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--lambda1", type=float)
    p.add_argument("--lambda2", type=float)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("sweep", help="sequential grid sweep over train configs")
    p.add_argument("--model", required=True, choices=sorted(BUILDERS))
    p.add_argument("--data", required=True)
    p.add_argument("--grid", required=True, help="JSON {param: [values]}")
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except EegspatError as exc:
        print(
            f"eegspat: error kind={type(exc).__name__} code={exc.exit_code} msg={exc}",
            file=sys.stderr,
        )
        return exc.exit_code
    except FileNotFoundError as exc:
        print(
            f"eegspat: error kind=MissingInputError code={MissingInputError.exit_code} "
            f"msg={exc}",
            file=sys.stderr,
        )
        return MissingInputError.exit_code


if __name__ == "__main__":
    sys.exit(main())
