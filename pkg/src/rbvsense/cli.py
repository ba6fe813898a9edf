"""Command-line entry point: ``rbvsense <subcommand> ...``."""

from __future__ import annotations

import argparse
import csv
import logging
import os
import signal
import sys

import numpy as np

from . import __version__
from .analysis import (
    pearson_matrix,
    subset_search,
    write_correlation_csv,
    write_subset_csv,
    write_threshold_csv,
)
from .chaos import ChaosParams, Topology
from .data import load_csv, save_csv, stratified_folds
from .exceptions import RbvError
from .hgb import HGBClassifier, HgbParams, dumps_hgb, loads_hgb, predict_hgb, save_hgb, train_hgb
from .lognnet import (
    LogNNetClassifier,
    load_float_model,
    save_float_model,
)
from .model_selection import cross_val_accuracy
from .net import (
    CloudService,
    EdgeNode,
    RoutePolicy,
    ServiceResponse,
    default_address,
    parse_address,
)
from .preprocessing import ScalerParams
from .quantize import dumps_model, loads_model, quantize, ram_budget
from .synthetic import PRESETS, generate_synthetic
from .wire import FrameParser

log = logging.getLogger("rbvsense")

HGB_GRID = {"learning_rate": (0.05, 0.1, 0.2), "trees": (50, 100), "max_leaves": (15, 31)}


class CliError(Exception):
    pass


def _read_text(path):
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            return fh.read()
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc.strerror}") from None


def load_any_model(path):
    """Return ``(kind, model, scaler)`` with kind in {float, lognnet, hgb}."""
    text = _read_text(path)
    first = text.split("\n", 1)[0]
    if first.startswith("LOGNNET"):
        return "lognnet", loads_model(text), None
    if first.startswith("HGB"):
        return "hgb", loads_hgb(text), None
    if text.lstrip().startswith("{"):
        model, scaler = load_float_model(path)
        return "float", model, scaler
    raise CliError(f"{path}: unrecognised model file")


def _require(path, flag):
    if not path:
        raise CliError(f"{flag} is required")
    return path


def _load_scaler(path):
    return ScalerParams.from_json(_read_text(path)) if path else None


def _write(path, text):
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)


# -- subcommands ------------------------------------------------------------------

def cmd_gen_data(args):
    spec = PRESETS[args.preset]
    ds = generate_synthetic(spec, args.n_per_class, args.seed)
    save_csv(ds, _require(args.out, "--out"))
    log.info("wrote %d records x %d features to %s", len(ds), ds.n_features, args.out)


def cmd_train_lognnet(args):
    ds = load_csv(_require(args.data, "--data"))
    if ds.y is None:
        raise CliError("training data needs a label column")
    clf = LogNNetClassifier(args.reservoir, args.hidden, ChaosParams(), None if args.scaler == "none" else args.scaler,
                            args.epochs, args.learning_rate, args.batch_size, args.seed)
    clf.fit(ds.X, ds.y)
    acc = float(np.mean(clf.predict(ds.X) == ds.y))
    save_float_model(_require(args.out, "--out"), clf.model_, clf.scaler_params_)
    print(f"topology {clf.model_.topology} training accuracy {acc:.6f}")


def _hgb_params(args, **override):
    base = dict(trees=args.trees, learning_rate=args.learning_rate, max_leaves=args.max_leaves,
                min_samples_leaf=args.min_samples_leaf, l2=args.l2, max_bins=args.max_bins,
                seed=args.seed)
    base.update(override)
    return HgbParams(**base)


def cmd_train_hgb(args):
    ds = load_csv(_require(args.data, "--data"))
    if ds.y is None:
        raise CliError("training data needs a label column")
    if args.features:
        ds = ds.subset(features=_feature_indices(ds, args.features))
    params = _hgb_params(args)
    if args.grid:
        folds = stratified_folds(ds, args.folds, args.seed)
        best = None
        for lr in HGB_GRID["learning_rate"]:
            for trees in HGB_GRID["trees"]:
                for leaves in HGB_GRID["max_leaves"]:
                    p = _hgb_params(args, learning_rate=lr, trees=trees, max_leaves=leaves)
                    cv = cross_val_accuracy(
                        lambda p=p: HGBClassifier(p.trees, p.learning_rate, p.max_leaves,
                                                  p.min_samples_leaf, p.l2, p.max_bins, None, p.seed),
                        ds.X, ds.y, folds)
                    print(f"grid lr={lr} trees={trees} leaves={leaves} "
                          f"accuracy={cv.mean_accuracy:.6f}", file=sys.stderr)
                    if best is None or cv.mean_accuracy > best[0]:
                        best = (cv.mean_accuracy, p)
        params = best[1]
    model = train_hgb(ds.X, ds.y, params)
    save_hgb(model, _require(args.out, "--out"))
    acc = float(np.mean((model.predict_proba1(ds.X) >= 0.5) == ds.y))
    print(f"features {model.n_features} trees {len(model.trees)} training accuracy {acc:.6f}")


def _scaler_path(out):
    return out + ".scaler.json"


def cmd_quantize(args):
    kind, model, scaler = load_any_model(_require(args.model, "--model"))
    if kind != "float":
        raise CliError("quantize needs a float LogNNet model (from train-lognnet)")
    q = quantize(model, args.scale)
    out = _require(args.out, "--out")
    _write(out, dumps_model(q))
    if scaler is not None:
        spath = args.scaler_out or _scaler_path(out)
        _write(spath, scaler.to_json())
        print(f"scaler written to {spath}")


def cmd_export_model(args):
    kind, model, scaler = load_any_model(_require(args.model, "--model"))
    if kind == "float":
        _write(args.out, dumps_model(quantize(model, args.scale)))
    elif kind == "lognnet":
        _write(args.out, dumps_model(model))
    else:
        _write(args.out, dumps_hgb(model))


def cmd_import_model(args):
    kind, model, _ = load_any_model(_require(args.model, "--model"))
    if kind == "lognnet":
        print(f"LOGNNET1 topology {model.topology} scale {model.scale_factor} "
              f"chaos K={model.chaos.K} D={model.chaos.D} L={model.chaos.L} C={model.chaos.C}")
    elif kind == "hgb":
        print(f"HGB1 features {model.n_features} trees {len(model.trees)} "
              f"learning_rate {model.learning_rate!r}")
    else:
        print(f"float LogNNet topology {model.topology}")


def _policy(args):
    address = parse_address(args.cloud) if args.cloud else default_address()
    return RoutePolicy(address, args.connect_timeout, args.response_timeout, args.retries)


def cmd_predict(args):
    kind, model, _ = load_any_model(_require(args.model, "--model"))
    ds = load_csv(_require(args.data, "--data"))
    rows = []
    if kind == "hgb":
        for x in ds.X:
            p = predict_hgb(model, x)
            rows.append(ServiceResponse(p.predicted_class, p.confidence, "cloud-hgb"))
    elif kind == "lognnet":
        node = EdgeNode(model, _load_scaler(args.scaler), _policy(args),
                        offline=not (args.cloud or os.environ.get("SENSOR_CLOUD_ADDR")))
        rows = [node.predict(x) for x in ds.X]
    else:
        raise CliError("predict needs an HGB1 or LOGNNET1 model file")
    out = _require(args.out, "--out")
    with open(out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["record", "diagnosis", "confidence", "model"])
        for i, r in enumerate(rows):
            w.writerow([i, r.diagnosis, f"{r.confidence:.6f}", r.model])
    counts = {}
    for r in rows:
        counts[r.model] = counts.get(r.model, 0) + 1
    print(" ".join(f"{k}={v}" for k, v in sorted(counts.items())))


def cmd_analyze(args):
    ds = load_csv(_require(args.data, "--data"))
    out = _require(args.out, "--out")
    os.makedirs(out, exist_ok=True)
    scopes = ("all", "positive", "negative") if ds.y is not None else ("all",)
    for scope in scopes:
        write_correlation_csv(pearson_matrix(ds, scope), os.path.join(out, f"correlation_{scope}.csv"))
    if ds.y is not None:
        write_threshold_csv(ds, os.path.join(out, "thresholds.csv"))
    print(f"reports written to {out}")


def _feature_indices(ds, spec):
    out = []
    for tok in str(spec).split(","):
        tok = tok.strip()
        if tok in ds.feature_names:
            out.append(ds.feature_names.index(tok))
        elif tok.isdigit() and int(tok) < ds.n_features:
            out.append(int(tok))
        else:
            raise CliError(f"unknown feature {tok!r}")
    return out


def cmd_search(args):
    ds = load_csv(_require(args.data, "--data"))
    if ds.y is None:
        raise CliError("search needs a label column")
    if args.feature_list:
        features = _feature_indices(ds, args.feature_list)
    elif args.features:
        features = list(range(min(args.features, ds.n_features)))
    else:
        features = None
    folds = stratified_folds(ds, args.folds, args.seed)

    def progress(done, total):
        if done == total or done % max(1, total // 20) == 0:
            print(f"progress {done}/{total}", file=sys.stderr)

    results = subset_search(ds, args.size, folds, top_k=args.top_k, n_jobs=args.jobs,
                            features=features, seed=args.seed, allow_large=args.full_sweep,
                            progress=progress)
    if args.out:
        write_subset_csv(results, ds.feature_names, args.out)
    else:
        for r in results:
            print("+".join(ds.feature_names[i] for i in r.features), f"{r.mean_accuracy:.6f}")


def cmd_serve(args):
    kind, model, _ = load_any_model(_require(args.model, "--model"))
    if kind != "hgb":
        raise CliError("serve needs an HGB1 model file")
    address = parse_address(args.bind) if args.bind else default_address()
    service = CloudService(model, address)
    host, port = service.address
    print(f"listening on {host}:{port}", flush=True)
    signal.signal(signal.SIGTERM, lambda *_: sys.exit(0))
    try:
        service.serve_forever()
    except (KeyboardInterrupt, SystemExit):
        pass
    finally:
        service.close()


def cmd_edge(args):
    kind, model, _ = load_any_model(_require(args.model, "--model"))
    if kind != "lognnet":
        raise CliError("edge needs a LOGNNET1 model file")
    node = EdgeNode(model, _load_scaler(args.scaler), _policy(args), offline=args.offline)
    parser = FrameParser()
    out = open(args.out, "w", encoding="utf-8") if args.out else sys.stdout
    stdin = sys.stdin.buffer
    try:
        while True:
            chunk = stdin.read1(4096) if hasattr(stdin, "read1") else stdin.read(4096)
            if not chunk:
                break
            for frame in parser.feed(chunk):
                if frame.malformed:
                    print(f"warning: malformed tokens at {list(frame.malformed)} read as 0",
                          file=sys.stderr)
                try:
                    resp = node.predict(frame.values)
                except RbvError as exc:
                    print(f"error: {exc}", file=sys.stderr)
                    continue
                # --digits mimics the device: one class character, no terminator
                out.write(str(resp.diagnosis) if args.digits else resp.line())
                out.flush()
    finally:
        if out is not sys.stdout:
            out.close()


def cmd_rambudget(args):
    t = Topology.parse(args.topology)
    b = ram_budget(t, args.float_bytes, args.int_bytes, args.serial, args.misc_globals,
                   args.stack_reserve)
    _write(args.out, f"LogNNet {t} RAM estimate\n" + b.format_table())


# -- parser -----------------------------------------------------------------------

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    common.add_argument("--model", help="model file")
    common.add_argument("--out", help="output path")

    net = argparse.ArgumentParser(add_help=False)
    net.add_argument("--cloud", help="cloud address host:port (default $SENSOR_CLOUD_ADDR)")
    net.add_argument("--scaler", help="input scaler JSON written by quantize")
    net.add_argument("--connect-timeout", type=float, default=500, help="ms")
    net.add_argument("--response-timeout", type=float, default=1000, help="ms")
    net.add_argument("--retries", type=int, default=1)

    p = argparse.ArgumentParser(prog="rbvsense", description=__doc__)
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("gen-data", parents=[common], help="write a synthetic dataset")
    s.add_argument("--preset", choices=sorted(PRESETS), default="blood")
    s.add_argument("--n-per-class", type=int, default=500)
    s.set_defaults(func=cmd_gen_data)

    s = sub.add_parser("train-lognnet", parents=[common], help="train a float LogNNet")
    s.add_argument("--data", help="labeled CSV")
    s.add_argument("--reservoir", type=int, default=50)
    s.add_argument("--hidden", type=int, default=20)
    s.add_argument("--scaler", choices=("minmax", "robust", "none"), default="minmax")
    s.add_argument("--epochs", type=int, default=30)
    s.add_argument("--learning-rate", type=float, default=0.1)
    s.add_argument("--batch-size", type=int, default=32)
    s.set_defaults(func=cmd_train_lognnet)

    s = sub.add_parser("train-hgb", parents=[common], help="train the gradient boosting model")
    s.add_argument("--data", help="labeled CSV")
    s.add_argument("--features", help="comma-separated feature names or indices to keep")
    s.add_argument("--trees", type=int, default=100)
    s.add_argument("--learning-rate", type=float, default=0.1)
    s.add_argument("--max-leaves", type=int, default=31)
    s.add_argument("--min-samples-leaf", type=int, default=20)
    s.add_argument("--l2", type=float, default=1.0)
    s.add_argument("--max-bins", type=int, default=255)
    s.add_argument("--grid", action="store_true", help="pick lr/trees/leaves by cross-validation")
    s.add_argument("--folds", type=int, default=5)
    s.set_defaults(func=cmd_train_hgb)

    s = sub.add_parser("quantize", parents=[common], help="float LogNNet -> LOGNNET1 file")
    s.add_argument("--scale", type=int, default=1000)
    s.add_argument("--scaler-out", help="where to write the input scaler (default <out>.scaler.json)")
    s.set_defaults(func=cmd_quantize)

    s = sub.add_parser("export-model", parents=[common], help="write a model in its library file format")
    s.add_argument("--scale", type=int, default=1000)
    s.set_defaults(func=cmd_export_model)

    s = sub.add_parser("import-model", parents=[common], help="validate and describe a model file")
    s.set_defaults(func=cmd_import_model)

    s = sub.add_parser("predict", parents=[common, net], help="predict a CSV of records")
    s.add_argument("--data", help="CSV of records")
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("analyze", parents=[common], help="correlation and threshold reports")
    s.add_argument("--data", help="CSV of records")
    s.set_defaults(func=cmd_analyze)

    s = sub.add_parser("search", parents=[common], help="feature subset sweep")
    s.add_argument("--data", help="labeled CSV")
    s.add_argument("--size", type=int, choices=(1, 2, 3), required=True)
    s.add_argument("--features", type=int, help="restrict to the first N features")
    s.add_argument("--feature-list", help="comma-separated candidate features")
    s.add_argument("--folds", type=int, default=5)
    s.add_argument("--top-k", type=int, default=20)
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--full-sweep", action="store_true", help="allow sweeps over 5000 tuples")
    s.set_defaults(func=cmd_search)

    s = sub.add_parser("serve", parents=[common], help="run the cloud HGB service")
    s.add_argument("--bind", help="host:port (default $SENSOR_CLOUD_ADDR or 127.0.0.1:8750)")
    s.set_defaults(func=cmd_serve)

    s = sub.add_parser("edge", parents=[common, net], help="edge router over T/FN frames on stdin")
    s.add_argument("--offline", action="store_true", help="never contact the cloud")
    s.add_argument("--digits", action="store_true",
                   help="reply with the bare class digit per frame, as the device does")
    s.set_defaults(func=cmd_edge)

    s = sub.add_parser("rambudget", parents=[common], help="device RAM estimate")
    s.add_argument("--topology", default="51,50,20,2")
    s.add_argument("--float-bytes", type=int, default=4)
    s.add_argument("--int-bytes", type=int, default=2)
    s.add_argument("--serial", type=int, default=310)
    s.add_argument("--misc-globals", type=int, default=6)
    s.add_argument("--stack-reserve", type=int, default=1012)
    s.set_defaults(func=cmd_rambudget)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (CliError, RbvError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
