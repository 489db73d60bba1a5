"""Command-line front end.

Every subcommand writes one JSON document to stdout (or ``--output``) and
logs to stderr. Exit codes: 0 success, 1 usage error, 2 data error
(unreadable or malformed input), 3 numerical error (degenerate task,
rank deficiency, non-convergence).
"""

import argparse
import hashlib
import json
import logging
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__, jsonfmt
from .curriculum import (
    TransferabilityMatrix,
    cluster_tasks,
    curriculum,
    percentile_threshold,
    transferability_matrix,
)
from .data_io import read_features, read_labels, read_matrix_csv, read_tensor_binary
from .dtm import exact_h_score
from .errors import DataError, NumericalError
from .exponent import LocalPair, mismatched_exponent, simulate_error_rate
from .pixelwise import (
    DEFAULT_N_COLORS,
    aggregate,
    export_heatmap,
    fit_palette,
    pixel_hscores,
    quantize,
)
from .stats import InverseMode, h_score
from .transfer import TaskFeatureSet, rank_pairs, select_source, transferability

log = logging.getLogger("xfer")

EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3

TRANSFER_MODES = {"exact-discrete": "exact_discrete", "proxy-self": "proxy_self",
                  "bound-k": "bound_k"}
DEFAULT_SAMPLE_SIZES = (250, 1000, 1500, 2000)

# per-command defaults, applied after --config so that explicit flags win,
# then config values, then these
DEFAULTS = {
    "common": {"threads": None, "pseudo_tol": None, "ridge": None, "seed": 0,
               "output": None, "has_header": False},
    "hscore": {},
    "transfer": {"mode": "proxy-self"},
    "rank": {"target": "target", "target_features": None},
    "rank2": {"target": "target", "target_features": None},
    "pixelwise": {"n_colors": DEFAULT_N_COLORS, "heatmap": None, "format": None,
                  "max_iter": 300},
    "curriculum": {"alpha": None, "alpha_percentile": None, "dot": None,
                   "cluster": False, "task_ids": None},
    "validate-exponent": {"n_features": 20, "trials": 20000, "sample_sizes": None,
                          "eps": None, "simulate": True},
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _positive_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}")
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be at least 1, got {v}")
    return v


def _int_list(text):
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def build_parser():
    common = argparse.ArgumentParser(add_help=False, argument_default=None)
    common.add_argument("--config", help="JSON file supplying any flag (command-line flags win)")
    common.add_argument("--threads", type=int,
                        help="worker threads, 0 = auto (falls back to $XFER_THREADS)")
    inv = common.add_mutually_exclusive_group()
    inv.add_argument("--pseudo-tol", type=float,
                     help="relative eigenvalue cutoff of the pseudo-inverse (default 1e-10)")
    inv.add_argument("--ridge", type=float, help="ridge regularization lambda instead of pseudo-inverse")
    common.add_argument("--seed", type=int)
    common.add_argument("-o", "--output", help="write the JSON report here instead of stdout")
    common.add_argument("--has-header", action="store_const", const=True,
                        help="CSV inputs start with a header row")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    parser = _Parser(prog="xfer", description="H-score based feature and transferability analysis")
    parser.add_argument("--version", action="version", version=f"xfer {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("hscore", parents=[common], help="H-score of features on labels")
    p.add_argument("--features", help="feature matrix (CSV or XFT1)")
    p.add_argument("--labels", help="label file, one integer per line")

    p = sub.add_parser("transfer", parents=[common], help="normalized transferability of one source")
    p.add_argument("--source", help="source features evaluated on the target inputs")
    p.add_argument("--labels", help="target labels")
    p.add_argument("--mode", choices=sorted(TRANSFER_MODES))
    p.add_argument("--target-features", help="target's own features (proxy-self)")
    p.add_argument("--inputs", help="discrete inputs, one integer per line (exact-discrete)")

    for name, text in (("rank", "rank candidate sources"),
                       ("rank2", "rank all pairs of concatenated candidate sources")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--candidate", action="append", metavar="ID=PATH",
                       help="candidate features; repeat per candidate")
        p.add_argument("--labels", help="target labels")
        p.add_argument("--target", help="target name in the report")
        p.add_argument("--target-features",
                       help="target's own features; fills in transferability values")

    p = sub.add_parser("pixelwise", parents=[common], help="per-pixel H-scores for image labels")
    p.add_argument("--features", help="feature matrix (CSV or XFT1)")
    p.add_argument("--images", help="XFT1 tensor m x H x W [x C] of ground-truth images")
    p.add_argument("--n-colors", type=_positive_int, help="palette size (default 16)")
    p.add_argument("--max-iter", type=_positive_int, help="k-means iteration cap")
    p.add_argument("--heatmap", help="heatmap output path (.pgm or .svg)")
    p.add_argument("--format", choices=["pgm", "svg"], help="heatmap format (default from suffix)")

    p = sub.add_parser("curriculum", parents=[common], help="transfer curriculum over tasks")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--manifest",
                     help='JSON {"tasks": [{"id", "features", "labels"}]}; paths relative to it')
    src.add_argument("--matrix", help="precomputed M as CSV (n x n)")
    p.add_argument("--task-ids", help="comma-separated ids for --matrix rows")
    thr = p.add_mutually_exclusive_group()
    thr.add_argument("--alpha", type=float, help="edge threshold (default 0, the complete graph)")
    thr.add_argument("--alpha-percentile", type=float,
                     help="threshold as a percentile of the pairwise maxima")
    p.add_argument("--dot", help="also write the oriented forest as Graphviz DOT")
    p.add_argument("--cluster", action="store_const", const=True,
                   help="include an average-linkage dendrogram (needs --manifest)")

    p = sub.add_parser("validate-exponent", parents=[common],
                       help="check exponent / H-score proportionality on a local pair")
    p.add_argument("--pair", help='JSON {"p1", "p2", optional "p0", "eps", "features"}')
    p.add_argument("--n-features", type=_positive_int,
                   help="random 1-d features when the pair file lists none (default 20)")
    p.add_argument("--trials", type=_positive_int, help="Monte-Carlo trials per size and hypothesis")
    p.add_argument("--sample-sizes", type=_int_list, help="comma-separated, increasing")
    p.add_argument("--eps", type=float, help="neighborhood radius (default: smallest that fits)")
    p.add_argument("--no-simulate", dest="simulate", action="store_const", const=False,
                   help="exact exponents only")
    return parser


def _merge_config(parser, args):
    """Fill unset flags from ``--config``, then from the defaults."""
    config = {}
    if args.config:
        path = Path(args.config)
        try:
            config = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: invalid JSON config: {exc}")
        if not isinstance(config, dict):
            raise DataError(f"{path}: config must be a JSON object")
    defaults = {**DEFAULTS["common"], **DEFAULTS[args.command]}
    known = set(vars(args))
    for key, value in config.items():
        dest = key.replace("-", "_")
        if dest not in known or dest in ("command", "config"):
            parser.error(f"unknown config key {key!r} for {args.command}")
        if getattr(args, dest) is None:
            setattr(args, dest, value)
    for dest, value in defaults.items():
        if getattr(args, dest, None) is None:
            setattr(args, dest, value)
    if args.pseudo_tol is not None and args.ridge is not None:
        parser.error("--pseudo-tol and --ridge are mutually exclusive")
    for dest in ("trials", "n_colors", "n_features", "max_iter"):
        value = getattr(args, dest, None)
        if value is not None and (not isinstance(value, int) or value < 1):
            parser.error(f"--{dest.replace('_', '-')} must be a positive integer, got {value!r}")
    return args


def _resolve_threads(threads):
    if threads is None:
        env = os.environ.get("XFER_THREADS")
        if env:
            try:
                threads = int(env)
            except ValueError:
                raise UsageError(f"XFER_THREADS must be an integer, got {env!r}")
        else:
            threads = 1
    if threads < 0:
        raise UsageError("--threads must be non-negative")
    return threads or (os.cpu_count() or 1)


def _inverse_mode(args):
    if args.ridge is not None:
        if not args.ridge > 0:
            raise UsageError("--ridge must be positive")
        return InverseMode.with_ridge(args.ridge)
    if args.pseudo_tol is not None:
        if not args.pseudo_tol >= 0:
            raise UsageError("--pseudo-tol must be non-negative")
        return InverseMode.pseudo(args.pseudo_tol)
    return InverseMode()


def _require(args, *names):
    missing = [n for n in names if getattr(args, n, None) in (None, [], "")]
    if missing:
        flags = ", ".join("--" + n.replace("_", "-") for n in missing)
        raise UsageError(f"{args.command} requires {flags}")


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


class _Inputs:
    """Records every input file read, for the provenance block."""

    def __init__(self):
        self.files = {}

    def path(self, role, path):
        p = Path(path)
        if not p.is_file():
            raise FileNotFoundError(f"no such file: {path}")
        self.files[role] = {"path": str(path), "sha256": _sha256(p)}
        return p


def _label_info(lv):
    out = {"n_classes": lv.n_classes}
    if lv.mapping is not None:
        out["label_mapping"] = {str(k): v for k, v in lv.mapping.items()}
    return out


def cmd_hscore(args, inputs):
    _require(args, "features", "labels")
    F = read_features(inputs.path("features", args.features), has_header=args.has_header)
    lv = read_labels(inputs.path("labels", args.labels))
    report = h_score(F, lv, args.inverse_mode)
    return {**report.to_dict(), **_label_info(lv)}


def cmd_transfer(args, inputs):
    _require(args, "source", "labels")
    mode = TRANSFER_MODES[args.mode] if args.mode in TRANSFER_MODES else args.mode
    if mode not in TRANSFER_MODES.values():
        raise UsageError(f"unknown mode {args.mode!r}")
    source = TaskFeatureSet(Path(args.source).stem,
                            read_features(inputs.path("source", args.source), args.has_header))
    lv = read_labels(inputs.path("labels", args.labels))
    kwargs = {}
    if mode == "proxy_self":
        _require(args, "target_features")
        kwargs["target_features"] = read_features(
            inputs.path("target_features", args.target_features), args.has_header)
    elif mode == "exact_discrete":
        _require(args, "inputs")
        kwargs["inputs"] = read_labels(inputs.path("inputs", args.inputs)).labels
    score = transferability(source, lv, mode, inverse_mode=args.inverse_mode, **kwargs)
    return {"source": source.task_id, **score.to_dict(), **_label_info(lv)}


def _candidates(args, inputs):
    out = []
    for entry in args.candidate:
        if "=" in entry:
            tid, path = entry.split("=", 1)
        else:
            tid, path = Path(entry).stem, entry
        if not tid:
            raise UsageError(f"empty candidate id in {entry!r}")
        F = read_features(inputs.path(f"candidate:{tid}", path), args.has_header)
        out.append(TaskFeatureSet(tid, F))
    return out


def _cmd_rank(args, inputs, ranker):
    _require(args, "candidate", "labels")
    cands = _candidates(args, inputs)
    lv = read_labels(inputs.path("labels", args.labels))
    denominator = None
    if args.target_features:
        T = read_features(inputs.path("target_features", args.target_features), args.has_header)
        denominator = h_score(T, lv, args.inverse_mode).value
    ranking = ranker(cands, lv, target=args.target, denominator=denominator,
                     inverse_mode=args.inverse_mode)
    return {**ranking.to_dict(), "denominator": denominator}


def cmd_rank(args, inputs):
    return _cmd_rank(args, inputs, select_source)


def cmd_rank2(args, inputs):
    if args.candidate is not None and len(args.candidate) < 2:
        raise UsageError("rank2 needs at least 2 candidates")
    return _cmd_rank(args, inputs, rank_pairs)


def cmd_pixelwise(args, inputs):
    _require(args, "features", "images")
    F = read_features(inputs.path("features", args.features), args.has_header)
    images = read_tensor_binary(inputs.path("images", args.images))
    if images.ndim not in (3, 4):
        raise DataError(f"images must be m x H x W [x C], got shape {images.shape}")
    if images.shape[0] != F.shape[0]:
        raise DataError(f"{F.shape[0]} feature rows but {images.shape[0]} images")
    channels = 1 if images.ndim == 3 else images.shape[3]
    log.info("fitting %d-color palette", args.n_colors)
    palette = fit_palette(images.reshape(-1, channels), n_colors=args.n_colors,
                          max_iter=args.max_iter, seed=args.seed)
    labelmaps = quantize(images, palette)
    hmap = pixel_hscores(F, labelmaps, args.inverse_mode, threads=args.threads)
    mean = aggregate(hmap)
    W = hmap.shape[1]
    left = hmap.region_mean(cols=slice(0, W // 2))
    right = hmap.region_mean(cols=slice(W // 2, W))
    out = {
        "mean_hscore": mean,
        "left_mean": left,
        "right_mean": right,
        "left_right_ratio": left / right if right > 0 else None,
        "shape": list(hmap.shape),
        "skipped_count": hmap.skipped_count,
        "palette": palette.to_dict(),
        "scores": hmap.scores.tolist(),
    }
    if args.heatmap:
        out["heatmap"] = {"path": args.heatmap,
                          **export_heatmap(hmap, args.heatmap, fmt=args.format, seed=args.seed)}
    return out


def _manifest_tasks(path, inputs):
    path = inputs.path("manifest", path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON: {exc}")
    tasks = doc.get("tasks") if isinstance(doc, dict) else None
    if not isinstance(tasks, list) or len(tasks) < 2:
        raise DataError(f"{path}: needs a 'tasks' list with at least 2 entries")
    out = []
    for entry in tasks:
        try:
            tid, fpath, lpath = str(entry["id"]), entry["features"], entry["labels"]
        except (KeyError, TypeError):
            raise DataError(f"{path}: every task needs 'id', 'features' and 'labels'")
        F = read_features(inputs.path(f"features:{tid}", path.parent / fpath))
        lv = read_labels(inputs.path(f"labels:{tid}", path.parent / lpath))
        out.append((tid, F, lv))
    return out


def cmd_curriculum(args, inputs):
    if not args.manifest and not args.matrix:
        raise UsageError("curriculum requires --manifest or --matrix")
    if args.alpha is not None and args.alpha_percentile is not None:
        raise UsageError("--alpha and --alpha-percentile are mutually exclusive")
    if args.manifest:
        tm = transferability_matrix(_manifest_tasks(args.manifest, inputs),
                                    args.inverse_mode, threads=args.threads)
    else:
        if args.cluster:
            raise UsageError("--cluster needs raw H-scores; use --manifest")
        M = read_matrix_csv(inputs.path("matrix", args.matrix), has_header=args.has_header)
        n = M.shape[0]
        ids = args.task_ids.split(",") if args.task_ids else [str(i) for i in range(n)]
        if M.shape != (n, n):
            raise DataError(f"matrix must be square, got {M.shape}")
        tm = TransferabilityMatrix(M, ids)
    if args.alpha_percentile is not None:
        if not 0 <= args.alpha_percentile <= 100:
            raise UsageError("--alpha-percentile must lie in [0, 100]")
        alpha = percentile_threshold(tm, args.alpha_percentile)
    else:
        alpha = 0.0 if args.alpha is None else args.alpha
        if alpha < 0:
            raise UsageError("--alpha must be non-negative")
    forest = curriculum(tm, alpha=alpha)
    out = {**forest.to_dict(), "alpha_percentile": args.alpha_percentile,
           "matrix": tm.to_dict()}
    if args.cluster:
        out["dendrogram"] = cluster_tasks(tm).to_dict()
    if args.dot:
        Path(args.dot).write_text(forest.to_dot(), encoding="utf-8")
        out["dot"] = args.dot
    return out


def _random_features(n_features, size, seed):
    rng = np.random.default_rng(seed)
    return [rng.standard_normal(size) for _ in range(n_features)]


def cmd_validate_exponent(args, inputs):
    _require(args, "pair")
    path = inputs.path("pair", args.pair)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON: {exc}")
    if not isinstance(doc, dict) or "p1" not in doc or "p2" not in doc:
        raise DataError(f"{path}: needs 'p1' and 'p2'")
    eps = args.eps if args.eps is not None else doc.get("eps")
    if "p0" in doc:
        pair = LocalPair(doc["p0"], doc["p1"], doc["p2"],
                         eps if eps is not None else 0.05)
    else:
        pair = LocalPair.around_mixture(doc["p1"], doc["p2"], eps)
    feats = doc.get("features") or _random_features(args.n_features, len(pair.p0), args.seed)
    feats = [np.asarray(f, dtype=np.float64) for f in feats]
    joint = pair.binary_joint()
    sizes = args.sample_sizes or list(DEFAULT_SAMPLE_SIZES)
    rows = []
    for idx, f in enumerate(feats):
        exp = mismatched_exponent(f, pair)
        h = exact_h_score(joint, f, args.inverse_mode)
        # roundoff-level H (e.g. p1 == p2) carries no ratio
        informative = exp.optimal > 0 and h > 1e-12
        row = {"index": idx, "hscore": h, **exp.to_dict(),
               "exponent_over_hscore": exp.predicted / h if informative else None}
        if args.simulate:
            log.info("simulating feature %d/%d", idx + 1, len(feats))
            sim = simulate_error_rate(f, pair.p1, pair.p2, sizes, args.trials,
                                      seed=args.seed + idx)
            row["simulation"] = sim.to_dict()
            row["slope"] = sim.slope
        rows.append(row)
    ratios = np.array([r["exponent_over_hscore"] for r in rows
                       if r["exponent_over_hscore"] is not None])
    summary = {"n_features": len(rows)}
    if len(ratios):
        summary["ratio_mean"] = float(ratios.mean())
        summary["ratio_relative_spread"] = float((ratios.max() - ratios.min()) / ratios.mean())
    if args.simulate:
        slopes = np.array([r["slope"] for r in rows])
        hs = np.array([r["hscore"] for r in rows])
        summary["max_abs_slope"] = float(np.max(np.abs(slopes)))
        if len(rows) >= 2 and np.std(slopes) > 0 and np.std(hs) > 0:
            summary["slope_hscore_pearson"] = float(np.corrcoef(slopes, hs)[0, 1])
        else:
            summary["slope_hscore_pearson"] = None
    return {"pair": pair.to_dict(), "sample_sizes": sizes if args.simulate else None,
            "trials": args.trials if args.simulate else None,
            "features": rows, "summary": summary}


COMMANDS = {
    "hscore": cmd_hscore,
    "transfer": cmd_transfer,
    "rank": cmd_rank,
    "rank2": cmd_rank2,
    "pixelwise": cmd_pixelwise,
    "curriculum": cmd_curriculum,
    "validate-exponent": cmd_validate_exponent,
}

_NOT_CONFIG = ("command", "config", "verbose", "inverse_mode", "output")


def _config_record(args):
    return {k: v for k, v in sorted(vars(args).items()) if k not in _NOT_CONFIG}


def run(argv=None):
    """Parse and execute; returns the resolved arguments and the report."""
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(stream=sys.stderr, format="xfer: %(message)s",
                        level=logging.INFO if args.verbose else logging.WARNING)
    try:
        args = _merge_config(parser, args)
        args.threads = _resolve_threads(args.threads)
        args.inverse_mode = _inverse_mode(args)
        inputs = _Inputs()
        result = COMMANDS[args.command](args, inputs)
    except UsageError as exc:
        parser.error(str(exc))
    except ValueError as exc:
        if isinstance(exc, DataError):
            raise
        parser.error(str(exc))
    document = {
        "command": args.command,
        "version": __version__,
        "result": result,
        "provenance": {
            "inputs": inputs.files,
            "config": _config_record(args),
            "inverse_mode": args.inverse_mode.describe(),
        },
        "metadata": {"timestamp": datetime.now(timezone.utc).isoformat()},
    }
    return args, document


def main(argv=None):
    try:
        args, document = run(argv)
    except (DataError, OSError) as exc:
        print(f"xfer: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"xfer: numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    text = jsonfmt.dumps(document)
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


if __name__ == "__main__":
    sys.exit(main())
