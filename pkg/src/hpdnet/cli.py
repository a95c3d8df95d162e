"""Command-line interface.

Subcommands: ``synth``, ``train``, ``eval``, ``predict``, ``dist``,
``bench``. Every option can also come from a flat key=value config file
passed with ``--config``; explicit command-line flags win. Each run that
produces artifacts also dumps its effective configuration next to the main
output, and that dump re-parses to the identical configuration.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
The ``THREADS`` environment variable caps the numerical worker threads
(default: machine parallelism); it must take effect before the numerical
libraries initialize, which is why the heavy imports happen inside run().
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .errors import DataError, HpdError, NumericError, UsageError

CONFIG_KEYS = {
    "synth": {"height": int, "width": int, "looks": int, "seed": int,
              "out": str},
    "train": {"data": str, "labels": str, "out": str, "history": str,
              "lr": float, "epochs": int, "batch": int, "ratio": float,
              "patch": int, "tau": float, "seed": int, "path": str,
              "optimizer": str, "dims": str},
    "eval": {"data": str, "labels": str, "model": str, "report": str,
             "ratio": float, "patch": int, "seed": int, "path": str},
    "predict": {"data": str, "model": str, "out": str, "patch": int,
                "path": str},
    "dist": {"metric": str, "a": str, "b": str},
    "bench": {"count": int, "order": int, "cond_lo": float, "cond_hi": float,
              "iters": int, "seed": int, "out": str},
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def parse_config_file(path) -> dict:
    """Flat ``key = value`` lines; '#' starts a comment."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        out[key] = value
    return out


def coerce_config(sub: str, raw: dict) -> dict:
    known = CONFIG_KEYS[sub]
    out = {}
    for key, value in raw.items():
        if key not in known:
            raise UsageError(f"unknown key {key!r} for {sub!r}")
        try:
            out[key] = known[key](value)
        except ValueError as exc:
            raise UsageError(f"bad value for {key!r}: {value!r}") from exc
    return out


def dump_config(path, sub: str, cfg: dict) -> None:
    lines = [f"# effective configuration: {sub}"]
    for key in sorted(cfg):
        if cfg[key] is not None:
            lines.append(f"{key} = {cfg[key]}")
    Path(path).write_text("\n".join(lines) + "\n")


def _merge(sub: str, args: argparse.Namespace) -> dict:
    cfg = {}
    if getattr(args, "config", None):
        cfg.update(coerce_config(sub, parse_config_file(args.config)))
    for key in CONFIG_KEYS[sub]:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    return coerce_config(sub, {k: str(v) for k, v in cfg.items()})


def _build_parser() -> _Parser:
    parser = _Parser(prog="hpdnet",
                     description="HPD covariance-grid classification toolkit")
    subs = parser.add_subparsers(dest="command", required=True)

    def add(sub, **kwargs):
        p = subs.add_parser(sub, **kwargs)
        p.add_argument("--config", help="flat key=value configuration file")
        return p

    p = add("synth", help="generate a synthetic multi-look Wishart scene")
    p.add_argument("--height", type=int)
    p.add_argument("--width", type=int)
    p.add_argument("--looks", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output .pc3 path")

    p = add("train", help="train the network + head on a labeled scene")
    p.add_argument("--data", help="input .pc3 scene")
    p.add_argument("--labels", help="optional CSV label map replacing the "
                                    "one stored in the scene")
    p.add_argument("--out", help="checkpoint output path")
    p.add_argument("--history", help="per-epoch CSV (default <out>.history.csv)")
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--ratio", type=float)
    p.add_argument("--patch", type=int)
    p.add_argument("--tau", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--path", choices=("exact", "fast"))
    p.add_argument("--optimizer", choices=("adam", "sgd"))
    p.add_argument("--dims", help="comma-separated matrix orders, e.g. 3,3,3")

    p = add("eval", help="evaluate a checkpoint on the held-out split")
    p.add_argument("--data")
    p.add_argument("--labels")
    p.add_argument("--model")
    p.add_argument("--report", help="JSON report path")
    p.add_argument("--ratio", type=float)
    p.add_argument("--patch", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--path", choices=("exact", "fast"))

    p = add("predict", help="classify every pixel of a scene")
    p.add_argument("--data")
    p.add_argument("--model")
    p.add_argument("--out", help="PPM output path")
    p.add_argument("--patch", type=int)
    p.add_argument("--path", choices=("exact", "fast"))

    p = add("dist", help="distance between two HPD matrices in JSON files")
    p.add_argument("--metric",
                   choices=("euclidean", "log-euclidean", "airm"))
    p.add_argument("--a", help="first matrix JSON file")
    p.add_argument("--b", help="second matrix JSON file")

    p = add("bench", help="exact vs multiplication-only timing comparison")
    p.add_argument("--count", "--n", dest="count", type=int)
    p.add_argument("--order", type=int)
    p.add_argument("--cond-lo", dest="cond_lo", type=float)
    p.add_argument("--cond-hi", dest="cond_hi", type=float)
    p.add_argument("--iters", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="optional JSON report path")
    return parser


def _require(cfg: dict, sub: str, keys) -> None:
    missing = [k for k in keys if k not in cfg]
    if missing:
        raise UsageError(f"{sub}: missing required option(s) "
                         + ", ".join(f"--{k}" for k in missing))


def _load_matrix_json(path):
    import numpy as np
    from .linalg import HpdMatrix
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read matrix file {path}: {exc}") from exc
    if "re" not in doc:
        raise DataError(f"{path}: expected a 're' field")
    re = np.asarray(doc["re"], dtype=float)
    im = np.asarray(doc.get("im", np.zeros_like(re)), dtype=float)
    return HpdMatrix.from_z(re + 1j * im)


def _scene_with_labels(cfg):
    from .data import load_cov, load_labels_csv, with_labels
    img = load_cov(cfg["data"])
    if cfg.get("labels"):
        img = with_labels(img, load_labels_csv(cfg["labels"]))
    return img


def _cmd_synth(cfg) -> int:
    from .data import default_scene_spec, save_cov, synth_scene
    _require(cfg, "synth", ["out"])
    spec = default_scene_spec(seed=cfg.get("seed", 0),
                              height=cfg.get("height", 128),
                              width=cfg.get("width", 128),
                              looks=cfg.get("looks", 4))
    img = synth_scene(spec)
    save_cov(cfg["out"], img)
    dump_config(str(cfg["out"]) + ".config", "synth", cfg)
    print(f"wrote {img.height}x{img.width} scene with "
          f"{img.class_count} classes to {cfg['out']}", file=sys.stderr)
    return 0


def _train_config(cfg):
    from .training import TrainConfig
    kwargs = {k: cfg[k] for k in ("lr", "epochs", "batch", "ratio", "patch",
                                  "tau", "seed", "path", "optimizer")
              if k in cfg}
    if "dims" in cfg:
        kwargs["dims"] = tuple(int(d) for d in str(cfg["dims"]).split(","))
    return TrainConfig(**kwargs)


def _cmd_train(cfg) -> int:
    from .checkpoint import save_checkpoint
    from .data import extract_patches
    from .training import save_history_csv, train
    _require(cfg, "train", ["data", "out"])
    tc = _train_config(cfg)
    img = _scene_with_labels(cfg)
    train_b, _ = extract_patches(img, tc.patch, tc.ratio, tc.seed)
    print(f"training on {len(train_b)} patches "
          f"({tc.epochs} epochs, path={tc.path})", file=sys.stderr)
    params, head, history = train(tc, train_b)
    save_checkpoint(cfg["out"], params, head)
    history_path = cfg.get("history", str(cfg["out"]) + ".history.csv")
    save_history_csv(history_path, history)
    dump_config(str(cfg["out"]) + ".config", "train", cfg)
    if history:
        print(f"final epoch loss {history[-1][1]:.6f}, "
              f"train accuracy {history[-1][2]:.4f}", file=sys.stderr)
    return 0


def _cmd_eval(cfg) -> int:
    from .checkpoint import load_checkpoint
    from .data import extract_patches
    from .training import evaluate
    _require(cfg, "eval", ["data", "model", "report"])
    params, head = load_checkpoint(cfg["model"])
    img = _scene_with_labels(cfg)
    _, test_b = extract_patches(img, cfg.get("patch", 13),
                                cfg.get("ratio", 0.1), cfg.get("seed", 0))
    report = evaluate(params, head, test_b, cfg.get("path", "exact"))
    Path(cfg["report"]).write_text(report.to_json() + "\n")
    dump_config(str(cfg["report"]) + ".config", "eval", cfg)
    print(f"OA {report.oa:.4f}  AA {report.aa:.4f}  "
          f"kappa {report.kappa:.4f}", file=sys.stderr)
    return 0


def _cmd_predict(cfg) -> int:
    import numpy as np
    from .checkpoint import load_checkpoint
    from .data import load_cov
    from .training import predict_map, save_ppm
    _require(cfg, "predict", ["data", "model", "out"])
    params, head = load_checkpoint(cfg["model"])
    img = load_cov(cfg["data"])
    class_map, rgb = predict_map(params, head, img, cfg.get("patch", 13),
                                 cfg.get("path", "exact"))
    save_ppm(cfg["out"], rgb)
    classes_path = str(cfg["out"]) + ".classes.csv"
    np.savetxt(classes_path, class_map, fmt="%d", delimiter=",")
    dump_config(str(cfg["out"]) + ".config", "predict", cfg)
    print(f"wrote {cfg['out']} and {classes_path}", file=sys.stderr)
    return 0


def _cmd_dist(cfg) -> int:
    from .metrics import MetricKind, distance
    _require(cfg, "dist", ["metric", "a", "b"])
    kind = MetricKind(cfg["metric"].replace("-", "_"))
    a = _load_matrix_json(cfg["a"])
    b = _load_matrix_json(cfg["b"])
    print(f"{distance(a, b, kind):.6f}")
    return 0


def _cmd_bench(cfg) -> int:
    from .bench import bench_fastpath, format_report
    _require(cfg, "bench", ["count"])
    report = bench_fastpath(
        cfg["count"], order=cfg.get("order", 3),
        condition_range=(cfg.get("cond_lo", 1.0), cfg.get("cond_hi", 100.0)),
        ns_iters=cfg.get("iters", 14), seed=cfg.get("seed", 0))
    print(format_report(report))
    if cfg.get("out"):
        Path(cfg["out"]).write_text(json.dumps(report, indent=2) + "\n")
    return 0


_COMMANDS = {
    "synth": _cmd_synth,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "predict": _cmd_predict,
    "dist": _cmd_dist,
    "bench": _cmd_bench,
}


def run(argv) -> int:
    threads = os.environ.get("THREADS")
    if threads:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                    "MKL_NUM_THREADS"):
            os.environ.setdefault(var, threads)
    try:
        args = _build_parser().parse_args(argv)
        cfg = _merge(args.command, args)
        return _COMMANDS[args.command](cfg)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except (DataError, HpdError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
