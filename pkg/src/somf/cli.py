"""Command-line front end: ``somf run|bench|extract|synth``.

Exit codes: 0 success, 2 invalid configuration or arguments, 3 I/O
failure (missing or malformed files, unwritable outputs).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from .bench import VARIANTS, run_bench, write_curves, write_report, write_trace
from .data import (
    NORMALIZE_MODES,
    MatrixFileError,
    extract_patches,
    load_data,
    load_volume,
    make_synthetic,
    normalize_samples,
    save_matrix,
)
from .driver import ConfigError, FactorizationConfig, OnlineFactorizer

EXIT_OK, EXIT_CONFIG, EXIT_IO = 0, 2, 3

# flag -> config key; every flag defaults to None so unset flags never
# override the config file
CONFIG_FLAGS = {
    "algorithm": str, "k": int, "reduction": float, "lambda": float,
    "code_l1_ratio": float, "dict_l1_ratio": float, "v_weight": float,
    "batch_size": int, "epochs": int, "seed": int, "eval_subset": int,
    "code_tol": float, "code_max_sweeps": int, "dict_passes": int, "n_records": int,
}
BOOL_FLAGS = ("pipelined", "no_averaging", "mask_per_sample", "allow_invalid_schedule")
EXTRA_KEYS = ("data", "normalize")


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _add_config_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON file of configuration keys")
    p.add_argument("--data", help="input matrix (.somfmat or .csv), p x n")
    p.add_argument("--normalize", choices=NORMALIZE_MODES, default=None,
                   help="per-sample preprocessing (default center_l2)")
    for key, typ in CONFIG_FLAGS.items():
        p.add_argument("--" + key.replace("_", "-"), dest=key, type=typ, default=None)
    for key in BOOL_FLAGS:
        p.add_argument("--" + key.replace("_", "-"), dest=key, action="store_true", default=None)
    p.add_argument("--out", default=".", help="output directory")


def _effective_config(args) -> tuple[FactorizationConfig, dict]:
    values = {}
    if args.config:
        try:
            with open(args.config) as fh:
                values = json.load(fh)
        except OSError as exc:
            raise CliError(EXIT_IO, f"cannot read config {args.config}: {exc.strerror}")
        except json.JSONDecodeError as exc:
            raise CliError(EXIT_CONFIG, f"config {args.config}: invalid JSON ({exc})")
        if not isinstance(values, dict):
            raise CliError(EXIT_CONFIG, f"config {args.config}: expected a JSON object")
    for key in list(CONFIG_FLAGS) + list(BOOL_FLAGS) + list(EXTRA_KEYS):
        value = getattr(args, key, None)
        if value is not None:
            values[key] = value
    extras = {"data": values.pop("data", None), "normalize": values.pop("normalize", "center_l2")}
    if extras["normalize"] not in NORMALIZE_MODES:
        raise CliError(EXIT_CONFIG, f"normalize: must be one of {NORMALIZE_MODES}")
    try:
        cfg = FactorizationConfig.from_mapping(values).validated()
    except ConfigError as exc:
        raise CliError(EXIT_CONFIG, f"invalid config field {exc}")
    except TypeError as exc:
        raise CliError(EXIT_CONFIG, f"invalid config: {exc}")
    return cfg, extras


def _load(extras):
    path = extras["data"]
    if not path:
        raise CliError(EXIT_CONFIG, "data: no input matrix given (--data or config key 'data')")
    try:
        X = load_data(path)
    except FileNotFoundError:
        raise CliError(EXIT_IO, f"data file not found: {path}")
    except (OSError, MatrixFileError, ValueError) as exc:
        raise CliError(EXIT_IO, f"cannot load {path}: {exc}")
    return normalize_samples(X, extras["normalize"])


def _outdir(path):
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot create output directory {path}: {exc.strerror}")
    return path


def cmd_run(args) -> int:
    cfg, extras = _effective_config(args)
    X = _load(extras)
    out = _outdir(args.out)
    try:
        if args.resume:
            model = OnlineFactorizer.from_checkpoint(args.resume, X, epochs=cfg.epochs)
        else:
            model = OnlineFactorizer(X, cfg)
    except ConfigError as exc:
        raise CliError(EXIT_CONFIG, f"invalid config field {exc}")
    except (OSError, ValueError) as exc:
        raise CliError(EXIT_IO, f"cannot resume from {args.resume}: {exc}")
    dictionary, trace = model.run()
    header = dict(model.config.to_mapping(), **extras)
    try:
        write_trace(trace, os.path.join(out, args.trace), header)
        if args.save_dictionary:
            save_matrix(dictionary.D, os.path.join(out, args.save_dictionary))
        if args.checkpoint:
            model.save_checkpoint(os.path.join(out, args.checkpoint))
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot write outputs to {out}: {exc.strerror}")
    last = trace.records[-1]
    print(f"{model.config.algorithm}: t={last.t} f_bar={last.f_bar:.6g} "
          f"touched={last.touched_coords} seconds={last.seconds:.3f}")
    return EXIT_OK


def cmd_bench(args) -> int:
    cfg, extras = _effective_config(args)
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    unknown = [v for v in variants if v not in VARIANTS]
    if unknown:
        raise CliError(EXIT_CONFIG, f"variants: unknown {unknown}; choose from {sorted(VARIANTS)}")
    if len(set(variants)) < 2:
        raise CliError(EXIT_CONFIG, "variants: need at least two distinct variants")
    X = _load(extras)
    out = _outdir(args.out)
    rows, traces = run_bench(X, cfg, variants)
    try:
        write_report(rows, os.path.join(out, "report.csv"))
        write_curves(traces, os.path.join(out, "curves.csv"))
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot write outputs to {out}: {exc.strerror}")
    for row in rows:
        print(f"{row.variant:>18}  f_bar={row.final_f_bar:.6g}  touched={row.touched_coords}  "
              f"speedup(coords)={row.speedup_coords:.3f}  speedup(wall)={row.speedup_seconds:.3f}")
    return EXIT_OK


def cmd_extract(args) -> int:
    try:
        volume = load_volume(args.volume)
    except FileNotFoundError:
        raise CliError(EXIT_IO, f"volume file not found: {args.volume}")
    except (OSError, MatrixFileError, ValueError) as exc:
        raise CliError(EXIT_IO, f"malformed volume {args.volume}: {exc}")
    try:
        X = extract_patches(volume, args.patch, args.patch_width, args.stride)
    except ValueError as exc:
        raise CliError(EXIT_CONFIG, f"patch: {exc}")
    X = normalize_samples(X, args.normalize)
    try:
        save_matrix(X, args.out)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot write {args.out}: {exc.strerror}")
    print(f"wrote {X.shape[0]}x{X.shape[1]} matrix to {args.out}")
    return EXIT_OK


def cmd_synth(args) -> int:
    for name in ("p_base", "n", "k_true", "duplication"):
        if getattr(args, name) < 1:
            raise CliError(EXIT_CONFIG, f"{name}: must be a positive integer")
    X = make_synthetic(args.p_base, args.n, args.k_true, args.duplication,
                       args.noise, args.density, args.seed)
    try:
        save_matrix(X, args.out)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot write {args.out}: {exc.strerror}")
    print(f"wrote {X.shape[0]}x{X.shape[1]} matrix to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="somf", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one algorithm and write trace.csv")
    _add_config_flags(run)
    run.add_argument("--trace", default="trace.csv", help="trace file name inside --out")
    run.add_argument("--save-dictionary", help="also write the final dictionary (matrix file) inside --out")
    run.add_argument("--checkpoint", help="write a resumable checkpoint inside --out")
    run.add_argument("--resume", help="continue from a checkpoint up to --epochs")
    run.set_defaults(func=cmd_run)

    bench = sub.add_parser("bench", help="compare variants on shared data and seed")
    _add_config_flags(bench)
    bench.add_argument("--variants", default="omf,somf,somf-no-averaging",
                       help=f"comma-separated subset of {','.join(VARIANTS)}")
    bench.set_defaults(func=cmd_bench)

    ext = sub.add_parser("extract", help="extract normalized patches from a raw volume")
    ext.add_argument("--volume", required=True)
    ext.add_argument("--patch", type=int, required=True, help="patch height (and width unless --patch-width)")
    ext.add_argument("--patch-width", type=int, default=None)
    ext.add_argument("--stride", type=int, default=1)
    ext.add_argument("--normalize", choices=NORMALIZE_MODES, default="center_l2")
    ext.add_argument("--out", required=True)
    ext.set_defaults(func=cmd_extract)

    syn = sub.add_parser("synth", help="write a synthetic low-rank matrix with duplicated rows")
    syn.add_argument("--p-base", type=int, default=500)
    syn.add_argument("--duplication", type=int, default=4)
    syn.add_argument("--n", type=int, default=2000)
    syn.add_argument("--k-true", type=int, default=32)
    syn.add_argument("--noise", type=float, default=0.1)
    syn.add_argument("--density", type=float, default=0.3)
    syn.add_argument("--seed", type=int, default=0)
    syn.add_argument("--out", required=True)
    syn.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    threads = os.environ.get("SOMF_THREADS")
    if threads is not None and not threads.isdigit():
        print("error: SOMF_THREADS must be a positive integer", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
