"""Command-line entry point: ``embscope <subcommand> [flags]``.

Numeric results go to files; stdout carries a short human summary and
stderr a single ``error: <kind>: <message>`` line on failure.
Exit codes: 0 ok, 2 usage/config, 3 data, 4 numeric.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import platform
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, _kernels
from .data import SplitSpec, add_orientation_columns
from .errors import ConfigError, EmbscopeError
from .formats import infer_format, load_model, read_embeddings, read_targets, save_model, write_embeddings, write_targets
from .mining import emit_report, parse_dims, percentile_extremes, top_k_activations
from .probe import CDConfig, LinearProbe, cross_domain_eval, probe_experiment, top_coefficients
from .sae import SaeConfig, SaeModel, feature_matrix, lambda_sweep, sae_train, sweep_csv
from .synth import (
    PlantedLinearSpec,
    SuperpositionSpec,
    gen_planted_linear,
    gen_superposition,
    noise_for_snr,
    write_truth_manifest,
)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _nonneg(value: str) -> float:
    v = float(value)
    if not v >= 0:
        raise argparse.ArgumentTypeError(f"must be non-negative, got {value}")
    return v


def _floats(value: str) -> list[float]:
    try:
        return [float(v) for v in value.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {value!r}") from None


def read_config_file(path) -> dict[str, str]:
    """Flat ``key=value`` file; ``#`` starts a comment; keys use flag names."""
    out = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def _write_manifest(args, inputs, outputs, started, path=None):
    config = {k: v for k, v in vars(args).items() if k not in ("func",)}
    manifest = {
        "subcommand": args.command,
        "config": config,
        "inputs": {str(p): _sha256(p) for p in inputs},
        "outputs": [str(p) for p in outputs],
        "seed": getattr(args, "seed", None),
        "wall_clock_s": round(time.time() - started, 3),
        "version": __version__,
        "kernel_backend": _kernels.BACKEND,
        "python": platform.python_version(),
        "numpy": np.__version__,
    }
    path = Path(path or args.manifest or f"{outputs[0]}.manifest.json")
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n", encoding="utf-8")
    return path


# -- subcommands ------------------------------------------------------------------

def cmd_probe_fit(args, started):
    emb = read_embeddings(args.embeddings)
    targets = read_targets(args.targets)
    if args.orientation_column:
        targets = add_orientation_columns(targets, args.orientation_column)
    names = targets.names if args.target == ["all"] else args.target
    split = SplitSpec(args.test_frac, args.seed)
    cd = CDConfig(args.tol, args.max_sweeps)
    out = Path(args.out)
    outputs, reports = [], []

    def fit(name):
        return probe_experiment(emb, targets, name, args.reg, args.alpha, split, cd)

    if args.threads > 1 and len(names) > 1:
        # targets are independent; results are collected in input order
        with ThreadPoolExecutor(max_workers=args.threads) as pool:
            fitted = list(pool.map(fit, names))
    else:
        fitted = [fit(name) for name in names]
    for name, (report, probe) in zip(names, fitted):
        model_path = out if len(names) == 1 else out.with_name(f"{out.stem}.{name}{out.suffix}")
        save_model(probe.to_artifact(), model_path)
        report_path = Path(f"{model_path}.report.txt")
        text = report.to_text()
        if args.top_k:
            text += "top_coefficients=" + ";".join(f"{j}:{w!r}" for j, w in top_coefficients(probe, args.top_k)) + "\n"
        report_path.write_text(text, encoding="utf-8")
        outputs += [model_path, report_path]
        reports.append(report)
    _write_manifest(args, [args.embeddings, args.targets], outputs, started)
    for r in reports:
        print(f"{r.target_name}: test r={r.pearson_r_test:.4f} nonzero={r.n_nonzero}/{r.n_dims} "
              f"train={r.n_train} test={r.n_test}")


def cmd_probe_eval(args, started):
    probe = LinearProbe.from_artifact(load_model(args.model, "probe"))
    emb = read_embeddings(args.embeddings)
    targets = read_targets(args.targets)
    if args.orientation_column:
        targets = add_orientation_columns(targets, args.orientation_column)
    report = cross_domain_eval(probe, emb, targets, args.target)
    out = Path(args.out or f"{args.model}.eval.txt")
    out.write_text(report.to_text(), encoding="utf-8")
    _write_manifest(args, [args.model, args.embeddings, args.targets], [out], started)
    print(f"{report.target_name}: transfer r={report.pearson_r_test:.4f} on {report.n_test} rows")


def _sae_config(args) -> SaeConfig:
    return SaeConfig(
        expansion=args.expansion, lam=args.lam, epochs=args.epochs, batch_size=args.batch_size,
        lr=args.lr, beta1=args.beta1, beta2=args.beta2, eps=args.eps, seed=args.seed,
        normalize_decoder=not args.no_normalize_decoder, center=args.center,
        holdout_fraction=args.holdout_frac, threads=args.threads,
    )


def cmd_sae_train(args, started):
    emb = read_embeddings(args.embeddings)
    model, stats = sae_train(emb, _sae_config(args))
    save_model(model.to_artifact(), args.out)
    stats_path = Path(args.stats or f"{args.out}.stats.csv")
    stats_path.write_text(stats.to_csv(), encoding="utf-8")
    _write_manifest(args, [args.embeddings], [args.out, stats_path], started)
    f = stats.final
    print(f"sae H={model.h}: explained variance {f.explained_variance:.4f}, "
          f"mean L0 {f.avg_l0:.2f}, dead {f.dead_fraction:.3%}")


def cmd_sae_sweep(args, started):
    emb = read_embeddings(args.embeddings)
    rows = lambda_sweep(emb, _sae_config(args), args.lambdas)
    Path(args.out).write_text(sweep_csv([r for r, _ in rows]), encoding="utf-8")
    _write_manifest(args, [args.embeddings], [args.out], started)
    for r, _ in rows:
        print(f"lambda={r.lam:g}: EV={r.explained_variance:.4f} L0={r.avg_l0:.2f} dead={r.dead_fraction:.3%}")


def cmd_mine(args, started):
    emb = read_embeddings(args.embeddings)
    inputs = [args.embeddings]
    source = "embedding"
    if args.sae:
        model = SaeModel.from_artifact(load_model(args.sae, "sae"))
        emb = feature_matrix(model, emb)
        source = "sae_feature"
        inputs.append(args.sae)
    dims = parse_dims(args.dims, emb.n_dims)
    reports = []
    for dim in dims:
        if args.mode in ("percentile", "both"):
            reports.append(percentile_extremes(emb, dim, args.low_pct, args.high_pct, args.sample_k, args.seed, source))
        if args.mode in ("topk", "both"):
            reports.append(top_k_activations(emb, dim, args.top_k, source))
    emit_report(reports, args.out)
    _write_manifest(args, inputs, [args.out], started)
    print(f"wrote {len(reports)} reports over {len(dims)} {source} dimensions to {args.out}")


def cmd_synth(args, started):
    prefix = Path(args.out_prefix)
    emb_path = Path(f"{prefix}.embd")
    truth_path = Path(f"{prefix}.truth.json")
    outputs = [emb_path]
    if args.kind == "planted":
        spec = PlantedLinearSpec(n=args.n, d=args.d, s=args.s, noise_sigma=args.noise_sigma or 0.0,
                                 seed=args.seed).resolved()
        if args.snr is not None:
            spec = replace(spec, noise_sigma=noise_for_snr(spec.true_weights, args.snr))
        emb, targets, truth = gen_planted_linear(spec, args.target_name)
        tgt_path = Path(f"{prefix}.targets.csv")
        write_targets(targets, tgt_path)
        outputs.append(tgt_path)
        write_embeddings(emb, emb_path, "bin")
        write_truth_manifest(truth_path, spec, truth=truth)
    else:
        spec = SuperpositionSpec(d=args.d, k=args.k, p=args.p, n=args.n, scale_low=args.scale_low,
                                 scale_high=args.scale_high, noise_sigma=args.noise_sigma or 0.0, seed=args.seed)
        emb, dirs = gen_superposition(spec)
        write_embeddings(emb, emb_path, "bin")
        dirs_path = Path(f"{prefix}.directions.embd")
        write_truth_manifest(truth_path, spec, directions=dirs, directions_path=dirs_path)
        outputs.append(dirs_path)
    outputs.append(truth_path)
    _write_manifest(args, [], outputs, started)
    print(f"wrote {emb.n_rows}x{emb.n_dims} {args.kind} embeddings to {emb_path}")


def cmd_convert(args, started):
    src_fmt = args.from_format or infer_format(args.input)
    dst_fmt = args.to_format or infer_format(args.output)
    emb = read_embeddings(args.input, src_fmt)
    write_embeddings(emb, args.output, dst_fmt)
    _write_manifest(args, [args.input], [args.output], started)
    print(f"converted {emb.n_rows}x{emb.n_dims} {src_fmt} -> {dst_fmt}")


# -- parser -------------------------------------------------------------------------

def _add_sae_flags(p):
    p.add_argument("--embeddings", required=True, help="embedding file (.csv or binary)")
    p.add_argument("--config", help="key=value file; explicit flags override it")
    p.add_argument("--expansion", type=int, default=8, help="hidden width = expansion x D")
    p.add_argument("--lambda", dest="lam", type=_nonneg, default=0.5, help="L1 penalty weight")
    p.add_argument("--epochs", type=int, default=20, help="passes over the training rows")
    p.add_argument("--batch-size", type=int, default=256, help="rows per Adam step")
    p.add_argument("--lr", type=float, default=1e-3, help="Adam learning rate")
    p.add_argument("--beta1", type=float, default=0.9, help="Adam first-moment decay")
    p.add_argument("--beta2", type=float, default=0.999, help="Adam second-moment decay")
    p.add_argument("--eps", type=float, default=1e-8, help="Adam denominator epsilon")
    p.add_argument("--holdout-frac", type=float, default=0.1, help="rows held out for statistics")
    p.add_argument("--no-normalize-decoder", action="store_true", help="disable unit-norm decoder rows")
    p.add_argument("--center", action="store_true", help="initialise the decoder bias at the data mean")
    p.add_argument("--threads", type=int, default=1, help="gradient workers; 1 is fully deterministic")
    p.add_argument("--seed", type=int, default=0, help="random seed")
    p.add_argument("--manifest", help="run manifest path (default <out>.manifest.json)")


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = _Parser(prog="embscope", formatter_class=fmt,
                     description="Linear probes, sparse autoencoders and activation mining for embedding matrices.")
    parser.add_argument("--version", action="version", version=f"embscope {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("probe-fit", help="fit L1/L2 probes and report test Pearson r", formatter_class=fmt)
    p.add_argument("--embeddings", required=True, help="embedding file (.csv or binary)")
    p.add_argument("--targets", required=True, help="targets CSV with an 'id' column")
    p.add_argument("--target", action="append", required=True, help="target column; repeat, or 'all'")
    p.add_argument("--reg", type=str.upper, choices=["L1", "L2"], default="L1", help="penalty: L1 (lasso) or L2 (ridge)")
    p.add_argument("--alpha", type=_nonneg, default=0.1, help="per-sample penalty weight")
    p.add_argument("--test-frac", type=float, default=0.2, help="fraction of usable rows held out for testing")
    p.add_argument("--seed", type=int, default=0, help="random seed")
    p.add_argument("--tol", type=float, default=1e-6, help="coordinate-descent tolerance")
    p.add_argument("--max-sweeps", type=int, default=1000, help="coordinate-descent sweep cap")
    p.add_argument("--orientation-column", help="angle column (degrees) to expand into _cos/_sin targets")
    p.add_argument("--top-k", type=int, default=0, help="append the k largest coefficients to the report")
    p.add_argument("--threads", type=int, default=1, help="targets fitted concurrently; results are identical for any value")
    p.add_argument("--out", required=True, help="model path; one file per target when fitting several")
    p.add_argument("--manifest", help="run manifest path (default <out>.manifest.json)")
    p.set_defaults(func=cmd_probe_fit)

    p = sub.add_parser("probe-eval", help="evaluate a frozen probe on another dataset", formatter_class=fmt)
    p.add_argument("--model", required=True, help="probe model file")
    p.add_argument("--embeddings", required=True, help="embedding file (.csv or binary)")
    p.add_argument("--targets", required=True, help="targets CSV with an 'id' column")
    p.add_argument("--target", help="target column (default: the probe's own target)")
    p.add_argument("--orientation-column", help="angle column (degrees) to expand into _cos/_sin targets")
    p.add_argument("--out", help="report path (default <model>.eval.txt)")
    p.add_argument("--seed", type=int, default=0, help="unused; evaluation is deterministic")
    p.add_argument("--manifest", help="run manifest path (default <out>.manifest.json)")
    p.set_defaults(func=cmd_probe_eval)

    p = sub.add_parser("sae-train", help="train a sparse autoencoder", formatter_class=fmt)
    _add_sae_flags(p)
    p.add_argument("--out", required=True, help="model path")
    p.add_argument("--stats", help="per-epoch stats CSV (default <out>.stats.csv)")
    p.set_defaults(func=cmd_sae_train)

    p = sub.add_parser("sae-sweep", help="train one SAE per lambda and tabulate", formatter_class=fmt)
    _add_sae_flags(p)
    p.add_argument("--lambdas", type=_floats, default=[0.1, 0.5, 2.0], help="comma-separated lambdas")
    p.add_argument("--out", required=True, help="sweep CSV path")
    p.set_defaults(func=cmd_sae_sweep)

    p = sub.add_parser("mine", help="rank samples by activation per dimension", formatter_class=fmt)
    p.add_argument("--embeddings", required=True, help="embedding file (.csv or binary)")
    p.add_argument("--sae", help="SAE model; mine its features instead of raw dimensions")
    p.add_argument("--dims", default="all", help="'all' or e.g. '0,5,10-12'")
    p.add_argument("--mode", choices=["percentile", "topk", "both"], default="both", help="selection protocol")
    p.add_argument("--low-pct", type=float, default=5.0, help="low tail size in percent")
    p.add_argument("--high-pct", type=float, default=5.0, help="high tail size in percent")
    p.add_argument("--sample-k", type=int, default=3, help="ids sampled from each tail")
    p.add_argument("--top-k", type=int, default=16, help="samples listed by top-k mode")
    p.add_argument("--seed", type=int, default=0, help="random seed")
    p.add_argument("--threads", type=int, default=1, help="accepted for uniformity; mining is sequential")
    p.add_argument("--out", required=True, help="JSON-lines manifest")
    p.add_argument("--manifest", help="run manifest path (default <out>.manifest.json)")
    p.set_defaults(func=cmd_mine)

    p = sub.add_parser("synth", help="generate synthetic data with planted ground truth", formatter_class=fmt)
    p.add_argument("--kind", choices=["planted", "superposition"], required=True, help="generator")
    p.add_argument("--n", type=int, default=10_000, help="number of samples")
    p.add_argument("--d", type=int, default=64, help="embedding dimension")
    p.add_argument("--s", type=int, default=8, help="planted: support size")
    p.add_argument("--snr", type=float, help="planted: signal/noise variance ratio (overrides --noise-sigma)")
    p.add_argument("--noise-sigma", type=_nonneg, default=0.0, help="additive Gaussian noise std")
    p.add_argument("--target-name", default="y", help="planted: target column name")
    p.add_argument("--k", type=int, default=256, help="superposition: number of true features")
    p.add_argument("--p", type=float, default=0.02, help="superposition: activation probability")
    p.add_argument("--scale-low", type=float, default=0.0, help="superposition: lower bound of active magnitudes")
    p.add_argument("--scale-high", type=float, default=1.0, help="superposition: upper bound of active magnitudes")
    p.add_argument("--seed", type=int, default=0, help="random seed")
    p.add_argument("--out-prefix", required=True, help="writes <prefix>.embd, <prefix>.truth.json, ...")
    p.add_argument("--manifest", help="run manifest path (default <out>.manifest.json)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("convert", help="convert embeddings between CSV and binary", formatter_class=fmt)
    p.add_argument("--input", required=True, help="source embedding file")
    p.add_argument("--output", required=True, help="destination embedding file")
    p.add_argument("--from", dest="from_format", choices=["bin", "csv"], help="source format; inferred from the suffix when omitted")
    p.add_argument("--to", dest="to_format", choices=["bin", "csv"], help="destination format; inferred from the suffix when omitted")
    p.add_argument("--seed", type=int, default=0, help="unused; conversion is deterministic")
    p.add_argument("--manifest", help="run manifest path (default <out>.manifest.json)")
    p.set_defaults(func=cmd_convert)
    return parser


def parse_args(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        cfg = read_config_file(args.config)
        if "lambda" in cfg:
            cfg["lam"] = cfg.pop("lambda")
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest: a for a in sub._actions}
        unknown = sorted(set(cfg) - set(known))
        if unknown:
            raise UsageError(f"{args.config}: unknown key(s) {', '.join(unknown)}")
        defaults = {}
        for key, raw in cfg.items():
            action = known[key]
            if isinstance(action, argparse._StoreTrueAction):
                defaults[key] = raw.lower() in ("1", "true", "yes", "on")
            elif action.type is not None:
                try:
                    defaults[key] = action.type(raw)
                except (ValueError, argparse.ArgumentTypeError) as exc:
                    raise UsageError(f"{args.config}: bad value for {key}: {exc}") from None
            else:
                defaults[key] = raw
        sub.set_defaults(**defaults)
        args = parser.parse_args(argv)
    _check_args(args)
    return args


def _check_args(args):
    if getattr(args, "test_frac", None) is not None and not 0 < args.test_frac < 1:
        raise ConfigError(f"--test-frac must lie in (0, 1), got {args.test_frac}")
    if getattr(args, "threads", 1) < 1:
        raise ConfigError("--threads must be >= 1")
    if getattr(args, "seed", 0) is not None and args.seed < 0:
        raise ConfigError("--seed must be non-negative")


def main(argv=None) -> int:
    started = time.time()
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parse_args(argv)
        args.func(args, started)
    except UsageError as exc:
        print(f"error: usage: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except EmbscopeError as exc:
        kind = type(exc).__name__
        print(f"error: {kind}: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"error: FileNotFound: {exc.filename}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"error: OSError: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
