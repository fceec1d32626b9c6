"""Command-line surface: one binary, subcommands for every experiment.

Machine-readable output (JSON/CSV) goes to standard output or to --out files;
human diagnostics go to standard error. Exit codes: 0 success, 1 runtime or
numerical failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import geometry, io, nn
from .gradcheck import reports_to_json, run_gradcheck
from .pooling import NormalizationSpec, Variant

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2


def _positive_float(text: str) -> float:
    value = float(text)
    if value <= 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {text}")
    return value


def _alpha_list(text: str) -> list[float]:
    return [_positive_float(t) for t in text.split(",") if t]


def _lambda_grid(text: str) -> np.ndarray:
    # lo:hi:log:count or lo:hi:lin:count
    parts = text.split(":")
    if len(parts) != 4 or parts[2] not in ("log", "lin"):
        raise argparse.ArgumentTypeError(
            f"grid must look like 1e-5:10:log:200, got {text!r}"
        )
    lo, hi, count = float(parts[0]), float(parts[1]), int(parts[3])
    if count < 2 or lo <= 0 or hi <= lo:
        raise argparse.ArgumentTypeError(f"bad grid bounds {text!r}")
    if parts[2] == "log":
        return np.logspace(np.log10(lo), np.log10(hi), count)
    return np.linspace(lo, hi, count)


def _maybe_limit_threads():
    cap = os.environ.get("COVPOOL_THREADS")
    if cap:
        try:
            import numba

            numba.set_num_threads(max(1, int(cap)))
        except (ValueError, ImportError):
            pass


def _emit(text: str, out: str | None, figure_cb=None, no_figures=False):
    if out is None:
        sys.stdout.write(text)
        return
    io.atomic_write_text(out, text)
    if figure_cb is not None and not no_figures:
        figure_cb(Path(out).with_suffix(".png"))


# ---------------------------------------------------------------------------
# Subcommands


def cmd_gradcheck(args) -> int:
    variants = list(Variant) if args.variant == "all" else [Variant(args.variant)]
    reports = []
    for variant in variants:
        spec = NormalizationSpec(variant=variant, alpha=args.alpha)
        f32 = args.precision == "f32"
        reports.append(
            run_gradcheck(
                spec,
                d=args.d,
                n=args.n,
                seed=args.seed,
                threshold=2e-2 if f32 else 1e-5,
                h=1e-2 if f32 else None,
                dtype=np.float32 if f32 else np.float64,
            )
        )
    _emit(reports_to_json(reports) + "\n", args.out)
    failed = [r for r in reports if not r.passed]
    for r in failed:
        print(f"FAIL {r.variant} alpha={r.alpha} max_rel_err={r.max_rel_err:.3e}", file=sys.stderr)
    return EXIT_OK if not failed else EXIT_RUNTIME


def _load_experiment(config_path: str):
    with open(config_path) as f:
        cfg = json.load(f)
    net_cfg = nn.NetworkConfig.from_dict(cfg.get("network", {}))
    train_cfg = nn.TrainConfig.from_dict(cfg.get("train", {}))
    data_spec = nn.SyntheticSpec.from_dict(cfg.get("data", {}))
    return net_cfg, train_cfg, data_spec


def cmd_train(args) -> int:
    try:
        net_cfg, train_cfg, data_spec = _load_experiment(args.config)
    except (OSError, json.JSONDecodeError, ValueError, TypeError) as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.epochs is not None:
        train_cfg = nn.TrainConfig.from_dict({**train_cfg.to_dict(), "epochs": args.epochs})
    warm_source = None
    if train_cfg.init == "warm":
        if not train_cfg.warm_source:
            print("warm init requires train.warm_source", file=sys.stderr)
            return EXIT_USAGE
        warm_source = io.load_checkpoint(train_cfg.warm_source)
    data = nn.generate_synthetic(data_spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        if train_cfg.epochs == 0:
            net = nn.Network(net_cfg)
            if warm_source is not None:
                nn.warm_init(net, warm_source, epochs=1)
            checkpoint = {
                "net_cfg": net_cfg.to_dict(),
                "epoch": 0,
                "params": net.params(),
                "rng_state": {"generator": "pcg64", "master_seed": net_cfg.seed},
            }
            history = []
        else:
            checkpoint, history = nn.train(net_cfg, train_cfg, data, warm_source=warm_source)
    except nn.NonFiniteGradientError as exc:
        print(f"training failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    io.save_checkpoint(
        out / "checkpoint.json",
        checkpoint["net_cfg"],
        checkpoint["params"],
        checkpoint["epoch"],
        checkpoint["rng_state"],
    )
    io.atomic_write_text(out / "history.csv", nn.history_csv(history))
    if history and not args.no_figures:
        from .plots import save_history_figure

        save_history_figure(history, out / "history.png")
    return EXIT_OK


def cmd_eval(args) -> int:
    try:
        doc = io.load_checkpoint(args.checkpoint)
        with open(args.data) as f:
            data_cfg = json.load(f)
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        print(f"cannot load inputs: {exc}", file=sys.stderr)
        return EXIT_USAGE
    data_spec = nn.SyntheticSpec.from_dict(data_cfg.get("data", data_cfg))
    _, (test_x, test_y) = nn.generate_synthetic(data_spec)
    net = nn.network_from_checkpoint(doc)
    top1, per_class = nn.evaluate(net, test_x, test_y)
    result = {"top1_error": top1, "per_class": per_class.tolist()}
    _emit(json.dumps(result, indent=2, sort_keys=True) + "\n", args.out)
    return EXIT_OK


def cmd_metric(args) -> int:
    rng = np.random.default_rng(np.random.SeedSequence((args.seed, 30)))
    d = args.d

    def random_spd():
        q, _ = np.linalg.qr(rng.standard_normal((d, d)))
        lam = np.exp(rng.uniform(-1.5, 1.5, size=d))
        return (q * lam) @ q.T

    p1, p2 = random_spd(), random_spd()
    log_e = geometry.log_euclidean_dist(p1, p2)
    lines = ["alpha,pow_e,log_e,rel_gap"]
    pow_vals = []
    for alpha in args.alpha:
        pow_e = geometry.pow_euclidean_dist(p1, p2, alpha)
        pow_vals.append(pow_e)
        rel_gap = abs(pow_e - log_e) / log_e
        lines.append(f"{alpha!r},{pow_e!r},{log_e!r},{rel_gap!r}")
    text = "\n".join(lines) + "\n"

    def fig(path):
        from .plots import save_metric_figure

        save_metric_figure(args.alpha, pow_vals, log_e, path)

    _emit(text, args.out, figure_cb=fig, no_figures=args.no_figures)
    return EXIT_OK


def cmd_spectrum(args) -> int:
    try:
        tensor = io.read_tensor(args.input)
    except (OSError, io.TensorFileError) as exc:
        print(f"cannot read {args.input}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    if tensor.ndim == 2:
        tensor = tensor[None]
    if tensor.ndim != 3:
        print(f"expected a (matrices, d, N) tensor, got shape {tensor.shape}", file=sys.stderr)
        return EXIT_RUNTIME
    hist = geometry.spectrum_histogram(
        (m for m in tensor.astype(np.float64)), bins=args.bins
    )

    def fig(path):
        from .plots import save_spectrum_figure

        save_spectrum_figure(hist, path)

    _emit(hist.to_csv(), args.out, figure_cb=fig, no_figures=args.no_figures)
    return EXIT_OK


def cmd_shrinkage(args) -> int:
    rows = geometry.shrinkage_table(args.lambda_grid)

    def fig(path):
        from .plots import save_shrinkage_figure

        save_shrinkage_figure(rows, path)

    _emit(geometry.shrinkage_csv(rows), args.out, figure_cb=fig, no_figures=args.no_figures)
    return EXIT_OK


def cmd_sweep(args) -> int:
    try:
        net_cfg, train_cfg, data_spec = _load_experiment(args.config)
    except (OSError, json.JSONDecodeError, ValueError, TypeError) as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if not net_cfg.is_second_order:
        print("sweep requires a covariance-pooling network config", file=sys.stderr)
        return EXIT_USAGE
    lines = ["alpha,seed,test_err"]
    means = []
    for alpha in args.alpha:
        errs = []
        for seed in range(args.seeds):
            cfg_net = nn.NetworkConfig.from_dict(
                {**net_cfg.to_dict(), "seed": seed,
                 "pooling": {**net_cfg.to_dict()["pooling"], "alpha": alpha}}
            )
            spec = nn.SyntheticSpec.from_dict({**data_spec.to_dict(), "seed": seed})
            data = nn.generate_synthetic(spec)
            _, history = nn.train(cfg_net, train_cfg, data)
            err = history[-1][4]
            errs.append(err)
            lines.append(f"{alpha!r},{seed},{err!r}")
        means.append(float(np.mean(errs)))
        print(f"alpha={alpha}: mean test error {means[-1]:.4f}", file=sys.stderr)
    text = "\n".join(lines) + "\n"

    def fig(path):
        from .plots import save_sweep_figure

        save_sweep_figure(args.alpha, means, path)

    _emit(text, args.out, figure_cb=fig, no_figures=args.no_figures)
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="covpool",
        description="Covariance pooling experiments: gradient checks, SPD metrics, toy training.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gradcheck", help="finite-difference check of the analytic backward")
    p.add_argument("--variant", default="mpn",
                   choices=[v.value for v in Variant] + ["all"])
    p.add_argument("--alpha", type=_positive_float, default=0.5)
    p.add_argument("--d", type=int, default=8)
    p.add_argument("--n", type=int, default=12)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--precision", choices=["f32", "f64"], default="f64")
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("train", help="train on the synthetic covariance task")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on regenerated data")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("metric", help="power-Euclidean vs log-Euclidean convergence")
    p.add_argument("--alpha", type=_alpha_list, default=[0.1, 0.01, 0.001])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--d", type=int, default=8)
    p.add_argument("--out", default=None)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(fn=cmd_metric)

    p = sub.add_parser("spectrum", help="eigenvalue histogram of covariance spectra")
    p.add_argument("--input", required=True)
    p.add_argument("--bins", type=int, default=100)
    p.add_argument("--out", default=None)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(fn=cmd_spectrum)

    p = sub.add_parser("shrinkage", help="tabulate sqrt/log normalizations")
    p.add_argument("--lambda-grid", type=_lambda_grid, default="1e-5:10:log:200",
                   dest="lambda_grid")
    p.add_argument("--out", default=None)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(fn=cmd_shrinkage)

    p = sub.add_parser("sweep", help="power-exponent sweep on the toy task")
    p.add_argument("--config", required=True)
    p.add_argument("--alpha", type=_alpha_list, default=[0.5, 1.0, 1.5])
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--out", default=None)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(fn=cmd_sweep)

    return parser


def main(argv=None) -> int:
    _maybe_limit_threads()
    parser = build_parser()
    args = parser.parse_args(argv)
    if isinstance(getattr(args, "lambda_grid", None), str):
        args.lambda_grid = _lambda_grid(args.lambda_grid)
    try:
        return args.fn(args)
    except Exception as exc:  # runtime failures map to exit code 1
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
