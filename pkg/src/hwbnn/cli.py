"""Command-line front end.

Exit codes: 0 success, 2 a validation warning is present, 3 usage or input
errors, 4 runtime failures (e.g. a diverged training run).
"""
from __future__ import annotations

import argparse
import json
import sys
from fractions import Fraction

import numpy as np

from . import bnn, grng, stats
from .fxp import FixedSpec, spec_for_bits
from .io import (FormatError, load_dataset, quantize_params, read_any_params, read_params,
                 write_params, write_quant)
from .rlf import RlfArray
from .train import TrainConfig, TrainingDiverged, fnn_predict, load_defaults, train_bbb, train_fnn_dropout

EXIT_OK, EXIT_WARN, EXIT_USAGE, EXIT_RUNTIME = 0, 2, 3, 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; 2 is reserved for validation warnings here
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _fraction(text: str) -> float:
    try:
        return float(Fraction(text))
    except (ValueError, ZeroDivisionError):
        raise argparse.ArgumentTypeError(f"not a fraction: {text!r}") from None


def _int_list(text: str):
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated integer list: {text!r}") from None


def _emit(report: dict, args):
    if args.json:
        json.dump(report, sys.stdout, indent=2, sort_keys=True, default=_jsonable)
        sys.stdout.write("\n")


def _jsonable(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, FixedSpec):
        return str(o)
    raise TypeError(f"not serializable: {type(o)}")


def _spec(bits: int, frac: int | None) -> FixedSpec:
    return spec_for_bits(bits) if frac is None else FixedSpec(bits, frac)


def _limit(ds, n):
    if n is not None and n < len(ds):
        return ds.X[:n], ds.y[:n]
    return ds.X, ds.y


# -- gen ------------------------------------------------------------------------

def cmd_gen(args):
    if args.grng == "rlf":
        arr = RlfArray(args.lanes, args.seed)
        out = arr.generate(args.count, raw=args.raw_sums)
        if args.dump_state:
            with open(args.dump_state, "w") as f:
                f.write(arr.engine.dump_state())
        variant, opts = "rlf", {"lanes": args.lanes}
    else:
        variant = args.variant
        if args.raw_sums or args.dump_state:
            raise UsageError("--raw-sums and --dump-state apply to --grng rlf only")
        kind = {"ring": "wallace"}.get(variant, variant)
        opts = dict(grng.STREAM_DEFAULTS[kind])
        for key in opts:
            if getattr(args, key) is not None:
                opts[key] = getattr(args, key)
        out = grng.make_stream(kind, args.count, args.seed, **opts)
    cfg = {"grng": args.grng, "variant": variant, "count": args.count, "seed": args.seed,
           "raw_sums": args.raw_sums, **opts}
    if args.json:
        _emit({"config": cfg, "samples": out}, args)
    else:
        fmt = "{:d}" if args.raw_sums else "{:.17g}"
        sys.stdout.write("".join(fmt.format(v) + "\n" for v in out.tolist()))
    return EXIT_OK


# -- stats ----------------------------------------------------------------------

def stream_fn(args):
    kind = args.grng
    cfg = dict(grng.STREAM_DEFAULTS[kind])
    for key in cfg:
        if getattr(args, key) is not None:
            cfg[key] = getattr(args, key)
    return lambda count, seed: grng.make_stream(kind, count, seed, **cfg), cfg


def cmd_stats(args):
    fn, gen_cfg = stream_fn(args)
    seeds = stats.trial_seeds(args.seed, args.trials)
    stab, passed = [], 0
    for s in seeds:
        x = fn(args.samples, s)
        stab.append(stats.stability(x))
        passed += stats.runs_test(x, args.alpha).passed
    report = {
        "config": {"grng": args.grng, "samples": args.samples, "trials": args.trials,
                   "alpha": args.alpha, "seed": args.seed, **gen_cfg},
        "stability": stab[0].to_dict(),
        "stability_mean": {"mu_error": float(np.mean([r.mu_error for r in stab])),
                           "sigma_error": float(np.mean([r.sigma_error for r in stab]))},
        "pass_rate": passed / args.trials,
    }
    if args.grng == "rlf":
        sums = grng.raw_sum_stream(args.samples, seeds[0], args.lanes)
        report["binomial_gof_p"] = stats.binomial_gof(sums, 255)
    if not args.json:
        print(f"{args.grng}: mu_error {report['stability']['mu_error']:.6f} "
              f"sigma_error {report['stability']['sigma_error']:.6f} "
              f"pass_rate {report['pass_rate']:.3f}")
    _emit(report, args)
    return EXIT_OK


# -- train / quantize / infer -----------------------------------------------------

def _train_cfg(args) -> TrainConfig:
    return TrainConfig.from_defaults(
        epochs=args.epochs, batch_size=args.batch_size, learning_rate=args.lr,
        prior_std=args.prior_std, kl_weight=args.kl_weight, data_fraction=args.fraction,
        dropout=args.dropout, seed=args.seed)


def cmd_train(args):
    ds = load_dataset(args.dataset, "train")
    topo = bnn.NetworkTopology.parse(args.topology)
    cfg = _train_cfg(args)
    history = []
    if args.fnn:
        fp = train_fnn_dropout(ds.X, ds.y, topo, cfg, history)
        params = fp.as_variational()
    else:
        params = train_bbb(ds.X, ds.y, topo, cfg, history)
    write_params(args.out, params)
    report = {"config": {"dataset": args.dataset, "topology": str(topo), "fnn": args.fnn,
                         **cfg.to_dict()},
              "train_examples": len(ds), "epoch_loss": history}
    if not args.json:
        print(f"trained {'fnn' if args.fnn else 'bnn'} {topo}: final loss {history[-1]:.4f} -> {args.out}")
    _emit(report, args)
    return EXIT_OK


def cmd_quantize(args):
    params = read_params(args.params)
    spec = _spec(args.bits, args.frac)
    qp = quantize_params(params, spec)
    write_quant(args.out, qp)
    report = {"config": {"params": args.params, "spec": str(spec)}, "max_error": qp.max_error}
    if not args.json:
        print(f"quantized to {spec}: max error {max(qp.max_error.values()):.6g} -> {args.out}")
    _emit(report, args)
    return EXIT_OK


def _load_for_inference(path, quant, frac):
    params = read_any_params(path)
    if isinstance(params, bnn.QuantizedParams):
        return params
    if quant:
        return quantize_params(params, _spec(quant, frac))
    return params


def cmd_infer(args):
    params = _load_for_inference(args.params, args.quant, args.frac)
    ds = load_dataset(args.dataset, "test")
    X, y = _limit(ds, args.limit)
    pred, _ = bnn.predict(params, X, args.mc, args.grng, args.seed, args.threads)
    spec = params.spec if isinstance(params, bnn.QuantizedParams) else None
    report = {"config": {"params": args.params, "dataset": args.dataset, "mc": args.mc,
                         "grng": args.grng, "spec": str(spec) if spec else "float",
                         "seed": args.seed, "images": len(y)},
              "accuracy": float(np.mean(pred == y))}
    if not args.json:
        print(f"accuracy {report['accuracy']:.4f} on {len(y)} images ({report['config']['spec']}, {args.grng})")
    _emit(report, args)
    return EXIT_OK


# -- validate-config / sweep / experiment -------------------------------------------

def cmd_validate(args):
    cfg = bnn.PEConfig(args.T, args.S, args.N, args.B, args.maxws, args.M)
    topo = bnn.NetworkTopology.parse(args.topology)
    diags = bnn.validate_config(cfg, topo)
    report = {"config": {"T": args.T, "S": args.S, "N": args.N, "B": args.B, "MaxWS": args.maxws,
                         "M": cfg.pes, "topology": str(topo), "MinIn": topo.min_fan_in},
              "constraints": [d.to_dict() for d in diags],
              "cycle_estimate": bnn.cycle_estimate(cfg, topo)}
    if not args.json:
        for d in diags:
            print(f"{d.severity.upper():8s} {d.name:10s} {d.expression}")
    _emit(report, args)
    if any(d.severity == "error" for d in diags):
        return EXIT_USAGE
    if any(d.severity == "warning" for d in diags):
        return EXIT_WARN
    return EXIT_OK


def cmd_sweep(args):
    params = read_params(args.params)
    ds = load_dataset(args.dataset, "test")
    X, y = _limit(ds, args.limit)
    res = bnn.bitlength_sweep(params, X, y, args.bits, args.threshold, args.mc, args.grng,
                              args.seed, args.threads, tolerance=args.tolerance)
    report = {"config": {"params": args.params, "dataset": args.dataset, "bits": args.bits,
                         "frac_rule": "total_bits - 3",
                         "tolerance": args.tolerance, "mc": args.mc, "grng": args.grng,
                         "seed": args.seed, "images": len(y)}, **res}
    if not args.json:
        print(f"float {res['float_accuracy']:.4f}")
        for r in res["rows"]:
            print(f"{r['bits']:3d} bits ({r['spec']}): {r['accuracy']:.4f}")
        print(f"smallest meeting threshold: {res['smallest_bits']}")
    _emit(report, args)
    return EXIT_OK


def small_data(X, y, Xt, yt, topo, fraction, seeds, overrides, mc=8, grng_kind="reference",
               threads=1):
    """Train BNN and dropout FNN on the same stratified subsample per seed."""
    rows = []
    for s in seeds:
        cfg_b = TrainConfig.from_defaults(**{**overrides["bnn"], "data_fraction": fraction, "seed": s})
        cfg_f = TrainConfig.from_defaults(**{**overrides["fnn"], "data_fraction": fraction, "seed": s})
        p = train_bbb(X, y, topo, cfg_b)
        f = train_fnn_dropout(X, y, topo, cfg_f)
        acc_b = bnn.accuracy(p, Xt, yt, n_samples=mc, grng=grng_kind, seed=s, threads=threads)
        acc_f = float(np.mean(fnn_predict(f, Xt) == yt))
        rows.append({"seed": s, "bnn_accuracy": acc_b, "fnn_accuracy": acc_f})
    return rows


def cmd_experiment(args):
    defaults = load_defaults()["small_data"]
    tr = load_dataset(args.dataset, "train")
    te = load_dataset(args.dataset, "test")
    Xt, yt = _limit(te, args.limit)
    topo = bnn.NetworkTopology.parse(args.topology or defaults["topology"])
    seeds = [args.seed + k for k in range(args.seeds)]
    rows = small_data(tr.X, tr.y, Xt, yt, topo, args.fraction, seeds, defaults, args.mc,
                      args.grng, args.threads)
    mean_b = float(np.mean([r["bnn_accuracy"] for r in rows]))
    mean_f = float(np.mean([r["fnn_accuracy"] for r in rows]))
    report = {"config": {"dataset": args.dataset, "fraction": args.fraction, "topology": str(topo),
                         "seeds": seeds, "mc": args.mc, "grng": args.grng, "images": len(yt),
                         "train": defaults},
              "runs": rows, "bnn_mean": mean_b, "fnn_mean": mean_f, "bnn_not_worse": mean_b >= mean_f}
    if not args.json:
        print(f"fraction {args.fraction:.6g}: BNN {mean_b:.4f}  FNN+dropout {mean_f:.4f}")
    _emit(report, args)
    return EXIT_OK


# -- parser -------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--json", action="store_true", help="print a JSON report on stdout")
    common.add_argument("--threads", type=int, default=1)

    p = _Parser(prog="hwbnn", description="Hardware-oriented Gaussian generators and BNN inference.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", parents=[common], help="emit generator samples")
    g.add_argument("--grng", choices=["rlf", "wallace"], default="rlf")
    g.add_argument("--variant", choices=["ring", "nss", "software"], default="ring")
    g.add_argument("--count", type=int, default=1000)
    g.add_argument("--lanes", type=int, default=64)
    g.add_argument("--units", type=int, default=None)
    g.add_argument("--pool", type=int, default=None, help="default 256, software 4096")
    g.add_argument("--loops", type=int, default=None)
    g.add_argument("--raw-sums", action="store_true", help="emit integer popcounts (rlf)")
    g.add_argument("--dump-state", metavar="FILE", help="write a hex dump of the final rlf state")
    g.set_defaults(func=cmd_gen)

    s = sub.add_parser("stats", parents=[common], help="stability and runs-test report")
    s.add_argument("--grng", choices=["rlf", "wallace", "nss", "software", "reference"], default="rlf")
    s.add_argument("--samples", type=int, default=100_000)
    s.add_argument("--trials", type=int, default=100)
    s.add_argument("--alpha", type=float, default=0.05)
    s.add_argument("--lanes", type=int, default=64)
    s.add_argument("--units", type=int, default=None)
    s.add_argument("--pool", type=int, default=None, help="default 256, software 4096")
    s.add_argument("--loops", type=int, default=None)
    s.set_defaults(func=cmd_stats)

    t = sub.add_parser("train", parents=[common], help="train a BNN (or --fnn baseline)")
    t.add_argument("--dataset", required=True)
    t.add_argument("--topology", default=load_defaults()["train"]["topology"])
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--prior-std", type=float)
    t.add_argument("--kl-weight", type=float)
    t.add_argument("--fraction", type=_fraction)
    t.add_argument("--fnn", action="store_true")
    t.add_argument("--dropout", type=float)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    q = sub.add_parser("quantize", parents=[common], help="VIBP -> VIBQ")
    q.add_argument("--params", required=True)
    q.add_argument("--bits", type=int, default=8)
    q.add_argument("--frac", type=int, default=None, help="default bits - 3")
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_quantize)

    i = sub.add_parser("infer", parents=[common], help="Monte Carlo inference accuracy")
    i.add_argument("--params", required=True)
    i.add_argument("--dataset", required=True)
    i.add_argument("--mc", type=int, default=bnn.MC_DEFAULT)
    i.add_argument("--grng", choices=["rlf", "wallace", "reference"], default="rlf")
    i.add_argument("--quant", type=int, default=0, help="bit-length; 0 = float")
    i.add_argument("--frac", type=int, default=None)
    i.add_argument("--limit", type=int, default=None, help="use the first N test images")
    i.set_defaults(func=cmd_infer)

    v = sub.add_parser("validate-config", parents=[common], help="check PE/memory sizing")
    v.add_argument("--T", type=int, default=16)
    v.add_argument("--S", type=int, default=8)
    v.add_argument("--N", type=int, default=8)
    v.add_argument("--B", type=int, default=8)
    v.add_argument("--M", type=int, default=None)
    v.add_argument("--maxws", type=int, default=512)
    v.add_argument("--topology", default="784,200,200,10")
    v.set_defaults(func=cmd_validate)

    w = sub.add_parser("sweep-bitlength", parents=[common], help="accuracy per bit-length")
    w.add_argument("--params", required=True)
    w.add_argument("--dataset", required=True)
    w.add_argument("--bits", type=_int_list, default=[4, 6, 8, 10, 12, 16])
    w.add_argument("--threshold", type=float, default=None, help="absolute accuracy threshold")
    w.add_argument("--tolerance", type=float, default=0.006,
                   help="threshold = float accuracy - tolerance when --threshold is absent")
    w.add_argument("--mc", type=int, default=bnn.MC_DEFAULT)
    w.add_argument("--grng", choices=["rlf", "wallace", "reference"], default="rlf")
    w.add_argument("--limit", type=int, default=None)
    w.set_defaults(func=cmd_sweep)

    e = sub.add_parser("experiment", parents=[common], help="experiment runners")
    e.add_argument("name", choices=["small-data"])
    e.add_argument("--dataset", required=True)
    e.add_argument("--fraction", type=_fraction, default=1 / 256)
    e.add_argument("--seeds", type=int, default=5)
    e.add_argument("--topology", default=None)
    e.add_argument("--mc", type=int, default=bnn.MC_DEFAULT)
    e.add_argument("--grng", choices=["rlf", "wallace", "reference"], default="reference")
    e.add_argument("--limit", type=int, default=None)
    e.set_defaults(func=cmd_experiment)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, FormatError, ValueError, FileNotFoundError, IsADirectoryError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingDiverged as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
