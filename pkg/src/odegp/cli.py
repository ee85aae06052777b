"""Command-line entry point.

Subcommands share ``--config PATH``, ``--seed INT`` and ``--out DIR``.  Exit
codes: 0 success, 1 configuration error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .dynsys import TrajectoryFormatError
from .experiment import (
    ConfigError,
    ExperimentConfig,
    NumericFailure,
    Prediction,
    fit,
    format_table,
    load_config,
    make_config,
    make_data,
    parse_cells,
    parse_seeds,
    predict,
    read_data,
    read_prediction,
    run_suite,
    score,
    split_config,
    write_data,
    write_prediction,
    write_report,
)
from .gpcore import ModelMismatchError, load_model, save_model

log = logging.getLogger("odegp")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2


def _config(args) -> ExperimentConfig:
    if args.config is None:
        return ExperimentConfig() if args.seed is None else ExperimentConfig(seed=args.seed)
    return load_config(args.config, seed=args.seed)


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_simulate(args) -> int:
    cfg = _config(args)
    out = _out(args)
    data = make_data(cfg)
    write_data(out, data)
    (out / "config.txt").write_text(cfg.to_text())
    print(f"wrote {len(data.observed)} samples to {out / 'data.csv'}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)
    out = _out(args)
    data = make_data(cfg)
    write_data(out, data)
    (out / "config.txt").write_text(cfg.to_text())
    model = fit(cfg, data)
    save_model(model, out / "model.json")
    for u, dm in enumerate(model.dims):
        print(f"dim {u + 1}: nll {dm.nll:.6g}  noise std {dm.sigma:.4g}")
    return EXIT_OK


def _trained(args, cfg):
    out = Path(args.out)
    if not (out / "model.json").is_file():
        raise ConfigError(f"no trained model in {out}; run 'train' first")
    data = read_data(out)
    try:
        model = load_model(out / "model.json", data.train)
    except ModelMismatchError as exc:
        raise ConfigError(str(exc)) from None
    return data, model


def cmd_rollout(args) -> int:
    cfg = _config(args)
    data, model = _trained(args, cfg)
    if model.label != cfg.label:
        raise ConfigError(f"model in {args.out} is {model.label}, config asks for {cfg.label}")
    pred = predict(cfg, model, data)
    write_prediction(Path(args.out), data.observed.grid, pred)
    print(f"rolled out {pred.n_samples} sample(s), {pred.n_failed} failed")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = _config(args)
    data, model = _trained(args, cfg)
    pred: Prediction = read_prediction(Path(args.out))
    report = score(cfg, model, data, pred)
    write_report(Path(args.out), data.observed.grid, report)
    print(f"{report.label}: MSE {report.mse:.6g} (vs data {report.mse_data:.6g})")
    return EXIT_OK


def cmd_suite(args) -> int:
    if args.config is None:
        raise ConfigError("suite needs --config with 'cells' and 'seeds'")
    path = Path(args.config)
    if not path.is_file():
        raise ConfigError(f"config file {path} does not exist")
    values, extra = split_config(path.read_text())
    base = make_config(values)
    cells = parse_cells(extra.get("cells", f"{base.label}"))
    seeds = [args.seed] if args.seed is not None else parse_seeds(extra.get("seeds", "0,1,2,3,4"))
    jobs = int(extra.get("jobs", "1"))
    table = run_suite(base, cells, seeds, out=args.out, jobs=jobs)
    print(format_table(table), end="")
    return EXIT_OK if all(c.ok for c in table) else EXIT_NUMERIC


def cmd_bound(args) -> int:
    from .bounds import synthetic_bound_check

    cfg = _config(args)
    res = synthetic_bound_check(cfg.kind, cfg.order, seed=cfg.seed)
    print(f"{'point':>5} {'|mu - f|':>12} {'bound':>12}")
    for i, (e, b) in enumerate(zip(res.errors, res.bounds)):
        print(f"{i:5d} {e:12.4e} {b:12.4e}")
    print(f"violations: {res.violations} of {res.errors.size}")
    if args.out:
        out = _out(args)
        with (out / "bound.csv").open("w") as fh:
            fh.write("point,error,bound\n")
            for i, (e, b) in enumerate(zip(res.errors, res.bounds)):
                fh.write(f"{i},{e:.17g},{b:.17g}\n")
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "train": cmd_train,
    "rollout": cmd_rollout,
    "evaluate": cmd_evaluate,
    "suite": cmd_suite,
    "bound": cmd_bound,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="odegp", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=str, default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", type=str, default=None if name == "bound" else "runs/latest")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, TrajectoryFormatError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericFailure as exc:
        print(f"numeric failure in {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
