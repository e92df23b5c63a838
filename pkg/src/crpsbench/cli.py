"""``crpsbench`` command-line interface.

Exit codes: 0 success, 2 usage or input error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import contextlib
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import LinAlgError

from . import __version__
from .config import ConfigError, bundled_config, load_config
from .estimators import QuantileGrid, crps_energy_form
from .exact import crps_gaussian
from .forecast import NumericalError, draw_samples, fit_gp, gen_ackley, gen_multisin
from .harness import CONVERGENCE_HEADER, run_convergence, run_ranking, run_slicewise, score_rows
from .io import InputError, read_dataset, read_panel, read_samples, write_dataset, write_panel, write_table
from .kernquad import DEFAULT_N_FEATURES, quantize

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL = 0, 2, 3

log = logging.getLogger("crpsbench")


class UsageError(Exception):
    pass


@contextlib.contextmanager
def _output(path: Optional[str]):
    if path in (None, "-"):
        yield sys.stdout
        sys.stdout.flush()
        return
    try:
        fh = open(path, "w", newline="")
    except OSError as exc:
        raise UsageError(f"cannot write {path}: {exc}") from None
    with fh:
        yield fh


@contextlib.contextmanager
def _input(path: str):
    if path == "-":
        yield sys.stdin, "<stdin>"
        return
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc}") from None
    with fh:
        yield fh, path


def _config_path(name: str) -> Path:
    p = Path(name)
    if p.exists():
        return p
    try:
        return bundled_config(name)
    except ConfigError:
        raise UsageError(f"config {name!r} not found (neither a file nor a bundled config)") from None


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_gen(args) -> int:
    seed = 0 if args.seed is None else args.seed
    if args.kind == "ackley":
        ds = gen_ackley(args.n_points, args.domain[0], args.domain[1], seed, args.n_train)
    else:
        ds = gen_multisin(args.freqs, args.weights, args.L, args.T, args.noise_std, seed)
    with _output(args.output) as out:
        write_dataset(out, ds, args.format)
    return EXIT_OK


def cmd_fit(args) -> int:
    with _input(args.dataset) as (fh, src):
        ds = read_dataset(fh, src)
    pred = fit_gp(ds, args.lengthscale, args.signal_var, args.noise_var)
    with _output(args.output) as out:
        if args.samples:
            seed = 0 if args.seed is None else args.seed
            panel = draw_samples(pred, args.samples, seed, observations=ds.y_test, t=ds.t_test)
            write_panel(out, panel, args.format)
        else:
            closed = crps_gaussian(pred.mean, pred.std, ds.y_test)
            rows = zip(ds.t_test, ds.y_test, pred.mean, pred.std, closed)
            write_table(out, ("t", "y_obs", "mean", "std", "crps"), rows, args.format)
    return EXIT_OK


def cmd_estimate(args) -> int:
    with _input(args.panel) as (fh, src):
        panel = read_panel(fh, src, y_column=args.y_column)
    method = args.method
    terms = None
    if method == "energy":
        values = np.atleast_1d(crps_energy_form(panel.draws, panel.observations))
    else:
        params = {}
        if method == "quantile":
            params["grid"] = QuantileGrid.from_name(args.grid, args.Q)
        elif method == "kernquad":
            params = {"s": args.s, "n": args.n, "seed": 0 if args.seed is None else args.seed}
        sc = score_rows(panel.draws, panel.observations, method, **params)
        values, terms = sc.values, sc.terms
    header = ["t", "y_obs", "crps"]
    cols = [panel.t, panel.observations, values]
    if terms is not None:
        header += ["error_term", "mean_term", "cdf_term"]
        cols += [terms.error_term, terms.mean_term, terms.cdf_term]
    rows = [tuple(c[i] for c in cols) for i in range(panel.T)]
    rows.append(("mean", None, float(np.mean(values))) + (None,) * (len(header) - 3))
    with _output(args.output) as out:
        write_table(out, header, rows, args.format)
    return EXIT_OK


def _override_seed(cfg, seed):
    if seed is not None:
        cfg.master_seed = seed
    return cfg


def cmd_convergence(args) -> int:
    cfg = _override_seed(load_config(_config_path(args.config), "convergence"), args.seed)
    report = run_convergence(cfg)
    with _output(args.output) as out:
        write_table(out, CONVERGENCE_HEADER, report.as_records(), args.format)
    for q in sorted(report.floor):
        print(f"# exact-quantile floor Q={q}: abs_error {report.floor[q]:.6g}, "
              f"score_error {report.score_floor[q]:.6g}", file=sys.stderr)
    return EXIT_OK


def cmd_slicewise(args) -> int:
    cfg = _override_seed(load_config(_config_path(args.config), "slicewise"), args.seed)
    table = run_slicewise(cfg)
    with _output(args.output) as out:
        write_table(out, table.columns(), table.records(), args.format)
    return EXIT_OK


def cmd_ranking(args) -> int:
    cfg = _override_seed(load_config(_config_path(args.config), "ranking"), args.seed)
    result = run_ranking(cfg)
    with _output(args.output) as out:
        write_table(out, result.columns(), result.records(), args.format)
    return EXIT_OK


def cmd_quantize(args) -> int:
    with _input(args.samples) as (fh, src):
        x = read_samples(fh, src, args.column)
    if x.size < 2:
        raise UsageError(f"quantize needs at least 2 samples, got {x.size}")
    seed = 0 if args.seed is None else args.seed
    sup = quantize(x, args.y_obs, s=args.s, n=args.n, seed=seed)
    with _output(args.output) as out:
        write_table(out, ("index", "value", "weight"), zip(sup.indices, sup.values, sup.weights), args.format)
    print(f"# M={x.size} m={sup.m} weight_sum={float(sup.weights.sum()):.17g} "
          f"moment_residual={sup.residual:.3e}", file=sys.stderr)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _positive_int(v):
    try:
        i = int(v)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {v!r}") from None
    if i < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {v!r}")
    return i


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="random seed (master seed for sweeps)")
    common.add_argument("-o", "--output", default=None, help="output path (default stdout)")
    common.add_argument("--format", choices=("csv", "json"), default="csv")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    p = argparse.ArgumentParser(prog="crpsbench", description="CRPS estimators and benchmark sweeps")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", parents=[common], help="generate a synthetic dataset CSV")
    g.add_argument("kind", choices=("ackley", "multisin"))
    g.add_argument("--n-points", type=int, default=209)
    g.add_argument("--n-train", type=int, default=9)
    g.add_argument("--domain", type=float, nargs=2, default=(-5.0, 5.0), metavar=("LO", "HI"))
    g.add_argument("--freqs", type=float, nargs=4, default=(0.1, 1.0, 2.0, 5.0))
    g.add_argument("--weights", type=float, nargs=4, default=(1.0, 1.0, 1.0, 1.0))
    g.add_argument("--L", type=int, default=800)
    g.add_argument("--T", type=int, default=100)
    g.add_argument("--noise-std", type=float, default=0.0)
    g.set_defaults(func=cmd_gen)

    f = sub.add_parser("fit", parents=[common], help="fit a GP and emit predictives or a sample panel")
    f.add_argument("dataset", help="dataset CSV (t,y,split) or - for stdin")
    f.add_argument("--lengthscale", type=float, default=0.5)
    f.add_argument("--signal-var", type=float, default=1.0)
    f.add_argument("--noise-var", type=float, default=1e-4)
    f.add_argument("-M", "--samples", type=_positive_int, default=None,
                   help="draw M samples per test point and write a panel CSV")
    f.set_defaults(func=cmd_fit)

    e = sub.add_parser("estimate", parents=[common], help="score a sample panel CSV")
    e.add_argument("panel", help="panel CSV (t,y_obs,s_1..s_M) or - for stdin")
    e.add_argument("--method", required=True,
                   choices=("quantile", "pwm_plugin", "unbiased", "energy", "kernquad"))
    e.add_argument("--grid", choices=("deciles", "midpoint"), default="deciles")
    e.add_argument("-Q", type=_positive_int, default=None, help="grid size for --grid midpoint")
    e.add_argument("-s", type=_positive_int, default=None, help="kernquad landmark count")
    e.add_argument("-n", type=_positive_int, default=DEFAULT_N_FEATURES, help="kernquad feature count")
    e.add_argument("--y-column", default="y_obs")
    e.set_defaults(func=cmd_estimate)

    for name, fn, helptext in (
        ("convergence", cmd_convergence, "run a convergence sweep"),
        ("slicewise", cmd_slicewise, "per-timestep signed errors"),
        ("ranking", cmd_ranking, "model ranking on multi-sinusoids"),
    ):
        c = sub.add_parser(name, parents=[common], help=helptext)
        c.add_argument("config", help="config file, or the name of a bundled config such as fig3.cfg")
        c.set_defaults(func=fn)

    q = sub.add_parser("quantize", parents=[common], help="compress one sample row to a weighted support")
    q.add_argument("samples", help="CSV with one column of samples, or a one-row panel")
    q.add_argument("--y-obs", type=float, required=True)
    q.add_argument("--column", default=None)
    q.add_argument("-s", type=_positive_int, default=None)
    q.add_argument("-n", type=_positive_int, default=DEFAULT_N_FEATURES)
    q.set_defaults(func=cmd_quantize)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (NumericalError, LinAlgError, FloatingPointError) as exc:
        print(f"crpsbench {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (UsageError, InputError, ConfigError, ValueError) as exc:
        print(f"crpsbench {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
