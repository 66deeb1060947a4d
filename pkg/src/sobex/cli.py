"""Command line entry point: ``sobex certify|norms|extend``."""

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from .errors import DomainFlag, InvariantViolation, SobexError
from .extension import build_extension, default_window
from .grid import GridSpec, mask_for_shape, rasterize
from .harness import ExperimentConfig, run_certification, run_norm_study
from .io import read_field, write_field, write_csv
from .product import ProductField, extend_product
from .shapes import load_shape
from .suites import SUITES, product_suite

log = logging.getLogger("sobex")


def _config(args):
    cfg = ExperimentConfig.from_json(args.config)
    if args.output:
        cfg.output = args.output
    if args.jobs is not None:
        cfg.jobs = args.jobs
    if getattr(args, "suite", None):
        cfg.suite = args.suite
    if getattr(args, "p", None):
        cfg.p = [float(p) for p in args.p]
    if getattr(args, "levels", None):
        cfg.levels = [float(h) for h in args.levels]
    cfg.__post_init__()
    return cfg


def cmd_certify(args):
    dumps = {"whitney": args.dump_whitney, "partition": args.dump_partition,
             "quasicubes": args.dump_quasicubes}
    return run_certification(_config(args), dumps)


def cmd_norms(args):
    return run_norm_study(_config(args), dump_operator=args.dump_operator)


def _factor_mask(shape, grid):
    return rasterize(load_shape(shape), grid)


def cmd_extend(args):
    s1, s2 = load_shape(args.factor1), load_shape(args.factor2)
    if args.field:
        grid, values, split = read_field(args.field)
        if split is None:
            split = s1.dim
        gx = GridSpec(grid.origin[:split], grid.spacing, grid.extents[:split])
        gy = GridSpec(grid.origin[split:], grid.spacing, grid.extents[split:])
        mx, my = _factor_mask(s1, gx), _factor_mask(s2, gy)
        maps = _maps(mx, my, args)
        u = ProductField(gx, gy, values, mx, my)
        w = extend_product(u, *maps, boundary=args.boundary)
        write_field(args.out, (w.grid, w.values), split=split)
        return 0
    # no field: ratio table for the suite over --levels successive halvings
    rows = []
    h = args.spacing
    for _ in range(args.levels):
        mx, my = mask_for_shape(s1, h), mask_for_shape(s2, h)
        maps = _maps(mx, my, args)
        for fn in _product_functions(args.suite, s1.dim, s2.dim):
            u = ProductField.from_function(mx.grid, my.grid, fn, mx, my)
            w = extend_product(u, *maps, boundary=args.boundary)
            ratio = ProductField(w.grid_x, w.grid_y, w.values).sobolev(args.p).w1p_norm / u.sobolev(args.p).w1p_norm
            rows.append({"h": h, "p": args.p, "function": fn.name, "ratio": ratio})
        h /= 2
    out = args.out or "-"
    cols = ["h", "p", "function", "ratio"]
    if out == "-":
        w = csv.DictWriter(sys.stdout, cols, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    else:
        write_csv(out, rows, cols)
    return 0


def _maps(mx, my, args):
    m1 = build_extension(mx, default_window(mx, args.window_factor), args.epsilon, args.delta_S)
    m2 = build_extension(my, default_window(my, args.window_factor), args.epsilon, args.delta_S)
    if args.dump_operator:
        Path(args.dump_operator).mkdir(parents=True, exist_ok=True)
        m1.dump_stats(Path(args.dump_operator) / "operator_factor1.json")
        m2.dump_stats(Path(args.dump_operator) / "operator_factor2.json")
    return m1, m2


def _product_functions(suite, n, m):
    """Suite members ``f(z)`` on R^(n+m) read as ``f(x, y)``."""
    if suite == "smooth1d" or n + m != 2:
        raise ValueError(f"suite {suite!r} does not live on R^{n + m}")
    return product_suite(suite)


def build_parser():
    ap = argparse.ArgumentParser(prog="sobex", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True)
        p.add_argument("--output", help="override the config output directory")
        p.add_argument("--jobs", type=int, help="parallel experiments (SOBEX_JOBS overrides)")
        p.add_argument("--suite", choices=sorted(SUITES))
        p.add_argument("--p", type=float, nargs="+")
        p.add_argument("--levels", type=float, nargs="+", help="grid spacings, strictly decreasing")

    c = sub.add_parser("certify", help="Whitney, partition, quasi-cube and regularity certification")
    common(c)
    c.add_argument("--dump-whitney", metavar="DIR")
    c.add_argument("--dump-partition", metavar="DIR")
    c.add_argument("--dump-quasicubes", metavar="DIR")
    c.set_defaults(func=cmd_certify)

    n = sub.add_parser("norms", help="operator norm, Calderon, commutation and product studies")
    common(n)
    n.add_argument("--dump-operator", metavar="DIR")
    n.set_defaults(func=cmd_norms)

    e = sub.add_parser("extend", help="extend a field on a product of two domains")
    e.add_argument("--factor1", required=True)
    e.add_argument("--factor2", required=True)
    e.add_argument("--field", help="SOBEXFLD input; without it a suite ratio table is printed")
    e.add_argument("--out")
    e.add_argument("--suite", default="smooth2d", choices=sorted(SUITES))
    e.add_argument("--p", type=float, default=2.0)
    e.add_argument("--levels", type=int, default=1)
    e.add_argument("--spacing", type=float, default=1 / 64)
    e.add_argument("--epsilon", type=float, default=0.5)
    e.add_argument("--delta-S", dest="delta_S", type=float, default=0.25)
    e.add_argument("--window-factor", type=float, default=4.0)
    e.add_argument("--boundary", default="trace", choices=["trace", "zero", "given"])
    e.add_argument("--dump-operator", metavar="DIR")
    e.set_defaults(func=cmd_extend)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except InvariantViolation as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        if exc.witness is not None:
            print(json.dumps({"witness": exc.witness}, default=str), file=sys.stderr)
        return 3
    except DomainFlag as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return 2
    except (SobexError, ValueError, OSError) as exc:
        log.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
