"""Command-line front end: simulate, fit, segment, tune, replicate.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.
``HOMOG_THREADS`` overrides ``--threads``.  Every output file is written
atomically.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from ._io import atomic_write_json, atomic_write_text
from .changepoint import binary_segment, binary_segment_count, post_process
from .exceptions import DataError, HomogError, NumericalError
from .homogeneity import FitConfig, FitterVariant, fit_variant, recipe
from .metrics import nmi, score_variant
from .panel import PanelSchema, load_panel_csv, partition_from_labels, write_panel_csv
from .simgen import SimConfig, SimTruth, generate, run_replicates
from .tuning import CVGrid, select

log = logging.getLogger("homog")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
N_CURVE = 200


class UsageError(Exception):
    pass


def _threads(args) -> int:
    env = os.environ.get("HOMOG_THREADS")
    if env is not None:
        try:
            n = int(env)
        except ValueError:
            raise UsageError(f"HOMOG_THREADS must be an integer, got {env!r}") from None
    else:
        n = args.threads if args.threads is not None else (os.cpu_count() or 1)
    if n < 1:
        raise UsageError("thread count must be at least 1")
    return n


def _schema(args) -> PanelSchema:
    covs = [c.strip() for c in args.covariates.split(",")] if args.covariates else None
    return PanelSchema(args.id_col, args.time_col, args.response_col, covs, args.anchor)


def _load(args):
    path = Path(args.input)
    if not path.is_file():
        raise DataError(f"input file not found: {path}")
    data = load_panel_csv(path, _schema(args))
    return data.standardized() if args.standardize else data


def _grid(args, data, K):
    h1 = range(1, min(args.h1_max, data.m * K) + 1)
    h2 = range(1, min(args.h2_max, data.m * data.p) + 1)
    L = args.folds if args.folds is not None else (5 if args.mode == "iid" else 30)
    try:
        return CVGrid(tuple(h1), tuple(h2), L, args.mode, args.shuffle, args.cv_seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _fit_config(args, data, workers) -> FitConfig:
    cfg = FitConfig(K=args.K, order=args.order, post_process=not args.no_post,
                    transform=args.transform, cv_transform=args.cv_transform, workers=workers)
    return FitConfig(**{**cfg.__dict__, "grid": _grid(args, data, cfg.resolve_K(data.m, data.T))})


def _load_truth(path, data):
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    if "betas" in obj:
        truth = SimTruth.from_json(obj)
    else:
        truth = None
    groups = {
        "beta": partition_from_labels(obj["beta_individual_groups"]) if "beta_individual_groups" in obj else None,
        "link": partition_from_labels(obj["link_groups"]) if "link_groups" in obj else None,
    }
    for part in groups.values():
        if part is not None and part.n != data.m:
            raise DataError(f"truth has {part.n} individuals, data has {data.m}")
    return truth, groups


def _link_curves(vfit, data) -> str:
    fit = vfit.fit
    from .estimator import link_values
    lines = ["id,u,g"]
    for i in range(fit.m):
        u = data.X[i] @ fit.betas[i]
        grid = np.linspace(u.min(), u.max(), N_CURVE)
        g = link_values(fit, i, grid)
        lines.extend(f"{data.ids[i]},{a!r},{b!r}" for a, b in zip(grid.tolist(), g.tolist()))
    return "\n".join(lines) + "\n"


def cmd_simulate(args) -> int:
    try:
        cfg = SimConfig(args.m, args.T, args.sigma, args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    data, truth = generate(cfg, args.replicate)
    out = Path(args.out)
    write_panel_csv(data, out)
    truth_path = Path(args.truth) if args.truth else out.with_suffix(".truth.json")
    atomic_write_json(truth_path, truth.to_json())
    log.info("wrote %s and %s", out, truth_path)
    return EXIT_OK


def cmd_fit(args) -> int:
    variant = FitterVariant.parse(args.variant)
    data = _load(args)
    truth, groups = (None, {}) if args.truth is None else _load_truth(args.truth, data)
    cfg = _fit_config(args, data, _threads(args))
    vfit = fit_variant(data, variant, cfg, truth)
    fit = vfit.fit
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    atomic_write_json(out / "fit.json", {
        "variant": variant.value,
        "ids": [str(i) for i in data.ids],
        "betas": fit.betas.tolist(),
        "thetas": fit.thetas.tolist(),
        "knots": fit.basis.knots.tolist(),
        "basis": {"a": fit.basis.a, "b": fit.basis.b, "K": fit.basis.K, "order": fit.basis.order},
        "transform": "cdf" if fit.transforms is not None else "none",
        "partition_beta": vfit.beta_partition.labels().tolist(),
        "partition_theta": vfit.theta_partition.labels().tolist(),
        "H": list(vfit.H) if vfit.H else None,
        "sse": fit.sse,
    })
    parts = {
        "beta_slot_groups": vfit.beta_partition.labels().tolist(),
        "theta_slot_groups": vfit.theta_partition.labels().tolist(),
        "beta_individual_groups": vfit.beta_groups.labels().tolist(),
        "function_groups": vfit.function_groups.labels().tolist(),
    }
    if groups.get("beta") is not None:
        parts["nmi_beta"] = nmi(vfit.beta_groups, groups["beta"])
    if groups.get("link") is not None:
        parts["nmi_g"] = nmi(vfit.function_groups, groups["link"])
    if truth is not None:
        parts["metrics"] = score_variant(vfit, data, truth).to_json()
    atomic_write_json(out / "partitions.json", parts)
    atomic_write_text(out / "links.csv", _link_curves(vfit, data))
    if vfit.surface is not None:
        atomic_write_text(out / "cv_surface.csv", vfit.surface.to_csv())
    log.info("variant %s, H=%s, wrote %s", variant.value, vfit.H, out)
    return EXIT_OK


def _read_column(path):
    vals = []
    with open(path, encoding="utf-8") as fh:
        for no, line in enumerate(fh, start=1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            try:
                vals.append(float(text.split(",")[0]))
            except ValueError:
                if not vals and no == 1:
                    continue  # header line
                raise DataError(f"line {no}: not a number: {text!r}") from None
    if len(vals) < 2:
        raise DataError("need at least two values")
    return np.array(vals)


def sample_path() -> Path:
    """The bundled two-level sequence."""
    return Path(str(resources.files("homog") / "data" / "two_level.txt"))


def cmd_segment(args) -> int:
    if args.sample:
        path = sample_path()
    elif args.input:
        path = Path(args.input)
        if not path.is_file():
            raise DataError(f"input file not found: {path}")
    else:
        raise UsageError("give an input file or --sample")
    b = _read_column(path)
    if args.sort:
        b = np.sort(b)
    if args.groups is not None:
        res = binary_segment_count(b, args.groups)
    else:
        res = binary_segment(b, args.delta)
    if not args.no_post:
        res = post_process(b, res)
    obj = {"n": res.n, "change_points": list(res.change_points),
           "delta_values": list(res.split_stats), "groups": res.n_groups}
    text = json.dumps(obj, indent=2) + "\n"
    if args.out:
        atomic_write_text(args.out, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_tune(args) -> int:
    variant = FitterVariant.parse(args.variant)
    beta_mode, theta_mode, _ = recipe(variant)
    if beta_mode not in ("identified", "shared") or theta_mode not in ("component", "shared") \
            or (beta_mode, theta_mode) == ("shared", "shared"):
        raise UsageError(f"variant {variant.value} has nothing to tune")
    data = _load(args)
    cfg = _fit_config(args, data, _threads(args))
    _, surface = select(data, cfg.grid, cfg, beta_mode, theta_mode)
    text = surface.to_csv()
    if args.out:
        atomic_write_text(args.out, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_replicate(args) -> int:
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    try:
        names = [FitterVariant.parse(v) for v in variants]
        cfg = SimConfig(args.m, args.T, args.sigma, args.seed, args.reps)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    workers = _threads(args)
    fc = FitConfig(K=args.K, order=args.order, post_process=not args.no_post,
                   transform=args.transform, cv_transform=args.cv_transform)
    table = run_replicates(cfg, names, fc, workers=workers)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out / "table_beta.csv", table.beta_csv())
    atomic_write_text(out / "table_fun.csv", table.fun_csv())
    if not table.valid:
        log.error("more than 5%% of replicates failed: %s", table.failures)
        return EXIT_NUMERIC
    return EXIT_OK


def _panel_options(p):
    p.add_argument("input", help="long-format panel CSV")
    p.add_argument("--id-col", default="id")
    p.add_argument("--time-col", default="t")
    p.add_argument("--response-col", default="y")
    p.add_argument("--covariates", help="comma-separated covariate columns (default: all others)")
    p.add_argument("--anchor", help="covariate whose index coefficient is pinned to 1 (default: first)")
    p.add_argument("--standardize", action="store_true", help="z-score response and covariates per individual")


def _model_options(p):
    p.add_argument("--K", type=int, default=None, help="number of spline basis functions")
    p.add_argument("--order", type=int, default=4, help="spline order (4 = cubic)")
    p.add_argument("--transform", choices=("none", "cdf"), default="cdf",
                   help="spline argument of the final fit")
    p.add_argument("--cv-transform", choices=("none", "cdf"), default="cdf",
                   help="spline argument while tuning and segmenting")
    p.add_argument("--no-post", action="store_true", help="skip change-point post-processing")


def _grid_options(p):
    p.add_argument("--h1-max", type=int, default=8)
    p.add_argument("--h2-max", type=int, default=12)
    p.add_argument("--mode", choices=("iid", "rolling"), default="iid")
    p.add_argument("--folds", "-L", type=int, default=None, help="folds (iid) or origins (rolling)")
    p.add_argument("--shuffle", action="store_true", help="random instead of contiguous folds")
    p.add_argument("--cv-seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="homog", description=__doc__.splitlines()[0])
    parser.add_argument("--threads", type=int, default=None,
                        help="worker processes (default: all cores; HOMOG_THREADS overrides)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="draw a panel from the two-link simulation design")
    p.add_argument("--m", type=int, default=30)
    p.add_argument("--T", type=int, default=400)
    p.add_argument("--sigma", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--replicate", type=int, default=0, help="uses seed + replicate")
    p.add_argument("--out", required=True, help="panel CSV path")
    p.add_argument("--truth", help="truth JSON path (default: <out>.truth.json)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="tune, segment and fit one variant")
    _panel_options(p)
    _model_options(p)
    _grid_options(p)
    p.add_argument("--variant", default="correct-v", choices=[v.value for v in FitterVariant])
    p.add_argument("--truth", help="truth JSON (from simulate) for NMI and error scores")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("segment", help="binary segmentation of a sorted one-column file")
    p.add_argument("input", nargs="?")
    p.add_argument("--sample", action="store_true", help="use the bundled two-level sequence")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--delta", type=float, help="threshold on the CUSUM contrast")
    g.add_argument("--groups", type=int, help="number of groups")
    p.add_argument("--sort", action="store_true", help="sort the values first")
    p.add_argument("--no-post", action="store_true", help="skip post-processing")
    p.add_argument("--out", help="JSON output path (default: stdout)")
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("tune", help="cross-validation surface over (H1, H2)")
    _panel_options(p)
    _model_options(p)
    _grid_options(p)
    p.add_argument("--variant", default="correct-v", choices=[v.value for v in FitterVariant])
    p.add_argument("--out", help="CSV output path (default: stdout)")
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("replicate", help="Monte Carlo study over simulated panels")
    p.add_argument("--m", type=int, default=30)
    p.add_argument("--T", type=int, default=400)
    p.add_argument("--sigma", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--reps", type=int, default=20)
    p.add_argument("--variants", default="oracle,correct-c,correct-v,correct-nmi,over,under-i-f,under-i,under-f")
    _model_options(p)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_replicate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"homog {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError, json.JSONDecodeError, KeyError) as exc:
        print(f"homog {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"homog {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except HomogError as exc:
        print(f"homog {args.command}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
