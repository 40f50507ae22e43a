"""Command-line surface: CSV ingestion, pipelines, and artifact persistence.

Commands
--------
deconv-fit   fit the discretized effect prior and save it as JSON
select       score units, run the prioritized selection, write CSV + summary
rvalue       rank units by r-value under either definition
simulate     run a replication study on one of the built-in designs

Input CSVs are comma-separated with a header row, UTF-8, decimal points.
Two layouts are accepted: direct columns (id, x, sigma), or rate-comparison
columns (id, y, y_prime, n, n_prime) which are preprocessed into an effect
x = y - y_prime with a binomial standard error.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from dataclasses import dataclass

import numpy as np

from . import __version__
from .deconv import FitConvergenceError, clfdr_by_group, fit_prior_by_group
from .model import zvalue_pvalue
from .rvalue import (
    dd_alpha_evaluator,
    dd_mu0_evaluator,
    default_alpha_grid,
    default_mu0_grid,
    rvalue_vary_alpha,
    rvalue_vary_mu0,
)
from .selection import build_units, select_bh, select_clfdr_stepup, select_dd
from .sim import (
    CorrelatedTwoGroup,
    SimDesign,
    TwoComponent,
    UniformIndep,
    run_replications,
)

__all__ = [
    "IngestRecord",
    "RunConfig",
    "ayp_standard_error",
    "trim_by_se_percentile",
    "read_records",
    "run",
    "main",
]

_DIRECT_HEADER = ["id", "x", "sigma"]
_AYP_HEADER = ["id", "y", "y_prime", "n", "n_prime"]


@dataclass(frozen=True)
class IngestRecord:
    id: str
    x: float
    sigma: float


@dataclass(frozen=True)
class RunConfig:
    """Validated invocation: one command plus every knob it needs."""

    command: str
    input: str | None = None
    output: str | None = None
    alpha: float = 0.1
    mu0: float | None = None
    k: int = 50
    seed: int = 0
    reps: int = 10
    sigma_split: tuple = ()
    trim: tuple | None = None
    definition: str = "mu0"
    grid_points: int = 200
    design: str | None = None
    sigma2: float | None = None
    sigma_max: float | None = None
    sigma: float | None = None
    m: int | None = None
    threads: int = 1
    oracle_n_mc: int = 10 ** 6


def ayp_standard_error(y: float, y_prime: float, n: int, n_prime: int) -> float:
    """Binomial standard error of a difference of two passing rates.

    sqrt(y (1 - y) / n + y' (1 - y') / n'); raises ValueError when both
    variance terms vanish (a degenerate unit) or inputs leave their domain.
    """
    for name, rate in (("y", y), ("y_prime", y_prime)):
        if not 0.0 <= rate <= 1.0:
            raise ValueError(f"{name} must be a rate in [0, 1]")
    for name, cnt in (("n", n), ("n_prime", n_prime)):
        if cnt < 1:
            raise ValueError(f"{name} must be a count of at least 1")
    var = y * (1.0 - y) / n + y_prime * (1.0 - y_prime) / n_prime
    if var <= 0.0:
        raise ValueError("both variance terms are zero: degenerate unit")
    return math.sqrt(var)


def trim_by_se_percentile(records, lower: float, upper: float):
    """Drops records whose sigma falls strictly outside the given empirical
    percentiles (same quantile convention as the prior grid)."""
    if not (0.0 <= lower < upper <= 1.0):
        raise ValueError("need 0 <= lower < upper <= 1")
    sig = np.array([r.sigma for r in records], dtype=float)
    lo, hi = np.quantile(sig, [lower, upper])
    kept = [r for r in records if lo <= r.sigma <= hi]
    if not kept:
        raise ValueError("percentile trim removed every record")
    return kept


def read_records(path) -> list:
    """Parses an input CSV into IngestRecords; errors carry line numbers.

    Extra columns after the recognized prefix are ignored, so the CSV the
    ``select`` command writes can be re-ingested directly.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip().lower() for h in next(reader)]
        except StopIteration:
            raise ValueError(f"{path}: empty file, header row required") from None
        if header[: len(_DIRECT_HEADER)] == _DIRECT_HEADER:
            ayp = False
            width = len(_DIRECT_HEADER)
        elif header[: len(_AYP_HEADER)] == _AYP_HEADER:
            ayp = True
            width = len(_AYP_HEADER)
        else:
            raise ValueError(
                f"{path}: unrecognized header {header!r}; expected a prefix "
                f"{_DIRECT_HEADER} or {_AYP_HEADER}"
            )
        records = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                if len(row) < width:
                    raise ValueError(f"expected at least {width} fields")
                if ayp:
                    rid, y, yp, n, npr = row[:width]
                    x = float(y) - float(yp)
                    sigma = ayp_standard_error(
                        float(y), float(yp), int(n), int(npr)
                    )
                else:
                    rid, xs, ss = row[:width]
                    x, sigma = float(xs), float(ss)
                if not (sigma > 0 and math.isfinite(sigma) and math.isfinite(x)):
                    raise ValueError("need sigma > 0 and finite x")
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
            records.append(IngestRecord(id=rid, x=x, sigma=sigma))
    if not records:
        raise ValueError(f"{path}: no data rows")
    return records


def _group_ids(sigma: np.ndarray, cuts) -> np.ndarray:
    if not cuts:
        return np.zeros(sigma.size, dtype=int)
    return np.digitize(sigma, np.asarray(sorted(cuts), dtype=float))


def _envelope(kind: str, config: RunConfig, extra: dict | None = None) -> dict:
    cfg = {
        "command": config.command,
        "alpha": config.alpha,
        "mu0": config.mu0,
        "grid_size": config.k,
        "seed": config.seed,
        "sigma_split": list(config.sigma_split),
        "trim": list(config.trim) if config.trim else None,
    }
    doc = {
        "schema": f"hetsel/{kind}/v1",
        "tool": {"name": "hetsel", "version": __version__},
        "config": cfg,
    }
    if extra:
        doc.update(extra)
    return doc


def _write_json(path, doc):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _prepare(config: RunConfig):
    records = read_records(config.input)
    if config.trim:
        records = trim_by_se_percentile(records, *config.trim)
    ids = [r.id for r in records]
    x = np.array([r.x for r in records], dtype=float)
    sigma = np.array([r.sigma for r in records], dtype=float)
    groups = _group_ids(sigma, config.sigma_split)
    return ids, x, sigma, groups


def _cmd_deconv_fit(config: RunConfig) -> int:
    _, x, sigma, groups = _prepare(config)
    fits = fit_prior_by_group(x, sigma, groups, k=config.k)
    doc = _envelope(
        "prior-fit-set",
        config,
        {"fits": {str(g): fit.to_json_dict() for g, fit in fits.items()}},
    )
    os.makedirs(config.output, exist_ok=True)
    _write_json(os.path.join(config.output, "prior_fit.json"), doc)
    return 0


def _cmd_select(config: RunConfig) -> int:
    ids, x, sigma, groups = _prepare(config)
    fits = fit_prior_by_group(x, sigma, groups, k=config.k)
    clfdr = clfdr_by_group(fits, groups, x, sigma, config.mu0)
    units = build_units(x, clfdr, config.mu0, config.alpha)
    dd = select_dd(units, config.alpha, config.mu0)
    stepup = select_clfdr_stepup(clfdr, config.alpha)
    _, pvals = zvalue_pvalue(x, sigma, config.mu0)
    bh = select_bh(pvals, config.alpha)

    os.makedirs(config.output, exist_ok=True)
    with open(
        os.path.join(config.output, "selection.csv"), "w", newline="", encoding="utf-8"
    ) as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "x", "sigma", "clfdr", "s", "group", "selected"])
        for i, unit in enumerate(units):
            writer.writerow(
                [
                    ids[i],
                    repr(float(x[i])),
                    repr(float(sigma[i])),
                    repr(unit.clfdr),
                    repr(unit.s),
                    int(unit.group),
                    int(dd.decisions[i]),
                ]
            )

    def power(result):
        sel = result.selected_indices
        return float(np.sum(x[sel] - config.mu0)) if sel.size else 0.0

    summary = _envelope(
        "select-summary",
        config,
        {
            "n_units": len(ids),
            "n_selected": {
                "dd": dd.n_selected,
                "clfdr_stepup": stepup.n_selected,
                "bh": bh.n_selected,
            },
            "modified_power": {
                "dd": power(dd),
                "clfdr_stepup": power(stepup),
                "bh": power(bh),
            },
            "fit": {
                str(g): {"objective": f.objective, "iterations": f.iterations}
                for g, f in fits.items()
            },
        },
    )
    _write_json(os.path.join(config.output, "summary.json"), summary)
    payload = dd.to_json_dict(ids=ids)
    payload.pop("schema")
    _write_json(
        os.path.join(config.output, "selection_result.json"),
        _envelope("selection-result", config, payload),
    )
    return 0


def _cmd_rvalue(config: RunConfig) -> int:
    ids, x, sigma, groups = _prepare(config)
    fits = fit_prior_by_group(x, sigma, groups, k=config.k)
    if config.definition == "alpha":
        clfdr = clfdr_by_group(fits, groups, x, sigma, config.mu0)
        table = rvalue_vary_alpha(
            ids,
            x,
            dd_alpha_evaluator(x, clfdr, config.mu0),
            default_alpha_grid(config.grid_points),
            sigma=sigma,
            n_jobs=config.threads,
        )
    else:
        def clfdr_fn(mu0):
            return clfdr_by_group(fits, groups, x, sigma, mu0)

        table = rvalue_vary_mu0(
            ids,
            x,
            dd_mu0_evaluator(x, clfdr_fn, config.alpha),
            default_mu0_grid(x, config.grid_points),
            sigma=sigma,
            n_jobs=config.threads,
        )
    os.makedirs(config.output, exist_ok=True)
    table.write_csv(os.path.join(config.output, "rvalues.csv"))
    _write_json(
        os.path.join(config.output, "rvalues.json"),
        _envelope("rvalues", config, table.to_json_dict()),
    )
    return 0


def _cmd_simulate(config: RunConfig) -> int:
    if config.design == "two-component":
        if config.sigma2 is None:
            raise ValueError("--sigma2 is required for the two-component design")
        family = TwoComponent(sigma2=config.sigma2, m=config.m or 10000)
    elif config.design == "uniform":
        if config.sigma_max is None:
            raise ValueError("--sigma-max is required for the uniform design")
        family = UniformIndep(sigma_max=config.sigma_max, m=config.m or 5000)
    elif config.design == "correlated":
        if config.sigma is None:
            raise ValueError("--sigma is required for the correlated design")
        family = CorrelatedTwoGroup(sigma=config.sigma, m=config.m or 10000)
    else:
        raise ValueError(f"unknown design {config.design!r}")

    mu0 = config.mu0 if config.mu0 is not None else family.DEFAULT_MU0
    design = SimDesign(
        family=family,
        mu0=mu0,
        alpha=config.alpha,
        reps=config.reps,
        master_seed=config.seed,
    )
    report = run_replications(
        design, k=config.k, oracle_n_mc=config.oracle_n_mc, n_jobs=config.threads
    )
    os.makedirs(config.output, exist_ok=True)
    _write_json(
        os.path.join(config.output, "report.json"),
        _envelope("replication-report", config, report.to_json_dict()),
    )
    with open(
        os.path.join(config.output, "report_tidy.csv"), "w", newline="", encoding="utf-8"
    ) as fh:
        writer = csv.DictWriter(
            fh, fieldnames=["design", "method", "metric", "rep", "value"]
        )
        writer.writeheader()
        for row in report.tidy_rows():
            writer.writerow(row)
    return 0


_COMMANDS = {
    "deconv-fit": _cmd_deconv_fit,
    "select": _cmd_select,
    "rvalue": _cmd_rvalue,
    "simulate": _cmd_simulate,
}


def run(config: RunConfig) -> int:
    """Executes one command; returns the process exit status.

    Runtime failures are reported as a machine-readable JSON object on
    stderr with exit status 1.
    """
    try:
        return _COMMANDS[config.command](config)
    except (ValueError, OSError, FitConvergenceError, RuntimeError) as exc:
        report = {
            "error": {
                "type": type(exc).__name__,
                "message": str(exc),
                "command": config.command,
            }
        }
        print(json.dumps(report, sort_keys=True), file=sys.stderr)
        return 1


def _add_shared(parser, *, need_mu0: bool, mu0_required: bool = True):
    parser.add_argument("--input", required=True, help="input CSV path")
    parser.add_argument("--output", required=True, help="output directory")
    parser.add_argument("--alpha", type=float, default=0.1, help="target FDR level")
    if need_mu0:
        parser.add_argument(
            "--mu0",
            type=float,
            required=mu0_required,
            help="reference level: the null region is mu <= mu0",
        )
    parser.add_argument("--grid-size", type=int, default=50, dest="k")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument(
        "--sigma-split",
        type=str,
        default="",
        help="comma-separated sigma cut points defining fit groups",
    )
    parser.add_argument(
        "--trim",
        type=str,
        default="",
        help="lower,upper sigma percentile trim, e.g. 0.01,0.99 (default off)",
    )


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hetsel",
        description="Prioritized ranking and selection for heteroscedastic units",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("deconv-fit", help="fit the effect prior")
    _add_shared(p_fit, need_mu0=False)

    p_sel = sub.add_parser("select", help="run the prioritized selection")
    _add_shared(p_sel, need_mu0=True)

    # The r-value command fixes one threshold parameter and varies the
    # other, so which flag is mandatory depends on the definition; both
    # default to None and are validated after parsing.
    p_rv = sub.add_parser("rvalue", help="rank units by r-value")
    p_rv.add_argument("--input", required=True, help="input CSV path")
    p_rv.add_argument("--output", required=True, help="output directory")
    p_rv.add_argument("--definition", choices=["alpha", "mu0"], required=True)
    p_rv.add_argument("--alpha", type=float, default=None)
    p_rv.add_argument("--mu0", type=float, default=None)
    p_rv.add_argument("--grid-points", type=int, default=200)
    p_rv.add_argument("--grid-size", type=int, default=50, dest="k")
    p_rv.add_argument("--seed", type=int, default=0)
    p_rv.add_argument("--sigma-split", type=str, default="")
    p_rv.add_argument("--trim", type=str, default="")
    p_rv.add_argument(
        "--threads", type=int, default=os.cpu_count() or 1,
        help="parallel grid replays (results are order-merged)",
    )

    p_sim = sub.add_parser("simulate", help="run a replication study")
    p_sim.add_argument("--output", required=True)
    p_sim.add_argument(
        "--design", choices=["two-component", "uniform", "correlated"], required=True
    )
    p_sim.add_argument("--sigma2", type=float, help="second-half sigma (two-component)")
    p_sim.add_argument("--sigma-max", type=float, help="sigma upper bound (uniform)")
    p_sim.add_argument("--sigma", type=float, help="sigma scale (correlated)")
    p_sim.add_argument("--m", type=int, help="units per replication")
    p_sim.add_argument("--reps", type=int, default=10)
    p_sim.add_argument("--alpha", type=float, default=0.1)
    p_sim.add_argument("--mu0", type=float, default=None)
    p_sim.add_argument("--seed", type=int, default=0)
    p_sim.add_argument("--grid-size", type=int, default=50, dest="k")
    p_sim.add_argument(
        "--oracle-nmc", type=int, default=10 ** 6, dest="oracle_n_mc",
        help="Monte Carlo draws for the oracle cutoff calibration",
    )
    p_sim.add_argument(
        "--threads", type=int, default=os.cpu_count() or 1,
        help="parallel replication workers",
    )
    return parser


def _parse_pair(text: str, flag: str):
    parts = [p for p in text.split(",") if p.strip()]
    if len(parts) != 2:
        raise ValueError(f"{flag} expects two comma-separated values")
    return float(parts[0]), float(parts[1])


def config_from_args(args: argparse.Namespace) -> RunConfig:
    sigma_split = ()
    if getattr(args, "sigma_split", ""):
        sigma_split = tuple(
            float(v) for v in args.sigma_split.split(",") if v.strip()
        )
    trim = None
    if getattr(args, "trim", ""):
        trim = _parse_pair(args.trim, "--trim")
    return RunConfig(
        command=args.command,
        input=getattr(args, "input", None),
        output=args.output,
        alpha=getattr(args, "alpha", 0.1),
        mu0=getattr(args, "mu0", None),
        k=getattr(args, "k", 50),
        seed=getattr(args, "seed", 0),
        reps=getattr(args, "reps", 10),
        sigma_split=sigma_split,
        trim=trim,
        definition=getattr(args, "definition", "mu0"),
        grid_points=getattr(args, "grid_points", 200),
        design=getattr(args, "design", None),
        sigma2=getattr(args, "sigma2", None),
        sigma_max=getattr(args, "sigma_max", None),
        sigma=getattr(args, "sigma", None),
        m=getattr(args, "m", None),
        threads=getattr(args, "threads", 1),
        oracle_n_mc=getattr(args, "oracle_n_mc", 10 ** 6),
    )


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    if args.command == "rvalue":
        if args.definition == "mu0" and args.alpha is None:
            parser.error("--alpha is required with --definition mu0")
        if args.definition == "alpha" and args.mu0 is None:
            parser.error("--mu0 is required with --definition alpha")
    try:
        config = config_from_args(args)
    except ValueError as exc:
        parser.error(str(exc))
    return run(config)


if __name__ == "__main__":
    sys.exit(main())
