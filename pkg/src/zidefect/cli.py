"""Command-line interface.

Exit codes: 0 success, 2 input or validation error, 3 computational failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import warnings
from pathlib import Path

from . import bayes_zip, count_models, selection
from .errors import DataError, FitError, ZidefectError
from .ingest import (
    ModelSpec,
    atomic_write_text,
    build_design,
    dataset_to_csv,
    histogram,
    histogram_csv,
    histogram_text,
    load_csv,
)
from .simulate import SimSpec, gen_dataset

EXIT_OK, EXIT_INPUT, EXIT_COMPUTE = 0, 2, 3

log = logging.getLogger("zidefect")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_INPUT)


def _names(text: str | None) -> tuple[str, ...]:
    if not text:
        return ()
    return tuple(s.strip() for s in text.split(",") if s.strip())


def _floats(text: str | None) -> list[float] | None:
    if text is None:
        return None
    try:
        return [float(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise DataError(f"cannot parse numeric list {text!r}") from None


def _emit(text: str, out: str | None) -> None:
    if out:
        atomic_write_text(out, text)
    else:
        sys.stdout.write(text)


def _load(args):
    path = Path(args.data)
    if not path.is_file():
        raise DataError(f"data file not found: {path}")
    return load_csv(path, delimiter=args.delimiter)


def _json_default(obj):
    return str(obj)


def _finite(v):
    # JSON has no infinity; the R-hat sentinel is already finite
    if isinstance(v, float) and not math.isfinite(v):
        return None
    return v


def _mcmc_config(args) -> bayes_zip.McmcConfig:
    return bayes_zip.McmcConfig(
        chains=args.chains,
        iterations=args.iters,
        burn_in=args.burn_in,
        thin=args.thin,
        seed=args.seed,
        prior_sd=args.prior_sd,
    )


# -- subcommands ---------------------------------------------------------

def cmd_fit(args) -> int:
    d = _load(args)
    spec = ModelSpec(args.family, _names(args.count), _names(args.zero))
    dm = build_design(d, spec)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        m = count_models.fit(spec, dm)
    if args.format == "text":
        lines = [f"{spec.describe()}  n={m.n}  k={m.k}",
                 f"loglik={m.loglik:.6f}  AIC={m.aic:.4f}  BIC={m.bic:.4f}  converged={m.converged}"]
        for name, v in zip(m.count_names, m.beta_count):
            lines.append(f"  count {name:<12} {v: .6g}")
        if m.gamma_zero is not None:
            for name, v in zip(m.zero_names, m.gamma_zero):
                lines.append(f"  zero  {name:<12} {v: .6g}")
        if m.dispersion is not None:
            lines.append(f"  dispersion         {m.dispersion: .6g}")
        lines.append(f"predicted total={count_models.predict_total(m, dm):.4f}  observed={int(d.bugs.sum())}")
        _emit("\n".join(lines) + "\n", args.out)
    else:
        _emit(m.to_json(), args.out)
    if not m.converged:
        print(f"fit: {spec.describe()} did not converge", file=sys.stderr)
        return EXIT_COMPUTE
    return EXIT_OK


def cmd_compare(args) -> int:
    d = _load(args)
    count = _names(args.count) or selection.COUNT_COVARIATES
    specs = selection.standard_specs(count)
    cfg = _mcmc_config(args) if args.bayes else None
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        report = selection.compare(d, specs, include_bayes=args.bayes, cfg=cfg)
    if args.format == "json":
        rows = [{k: _finite(v) for k, v in r.items()} for r in report.to_dicts()]
        _emit(json.dumps(rows, indent=2, default=_json_default) + "\n", args.out)
    else:
        _emit(report.to_text(show_reference=args.show_reference), args.out)
    return EXIT_OK


def cmd_histogram(args) -> int:
    d = _load(args)
    bins = histogram(d.bugs, drop_zeros=args.drop_zeros)
    _emit(histogram_csv(bins) if args.format == "csv" else histogram_text(bins), args.out)
    return EXIT_OK


def cmd_select(args) -> int:
    d = _load(args)
    candidates = _names(args.count) or tuple(c for c in selection.COUNT_COVARIATES if c in d.metrics)
    if not candidates:
        raise DataError("select: no candidate covariates given (--count)")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        spec, trace = selection.stepwise_select(d, args.family, candidates, args.criterion, _names(args.zero))
    doc = {
        "family": spec.family,
        "count": list(spec.count_covariates),
        "zero": list(spec.zero_covariates),
        "criterion": args.criterion,
        "trace": [{"step": t.step, "move": t.move, "value": t.criterion, "covariates": list(t.covariates)}
                  for t in trace],
    }
    if args.format == "json":
        _emit(json.dumps(doc, indent=2) + "\n", args.out)
    else:
        lines = [f"{t.step:>3}  {t.move:<16} {args.criterion.upper()}={t.criterion:.4f}  [{','.join(t.covariates)}]"
                 for t in trace]
        lines.append(f"selected: {spec.describe()}")
        _emit("\n".join(lines) + "\n", args.out)
    return EXIT_OK


def cmd_simulate(args) -> int:
    beta = _floats(args.beta)
    if not beta:
        raise DataError("simulate: --beta needs at least an intercept")
    s = SimSpec(
        n=args.n,
        beta_count=beta,
        gamma_zero=_floats(args.gamma),
        dispersion=args.dispersion,
        default_range=(args.low, args.high),
        seed=args.seed,
    )
    _emit(dataset_to_csv(gen_dataset(s)), args.out)
    return EXIT_OK


def cmd_predict(args) -> int:
    path = Path(args.model)
    if not path.is_file():
        raise DataError(f"model file not found: {path}")
    m = count_models.FittedModel.from_json(path.read_text(encoding="utf-8"))
    d = _load(args)
    dm = build_design(d, m.spec)
    expected = count_models.predict_expected(m, dm)
    total = float(expected.sum())
    if args.format == "csv":
        rows = ["module_id,expected"] + [f"{mid},{float(v)!r}" for mid, v in zip(d.module_ids, expected)]
        rows.append(f"__total__,{total!r}")
        _emit("\n".join(rows) + "\n", args.out)
    else:
        doc = {
            "family": m.family,
            "n": d.n,
            "total": total,
            "observed_total": int(d.bugs.sum()),
            "expected": {mid: float(v) for mid, v in zip(d.module_ids, expected)},
        }
        _emit(json.dumps(doc, indent=2) + "\n", args.out)
    return EXIT_OK


# -- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="zidefect", description="Count regression for software defect data.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def data_opts(sp):
        sp.add_argument("--data", required=True, help="CSV file, one row per module")
        sp.add_argument("--delimiter", default=",", help="field separator (default ',')")
        sp.add_argument("--out", help="write output here instead of stdout")

    def mcmc_opts(sp):
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--chains", type=int, default=3)
        sp.add_argument("--iters", type=int, default=20000)
        sp.add_argument("--burn-in", type=int, default=5000)
        sp.add_argument("--thin", type=int, default=1)
        sp.add_argument("--prior-sd", type=float, default=10.0)

    sp = sub.add_parser("fit", help="fit one model and print its JSON document")
    data_opts(sp)
    sp.add_argument("--family", required=True, choices=["linear", "poisson", "negbin", "zip", "zinb"])
    sp.add_argument("--count", help="comma-separated count covariates")
    sp.add_argument("--zero", help="comma-separated zero-component covariates (zip/zinb)")
    sp.add_argument("--format", choices=["json", "text"], default="json")
    sp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("compare", help="fit the standard model battery and rank by AIC")
    data_opts(sp)
    sp.add_argument("--count", help="override the count covariates (default wmc,rfc,cbo,lcom)")
    sp.add_argument("--bayes", action="store_true", help="add the MCMC ZIP row with DIC")
    mcmc_opts(sp)
    sp.add_argument("--format", choices=["text", "json"], default="text")
    sp.add_argument("--reference", dest="show_reference", action="store_true", help="show published reference values")
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("histogram", help="bug-count histogram")
    data_opts(sp)
    sp.add_argument("--drop-zeros", action="store_true")
    sp.add_argument("--format", choices=["text", "csv"], default="text")
    sp.set_defaults(func=cmd_histogram)

    sp = sub.add_parser("select", help="stepwise covariate selection")
    data_opts(sp)
    sp.add_argument("--family", required=True, choices=["linear", "poisson", "negbin", "zip", "zinb"])
    sp.add_argument("--count", help="candidate count covariates")
    sp.add_argument("--zero", help="fixed zero-component covariates")
    sp.add_argument("--criterion", choices=["aic", "bic"], default="aic")
    sp.add_argument("--format", choices=["text", "json"], default="text")
    sp.set_defaults(func=cmd_select)

    sp = sub.add_parser("simulate", help="write a synthetic dataset as CSV")
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--beta", required=True, help="count coefficients, intercept first")
    sp.add_argument("--gamma", help="zero coefficients, intercept first (omit for no inflation)")
    sp.add_argument("--dispersion", type=float, help="NB2 size; omit for Poisson counts")
    sp.add_argument("--low", type=float, default=0.0, help="covariate lower bound")
    sp.add_argument("--high", type=float, default=100.0, help="covariate upper bound")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("predict", help="expected bugs per module from a model JSON")
    sp.add_argument("--model", required=True)
    data_opts(sp)
    sp.add_argument("--format", choices=["json", "csv"], default="json")
    sp.set_defaults(func=cmd_predict)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except DataError as exc:
        print(f"{args.command}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except FitError as exc:
        print(f"{args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_COMPUTE
    except ZidefectError as exc:  # pragma: no cover - every error derives from the two above
        print(f"{args.command}: {exc}", file=sys.stderr)
        return EXIT_COMPUTE
    except OSError as exc:
        print(f"{args.command}: {exc}", file=sys.stderr)
        return EXIT_INPUT


def run() -> None:
    sys.exit(main())


if __name__ == "__main__":
    run()
