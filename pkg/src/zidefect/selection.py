"""Model comparison reports and criterion-driven stepwise covariate search."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, asdict, field

import numpy as np

from . import count_models
from .criteria import aic, bic
from .errors import AllFitsFailed, DataError, FitError, ZidefectError
from .ingest import Dataset, ModelSpec, build_design

log = logging.getLogger(__name__)

__all__ = [
    "aic", "bic", "ReportRow", "ComparisonReport", "compare", "standard_specs",
    "stepwise_select", "REFERENCE_VALUES",
]

COUNT_COVARIATES = ("wmc", "rfc", "cbo", "lcom")

# Published reference values keyed by row label: (AIC, BIC or DIC, bugs predicted).
REFERENCE_VALUES = {
    "Linear regression": (904.8354, 927.5198, 97.76806),
    "Poisson": (632.1547, 651.0584, 188.7356),
    "Neg. binom.": (628.5507, 651.2, None),
    "ZIP (zero: nloc)": (606.9155, 633.3807, 195.7924),
    "ZIP (zero: wmc)": (602.9, 629.0, None),
    "ZINB (zero: nloc)": (607.5639, 637.8098, 198.2048),
    "ZIP Bayes (zero: nloc)": (None, 622.5, None),
}

_FAMILY_LABEL = {
    "linear": "Linear regression",
    "poisson": "Poisson",
    "negbin": "Neg. binom.",
    "zip": "ZIP",
    "zinb": "ZINB",
}


def spec_label(spec: ModelSpec) -> str:
    label = _FAMILY_LABEL[spec.family]
    if spec.count_covariates != COUNT_COVARIATES:
        label += f" [{','.join(spec.count_covariates) or '1'}]"
    if spec.zero_inflated:
        label += f" (zero: {','.join(spec.zero_covariates) or '1'})"
    return label


def standard_specs(count=COUNT_COVARIATES) -> list[ModelSpec]:
    """Linear, Poisson, NB, ZIP with nloc and wmc zero covariates, ZINB."""
    count = tuple(count)
    return [
        ModelSpec("linear", count),
        ModelSpec("poisson", count),
        ModelSpec("negbin", count),
        ModelSpec("zip", count, ("nloc",)),
        ModelSpec("zip", count, ("wmc",)),
        ModelSpec("zinb", count, ("nloc",)),
    ]


@dataclass
class ReportRow:
    label: str
    family: str
    k: int | None = None
    loglik: float | None = None
    aic: float | None = None
    bic: float | None = None
    dic: float | None = None
    predicted_total: float | None = None
    converged: bool | None = None
    error: str | None = None
    extra: dict = field(default_factory=dict)

    @property
    def criterion(self) -> float:
        if self.error is not None:
            return math.inf
        return self.dic if self.dic is not None else self.aic


@dataclass
class ComparisonReport:
    rows: list[ReportRow]
    n: int
    observed_total: int

    def to_dicts(self) -> list[dict]:
        out = []
        for r in self.rows:
            d = {k: v for k, v in asdict(r).items() if k != "extra"}
            d.update(r.extra)
            out.append(d)
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dicts(), indent=2) + "\n"

    def to_text(self, show_reference: bool = False) -> str:
        def num(v, digits=4):
            return "-" if v is None else f"{v:.{digits}f}"

        header = ["Method", "AIC", "BIC/DIC", "#Bugs predicted"]
        if show_reference:
            header += ["Ref AIC", "Ref BIC/DIC", "Ref #Bugs"]
        body = []
        for r in self.rows:
            if r.error is not None:
                line = [r.label, "error", r.error, "-"]
                if show_reference:
                    line += ["", "", ""]
                body.append(line)
                continue
            if r.dic is not None:
                line = [r.label, "-", f"DIC={r.dic:.4f}", num(r.predicted_total)]
            else:
                line = [r.label, num(r.aic), num(r.bic), num(r.predicted_total)]
            if show_reference:
                ref = REFERENCE_VALUES.get(r.label)
                line += [num(v) for v in ref] if ref else ["", "", ""]
            body.append(line)
        widths = [max(len(row[i]) for row in [header] + body) for i in range(len(header))]

        def fmt(row):
            cells = [row[0].ljust(widths[0])] + [c.rjust(w) for c, w in zip(row[1:], widths[1:])]
            return " | ".join(cells).rstrip()

        rule = "-+-".join("-" * w for w in widths)
        lines = [fmt(header), rule] + [fmt(r) for r in body]
        lines.append(f"n = {self.n}, observed bugs = {self.observed_total}")
        return "\n".join(lines) + "\n"


def _row_key(r: ReportRow):
    return (r.criterion, r.label, r.family)


def _fit_row(dataset: Dataset, spec: ModelSpec, label: str | None = None) -> ReportRow:
    label = label or spec_label(spec)
    try:
        dm = build_design(dataset, spec)
        m = count_models.fit(spec, dm)
        total = count_models.predict_total(m, dm)
    except ZidefectError as exc:
        return ReportRow(label, spec.family, error=f"{type(exc).__name__}: {exc}")
    return ReportRow(label, spec.family, k=m.k, loglik=m.loglik, aic=m.aic, bic=m.bic,
                     predicted_total=total, converged=m.converged)


def _bayes_row(dataset: Dataset, spec: ModelSpec, cfg) -> ReportRow:
    from . import bayes_zip

    label = "ZIP Bayes" + spec_label(spec)[len("ZIP"):]
    try:
        dm = build_design(dataset, spec)
        post = bayes_zip.sample_zip_posterior(dm, cfg)
        res = bayes_zip.dic(post, dm)
        diag = bayes_zip.diagnostics(post)
        flat = post.flat()
        totals = []
        for chunk in np.array_split(flat, max(1, flat.shape[0] // 2000)):
            lam = np.exp(np.clip(chunk[:, :post.n_count] @ dm.X.T, -500, 500))
            pi = 1.0 / (1.0 + np.exp(-np.clip(chunk[:, post.n_count:] @ dm.Z.T, -500, 500)))
            totals.append(((1.0 - pi) * lam).sum(axis=1))
        total = float(np.mean(np.concatenate(totals)))
    except ZidefectError as exc:
        return ReportRow(label, "zip", error=f"{type(exc).__name__}: {exc}")
    k = dm.X.shape[1] + dm.Z.shape[1]
    ll = -0.5 * res.deviance_at_mean
    max_rhat = max(v[0] for v in diag.values())
    return ReportRow(label, "zip", k=k, loglik=ll, aic=aic(ll, k), bic=bic(ll, k, dm.n),
                     dic=res.dic, predicted_total=total, converged=max_rhat < 1.05,
                     extra={"p_d": res.p_d, "max_rhat": max_rhat, "method": "bayes"})


def compare(dataset: Dataset, specs, include_bayes: bool = False, cfg=None,
            bayes_spec: ModelSpec | None = None) -> ComparisonReport:
    """Fit every spec and return rows sorted by AIC (DIC for the Bayesian row).

    A spec that fails becomes a row carrying the error message; the report
    only fails when nothing could be fitted.
    """
    specs = list(specs)
    rows = [_fit_row(dataset, s) for s in specs]
    if include_bayes:
        if bayes_spec is None:
            zips = [s for s in specs if s.family == "zip"]
            if not zips:
                raise DataError("include_bayes needs a zip spec to sample")
            # order-independent choice keeps the report a function of the spec set
            bayes_spec = min(zips, key=lambda s: (s.count_covariates, s.zero_covariates))
        rows.append(_bayes_row(dataset, bayes_spec, cfg))
    if not rows or all(r.error is not None for r in rows):
        raise AllFitsFailed("no model in the comparison could be fitted")
    rows.sort(key=_row_key)
    return ComparisonReport(rows, dataset.n, int(dataset.bugs.sum()))


@dataclass(frozen=True)
class TraceStep:
    step: int
    move: str
    criterion: float
    covariates: tuple[str, ...]


def _criterion_value(dataset, family, covs, zero, criterion):
    spec = ModelSpec(family, tuple(covs), tuple(zero))
    m = count_models.fit(spec, build_design(dataset, spec))
    return aic(m.loglik, m.k) if criterion == "aic" else bic(m.loglik, m.k, m.n)


def stepwise_select(dataset: Dataset, family: str, candidate_covariates,
                    criterion: str = "aic", zero_covariates=()):
    """Greedy add-or-drop search over the count covariates.

    The search starts from whichever of the intercept-only and the full
    model scores better, then repeatedly applies the single add or drop
    with the largest criterion decrease, stopping when no move improves.
    Ties go to the alphabetically first covariate. The zero component, if
    any, stays fixed at ``zero_covariates``.

    Returns ``(spec, trace)`` where trace lists every accepted step.
    """
    if criterion not in ("aic", "bic"):
        raise DataError("criterion must be 'aic' or 'bic'")
    candidates = sorted(dict.fromkeys(candidate_covariates))
    if not candidates:
        raise DataError("stepwise_select needs at least one candidate covariate")
    zero = tuple(zero_covariates)
    cache: dict[frozenset, float] = {}

    def score(covs):
        key = frozenset(covs)
        if key not in cache:
            cache[key] = _criterion_value(dataset, family, sorted(covs), zero, criterion)
        return cache[key]

    empty, full = score(()), score(candidates)
    if full < empty:
        current, cur_val, start = list(candidates), full, "start:full"
    else:
        current, cur_val, start = [], empty, "start:empty"
    trace = [TraceStep(0, start, cur_val, tuple(current))]

    step = 0
    while True:
        moves = []
        for c in candidates:
            if c in current:
                moves.append((f"-{c}", [x for x in current if x != c], c))
            else:
                moves.append((f"+{c}", current + [c], c))
        best = None
        for move, covs, c in moves:
            try:
                val = score(covs)
            except FitError as exc:
                log.info("stepwise: move %s skipped (%s)", move, exc)
                continue
            if best is None or val < best[0] or (val == best[0] and c < best[2]):
                best = (val, move, c, covs)
        if best is None or not best[0] < cur_val:
            break
        step += 1
        cur_val, current = best[0], best[3]
        trace.append(TraceStep(step, best[1], cur_val, tuple(sorted(current, key=candidates.index))))

    ordered = tuple(c for c in candidates if c in current)
    return ModelSpec(family, ordered, zero), trace
