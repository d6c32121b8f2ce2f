"""Acceptance checks.

Checks 1-9 need an Equinox CSV export (columns wmc, rfc, cbo, lcom, nloc,
bugs) pointed to by ``ZIDEFECT_EQUINOX_CSV``; they skip otherwise. Checks
10-17 run on synthetic data. Each check prints one PASS/FAIL/SKIP line in
the terminal summary.
"""

import math
import subprocess
import sys
import time
import warnings

import numpy as np
import pytest

from conftest import ACCEPTANCE_DETAILS, metric_like
from zidefect.bayes_zip import McmcConfig, PosteriorChains, diagnostics, dic, sample_zip_posterior, zip_deviance
from zidefect.count_models import (
    fit,
    fit_zip_em,
    loglik,
    loglik_gradient,
    n_params,
    predict_total,
    standard_errors,
    zip_pmf,
)
from zidefect.ingest import Dataset, ModelSpec, build_design
from zidefect.numerics import finite_diff_gradient
from zidefect.simulate import SimSpec, gen_dataset, grid_mle_oracle

COUNT = ("wmc", "rfc", "cbo", "lcom")


def note(request, text):
    ACCEPTANCE_DETAILS[request.node.nodeid] = text


def fit_equinox(d, family, zero=()):
    spec = ModelSpec(family, COUNT, zero)
    dm = build_design(d, spec)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        m = fit(spec, dm)
    return m, dm


# -- dataset-dependent ---------------------------------------------------------

def test_criterion_01_poisson(equinox, request):
    t = time.perf_counter()
    m, _ = fit_equinox(equinox, "poisson")
    dt = time.perf_counter() - t
    note(request, f"AIC={m.aic:.4f} BIC={m.bic:.4f} {dt:.2f}s")
    assert abs(m.aic - 632.1547) <= 0.01
    assert abs(m.bic - 651.0584) <= 0.01
    assert dt < 1.0


def test_criterion_02_zip_nloc(equinox, request):
    m, dm = fit_equinox(equinox, "zip", ("nloc",))
    total = predict_total(m, dm)
    note(request, f"AIC={m.aic:.4f} BIC={m.bic:.4f} total={total:.4f} observed={int(equinox.bugs.sum())}")
    assert abs(m.aic - 606.9155) <= 0.05
    assert abs(m.bic - 633.3807) <= 0.05
    assert abs(total - 195.7924) <= 0.5


def test_criterion_03_zip_wmc(equinox, request):
    m, _ = fit_equinox(equinox, "zip", ("wmc",))
    note(request, f"AIC={m.aic:.4f}")
    assert abs(m.aic - 602.9) <= 0.5


def test_criterion_04_zinb(equinox, request):
    m, dm = fit_equinox(equinox, "zinb", ("nloc",))
    total = predict_total(m, dm)
    note(request, f"AIC={m.aic:.4f} total={total:.4f}")
    assert abs(m.aic - 607.5639) <= 0.1
    assert abs(total - 198.2048) <= 0.5


def test_criterion_05_negbin(equinox, request):
    m, _ = fit_equinox(equinox, "negbin")
    note(request, f"AIC={m.aic:.4f}")
    assert abs(m.aic - 628.55) <= 0.1


def test_criterion_06_linear(equinox, request):
    m, dm = fit_equinox(equinox, "linear")
    total = predict_total(m, dm)
    note(request, f"AIC={m.aic:.4f} total={total:.4f}")
    assert abs(m.aic - 904.8354) <= 0.01
    assert abs(total - 97.76806) <= 0.5


def test_criterion_07_ranking(equinox, request):
    order = [("zip", ("wmc",)), ("zip", ("nloc",)), ("zinb", ("nloc",)),
             ("negbin", ()), ("poisson", ()), ("linear", ())]
    aics = [fit_equinox(equinox, f, z)[0].aic for f, z in order]
    note(request, " < ".join(f"{a:.2f}" for a in aics))
    assert all(a < b for a, b in zip(aics, aics[1:]))


def test_criterion_08_bayes(equinox, request):
    spec = ModelSpec("zip", COUNT, ("nloc",))
    dm = build_design(equinox, spec)
    t = time.perf_counter()
    post = sample_zip_posterior(dm, McmcConfig(chains=3, iterations=20000, burn_in=5000, seed=0))
    res = dic(post, dm)
    rhat = max(v[0] for v in diagnostics(post).values())
    dt = time.perf_counter() - t
    note(request, f"DIC={res.dic:.2f} pD={res.p_d:.2f} max Rhat={rhat:.3f} {dt:.0f}s")
    assert abs(res.dic - 622.5) <= 10
    assert rhat < 1.05
    assert dt < 300


def test_criterion_09_param_counts(equinox, request):
    rows = [("linear", (), 6), ("poisson", (), 5), ("negbin", (), 6),
            ("zip", ("nloc",), 7), ("zinb", ("nloc",), 8)]
    worst = 0.0
    for fam, zero, k in rows:
        m, _ = fit_equinox(equinox, fam, zero)
        assert m.k == k and m.n == 324
        worst = max(worst, abs((m.bic - m.aic) - k * (math.log(324) - 2)))
    note(request, f"max deviation {worst:.2e}")
    assert worst <= 1e-6


# -- property-based ------------------------------------------------------------

def test_criterion_10_pmf_normalisation(request):
    worst = 0.0
    for lam in (0.01, 0.5, 2.0, 10.0, 40.0):
        for pi in (0.0, 0.1, 0.5, 0.9, 1.0):
            h = np.arange(0, 200)
            worst = max(worst, abs(float(zip_pmf(h, lam, pi).sum()) - 1.0))
    note(request, f"max |sum - 1| = {worst:.1e}")
    assert worst <= 1e-9


def test_criterion_11_gradients(request):
    rng = np.random.default_rng(2024)
    n = 80
    x1, x2, z1 = rng.uniform(0, 2, n), rng.uniform(-1, 1, n), rng.uniform(0, 2, n)
    y = np.where(rng.random(n) < 0.3, 0, rng.poisson(np.exp(0.2 + 0.5 * x1)))
    d = Dataset(tuple(map(str, range(n))), {"x1": x1, "x2": x2, "z1": z1}, y)
    worst = 0.0
    for fam in ("linear", "poisson", "negbin", "zip", "zinb"):
        spec = ModelSpec(fam, ("x1", "x2"), ("z1",) if fam in ("zip", "zinb") else ())
        dm = build_design(d, spec)
        for _ in range(20):
            p = rng.uniform(-0.7, 0.7, n_params(spec))
            g = loglik_gradient(spec, p, dm)
            fd = finite_diff_gradient(lambda v: loglik(spec, v, dm), p)
            worst = max(worst, float(np.max(np.abs(g - fd) / np.maximum(1.0, np.abs(g)))))
    note(request, f"max relative gap {worst:.1e}")
    assert worst <= 1e-5


def oracle_datasets():
    rates = [(2.0, 0.3), (1.0, 0.5), (4.0, 0.2), (0.7, 0.4), (3.0, 0.6),
             (1.5, 0.1), (2.5, 0.45), (5.0, 0.35), (0.9, 0.2), (1.2, 0.7)]
    out = []
    for seed, (lam, pi) in enumerate(rates):
        out.append(gen_dataset(SimSpec(n=5000, beta_count=[math.log(lam)],
                                       gamma_zero=[math.log(pi / (1 - pi))], seed=100 + seed)))
    return out


def test_criterion_12_oracle(request):
    worst = 0.0
    for d in oracle_datasets():
        m = fit_zip_em(build_design(d, ModelSpec("zip")))
        lam, pi = grid_mle_oracle(d.bugs)
        lam_em = math.exp(m.beta_count[0])
        pi_em = 1.0 / (1.0 + math.exp(-m.gamma_zero[0]))
        worst = max(worst, abs(lam_em - lam), abs(pi_em - pi))
    note(request, f"max gap {worst:.2e} (limit 1.5e-3)")
    assert worst <= 1.5e-3


RECOVERY_TRUTH = np.array([0.4, 0.6, -0.3, -0.8, 0.9])


def recovery_dataset(seed):
    return gen_dataset(SimSpec(n=5000, beta_count=RECOVERY_TRUTH[:3], gamma_zero=RECOVERY_TRUTH[3:],
                               covariate_law={"x1": (0, 2), "x2": (0, 2), "z1": (0, 2)}, seed=200 + seed))


def test_criterion_13_recovery(request):
    spec = ModelSpec("zip", ("x1", "x2"), ("z1",))
    hits = np.zeros(RECOVERY_TRUTH.size, dtype=int)
    for seed in range(10):
        dm = build_design(recovery_dataset(seed), spec)
        m = fit(spec, dm)
        se = standard_errors(m, dm)
        hits += np.abs(m.params - RECOVERY_TRUTH) <= 3 * se
    note(request, f"coverage per coefficient {hits.tolist()} / 10")
    assert np.all(hits >= 9)


def test_criterion_14_nesting(request):
    sets = [(d, (), ()) for d in oracle_datasets()]
    sets += [(recovery_dataset(s), ("x1", "x2"), ("z1",)) for s in range(3)]
    sets += [(metric_like(seed), COUNT, ("nloc",)) for seed in (1, 2)]
    worst_gap, worst_drop = math.inf, 0.0
    for d, count, zero in sets:
        ps = ModelSpec("poisson", count)
        lp = fit(ps, build_design(d, ps)).loglik
        em = fit_zip_em(build_design(d, ModelSpec("zip", count, zero)))
        worst_gap = min(worst_gap, em.loglik - lp)
        worst_drop = max(worst_drop, -float(np.min(np.diff(em.history))))
    note(request, f"min ZIP-Poisson gap {worst_gap:.3g}, max EM decrease {worst_drop:.1e}")
    assert worst_gap >= 0
    assert worst_drop <= 0


def test_criterion_15_score_identity(request):
    worst = 0.0
    for d, count in [(metric_like(1), COUNT), (metric_like(5), COUNT), (recovery_dataset(0), ("x1", "x2"))]:
        spec = ModelSpec("poisson", count)
        m = fit(spec, build_design(d, spec))
        worst = max(worst, abs(float(m.fitted_lambda.sum()) - float(d.bugs.sum())))
    note(request, f"max |sum lambda - sum y| = {worst:.1e}")
    assert worst <= 1e-6


def test_criterion_16_mcmc(request):
    d = gen_dataset(SimSpec(n=5000, beta_count=[0.5, 0.4], gamma_zero=[-0.7, 0.6],
                            covariate_law={"x1": (0, 2), "z1": (0, 2)}, seed=300))
    dm = build_design(d, ModelSpec("zip", ("x1",), ("z1",)))
    cfg = McmcConfig(chains=2, iterations=2000, burn_in=800, seed=7)
    post = sample_zip_posterior(dm, cfg)
    mle = fit_zip_em(dm).params
    gap = float(np.max(np.abs(post.posterior_mean() - mle)))

    again = sample_zip_posterior(dm, cfg)
    same = again.draws.tobytes() == post.draws.tobytes() and again.deviance.tobytes() == post.deviance.tobytes()

    point = np.broadcast_to(mle, (2, 200, mle.size)).copy()
    dev = zip_deviance(dm, mle[:2], mle[2:])
    p_d = dic(PosteriorChains(point, np.full((2, 200), dev), cfg, {}, 2), dm).p_d

    note(request, f"max |mean - MLE| {gap:.4f}, degenerate pD {p_d}, bitwise repeat {same}")
    assert gap <= 0.05
    assert p_d == 0.0
    assert same


def test_criterion_17_cli_pipeline(tmp_path, request):
    def run(*args):
        r = subprocess.run([sys.executable, "-m", "zidefect", *args], capture_output=True)
        assert r.returncode == 0, r.stderr.decode()
        return r

    outputs = []
    for tag in ("a", "b"):
        data, model, pred = (tmp_path / f"{tag}.csv", tmp_path / f"{tag}.json", tmp_path / f"{tag}_pred.csv")
        run("simulate", "--n", "500", "--seed", "42", "--beta", "0.3,0.5", "--gamma=-1,0.7",
            "--low", "0", "--high", "2", "--out", str(data))
        run("fit", "--data", str(data), "--family", "zip", "--count", "x1", "--zero", "z1", "--out", str(model))
        run("predict", "--model", str(model), "--data", str(data), "--format", "csv", "--out", str(pred))
        outputs.append(tuple(p.read_bytes() for p in (data, model, pred)))
    identical = outputs[0] == outputs[1]
    note(request, f"exit 0 throughout, byte-identical reruns {identical}")
    assert identical
