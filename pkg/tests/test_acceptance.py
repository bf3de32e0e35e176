"""Acceptance criteria.  Each test records one PASS/FAIL line that is printed
in the terminal summary (see ``conftest.py``)."""

import math
import time

import numpy as np
import pytest

from oracle import cone_projected_fit, naive_derivatives, pava
from scarpy import Dataset, EfFamily, FittedModel, fit_scaie, fit_scmle, load, save
from scarpy.active_set import Design, compute_derivatives
from scarpy.basis import FREE_FIRST_LABELS, LINEAR, build_bases, check_shape
from scarpy.simulate import SimConfig, rows_to_csv, run_simulation

GAUSS, POIS, BINOM, GAMMA = (EfFamily.from_name(k) for k in
                             ("gaussian", "poisson", "binomial", "gamma"))


def _metric(rows, name):
    return [r["value"] for r in rows if r["metric"] == name]


def test_c1_example2(example2, record):
    fit_scmle(example2, (2, 2), GAUSS)  # warm caches
    t0 = time.perf_counter()
    fit = fit_scmle(example2, (2, 2), GAUSS)
    secs = time.perf_counter() - t0
    err = max(np.max(np.abs(fit.fitted_eta - [-0.25, 0.25, 0.25, 0.75])),
              abs(fit.loglik - 3 / 32))
    ok = err <= 1e-8 and secs < 0.1
    record("C1 example-2 exactness", ok, f"max err {err:.1e}, {secs * 1e3:.1f} ms")
    assert ok


def test_c2_pava(record):
    rng = np.random.default_rng(2002)
    worst = 0.0
    t0 = time.perf_counter()
    for k in range(100):
        n = int(rng.integers(5, 201))
        x = np.round(rng.uniform(-1, 1, n), 2)  # include ties
        y = (1 if k % 2 == 0 else -1) * x + rng.normal(size=n)
        label = 2 if k % 2 == 0 else 3
        fit = fit_scmle(Dataset(x[:, None], y), (label,), GAUSS)
        # ties share a knot, so PAVA runs on tie-block means with block weights
        knots, inv, cnt = np.unique(x, return_inverse=True, return_counts=True)
        means = np.bincount(inv, weights=y) / cnt
        ref = pava(means, increasing=label == 2, weights=cnt)[inv]
        worst = max(worst, float(np.max(np.abs(fit.fitted_eta - ref))))
    secs = time.perf_counter() - t0
    ok = worst <= 1e-6 and secs < 30
    record("C2 isotonic oracle", ok, f"sup err {worst:.1e}, {secs:.1f} s")
    assert ok


def test_c3_cone_oracle(record):
    rng = np.random.default_rng(2003)
    worst = 0.0
    t0 = time.perf_counter()
    for _ in range(20):
        n = int(rng.integers(10, 61))
        d = int(rng.integers(1, 3))
        shapes = tuple(int(s) for s in rng.integers(2, 10, size=d))
        X = rng.uniform(-1, 1, size=(n, d))
        y = np.sin(2 * X).sum(axis=1) + X[:, 0] ** 2 + rng.normal(scale=0.3, size=n)
        fit = fit_scmle(Dataset(X, y), shapes, GAUSS)
        ref = cone_projected_fit(X, y, shapes, tol=1e-12)[0]
        worst = max(worst, float(np.max(np.abs(fit.fitted_eta - ref))))
    secs = time.perf_counter() - t0
    ok = worst <= 1e-5 and secs < 300
    record("C3 cone oracle", ok, f"sup err {worst:.1e}, {secs:.1f} s")
    assert ok


def test_c4_derivatives(record):
    rng = np.random.default_rng(2004)
    labels = tuple(range(1, 10))
    worst = 0.0
    for _ in range(50):
        X = rng.normal(size=(200, 9))
        X[:, rng.integers(9)] = np.round(X[:, 0], 1)
        r = rng.normal(size=200)
        fast = compute_derivatives(r, build_bases(X, labels))
        slow = naive_derivatives(r, X, labels)
        worst = max(worst, max(float(np.max(np.abs(a - b), initial=0.0))
                               for a, b in zip(fast, slow)))
    X = rng.normal(size=(5000, 8))
    shapes = tuple(range(2, 10))
    r = rng.normal(size=5000)
    bases = build_bases(X, shapes)
    t0 = time.perf_counter()
    for _ in range(5):
        compute_derivatives(r, bases)
    t_fast = (time.perf_counter() - t0) / 5
    t0 = time.perf_counter()
    naive_derivatives(r, X, shapes)
    t_slow = time.perf_counter() - t0
    speedup = t_slow / t_fast
    ok = worst <= 1e-12 and speedup >= 20
    record("C4 derivative recurrences", ok, f"max err {worst:.1e}, speedup {speedup:.0f}x")
    assert ok


def _random_cone_point(design, rng, family):
    w = np.zeros(design.dim)
    for j, b in enumerate(design.bases):
        lo, hi = design.offsets[j], design.offsets[j + 1]
        if b.label == LINEAR:
            w[lo] = rng.normal()
            continue
        seg = rng.exponential(size=hi - lo) * (rng.random(hi - lo) < 0.2)
        if b.label in FREE_FIRST_LABELS:
            seg[0] = rng.normal()
        w[lo:hi] = seg / max(1, hi - lo) * 5
    if family is GAMMA:
        w[1:] *= 0.1
        w[0] = 0.0
        w[0] = -1.0 - np.max(design.eta(w))  # keeps every eta below -1
    else:
        w[0] = rng.normal()
    return w


@pytest.mark.parametrize("fam", [GAUSS, POIS, BINOM, GAMMA], ids=lambda f: f.name)
def test_c5_gradient(fam, record):
    rng = np.random.default_rng(2005)
    n, shapes = 40, (1, 2, 4, 6, 8)
    X = rng.uniform(-1, 1, size=(n, len(shapes)))
    y = {"gaussian": rng.normal(size=n), "poisson": rng.poisson(2.0, n).astype(float),
         "binomial": rng.integers(0, 2, n).astype(float),
         "gamma": rng.gamma(2.0, 1.0, n)}[fam.name]
    design = Design(Dataset(X, y), shapes, fam)
    worst = 0.0
    for _ in range(50):
        w = _random_cone_point(design, rng, fam)
        g = design.gradient(w)
        fd = np.empty_like(g)
        for k in range(design.dim):
            h = 1e-6 * max(1.0, abs(w[k]))
            e = np.zeros_like(w)
            e[k] = h
            fd[k] = (design.psi(w + e) - design.psi(w - e)) / (2 * h)
        rel = np.abs(g - fd) / np.maximum(np.abs(fd), 1e-3 * np.max(np.abs(fd)))
        worst = max(worst, float(rel.max()))
    ok = worst <= 1e-4
    record(f"C5 gradient ({fam.name})", ok, f"max relative err {worst:.1e}")
    assert ok


def _mean_metric(cfg, metric):
    rows = run_simulation(cfg)
    return float(np.mean(_metric(rows, metric))), rows


def test_c6_gaussian_mise(record):
    t0 = time.perf_counter()
    m1, _ = _mean_metric(SimConfig(problem=1, family="gaussian", n=500, reps=10, n_mc=20_000),
                         "mise")
    m2, _ = _mean_metric(SimConfig(problem=2, family="gaussian", n=500, reps=10, n_mc=20_000),
                         "mise")
    secs = time.perf_counter() - t0
    ok = 0.10 <= m1 <= 0.25 and 0.06 <= m2 <= 0.16 and secs < 600
    record("C6 Gaussian MISE", ok, f"P1 {m1:.3f} (ref 0.167), P2 {m2:.3f} (ref 0.101), "
           f"{secs:.0f} s")
    assert ok


def test_c7_poisson_mise(record):
    t0 = time.perf_counter()
    m, _ = _mean_metric(SimConfig(problem=1, family="poisson", n=500, reps=10, n_mc=20_000),
                        "mise")
    secs = time.perf_counter() - t0
    ok = 0.08 <= m <= 0.20 and secs < 900
    record("C7 Poisson MISE", ok, f"P1 {m:.3f} (ref 0.131), {secs:.0f} s")
    assert ok


def test_c8_index_recovery(record):
    t0 = time.perf_counter()
    rows4 = run_simulation(SimConfig(problem=4, n=500, reps=10, N=100, n_mc=2000))
    rmse = math.sqrt(float(np.mean(_metric(rows4, "index_sqerr"))))
    rows5 = run_simulation(SimConfig(problem=5, n=500, reps=10, N=100, delta=0.1, n_mc=2000))
    amari = float(np.mean(_metric(rows5, "amari")))
    secs = time.perf_counter() - t0
    ok = 0.05 <= rmse <= 0.20 and 0.07 <= amari <= 0.27 and secs < 1800
    record("C8 index recovery", ok, f"P4 RMSE {rmse:.3f} (ref 0.100), "
           f"P5 Amari {amari:.3f} (ref 0.135), {secs:.0f} s")
    assert ok


def test_c9_property_suite(record):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2009)
    failures = []
    for trial in range(10):
        shapes = tuple(int(s) for s in rng.integers(1, 10, size=3))
        n = 60
        X = rng.uniform(-1, 1, size=(n, 3))
        f = np.sin(2 * X[:, 0]) + X[:, 1] ** 2 - X[:, 2]
        for fam in (GAUSS, POIS, BINOM):
            if fam is GAUSS:
                y = f + rng.normal(scale=0.5, size=n)
            elif fam is POIS:
                y = rng.poisson(np.exp(0.5 * f)).astype(float)
            else:
                y = rng.binomial(1, 1 / (1 + np.exp(-f))).astype(float)
            data = Dataset(X, y)
            fit = fit_scmle(data, shapes, fam)
            tag = f"trial {trial} {fam.name} {shapes}"
            # permutation invariance
            perm = rng.permutation(n)
            fit_p = fit_scmle(data.subset(perm), shapes, fam)
            # compared on the mean scale: saturated linear predictors diverge
            # and their finite stopping values are not identified
            mu, mu_p = fam.inv_link(fit.fitted_eta), fam.inv_link(fit_p.fitted_eta)
            if np.max(np.abs(mu_p - mu[perm])) > 1e-6:
                failures.append(f"{tag}: permutation")
            # shape compliance on a dense grid beyond the data range
            grid = np.linspace(-2, 2, 2000)
            for c in fit.components:
                if not (c.in_cone() and check_shape(c, grid)):
                    failures.append(f"{tag}: shape of label {c.label}")
            # KKT: no candidate direction still improves the objective
            design = Design(data, shapes, fam)
            r = design.omega * (y - fam.inv_link(design.eta(_flat(design, fit))))
            D = compute_derivatives(r, design.bases)
            tol = 1e-6 if fam is GAUSS else 1e-8
            for Dj, b in zip(D, design.bases):
                if b.label != LINEAR and np.max(Dj[b.candidate_mask()], initial=-1) > tol:
                    failures.append(f"{tag}: KKT")
            # monotone objective for Gaussian fits
            if fam is GAUSS and np.any(np.diff(fit.history) < 0):
                failures.append(f"{tag}: objective decreased")
            # serialization round trip
            model = FittedModel.from_fit(fit, fam)
            if save(load(save(model))) != save(model):
                failures.append(f"{tag}: round trip")
    cfg = SimConfig(problem=5, n=80, reps=2, N=5, n_mc=300, seed=11)
    if rows_to_csv(run_simulation(cfg)) != rows_to_csv(run_simulation(cfg)):
        failures.append("simulate determinism")
    secs = time.perf_counter() - t0
    ok = not failures and secs < 300
    record("C9 property suite", ok, f"{len(failures)} failures, {secs:.0f} s"
           + (f": {failures[:3]}" if failures else ""))
    assert ok, failures


def _flat(design, fit):
    w = np.zeros(design.dim)
    w[0] = fit.intercept
    for j, c in enumerate(fit.components):
        w[design.offsets[j]:design.offsets[j + 1]] = c.weights
    return w


def test_c10_saturation_guard(record):
    t0 = time.perf_counter()
    gaps = []
    for seed in range(20):
        rng = np.random.default_rng(seed)
        X = rng.normal(size=(20, 2))
        y = rng.normal(size=20)
        perfect = float(np.mean(y ** 2) / 2)
        fit = fit_scaie(Dataset(X, y), (2, 3), GAUSS, N=100, delta=0.1, seed=seed)
        gaps.append(perfect - fit.loglik)
    secs = time.perf_counter() - t0
    ok = min(gaps) > 1e-8 and secs < 120
    record("C10 saturated-fit guard", ok, f"min gap to perfect fit {min(gaps):.3g}, {secs:.0f} s")
    assert ok
