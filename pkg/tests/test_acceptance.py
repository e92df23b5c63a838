"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v`` or directly as a script.
Every test also enforces its runtime budget.
"""

import math
import sys
import time
import warnings

import numpy as np
import pytest

from crpsbench.config import bundled_config, load_config
from crpsbench.estimators import TieWarning, crps_energy_form, crps_pwm_plugin, crps_unbiased
from crpsbench.exact import crps_gaussian, crps_gaussian_terms, predicted_plugin_bias
from crpsbench.forecast import make_rng
from crpsbench.harness import AckleySpec, ConvergenceConfig, SlicewiseConfig, run_convergence, run_ranking, run_slicewise
from crpsbench.kernquad import CrpsKernel, choose_xi, crps_kernquad, nystrom_features, recombine
from oracles import CRPS_STD_NORMAL_AT_0, crps_integral_vec, unbiased_naive

# C(F) = E[Y F(Y)] for N(0, 1); -2 C(F) / M is the plug-in CRPS bias
CDF_TERM_STD_NORMAL = 0.5 / math.sqrt(math.pi)


@pytest.fixture
def report(capsys):
    """Print one PASS/FAIL line, then fail the test if any check failed."""

    def _report(number, title, checks, elapsed, budget, detail=""):
        ok_time = elapsed < budget
        ok = all(checks.values()) and ok_time
        failed = [name for name, v in checks.items() if not v] + ([] if ok_time else ["runtime"])
        line = f"{'PASS' if ok else 'FAIL'} criterion {number:>2} {title}: {detail} [{elapsed:.1f}s < {budget}s]"
        if failed:
            line += f" failed: {', '.join(failed)}"
        with capsys.disabled():
            print("\n" + line)
        assert ok, line

    return _report


def test_01_closed_form_fidelity(report):
    t0 = time.perf_counter()
    m, s, y = np.meshgrid(np.linspace(-3, 3, 21), np.linspace(0.1, 5, 21), np.linspace(-5, 5, 21), indexing="ij")
    ref = crps_integral_vec(m, s, y)
    got = crps_gaussian(m.ravel(), s.ravel(), y.ravel())
    err = float(np.max(np.abs(got - ref)))
    report(1, "closed form vs quadrature", {"max_abs_err<=1e-8": err <= 1e-8},
           time.perf_counter() - t0, 10, f"max |err| {err:.2e} on 9261 points")


def test_02_term_identity(report):
    t0 = time.perf_counter()
    rng = make_rng(2)
    m, s, y = rng.uniform(-10, 10, 10**4), rng.uniform(0.01, 10, 10**4), rng.uniform(-20, 20, 10**4)
    err = float(np.max(np.abs(crps_gaussian_terms(m, s, y).total - crps_gaussian(m, s, y))))
    report(2, "term identity", {"max_abs_err<=1e-12": err <= 1e-12},
           time.perf_counter() - t0, 1, f"max |err| {err:.2e} on 1e4 triples")


def test_03_unbiasedness(report):
    t0 = time.perf_counter()
    R, M = 20000, 64
    x = make_rng(3).standard_normal((R, M))
    unb = crps_unbiased(x, 0.0).value
    pwm = crps_pwm_plugin(x, 0.0).value
    se_u = unb.std(ddof=1) / math.sqrt(R)
    se_p = pwm.std(ddof=1) / math.sqrt(R)
    dev_u = unb.mean() - CRPS_STD_NORMAL_AT_0
    dev_p = pwm.mean() - CRPS_STD_NORMAL_AT_0
    expected = 2 * CDF_TERM_STD_NORMAL / M
    checks = {"unbiased_within_3se": abs(dev_u) <= 3 * se_u,
              "pwm_offset_within_3se": abs(dev_p - expected) <= 3 * se_p}
    report(3, "unbiasedness at M=64", checks, time.perf_counter() - t0, 60,
           f"unbiased dev {dev_u:+.5f} (3SE {3 * se_u:.5f}); pwm dev {dev_p:+.5f} vs {expected:+.5f} "
           f"(3SE {3 * se_p:.5f})")


def test_04_plugin_bias_law(report):
    # E[C_pwm - C_unbiased] isolates the plug-in bias: the U-statistic CDF
    # term is exactly unbiased, and the paired difference cancels most noise
    t0 = time.perf_counter()
    checks, parts = {}, []
    for M in (10, 100, 1000):
        R = 10**6 // M
        x = make_rng((4, M)).standard_normal((R, M))
        diff = crps_pwm_plugin(x, 0.0).terms.cdf_term - crps_unbiased(x, 0.0).terms.cdf_term
        emp, se = diff.mean(), diff.std(ddof=1) / math.sqrt(R)
        pred = predicted_plugin_bias(0.0, 1.0, M)
        rel = abs(emp - pred) / abs(pred)
        checks[f"M={M}"] = rel <= 0.10
        parts.append(f"M={M}: {emp:.4e} vs {pred:.4e} ({100 * rel:.2f}%, SE {se:.1e}, R={R})")
    report(4, "plug-in bias law", checks, time.perf_counter() - t0, 60, "; ".join(parts))


def test_05_quantile_plateau(report):
    t0 = time.perf_counter()
    cfg = ConvergenceConfig(estimators=("quantile", "unbiased"), M=(10**5,), seeds=3, master_seed=5)
    rep = run_convergence(cfg)
    q = rep.mean_error("quantile", 10**5)
    u = rep.mean_error("unbiased", 10**5)
    floor = rep.floor[9]
    checks = {"quantile>=10x_unbiased": q >= 10 * u, "within_25%_of_floor": abs(q - floor) <= 0.25 * floor}
    report(5, "quantile plateau at Q=9", checks, time.perf_counter() - t0, 120,
           f"quantile {q:.5f}, unbiased {u:.5f} (ratio {q / u:.1f}), floor {floor:.5f}")


def test_06_rate_fits(report):
    t0 = time.perf_counter()
    cfg = ConvergenceConfig(estimators=("pwm_plugin", "unbiased"), M=(100, 1000, 10000, 100000), seeds=10,
                            master_seed=6)
    rep = run_convergence(cfg)
    unb = rep.slope("unbiased", "score_error")
    cdf = rep.slope("pwm_plugin", "cdf_term_score_err")
    # the per-timestep metric, shown for comparison
    unb_abs = rep.slope("unbiased", "abs_error")
    cdf_abs = rep.slope("pwm_plugin", "cdf_term_err")
    checks = {"unbiased_slope": -0.65 <= unb <= -0.35, "pwm_cdf_slope": -1.2 <= cdf <= -0.8}
    report(6, "rate fits", checks, time.perf_counter() - t0, 120,
           f"score-level slopes: unbiased {unb:.3f}, pwm cdf term {cdf:.3f} "
           f"(per-timestep metric: {unb_abs:.3f}, {cdf_abs:.3f})")


def test_07_fast_path_equivalence(report):
    t0 = time.perf_counter()
    rng = make_rng(7)
    worst = 0.0
    for k in range(200):
        M = int(rng.integers(2, 2001))
        x = rng.standard_normal(M) * rng.uniform(0.1, 10) + rng.uniform(-5, 5)
        if k % 4 == 0:
            x = np.round(x, 1)  # tied panels
        y = rng.uniform(-5, 5)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", TieWarning)
            fast = crps_unbiased(x, y).value
        worst = max(worst, abs(fast - unbiased_naive(x, y)[3]))
    report(7, "sorted vs naive U-statistic", {"max_abs_err<=1e-10": worst <= 1e-10},
           time.perf_counter() - t0, 30, f"max |err| {worst:.2e} over 200 panels, M<=2000")


def test_08_energy_form(report):
    t0 = time.perf_counter()
    rng = make_rng(8)
    worst = 0.0
    for _ in range(1000):
        M = int(rng.integers(2, 500))
        x = rng.standard_normal(M) * rng.uniform(0.1, 5) + rng.uniform(-5, 5)
        assert np.unique(x).size == M
        y = rng.uniform(-5, 5)
        worst = max(worst, abs(crps_energy_form(x, y) - crps_unbiased(x, y).value))
    report(8, "energy form identity", {"max_abs_err<=1e-10": worst <= 1e-10},
           time.perf_counter() - t0, 10, f"max |err| {worst:.2e} over 1000 tie-free panels")


def test_09_recombination_exactness(report):
    t0 = time.perf_counter()
    rng = make_rng(9)
    n, M = 32, 5000
    worst_moment, max_m, min_w, worst_sum = 0.0, 0, np.inf, 0.0
    for k in range(200):
        x = rng.standard_normal(M) * rng.uniform(0.2, 3) + rng.uniform(-3, 3)
        y = float(rng.uniform(-3, 3))
        s = 300
        xi = choose_xi(x, y, s, seed=k, continuous=True)
        feats = nystrom_features(x, CrpsKernel(y, xi, continuous=True), s, n, seed=k)
        sup = recombine(feats, x)
        phi = np.hstack([feats.transform(x, np.arange(M)), np.ones((M, 1))])
        full = phi.mean(axis=0)
        comp = sup.weights @ phi[sup.indices]
        worst_moment = max(worst_moment, float(np.max(np.abs(comp - full) / (1 + np.abs(full)))))
        max_m = max(max_m, sup.m)
        min_w = min(min_w, float(sup.weights.min()))
        worst_sum = max(worst_sum, abs(float(sup.weights.sum()) - 1.0))
    checks = {"moments<=1e-8": worst_moment <= 1e-8, "m<=33": max_m <= n + 1, "w>=0": min_w >= 0,
              "sum_w=1": worst_sum <= 1e-12}
    report(9, "recombination exactness", checks, time.perf_counter() - t0, 120,
           f"max moment err {worst_moment:.2e}, max m {max_m}, min w {min_w:.2e}, |sum w - 1| {worst_sum:.1e}")


def test_10_kernquad_agreement(report):
    t0 = time.perf_counter()
    rel = []
    for seed in range(5):
        x = make_rng((10, seed)).standard_normal(10**4)
        ref = crps_unbiased(x, 0.0).value
        rel.append(abs(crps_kernquad(x, 0.0, s=500, n=64, seed=seed).value - ref) / ref)
    cfg = ConvergenceConfig(estimators=("quantile", "kernquad"), M=(1000, 10000, 100000), seeds=3,
                            kernquad_s=500, kernquad_n=64, master_seed=10, problem=AckleySpec(timesteps=25))
    rep = run_convergence(cfg)
    sweep = {M: (rep.mean_error("kernquad", M), rep.mean_error("quantile", M)) for M in cfg.M}
    checks = {"rel<=1e-3": max(rel) <= 1e-3}
    checks.update({f"kernquad<=quantile@M={M}": k <= q for M, (k, q) in sweep.items()})
    report(10, "kernquad agreement", checks, time.perf_counter() - t0, 300,
           f"max rel dev {max(rel):.2e} over 5 rows; sweep (kernquad, quantile): "
           + ", ".join(f"M={M}: {k:.4f} vs {q:.4f}" for M, (k, q) in sweep.items()))


def test_11_slicewise_signatures(report):
    t0 = time.perf_counter()
    table = run_slicewise(SlicewiseConfig(estimators=("quantile", "pwm_plugin", "unbiased"), M=100, seeds=100))
    r = float(np.corrcoef(table.signed_error["pwm_plugin"], table.plugin_bias)[0, 1])
    inside = float(np.mean(np.abs(table.signed_error["unbiased"]) <= 3 * table.std_error["unbiased"]))
    rq = float(np.corrcoef(np.abs(table.signed_error["quantile"]), table.closed)[0, 1])
    checks = {"pwm_corr>0.9": r > 0.9, "unbiased_zero_mean>=95%": inside >= 0.95, "200_slices": table.t.size == 200}
    report(11, "slicewise bias signatures", checks, time.perf_counter() - t0, 600,
           f"pwm corr {r:.3f}; unbiased within 3SE on {100 * inside:.1f}% of slices; "
           f"(quantile |err| vs CRPS corr {rq:.3f}, informational)")


def test_12_ranking_fidelity(report):
    t0 = time.perf_counter()
    cfg = load_config(bundled_config("ranking.cfg"), "ranking")
    res = run_ranking(cfg)
    a, b = cfg.models
    seeds = range(cfg.seeds)
    gaps = [abs(res.gap("low", a, b, seed=r)) for r in seeds]
    floors = [min(res.floors[("low", m, r)] for m in cfg.models) for r in seeds]
    kq = [res.agrees("low", "kernquad", seed=r) for r in seeds]
    qu = [res.agrees("low", "quantile", seed=r) for r in seeds]
    checks = {"gap_below_floor": all(g < f for g, f in zip(gaps, floors)), "kernquad_3of3": all(kq)}
    report(12, "ranking fidelity", checks, time.perf_counter() - t0, 600,
           f"closed gaps {', '.join(f'{g:.4f}' for g in gaps)} vs floors {', '.join(f'{f:.4f}' for f in floors)}; "
           f"kernquad agrees {sum(kq)}/3, quantile agrees {sum(qu)}/3")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
