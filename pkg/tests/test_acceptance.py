"""Acceptance criteria 1-11.

Each test prints one ``AC<k> PASS|FAIL`` line with the measured quantity and
the tolerance it was held to, then asserts.  Run alone with
``pytest tests/test_acceptance.py -v``.
"""

import math

import numpy as np
import pytest

from conftest import grid_min
from synthreg.adversary import (
    GENERATORS,
    GeneratorSpec,
    TimingSpec,
    generate_panel,
    generate_timing,
    make_rng,
)
from synthreg.inference import ObservedStudy, predictive_interval, randomization_test, rank_test
from synthreg.panel import Panel, historical_diff
from synthreg.protocol import (
    adaptive_regret,
    compute_regret,
    expected_loss_bound_check,
    oracle_fixed_weights,
    run_protocol,
    theoretical_bound,
    weighted_regret,
)
from synthreg.strategies import FLH, FTL, fixed_adversary_response, twfe_predict, twfe_predict_lstsq

pytestmark = pytest.mark.slow


@pytest.fixture
def report(capsys):
    def emit(criterion: int, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\nAC{criterion} {'PASS' if ok else 'FAIL'}: {detail}")

    return emit


def test_ac01_ftl_bound_every_run(report):
    worst, runs, violations = -np.inf, 0, []
    for N, T in [(2, 50), (5, 100), (10, 200)]:
        bound = theoretical_bound("ftl", N, T)
        for seed in range(500):
            kind = GENERATORS[seed % len(GENERATORS)]
            panel = generate_panel(GeneratorSpec(kind=kind, N=N, T=T, seed=seed))
            regret = compute_regret(run_protocol({"kind": "ftl"}, panel), oracle_fixed_weights(panel)).regret
            worst = max(worst, regret / bound)
            runs += 1
            if regret > bound + 1e-6:
                violations.append((N, T, kind, seed, regret, bound))
    ok = not violations
    report(1, ok, f"{runs} runs, max regret/bound = {worst:.4g}, violations = {len(violations)} (tol 1e-6)")
    assert ok, violations[:5]


def test_ac02_average_regret_falls(report):
    wins = 0
    for seed in range(200):
        panel = generate_panel(GeneratorSpec(kind="iid_bounded", N=5, T=400, seed=seed))
        short = panel.head(100)
        avg_long = compute_regret(run_protocol({"kind": "ftl"}, panel), oracle_fixed_weights(panel)).regret / 400
        avg_short = compute_regret(run_protocol({"kind": "ftl"}, short), oracle_fixed_weights(short)).regret / 100
        wins += avg_long < avg_short
    ok = wins >= 0.95 * 200
    report(2, ok, f"avg regret at T=400 < at T=100 in {wins}/200 seeds (need >= 190)")
    assert ok


def test_ac03_oracle_matches_grid(report):
    rng = make_rng(3)
    worst = 0.0
    for _ in range(100):
        N, T = int(rng.integers(1, 4)), int(rng.integers(1, 9))
        panel = Panel(rng.uniform(-1, 1, T), rng.uniform(-1, 1, (T, N)))
        solver = oracle_fixed_weights(panel).loss
        grid = grid_min(panel.treated, panel.controls, N, 1e-3)
        worst = max(worst, abs(solver - grid))
        assert solver <= grid + 1e-12  # the grid is a subset of the simplex
    ok = worst <= 1e-5
    report(3, ok, f"100 panels, max |solver - grid| = {worst:.3g} (tol 1e-5)")
    assert ok


def test_ac04_twfe_three_ways(report):
    rng = make_rng(4)
    worst = 0.0
    for _ in range(100):
        N, T = int(rng.integers(1, 6)), int(rng.integers(2, 16))
        panel = Panel(rng.uniform(-1, 1, T), rng.uniform(-1, 1, (T, N)))
        diff = historical_diff(panel)
        for _ in range(20):
            w = rng.dirichlet(np.ones(N))
            for s in range(1, T):
                history = (panel.treated[:s], panel.controls[:s])
                closed = twfe_predict(history, panel.controls[s], w)
                direct = twfe_predict_lstsq(history, panel.controls[s], w)
                via_diff = diff.level_offsets[s] + w @ diff.values.controls[s]
                worst = max(worst, abs(closed - direct), abs(closed - via_diff), abs(direct - via_diff))
    ok = worst <= 1e-8
    report(4, ok, f"100 panels x 20 weights, max pairwise gap = {worst:.3g} (tol 1e-8)")
    assert ok


def test_ac05_differenced_sc_regret(report):
    worst, violations = -np.inf, 0
    for seed in range(300):
        N, T = (2, 5, 8)[seed % 3], 100
        kind = GENERATORS[seed % len(GENERATORS)]
        panel = generate_panel(GeneratorSpec(kind=kind, N=N, T=T, seed=1000 + seed))
        traj = run_protocol({"kind": "differenced_sc"}, panel)
        regret = compute_regret(traj, oracle_fixed_weights(panel, "twfe")).regret
        bound = theoretical_bound("hazan", N, T, n=N, R=math.sqrt(N), a=1, b=4, D=2)
        worst = max(worst, regret / bound)
        violations += regret > bound + 1e-6
    ok = violations == 0
    report(5, ok, f"300 panels, max regret/bound = {worst:.4g}, violations = {violations}")
    assert ok


def test_ac06_ftrl_bounds(report):
    worst, worst_half, violations, runs = {}, {}, 0, 0
    for N in (2, 8):
        T = 100
        for seed in range(300):
            kind = GENERATORS[seed % len(GENERATORS)]
            panel = generate_panel(GeneratorSpec(kind=kind, N=N, T=T, seed=2000 + seed))
            for penalty in ("ridge", "entropy"):
                bound = theoretical_bound(penalty, N, T)
                for loss in ("squared", "absolute"):
                    traj = run_protocol({"kind": "ftrl", "penalty": penalty, "loss": loss}, panel)
                    oracle = oracle_fixed_weights(panel, loss=loss)
                    regret = compute_regret(traj, oracle, loss=loss).regret
                    tol = 1e-6 + (1e-4 if loss == "absolute" else 0.0)
                    key = (penalty, loss)
                    worst[key] = max(worst.get(key, -np.inf), regret / bound)
                    if loss == "squared":
                        worst_half[key] = max(worst_half.get(key, -np.inf), 0.5 * regret / bound)
                    violations += regret > bound + tol
                    runs += 1
    ok = violations == 0
    ratios = ", ".join(f"{p}/{l} {v:.3g}" for (p, l), v in sorted(worst.items()))
    halves = ", ".join(f"{p} {v:.3g}" for (p, _), v in sorted(worst_half.items()))
    report(6, ok, f"{runs} runs, max regret/bound: {ratios}; halved squared loss: {halves}; violations = {violations}")
    assert ok


def test_ac07_weighted_ftl(report):
    worst, cor2_fail, violations, pairs = -np.inf, 0, 0, 0
    for C in (1.0, 2.0, 5.0):
        for seed in range(200):
            N, T = (2, 5)[seed % 2], 100
            kind = GENERATORS[seed % len(GENERATORS)]
            panel = generate_panel(GeneratorSpec(kind=kind, N=N, T=T, seed=3000 + seed))
            pi = generate_timing(TimingSpec("bounded_density", C=C, seed=seed), T)
            traj = run_protocol({"kind": "weighted_ftl", "pi": pi.tolist()}, panel)
            value, _ = weighted_regret(traj, panel, pi)
            bound = theoretical_bound("weighted_ftl", N, T, C=C)
            worst = max(worst, value / bound)
            violations += value > bound + 1e-6
            _, _, holds = expected_loss_bound_check(traj, pi, C, oracle_fixed_weights(panel))
            cor2_fail += not holds
            pairs += 1
    ok = violations == 0 and cor2_fail == 0
    report(7, ok, f"{pairs} (panel, pi) pairs, max weighted regret/bound = {worst:.4g}, "
                  f"bound violations = {violations}, expected-loss failures = {cor2_fail}")
    assert ok


def test_ac08_fixed_weights_separation(report):
    eps, T = 5e-5, 100
    panel = fixed_adversary_response([1.0, 0.0], eps, T)
    oracle = oracle_fixed_weights(panel)
    fixed = compute_regret(run_protocol({"kind": "fixed_weights", "theta": [1, 0]}, panel), oracle).regret
    ftl = compute_regret(run_protocol({"kind": "ftl"}, panel), oracle).regret
    bound = theoretical_bound("ftl", 2, T)
    ok = fixed >= eps * T and ftl <= bound
    report(8, ok, f"fixed-theta regret {fixed:.4g} >= eps*T = {eps * T:.3g}; FTL regret {ftl:.3g} <= {bound:.4g}")
    assert ok


def test_ac09_flh_adaptive_regret(report):
    wins, invariant_failures = 0, 0
    N, T = 4, 200
    for seed in range(100):
        panel = generate_panel(GeneratorSpec(kind="piecewise_shift", N=N, T=T, seed=4000 + seed))
        checks = []

        def check(t, strategy, w, pred):
            p = strategy.probs
            checks.append(p.size == t and abs(p.sum() - 1) < 1e-9 and p.min() > 0
                          and (t == 1 or abs(p[-1] - 1 / t) < 1e-12))

        flh = run_protocol(FLH(N, lambda: FTL(N)), panel, callback=check)
        ftl = run_protocol({"kind": "ftl"}, panel)
        invariant_failures += not all(checks)
        wins += adaptive_regret(flh, panel).value < adaptive_regret(ftl, panel).value
    ok = wins >= 90 and invariant_failures == 0
    report(9, ok, f"FLH adaptive regret below FTL in {wins}/100 seeds (need >= 90); "
                  f"runs with probability-invariant failures = {invariant_failures}")
    assert ok


def test_ac10_randomization_size(report):
    worst = {0.05: 0.0, 0.1: 0.0}
    for seed in range(200):
        N, T = 3, (20, 37, 50)[seed % 3]
        panel = generate_panel(GeneratorSpec(kind=GENERATORS[seed % len(GENERATORS)], N=N, T=T, seed=5000 + seed))
        base = randomization_test(ObservedStudy.from_panel(panel, 1), {"kind": "ftl"})
        for alpha in worst:
            rate = np.mean([rank_test(base.residuals, S, alpha).reject for S in range(1, T + 1)])
            worst[alpha] = max(worst[alpha], rate)
    exact_ok = all(worst[a] <= a for a in worst)
    rng = make_rng(10)
    rates = {}
    for alpha in (0.05, 0.1):
        rejections = 0
        for rep in range(2000):
            panel = generate_panel(GeneratorSpec(kind="factor_model", N=3, T=40, seed=6000 + rep))
            S = int(rng.integers(1, 41))
            rejections += randomization_test(ObservedStudy.from_panel(panel, S), {"kind": "ftl"}, alpha).reject
        rates[alpha] = rejections / 2000
    mc_ok = all(rates[a] <= a + 0.02 for a in rates)
    ok = exact_ok and mc_ok
    report(10, ok, "exhaustive max rejection rate "
                   + ", ".join(f"alpha={a}: {worst[a]:.4g}" for a in worst)
                   + "; Monte-Carlo (2000 reps) "
                   + ", ".join(f"alpha={a}: {rates[a]:.4f}" for a in rates))
    assert ok


def test_ac11_markov_coverage(report):
    delta, reps, T, N = 0.1, 2000, 50, 4
    rng = make_rng(11)
    exceed_default, exceed_realized = 0, 0
    for rep in range(reps):
        panel = generate_panel(GeneratorSpec(kind="factor_model", N=N, T=T, seed=7000 + rep))
        S = int(rng.integers(1, T + 1))
        study = ObservedStudy.from_panel(panel, S)
        iv = predictive_interval(study, {"kind": "ftl"}, delta)
        err = (panel.treated[S - 1] - iv.prediction) ** 2
        exceed_default += err > iv.c
        # the same inequality with the realized average loss in place of the bound
        traj = run_protocol({"kind": "ftl"}, panel)
        exceed_realized += err > traj.total_loss / T / delta
    rate, rate_realized = exceed_default / reps, exceed_realized / reps
    ok = rate <= 0.12
    report(11, ok, f"exceedance at delta=0.1 over {reps} reps: {rate:.4f} with the default c, "
                   f"{rate_realized:.4f} with c = realized average loss / delta (limit 0.12)")
    assert ok
