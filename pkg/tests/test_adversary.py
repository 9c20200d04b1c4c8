import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from synthreg.adversary import (
    GENERATORS,
    GeneratorSpec,
    TimingSpec,
    generate_panel,
    generate_timing,
    make_rng,
    sample_treatment_time,
)
from synthreg.protocol import oracle_fixed_weights


@pytest.mark.parametrize("kind", GENERATORS)
def test_generators_bounded_and_replayable(kind):
    spec = GeneratorSpec(kind=kind, N=3, T=40, seed=7)
    a, b = generate_panel(spec), generate_panel(spec)
    assert a == b
    assert a.max_abs <= 1.0 and (a.T, a.N) == (40, 3)
    if kind != "anti_fixed_theta":
        assert a != generate_panel(spec.with_seed(8))


def test_factor_model_degenerate_is_zero():
    p = generate_panel(GeneratorSpec(kind="factor_model", N=4, T=10, rank=0, noise=0.0))
    assert not p.treated.any() and not p.controls.any()


def test_piecewise_shift_without_shift_has_perfect_oracle():
    theta = (0.3, 0.7)
    p = generate_panel(GeneratorSpec(kind="piecewise_shift", N=2, T=30, theta_a=theta, theta_b=theta, noise=0.0))
    assert oracle_fixed_weights(p).loss < 1e-12


def test_spec_json_roundtrip():
    spec = GeneratorSpec(kind="piecewise_shift", N=2, T=10, theta_a=[1, 0], theta_b=[0, 1])
    assert GeneratorSpec.from_dict(spec.to_dict()) == spec
    with pytest.raises(ValueError):
        GeneratorSpec.from_dict({"kind": "iid_bounded", "colour": 1})
    with pytest.raises(ValueError):
        GeneratorSpec(kind="gaussian")


def test_rng_streams_are_independent_and_stable():
    a = make_rng(3, 0).random(5)
    assert np.array_equal(a, make_rng(3, 0).random(5))
    assert not np.array_equal(a, make_rng(3, 1).random(5))


def test_uniform_timing():
    assert np.allclose(generate_timing(TimingSpec("uniform"), 10), 0.1)


def test_constant_hazard_is_truncated_geometric():
    r, T = 0.2, 12
    pi = generate_timing(TimingSpec("hazard_regime", rate=r), T)
    geo = (1 - r) ** np.arange(T) * r
    assert np.allclose(pi, geo / geo.sum())


@given(st.floats(1.0, 8.0), st.integers(1, 200), st.integers(0, 10**6))
def test_bounded_density_respects_both_bounds(C, T, seed):
    pi = generate_timing(TimingSpec("bounded_density", C=C, seed=seed), T)
    assert abs(pi.sum() - 1) < 1e-9
    assert pi.min() >= 1 / (C * T) - 1e-12 and pi.max() <= C / T + 1e-12


def test_history_dependent_hazard_uses_only_the_past():
    p = generate_panel(GeneratorSpec(N=2, T=20, seed=1))
    seen = []

    def hazard(t, history):
        seen.append(history.shape[0])
        return 0.1

    generate_timing(TimingSpec("hazard_regime", hazard=hazard), 20, p)
    assert seen == list(range(20))
    with pytest.raises(ValueError):
        generate_timing(TimingSpec("hazard_regime", slope=1.0), 20)


def test_point_mass_sampling():
    pi = np.zeros(6)
    pi[2] = 1.0
    assert sample_treatment_time(pi, 0) == 3


def test_sampling_replays():
    pi = np.full(9, 1 / 9)
    assert sample_treatment_time(pi, 11) == sample_treatment_time(pi, 11)


def test_uniform_sampling_frequencies():
    T, n = 10, 100_000
    draws = sample_treatment_time(np.full(T, 1 / T), 5, size=n)
    freq = np.bincount(draws, minlength=T + 1)[1:] / n
    sigma = np.sqrt((1 / T) * (1 - 1 / T) / n)
    assert np.all(np.abs(freq - 1 / T) <= 3 * sigma)


def test_sampling_rejects_bad_pi():
    with pytest.raises(ValueError):
        sample_treatment_time([0.5, 0.6], 0)
