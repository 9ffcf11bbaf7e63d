#!/usr/bin/env python3
"""
Tests for priors, the inference sampler and posterior summaries
"""

import math

import numpy as np
import pytest
from scipy import integrate, stats

import posterior
import streams
from config import ConfigError
from geodesic import distance
from kernels import WalkParams, random_walk
from posterior import (T0_INIT_FLOOR, InferenceConfig, PosteriorTrace, Prior, UnresolvedDataError,
                       cumulative_topology_proportions, initialize, log_prior, modal_tree,
                       posterior_predictive, run_inference, select_m, step_t0, step_x0,
                       summarize_trace)
from treespace import Split, TaxonSet, Tree

TAXA5 = TaxonSet.numbered(5)


def tree5(lengths):
    return Tree(TAXA5, {Split.from_labels(TAXA5, list(side)).mask: v for side, v in lengths.items()})


def simulated_data(n, seed, t0=0.02, m=10):
    x0 = tree5({'12': 0.5, '45': 0.4})
    rng = streams.root_stream(seed)
    return x0, [random_walk(WalkParams(x0, t0, m), s)[0] for s in streams.split(rng, n)]


def small_config(**kwargs):
    values = dict(m=5, iters=30, burnin=10, thin=2, frechet_iterations=50, init_cap=5000)
    values.update(kwargs)
    return InferenceConfig(**values)


def test_rounded_prior_rates():
    prior = Prior.for_taxa(10, rounded=True)
    assert prior.gamma_rate == pytest.approx(1.327)
    assert prior.exp_rate == pytest.approx(12.908)


def test_prior_quantiles():
    for n in (5, 8, 10):
        prior = Prior.for_taxa(n)
        d2 = n / 4
        assert stats.gamma.cdf(d2, 0.5, scale=1 / prior.gamma_rate) == pytest.approx(0.99, abs=1e-6)
        assert stats.expon.cdf(d2 / (n - 3), scale=1 / prior.exp_rate) == pytest.approx(0.99, abs=1e-6)


def test_log_prior_near_zero_t0():
    prior = Prior.for_taxa(5)
    x0 = tree5({'12': 0.5, '45': 0.4})
    value = log_prior(x0, 1e-12, prior)
    assert math.isfinite(value)
    with pytest.raises(ValueError):
        log_prior(x0, 0.0, prior)


def test_config_validation():
    with pytest.raises(ConfigError):
        InferenceConfig(alpha_b=1.5)
    with pytest.raises(ConfigError):
        InferenceConfig(m=0)
    with pytest.raises(ConfigError):
        InferenceConfig(fixed_x0=tree5({'12': 0.5}))


def test_unresolved_data_rejected():
    with pytest.raises(UnresolvedDataError):
        initialize([tree5({'12': 0.5})], small_config(), streams.root_stream(0))


def test_initialize_single_datum():
    x = tree5({'12': 0.5, '45': 0.4})
    state = initialize([x], small_config(), streams.root_stream(1))
    assert state.x0 == x
    assert state.t0 == T0_INIT_FLOOR
    assert len(state.bridges) == 1 and state.bridges[0].is_valid()


def test_initialize_picks_weighted_side():
    x, y = tree5({'12': 0.5, '45': 0.4}), tree5({'12': 0.9, '45': 0.1})
    state = initialize([x, x, y], small_config(frechet_iterations=299), streams.root_stream(2))
    assert state.x0 == x


def test_initialize_euclidean_variance():
    data = [tree5({'12': 0.5 + 0.05 * i, '45': 0.4 - 0.03 * i}) for i in range(5)]
    state = initialize(data, small_config(frechet_iterations=199), streams.root_stream(3))
    a = np.array([[x.length(k) for k in sorted(data[0].lengths)] for x in data])
    expected = np.mean(np.sum((a - a.mean(axis=0)) ** 2, axis=1))
    assert state.t0 == pytest.approx(expected, rel=1e-9)


def test_zero_iterations():
    _, data = simulated_data(3, 4)
    trace = run_inference(data, None, small_config(iters=0, burnin=0), streams.root_stream(4))
    assert len(trace) == 0
    summary = summarize_trace(trace)
    assert summary['samples'] == 0
    assert 't0_interval' not in summary and 'x0' in summary['initial']


def test_trace_shape_and_bookkeeping():
    _, data = simulated_data(4, 5)
    drift = []

    def check(iteration, state):
        drift.append(abs(state.log_joint - state.recompute_log_joint()))

    trace = run_inference(data, None, small_config(), streams.root_stream(5), on_sample=check)
    assert len(trace) == 10
    assert trace.iterations == list(range(12, 31, 2))
    assert all(t > 0 for t in trace.t0)
    assert max(drift) < 1e-8
    rates = trace.acceptance_rates()
    assert set(rates) == {'bridges', 'x0', 't0'}
    assert all(0.0 <= r <= 1.0 for r in rates.values())


def test_inference_deterministic():
    _, data = simulated_data(3, 6)
    a = run_inference(data, None, small_config(), streams.root_stream(6))
    b = run_inference(data, None, small_config(), streams.root_stream(6))
    assert a.t0 == b.t0 and a.log_joint == b.log_joint and a.x0 == b.x0


def test_fixed_source():
    x0, data = simulated_data(3, 7)
    trace = run_inference(data, None, small_config(fixed_x0=x0), streams.root_stream(7))
    assert all(x == x0 for x in trace.x0)
    assert trace.counters['x0_proposed'] == 0


def test_t0_move_with_equal_proposal_always_accepts():
    _, data = simulated_data(3, 8)
    config = small_config(sigma0=1e-300)
    state = initialize(data, config, streams.root_stream(8))
    for _ in range(5):
        step_t0(state, config, streams.root_stream(9))
    assert state.counters['t0_accepted'] == 5


def test_x0_move_to_same_tree_always_accepts():
    # lambda0^2 = 1e-300 leaves every length unchanged, alpha_0 near 1 forces l = 0
    _, data = simulated_data(3, 12)
    config = small_config(lambda0=1e-150, alpha_0=0.999999)
    state = initialize(data, config, streams.root_stream(12))
    x0 = state.x0
    rng = streams.root_stream(13)
    for _ in range(5):
        step_x0(state, config, rng)
    assert state.counters['x0_accepted'] == 5
    assert state.x0 == x0


def test_accepted_x0_move_rewires_every_bridge():
    _, data = simulated_data(3, 14)
    config = small_config(lambda0=0.02, alpha_0=0.2)
    state = initialize(data, config, streams.root_stream(14))
    rng = streams.root_stream(15)
    for _ in range(200):
        before = state.counters['x0_accepted']
        step_x0(state, config, rng)
        assert all(b.points[0] is state.x0 or b.points[0] == state.x0 for b in state.bridges)
        assert all(b.is_valid() for b in state.bridges)
        assert abs(state.log_joint - state.recompute_log_joint()) < 1e-8
        if state.counters['x0_accepted'] > before:
            assert state.x0.is_resolved
    assert state.counters['x0_accepted'] > 0


def test_unresolved_x0_proposal_is_resampled(monkeypatch):
    _, data = simulated_data(3, 16)
    config = small_config(lambda0=0.01)
    state = initialize(data, config, streams.root_stream(16))
    draws = iter([tree5({'12': 0.5}), tree5({'12': 0.5}), state.x0])
    monkeypatch.setattr(posterior, 'ggf_sample', lambda params, rng: next(draws))
    step_x0(state, config, streams.root_stream(17))
    assert state.counters['x0_resampled'] == 2
    assert state.counters['x0_proposed'] == 1


def test_t0_posterior_matches_quadrature():
    # one datum deep inside the source's orthant: the walk density is a 2-d Gaussian
    x0 = tree5({'12': 5.0, '45': 5.0})
    x = tree5({'12': 5.1, '45': 4.9})
    d2 = distance(x0, x) ** 2
    prior = Prior.for_taxa(5)
    rate = prior.exp_rate

    def density(t):
        return math.exp(-rate * t - d2 / (2 * t)) / t

    upper = 30 / rate
    norm, _ = integrate.quad(density, 0, upper, limit=200)
    mean, _ = integrate.quad(lambda t: t * density(t), 0, upper, limit=200)
    expected = mean / norm

    config = InferenceConfig(m=3, iters=15000, burnin=3000, thin=5, sigma0=0.5,
                             frechet_iterations=10, init_cap=5000, fixed_x0=x0)
    trace = run_inference([x], prior, config, streams.root_stream(18))
    assert np.mean(trace.t0) == pytest.approx(expected, rel=0.2)


def test_modal_tree_and_proportions():
    a, b = tree5({'12': 0.5, '45': 0.4}), tree5({'12': 0.6, '34': 0.3})
    samples = [a] * 6 + [b] * 4
    modal = modal_tree(samples)
    assert modal.topology == a.topology
    assert modal.lengths == pytest.approx(a.lengths)
    running = cumulative_topology_proportions(samples)
    assert running[a.topology.key][-1] == pytest.approx(0.6)
    assert running[b.topology.key][0] == 0.0


def test_summary_reports_interval():
    a = tree5({'12': 0.5, '45': 0.4})
    trace = PosteriorTrace(iterations=list(range(100)), t0=list(np.linspace(0.01, 0.02, 100)),
                           log_joint=[0.0] * 100, x0=[a] * 100)
    summary = summarize_trace(trace)
    lo, hi = summary['t0_interval']
    assert 0.01 <= lo < hi <= 0.02
    assert summary['topologies'][a.topology.key]['count'] == 100


def test_posterior_predictive():
    x0, data = simulated_data(5, 10)
    result = posterior_predictive(x0, 0.02, 10, data, 20, streams.root_stream(10))
    assert len(result['data_distances']) == 5
    assert len(result['simulated_distances']) == 20
    assert result['data_distances'][0] == pytest.approx(distance(x0, data[0]))


def test_select_m():
    x0 = tree5({'12': 0.5, '45': 0.4})
    counts = select_m(x0, 0.3, streams.root_stream(11), m_values=(2, 4), n_walks=100)
    assert set(counts) == {2, 4}
    assert all(1 <= c <= 15 for c in counts.values())


def main():
    """Run all tests"""
    tests = [(name, fn) for name, fn in globals().items()
             if name.startswith('test_') and callable(fn) and fn.__code__.co_argcount == 0]
    passed = 0
    for name, fn in tests:
        try:
            fn()
            print(f"✓ {name}")
            passed += 1
        except Exception as e:
            print(f"❌ {name}: {e}")
    print(f"\n{passed}/{len(tests)} tests passed (fixture tests run under pytest)")
    return passed == len(tests)


if __name__ == "__main__":
    main()
