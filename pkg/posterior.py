"""Bayesian inference of the source tree x0 and dispersion t0.

Each datum is tied to x0 by a latent random-walk bridge; the sampler sweeps
over partial bridge updates, a joint (x0, bridge-prefix) move and a
log-normal t0 move.
"""

import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import stats

import streams
from bridge import (BridgePath, ProposalTuning, draw_partial_indices, initialize_bridge, measure_step,
                    propose_partial, truncated_geometric)
from config import Config, ConfigError
from geodesic import distance, frechet_mean
from kernels import MAX_RESAMPLES, GgfParams, WalkParams, ggf_sample, random_walk
from treespace import Tree, to_newick, topology_newick

logger = logging.getLogger(__name__)

T0_FLOOR = 1e-12
T0_CAP = 1e3
T0_INIT_FLOOR = 1e-6


class UnresolvedDataError(ValueError):
    """Inference data must be fully resolved trees."""


@dataclass(frozen=True)
class Prior:
    n_taxa: int
    gamma_rate: float
    exp_rate: float

    @property
    def d2(self):
        return self.n_taxa / 4

    @classmethod
    def for_taxa(cls, n, rounded=False):
        """Priors whose 99% quantiles of |x0|^2 and (N-3) t0 both equal N/4."""
        d2 = n / 4
        if rounded:
            gamma_const, exp_const = 3.3175, 4.61
        else:
            gamma_const, exp_const = stats.chi2.ppf(0.99, 1) / 2, math.log(100)
        return cls(n, gamma_const / d2, exp_const * (n - 3) / d2)


def log_prior(x0, t0, prior):
    """log Gamma(1/2, rate) density of |x0|^2 plus log Exp(rate) density of t0."""
    if not t0 > 0:
        raise ValueError(f"t0 must be positive, got {t0}")
    return float(stats.gamma.logpdf(x0.norm() ** 2, 0.5, scale=1 / prior.gamma_rate)
                 + stats.expon.logpdf(t0, scale=1 / prior.exp_rate))


@dataclass
class InferenceConfig:
    m: int = 50
    iters: int = 10000
    burnin: int = 1000
    thin: int = 10
    alpha_b: float = 0.2
    alpha_0: float = 0.9
    lambda0: float = 0.002
    sigma0: float = 0.1
    seed: int = 0
    frechet_iterations: int = 200
    init_cap: Optional[int] = None
    fixed_x0: Optional[Tree] = None

    def __post_init__(self):
        problems = []
        if self.m < 1:
            problems.append(f"m={self.m}")
        if self.iters < 0 or self.burnin < 0 or self.thin < 1:
            problems.append(f"iters={self.iters}, burnin={self.burnin}, thin={self.thin}")
        for name in ('alpha_b', 'alpha_0'):
            if not 0 < getattr(self, name) < 1:
                problems.append(f"{name}={getattr(self, name)}")
        for name in ('lambda0', 'sigma0'):
            if not getattr(self, name) > 0:
                problems.append(f"{name}={getattr(self, name)}")
        if self.frechet_iterations < 1:
            problems.append(f"frechet_iterations={self.frechet_iterations}")
        if self.fixed_x0 is not None and not self.fixed_x0.is_resolved:
            problems.append("fixed_x0 is not fully resolved")
        if problems:
            raise ConfigError(f"Invalid inference configuration: {', '.join(problems)}")

    @property
    def tuning(self):
        return ProposalTuning(alpha_b=self.alpha_b)


@dataclass
class InferenceState:
    x0: Tree
    t0: float
    bridges: list
    log_joint: float
    prior: Prior
    counters: Counter = field(default_factory=Counter)

    def recompute_log_joint(self):
        return log_prior(self.x0, self.t0, self.prior) + sum(b.log_target() for b in self.bridges)


@dataclass
class PosteriorTrace:
    iterations: list = field(default_factory=list)
    t0: list = field(default_factory=list)
    log_joint: list = field(default_factory=list)
    x0: list = field(default_factory=list)
    counters: Counter = field(default_factory=Counter)
    initial: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.iterations)

    def acceptance_rates(self):
        rates = {}
        for move in ('bridges', 'x0', 't0'):
            proposed = self.counters[f'{move}_proposed']
            if proposed:
                rates[move] = self.counters[f'{move}_accepted'] / proposed
        return rates

    def topology_table(self):
        """Topology key -> (count, Newick of the topology), most frequent first."""
        counts = Counter(x.topology for x in self.x0)
        taxa = self.x0[0].taxa if self.x0 else None
        return {top.key: (count, topology_newick(top, taxa))
                for top, count in counts.most_common()}


def _check_data(data):
    if not data:
        raise ValueError("Inference needs at least one datum")
    for i, x in enumerate(data):
        if not x.is_resolved:
            raise UnresolvedDataError(f"Datum {i} is not fully resolved ({x.codimension} missing splits)")


def initialize(data, config, rng, prior=None):
    """Starting state: x0 = datum nearest the Fréchet mean, t0 = Fréchet variance.

    Args:
        data: list of resolved Trees
        config: InferenceConfig
        rng: numpy Generator
        prior: Prior (defaults to Prior.for_taxa)

    Returns:
        InferenceState with one valid bridge per datum
    """
    _check_data(data)
    prior = prior or Prior.for_taxa(data[0].n_taxa)
    mean, variance = frechet_mean(data, config.frechet_iterations, rng)
    if config.fixed_x0 is not None:
        x0 = config.fixed_x0
    else:
        x0 = min(data, key=lambda x: distance(x, mean))
    t0 = max(variance, T0_INIT_FLOOR)
    logger.info(f"Initial t0 = {t0:.6g} (Fréchet variance {variance:.6g})")

    cap = config.init_cap or Config.init_cap()
    tuning = config.tuning
    bridges = []
    for x, stream in zip(data, streams.split(rng, len(data))):
        bridges.append(initialize_bridge(x0, x, t0, config.m, tuning, stream, cap))
    state = InferenceState(x0, t0, bridges, 0.0, prior)
    state.log_joint = state.recompute_log_joint()
    return state


def step_bridges(state, config, rng):
    """One partial update (shared a, l) of every bridge, each accepted on its own."""
    if config.m < 2:
        return state
    a, l = draw_partial_indices(config.m, config.alpha_b, rng)
    tuning = config.tuning
    for i, stream in enumerate(streams.split(rng, len(state.bridges))):
        current = state.bridges[i]
        state.counters['bridges_proposed'] += 1
        proposal = propose_partial(current, a, l, tuning, stream)
        if proposal is None:
            state.counters['bridges_invalid'] += 1
            continue
        new, log_q_ratio = proposal
        delta = new.log_target() - current.log_target()
        if stream.random() < math.exp(min(0.0, delta + log_q_ratio)):
            state.bridges[i] = new
            state.log_joint += delta
            state.counters['bridges_accepted'] += 1
    return state


def step_x0(state, config, rng):
    """Joint move of x0 and the first l steps of every bridge; all or nothing."""
    state.counters['x0_proposed'] += 1
    l = truncated_geometric(config.alpha_0, 0, config.m - 1, rng)
    params = GgfParams(state.x0, config.lambda0 ** 2)
    x0_new = ggf_sample(params, rng)
    resamples = 0
    while not x0_new.is_resolved:
        if resamples == MAX_RESAMPLES:
            logger.warning(f"No resolved x0 proposal after {MAX_RESAMPLES} resamples; move rejected")
            return state
        resamples += 1
        state.counters['x0_resampled'] += 1
        x0_new = ggf_sample(params, rng)

    log_a = log_prior(x0_new, state.t0, state.prior) - log_prior(state.x0, state.t0, state.prior)
    delta_target = 0.0
    proposals = []
    tuning = config.tuning
    for bridge, stream in zip(state.bridges, streams.split(rng, len(state.bridges))):
        if l == 0:
            new = BridgePath((x0_new,) + bridge.points[1:], bridge.t0,
                             (measure_step(x0_new, bridge.points[1]),) + bridge.steps[1:])
            log_q_ratio = 0.0
            if not new.is_valid():
                state.counters['x0_invalid'] += 1
                return state
        else:
            proposal = propose_partial(bridge, 0, l, tuning, stream, source=x0_new)
            if proposal is None:
                state.counters['x0_invalid'] += 1
                return state
            new, log_q_ratio = proposal
        delta = new.log_target() - bridge.log_target()
        delta_target += delta
        log_a += delta + log_q_ratio
        proposals.append(new)

    if rng.random() < math.exp(min(0.0, log_a)):
        state.log_joint += delta_target + log_prior(x0_new, state.t0, state.prior) \
            - log_prior(state.x0, state.t0, state.prior)
        state.x0 = x0_new
        state.bridges = proposals
        state.counters['x0_accepted'] += 1
    return state


def step_t0(state, config, rng):
    """Log-normal random-walk move of t0 with the bridges held fixed."""
    state.counters['t0_proposed'] += 1
    t_new = state.t0 * math.exp(config.sigma0 * rng.standard_normal())
    if not T0_FLOOR <= t_new <= T0_CAP:
        state.counters['t0_guard_hits'] += 1
        logger.warning(f"Proposed t0 = {t_new:.3g} outside [{T0_FLOOR}, {T0_CAP}]; rejected")
        return state
    new_target = sum(b.log_target(t_new) for b in state.bridges)
    old_target = sum(b.log_target() for b in state.bridges)
    delta = (log_prior(state.x0, t_new, state.prior) - log_prior(state.x0, state.t0, state.prior)
             + new_target - old_target)
    if rng.random() < math.exp(min(0.0, delta + math.log(t_new / state.t0))):
        state.t0 = t_new
        state.bridges = [b.with_t0(t_new) for b in state.bridges]
        state.log_joint += delta
        state.counters['t0_accepted'] += 1
    return state


def run_inference(data, prior, config, rng, on_sample=None):
    """Metropolis-within-Gibbs sampling of (x0, t0).

    Args:
        data: list of resolved Trees
        prior: Prior or None for the default
        config: InferenceConfig
        rng: numpy Generator
        on_sample: optional callback(iteration, state) for every retained state

    Returns:
        PosteriorTrace
    """
    state = initialize(data, config, rng, prior)
    trace = PosteriorTrace()
    trace.initial = {'x0': to_newick(state.x0), 't0': state.t0, 'log_joint': state.log_joint}
    report = max(1, config.iters // 10)

    for it in range(1, config.iters + 1):
        step_bridges(state, config, rng)
        if config.fixed_x0 is None:
            step_x0(state, config, rng)
        step_t0(state, config, rng)

        if it > config.burnin and (it - config.burnin) % config.thin == 0:
            trace.iterations.append(it)
            trace.t0.append(state.t0)
            trace.log_joint.append(state.log_joint)
            trace.x0.append(state.x0)
            if on_sample is not None:
                on_sample(it, state)
        if it % report == 0:
            rates = ', '.join(f"{k} {v:.3f}" for k, v in _rates(state.counters).items())
            logger.info(f"Inference {it}/{config.iters}: t0 {state.t0:.5g}, acceptance {rates}")

    trace.counters = Counter(state.counters)
    return trace


def _rates(counters):
    return {move: counters[f'{move}_accepted'] / counters[f'{move}_proposed']
            for move in ('bridges', 'x0', 't0') if counters[f'{move}_proposed']}


# ---------------------------------------------------------------- summaries

def _kde_mode(values, grid_size=512):
    values = np.asarray(values, dtype=float)
    if len(values) < 2 or np.ptp(values) == 0:
        return float(values.mean())
    kde = stats.gaussian_kde(values)
    grid = np.linspace(values.min(), values.max(), grid_size)
    return float(grid[np.argmax(kde(grid))])


def modal_tree(samples):
    """Modal topology with per-split KDE-modal lengths."""
    if not samples:
        raise ValueError("No samples to summarize")
    top, _ = Counter(x.topology for x in samples).most_common(1)[0]
    within = [x for x in samples if x.topology == top]
    lengths = {mask: _kde_mode([x.lengths[mask] for x in within]) for mask in top.splits}
    return Tree(samples[0].taxa, lengths, check=False)


def cumulative_topology_proportions(samples, top=5):
    """Running proportion of the ``top`` most frequent topologies along the trace."""
    overall = [t for t, _ in Counter(x.topology for x in samples).most_common(top)]
    running = {t.key: [] for t in overall}
    counts = Counter()
    for i, x in enumerate(samples, start=1):
        counts[x.topology] += 1
        for t in overall:
            running[t.key].append(counts[t] / i)
    return running


def summarize_trace(trace, level=0.95):
    """JSON-ready summary: acceptance, topology table, modes and t0 interval."""
    summary = {
        'samples': len(trace),
        'initial': trace.initial,
        'acceptance_rates': trace.acceptance_rates(),
        'counters': dict(trace.counters),
    }
    if not len(trace):
        return summary
    tail = (1 - level) / 2
    t0 = np.asarray(trace.t0)
    summary.update({
        'topologies': {k: {'count': c, 'newick': nwk} for k, (c, nwk) in trace.topology_table().items()},
        'modal_tree': to_newick(modal_tree(trace.x0)),
        't0_mode': _kde_mode(t0),
        't0_mean': float(t0.mean()),
        't0_interval': [float(np.quantile(t0, tail)), float(np.quantile(t0, 1 - tail))],
    })
    return summary


def posterior_predictive(x0, t0, m, data, n_sim, rng):
    """Distances from x0 to the data and to forward-simulated walk endpoints."""
    params = WalkParams(x0, t0, m)
    simulated = [random_walk(params, stream)[0] for stream in streams.split(rng, n_sim)]
    return {
        'data_distances': [distance(x0, x) for x in data],
        'simulated_distances': [distance(x0, y) for y in simulated],
    }


def distinct_topology_counts(x0, t0_values, m_values, n_walks, rng):
    """Distinct endpoint topologies over n_walks walks for each (t0, m) pair."""
    counts = {}
    for t0 in t0_values:
        for m in m_values:
            params = WalkParams(x0, t0, m)
            tops = {random_walk(params, s)[0].topology for s in streams.split(rng, n_walks)}
            counts[(t0, m)] = len(tops)
            logger.info(f"t0={t0:g}, m={m}: {len(tops)} distinct topologies in {n_walks} walks")
    return counts


def select_m(x0, t0, rng, m_values=(25, 50, 100, 200), n_walks=1000):
    """Distinct-topology counts per m at fixed (x0, t0), to guide the choice of m."""
    counts = distinct_topology_counts(x0, [t0], m_values, n_walks, rng)
    return {m: counts[(t0, m)] for m in m_values}
