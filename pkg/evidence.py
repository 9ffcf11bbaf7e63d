"""Marginal likelihood of data under a fixed source tree and dispersion.

The random-walk density f_W(x* | x0, t0) is the normalizer of the conditional
bridge law. All three estimators compare conditional bridges against the
independence proposal q_ind, whose normalizer is one.
"""

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

import streams
from bridge import (BridgeInitializationError, BridgeSampler, ProposalTuning,
                    independence_log_density, initialize_bridge, propose_independence)
from kernels import ggf_log_density, star_source_log_density

logger = logging.getLogger(__name__)

METHODS = ('chib', 'tunnel', 'stepping-stone', 'star-exact')
TUNNEL_START = 0.1


class EstimatorFailure(RuntimeError):
    """An estimator produced no usable value (all-zero weights, non-finite iterate)."""


@dataclass
class EvidenceConfig:
    M1: int = 1000
    M2: int = 1000
    h: int = 10
    K: int = 100
    burnin: int = 100
    thin: int = 1
    alpha_b: float = 0.2
    bootstrap: int = 200

    def __post_init__(self):
        if self.M1 < 1 or self.M2 < 1:
            raise ValueError(f"M1 and M2 must be >= 1, got {self.M1}, {self.M2}")
        if not 1 <= self.h <= self.M1:
            raise ValueError(f"h must be in 1..M1, got {self.h}")
        if self.K < 1:
            raise ValueError(f"K must be >= 1, got {self.K}")
        if self.burnin < 0 or self.thin < 1:
            raise ValueError(f"Invalid burnin/thin {self.burnin}/{self.thin}")

    @property
    def tuning(self):
        return ProposalTuning(alpha_b=self.alpha_b)

    @property
    def betas(self):
        return np.arange(self.K + 1) / self.K


@dataclass
class EvidenceEstimate:
    log_ml: float
    se: float = float('nan')
    replicates: list = field(default_factory=list)

    def __float__(self):
        return self.log_ml


@dataclass
class BridgeSets:
    """Log densities of conditional bridges and of independence proposals."""
    log_f_post: np.ndarray
    log_q_post: np.ndarray
    log_f_prop: np.ndarray
    log_q_prop: np.ndarray

    @property
    def ratio_post(self):
        return self.log_f_post - self.log_q_post

    @property
    def ratio_prop(self):
        return self.log_f_prop - self.log_q_prop


def _logmeanexp(values, axis=None):
    values = np.asarray(values, dtype=float)
    n = values.shape[axis] if axis is not None else values.size
    return logsumexp(values, axis=axis) - math.log(n)


def _exact_single_step(x_star, x0, t0):
    return ggf_log_density(x_star, x0, t0)


def sample_bridge_sets(x_star, x0, t0, m, config, rng):
    """M1 conditional bridges (MCMC) and M2 independence proposals for one datum."""
    tuning = config.tuning
    chain_rng, proposal_rng = streams.split(rng, 2)
    sampler = BridgeSampler(x0, x_star, t0, m, tuning, chain_rng)
    posterior = sampler.run(config.M1 * config.thin + config.burnin, config.burnin, config.thin)
    log_f_post = np.array([b.log_target() for b in posterior])
    log_q_post = np.array([independence_log_density(b, tuning) for b in posterior])

    log_f_prop = np.full(config.M2, -np.inf)
    log_q_prop = np.zeros(config.M2)
    for j in range(config.M2):
        result = propose_independence(x0, x_star, t0, m, tuning, proposal_rng)
        if result is not None:
            path, log_q = result
            log_f_prop[j] = path.log_target()
            log_q_prop[j] = log_q
    valid = np.isfinite(log_f_prop).mean()
    logger.info(f"Bridge sets: chain acceptance {sampler.acceptance_rate():.3f}, "
                f"valid proposals {valid:.3f}")
    return BridgeSets(log_f_post, log_q_post, log_f_prop, log_q_prop)


def _chib_points(sets, h):
    """Per-evaluation-point log marginal likelihood estimates."""
    r_post, r_prop = sets.ratio_post, sets.ratio_prop
    spacing = len(r_post) // h
    values = []
    for k in range(1, h + 1):
        i = spacing * k - 1
        r_star = r_post[i]
        # moves y -> y* accepted with min(1, r(y*) / r(y)), y* -> w with min(1, r(w) / r(y*))
        log_num = _logmeanexp(np.minimum(0.0, r_star - r_post))
        log_den = _logmeanexp(np.minimum(0.0, r_prop - r_star))
        if not np.isfinite(log_den):
            raise EstimatorFailure(
                f"Chib denominator is zero: no proposal of {len(r_prop)} is accepted from "
                f"evaluation point {k}")
        values.append(sets.log_f_post[i] - (log_num - log_den) - sets.log_q_post[i])
    return np.array(values)


def _tunnel_value(r_post, r_prop, iterations):
    n1, n2 = len(r_post), len(r_prop)
    log_c1 = math.log(n1 / (n1 + n2))
    log_c2 = math.log(n2 / (n1 + n2))
    l_star = float(np.median(r_post))
    u_post = r_post - l_star
    u_prop = r_prop - l_star
    log_r = math.log(TUNNEL_START)
    for k in range(iterations):
        num = _logmeanexp(u_prop - np.logaddexp(log_c1 + u_prop, log_c2 + log_r))
        den = _logmeanexp(-np.logaddexp(log_c1 + u_post, log_c2 + log_r))
        log_r = float(num - den)
        if not math.isfinite(log_r):
            raise EstimatorFailure(f"Tunnel iterate is not finite at iteration {k + 1}")
    return log_r + l_star


def _bootstrap(statistic, arrays, config, rng):
    if config.bootstrap < 2:
        return float('nan')
    values = []
    for _ in range(config.bootstrap):
        resampled = [a[rng.integers(0, len(a), size=len(a))] for a in arrays]
        try:
            values.append(statistic(*resampled))
        except EstimatorFailure:
            continue
    values = np.asarray(values)
    values = values[np.isfinite(values)]
    return float(values.std(ddof=1)) if len(values) > 1 else float('nan')


def chib_estimate(x_star, x0, t0, m, config, rng, sets=None):
    if m == 1:
        return EvidenceEstimate(_exact_single_step(x_star, x0, t0), 0.0)
    sample_rng, boot_rng = streams.split(rng, 2)
    if sets is None:
        sets = sample_bridge_sets(x_star, x0, t0, m, config, sample_rng)
    points = _chib_points(sets, config.h)
    value = float(_logmeanexp(points))
    se = _bootstrap(lambda p: float(_logmeanexp(p)), [points], config, boot_rng)
    return EvidenceEstimate(value, se)


def tunnel_estimate(x_star, x0, t0, m, config, rng, sets=None):
    if m == 1:
        return EvidenceEstimate(_exact_single_step(x_star, x0, t0), 0.0)
    sample_rng, boot_rng = streams.split(rng, 2)
    if sets is None:
        sets = sample_bridge_sets(x_star, x0, t0, m, config, sample_rng)

    def statistic(post, prop):
        return _tunnel_value(post, prop, config.K)

    value = statistic(sets.ratio_post, sets.ratio_prop)
    se = _bootstrap(statistic, [sets.ratio_post, sets.ratio_prop], config, boot_rng)
    return EvidenceEstimate(value, se)


def chib_and_tunnel(x_star, x0, t0, m, config, rng):
    """Both estimates from one shared set of bridges."""
    if m == 1:
        exact = EvidenceEstimate(_exact_single_step(x_star, x0, t0), 0.0)
        return exact, exact
    sample_rng, chib_rng, tunnel_rng = streams.split(rng, 3)
    sets = sample_bridge_sets(x_star, x0, t0, m, config, sample_rng)
    return (chib_estimate(x_star, x0, t0, m, config, chib_rng, sets),
            tunnel_estimate(x_star, x0, t0, m, config, tunnel_rng, sets))


def _rung_value(log_w, delta):
    log_eta = np.max(log_w)
    if not np.isfinite(log_eta):
        return -math.inf
    return float(delta * log_eta + _logmeanexp(delta * (log_w - log_eta)))


def stepping_stone_estimate(x_star, x0, t0, m, config, rng):
    if m == 1:
        return EvidenceEstimate(_exact_single_step(x_star, x0, t0), 0.0)
    tuning = config.tuning
    betas = config.betas
    first_rng, start_rng, chain_rng, boot_rng = streams.split(rng, 4)

    # rung 1: straight from the independence proposal
    log_w = np.full(config.M2, -np.inf)
    for j in range(config.M2):
        result = propose_independence(x0, x_star, t0, m, tuning, first_rng)
        if result is not None:
            path, log_q = result
            log_w[j] = path.log_target() - log_q
    rungs = [log_w]

    start = initialize_bridge(x0, x_star, t0, m, tuning, start_rng) if config.K > 1 else None
    for k in range(2, config.K + 1):
        sampler = BridgeSampler(x0, x_star, t0, m, tuning, chain_rng, beta=betas[k - 1], start=start)
        burnin = config.burnin if k == 2 else 0
        kept = sampler.run(config.M1 * config.thin + burnin, burnin, config.thin)
        rungs.append(np.array([b.log_target() - independence_log_density(b, tuning) for b in kept]))
        start = sampler.path

    deltas = np.diff(betas)
    total = 0.0
    for k, (w, delta) in enumerate(zip(rungs, deltas), start=1):
        value = _rung_value(w, delta)
        if not math.isfinite(value):
            raise EstimatorFailure(f"Stepping-stone rung {k} has all-zero weights")
        total += value

    def statistic(*weights):
        return sum(_rung_value(w, d) for w, d in zip(weights, deltas))

    se = _bootstrap(statistic, rungs, config, boot_rng)
    return EvidenceEstimate(total, se)


def chib_log_ml(x_star, x0, t0, m, config, rng):
    """Chib estimate of log f_W(x* | x0, t0)."""
    return chib_estimate(x_star, x0, t0, m, config, rng).log_ml


def tunnel_log_ml(x_star, x0, t0, m, config, rng):
    """Tunnel (bridge-sampling) estimate of log f_W(x* | x0, t0)."""
    return tunnel_estimate(x_star, x0, t0, m, config, rng).log_ml


def stepping_stone_log_ml(x_star, x0, t0, m, config, rng):
    """Generalized stepping-stone estimate of log f_W(x* | x0, t0)."""
    return stepping_stone_estimate(x_star, x0, t0, m, config, rng).log_ml


def star_exact_log_ml(data, t0):
    """Exact log likelihood of data under Brownian motion from the star tree."""
    return float(sum(star_source_log_density(x, t0) for x in data))


def log_bayes_factor(ml_a, ml_b):
    """Base-10 log Bayes factor from two natural-log marginal likelihoods."""
    if not (math.isfinite(ml_a) and math.isfinite(ml_b)):
        raise ValueError(f"Bayes factor needs finite inputs, got {ml_a}, {ml_b}")
    return (ml_a - ml_b) / math.log(10)


_ESTIMATORS = {
    'chib': chib_estimate,
    'tunnel': tunnel_estimate,
    'stepping-stone': stepping_stone_estimate,
}


def _datum_task(args):
    method, x_star, x0, t0, m, config, rng = args
    return _ESTIMATORS[method](x_star, x0, t0, m, config, rng)


def estimate_dataset(method, data, x0, t0, m, config, rng, workers=1):
    """Per-datum estimates and their sum.

    Returns:
        dict with 'per_datum' (list of EvidenceEstimate), 'total' and 'se'
    """
    if method not in METHODS:
        raise ValueError(f"Unknown method '{method}', expected one of {METHODS}")
    if method == 'star-exact':
        per = [EvidenceEstimate(star_source_log_density(x, t0), 0.0) for x in data]
    else:
        tasks = [(method, x, x0, t0, m, config, s)
                 for x, s in zip(data, streams.split(rng, len(data)))]
        if workers > 1 and len(tasks) > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                per = list(pool.map(_datum_task, tasks))
        else:
            per = [_datum_task(task) for task in tasks]
    total = float(sum(e.log_ml for e in per))
    se = float(math.sqrt(sum(e.se ** 2 for e in per))) if per else float('nan')
    logger.info(f"{method}: total log marginal likelihood {total:.4f} (se {se:.3g})")
    return {'per_datum': per, 'total': total, 'se': se}


def repeat_estimate(method, data, x0, t0, m, config, rng, repeats, workers=1):
    """Run an estimator ``repeats`` times on split streams and report the median."""
    totals = []
    for r, stream in enumerate(streams.split(rng, repeats)):
        try:
            totals.append(estimate_dataset(method, data, x0, t0, m, config, stream, workers)['total'])
        except (EstimatorFailure, BridgeInitializationError) as e:
            logger.error(f"Repeat {r + 1}/{repeats} failed: {e}")
    if not totals:
        raise EstimatorFailure(f"All {repeats} repeats of '{method}' failed")
    return EvidenceEstimate(float(np.median(totals)), float(np.std(totals, ddof=1)) if len(totals) > 1
                            else float('nan'), totals)
