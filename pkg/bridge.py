"""Random-walk bridges between two fixed trees and their Metropolis-Hastings sampler.

A bridge is a path y_0 = x0, y_1, ..., y_m = x* of GGF steps with dispersion
t0/m. Proposals mimic a Euclidean Brownian bridge: each point is a GGF
perturbation of a point along the geodesic towards the far endpoint, mixed
with a plain random-walk step so that every valid path stays in the support.
"""

import logging
import math
from collections import Counter
from dataclasses import dataclass

import numpy as np
from scipy import stats
from scipy.special import logsumexp

from config import Config
from geodesic import evaluate, geodesic, nearest_high_codim_point
from kernels import GgfParams, gaussian_log_density, ggf_log_density, ggf_sample

logger = logging.getLogger(__name__)

WEIGHT_CAP = 1 - 1e-12
PENALTIES = ('codimension', 'none')

# Horizon clamps and step-4 rejections across all proposals.
diagnostics = Counter()


class BridgeInitializationError(RuntimeError):
    """No valid bridge found within the configured number of attempts."""


@dataclass(frozen=True)
class ProposalTuning:
    alpha_b: float = 0.2
    penalty: str = 'codimension'
    weight_floor: float = 1e-3

    def __post_init__(self):
        if not 0 < self.alpha_b < 1:
            raise ValueError(f"alpha_b must be in (0, 1), got {self.alpha_b}")
        if self.penalty not in PENALTIES:
            raise ValueError(f"Unknown penalty '{self.penalty}', expected one of {PENALTIES}")
        if not 0 < self.weight_floor < 1:
            raise ValueError(f"weight_floor must be in (0, 1), got {self.weight_floor}")


@dataclass(frozen=True)
class Step:
    """Geometry of one random-walk step, enough to rescale its density in t0."""
    sq_dist: float
    nu: int
    valid: bool


def measure_step(prev, y):
    g = geodesic(prev, y)
    c = g.classification
    return Step(g.length ** 2, c.nu, c.is_simple)


class BridgePath:
    """An (m+1)-point random-walk path with fixed endpoints."""

    def __init__(self, points, t0, steps=None):
        if len(points) < 2:
            raise ValueError("A bridge needs at least its two endpoints")
        if not t0 > 0:
            raise ValueError(f"t0 must be positive, got {t0}")
        self.points = tuple(points)
        self.t0 = float(t0)
        if steps is None:
            steps = [measure_step(a, b) for a, b in zip(self.points[:-1], self.points[1:])]
        self.steps = tuple(steps)
        self._log_steps = None

    @property
    def m(self):
        return len(self.points) - 1

    @property
    def source(self):
        return self.points[0]

    @property
    def target(self):
        return self.points[-1]

    @property
    def step_variance(self):
        return self.t0 / self.m

    def is_valid(self):
        return all(step.valid for step in self.steps)

    def step_log_densities(self, t0=None):
        """log GGF(y_j | y_{j-1}, t0/m) for j = 1..m."""
        if t0 is None and self._log_steps is not None:
            return self._log_steps
        variance = (self.t0 if t0 is None else t0) / self.m
        dim = self.source.dim
        values = np.array([gaussian_log_density(s.sq_dist, s.nu, variance, dim) if s.valid
                           else -math.inf for s in self.steps])
        if t0 is None:
            self._log_steps = values
        return values

    def log_target(self, t0=None):
        return float(np.sum(self.step_log_densities(t0)))

    def with_t0(self, t0):
        return BridgePath(self.points, t0, self.steps)

    def splice(self, start, points, steps):
        """Replace points from index ``start`` (>= 1) and the steps from y_{start-1} on."""
        stop = start + len(points)
        new_points = self.points[:start] + tuple(points) + self.points[stop:]
        new_steps = self.steps[:start - 1] + tuple(steps) + self.steps[start - 1 + len(steps):]
        return BridgePath(new_points, self.t0, new_steps)


def schedule_variance(j, m, t0, step_variance=None):
    """Variance of the Brownian-bridge step j of m: (m-j)/(m-j+1) * t0/m."""
    if not 1 <= j <= m - 1:
        raise ValueError(f"step index {j} outside 1..{m - 1}")
    base = t0 / m if step_variance is None else step_variance
    return (m - j) / (m - j + 1) * base


def mixture_weight(mu, tau, floor=1e-3):
    """Weight of the geodesic-guided component, from the chi-square CDF of |mu|^2/tau."""
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    w = stats.chi2.cdf(mu.norm() ** 2 / tau, mu.dim)
    return float(min(max(w, floor), WEIGHT_CAP))


def penalty(g):
    """Sum of codimensions of the high-codimension orthants a geodesic traverses."""
    return g.classification.penalty


def _step_target(prev, end, k, horizon, step_variance, tuning):
    """Center, variance and weight of the guided component for step k of ``horizon``."""
    g = geodesic(prev, end)
    p = penalty(g) if tuning.penalty == 'codimension' else 0
    if p >= horizon - k - 1:
        p = 0
    denom = horizon - k + 1 - p
    if denom < 2:
        diagnostics['horizon_clamps'] += 1
        logger.warning(f"Bridge horizon clamped (k={k}, horizon={horizon}, penalty={p})")
        denom = 2
    fraction = 1.0 / denom
    hit = nearest_high_codim_point(g, fraction)
    mu = hit[1] if hit is not None else evaluate(g, fraction)
    tau = schedule_variance(k, horizon, None, step_variance=step_variance)
    return mu, tau, mixture_weight(mu, tau, tuning.weight_floor)


def _segment_log_q(seq, step_variance, tuning):
    """log proposal density of seq[1:-1] given seq[0] and seq[-1]."""
    horizon = len(seq) - 1
    end = seq[-1]
    total = 0.0
    for k in range(1, horizon):
        prev, y = seq[k - 1], seq[k]
        mu, tau, w = _step_target(prev, end, k, horizon, step_variance, tuning)
        total += float(np.logaddexp(math.log(w) + ggf_log_density(y, mu, tau),
                                    math.log1p(-w) + ggf_log_density(y, prev, step_variance)))
    return total


def _propose_segment(first, end, horizon, step_variance, tuning, rng):
    """Sample the horizon-1 interior points; None when a step is not simple."""
    points, steps = [], []
    prev = first
    for k in range(1, horizon):
        mu, tau, w = _step_target(prev, end, k, horizon, step_variance, tuning)
        if rng.random() < w:
            y = ggf_sample(GgfParams(mu, tau), rng)
        else:
            y = ggf_sample(GgfParams(prev, step_variance), rng)
        step = measure_step(prev, y)
        if not step.valid:
            diagnostics['invalid_steps'] += 1
            return None
        points.append(y)
        steps.append(step)
        prev = y
    last = measure_step(prev, end)
    if not last.valid:
        diagnostics['invalid_final_steps'] += 1
        return None
    steps.append(last)
    return points, steps


def independence_log_density(path, tuning):
    """log q_ind of a complete bridge."""
    return _segment_log_q(path.points, path.step_variance, tuning)


def propose_independence(x0, x_star, t0, m, tuning, rng):
    """Propose a whole bridge from x0 to x*.

    Returns:
        (BridgePath, log proposal density) or None on rejection
    """
    if m < 2:
        raise ValueError(f"Independence proposals need m >= 2, got {m}")
    if not x0.is_resolved:
        raise ValueError("Bridges start from a fully resolved tree")
    result = _propose_segment(x0, x_star, m, t0 / m, tuning, rng)
    if result is None:
        return None
    points, steps = result
    path = BridgePath([x0, *points, x_star], t0, steps)
    return path, independence_log_density(path, tuning)


def propose_partial(current, a, l, tuning, rng, source=None):
    """Resample points a+1..a+l of ``current``.

    Args:
        current: valid BridgePath
        a, l: segment start and length (0 <= a, 1 <= l, a + l <= m - 1)
        tuning: ProposalTuning
        rng: numpy Generator
        source: replacement for y_0 (only with a = 0), used by source-tree moves

    Returns:
        (BridgePath, log of reverse/forward proposal density ratio) or None
    """
    m = current.m
    if a < 0 or l < 1 or a + l > m - 1:
        raise ValueError(f"Invalid partial segment a={a}, l={l} for m={m}")
    if source is not None and a != 0:
        raise ValueError("A new source requires a = 0")

    first = current.points[a] if source is None else source
    end = current.points[a + l + 1]
    variance = current.step_variance
    result = _propose_segment(first, end, l + 1, variance, tuning, rng)
    if result is None:
        return None
    points, steps = result
    if source is None:
        proposal = current.splice(a + 1, points, steps)
    else:
        proposal = BridgePath((source, *points) + current.points[l + 1:], current.t0,
                              tuple(steps) + current.steps[l + 1:])
    window = slice(a, a + l + 2)
    log_q_new = _segment_log_q(proposal.points[window], variance, tuning)
    log_q_old = _segment_log_q(current.points[window], variance, tuning)
    return proposal, log_q_old - log_q_new


def truncated_geometric(alpha, low, high, rng):
    """Draw k in low..high with P(k) proportional to (1 - alpha)^(k - low)."""
    if high < low:
        raise ValueError(f"Empty support {low}..{high}")
    log_p = np.arange(high - low + 1) * math.log1p(-alpha)
    p = np.exp(log_p - logsumexp(log_p))
    return low + int(rng.choice(len(p), p=p))


def draw_partial_indices(m, alpha_b, rng):
    """(a, l) with l ~ TruncGeom(alpha_b) on 1..m-1 and a uniform on 0..m-l-1."""
    l = truncated_geometric(alpha_b, 1, m - 1, rng)
    a = int(rng.integers(0, m - l))
    return a, l


def initialize_bridge(x0, x_star, t0, m, tuning, rng, cap=None):
    """Repeat independence proposals until a valid bridge appears."""
    cap = cap or Config.init_cap()
    if m == 1:
        path = BridgePath([x0, x_star], t0)
        if not path.is_valid():
            raise BridgeInitializationError("Single-step bridge: the endpoints are not joined by a simple geodesic")
        return path
    for attempt in range(1, cap + 1):
        result = propose_independence(x0, x_star, t0, m, tuning, rng)
        if result is not None:
            if attempt > 1:
                logger.info(f"Bridge initialized after {attempt} attempts")
            return result[0]
    raise BridgeInitializationError(
        f"No valid bridge after {cap} attempts (m={m}, t0={t0:g}, "
        f"distance={geodesic(x0, x_star).length:.4g}, diagnostics={dict(diagnostics)})")


class BridgeSampler:
    """Metropolis-Hastings chain over bridges with partial-segment updates.

    With ``beta`` < 1 the chain targets f^beta q_ind^(1-beta) instead of the
    conditional bridge law f.
    """

    def __init__(self, x0, x_star, t0, m, tuning, rng, beta=1.0, start=None, init_cap=None):
        self.tuning = tuning
        self.rng = rng
        self.beta = beta
        self.counters = Counter()
        self.path = start if start is not None else \
            initialize_bridge(x0, x_star, t0, m, tuning, rng, init_cap)
        self._log_q = independence_log_density(self.path, tuning) \
            if beta < 1 and self.path.m > 1 else None

    def step(self):
        """One partial-bridge update; returns True when accepted."""
        path = self.path
        if path.m < 2:
            return False
        a, l = draw_partial_indices(path.m, self.tuning.alpha_b, self.rng)
        self.counters['proposed'] += 1
        self.counters['updated_steps'] += l
        proposal = propose_partial(path, a, l, self.tuning, self.rng)
        if proposal is None:
            self.counters['invalid'] += 1
            return False
        new, log_q_ratio = proposal
        log_p = new.log_target() - path.log_target()
        if self._log_q is not None:
            new_log_q = independence_log_density(new, self.tuning)
            log_a = self.beta * log_p + (1 - self.beta) * (new_log_q - self._log_q) + log_q_ratio
        else:
            new_log_q = None
            log_a = log_p + log_q_ratio
        if self.rng.random() < math.exp(min(0.0, log_a)):
            self.path = new
            self._log_q = new_log_q
            self.counters['accepted'] += 1
            return True
        return False

    def run(self, iters, burnin=0, thin=1, on_iteration=None):
        """Run the chain and return the retained (post burn-in, thinned) bridges."""
        if iters < 1:
            raise ValueError(f"iters must be >= 1, got {iters}")
        kept = []
        report = max(1, iters // 10)
        for it in range(1, iters + 1):
            accepted = self.step()
            if on_iteration is not None:
                on_iteration(it, accepted, self.path)
            if it > burnin and (it - burnin) % thin == 0:
                kept.append(self.path)
            if it % report == 0:
                logger.info(f"Bridge chain {it}/{iters}: acceptance {self.acceptance_rate():.3f}")
        return kept

    def acceptance_rate(self):
        proposed = self.counters['proposed']
        return self.counters['accepted'] / proposed if proposed else 0.0


def sample_bridges(x0, x_star, t0, m, tuning, iters, burnin, thin, rng, on_iteration=None):
    """Sample bridges from x0 to x* targeting the conditional random-walk law.

    ``on_iteration(iteration, accepted, path)`` is called after every move.
    """
    if m < 2:
        raise ValueError(f"Bridge sampling needs m >= 2, got {m}")
    sampler = BridgeSampler(x0, x_star, t0, m, tuning, rng)
    kept = sampler.run(iters, burnin, thin, on_iteration)
    proposed = sampler.counters['proposed']
    mean_updated = sampler.counters['updated_steps'] / proposed if proposed else 0.0
    logger.info(f"Bridge sampling: acceptance {sampler.acceptance_rate():.3f}, "
                f"{mean_updated:.2f} steps updated per iteration, {len(kept)} bridges kept")
    return kept


def topology_counts_per_step(bridges):
    """Number of distinct topologies at each interior step across bridges."""
    if not bridges:
        return []
    m = bridges[0].m
    return [len({b.points[j].topology for b in bridges}) for j in range(1, m)]
