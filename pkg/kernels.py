"""GGF sampling and density, the m-step random walk, and exact reference kernels.

GGF ("Gaussian via geodesic firing") fires a geodesic of Gaussian length and
direction from a center tree, choosing uniformly between the two new orthants
each time a codimension-1 face is crossed.
"""

import logging
import math
from collections import Counter, defaultdict
from dataclasses import dataclass

import numpy as np
from scipy import stats

from geodesic import geodesic
from treespace import Hierarchy, Tree, double_factorial, random_resolution

logger = logging.getLogger(__name__)

LOG2 = math.log(2.0)
HIT_TOL = 1e-12
MAX_RESAMPLES = 10000

# Canonical masks of the three interior splits of BHV_4.
SPIDER4_AXES = (0b0110, 0b1010, 0b1100)

# Degenerate firings (faces of codimension >= 2 hit in floating point).
diagnostics = Counter()


@dataclass(frozen=True)
class GgfParams:
    center: Tree
    t: float

    def __post_init__(self):
        if not self.t > 0:
            raise ValueError(f"GGF dispersion must be positive, got {self.t}")


@dataclass(frozen=True)
class WalkParams:
    source: Tree
    t0: float
    m: int

    def __post_init__(self):
        if not self.source.is_resolved:
            raise ValueError("Random walks start from a fully resolved tree")
        if not self.t0 > 0:
            raise ValueError(f"t0 must be positive, got {self.t0}")
        if self.m < 1:
            raise ValueError(f"m must be >= 1, got {self.m}")


def high_degree_vertices(tree):
    """(hierarchy, [(cluster, alpha)]) for vertices of degree > 3."""
    hierarchy = Hierarchy(tree.taxa, tree.lengths)
    found = [(c, hierarchy.degree(c) - 3) for c in hierarchy.vertices()
             if hierarchy.degree(c) > 3]
    return hierarchy, found


def log_resolution_factor(tree):
    """log K(x) = sum(alpha) log 2 - log prod (2 alpha + 1)!!; zero when resolved."""
    if tree.is_resolved:
        return 0.0
    _, found = high_degree_vertices(tree)
    return sum(alpha * LOG2 - math.log(double_factorial(2 * alpha + 1)) for _, alpha in found)


def resolve_orthant(tree, rng):
    """Uniformly random maximal orthant having ``tree`` in its boundary.

    Returns:
        list of new split masks completing the topology of ``tree``
    """
    hierarchy, found = high_degree_vertices(tree)
    new = []
    for cluster, _ in found:
        new.extend(random_resolution(hierarchy.neighbor_sets(cluster), tree.taxa, rng))
    return new


def _fire(start, lengths, velocity, rng):
    """Extend a geodesic from ``start`` along ``velocity`` for unit time.

    Returns the endpoint, or None when a face of codimension >= 2 is met.
    """
    taxa = start.taxa
    lengths = dict(lengths)
    velocity = dict(velocity)
    remaining = 1.0
    while True:
        hits = sorted((lengths[s] / -v, s) for s, v in velocity.items()
                      if v < 0 and lengths[s] > 0)
        if not hits or hits[0][0] >= remaining:
            break
        tau, face = hits[0]
        if len(hits) > 1 and hits[1][0] - tau <= HIT_TOL * max(1.0, tau):
            return None
        for s, v in velocity.items():
            lengths[s] += tau * v
        lengths[face] = 0.0
        remaining -= tau

        hierarchy = Hierarchy(taxa, lengths)
        choices = hierarchy.nni_alternatives(face)
        entered = choices[int(rng.integers(2))]
        speed = velocity.pop(face)
        del lengths[face]
        lengths[entered] = 0.0
        velocity[entered] = -speed

    final = {s: lengths[s] + remaining * v for s, v in velocity.items()}
    if min(final.values(), default=1.0) <= HIT_TOL:
        return None
    return Tree(taxa, final, check=False)


def ggf_sample(params, rng):
    """Draw one tree from GGF(center, t)."""
    center, t = params.center, params.t
    scale = math.sqrt(t)
    for attempt in range(MAX_RESAMPLES):
        lengths = dict(center.lengths)
        existing = sorted(lengths)
        velocity = dict(zip(existing, rng.normal(0.0, scale, size=len(existing))))
        if not center.is_resolved:
            fresh = resolve_orthant(center, rng)
            for mask, v in zip(fresh, np.abs(rng.normal(0.0, scale, size=len(fresh)))):
                lengths[mask] = 0.0
                velocity[mask] = v
        y = _fire(center, lengths, velocity, rng)
        if y is not None:
            return y
        diagnostics['degenerate_firings'] += 1
        logger.warning(f"GGF firing hit a codimension >= 2 face; resampling (attempt {attempt + 1})")
    raise RuntimeError(f"GGF sampling failed after {MAX_RESAMPLES} resamples")


def gaussian_log_density(sq_dist, nu, t, dim):
    return -nu * LOG2 - 0.5 * dim * math.log(2 * math.pi * t) - sq_dist / (2 * t)


def ggf_log_density(x, center, t):
    """log GGF(x | center, t); -inf outside the support."""
    if not x.is_resolved:
        return -math.inf
    g = geodesic(center, x)
    c = g.classification
    if center.is_resolved:
        if not c.is_simple:
            return -math.inf
        log_k = 0.0
    else:
        if not c.simple_excluding_start:
            return -math.inf
        log_k = log_resolution_factor(center)
    return log_k + gaussian_log_density(g.length ** 2, c.nu, t, x.dim)


def ggf_density(x, params):
    return math.exp(ggf_log_density(x, params.center, params.t))


def random_walk(params, rng):
    """m GGF steps of dispersion t0/m from the source.

    Returns:
        (endpoint, path of m+1 trees)
    """
    step = GgfParams(params.source, params.t0 / params.m)
    path = [params.source]
    for _ in range(params.m):
        step = GgfParams(ggf_sample(step, rng), step.t)
        path.append(step.center)
    return path[-1], path


# ---------------------------------------------------------------- reference kernels

def _axis(tree):
    """(mask or None, position) of a tree in BHV_4."""
    if tree.n_taxa != 4:
        raise ValueError(f"Spider kernel needs N = 4, got N = {tree.n_taxa}")
    if not tree.lengths:
        return None, 0.0
    (mask, length), = tree.lengths.items()
    return mask, length


def spider4_density(y, x0, t0):
    """Heat kernel of Brownian motion on the 3-spider (BHV_4)."""
    mask_y, b = _axis(y)
    mask_x, a = _axis(x0)
    scale = math.sqrt(t0)
    if mask_x is not None and mask_x == mask_y:
        return stats.norm.pdf(b - a, scale=scale) - stats.norm.pdf(b + a, scale=scale) / 3
    return 2 * stats.norm.pdf(b + a, scale=scale) / 3


def spider4_axis_cdf(b, same_axis, a, t0):
    """Mass of the spider kernel on one axis within distance b of the origin."""
    s = math.sqrt(t0)
    tail = stats.norm.cdf((b + a) / s) - stats.norm.cdf(a / s)
    if same_axis:
        return (stats.norm.cdf((b - a) / s) - stats.norm.cdf(-a / s)) - tail / 3
    return 2 * tail / 3


def star_source_log_density(y, t0):
    """log density of Brownian motion at time t0 started from the star tree."""
    if not y.is_resolved:
        raise ValueError("Star-source density is defined for resolved trees")
    n, dim = y.n_taxa, y.dim
    return (dim * LOG2 - math.log(double_factorial(2 * n - 5))
            - 0.5 * dim * math.log(2 * math.pi * t0) - y.norm() ** 2 / (2 * t0))


def star_source_density(y, t0):
    return math.exp(star_source_log_density(y, t0))


def spider4_ks_distance(samples, x0, t0):
    """Largest per-axis gap between the empirical and the exact spider CDF.

    Each axis is compared as an unnormalized CDF (mass within distance b of
    the origin on that axis), so the masses of the three axes add to one.
    """
    mask_x, a = _axis(x0)
    n = len(samples)
    if not n:
        raise ValueError("No samples to compare")
    by_axis = defaultdict(list)
    for y in samples:
        mask, b = _axis(y)
        if mask is not None:
            by_axis[mask].append(b)

    worst = 0.0
    for mask in SPIDER4_AXES:
        b = np.sort(np.asarray(by_axis[mask], dtype=float))
        same = mask == mask_x
        total = spider4_axis_cdf(np.inf, same, a, t0)
        worst = max(worst, abs(len(b) / n - total))
        if not len(b):
            continue
        exact = spider4_axis_cdf(b, same, a, t0)
        upper = np.arange(1, len(b) + 1) / n
        lower = np.arange(len(b)) / n
        worst = max(worst, float(np.max(np.abs(upper - exact))), float(np.max(np.abs(lower - exact))))
    return worst
