"""Geodesics in BHV tree space.

Geodesics are found by successive refinement of the cone-path support: each
support pair (A, B) is split while the bipartite incompatibility graph between
A and B has a vertex cover of normalized weight below one.
"""

import logging
import math
from dataclasses import dataclass
from functools import cached_property, lru_cache

import networkx as nx

from treespace import LENGTH_TOL, Split, TaxonMismatchError, Tree, masks_compatible

logger = logging.getLogger(__name__)

COVER_TOL = 1e-10
MERGE_TOL = 1e-12
CAPACITY_SCALE = 2 ** 40


@dataclass(frozen=True)
class SupportPair:
    dropped: tuple
    gained: tuple
    norm_dropped: float
    norm_gained: float

    @property
    def ratio(self):
        if self.norm_gained == 0:
            return math.inf
        return self.norm_dropped / self.norm_gained

    @property
    def transition(self):
        """Arc-length fraction at which ``dropped`` has shrunk to zero."""
        total = self.norm_dropped + self.norm_gained
        return self.norm_dropped / total if total > 0 else 0.0


@dataclass(frozen=True)
class GeodesicClassification:
    crossings: tuple           # (t, kappa) at every transition point in (0, 1)
    stratum_intervals: tuple   # (t_lo, t_hi, kappa) for legs with kappa >= 1
    high_codim_orthants: tuple
    nu: int
    is_simple: bool
    simple_excluding_start: bool
    is_cone_path: bool

    @property
    def penalty(self):
        return sum(self.high_codim_orthants)


@dataclass(frozen=True, eq=False)
class Geodesic:
    start: Tree
    end: Tree
    common: tuple     # (mask, start length, end length)
    support: tuple    # SupportPair, ratios nondecreasing
    length: float

    @property
    def common_splits(self):
        n = self.start.n_taxa
        return [(Split(mask, n), (l1, l2)) for mask, l1, l2 in self.common]

    def evaluate(self, t):
        return evaluate(self, t)

    @cached_property
    def classification(self):
        return classify(self)

    def _positive_count(self, t):
        count = sum(1 for _, l1, l2 in self.common if (1 - t) * l1 + t * l2 > LENGTH_TOL)
        for pair in self.support:
            if abs(pair.transition - t) <= MERGE_TOL:
                continue
            count += len(pair.gained) if pair.transition < t else len(pair.dropped)
        return count


def _capacity(weight):
    return max(1, round(weight * CAPACITY_SCALE))


def _split_pair(pair, start, end):
    """Refine one support pair by a minimum-weight vertex cover, or None.

    Capacities are integers so the max-flow is exact; nodes are integers
    (source -1, sink -2, dropped 2i, gained 2j+1) so the cut found does not
    depend on string hashing.
    """
    na2 = pair.norm_dropped ** 2
    nb2 = pair.norm_gained ** 2
    graph = nx.DiGraph()
    graph.add_nodes_from([-1, -2])
    for i, a in enumerate(pair.dropped):
        graph.add_edge(-1, 2 * i, capacity=_capacity(start.lengths[a] ** 2 / na2))
    for j, b in enumerate(pair.gained):
        graph.add_edge(2 * j + 1, -2, capacity=_capacity(end.lengths[b] ** 2 / nb2))
    for i, a in enumerate(pair.dropped):
        for j, b in enumerate(pair.gained):
            if not masks_compatible(a, b):
                graph.add_edge(2 * i, 2 * j + 1)  # no capacity: infinite

    cut, (reachable, _) = nx.minimum_cut(graph, -1, -2)
    if cut >= CAPACITY_SCALE:
        return None

    cover_a = [a for i, a in enumerate(pair.dropped) if 2 * i not in reachable]
    cover_b = [b for j, b in enumerate(pair.gained) if 2 * j + 1 in reachable]
    rest_a = [a for i, a in enumerate(pair.dropped) if 2 * i in reachable]
    rest_b = [b for j, b in enumerate(pair.gained) if 2 * j + 1 not in reachable]
    weight = (sum(start.lengths[a] ** 2 for a in cover_a) / na2
              + sum(end.lengths[b] ** 2 for b in cover_b) / nb2)
    if weight >= 1 - COVER_TOL or not (cover_a and rest_a and cover_b and rest_b):
        return None
    return (_pair(cover_a, rest_b, start, end), _pair(rest_a, cover_b, start, end))


def _pair(dropped, gained, start, end):
    return SupportPair(
        tuple(sorted(dropped)), tuple(sorted(gained)),
        math.sqrt(sum(start.lengths[a] ** 2 for a in dropped)),
        math.sqrt(sum(end.lengths[b] ** 2 for b in gained)),
    )


@lru_cache(maxsize=8192)
def _compute(x1, x2):
    l1, l2 = x1.lengths, x2.lengths
    common_masks = [s for s in l1 if all(masks_compatible(s, f) for f in l2)]
    common_masks += [f for f in l2 if f not in l1 and all(masks_compatible(f, s) for s in l1)]
    common_set = set(common_masks)
    common = tuple((mask, x1.length(mask), x2.length(mask)) for mask in sorted(common_set))

    dropped = [s for s in l1 if s not in common_set]
    gained = [f for f in l2 if f not in common_set]
    support = []
    if dropped or gained:
        support = [_pair(dropped, gained, x1, x2)]
        i = 0
        while i < len(support):
            pair = support[i]
            if (len(pair.dropped) > 1 or len(pair.gained) > 1) \
                    and pair.norm_dropped > 0 and pair.norm_gained > 0:
                refined = _split_pair(pair, x1, x2)
                if refined is not None:
                    support[i:i + 1] = list(refined)
                    continue
            i += 1

    length = math.sqrt(sum((a - b) ** 2 for _, a, b in common)
                       + sum((p.norm_dropped + p.norm_gained) ** 2 for p in support))
    return Geodesic(x1, x2, common, tuple(support), length)


def geodesic(x1, x2):
    """The unique BHV geodesic from x1 to x2."""
    if x1.taxa != x2.taxa:
        raise TaxonMismatchError("Geodesic endpoints are over different taxon sets")
    return _compute(x1, x2)


def distance(x1, x2):
    return geodesic(x1, x2).length


def evaluate(g, t):
    """Point at arc-length fraction t along g."""
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"Geodesic parameter must be in [0, 1], got {t}")
    if t == 0.0:
        return g.start
    if t == 1.0:
        return g.end
    lengths = {}
    for mask, a, b in g.common:
        value = (1 - t) * a + t * b
        if value > LENGTH_TOL:
            lengths[mask] = value
    for pair in g.support:
        na, nb = pair.norm_dropped, pair.norm_gained
        if (1 - t) * na > t * nb:
            scale = ((1 - t) * na - t * nb) / na
            for mask in pair.dropped:
                value = scale * g.start.lengths[mask]
                if value > LENGTH_TOL:
                    lengths[mask] = value
        elif nb > 0:
            scale = (t * nb - (1 - t) * na) / nb
            for mask in pair.gained:
                value = scale * g.end.lengths[mask]
                if value > LENGTH_TOL:
                    lengths[mask] = value
    return Tree(g.start.taxa, lengths, check=False)


def classify(g):
    """Crossing points, codimensions and simplicity of a geodesic."""
    dim = g.start.dim
    points = []
    for pair in g.support:
        t = pair.transition
        if MERGE_TOL < t < 1 - MERGE_TOL and not any(abs(t - p) <= MERGE_TOL for p in points):
            points.append(t)
    points.sort()

    crossings = tuple((t, dim - g._positive_count(t)) for t in points)
    breaks = [0.0] + points + [1.0]
    intervals = []
    for lo, hi in zip(breaks[:-1], breaks[1:]):
        kappa = dim - g._positive_count(0.5 * (lo + hi))
        if kappa >= 1:
            intervals.append((lo, hi, kappa))

    # high-codimension orthants in path order
    events = [(t, k) for t, k in crossings if k >= 2]
    events += [(0.5 * (lo + hi), k) for lo, hi, k in intervals if k >= 2]
    high = tuple(k for _, k in sorted(events))

    interior_ok = all(k <= 1 for _, k in crossings) and all(k <= 1 for _, _, k in intervals)
    end_ok = g.end.is_resolved
    nu = sum(1 for _, k in crossings if k == 1)
    cone = (len(g.support) == 1 and not g.common
            and bool(g.support[0].dropped) and bool(g.support[0].gained))
    return GeodesicClassification(
        crossings=crossings,
        stratum_intervals=tuple(intervals),
        high_codim_orthants=high,
        nu=nu,
        is_simple=interior_ok and end_ok and g.start.is_resolved,
        simple_excluding_start=interior_ok and end_ok,
        is_cone_path=cone,
    )


def nearest_high_codim_point(g, t_max):
    """First point of g[0, t_max] with codimension >= 2, as (t, Tree), or None."""
    if not 0.0 < t_max <= 1.0:
        raise ValueError(f"t_max must be in (0, 1], got {t_max}")
    for t, kappa in g.classification.crossings:
        if t > t_max + MERGE_TOL:
            break
        if kappa >= 2:
            return t, evaluate(g, t)
    return None


def frechet_mean(data, iterations, rng):
    """Sturm iteration for the Fréchet mean.

    Data are visited in freshly shuffled sweeps rather than by independent
    uniform draws: each step's datum is still uniform at random, but every
    datum is visited once per sweep, so in a single orthant the result after
    whole sweeps is the exact sample mean. Step k moves the running point a
    fraction 1/(k+2) of the way towards the visited datum.

    Args:
        data: nonempty list of Tree
        iterations: number of steps (>= 1)
        rng: numpy Generator

    Returns:
        (mean Tree, Fréchet variance at the mean)
    """
    if not data:
        raise ValueError("Fréchet mean of an empty data set")
    if iterations < 1:
        raise ValueError(f"iterations must be >= 1, got {iterations}")
    n = len(data)
    order = rng.permutation(n)
    z = data[int(order[0])]
    cursor = 1
    for k in range(iterations):
        if cursor == n:
            order = rng.permutation(n)
            cursor = 0
        x = data[int(order[cursor])]
        cursor += 1
        if x != z:
            z = evaluate(geodesic(z, x), 1.0 / (k + 2))
    variance = sum(distance(z, x) ** 2 for x in data) / n
    logger.info(f"Fréchet mean after {iterations} iterations: variance {variance:.6g}")
    return z, variance
