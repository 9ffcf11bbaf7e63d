#!/usr/bin/env python3
"""
Desk-scale reproductions of the method's validation experiments.

Each experiment prints ✓/❌ lines and returns True when it passes. Sample
sizes are scaled by --scale; the defaults keep every experiment (except the
yeast reproduction) to minutes on a laptop.
"""

import argparse
import logging
import math
import os
import sys

import numpy as np
from scipy import integrate, stats

import streams
from bridge import BridgeSampler, ProposalTuning
from config import Config
from dataset import load_dataset, summarize
from evidence import (EvidenceConfig, chib_and_tunnel, chib_estimate, log_bayes_factor,
                      stepping_stone_estimate, star_exact_log_ml, tunnel_estimate)
from geodesic import distance, frechet_mean, geodesic
from kernels import (SPIDER4_AXES, GgfParams, WalkParams, ggf_density, ggf_log_density, ggf_sample,
                     random_walk, spider4_density, spider4_ks_distance)
from posterior import InferenceConfig, Prior, modal_tree, run_inference, summarize_trace
from treespace import (Hierarchy, TaxonSet, Tree, all_splits, count_splits, count_topologies,
                       load_taxa, maximal_topologies, parse_newick, random_tree, to_newick)

logger = logging.getLogger(__name__)

RECOVERY_SOURCE = "((1:0.1,2:0.1):0.3,3:0.1,(4:0.1,5:0.1):0.15);"


def report(ok, message):
    print(f"{'✓' if ok else '❌'} {message}")
    return ok


def _scaled(value, scale, minimum=1):
    return max(minimum, int(round(value * scale)))


# ---------------------------------------------------------------- 1. exact N=4 kernel

def exp_kernel4(seed, scale):
    taxa = TaxonSet.numbered(4)
    x0 = Tree(taxa, {SPIDER4_AXES[0]: 0.5})
    walks = _scaled(100000, scale, 1000)
    params = WalkParams(x0, 0.25, 100)
    endpoints = [random_walk(params, s)[0] for s in streams.split(streams.root_stream(seed), walks)]
    ks = spider4_ks_distance(endpoints, x0, 0.25)
    return report(ks < 0.02, f"N=4 kernel: KS distance {ks:.4f} over {walks} walks (< 0.02)")


# ---------------------------------------------------------------- 2. density normalization

def _bhv4_mass(center, t):
    taxa = center.taxa
    params = GgfParams(center, t)
    total = 0.0
    for mask in SPIDER4_AXES:
        def density(b):
            return ggf_density(Tree(taxa, {mask: b}, check=False), params)
        peak = center.length(mask)
        upper = peak + 12 * math.sqrt(t)
        value, _ = integrate.quad(density, 0.0, upper, points=[peak] if peak > 0 else None,
                                  epsabs=1e-12, epsrel=1e-10, limit=200)
        total += value
    return total


def _bhv5_mass(center, t, samples, rng):
    """Importance-sampling estimate of the total GGF mass over BHV_5.

    Orthants are chosen with probabilities from a pilot run of the sampler;
    within an orthant each coordinate is a normal truncated to (0, inf),
    centred on the center's length for shared splits and at 0 otherwise.
    """
    taxa = center.taxa
    orthants = maximal_topologies(taxa)
    params = GgfParams(center, t)
    pilot_rng, rng = streams.split(rng, 2)
    pilot = [ggf_sample(params, pilot_rng).topology for _ in range(max(200, samples // 20))]
    counts = np.array([sum(1 for top in pilot if top == o) for o in orthants], dtype=float) + 1.0
    probs = counts / counts.sum()

    s = math.sqrt(t)
    weights = np.empty(samples)
    choices = rng.choice(len(orthants), size=samples, p=probs)
    for i, k in enumerate(choices):
        masks = sorted(orthants[k].splits)
        mu = np.array([center.length(mask) for mask in masks])
        lower = stats.norm.cdf(0.0, loc=mu, scale=s)
        u = rng.uniform(lower, 1.0)
        lengths = np.maximum(stats.norm.ppf(u, loc=mu, scale=s), 1e-300)
        log_q = math.log(probs[k]) + float(np.sum(stats.norm.logpdf(lengths, loc=mu, scale=s)
                                                  - np.log1p(-lower)))
        y = Tree(taxa, dict(zip(masks, lengths)), check=False)
        weights[i] = math.exp(ggf_log_density(y, center, t) - log_q)
    return float(weights.mean()), float(weights.std(ddof=1) / math.sqrt(samples))


def exp_normalization(seed, scale):
    ok = True
    taxa4 = TaxonSet.numbered(4)
    for a, t in [(0.5, 0.25), (0.01, 0.1), (0.0, 0.3), (2.0, 1.0), (0.1, 2.0)]:
        center = Tree(taxa4, {SPIDER4_AXES[0]: a}) if a > 0 else Tree.star(taxa4)
        mass = _bhv4_mass(center, t)
        ok &= report(abs(mass - 1) < 1e-6, f"BHV4 center {a}, t={t}: mass {mass:.9f}")

    taxa5 = TaxonSet.numbered(5)
    settings = [
        ("((1:0.1,2:0.1):1.0,3:0.1,(4:0.1,5:0.1):0.5);", 0.1),
        ("((1:0.1,2:0.1):0.05,3:0.1,(4:0.1,5:0.1):0.02);", 0.1),
        ("((1:0.1,2:0.1):0.3,3:0.1,4:0.1,5:0.1);", 0.2),
        ("(1:0.1,2:0.1,3:0.1,4:0.1,5:0.1);", 0.1),
        ("((1:0.1,3:0.1):0.5,2:0.1,(4:0.1,5:0.1):0.5);", 1.0),
    ]
    samples = _scaled(200000, scale, 2000)
    for stream, (newick, t) in zip(streams.split(streams.root_stream(seed), len(settings)), settings):
        mass, se = _bhv5_mass(parse_newick(newick, taxa5), t, samples, stream)
        ok &= report(abs(mass - 1) < max(1e-3, 4 * se),
                     f"BHV5 {newick} t={t}: mass {mass:.5f} (se {se:.2g})")
    return ok


# ---------------------------------------------------------------- 3. Euclidean bridge

def _batch_se(values, batches=50):
    values = np.asarray(values, dtype=float)
    size = len(values) // batches
    means = values[:size * batches].reshape(batches, size).mean(axis=1)
    return float(means.std(ddof=1) / math.sqrt(batches))


def exp_euclidean_bridge(seed, scale):
    """Deep inside one orthant the bridge is a Brownian bridge with known marginals."""
    taxa = TaxonSet.numbered(5)
    x0 = parse_newick("((1:0.1,2:0.1):2.0,3:0.1,(4:0.1,5:0.1):2.0);", taxa)
    x_star = parse_newick("((1:0.1,2:0.1):2.5,3:0.1,(4:0.1,5:0.1):1.5);", taxa)
    t0, m = 0.01, 10
    iters = _scaled(200000, scale, 5000)
    sampler = BridgeSampler(x0, x_star, t0, m, ProposalTuning(), streams.root_stream(seed))
    kept = sampler.run(iters, iters // 10, 10)

    ok = True
    for mask in sorted(x0.lengths):
        a, b = x0.length(mask), x_star.length(mask)
        for j in range(1, m):
            values = np.array([path.points[j].length(mask) for path in kept])
            mean = a + j / m * (b - a)
            var = t0 * j * (m - j) / m ** 2
            se_mean = _batch_se(values)
            se_var = _batch_se((values - mean) ** 2)
            ok &= abs(values.mean() - mean) <= 3 * se_mean
            ok &= abs(np.mean((values - mean) ** 2) - var) <= 3 * se_var
    return report(ok, f"Euclidean bridge marginals over {len(kept)} bridges "
                      f"(acceptance {sampler.acceptance_rate():.3f})")


# ---------------------------------------------------------------- 4. N=4 marginal likelihood curve

def walk4_log_density(y, x0, t0, m, points=1200):
    """m-step random-walk density on BHV_4 by quadrature on a grid per axis."""
    if not x0.is_resolved:
        raise ValueError("The walk starts on one axis of BHV_4")
    (mask_x, a), = x0.lengths.items()
    t = t0 / m
    grid = np.linspace(0.0, a + 10 * math.sqrt(t0), points)
    w = np.full(points, grid[1] - grid[0])
    w[[0, -1]] *= 0.5
    phi_same = stats.norm.pdf(grid[:, None] - grid[None, :], scale=math.sqrt(t)) * w
    phi_other = 0.5 * stats.norm.pdf(grid[:, None] + grid[None, :], scale=math.sqrt(t)) * w

    density = {mask: (stats.norm.pdf(grid - a, scale=math.sqrt(t)) if mask == mask_x
                      else 0.5 * stats.norm.pdf(grid + a, scale=math.sqrt(t)))
               for mask in SPIDER4_AXES}
    for _ in range(m - 1):
        density = {mask: phi_same @ density[mask]
                   + sum(phi_other @ density[other] for other in SPIDER4_AXES if other != mask)
                   for mask in SPIDER4_AXES}
    (mask_y, b), = y.lengths.items()
    return math.log(float(np.interp(b, grid, density[mask_y])))


def exp_marginal4(seed, scale):
    taxa = TaxonSet.numbered(4)
    t0, m = 0.25, 20
    x0 = Tree(taxa, {SPIDER4_AXES[0]: 0.5})
    endpoints = [Tree(taxa, {SPIDER4_AXES[0]: b}) for b in (0.1, 0.3, 0.5, 0.7, 0.9, 1.2)]
    endpoints += [Tree(taxa, {SPIDER4_AXES[1]: b}) for b in (0.05, 0.2, 0.4, 0.6, 0.9)]
    config = EvidenceConfig(M1=_scaled(2000, scale, 100), M2=_scaled(2000, scale, 100),
                            h=10, K=100, burnin=200, bootstrap=0)
    repeats = 20

    ok = True
    for y, stream in zip(endpoints, streams.split(streams.root_stream(seed), len(endpoints))):
        exact = math.log(spider4_density(y, x0, t0))
        offset = abs(walk4_log_density(y, x0, t0, m) - exact)
        chib, tunnel = [], []
        for rep in streams.split(stream, repeats):
            c, u = chib_and_tunnel(y, x0, t0, m, config, rep)
            chib.append(c.log_ml)
            tunnel.append(u.log_ml)
        chib_med, tunnel_med = float(np.median(chib)), float(np.median(tunnel))
        tol = 0.1 + offset
        ok &= report(abs(chib_med - exact) <= tol and abs(tunnel_med - exact) <= tol,
                     f"y={to_newick(y)}: exact {exact:.4f}, chib {chib_med:.4f}, "
                     f"tunnel {tunnel_med:.4f}, m-offset {offset:.4f}")
    return ok


# ---------------------------------------------------------------- 5. cross-estimator consistency

def _nni_neighbour(tree, moves, rng):
    lengths = dict(tree.lengths)
    for _ in range(moves):
        hierarchy = Hierarchy(tree.taxa, lengths)
        mask = sorted(lengths)[int(rng.integers(len(lengths)))]
        alt = hierarchy.nni_alternatives(mask)[int(rng.integers(2))]
        del lengths[mask]
        lengths[alt] = 1.0
    values = rng.gamma(2.0, 0.1, size=len(lengths))
    return Tree(tree.taxa, dict(zip(sorted(lengths), values)), check=False)


def _fixture_kind(g):
    c = g.classification
    if not c.is_simple and c.is_cone_path:
        return 'cone'
    high = sorted(k for _, k in c.crossings if k >= 2)
    if any(k >= 2 for _, _, k in c.stratum_intervals):
        return None
    if high == [2, 2]:
        return 'two-kappa-2'
    if high == [5]:
        return 'kappa-5'
    return None


def complexity_fixtures(seed, tries=20000):
    """Seeded search for three N=10 endpoint pairs of increasing geodesic complexity."""
    taxa = TaxonSet.numbered(10)
    rng = streams.root_stream(seed)
    found = {}
    for attempt in range(tries):
        x0 = random_tree(taxa, rng, 2.0, 0.1)
        if rng.random() < 0.5:
            x_star = _nni_neighbour(x0, int(rng.integers(2, 8)), rng)
        else:
            x_star = random_tree(taxa, rng, 2.0, 0.1)
        kind = _fixture_kind(geodesic(x0, x_star))
        if kind and kind not in found:
            found[kind] = (x0, x_star)
            logger.info(f"Fixture '{kind}' found after {attempt + 1} draws")
        if len(found) == 3:
            break
    missing = {'two-kappa-2', 'kappa-5', 'cone'} - set(found)
    if missing:
        raise RuntimeError(f"No fixture of kind {sorted(missing)} in {tries} draws")
    return found


def exp_cross_estimators(seed, scale):
    fixtures = complexity_fixtures(seed)
    config = EvidenceConfig(M1=_scaled(10000, scale, 200), M2=_scaled(10000, scale, 200),
                            h=10, K=20, burnin=500, bootstrap=100)
    t0, m = 0.05, 20
    ok = True
    for (kind, (x0, x_star)), stream in zip(sorted(fixtures.items()),
                                            streams.split(streams.root_stream(seed), len(fixtures))):
        a, b, c = streams.split(stream, 3)
        estimates = {'chib': chib_estimate(x_star, x0, t0, m, config, a),
                     'tunnel': tunnel_estimate(x_star, x0, t0, m, config, b),
                     'stepping-stone': stepping_stone_estimate(x_star, x0, t0, m, config, c)}
        names = sorted(estimates)
        agree = all(abs(estimates[p].log_ml - estimates[q].log_ml)
                    <= 3 * math.hypot(estimates[p].se, estimates[q].se)
                    for i, p in enumerate(names) for q in names[i + 1:])
        ok &= report(agree, f"{kind}: " + ', '.join(
            f"{k} {e.log_ml:.3f} ± {e.se:.3f}" for k, e in estimates.items()))
    return ok


# ---------------------------------------------------------------- 6-7. posterior recovery and consistency

def _simulate(x0, t0, m, n, rng):
    params = WalkParams(x0, t0, m)
    return [random_walk(params, s)[0] for s in streams.split(rng, n)]


def exp_recovery(seed, scale):
    taxa = TaxonSet.numbered(5)
    truth = parse_newick(RECOVERY_SOURCE, taxa)
    ok = True
    for t0 in (0.01, 0.1):
        for s in range(3):
            data_rng, chain_rng = streams.split(streams.root_stream(seed + s), 2)
            data = _simulate(truth, t0, 50, 20, data_rng)
            config = InferenceConfig(m=50, iters=_scaled(10000, scale, 500),
                                     burnin=_scaled(1000, scale, 50), thin=10, seed=seed + s)
            trace = run_inference(data, Prior.for_taxa(5), config, chain_rng)
            summary = summarize_trace(trace)
            lo, hi = summary['t0_interval']
            modal = modal_tree(trace.x0)
            ok &= report(modal.topology == truth.topology and lo <= t0 <= hi,
                         f"t0={t0}, seed {seed + s}: modal topology "
                         f"{'matches' if modal.topology == truth.topology else 'differs'}, "
                         f"t0 interval [{lo:.4g}, {hi:.4g}]")
    return ok


def exp_consistency(seed, scale, epsilon=0.1):
    taxa = TaxonSet.numbered(5)
    truth = parse_newick(RECOVERY_SOURCE, taxa)
    t0 = 0.1
    sizes, masses = [], []
    for n in (5, 20, 80):
        for s in range(3):
            data_rng, chain_rng = streams.split(streams.root_stream(seed + 100 * n + s), 2)
            data = _simulate(truth, t0, 50, n, data_rng)
            config = InferenceConfig(m=50, iters=_scaled(5000, scale, 500),
                                     burnin=_scaled(500, scale, 50), thin=5)
            trace = run_inference(data, Prior.for_taxa(5), config, chain_rng)
            mass = float(np.mean([distance(x, truth) <= epsilon for x in trace.x0]))
            sizes.append(n)
            masses.append(mass)
            print(f"   n={n}, replicate {s + 1}: mass within {epsilon} = {mass:.3f}")
    tau, p = stats.kendalltau(sizes, masses)
    decreasing = tau < 0 and p < 0.05
    return report(not decreasing, f"Posterior concentration trend: Kendall tau {tau:.3f} (p={p:.3f})")


# ---------------------------------------------------------------- 9. combinatorics

def exp_combinatorics(seed, scale):
    ok = True
    for n in (4, 5, 6):
        taxa = TaxonSet.numbered(n)
        splits, tops = len(all_splits(taxa)), len(maximal_topologies(taxa))
        ok &= report(splits == count_splits(n) and tops == count_topologies(n),
                     f"N={n}: {splits} splits, {tops} topologies by enumeration")
    data_path, taxa_path = os.getenv('BHV_YEAST_DATA'), os.getenv('BHV_YEAST_TAXA')
    if data_path and taxa_path and os.path.exists(data_path):
        summary = summarize(load_dataset(data_path, load_taxa(taxa_path)))
        ok &= report((summary.n, summary.distinct_splits, summary.distinct_topologies,
                      summary.modal_count) == (106, 26, 23, 41),
                     f"Yeast summary: {summary.as_dict()}")
    else:
        print("   (yeast data not configured; set BHV_YEAST_DATA and BHV_YEAST_TAXA)")
    return ok


# ---------------------------------------------------------------- 8. yeast

def exp_yeast(seed, scale):
    data_path, taxa_path = os.getenv('BHV_YEAST_DATA'), os.getenv('BHV_YEAST_TAXA')
    if not (data_path and taxa_path):
        return report(False, "Set BHV_YEAST_DATA and BHV_YEAST_TAXA to run the yeast reproduction")
    taxa = load_taxa(taxa_path)
    data = load_dataset(data_path, taxa)
    summary = summarize(data)
    ok = report(summary.modal_is_consensus, f"Modal topology equals the majority consensus "
                                            f"({summary.modal_count} of {summary.n} trees)")

    root = streams.root_stream(seed)
    frechet_rng, infer_rng, fixed_rng, ml_rng = streams.split(root, 4)
    fm, _ = frechet_mean(data, _scaled(100000, scale, 1000), frechet_rng)
    config = InferenceConfig(m=50, iters=_scaled(500000, scale, 2000),
                             burnin=_scaled(50000, scale, 200), thin=100)
    trace = run_inference(data, Prior.for_taxa(taxa.size), config, infer_rng)
    post = summarize_trace(trace)
    mode = modal_tree(trace.x0)
    ok &= report(mode.topology == summary.consensus, f"Posterior modal tree {to_newick(mode)}")

    if not fm.is_resolved:
        return report(False, "Fréchet mean is not fully resolved; cannot estimate its marginal likelihood")
    fixed = InferenceConfig(m=50, iters=config.iters, burnin=config.burnin, thin=config.thin, fixed_x0=fm)
    t0_fm = summarize_trace(run_inference(data, Prior.for_taxa(taxa.size), fixed, fixed_rng))['t0_mode']

    evidence_config = EvidenceConfig(M1=_scaled(10000, scale, 500), M2=_scaled(10000, scale, 500))
    a, b = streams.split(ml_rng, 2)
    ml_mode = sum(chib_estimate(x, mode, post['t0_mode'], 50, evidence_config, s).log_ml
                  for x, s in zip(data, streams.split(a, len(data))))
    ml_fm = sum(chib_estimate(x, fm, t0_fm, 50, evidence_config, s).log_ml
                for x, s in zip(data, streams.split(b, len(data))))
    bf = log_bayes_factor(ml_mode, ml_fm)
    ok &= report(bf > 0 and abs(bf - 11.3) <= 3,
                 f"log10 Bayes factor {bf:.2f} (mode {ml_mode:.2f} vs Fréchet mean {ml_fm:.2f})")

    star_t0 = float(np.mean([x.norm() ** 2 for x in data]))
    star = star_exact_log_ml(data, star_t0)
    ok &= report(abs(star - (-456.13)) <= 0.5, f"Star-tree log marginal likelihood {star:.2f} at t0={star_t0:.4f}")
    return ok


EXPERIMENTS = {
    'kernel4': exp_kernel4,
    'normalization': exp_normalization,
    'euclidean-bridge': exp_euclidean_bridge,
    'marginal4': exp_marginal4,
    'cross-estimators': exp_cross_estimators,
    'recovery': exp_recovery,
    'consistency': exp_consistency,
    'combinatorics': exp_combinatorics,
    'yeast': exp_yeast,
}


def main(argv=None):
    parser = argparse.ArgumentParser(description="Acceptance experiments")
    parser.add_argument('names', nargs='*', metavar='name',
                        help=f"one or more of: all, {', '.join(EXPERIMENTS)}")
    parser.add_argument('--seed', type=int, default=None)
    parser.add_argument('--scale', type=float, default=1.0, help='multiplier on sample sizes')
    args = parser.parse_args(argv)
    unknown = [n for n in args.names if n != 'all' and n not in EXPERIMENTS]
    if unknown:
        parser.error(f"unknown experiment(s): {', '.join(unknown)}")

    logging.basicConfig(level=getattr(logging, Config.LOG_LEVEL, logging.INFO),
                        format='%(asctime)s - %(levelname)s - %(message)s',
                        handlers=[logging.FileHandler(Config.LOG_FILE), logging.StreamHandler(sys.stdout)])
    seed = Config.seed() if args.seed is None else args.seed
    names = [n for n in EXPERIMENTS if n != 'yeast'] if not args.names or 'all' in args.names else args.names

    results = {}
    for name in names:
        print(f"\n=== {name} ===")
        try:
            results[name] = EXPERIMENTS[name](seed, args.scale)
        except Exception as e:
            logger.error(f"Experiment {name} failed: {e}")
            results[name] = False

    print("\n" + "=" * 40)
    for name, ok in results.items():
        print(f"{'✓' if ok else '❌'} {name}")
    return 0 if all(results.values()) else 1


if __name__ == "__main__":
    sys.exit(main())
