#!/usr/bin/env python3
"""
BHV Brownian Tool
Brownian-motion kernels, bridges, inference and marginal likelihoods on
phylogenetic tree space.
"""

import argparse
import logging
import os
import sys

import numpy as np

import streams
from bridge import BridgeInitializationError, ProposalTuning, sample_bridges, topology_counts_per_step
from config import Config, ConfigError, RunConfig
from dataset import load_dataset, summarize
from evidence import (METHODS, EstimatorFailure, EvidenceConfig, estimate_dataset,
                      repeat_estimate)
from geodesic import distance, frechet_mean, geodesic
from kernels import (SPIDER4_AXES, WalkParams, diagnostics, random_walk, spider4_density,
                     spider4_ks_distance)
from outputs import WALK_STEP_COLUMNS, RunWriter
from posterior import (InferenceConfig, Prior, UnresolvedDataError, cumulative_topology_proportions,
                       distinct_topology_counts, posterior_predictive, run_inference, select_m,
                       summarize_trace)
from treespace import NewickParseError, TaxonMismatchError, TaxonSet, Tree, load_taxa, parse_newick

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_PARSE = 4
EXIT_CONFIG = 5
EXIT_FAILURE = 6

EPILOG = """
exit codes:
  0  success
  1  unexpected error
  2  usage error
  3  I/O error (missing or unreadable file)
  4  parse error (Newick, taxa, unresolved data)
  5  configuration error
  6  estimator or sampler failure

examples:
  python main.py geodesic --n 5 "((1:1,2:1):3,(3:1,4:1):4,5:1);" "((1:1,2:1):1,(3:1,4:1):1,5:1);"
  python main.py summarize --data trees.nwk --taxa taxa.txt
  python main.py infer --config infer.cfg
  python main.py marginal --method chib --data trees.nwk --taxa taxa.txt --x0 x0.nwk --t0 0.1 --m 50
"""


def setup_logging():
    logging.basicConfig(
        level=getattr(logging, Config.LOG_LEVEL, logging.INFO),
        format='%(asctime)s - %(levelname)s - %(message)s',
        handlers=[
            logging.FileHandler(Config.LOG_FILE),
            logging.StreamHandler(sys.stdout)
        ]
    )


def exit_code_for(error):
    """Map an exception to the documented exit code."""
    if isinstance(error, (EstimatorFailure, BridgeInitializationError)):
        return EXIT_FAILURE
    if isinstance(error, ConfigError):
        return EXIT_CONFIG
    if isinstance(error, (NewickParseError, TaxonMismatchError, UnresolvedDataError)):
        return EXIT_PARSE
    if isinstance(error, OSError):
        return EXIT_IO
    if isinstance(error, ValueError):
        return EXIT_CONFIG
    return EXIT_ERROR


# ---------------------------------------------------------------- input helpers

def resolve_taxa(args):
    if getattr(args, 'taxa', None):
        return load_taxa(args.taxa)
    if getattr(args, 'n', None):
        return TaxonSet.numbered(args.n)
    raise ConfigError("Either --taxa or --n is required")


def read_tree(value, taxa):
    """Parse a Newick string, or the first tree of a file when ``value`` is a path."""
    if os.path.isfile(value):
        with open(value, 'r', encoding='utf-8') as f:
            lines = [line.strip() for line in f if line.strip()]
        if not lines:
            raise NewickParseError(f"No tree in {value}")
        value = lines[0]
    return parse_newick(value, taxa)


def seed_of(args):
    return Config.seed() if args.seed is None else args.seed


def writer_for(args, name):
    return RunWriter(args.output_dir or Config.OUTPUT_DIR, args.run_name or name)


def geodesic_report(g):
    c = g.classification
    return {
        'distance': g.length,
        'simple': c.is_simple,
        'common_splits': len(g.common),
        'support_pairs': len(g.support),
        'crossings': [[t, kappa] for t, kappa in c.crossings],
        'max_codimension': max((kappa for _, kappa in c.crossings), default=0),
        'nu': c.nu,
        'penalty': c.penalty,
        'cone_path': c.is_cone_path,
    }


# ---------------------------------------------------------------- commands

def cmd_geodesic(args):
    taxa = resolve_taxa(args)
    x1, x2 = read_tree(args.x1, taxa), read_tree(args.x2, taxa)
    report = geodesic_report(geodesic(x1, x2))
    if args.output_dir or args.run_name:
        writer_for(args, 'geodesic').write_json('geodesic.json', report)
    print(f"distance = {report['distance']:.10g}, simple = {report['simple']}")
    return report


def cmd_frechet(args):
    taxa = resolve_taxa(args)
    data = load_dataset(args.data, taxa)
    iterations = args.iterations or Config.frechet_iterations()
    mean, variance = frechet_mean(data, iterations, streams.root_stream(seed_of(args)))
    writer = writer_for(args, 'frechet')
    writer.write_newick('frechet_mean.nwk', [mean])
    writer.write_json('frechet.json', {'variance': variance, 'iterations': iterations,
                                       'codimension': mean.codimension,
                                       'topology': mean.topology.key})
    print(f"Fréchet variance = {variance:.6g}, codimension = {mean.codimension}")
    return mean, variance


def cmd_simulate_walk(args):
    taxa = resolve_taxa(args)
    source = read_tree(args.source, taxa)
    rc = RunConfig.from_overrides('simulate-walk', {'m': args.m, 'walks': args.walks,
                                                    'seed': args.seed, 'output_dir': args.output_dir})
    rng = streams.root_stream(rc['seed'])
    writer = RunWriter(rc['output_dir'], args.run_name or 'simulate-walk')
    writer.write_config(rc)

    if args.t0_grid:
        t0_values = [float(v) for v in args.t0_grid.split(',')]
        counts = distinct_topology_counts(source, t0_values, [rc['m']], rc['walks'], rng)
        rows = [[t0, rc['m'], counts[(t0, rc['m'])]] for t0 in t0_values]
        writer.write_rows('distinct_topologies.csv', ['t0', 'm', 'distinct_topologies'], rows)
        print('\n'.join(f"t0 = {t0:g}: {c} distinct topologies" for t0, _, c in rows))
        return rows

    params = WalkParams(source, args.t0, rc['m'])
    endpoints, rows = [], []
    for w, stream in enumerate(streams.split(rng, rc['walks']), start=1):
        endpoint, path = random_walk(params, stream)
        endpoints.append(endpoint)
        rows.extend([w, j, y.topology.key, repr(distance(source, y))] for j, y in enumerate(path))
    writer.write_newick('endpoints.nwk', endpoints)
    writer.write_rows('walk_steps.csv', WALK_STEP_COLUMNS, rows)
    result = {'walks': len(endpoints),
              'distinct_topologies': len({y.topology for y in endpoints}),
              'degenerate_firings': diagnostics['degenerate_firings']}
    writer.write_json('walk.json', result)
    print(f"{result['walks']} walks, {result['distinct_topologies']} distinct endpoint topologies")
    return endpoints


def cmd_sample_bridge(args):
    taxa = resolve_taxa(args)
    x0, x_star = read_tree(args.x0, taxa), read_tree(args.x_star, taxa)
    overrides = {'m': args.m, 'iters': args.iters, 'burnin': args.burnin, 'thin': args.thin,
                 'alpha_b': args.alpha_b, 'seed': args.seed, 'output_dir': args.output_dir}
    if args.config:
        rc = RunConfig.from_file('sample-bridge', args.config, overrides)
    else:
        rc = RunConfig.from_overrides('sample-bridge', overrides)
    writer = RunWriter(rc['output_dir'], args.run_name or 'sample-bridge')
    writer.write_config(rc)

    with writer.open_bridge_trace() as iteration_writer:
        bridges = sample_bridges(x0, x_star, args.t0, rc['m'], ProposalTuning(alpha_b=rc['alpha_b']),
                                 rc['iters'], rc['burnin'], rc['thin'], streams.root_stream(rc['seed']),
                                 on_iteration=iteration_writer)
    writer.write_bridges('bridges.nwk', bridges)
    per_step = topology_counts_per_step(bridges)
    writer.write_rows('topologies_per_step.csv', ['step', 'distinct_topologies'],
                      [[j, c] for j, c in enumerate(per_step, start=1)])
    print(f"{len(bridges)} bridges retained")
    return bridges


def cmd_infer(args):
    rc = RunConfig.from_file('infer', args.config, {'seed': args.seed, 'output_dir': args.output_dir})
    taxa = load_taxa(rc['taxa_path'])
    data = load_dataset(rc['data_path'], taxa)
    fixed = parse_newick(rc['fixed_x0'], taxa) if rc['fixed_x0'] else None
    config = InferenceConfig(
        m=rc['m'], iters=rc['iters'], burnin=rc['burnin'], thin=rc['thin'],
        alpha_b=rc['alpha_b'], alpha_0=rc['alpha_0'], lambda0=rc['lambda0'], sigma0=rc['sigma0'],
        seed=rc['seed'], frechet_iterations=rc.get('frechet_iterations', Config.frechet_iterations()),
        init_cap=Config.init_cap(), fixed_x0=fixed,
    )
    prior = Prior.for_taxa(taxa.size, rounded=rc['rounded_prior'])

    writer = RunWriter(rc['output_dir'], args.run_name or 'infer')
    writer.write_config(rc)
    with writer.open_trace() as trace_writer:
        trace = run_inference(data, prior, config, streams.root_stream(rc['seed']), on_sample=trace_writer)

    summary = summarize_trace(trace)
    writer.write_json('summary.json', summary)
    writer.write_newick('x0_samples.nwk', trace.x0)
    proportions = cumulative_topology_proportions(trace.x0)
    keys = sorted(proportions)
    writer.write_rows('topology_proportions.csv', ['sample'] + keys,
                      [[i + 1] + [proportions[k][i] for k in keys] for i in range(len(trace))])
    if 'modal_tree' in summary:
        print(f"Posterior modal tree: {summary['modal_tree']}")
        print(f"t0 mode {summary['t0_mode']:.5g}, 95% interval {summary['t0_interval']}")
    return trace


def cmd_marginal(args):
    overrides = {'data_path': args.data, 'taxa_path': args.taxa, 'seed': args.seed,
                 'output_dir': args.output_dir}
    if args.config:
        rc = RunConfig.from_file('marginal', args.config, overrides)
    else:
        rc = RunConfig.from_overrides('marginal', overrides)
    if not rc['data_path'] or not (rc['taxa_path'] or args.n):
        raise ConfigError("marginal needs data_path and taxa_path")
    taxa = load_taxa(rc['taxa_path']) if rc['taxa_path'] else TaxonSet.numbered(args.n)
    data = load_dataset(rc['data_path'], taxa)
    x0 = read_tree(args.x0, taxa) if args.x0 else Tree.star(taxa)
    if args.method != 'star-exact' and not x0.is_resolved:
        raise ConfigError(f"--x0 must be fully resolved for '{args.method}'")
    config = EvidenceConfig(M1=rc['M1'], M2=rc['M2'], h=rc['h'], K=rc['K'], burnin=rc['burnin'],
                            thin=rc['thin'], alpha_b=rc['alpha_b'], bootstrap=rc['bootstrap'])
    rng = streams.root_stream(rc['seed'])

    writer = RunWriter(rc['output_dir'], args.run_name or f"marginal-{args.method}")
    writer.write_config(rc)
    if rc['repeats'] > 1:
        estimate = repeat_estimate(args.method, data, x0, args.t0, args.m, config, rng,
                                   rc['repeats'], rc['workers'])
        result = {'method': args.method, 'log_ml': estimate.log_ml, 'replicates': estimate.replicates}
    else:
        out = estimate_dataset(args.method, data, x0, args.t0, args.m, config, rng, rc['workers'])
        result = {'method': args.method, 'log_ml': out['total'], 'se': out['se'],
                  'per_datum': [{'log_ml': e.log_ml, 'se': e.se} for e in out['per_datum']]}
    writer.write_json('marginal.json', result)
    print(f"{args.method}: log marginal likelihood = {result['log_ml']:.4f}")
    return result


def cmd_exact4(args):
    taxa = resolve_taxa(args)
    if taxa.size != 4:
        raise ConfigError(f"exact4 needs 4 taxa, got {taxa.size}")
    x0 = read_tree(args.x0, taxa)
    grid = np.linspace(0.0, args.max, args.points)
    rows = []
    for mask in SPIDER4_AXES:
        for b in grid:
            y = Tree(taxa, {mask: b}, check=False)
            rows.append([' '.join(taxa.members(mask)), b, spider4_density(y, x0, args.t0)])
    writer = writer_for(args, 'exact4')
    writer.write_rows('spider_density.csv', ['axis', 'position', 'density'], rows)

    result = {'t0': args.t0}
    if args.walks:
        if not x0.is_resolved:
            raise ConfigError("Simulated walks start from a tree on one axis, not the origin")
        rng = streams.root_stream(seed_of(args))
        params = WalkParams(x0, args.t0, args.m)
        endpoints = [random_walk(params, s)[0] for s in streams.split(rng, args.walks)]
        result.update({'walks': args.walks, 'm': args.m,
                       'ks_distance': spider4_ks_distance(endpoints, x0, args.t0)})
        print(f"KS distance to the exact kernel: {result['ks_distance']:.4f}")
    writer.write_json('exact4.json', result)
    return result


def cmd_summarize(args):
    taxa = resolve_taxa(args)
    summary = summarize(load_dataset(args.data, taxa)).as_dict()
    if args.output_dir or args.run_name:
        writer_for(args, 'summarize').write_json('summary.json', summary)
    for key, value in summary.items():
        print(f"{key}: {value}")
    return summary


def cmd_select_m(args):
    taxa = resolve_taxa(args)
    x0 = read_tree(args.x0, taxa)
    m_values = [int(v) for v in args.m_values.split(',')]
    counts = select_m(x0, args.t0, streams.root_stream(seed_of(args)), m_values, args.walks)
    writer = writer_for(args, 'select-m')
    writer.write_rows('select_m.csv', ['m', 'distinct_topologies'], sorted(counts.items()))
    for m, c in sorted(counts.items()):
        print(f"m = {m}: {c} distinct topologies")
    return counts


def cmd_predictive(args):
    taxa = resolve_taxa(args)
    x0 = read_tree(args.x0, taxa)
    data = load_dataset(args.data, taxa)
    result = posterior_predictive(x0, args.t0, args.m, data, args.n_sim,
                                  streams.root_stream(seed_of(args)))
    writer = writer_for(args, 'predictive')
    rows = [['data', d] for d in result['data_distances']]
    rows += [['simulated', d] for d in result['simulated_distances']]
    writer.write_rows('predictive_distances.csv', ['source', 'distance'], rows)
    print(f"mean distance: data {np.mean(result['data_distances']):.4g}, "
          f"simulated {np.mean(result['simulated_distances']):.4g}")
    return result


COMMANDS = {
    'geodesic': cmd_geodesic,
    'frechet': cmd_frechet,
    'simulate-walk': cmd_simulate_walk,
    'sample-bridge': cmd_sample_bridge,
    'infer': cmd_infer,
    'marginal': cmd_marginal,
    'exact4': cmd_exact4,
    'summarize': cmd_summarize,
    'select-m': cmd_select_m,
    'predictive': cmd_predictive,
}


def build_parser():
    parser = argparse.ArgumentParser(
        description="Brownian motion on BHV tree space",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog=EPILOG,
    )
    sub = parser.add_subparsers(dest='command', required=True)

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument('--taxa', help='taxon file, one label per line')
        p.add_argument('--n', type=int, help='use taxa labelled 1..N instead of --taxa')
        p.add_argument('--seed', type=int, help='root seed (default: BHV_SEED)')
        p.add_argument('--output-dir', help='output directory (default: BHV_OUTPUT_DIR)')
        p.add_argument('--run-name', help='run subdirectory name (default: the command)')
        return p

    p = add('geodesic', 'geodesic distance and classification of two trees')
    p.add_argument('x1', help='Newick string or file')
    p.add_argument('x2', help='Newick string or file')

    p = add('frechet', 'Fréchet mean of a data set')
    p.add_argument('--data', required=True)
    p.add_argument('--iterations', type=int)

    p = add('simulate-walk', 'forward-simulate m-step random walks')
    p.add_argument('--source', required=True, help='resolved source tree')
    p.add_argument('--t0', type=float, default=0.1)
    p.add_argument('--m', type=int)
    p.add_argument('--walks', type=int)
    p.add_argument('--t0-grid', help='comma-separated t0 values; report distinct topologies per t0')

    p = add('sample-bridge', 'sample random-walk bridges between two trees')
    p.add_argument('--x0', required=True)
    p.add_argument('--x-star', required=True)
    p.add_argument('--t0', type=float, required=True)
    p.add_argument('--m', type=int)
    p.add_argument('--iters', type=int)
    p.add_argument('--burnin', type=int)
    p.add_argument('--thin', type=int)
    p.add_argument('--alpha-b', type=float)
    p.add_argument('--config')

    p = add('infer', 'posterior sampling of the source tree and dispersion')
    p.add_argument('--config', required=True, help='key = value run configuration')

    p = add('marginal', 'marginal likelihood of the data under a fixed source')
    p.add_argument('--method', choices=METHODS, required=True)
    p.add_argument('--data')
    p.add_argument('--x0', help='source tree (default: star tree)')
    p.add_argument('--t0', type=float, required=True)
    p.add_argument('--m', type=int, default=50)
    p.add_argument('--config')

    p = add('exact4', 'exact N=4 spider kernel, optionally checked against simulation')
    p.add_argument('--x0', required=True)
    p.add_argument('--t0', type=float, required=True)
    p.add_argument('--max', type=float, default=3.0)
    p.add_argument('--points', type=int, default=301)
    p.add_argument('--walks', type=int, default=0)
    p.add_argument('--m', type=int, default=100)

    p = add('summarize', 'split and topology counts of a data set')
    p.add_argument('--data', required=True)

    p = add('select-m', 'distinct endpoint topologies per number of steps')
    p.add_argument('--x0', required=True)
    p.add_argument('--t0', type=float, required=True)
    p.add_argument('--m-values', default='25,50,100,200')
    p.add_argument('--walks', type=int, default=1000)

    p = add('predictive', 'posterior predictive distances')
    p.add_argument('--x0', required=True)
    p.add_argument('--t0', type=float, required=True)
    p.add_argument('--m', type=int, default=50)
    p.add_argument('--data', required=True)
    p.add_argument('--n-sim', type=int, default=1000)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        Config.validate()
        COMMANDS[args.command](args)
    except Exception as e:
        code = exit_code_for(e)
        logger.error(f"{args.command} failed ({type(e).__name__}): {e}")
        if code == EXIT_ERROR:
            logger.exception(e)
        return code
    return EXIT_OK


if __name__ == "__main__":
    setup_logging()
    sys.exit(main())
