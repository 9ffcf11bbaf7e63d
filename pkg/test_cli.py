#!/usr/bin/env python3
"""
Tests for the command-line entry point and its exit codes
"""

import csv
import json
import math
import os
import tempfile

import pytest

import main as cli
from bridge import BridgeInitializationError
from config import ConfigError
from evidence import EstimatorFailure, star_exact_log_ml
from posterior import UnresolvedDataError
from treespace import NewickParseError, TaxonMismatchError, TaxonSet, parse_newick

X1 = "((1:1,2:1):1,3:1,(4:1,5:1):2);"
X2 = "((1:1,2:1):4,3:1,(4:1,5:1):6);"
DATA = [
    "((1:0.1,2:0.1):0.5,3:0.1,(4:0.1,5:0.1):0.4);",
    "((1:0.1,2:0.1):0.6,3:0.1,(4:0.1,5:0.1):0.3);",
    "((1:0.1,2:0.1):0.4,5:0.1,(3:0.1,4:0.1):0.2);",
]


def write(directory, name, text):
    path = os.path.join(directory, name)
    with open(path, 'w', encoding='utf-8') as f:
        f.write(text)
    return path


def inference_inputs(directory):
    taxa = write(directory, 'taxa.txt', '\n'.join('12345') + '\n')
    data = write(directory, 'data.nwk', '\n'.join(DATA) + '\n')
    return write(directory, 'infer.cfg',
                 f"data_path = {data}\ntaxa_path = {taxa}\nm = 3\niters = 20\nburnin = 0\n"
                 f"thin = 2\nfrechet_iterations = 30\nseed = 11\noutput_dir = {directory}\n")


def test_exit_code_mapping():
    assert cli.exit_code_for(EstimatorFailure('x')) == cli.EXIT_FAILURE
    assert cli.exit_code_for(BridgeInitializationError('x')) == cli.EXIT_FAILURE
    assert cli.exit_code_for(ConfigError('x')) == cli.EXIT_CONFIG
    assert cli.exit_code_for(ValueError('x')) == cli.EXIT_CONFIG
    assert cli.exit_code_for(NewickParseError('x')) == cli.EXIT_PARSE
    assert cli.exit_code_for(TaxonMismatchError('x')) == cli.EXIT_PARSE
    assert cli.exit_code_for(UnresolvedDataError('x')) == cli.EXIT_PARSE
    assert cli.exit_code_for(FileNotFoundError('x')) == cli.EXIT_IO
    assert cli.exit_code_for(RuntimeError('x')) == cli.EXIT_ERROR


def test_geodesic_command():
    with tempfile.TemporaryDirectory() as d:
        assert cli.main(['geodesic', '--n', '5', '--output-dir', d, X1, X2]) == cli.EXIT_OK
        with open(os.path.join(d, 'geodesic', 'geodesic.json'), encoding='utf-8') as f:
            report = json.load(f)
    assert report['distance'] == pytest.approx(5.0)
    assert report['simple'] is True and report['nu'] == 0


def test_geodesic_prints_distance(capsys):
    assert cli.main(['geodesic', '--n', '5', X1, X2]) == cli.EXIT_OK
    assert 'distance = 5' in capsys.readouterr().out


def test_bad_newick_exit_code():
    assert cli.main(['geodesic', '--n', '5', "((1:1,2:1):1,3:1", X2]) == cli.EXIT_PARSE


def test_missing_taxa_exit_code():
    assert cli.main(['geodesic', X1, X2]) == cli.EXIT_CONFIG


def test_missing_file_exit_code():
    assert cli.main(['summarize', '--n', '5', '--data', '/nonexistent/data.nwk']) == cli.EXIT_IO


def test_usage_error():
    with pytest.raises(SystemExit) as excinfo:
        cli.main(['marginal', '--n', '5'])
    assert excinfo.value.code == cli.EXIT_USAGE


def test_bad_config_exit_code():
    with tempfile.TemporaryDirectory() as d:
        config = write(d, 'bad.cfg', "data_path = d.nwk\ntaxa_path = t.txt\nchains = 4\n")
        assert cli.main(['infer', '--config', config]) == cli.EXIT_CONFIG


def test_summarize_writes_summary():
    with tempfile.TemporaryDirectory() as d:
        data = write(d, 'data.nwk', '\n'.join(DATA) + '\n')
        assert cli.main(['summarize', '--n', '5', '--data', data, '--output-dir', d]) == cli.EXIT_OK
        with open(os.path.join(d, 'summarize', 'summary.json'), encoding='utf-8') as f:
            summary = json.load(f)
    assert summary['n'] == 3
    assert summary['distinct_topologies'] == 2
    assert summary['modal_count'] == 2


def test_infer_is_reproducible():
    with tempfile.TemporaryDirectory() as d:
        config = inference_inputs(d)
        assert cli.main(['infer', '--config', config, '--run-name', 'a']) == cli.EXIT_OK
        assert cli.main(['infer', '--config', config, '--run-name', 'b']) == cli.EXIT_OK
        contents = []
        for run in ('a', 'b'):
            with open(os.path.join(d, run, 'trace.csv'), 'rb') as f:
                contents.append(f.read())
        for name in ('config.snapshot', 'summary.json', 'x0_samples.nwk', 'topology_proportions.csv'):
            assert os.path.exists(os.path.join(d, 'a', name))
    assert contents[0] == contents[1]
    lines = contents[0].decode().splitlines()
    assert lines[0] == 'iter,t0,log_joint,bridges_accepted,x0_accepted,t0_accepted,x0_topology,x0_newick'
    assert len(lines) == 11
    accepted = [int(line.split(',')[5]) for line in lines[1:]]
    assert accepted == sorted(accepted) and accepted[-1] <= 20


def test_simulate_walk_writes_steps():
    with tempfile.TemporaryDirectory() as d:
        args = ['simulate-walk', '--n', '5', '--source', DATA[0], '--t0', '0.05', '--m', '4',
                '--walks', '3', '--output-dir', d]
        assert cli.main(args) == cli.EXIT_OK
        with open(os.path.join(d, 'simulate-walk', 'walk_steps.csv'), encoding='utf-8') as f:
            rows = list(csv.reader(f))
        with open(os.path.join(d, 'simulate-walk', 'endpoints.nwk'), encoding='utf-8') as f:
            endpoints = f.read().splitlines()
    assert rows[0] == ['walk', 'step', 'topology', 'distance_to_source']
    assert len(rows) == 1 + 3 * 5
    assert len(endpoints) == 3
    starts = [r for r in rows[1:] if r[1] == '0']
    assert len(starts) == 3 and all(float(r[3]) == 0.0 for r in starts)
    source = parse_newick(DATA[0], TaxonSet.numbered(5))
    assert all(r[2] == source.topology.key for r in starts)


def test_sample_bridge_writes_iterations():
    with tempfile.TemporaryDirectory() as d:
        args = ['sample-bridge', '--n', '5', '--x0', DATA[0], '--x-star', DATA[2], '--t0', '0.1',
                '--m', '4', '--iters', '30', '--burnin', '10', '--thin', '5', '--output-dir', d]
        assert cli.main(args) == cli.EXIT_OK
        with open(os.path.join(d, 'sample-bridge', 'iterations.csv'), encoding='utf-8') as f:
            rows = list(csv.reader(f))
        with open(os.path.join(d, 'sample-bridge', 'bridges.nwk'), encoding='utf-8') as f:
            blocks = f.read().strip().split('\n\n')
    assert rows[0] == ['iter', 'accepted', 'log_target']
    assert [int(r[0]) for r in rows[1:]] == list(range(1, 31))
    assert {r[1] for r in rows[1:]} <= {'0', '1'}
    assert all(math.isfinite(float(r[2])) for r in rows[1:])
    assert len(blocks) == 4


def test_marginal_star_exact():
    with tempfile.TemporaryDirectory() as d:
        data = write(d, 'data.nwk', '\n'.join(DATA) + '\n')
        args = ['marginal', '--method', 'star-exact', '--n', '5', '--data', data, '--t0', '0.2',
                '--output-dir', d]
        assert cli.main(args) == cli.EXIT_OK
        with open(os.path.join(d, 'marginal-star-exact', 'marginal.json'), encoding='utf-8') as f:
            result = json.load(f)
    taxa = TaxonSet.numbered(5)
    expected = star_exact_log_ml([parse_newick(t, taxa) for t in DATA], 0.2)
    assert result['log_ml'] == pytest.approx(expected)
    assert len(result['per_datum']) == 3


def test_marginal_needs_resolved_source():
    with tempfile.TemporaryDirectory() as d:
        data = write(d, 'data.nwk', '\n'.join(DATA) + '\n')
        args = ['marginal', '--method', 'chib', '--n', '5', '--data', data, '--t0', '0.2',
                '--output-dir', d]
        assert cli.main(args) == cli.EXIT_CONFIG


def test_exact4_writes_density():
    with tempfile.TemporaryDirectory() as d:
        args = ['exact4', '--n', '4', '--x0', "((1:1,2:1):0.5,3:1,4:1);", '--t0', '0.25',
                '--points', '11', '--output-dir', d]
        assert cli.main(args) == cli.EXIT_OK
        with open(os.path.join(d, 'exact4', 'spider_density.csv'), encoding='utf-8') as f:
            lines = f.read().splitlines()
    assert lines[0] == 'axis,position,density'
    assert len(lines) == 1 + 3 * 11


def test_exact4_rejects_other_sizes():
    assert cli.main(['exact4', '--n', '5', '--x0', X1, '--t0', '0.25']) == cli.EXIT_CONFIG


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
