#!/usr/bin/env python3
"""
Tests for environment settings and per-command run configuration
"""

import os
import tempfile

import pytest

from config import Config, ConfigError, RunConfig


def write_config(directory, text):
    path = os.path.join(directory, 'run.cfg')
    with open(path, 'w', encoding='utf-8') as f:
        f.write(text)
    return path


def test_defaults_and_types():
    rc = RunConfig.from_overrides('infer', {'data_path': 'd.nwk', 'taxa_path': 't.txt', 'm': '25'})
    assert rc['m'] == 25
    assert rc['iters'] == 10000
    assert rc['alpha_b'] == 0.2
    assert rc['rounded_prior'] is False
    assert rc['seed'] == Config.seed()


def test_unknown_key_rejected():
    with pytest.raises(ConfigError):
        RunConfig.from_overrides('infer', {'data_path': 'd', 'taxa_path': 't', 'chains': 4})


def test_bad_type_rejected():
    with pytest.raises(ConfigError):
        RunConfig.from_overrides('infer', {'data_path': 'd', 'taxa_path': 't', 'm': 'fifty'})
    with pytest.raises(ConfigError):
        RunConfig.from_overrides('infer', {'data_path': 'd', 'taxa_path': 't', 'rounded_prior': 'maybe'})


def test_missing_required_key():
    with pytest.raises(ConfigError):
        RunConfig.from_overrides('infer', {'data_path': 'd.nwk'})


def test_unknown_command():
    with pytest.raises(ConfigError):
        RunConfig('plot', {})


def test_file_with_overrides():
    with tempfile.TemporaryDirectory() as d:
        path = write_config(d, "# inference run\ndata_path = d.nwk\ntaxa_path = t.txt\nm = 30\nthin = 5\n")
        rc = RunConfig.from_file('infer', path, {'m': '40', 'iters': None})
    assert rc['m'] == 40
    assert rc['thin'] == 5
    assert rc['iters'] == 10000


def test_snapshot_reparses_to_same_config():
    rc = RunConfig.from_overrides('infer', {'data_path': 'd.nwk', 'taxa_path': 't.txt', 'sigma0': '0.05',
                                            'rounded_prior': 'yes', 'seed': '7', 'output_dir': 'out'})
    with tempfile.TemporaryDirectory() as d:
        again = RunConfig.from_file('infer', write_config(d, rc.snapshot()))
    assert again == rc
    assert 'rounded_prior = true' in rc.snapshot()


def test_missing_file():
    with pytest.raises(FileNotFoundError):
        RunConfig.from_file('marginal', '/nonexistent/run.cfg')


def test_environment_validation(monkeypatch):
    assert Config.validate()
    monkeypatch.setattr(Config, 'WORKERS', '0')
    with pytest.raises(ConfigError):
        Config.validate()
    monkeypatch.setattr(Config, 'WORKERS', '2')
    monkeypatch.setattr(Config, 'LOG_LEVEL', 'LOUD')
    with pytest.raises(ConfigError):
        Config.validate()


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
