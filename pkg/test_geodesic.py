#!/usr/bin/env python3
"""
Tests for geodesics, their classification and the Fréchet mean
"""

import math
import os
import subprocess
import sys

import pytest

import streams
from geodesic import classify, distance, evaluate, frechet_mean, geodesic, nearest_high_codim_point
from kernels import SPIDER4_AXES
from treespace import Split, TaxonSet, Tree, parse_newick, random_tree

TAXA4 = TaxonSet.numbered(4)
TAXA5 = TaxonSet.numbered(5)


def tree5(lengths):
    """Tree over taxa 1..5 from {'12': length, ...}."""
    return Tree(TAXA5, {Split.from_labels(TAXA5, list(side)).mask: v for side, v in lengths.items()})


def cone_pair5():
    return tree5({'12': 1.0, '45': 1.0}), tree5({'14': 1.0, '25': 1.0})


def test_same_orthant_distance():
    g = geodesic(tree5({'12': 1.0, '45': 2.0}), tree5({'12': 4.0, '45': 6.0}))
    assert g.length == pytest.approx(5.0)
    assert classify(g).crossings == ()
    assert classify(g).is_simple and classify(g).nu == 0


def test_identical_trees():
    x = tree5({'12': 1.0, '45': 2.0})
    g = geodesic(x, x)
    assert g.length == 0.0
    assert g.support == ()


def test_two_orthant_unfolding():
    x1 = tree5({'12': 1.0, '45': 0.6})
    x2 = tree5({'12': 2.0, '34': 0.8})
    g = geodesic(x1, x2)
    assert g.length == pytest.approx(math.sqrt(1.0 ** 2 + (0.6 + 0.8) ** 2))
    c = g.classification
    assert len(c.crossings) == 1 and c.crossings[0][1] == 1
    assert c.nu == 1 and c.is_simple


def test_evaluate_endpoints_and_midpoint():
    x1, x2 = tree5({'12': 1.0, '45': 2.0}), tree5({'12': 3.0, '45': 4.0})
    g = geodesic(x1, x2)
    assert evaluate(g, 0.0) == x1
    assert evaluate(g, 1.0) == x2
    mid = evaluate(g, 0.5)
    assert mid.lengths == pytest.approx({k: (x1.lengths[k] + x2.lengths[k]) / 2 for k in x1.lengths})
    with pytest.raises(ValueError):
        evaluate(g, 1.5)


def test_bhv4_cone_path_reaches_origin():
    x1 = Tree(TAXA4, {SPIDER4_AXES[0]: 3.0})
    x2 = Tree(TAXA4, {SPIDER4_AXES[1]: 4.0})
    g = geodesic(x1, x2)
    assert g.length == pytest.approx(7.0)
    assert evaluate(g, 3 / 7).lengths == {}
    c = g.classification
    assert [k for _, k in c.crossings] == [1]
    assert c.crossings[0][0] == pytest.approx(3 / 7)
    assert c.is_simple and c.nu == 1


def test_bhv5_cone_path_not_simple():
    x1, x2 = cone_pair5()
    g = geodesic(x1, x2)
    c = g.classification
    assert g.length == pytest.approx(2 * math.sqrt(2))
    assert c.is_cone_path
    assert [k for _, k in c.crossings] == [2]
    assert not c.is_simple
    assert c.penalty == 2


def test_nearest_high_codim_point():
    x1, x2 = cone_pair5()
    g = geodesic(x1, x2)
    t, point = nearest_high_codim_point(g, 1.0)
    assert t == pytest.approx(0.5)
    assert point.lengths == {}
    assert nearest_high_codim_point(g, 0.4) is None
    simple = geodesic(tree5({'12': 1.0, '45': 2.0}), tree5({'12': 4.0, '45': 6.0}))
    assert nearest_high_codim_point(simple, 1.0) is None


def near_tie_pair():
    """N=7 pair whose vertex-cover weight is close to one."""
    taxa = TaxonSet.numbered(7)
    y = Tree(taxa, {44: 1.5050376396316996, 66: 0.5636970217634556,
                    110: 0.8579201041041317, 40: 0.7404234434986596})
    x = Tree(taxa, {46: 1.1912065370853906, 14: 2.9259141298750246,
                    6: 0.2554878498815241, 80: 0.666025171870031})
    return y, x


def check_metric_pair(x1, x2):
    g = geodesic(x1, x2)
    d = g.length
    assert distance(x2, x1) == pytest.approx(d, rel=1e-9, abs=1e-12)
    assert abs(x1.norm() - x2.norm()) - 1e-9 <= d <= x1.norm() + x2.norm() + 1e-9
    assert all(p.dropped and p.gained for p in g.support)
    for t in (0.25, 0.5, 0.8):
        point = evaluate(g, t)
        assert distance(x1, point) == pytest.approx(t * d, rel=1e-6, abs=1e-9)
        assert distance(point, x2) == pytest.approx((1 - t) * d, rel=1e-6, abs=1e-9)


def test_near_tie_pair():
    y, x = near_tie_pair()
    assert distance(y, x) == pytest.approx(5.16666, abs=1e-4)
    check_metric_pair(y, x)
    check_metric_pair(x, y)


def test_distance_does_not_depend_on_hash_seed():
    code = ("from geodesic import distance; from treespace import TaxonSet, Tree; "
            "t = TaxonSet.numbered(7); "
            "y = Tree(t, {44: 1.5050376396316996, 66: 0.5636970217634556, "
            "110: 0.8579201041041317, 40: 0.7404234434986596}); "
            "x = Tree(t, {46: 1.1912065370853906, 14: 2.9259141298750246, "
            "6: 0.2554878498815241, 80: 0.666025171870031}); "
            "print(repr(distance(y, x)), repr(distance(x, y)))")
    here = os.path.dirname(os.path.abspath(__file__))
    outputs = set()
    for seed in ('0', '1', '4', '5'):
        env = dict(os.environ, PYTHONHASHSEED=seed)
        result = subprocess.run([sys.executable, '-c', code], cwd=here, env=env,
                                capture_output=True, text=True, timeout=60)
        assert result.returncode == 0, result.stderr
        outputs.add(result.stdout.strip())
    assert len(outputs) == 1


@pytest.mark.parametrize("n", [5, 6, 7, 8])
def test_metric_properties_on_random_pairs(n):
    rng = streams.root_stream(100 + n)
    taxa = TaxonSet.numbered(n)
    for _ in range(100):
        check_metric_pair(random_tree(taxa, rng), random_tree(taxa, rng))


@pytest.mark.parametrize("n", [5, 6, 7, 8])
def test_triangle_inequality(n):
    rng = streams.root_stream(200 + n)
    taxa = TaxonSet.numbered(n)
    for _ in range(100):
        x, y, z = (random_tree(taxa, rng) for _ in range(3))
        assert distance(x, z) <= distance(x, y) + distance(y, z) + 1e-9


def test_distance_to_star_is_norm():
    x = parse_newick("((1:0.1,2:0.1):0.3,3:0.1,(4:0.1,5:0.1):0.4);", TAXA5)
    assert distance(Tree.star(TAXA5), x) == pytest.approx(0.5)


def test_frechet_mean_of_repeated_tree():
    x = tree5({'12': 1.0, '45': 2.0})
    mean, variance = frechet_mean([x, x], 50, streams.root_stream(1))
    assert mean == x
    assert variance == 0.0


def test_frechet_mean_two_points_is_midpoint():
    x1, x2 = tree5({'12': 1.0, '45': 0.6}), tree5({'12': 2.0, '34': 0.8})
    mean, _ = frechet_mean([x1, x2], 2001, streams.root_stream(2))
    assert distance(mean, evaluate(geodesic(x1, x2), 0.5)) < 1e-3


def test_frechet_mean_sticks_to_origin():
    data = [Tree(TAXA4, {mask: 1.0}) for mask in SPIDER4_AXES]
    mean, variance = frechet_mean(data, 3000, streams.root_stream(4))
    assert mean.norm() < 0.01
    assert variance == pytest.approx(1.0, abs=0.02)


def test_frechet_mean_exact_after_whole_sweeps():
    data = [tree5({'12': 1.0 + 0.1 * i, '45': 2.0 - 0.2 * i}) for i in range(4)]
    # 11 steps plus the starting datum make three whole sweeps of four data
    mean, variance = frechet_mean(data, 11, streams.root_stream(6))
    for mask in data[0].lengths:
        assert mean.length(mask) == pytest.approx(sum(x.length(mask) for x in data) / 4, rel=1e-12)
    assert variance == pytest.approx(sum(distance(mean, x) ** 2 for x in data) / 4)


def test_frechet_mean_rejects_empty():
    with pytest.raises(ValueError):
        frechet_mean([], 10, streams.root_stream(0))


def main():
    """Run all tests"""
    tests = [(name, fn) for name, fn in globals().items()
             if name.startswith('test_') and callable(fn) and not hasattr(fn, 'pytestmark')]
    passed = 0
    for name, fn in tests:
        try:
            fn()
            print(f"✓ {name}")
            passed += 1
        except Exception as e:
            print(f"❌ {name}: {e}")
    print(f"\n{passed}/{len(tests)} tests passed (parametrized tests run under pytest)")
    return passed == len(tests)


if __name__ == "__main__":
    main()
