import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from hwnas.analysis import (
    BenchmarkRecord,
    correlate_proxy,
    dump_accuracy_csv,
    dump_correlation_csv,
    dump_spectrum_csv,
    flops_latency_spectrum,
    kendall_tau,
    load_accuracy_csv,
    parse_accuracy_csv,
    score_population,
    sweep_points,
)
from hwnas.hw_model import LatencyTable, latency_key, synthetic_table
from hwnas.proxies import ProxyConfig, flops_estimate
from hwnas.search_space import (
    ALL_OPS,
    CellGenotype,
    MacroSkeleton,
    OperatorKind,
    format_genotype,
    instantiate_network,
    random_genotype,
)

from conftest import NB201, TINY_SKELETON
from helpers import pairwise_tau

OP = OperatorKind


def test_tau_examples():
    assert kendall_tau([1, 2, 3, 4], [1, 2, 3, 4]) == 1.0
    assert kendall_tau([1, 2, 3, 4], [4, 3, 2, 1]) == -1.0
    assert math.isclose(kendall_tau([1, 2, 3, 4], [1, 3, 2, 4]), 4 / 6)


def test_tau_ties_count_as_neither():
    assert kendall_tau([1, 1, 2], [1, 2, 3]) == 2 / 3
    assert kendall_tau([1, 1, 1], [3, 2, 1]) == 0.0
    assert kendall_tau([math.inf, math.inf, 1.0], [1, 2, 3]) == -2 / 3


def test_tau_errors():
    with pytest.raises(ValueError):
        kendall_tau([1, 2], [1, 2, 3])
    with pytest.raises(ValueError):
        kendall_tau([1], [1])
    with pytest.raises(ValueError):
        kendall_tau([1, math.nan], [1, 2])


@given(st.lists(st.tuples(st.integers(-5, 5), st.floats(-1e3, 1e3, allow_nan=False)), min_size=2, max_size=60))
def test_tau_matches_pairwise_oracle(pairs):
    a, b = zip(*pairs)
    t = kendall_tau(a, b)
    assert t == pairwise_tau(a, b)
    assert -1.0 <= t <= 1.0
    assert kendall_tau(b, a) == t
    assert kendall_tau(a, a) == pairwise_tau(a, a)


def test_tau_chunking_large():
    rng = np.random.default_rng(0)
    a, b = rng.integers(0, 50, 500), rng.standard_normal(500)
    assert kendall_tau(a, b, chunk=37) == kendall_tau(a, b) == pairwise_tau(a, b)


def test_records_and_csv(tmp_path):
    g = format_genotype(random_genotype(NB201, ALL_OPS, np.random.default_rng(0)))
    recs = [BenchmarkRecord(g, {"cifar10": 91.5, "cifar100": 70.0})]
    p = tmp_path / "acc.csv"
    p.write_text(dump_accuracy_csv(recs))
    assert load_accuracy_csv(p) == recs
    with pytest.raises(ValueError):
        BenchmarkRecord(g, {"cifar10": 101.0})
    with pytest.raises(ValueError):
        BenchmarkRecord(g, {"": 50.0})
    with pytest.raises(ValueError):
        BenchmarkRecord("|bad~0|", {"x": 1.0})
    with pytest.raises(ValueError, match="header"):
        parse_accuracy_csv("a,b,c\n")
    with pytest.raises(ValueError, match="duplicate"):
        parse_accuracy_csv(f"genotype,dataset,accuracy\n{g},x,1\n{g},x,2\n")


def population(n, seed=0):
    rng = np.random.default_rng(seed)
    return [random_genotype(NB201, ALL_OPS, rng) for _ in range(n)]


def test_perfect_anti_ranking_of_k():
    cells = population(8)
    cfg = ProxyConfig(batch_size=6, lr_samples=8)
    points = sweep_points(cfg, None)[1]
    scores = score_population(cells, TINY_SKELETON, cfg, points, seed=1, repetitions=1, proxies=("K",))
    ks = [s["K"][0, 0] for s in scores]
    finite = [k for k in ks if math.isfinite(k)]
    hi = max(finite)
    # accuracy decreasing in K; infinite K sits strictly below every finite one
    recs = [
        BenchmarkRecord(format_genotype(c), {"d": 10.0 + 40.0 * (1 - k / hi) if math.isfinite(k) else 0.0})
        for c, k in zip(cells, ks)
    ]
    rows = correlate_proxy(recs, TINY_SKELETON, cfg, seed=1, repetitions=1, proxies=("K",))
    assert len(rows) == 1 and rows[0].orientation == "lower_is_better"
    n = len(cells)
    # pairs tied in K are tied in accuracy too and count as neither
    tied = sum(ks[i] == ks[j] for i in range(n) for j in range(i + 1, n))
    expected = -(n * (n - 1) / 2 - tied) / (n * (n - 1) / 2)
    assert rows[0].tau == expected


def test_batch_sweep_shape_and_nesting():
    cells = population(4, 1)
    recs = [BenchmarkRecord(format_genotype(c), {"a": float(i), "b": float(10 - i)}) for i, c in enumerate(cells)]
    rows = correlate_proxy(recs, TINY_SKELETON, ProxyConfig(), sweep={"batch_size": [8, 16, 32]}, repetitions=1, proxies=("K",))
    for ds in ("a", "b"):
        assert [r.sweep_point for r in rows if r.dataset == ds] == ["batch_size=8", "batch_size=16", "batch_size=32"]
    assert all(r.n == 4 for r in rows)
    text = dump_correlation_csv(rows)
    assert text.splitlines()[0] == "sweep_point,dataset,proxy,tau,orientation,n"


def test_correlate_deterministic_and_order_independent():
    cells = population(6, 2)
    recs = [BenchmarkRecord(format_genotype(c), {"a": float(i * 7 % 5)}) for i, c in enumerate(cells)]
    cfg = ProxyConfig(batch_size=5, lr_samples=10)
    sweep = {"ntk_index": [0, 2, 4]}
    a = correlate_proxy(recs, TINY_SKELETON, cfg, sweep=sweep, repetitions=2)
    b = correlate_proxy(recs, TINY_SKELETON, cfg, sweep=sweep, repetitions=2)
    c = correlate_proxy(recs[::-1], TINY_SKELETON, cfg, sweep={"ntk_index": [4, 2, 0]}, repetitions=2)
    assert a == b
    key = lambda r: (r.sweep_point, r.proxy)
    assert sorted(a, key=key) == sorted(c, key=key)


def test_correlate_parallel_matches():
    cells = population(4, 3)
    recs = [BenchmarkRecord(format_genotype(c), {"a": float(i)}) for i, c in enumerate(cells)]
    cfg = ProxyConfig(batch_size=4, lr_samples=8)
    assert correlate_proxy(recs, TINY_SKELETON, cfg, repetitions=1) == correlate_proxy(
        recs, TINY_SKELETON, cfg, repetitions=1, workers=2
    )


def test_correlate_validation():
    cells = population(2)
    recs = [BenchmarkRecord(format_genotype(c), {"a": 1.0}) for c in cells]
    with pytest.raises(ValueError):
        correlate_proxy(recs[:1], TINY_SKELETON)
    with pytest.raises(ValueError):
        correlate_proxy(recs, TINY_SKELETON, sweep={"lr_samples": [1]})
    with pytest.raises(ValueError):
        correlate_proxy(recs, TINY_SKELETON, sweep={"ntk_index": [40]})
    with pytest.raises(ValueError):
        correlate_proxy(recs, TINY_SKELETON, proxies=("Z",))
    with pytest.raises(ValueError):
        correlate_proxy(recs, TINY_SKELETON, proxies=("L",))


def test_hardware_proxies_exact_tau():
    sk = MacroSkeleton()
    table = synthetic_table(sk)
    cells = population(10, 4)
    f = [flops_estimate(instantiate_network(sk, c)) for c in cells]
    hi = max(f)
    recs = [BenchmarkRecord(format_genotype(c), {"acc": 100.0 * (1 - v / hi)}) for c, v in zip(cells, f)]
    rows = correlate_proxy(recs, sk, proxies=("F", "L"), table=table, repetitions=1)
    by = {r.proxy: r.tau for r in rows}
    assert by["F"] == kendall_tau(f, [r.accuracy["acc"] for r in recs])


def test_spectrum_rows():
    sk = MacroSkeleton()
    table = synthetic_table(sk)
    cells = population(100, 5)
    pairs = flops_latency_spectrum(cells, table, sk)
    assert len(pairs) == 100 and all(f >= 0 and l >= 0 for f, l in pairs)
    text = dump_spectrum_csv([format_genotype(c) for c in cells], pairs)
    assert len(text.splitlines()) == 101


def test_spectrum_zero_cell():
    sk = MacroSkeleton()
    table = synthetic_table(sk)
    zero = CellGenotype(NB201, (OP.ZERO,) * 6)
    (f, l), = flops_latency_spectrum([zero], table, sk)
    assert l == table.const_overhead_us / 1000
    assert f == flops_estimate(instantiate_network(sk, zero))


def test_spectrum_equal_flops_different_latency():
    sk = MacroSkeleton()
    entries = {}
    for stage, shape in enumerate(sk.stages()):
        entries[latency_key(OP.SKIP_CONNECT, stage, shape)] = 5.0
        entries[latency_key(OP.CONV_1X1, stage, shape)] = 50.0
    table = LatencyTable("distinct", 10.0, entries)
    a = CellGenotype(NB201, (OP.SKIP_CONNECT,) + (OP.ZERO,) * 5)
    b = CellGenotype(NB201, (OP.ZERO,) * 5 + (OP.SKIP_CONNECT,))
    c = CellGenotype(NB201, (OP.ZERO,) * 6)
    (fa, la), (fb, lb), (fc, lc) = flops_latency_spectrum([a, b, c], table, sk)
    # skip costs no FLOPs but does cost time on the device
    assert fa == fb == fc and la == lb != lc
