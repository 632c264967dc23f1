import math

import pytest
from hypothesis import given, settings, strategies as st

from nembed.perfmodel import (BandwidthProfile, CostInputs, arithmetic_intensity, format_bytes, memory_cost,
                              mixed_unit_tb, timeline_estimate)
from nembed.scheduler import ClusterShape

GiB = 1024 ** 3


def test_table1_rows():
    m = memory_cost(CostInputs(nodes=1.05e9, edges=300e9, augmentation=10, dim=128))
    assert m.vertex_embeddings / GiB == pytest.approx(500.7, rel=0.005)
    assert m.context_embeddings == m.vertex_embeddings
    assert m.nodes / GiB == pytest.approx(3.91, rel=0.005)
    assert format_bytes(m.vertex_embeddings) == "500.68GB"
    assert format_bytes(m.nodes) == "3.91GB"
    # edge rows: exact bytes, and the quoted figures in their mixed unit
    assert m.edges == 300e9 * 8
    assert mixed_unit_tb(m.edges) == pytest.approx(2.24, abs=0.005)
    assert mixed_unit_tb(m.augmented_edges) == pytest.approx(22.4, abs=0.05)


def test_zero_graph():
    m = memory_cost(CostInputs(0, 0))
    assert m.total == 0 and all(v == 0 for _, v in m.rows())
    with pytest.raises(ValueError):
        CostInputs(-1, 0)


def test_intensity_independent_of_n():
    a = arithmetic_intensity(CostInputs(1, 1, samples=1e6))
    b = arithmetic_intensity(CostInputs(1, 1, samples=1e9))
    assert a.intensity == b.intensity
    assert b.flops == 1000 * a.flops


def test_intensity_value_for_default_constants():
    # 6d(1+m) flops over 4(1+m)*d*4 bytes
    ai = arithmetic_intensity(CostInputs(1, 1, dim=128, negatives=5, samples=1))
    assert ai.flops == 6 * 128 * 6
    assert ai.bytes == 4 * 6 * 128 * 4
    assert ai.intensity == 0.375
    assert ai.intensity < 1  # memory bound


def test_intensity_unchanged_by_m():
    a = arithmetic_intensity(CostInputs(1, 1, negatives=0, samples=1))
    b = arithmetic_intensity(CostInputs(1, 1, negatives=5, samples=1))
    assert a.intensity == b.intensity


def test_free_links_give_pure_compute():
    sh = ClusterShape(2, 4, 4)
    inp = CostInputs(1e6, 1e7, dim=128)
    est = timeline_estimate(sh, inp, BandwidthProfile(), 1e12)
    assert est.total == pytest.approx(est.compute)
    assert est.compute == pytest.approx(inp.sample_count * 6 * 128 * 6 / 1e12 / sh.num_workers)


def test_doubling_k_halves_exchange():
    inp = CostInputs(1e8, 1e9)
    bw = BandwidthProfile(intra_p2p=50e9)
    a = timeline_estimate(ClusterShape(1, 4, 4), inp, bw, 1e12).p2p_per_exchange
    b = timeline_estimate(ClusterShape(1, 4, 8), inp, bw, 1e12).p2p_per_exchange
    assert b == pytest.approx(a / 2)


_bw = st.floats(1e6, 1e12)


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 4), st.integers(1, 8), st.integers(1, 8), _bw, _bw, _bw, _bw, _bw,
       st.floats(0, 1e-3), st.floats(0, 1e-3), st.floats(1e9, 1e13))
def test_lower_bound_and_monotone(N, G, k, p2p, host, inter, disk, scale, lat, ilat, rate):
    sh = ClusterShape(N, G, k)
    inp = CostInputs(1e6, 1e7)
    bw = BandwidthProfile(intra_p2p=p2p, host_staging=host, inter_node=inter, disk=disk,
                          intra_latency=lat, inter_latency=ilat)
    est = timeline_estimate(sh, inp, bw, rate)
    compute = inp.sample_count * 6 * inp.dim * 6 / rate / sh.num_workers
    assert est.total >= compute * (1 - 1e-12)
    assert est.total >= est.stages[7] * (1 - 1e-12)
    for field in ("intra_p2p", "host_staging", "inter_node", "disk"):
        faster = BandwidthProfile(**{**bw.__dict__, field: getattr(bw, field) * (1 + scale / 1e6)})
        assert timeline_estimate(sh, inp, faster, rate).total <= est.total * (1 + 1e-12)


def test_inter_node_hidden_when_compute_dominates():
    inp = CostInputs(1e6, 1e8)
    slow_compute = timeline_estimate(ClusterShape(2, 1, 4), inp, BandwidthProfile(inter_latency=1e-3), 1e9)
    assert slow_compute.total == pytest.approx(
        timeline_estimate(ClusterShape(2, 1, 4), inp, BandwidthProfile(), 1e9).total)
    fast_compute = timeline_estimate(ClusterShape(2, 1, 4), inp, BandwidthProfile(inter_latency=10.0), 1e15)
    assert fast_compute.total > fast_compute.compute


def test_bandwidth_validation():
    with pytest.raises(ValueError):
        BandwidthProfile(intra_p2p=0)
    with pytest.raises(ValueError):
        BandwidthProfile(inter_latency=-1)
    with pytest.raises(ValueError):
        timeline_estimate(ClusterShape(), CostInputs(1, 1), BandwidthProfile(), 0)
    assert math.isinf(BandwidthProfile().disk)
