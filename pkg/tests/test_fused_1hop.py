import numpy as np
import pytest

from fsa.fused import (
    SampledIndices1,
    fused_1hop_backward,
    fused_1hop_forward,
    sample_neighbors_reservoir,
)
from fsa.graph import build_csr
from fsa.meter import MemoryMeter
from fsa.parallel import set_workers
from fsa.rng import derive_stream

from oracles import ref_mean_rows, ref_sample_1hop, random_graph


def star_graph(deg):
    edges = [(0, i + 1) for i in range(deg)]
    return build_csr(edges, deg + 1, make_undirected=True)


def test_low_degree_takes_all_neighbors_exact_mean():
    g = build_csr([(0, 1), (0, 2)], 3, make_undirected=True)
    X = np.array([[0.0, 0.0], [2.0, 4.0], [4.0, 8.0]])
    out, idx = fused_1hop_forward(g, X, np.array([0]), k=5, base_seed=42)
    assert out[0].tolist() == [3.0, 6.0]
    assert idx.takes.tolist() == [2]
    assert idx.samples[0].tolist() == [1, 2, -1, -1, -1]


def test_isolated_node_yields_zero_row():
    g = build_csr([(1, 2)], 3, make_undirected=True)
    X = np.ones((3, 4))
    out, idx = fused_1hop_forward(g, X, np.array([0]), k=3, base_seed=1)
    assert not out[0].any()
    assert idx.takes[0] == 0
    assert (idx.samples[0] == -1).all()


def test_high_degree_matches_reference_sampler_and_direct_mean():
    g = star_graph(100)
    rng = np.random.default_rng(0)
    X = rng.standard_normal((101, 3))
    seeds = np.array([0, 0, 5])
    out, idx = fused_1hop_forward(g, X, seeds, k=10, base_seed=99)
    ref_samples, ref_takes = ref_sample_1hop(g, seeds, 10, 99)
    assert np.array_equal(idx.samples, ref_samples)
    assert np.array_equal(idx.takes, ref_takes)
    for i in range(len(seeds)):
        expected = ref_mean_rows(X, ref_samples[i])
        assert out[i].tobytes() == expected.tobytes()


def test_repeated_seed_positions_sample_independently():
    g = star_graph(50)
    X = np.zeros((51, 1))
    _, idx = fused_1hop_forward(g, X, np.array([0, 0]), k=5, base_seed=3)
    assert idx.samples[0].tolist() != idx.samples[1].tolist()


def test_sampled_ids_are_distinct_neighbors():
    rng = np.random.default_rng(5)
    for _ in range(20):
        g = random_graph(rng, max_n=40)
        X = rng.standard_normal((g.num_nodes, 2))
        seeds = rng.integers(0, g.num_nodes, size=8)
        _, idx = fused_1hop_forward(g, X, seeds, k=4, base_seed=int(rng.integers(1 << 40)))
        for i, u in enumerate(seeds):
            valid = idx.samples[i][idx.samples[i] >= 0]
            assert len(set(valid.tolist())) == len(valid)
            neigh = set(g.neighbors(int(u)).tolist())
            assert set(valid.tolist()) <= neigh


def test_forward_errors():
    g = star_graph(3)
    X = np.zeros((4, 2))
    with pytest.raises(ValueError, match="seed out of range"):
        fused_1hop_forward(g, X, np.array([17]), k=2, base_seed=0)
    with pytest.raises(ValueError, match="features must be"):
        fused_1hop_forward(g, np.zeros((2, 2)), np.array([0]), k=2, base_seed=0)
    with pytest.raises(ValueError, match="fanout"):
        fused_1hop_forward(g, X, np.array([0]), k=0, base_seed=0)


def test_backward_single_seed_half_weights():
    idx = SampledIndices1(
        samples=np.array([[1, 2, -1]], dtype=np.int32), takes=np.array([2], dtype=np.int32)
    )
    grad = fused_1hop_backward(np.array([[1.0]]), idx, num_nodes=4)
    assert grad[:, 0].tolist() == [0.0, 0.5, 0.5, 0.0]


def test_backward_zero_take_contributes_nothing():
    idx = SampledIndices1(
        samples=np.array([[-1, -1]], dtype=np.int32), takes=np.array([0], dtype=np.int32)
    )
    grad = fused_1hop_backward(np.array([[5.0, 5.0]]), idx, num_nodes=3)
    assert not grad.any()


def test_backward_accumulates_across_seeds():
    idx = SampledIndices1(
        samples=np.array([[7, 3, -1, -1], [7, 1, 2, 5]], dtype=np.int32),
        takes=np.array([2, 4], dtype=np.int32),
    )
    grad = fused_1hop_backward(np.array([[1.0], [1.0]]), idx, num_nodes=8)
    assert grad[7, 0] == 0.75  # 1/2 + 1/4


def test_backward_validates_inputs():
    idx = SampledIndices1(
        samples=np.array([[9]], dtype=np.int32), takes=np.array([1], dtype=np.int32)
    )
    with pytest.raises(ValueError, match="out of range"):
        fused_1hop_backward(np.array([[1.0]]), idx, num_nodes=5)
    bad = SampledIndices1(
        samples=np.array([[1]], dtype=np.int32), takes=np.array([-1], dtype=np.int32)
    )
    with pytest.raises(ValueError, match="negative take"):
        fused_1hop_backward(np.array([[1.0]]), bad, num_nodes=5)


def test_backward_linear_in_upstream_gradient():
    rng = np.random.default_rng(11)
    g = random_graph(rng, max_n=30)
    X = rng.standard_normal((g.num_nodes, 3))
    seeds = rng.integers(0, g.num_nodes, size=6)
    _, idx = fused_1hop_forward(g, X, seeds, k=3, base_seed=8)
    grad = rng.standard_normal((6, 3))
    base = fused_1hop_backward(grad, idx, g.num_nodes)
    for alpha in (2.0, 0.5, 8.0):
        scaled = fused_1hop_backward(alpha * grad, idx, g.num_nodes)
        assert scaled.tobytes() == (alpha * base).tobytes()


def test_constant_features_are_a_fixed_point():
    rng = np.random.default_rng(2)
    g = random_graph(rng, max_n=50)
    X = np.full((g.num_nodes, 3), 0.8125)  # exactly representable
    seeds = np.arange(g.num_nodes)
    out, idx = fused_1hop_forward(g, X, seeds, k=4, base_seed=77)
    non_isolated = idx.takes > 0
    assert np.array_equal(out[non_isolated], X[seeds][non_isolated])
    X32 = X.astype(np.float32)
    out32, _ = fused_1hop_forward(g, X32, seeds, k=4, base_seed=77)
    np.testing.assert_allclose(out32[non_isolated], X32[seeds][non_isolated], rtol=2e-7)


def test_save_and_nosave_agree_bitwise():
    rng = np.random.default_rng(21)
    g = random_graph(rng, max_n=60)
    X = rng.standard_normal((g.num_nodes, 5))
    seeds = rng.integers(0, g.num_nodes, size=12)
    saved, idx = fused_1hop_forward(g, X, seeds, k=3, base_seed=5, save_indices=True)
    bare, none_idx = fused_1hop_forward(g, X, seeds, k=3, base_seed=5, save_indices=False)
    assert none_idx is None
    assert saved.tobytes() == bare.tobytes()
    assert idx is not None


def test_backward_without_indices_is_zero():
    grad = fused_1hop_backward(np.ones((4, 2)), None, num_nodes=9)
    assert grad.shape == (9, 2)
    assert not grad.any()


def test_deterministic_across_worker_counts(restore_workers):
    rng = np.random.default_rng(31)
    g = random_graph(rng, max_n=80)
    X = rng.standard_normal((g.num_nodes, 4))
    seeds = rng.integers(0, g.num_nodes, size=16)
    blobs = set()
    for w in (1, 4, 8):
        set_workers(w)
        out, idx = fused_1hop_forward(g, X, seeds, k=5, base_seed=13)
        blobs.add(out.tobytes() + idx.samples.tobytes() + idx.takes.tobytes())
    assert len(blobs) == 1


def test_reservoir_returns_whole_neighborhood_in_csr_order():
    g = build_csr([(0, 3), (0, 1)], 4, make_undirected=True)
    ids, take = sample_neighbors_reservoir(g, 0, k=5, stream=derive_stream(0, 0, 0, 0))
    assert take == 2
    assert ids.tolist() == [1, 3]


def test_reservoir_skips_replacement_when_draw_is_out_of_range():
    # find a stream whose first uniform_index(3) is 2 (the no-replace branch)
    g = build_csr([(0, 1), (0, 2), (0, 3)], 4, make_undirected=True)
    base = next(
        s for s in range(100) if derive_stream(s, 0, 0, 0).uniform_index(3) == 2
    )
    ids, take = sample_neighbors_reservoir(g, 0, k=2, stream=derive_stream(base, 0, 0, 0))
    assert take == 2
    assert ids.tolist() == [1, 2]


def test_reservoir_uniformity():
    g = star_graph(10)
    counts = np.zeros(10)
    trials = 20000
    for t in range(trials):
        ids, _ = sample_neighbors_reservoir(g, 0, 5, derive_stream(t, 0, 0, 0))
        counts[ids - 1] += 1
    freq = counts / trials
    assert np.all(np.abs(freq - 0.5) < 0.02), freq


def test_nosave_forward_avoids_index_allocations():
    g = star_graph(64)
    X = np.zeros((65, 8), dtype=np.float32)
    seeds = np.zeros(512, dtype=np.int64)
    saved_meter = MemoryMeter()
    fused_1hop_forward(g, X, seeds, k=16, base_seed=0, save_indices=True, meter=saved_meter)
    bare_meter = MemoryMeter()
    fused_1hop_forward(g, X, seeds, k=16, base_seed=0, save_indices=False, meter=bare_meter)
    index_bytes = 512 * 16 * 4
    assert saved_meter.peak_bytes >= bare_meter.peak_bytes + index_bytes
