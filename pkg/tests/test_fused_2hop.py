import numpy as np
import pytest

from fsa.fused import (
    SampledIndices2,
    fused_2hop_backward,
    fused_2hop_forward,
)
from fsa.graph import build_csr
from fsa.meter import MemoryMeter
from fsa.parallel import set_workers

from oracles import fd_gradient, ref_nested_mean, ref_sample_2hop, random_graph


def two_level_tree():
    # directed: 0 -> {1, 2}, 1 -> {3}, 2 -> {4, 5}
    return build_csr([(0, 1), (0, 2), (1, 3), (2, 4), (2, 5)], 6, make_undirected=False)


def test_small_tree_nested_mean_forced():
    g = two_level_tree()
    X = np.array([[0.0], [0.0], [0.0], [1.0], [2.0], [4.0]])
    out, idx = fused_2hop_forward(g, X, np.array([0]), k1=2, k2=2, base_seed=1)
    assert out[0, 0] == 2.0  # ((1/1) + (2+4)/2) / 2, every mean exact
    assert sorted(idx.s1[0].tolist()) == [1, 2]


def test_isolated_root_zero_row():
    g = build_csr([(1, 2)], 4, make_undirected=True)
    X = np.ones((4, 3))
    out, idx = fused_2hop_forward(g, X, np.array([0, 3]), k1=2, k2=2, base_seed=5)
    assert not out.any()
    assert (idx.s1 == -1).all()
    assert (idx.s2 == -1).all()


def test_matches_reference_two_stage_sampler():
    rng = np.random.default_rng(17)
    for _ in range(10):
        g = random_graph(rng, max_n=50)
        X = rng.standard_normal((g.num_nodes, 3))
        seeds = rng.integers(0, g.num_nodes, size=7)
        k1, k2 = int(rng.integers(1, 6)), int(rng.integers(1, 6))
        base_seed = int(rng.integers(1 << 40))
        out, idx = fused_2hop_forward(g, X, seeds, k1, k2, base_seed)
        ref_s1, ref_s2 = ref_sample_2hop(g, seeds, k1, k2, base_seed)
        assert np.array_equal(idx.s1, ref_s1)
        assert np.array_equal(idx.s2, ref_s2)
        for r in range(len(seeds)):
            expected = ref_nested_mean(X, ref_s1[r], ref_s2[r])
            assert out[r].tobytes() == expected.tobytes()


def test_invalid_first_hop_slots_have_empty_second_hop():
    rng = np.random.default_rng(23)
    g = random_graph(rng, max_n=30)
    X = np.zeros((g.num_nodes, 1))
    seeds = rng.integers(0, g.num_nodes, size=10)
    _, idx = fused_2hop_forward(g, X, seeds, k1=6, k2=3, base_seed=2)
    mask = idx.s1 < 0
    assert (idx.s2[mask] == -1).all()
    t1 = idx.take1()
    for r in range(10):
        row = idx.s1[r]
        assert (row[: t1[r]] >= 0).all()
        assert (row[t1[r]:] == -1).all()


def test_backward_small_tree_weights():
    g = two_level_tree()
    X = np.array([[0.0], [0.0], [0.0], [1.0], [2.0], [4.0]])
    _, idx = fused_2hop_forward(g, X, np.array([0]), k1=2, k2=2, base_seed=1)
    grad = fused_2hop_backward(np.array([[1.0]]), idx, g.num_nodes)
    assert grad[3, 0] == 0.5        # 1 / (k1_eff * k2_eff(1)) = 1 / (2*1)
    assert grad[4, 0] == 0.25       # 1 / (2*2)
    assert grad[5, 0] == 0.25
    assert not grad[[0, 1, 2]].any()


def test_backward_all_isolated_is_zero():
    g = build_csr([(5, 6)], 8, make_undirected=True)
    X = np.ones((8, 2))
    _, idx = fused_2hop_forward(g, X, np.array([0, 1, 2]), k1=3, k2=3, base_seed=0)
    grad = fused_2hop_backward(np.ones((3, 2)), idx, 8)
    assert not grad.any()


def test_backward_matches_finite_differences():
    rng = np.random.default_rng(4)
    g = random_graph(rng, max_n=25)
    X = rng.standard_normal((g.num_nodes, 2))
    seeds = rng.integers(0, g.num_nodes, size=5)
    out, idx = fused_2hop_forward(g, X, seeds, k1=3, k2=2, base_seed=6)
    weights = rng.standard_normal(out.shape)
    analytic = fused_2hop_backward(weights, idx, g.num_nodes)

    def forward(Z):
        o, _ = fused_2hop_forward(g, Z, seeds, 3, 2, 6, save_indices=False)
        return o

    fd = fd_gradient(forward, X, weights, eps=1e-6)
    scale = np.maximum(np.abs(analytic), 1e-9)
    assert np.max(np.abs(fd - analytic) / scale) < 1e-6


def test_nosave_identical_values_and_zero_backward():
    rng = np.random.default_rng(9)
    g = random_graph(rng, max_n=40)
    X = rng.standard_normal((g.num_nodes, 4))
    seeds = rng.integers(0, g.num_nodes, size=9)
    saved, idx = fused_2hop_forward(g, X, seeds, 3, 3, 11, save_indices=True)
    bare, none_idx = fused_2hop_forward(g, X, seeds, 3, 3, 11, save_indices=False)
    assert none_idx is None
    assert saved.tobytes() == bare.tobytes()
    grad = fused_2hop_backward(np.ones_like(saved), None, g.num_nodes)
    assert not grad.any()


def test_nosave_forward_excludes_index_tensor_bytes():
    g = build_csr([(i, (i + 1) % 400) for i in range(400)], 400, make_undirected=True)
    X = np.zeros((400, 16), dtype=np.float32)
    seeds = np.arange(256, dtype=np.int64)
    k1, k2 = 8, 8
    m_saved = MemoryMeter()
    fused_2hop_forward(g, X, seeds, k1, k2, 0, save_indices=True, meter=m_saved)
    m_bare = MemoryMeter()
    fused_2hop_forward(g, X, seeds, k1, k2, 0, save_indices=False, meter=m_bare)
    index_bytes = 256 * (k1 + k1 * k2) * 4
    assert m_saved.peak_bytes >= m_bare.peak_bytes + index_bytes


def test_deterministic_across_worker_counts(restore_workers):
    rng = np.random.default_rng(41)
    g = random_graph(rng, max_n=60)
    X = rng.standard_normal((g.num_nodes, 3))
    seeds = rng.integers(0, g.num_nodes, size=14)
    blobs = set()
    for w in (1, 4, 8):
        set_workers(w)
        out, idx = fused_2hop_forward(g, X, seeds, 4, 3, base_seed=19)
        grad = fused_2hop_backward(np.ones_like(out), idx, g.num_nodes)
        blobs.add(out.tobytes() + idx.s1.tobytes() + idx.s2.tobytes() + grad.tobytes())
    assert len(blobs) == 1


def test_backward_rejects_out_of_range_index():
    idx = SampledIndices2(
        s1=np.array([[1, -1]], dtype=np.int32),
        s2=np.array([[[9, -1], [-1, -1]]], dtype=np.int32),
    )
    with pytest.raises(ValueError, match="out of range"):
        fused_2hop_backward(np.ones((1, 1)), idx, num_nodes=5)
