import time

import numpy as np
import pytest

from rrnco import instances as gen
from rrnco.ingest import SynthConfig, synth_basemap
from rrnco.instances import (TW_HORIZON, make_instance, sample_indices_cluster,
                             sample_indices_uniform, subsample_matrices)


@pytest.fixture(scope="module")
def bmap():
    return synth_basemap(SynthConfig(n=60, seed=0, asymmetry=0.6))


def test_uniform_full_draw_is_permutation():
    rng = np.random.default_rng(0)
    s = sample_indices_uniform(5, 5, rng)
    assert sorted(s.tolist()) == [0, 1, 2, 3, 4]


def test_uniform_deterministic():
    a = sample_indices_uniform(1000, 100, np.random.default_rng(42))
    b = sample_indices_uniform(1000, 100, np.random.default_rng(42))
    assert np.array_equal(a, b)


def test_uniform_rejects_oversample():
    with pytest.raises(ValueError):
        sample_indices_uniform(5, 6, np.random.default_rng(0))


def test_uniform_frequency():
    rng = np.random.default_rng(1)
    counts = np.zeros(10)
    draws = 20000
    for _ in range(draws):
        counts[sample_indices_uniform(10, 3, rng)] += 1
    freq = counts / draws
    assert np.all(np.abs(freq - 0.3) < 0.02)


def test_cluster_single_seed_is_nearest_neighborhood(bmap):
    rng = np.random.default_rng(2)
    s = sample_indices_cluster(bmap.n_tot, 5, 1, bmap.coords_norm, rng)
    seed = s[0]
    coords = bmap.coords_norm.astype(np.float64)
    d = np.linalg.norm(coords - coords[seed], axis=1)
    expected = np.argsort(d, kind="stable")[:5]  # seed itself plus 4 nearest
    assert set(s.tolist()) == set(expected.tolist())


def test_cluster_all_seeds_is_uniform_draw(bmap):
    s = sample_indices_cluster(bmap.n_tot, 7, 7, bmap.coords_norm, np.random.default_rng(3))
    u = sample_indices_uniform(bmap.n_tot, 7, np.random.default_rng(3))
    assert np.array_equal(s, u)


def test_cluster_always_distinct(bmap):
    rng = np.random.default_rng(4)
    for _ in range(1000):
        n_sub = int(rng.integers(2, 20))
        n_clusters = int(rng.integers(1, n_sub + 1))
        s = sample_indices_cluster(bmap.n_tot, n_sub, n_clusters, bmap.coords_norm, rng)
        assert len(set(s.tolist())) == n_sub


def test_subsample_identity_and_definition(bmap):
    n = bmap.n_tot
    ident = np.arange(n)
    d, t = subsample_matrices(bmap, ident)
    assert np.array_equal(d, bmap.dist) and np.array_equal(t, bmap.dur)
    d2, _ = subsample_matrices(bmap, np.array([2, 0]))
    assert d2[0, 1] == bmap.dist[2, 0]
    with pytest.raises(IndexError):
        subsample_matrices(bmap, np.array([0, n]))


def test_gather_oracle_random(bmap):
    rng = np.random.default_rng(5)
    for _ in range(50):
        s = sample_indices_uniform(bmap.n_tot, 12, rng)
        d, t = subsample_matrices(bmap, s)
        for i in range(12):
            for j in range(12):
                assert d[i, j] == bmap.dist[s[i], s[j]]
                assert t[i, j] == bmap.dur[s[i], s[j]]


def test_gen_features_atsp_empty():
    assert gen.gen_features("atsp", 10, np.random.default_rng(0)) == (None, None, None)


def test_gen_features_acvrp_ranges():
    rng = np.random.default_rng(6)
    demands, capacity, tw = gen.gen_features("acvrp", 100, rng)
    assert capacity == 1.0 and tw is None
    assert demands[0] == 0.0
    scaled = demands[1:] * 50
    assert np.allclose(scaled, np.round(scaled))
    assert scaled.min() >= 1 and scaled.max() <= 9


def test_gen_features_capacity_interpolation():
    rng = np.random.default_rng(7)
    demands, _, _ = gen.gen_features("acvrp", 10, rng)
    assert np.all(demands[1:] * 20 >= 0.999)  # capacity constant is max(20, ceil(n/2)) = 20
    demands, _, _ = gen.gen_features("acvrp", 60, rng)
    assert np.allclose(np.round(demands[1:] * 30), demands[1:] * 30)


def test_gen_features_ranges_bulk():
    rng = np.random.default_rng(8)
    for _ in range(10_000):
        demands, capacity, tw = gen.gen_features("acvrptw", 12, rng)
        assert demands[0] == 0.0 and np.all(demands <= capacity)
        assert np.all(demands[1:] > 0.0)
        assert tw[0, 0] == 0.0 and tw[0, 1] == TW_HORIZON
        assert np.all(tw[:, 0] >= 0.0)
        assert np.all(tw[:, 0] <= tw[:, 1])
        assert np.all(tw[:, 1] <= TW_HORIZON)
        assert np.all(tw[1:, 0] <= 0.75 * TW_HORIZON)


def test_gen_features_unknown_task():
    with pytest.raises(ValueError):
        gen.gen_features("tsp", 10, np.random.default_rng(0))


def test_make_instance_deterministic(bmap):
    a = make_instance(bmap, "acvrptw", 10, seed=11)
    b = make_instance(bmap, "acvrptw", 10, seed=11)
    assert gen.instance_to_json(a) == gen.instance_to_json(b)
    assert np.array_equal(a.dist, b.dist) and np.array_equal(a.indices, b.indices)


def test_make_instance_matrices_are_gathers(bmap):
    inst = make_instance(bmap, "atsp", 15, seed=12)
    d, t = subsample_matrices(bmap, inst.indices)
    assert np.array_equal(inst.dist, d) and np.array_equal(inst.dur, t)


def test_make_instance_coords_renormalized(bmap):
    inst = make_instance(bmap, "atsp", 15, seed=13)
    assert inst.coords.min(axis=0) == pytest.approx([0.0, 0.0])
    assert inst.coords.max(axis=0) == pytest.approx([1.0, 1.0])
    # renormalization never touches the matrices (they stay authoritative for cost)
    d, _ = subsample_matrices(bmap, inst.indices)
    assert np.array_equal(inst.dist, d)


def test_make_instance_cluster_sampler(bmap):
    inst = make_instance(bmap, "atsp", 10, sampler="cluster", seed=14, n_clusters=2)
    assert len(set(inst.indices.tolist())) == 10


def test_instance_json_roundtrip(bmap):
    for task in ("atsp", "acvrp", "acvrptw"):
        inst = make_instance(bmap, task, 9, seed=15)
        back = gen.instance_from_json(gen.instance_to_json(inst))
        assert back.task == inst.task and back.n == inst.n
        assert np.array_equal(back.coords, inst.coords)
        assert np.array_equal(back.dist, inst.dist)
        assert np.array_equal(back.angle, inst.angle)  # recomputed from coords
        if task != "atsp":
            assert np.array_equal(back.demands, inst.demands)
            assert back.capacity == inst.capacity
        if task == "acvrptw":
            assert np.array_equal(back.tw, inst.tw)


def test_dataset_roundtrip(tmp_path, bmap):
    insts = [make_instance(bmap, "acvrp", 8, seed=20 + i) for i in range(5)]
    path = tmp_path / "data.ndjson"
    gen.write_dataset(insts, path)
    back = gen.read_dataset(path)
    assert len(back) == 5
    assert all(np.array_equal(a.dist, b.dist) for a, b in zip(insts, back))


def test_generation_throughput():
    big = synth_basemap(SynthConfig(n=1000, seed=1))
    t0 = time.perf_counter()
    for i in range(100):
        make_instance(big, "atsp", 100, seed=i)
    per_instance = (time.perf_counter() - t0) / 100
    assert per_instance < 0.005, f"{per_instance * 1e3:.2f} ms/instance"
