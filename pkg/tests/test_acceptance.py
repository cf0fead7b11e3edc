"""Acceptance suite: one test per criterion, each printing a PASS line.

Run with `pytest -v -s tests/test_acceptance.py` (or `rrnco bench --suite desk`).
Criteria 9 and 10 share three desk-scale training runs and dominate the wall
time (they stay within the stated 30-minute-per-run budget on a desktop CPU).
"""

import itertools
import json
import time

import numpy as np
import pytest

from rrnco import autodiff as ad
from rrnco import envs
from rrnco import model as mod
from rrnco.autodiff import ParamStore, Tensor
from rrnco.baselines import held_karp_atsp, or_opt_improve, tour_cost
from rrnco.geo import GeoPoint, angle_matrix, bbox_for_area, haversine
from rrnco.ingest import (OsrmEndpoint, SynthConfig, osrm_table_fetch, synth_basemap,
                          table_body, table_request_urls, write_fixture, DictTransport,
                          FixtureTransport)
from rrnco.instances import make_instance, sample_indices_uniform, subsample_matrices
from rrnco.model import ModelConfig, aafm, encode, init_params, neural_adaptive_bias
from rrnco.train import TrainConfig, greedy_eval, train


def _report(num: int, text: str) -> None:
    print(f"\nPASS criterion {num}: {text}")


# --------------------------------------------------------------------------
# criterion 1: geometry anchors


def test_c01_geometry():
    d0 = haversine(GeoPoint(0, 0), GeoPoint(0, 0))
    d1 = haversine(GeoPoint(0, 0), GeoPoint(0, 1))
    d2 = haversine(GeoPoint(0, 0), GeoPoint(90, 0))
    assert d0 == 0.0
    assert abs(d1 - 111.195) < 1e-3
    assert abs(d2 - 10007.543) < 1e-3
    eq = bbox_for_area(GeoPoint(0, 0), 3.0)
    hi = bbox_for_area(GeoPoint(60, 0), 3.0)
    ratio_err = abs((hi.lon_max - hi.lon_min) - 2.0 * (eq.lon_max - eq.lon_min))
    assert ratio_err < 1e-5
    _report(1, f"haversine anchors within 1e-3 km; lat-60 lon half-width ratio "
               f"error {ratio_err:.2e} deg")


# --------------------------------------------------------------------------
# criterion 2: generation throughput


def test_c02_generation_throughput():
    big = synth_basemap(SynthConfig(n=1000, seed=7))
    # warm the caches with a few draws before timing
    for i in range(20):
        make_instance(big, "atsp", 100, seed=i)
    checksum = 0.0
    t0 = time.perf_counter()
    for i in range(1000):
        inst = make_instance(big, "atsp", 100, seed=10_000 + i)
        checksum += float(inst.dist[0, 1])
    elapsed = time.perf_counter() - t0
    assert np.isfinite(checksum)
    assert elapsed < 1.0, f"1000 instances took {elapsed:.3f}s"
    _report(2, f"1000 x n=100 instances from a 1000-node map in {elapsed:.3f}s")


# --------------------------------------------------------------------------
# criterion 3: gather correctness


def test_c03_gather_exactness():
    maps = [synth_basemap(SynthConfig(n=120, seed=s, asymmetry=0.8)) for s in range(3)]
    rng = np.random.default_rng(3)
    checked = 0
    for _ in range(10_000):
        bmap = maps[int(rng.integers(len(maps)))]
        n_sub = int(rng.integers(2, 25))
        s = sample_indices_uniform(bmap.n_tot, n_sub, rng)
        dist_sub, dur_sub = subsample_matrices(bmap, s)
        assert np.array_equal(dist_sub, bmap.dist[np.ix_(s, s)])
        assert np.array_equal(dur_sub, bmap.dur[np.ix_(s, s)])
        checked += 1
    _report(3, f"{checked} random (map, s) gathers bit-exact")


# --------------------------------------------------------------------------
# criterion 4: AAFM shift algebra


def test_c04_aafm_shift_invariance():
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(2, 9))
        e = int(rng.integers(2, 17))
        q = Tensor(rng.normal(size=(1, n, e)))
        k = Tensor(rng.normal(size=(1, n, e)) * 3)
        v = Tensor(rng.normal(size=(1, n, e)))
        a = Tensor(rng.normal(size=(1, n, n)) * 3)
        base = aafm(q, k, v, a).data
        row = int(rng.integers(n))
        shifted_a = a.data.copy()
        shifted_a[0, row, :] += rng.uniform(-50, 50)
        out_a = aafm(q, k, v, Tensor(shifted_a)).data
        shift_k = rng.normal(size=(1, 1, e)) * 20
        out_k = aafm(q, Tensor(k.data + shift_k), v, a).data
        scale = np.maximum(np.abs(base), 1e-12)
        worst = max(worst,
                    float(np.max(np.abs(out_a - base) / scale)),
                    float(np.max(np.abs(out_k - base) / scale)))
    assert worst <= 1e-6, worst
    _report(4, f"row-shift and key-feature-shift max relative change {worst:.2e}")


# --------------------------------------------------------------------------
# criterion 5: permutation equivariance


def _permuted_instance(inst, perm):
    from dataclasses import replace

    coords = inst.coords[perm]
    return replace(inst, coords=coords, dist=inst.dist[np.ix_(perm, perm)],
                   dur=inst.dur[np.ix_(perm, perm)], angle=angle_matrix(coords),
                   indices=None)


def test_c05_equivariance():
    bmap = synth_basemap(SynthConfig(n=50, seed=5, asymmetry=0.6))
    inst = make_instance(bmap, "atsp", 5, seed=5)
    cfg = ModelConfig(embed_dim=16, n_heads=2, n_layers=2, ff_dim=32, knn_k=4)
    params = init_params(cfg, "atsp", seed=5, dtype=np.float64)
    base = encode(inst, params, cfg, deterministic=True)
    base_bias = neural_adaptive_bias(inst.dist[None].astype(np.float64),
                                     inst.angle[None].astype(np.float64), params)
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(50):
        perm = rng.permutation(5)
        p_inst = _permuted_instance(inst, perm)
        emb = encode(p_inst, params, cfg, deterministic=True)
        worst = max(worst, float(np.max(np.abs(emb.row.data[0] - base.row.data[0][perm]))),
                    float(np.max(np.abs(emb.col.data[0] - base.col.data[0][perm]))))
        bias = neural_adaptive_bias(p_inst.dist[None].astype(np.float64),
                                    inst.angle[np.ix_(perm, perm)][None].astype(np.float64),
                                    params)
        worst = max(worst, float(np.max(np.abs(
            bias.data[0] - base_bias.data[0][np.ix_(perm, perm)]))))
    assert worst <= 1e-4, worst
    _report(5, f"encoder + pairwise-bias equivariance over 50 permutations, "
               f"max deviation {worst:.2e}")


# --------------------------------------------------------------------------
# criterion 6: gradients


def test_c06_gradients():
    t_start = time.perf_counter()
    # every core op at 1e-5 (linear ops at 1e-6)
    rng = np.random.default_rng(6)

    def wsum(t, seed=0):
        w = Tensor(np.random.default_rng(seed).uniform(0.5, 1.5, size=t.shape))
        return ad.sum(ad.mul(t, w))

    linear_cases = {
        "matmul": (lambda s: wsum(ad.matmul(s["a"], s["b"])), {"a": (3, 4), "b": (4, 5)}),
        "add": (lambda s: wsum(ad.add(s["a"], s["b"])), {"a": (4, 5), "b": (5,)}),
        "concat": (lambda s: wsum(ad.concat([s["a"], s["b"]], axis=-1)),
                   {"a": (3, 4), "b": (3, 2)}),
    }
    nonlinear_cases = {
        "mul": (lambda s: wsum(ad.mul(s["a"], s["b"])), {"a": (4, 3), "b": (4, 3)}),
        "relu": (lambda s: wsum(ad.relu(s["a"])), {"a": (6, 6)}),
        "sigmoid": (lambda s: wsum(ad.sigmoid(s["a"])), {"a": (6, 6)}),
        "tanh": (lambda s: wsum(ad.tanh(s["a"])), {"a": (6, 6)}),
        "exp": (lambda s: wsum(ad.exp(s["a"])), {"a": (6, 6)}),
        "log": (lambda s: wsum(ad.log(ad.add(ad.mul(s["a"], s["a"]), 0.5))), {"a": (6, 6)}),
        "softmax_masked": (
            lambda s: wsum(ad.softmax_masked(
                s["a"], np.array([[True, True, False, True, True]] * 4))),
            {"a": (4, 5)}),
        "instance_norm": (
            lambda s: wsum(ad.instance_norm(s["x"], s["g"], s["b"])),
            {"x": (2, 7, 3), "g": (3,), "b": (3,)}),
    }
    for tol, cases in ((1e-6, linear_cases), (1e-5, nonlinear_cases)):
        for name, (f, shapes) in cases.items():
            store = ParamStore()
            for path, shape in shapes.items():
                data = rng.uniform(-1, 1, size=shape)
                if name == "relu":
                    data += np.sign(data) * 0.05
                store.add(path, data)
            rep = ad.grad_check(f, store, eps=1e-5)
            assert rep.max_rel_err <= tol, (name, rep)

    # full encoder + decoder one-step log-prob at n=4, E=8, l=2
    bmap = synth_basemap(SynthConfig(n=40, seed=6, asymmetry=0.6))
    inst = make_instance(bmap, "atsp", 4, seed=6)
    cfg = ModelConfig(embed_dim=8, n_heads=2, n_layers=2, ff_dim=16, knn_k=3)
    params = init_params(cfg, "atsp", seed=6, dtype=np.float64)
    actions = mod.rollout(inst, params, cfg, n_starts=1)[0].actions[:2]

    def f(store):
        return mod.trajectory_logprob(inst, actions, store, cfg)

    rep = ad.grad_check(f, params, eps=1e-5, max_coords=200)
    elapsed = time.perf_counter() - t_start
    assert rep.max_rel_err <= 1e-3, rep
    assert elapsed < 300.0
    _report(6, f"core ops <= 1e-5 (linear 1e-6); full-model one-step log-prob "
               f"max rel err {rep.max_rel_err:.2e}; {elapsed:.0f}s")


# --------------------------------------------------------------------------
# criterion 7: environments


def test_c07_environments():
    bmap = synth_basemap(SynthConfig(n=80, seed=7, asymmetry=0.7))

    def independent_cost(dist, tour):
        # float64 accumulation of float32 entries, matching the cost contract
        return sum(float(dist[tour[k], tour[(k + 1) % len(tour)]])
                   for k in range(len(tour)))

    tours_checked = 0
    for n in (4, 5, 6):
        inst = make_instance(bmap, "atsp", n, seed=70 + n)
        for tour in itertools.permutations(range(n)):
            assert envs.route_cost(inst, list(tour)) == pytest.approx(
                independent_cost(inst.dist, list(tour)), abs=1e-12)
            tours_checked += 1

    rng = np.random.default_rng(7)
    rollouts = 0
    for task in ("acvrp", "acvrptw"):
        for it in range(5000):
            inst = make_instance(bmap, task, 6, seed=rng.integers(2 ** 31))
            st = envs.reset(inst, 0)
            while not st.done:
                mask = envs.feasible_mask(st)
                assert mask.any()
                st = envs.step(st, int(rng.choice(np.flatnonzero(mask))))
                assert 0.0 <= st.remaining_capacity <= inst.capacity
                if task == "acvrptw" and st.current_node != 0:
                    lo, hi = inst.tw[st.current_node]
                    assert lo - 1e-9 <= st.clock <= hi + 1e-9
            rollouts += 1
    _report(7, f"route_cost matches brute force on {tours_checked} tours; "
               f"{rollouts} masked rollouts without capacity/window violations")


# --------------------------------------------------------------------------
# criterion 8: oracles


def test_c08_oracles():
    rng = np.random.default_rng(8)

    def brute(dist):
        n = dist.shape[0]
        return min(tour_cost(dist, [0, *perm])
                   for perm in itertools.permutations(range(1, n)))

    for it in range(200):
        n = int(rng.integers(5, 9))
        d = rng.uniform(0.05, 1.0, size=(n, n))
        np.fill_diagonal(d, 0.0)
        hk_cost, hk_tour = held_karp_atsp(d)
        assert hk_cost == pytest.approx(brute(d), abs=1e-12), f"case {it}"
        assert tour_cost(d, hk_tour) == pytest.approx(hk_cost)

    for it in range(100):
        n = int(rng.integers(5, 11))
        d = rng.uniform(0.05, 1.0, size=(n, n))
        np.fill_diagonal(d, 0.0)
        start = list(rng.permutation(n))
        improved = or_opt_improve(start, d)
        hk_cost, _ = held_karp_atsp(d)
        assert tour_cost(d, improved) <= tour_cost(d, start) + 1e-12
        assert tour_cost(d, improved) >= hk_cost - 1e-12
    _report(8, "Held-Karp == factorial brute force on 200 instances; "
               "or-opt monotone and never below the optimum on 100")


# --------------------------------------------------------------------------
# criteria 9 + 10: desk-scale learning and ablation direction (shared runs)

DESK_MODEL = dict(embed_dim=64, n_heads=4, n_layers=2, ff_dim=256, knn_k=25)
DESK_TRAIN = dict(task="atsp", n_nodes=10, batch_size=64, instances_per_epoch=2000,
                  epochs=20, n_starts=8, seed=0, val_instances=128)


@pytest.fixture(scope="session")
def desk_runs(tmp_path_factory):
    out_root = tmp_path_factory.mktemp("desk_runs")
    train_maps = [synth_basemap(SynthConfig(n=200, seed=s, asymmetry=0.6))
                  for s in range(4)]
    held_out = synth_basemap(SynthConfig(n=200, seed=1234, asymmetry=0.6))
    test_set = [make_instance(held_out, "atsp", 10, seed=555_000 + i) for i in range(100)]
    hk = np.array([held_karp_atsp(inst.dist)[0] for inst in test_set])

    results = {}
    for label, init_ctx in (("cg_nab", "gate"), ("coords_only", "coords"),
                            ("dist_only", "dist")):
        mc = ModelConfig(init_context=init_ctx, use_nab=True, **DESK_MODEL)
        tc = TrainConfig(**DESK_TRAIN)
        params = init_params(mc, "atsp", seed=0)
        untrained = greedy_eval(test_set, params, mc, n_starts=tc.n_starts)
        t0 = time.perf_counter()
        train(train_maps, params, mc, tc, out_root / label, val_basemaps=[held_out])
        minutes = (time.perf_counter() - t0) / 60.0
        trained = greedy_eval(test_set, params, mc, n_starts=tc.n_starts)
        results[label] = {
            "gap_untrained": float((untrained / hk - 1.0).mean() * 100.0),
            "gap": float((trained / hk - 1.0).mean() * 100.0),
            "minutes": minutes,
        }
    return results


def test_c09_desk_scale_learning(desk_runs):
    run = desk_runs["cg_nab"]
    assert run["minutes"] < 30.0, f"training took {run['minutes']:.1f} min"
    assert run["gap"] <= 10.0, f"trained gap {run['gap']:.2f}%"
    assert run["gap"] <= 0.5 * run["gap_untrained"], \
        f"gap {run['gap']:.2f}% vs untrained {run['gap_untrained']:.2f}%"
    _report(9, f"trained greedy gap {run['gap']:.2f}% (untrained "
               f"{run['gap_untrained']:.2f}%) in {run['minutes']:.1f} min")


def test_c10_ablation_direction(desk_runs):
    full = desk_runs["cg_nab"]["gap"]
    coords = desk_runs["coords_only"]["gap"]
    dist = desk_runs["dist_only"]["gap"]
    assert full <= min(coords, dist) + 0.5, \
        f"cg+nab {full:.2f}% vs coords {coords:.2f}% / dist {dist:.2f}%"
    _report(10, f"cg+nab gap {full:.2f}% <= best ablation "
                f"min({coords:.2f}%, {dist:.2f}%) + 0.5pp")


# --------------------------------------------------------------------------
# criterion 11: paper constants wired and surfaced


def test_c11_constants_in_config_dumps(tmp_path):
    mdoc = json.loads(ModelConfig().to_json())
    assert mdoc["knn_k"] == 25
    assert mdoc["embed_dim"] == 128
    assert mdoc["n_heads"] == 8
    assert mdoc["n_layers"] == 12
    assert mdoc["ff_dim"] == 512
    tdoc = json.loads(TrainConfig().to_json())
    assert tdoc["lr"] == 4e-4
    assert tdoc["milestone_ratios"] == [0.9, 0.975]
    assert tdoc["gamma"] == 0.1
    assert tdoc["augment_factor"] == 8
    # the 200-epoch schedule reproduces the published milestones
    paper = TrainConfig(epochs=200)
    assert paper.milestones() == [180, 195]
    from rrnco.train import scheduled_lr

    assert scheduled_lr(paper, 181) == 4e-5
    _report(11, "k=25, E=128, 8 heads, 12 layers, ff 512, lr 4e-4, "
                "milestones 0.9/0.975, gamma 0.1, augment 8 all surfaced")


# --------------------------------------------------------------------------
# criterion 12: OSRM client fidelity


def test_c12_osrm_client(tmp_path):
    pts = [GeoPoint(0.004, 0.001), GeoPoint(-0.002, 0.003), GeoPoint(0.001, -0.004)]
    ep = OsrmEndpoint(base_url="http://osrm.test")
    dist = [[0.0, 815.25, 433.5], [798.75, 0.0, 641.125], [440.0, 655.375, 0.0]]
    dur = [[0.0, 97.5, 55.25], [95.125, 0.0, 76.75], [56.5, 80.875, 0.0]]
    (url,) = table_request_urls(pts, ep)
    write_fixture(tmp_path / "r0.txt", url, table_body(dur, dist))
    got_d, got_t = osrm_table_fetch(pts, ep, transport=FixtureTransport(tmp_path))
    assert np.array_equal(got_d, np.array(dist))
    assert np.array_equal(got_t, np.array(dur))

    rng = np.random.default_rng(12)
    n = 7
    dm = rng.uniform(100, 3000, size=(n, n))
    tm = rng.uniform(60, 600, size=(n, n))
    np.fill_diagonal(dm, 0)
    np.fill_diagonal(tm, 0)
    pts7 = [GeoPoint(float(rng.uniform(-0.01, 0.01)), float(rng.uniform(-0.01, 0.01)))
            for _ in range(n)]

    def transport_for(ep):
        bodies = {}
        urls = iter(table_request_urls(pts7, ep))
        blocks = [(lo, min(lo + ep.max_table_size, n))
                  for lo in range(0, n, ep.max_table_size)]
        for r0, r1 in blocks:
            for c0, c1 in blocks:
                bodies[next(urls)] = table_body(tm[r0:r1, c0:c1], dm[r0:r1, c0:c1])
        return DictTransport(bodies)

    ep3 = OsrmEndpoint(base_url="http://osrm.test", max_table_size=3)
    ep_full = OsrmEndpoint(base_url="http://osrm.test", max_table_size=100)
    d3, t3 = osrm_table_fetch(pts7, ep3, transport=transport_for(ep3))
    df, tf = osrm_table_fetch(pts7, ep_full, transport=transport_for(ep_full))
    assert np.array_equal(d3, df) and np.array_equal(t3, tf)
    _report(12, "fixture-driven 3x3 fetch bit-exact; chunked == single-call assembly")
