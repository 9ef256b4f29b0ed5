"""Network checks against a dense per-vertex reimplementation.

The oracle here loops over vertices and adjacency entries explicitly, so
it shares no code with the batched edge-list implementation under test.
"""

import json
import math

import numpy as np
import pytest

from uavd2d import autodiff as ad
from uavd2d.gnn import (
    WIDTHS,
    CheckpointError,
    GnnConfig,
    GnnParams,
    expected_shapes,
    forward,
    init_params,
    layer_forward,
    load_params,
    prepare_scenario,
    run_prepared,
    save_params,
)
from uavd2d.graphmodel import build_graph, default_init
from uavd2d.physics import Scenario, default_constants
from uavd2d.scenario import GenConfig, generate

C = default_constants()
CFG = GnnConfig(n_uav=4)


def default_case(seed=0):
    s = generate(GenConfig(seed=seed), 1).items[0]
    return s, build_graph(s, default_init(s, 4))


def mlp_np(x, blocks, prefix):
    h = np.maximum(x @ blocks[prefix + ".w1"] + blocks[prefix + ".b1"], 0.0)
    return h @ blocks[prefix + ".w2"] + blocks[prefix + ".b2"]


def hand_layer(graph, emb, blocks, l):
    out_w = blocks[f"l{l}.mlp2.w2"].shape[1]
    msg_w = blocks[f"l{l}.mlp1.w2"].shape[1]
    out = np.zeros((graph.n_nodes, out_w))
    for i in range(graph.n_nodes):
        msg = np.zeros(msg_w)
        for j in range(graph.n_nodes):
            a = graph.adj[i, j]
            if a == 0.0:
                continue
            msg = msg + mlp_np(np.concatenate([emb[j], [a]]), blocks, f"l{l}.mlp1")
        comb = np.concatenate([emb[i], msg])
        out[i] = np.maximum(mlp_np(comb, blocks, f"l{l}.mlp2"), 0.0)
    return out


def hand_forward(graph, blocks, s, area_half):
    emb = graph.node_feat
    for l in (1, 2, 3):
        emb = hand_layer(graph, emb, blocks, l)
    k = graph.n_du
    logits = emb[: graph.green_count] @ blocks["head_green.w"] + blocks["head_green.b"]
    per_uav = logits.reshape(graph.n_uav, k, 3).mean(axis=1)
    uav_xy = [
        (area_half * math.tanh(r[0]), area_half * math.tanh(r[1])) for r in per_uav
    ]
    p_uav = [s.constants.p_max_uav / (1.0 + math.exp(-r[2])) for r in per_uav]
    ylog = emb[graph.green_count :] @ blocks["head_yellow.w"] + blocks["head_yellow.b"]
    p_d2d = [s.constants.p_max_d2d / (1.0 + math.exp(-v)) for v in ylog[:, 0]]
    return uav_xy, p_uav, p_d2d


def test_expected_shapes_inventory():
    shapes = expected_shapes()
    assert len(shapes) == 28
    assert shapes["l1.mlp1.w1"] == (5, 32)
    assert shapes["l1.mlp2.w1"] == (36, 32)
    assert shapes["l2.mlp1.w1"] == (33, 64)
    assert shapes["l2.mlp2.w1"] == (96, 64)
    assert shapes["l3.mlp1.w1"] == (65, 32)
    assert shapes["l3.mlp2.w1"] == (96, 32)
    assert shapes["head_green.w"] == (32, 3)
    assert shapes["head_yellow.w"] == (32, 1)


def test_init_params_deterministic_and_bounded():
    a = init_params(0)
    b = init_params(0)
    c = init_params(1)
    assert set(a.blocks) == set(expected_shapes())
    for name, arr in a.blocks.items():
        assert np.array_equal(arr, b.blocks[name])
        shape = expected_shapes()[name]
        assert arr.shape == shape
        if len(shape) == 1:
            assert np.all(arr == 0.0)
        else:
            bound = math.sqrt(6.0 / (shape[0] + shape[1]))
            assert np.all(np.abs(arr) <= bound)
            assert np.abs(arr).max() > 0.5 * bound  # actually random, not zeros
    assert any(
        not np.array_equal(a.blocks[n], c.blocks[n])
        for n in a.blocks
        if a.blocks[n].ndim == 2
    )


def test_one_layer_matches_dense_oracle():
    s, graph = default_case(seed=3)
    params = init_params(7)
    got = layer_forward(1, graph, graph.node_feat, params)
    want = hand_layer(graph, graph.node_feat, params.blocks, 1)
    assert got.shape == (22, 32)
    np.testing.assert_allclose(got, want, rtol=1e-9, atol=1e-12)


def test_full_forward_matches_dense_oracle():
    s, graph = default_case(seed=8)
    params = init_params(2)
    d = forward(s, params, CFG)
    uav_xy, p_uav, p_d2d = hand_forward(graph, params.blocks, s, CFG.area_half)
    for (gx, gy), (wx, wy) in zip(d.uav_xy, uav_xy):
        assert gx == pytest.approx(wx, rel=1e-9, abs=1e-12)
        assert gy == pytest.approx(wy, rel=1e-9, abs=1e-12)
    for g, w in zip(d.p_uav, p_uav):
        assert g == pytest.approx(w, rel=1e-9, abs=1e-15)
    for g, w in zip(d.p_d2d, p_d2d):
        assert g == pytest.approx(w, rel=1e-9, abs=1e-15)


def test_isolated_vertex_gets_zero_message():
    # a 1-transmitter, 1-user, 0-pair scenario has a single vertex with
    # no incident edges, so each round reduces to MLP2 on [x, zeros]
    cfg0 = GenConfig(seed=4, n_uav=1, n_du=1, n_d2d=0)
    s = generate(cfg0, 1).items[0]
    graph = build_graph(s, default_init(s, 1))
    params = init_params(5)
    emb = graph.node_feat
    got = layer_forward(1, graph, emb, params)
    comb = np.concatenate([emb[0], np.zeros(32)])
    want = np.maximum(mlp_np(comb, params.blocks, "l1.mlp2"), 0.0)
    np.testing.assert_allclose(got[0], want, rtol=1e-9, atol=1e-12)
    d = forward(s, params, GnnConfig(n_uav=1))
    assert len(d.p_uav) == 1 and d.p_d2d == []


def test_zero_params_give_center_and_half_cap():
    s, _ = default_case(seed=1)
    shapes = expected_shapes()
    zero = GnnParams({n: np.zeros(sh) for n, sh in shapes.items()})
    d = forward(s, zero, CFG)
    for x, y in d.uav_xy:
        assert x == 0.0 and y == 0.0
    for p in d.p_uav:
        assert p == pytest.approx(0.5, rel=1e-12)
    for p in d.p_d2d:
        assert p == pytest.approx(0.005, rel=1e-12)


def test_outputs_always_respect_caps_and_area():
    rng = np.random.default_rng(0)
    shapes = expected_shapes()
    for trial in range(8):
        s = generate(GenConfig(seed=100 + trial), 1).items[0]
        scale = 10.0 ** rng.uniform(-1, 2)
        blocks = {
            n: (rng.standard_normal(sh) * scale if len(sh) > 1 else rng.standard_normal(sh))
            for n, sh in shapes.items()
        }
        d = forward(s, GnnParams(blocks), CFG)
        for x, y in d.uav_xy:
            assert abs(x) <= CFG.area_half and abs(y) <= CFG.area_half
        for p in d.p_uav:
            assert 0.0 < p <= C.p_max_uav
        for p in d.p_d2d:
            assert 0.0 < p <= C.p_max_d2d


def test_forward_is_deterministic():
    s, _ = default_case(seed=6)
    params = init_params(3)
    d1 = forward(s, params, CFG)
    d2 = forward(s, params, CFG)
    assert d1.uav_xy == d2.uav_xy
    assert d1.p_uav == d2.p_uav
    assert d1.p_d2d == d2.p_d2d


def test_d2d_permutation_equivariance():
    s, _ = default_case(seed=9)
    params = init_params(11)
    perm = [4, 2, 0, 5, 3, 1]
    s2 = Scenario(s.du_xy, s.dt_xy[perm], s.dr_xy[perm], C)
    d1 = forward(s, params, CFG)
    d2 = forward(s2, params, CFG)
    for a, b in zip(d1.uav_xy, d2.uav_xy):
        assert a[0] == pytest.approx(b[0], abs=1e-9)
        assert a[1] == pytest.approx(b[1], abs=1e-9)
    for a, b in zip(d1.p_uav, d2.p_uav):
        assert a == pytest.approx(b, rel=1e-9)
    for m, pm in enumerate(perm):
        assert d2.p_d2d[m] == pytest.approx(d1.p_d2d[pm], rel=1e-9)


def test_traced_forward_matches_plain():
    s, _ = default_case(seed=12)
    params = init_params(4)
    prep = prepare_scenario(s, CFG)
    plain = run_prepared(prep, params.blocks, s, CFG)
    tr = ad.Trace()
    traced_blocks = {n: tr.var(a) for n, a in params.blocks.items()}
    traced = run_prepared(prep, traced_blocks, s, CFG)
    for (px, py), (tx, ty) in zip(plain.uav_xy, traced.uav_xy):
        assert tx.value == px and ty.value == py
    for p, t in zip(plain.p_uav, traced.p_uav):
        assert t.value == p
    for p, t in zip(plain.p_d2d, traced.p_d2d):
        assert t.value == p


def test_run_prepared_rejects_wrong_uav_count():
    s, _ = default_case()
    prep = prepare_scenario(s, CFG)
    with pytest.raises(ValueError):
        run_prepared(prep, init_params(0).blocks, s, GnnConfig(n_uav=3))


def test_checkpoint_round_trip(tmp_path):
    params = init_params(17)
    path = tmp_path / "ckpt.json"
    save_params(params, path)
    back = load_params(path)
    assert back.widths == WIDTHS
    for name, arr in params.blocks.items():
        assert np.array_equal(back.blocks[name], arr)
    s, _ = default_case(seed=2)
    d1 = forward(s, params, CFG)
    d2 = forward(s, back, CFG)
    assert d1.p_uav == d2.p_uav and d1.uav_xy == d2.uav_xy


def test_checkpoint_rejects_structural_damage(tmp_path):
    params = init_params(0)
    path = tmp_path / "ok.json"
    save_params(params, path)
    payload = json.loads(path.read_text())

    def reject(mutate):
        bad = json.loads(path.read_text())
        mutate(bad)
        p = tmp_path / "bad.json"
        p.write_text(json.dumps(bad))
        with pytest.raises(CheckpointError):
            load_params(p)

    reject(lambda d: d.update(format="other"))
    reject(lambda d: d.update(version=2))
    reject(lambda d: d["blocks"].pop("l1.mlp1.w1"))
    reject(lambda d: d["blocks"].update(stray={"shape": [1], "data": [0.0]}))
    reject(lambda d: d["blocks"]["l1.mlp1.w1"]["data"].pop())
    reject(
        lambda d: d["blocks"]["head_green.b"].update(
            shape=[3], data=[0.0, None, 0.0]
        )
    )
    bad = tmp_path / "notjson.json"
    bad.write_text("{")
    with pytest.raises(CheckpointError):
        load_params(bad)
    assert json.loads(path.read_text()) == payload  # originals untouched
