import numpy as np
import pytest

from rangefuse.nn import tensor as T
from rangefuse.nn.layers import GatLayerParams, conv1d, gat_layer, gru_step, linear, mlp
from rangefuse.nn.optim import ParamStore
from rangefuse.nn.tensor import Tensor, grad_check

NODE_TYPES = ("a", "b")
EDGE_TYPES = ("fwd", "rev", "self")


def test_linear_shapes_and_values():
    store = ParamStore(seed=0)
    x = Tensor(np.array([1.0, 2.0, 3.0]))
    out = linear(x, store, "lin", 3, 2)
    w = store.params["lin.w"].data
    b = store.params["lin.b"].data
    assert out.shape == (2,)
    assert np.allclose(out.data, x.data @ w + b)
    batch = linear(Tensor(np.ones((4, 3))), store, "lin", 3, 2)
    assert batch.shape == (4, 2)


def test_mlp_layer_naming_and_final_activation():
    store = ParamStore(seed=1)
    x = Tensor(np.ones((2, 5)))
    out = mlp(x, store, "head", (5, 7, 3))
    assert out.shape == (2, 3)
    assert {"head.l0.w", "head.l0.b", "head.l1.w", "head.l1.b"} <= set(store.names())
    bounded = mlp(x, store, "head2", (5, 7, 3), final_activation=T.tanh)
    assert np.all(np.abs(bounded.data) < 1.0)
    with pytest.raises(ValueError):
        mlp(x, store, "bad", (5,))


def test_conv1d_matches_manual_correlation():
    rng = np.random.default_rng(2)
    store = ParamStore(seed=3)
    x_np = rng.normal(size=(3, 9))
    out = conv1d(Tensor(x_np), store, "c", 3, 4, kernel=3)
    w = store.params["c.w"].data  # (out, in, k)
    b = store.params["c.b"].data
    assert out.shape == (4, 7)
    expect = np.zeros((4, 7))
    for o in range(4):
        for t in range(7):
            expect[o, t] = b[o] + sum(
                w[o, i, k] * x_np[i, t + k] for i in range(3) for k in range(3)
            )
    assert np.allclose(out.data, expect, atol=1e-12)


def test_conv1d_identity_kernel_passthrough():
    store = ParamStore(seed=4)
    # force a kernel that copies channel 0 at the center tap
    _ = conv1d(Tensor(np.zeros((1, 5))), store, "c", 1, 1, kernel=3)
    store.params["c.w"].data[:] = 0.0
    store.params["c.w"].data[0, 0, 1] = 1.0
    store.params["c.b"].data[:] = 0.0
    x = np.arange(5.0).reshape(1, 5)
    out = conv1d(Tensor(x), store, "c", 1, 1, kernel=3)
    assert np.allclose(out.data, x[:, 1:4])


def test_conv1d_short_input_errors():
    store = ParamStore(seed=5)
    with pytest.raises(ValueError):
        conv1d(Tensor(np.zeros((2, 2))), store, "c", 2, 2, kernel=3)


def test_conv1d_gradients():
    rng = np.random.default_rng(6)
    store = ParamStore(seed=7)
    x = Tensor(rng.normal(size=(2, 6)), requires_grad=True)
    _ = conv1d(x, store, "c", 2, 3, kernel=3)
    params = {"x": x, "w": store.params["c.w"], "b": store.params["c.b"]}
    worst, at = grad_check(
        lambda: T.tensor_sum(T.tanh(conv1d(x, store, "c", 2, 3, kernel=3))), params)
    assert worst < 1e-6, at


def test_gru_zero_state_zero_weights_fixed_point():
    store = ParamStore(seed=8)
    x = Tensor(np.zeros(4))
    h = Tensor(np.zeros(5))
    _ = gru_step(x, h, store, "g", 4, 5)
    for name in store.names():
        store.params[name].data[:] = 0.0
    out = gru_step(x, h, store, "g", 4, 5)
    assert np.allclose(out.data, np.zeros(5))  # z=0.5, n=0, h=0 -> 0
    h1 = Tensor(np.full(5, 0.8))
    out1 = gru_step(x, h1, store, "g", 4, 5)
    assert np.allclose(out1.data, 0.4)  # (1-z)*n + z*h = 0.5*0.8


def test_gru_state_stays_bounded():
    rng = np.random.default_rng(9)
    store = ParamStore(seed=10)
    h = Tensor(np.zeros(6))
    for _ in range(50):
        x = Tensor(rng.normal(size=3) * 5.0)
        h = gru_step(x, h, store, "g", 3, 6)
        assert np.all(np.abs(h.data) < 1.0)  # convex combo of tanh and prior state


def test_gru_bptt_gradients_five_steps():
    rng = np.random.default_rng(11)
    store = ParamStore(seed=12)
    xs = [Tensor(rng.normal(size=3)) for _ in range(5)]
    _ = gru_step(xs[0], Tensor(np.zeros(4)), store, "g", 3, 4)

    def fn():
        h = Tensor(np.zeros(4))
        for x in xs:
            h = gru_step(x, h, store, "g", 3, 4)
        return T.tensor_sum(T.mul(h, h))

    params = {n: store.params[n] for n in store.names()}
    worst, at = grad_check(fn, params)
    assert worst < 1e-5, at


def _tiny_graph():
    # two type-a nodes, one type-b node; bidirectional + self edges, sorted by (dst, src)
    edge_src = np.array([0, 2, 1, 2, 0, 1, 2])
    edge_dst = np.array([0, 0, 1, 1, 2, 2, 2])
    edge_type = np.array([2, 1, 2, 1, 0, 0, 2])
    blocks = [("a", 0, 2), ("b", 2, 3)]
    return blocks, edge_src, edge_dst, edge_type


def test_gat_layer_matches_numpy_reference():
    rng = np.random.default_rng(13)
    store = ParamStore(seed=14)
    blocks, src, dst, etype = _tiny_graph()
    feats = rng.normal(size=(3, 4))
    params = GatLayerParams(in_dim=4, heads=2, head_dim=3,
                            node_types=NODE_TYPES, edge_types=EDGE_TYPES)
    out = gat_layer(Tensor(feats), blocks, src, dst, etype, store, "gat", params)

    # independent numpy replay
    proj = np.zeros((3, 2, 3))
    for name, lo, hi in blocks:
        w = store.params[f"gat.proj.{name}"].data
        proj[lo:hi] = (feats[lo:hi] @ w).reshape(hi - lo, 2, 3)
    a_src = store.params["gat.att_src"].data
    a_dst = store.params["gat.att_dst"].data
    scores = np.einsum("ehd,ehd->eh", proj[src], a_src[etype]) + \
        np.einsum("ehd,ehd->eh", proj[dst], a_dst[etype])
    scores = np.where(scores > 0, scores, 0.2 * scores)
    alpha = np.zeros_like(scores)
    agg = np.zeros((3, 2, 3))
    for node in range(3):
        sel = dst == node
        e = np.exp(scores[sel] - scores[sel].max(axis=0))
        alpha[sel] = e / e.sum(axis=0)
        agg[node] = np.einsum("eh,ehd->hd", alpha[sel], proj[src][sel])
    expect = np.tanh(agg.reshape(3, 6))
    assert np.allclose(out.data, expect, atol=1e-12)


def test_gat_layer_average_heads_output_dim():
    rng = np.random.default_rng(15)
    store = ParamStore(seed=16)
    blocks, src, dst, etype = _tiny_graph()
    params = GatLayerParams(in_dim=4, heads=2, head_dim=5, node_types=NODE_TYPES,
                            edge_types=EDGE_TYPES, average_heads=True)
    out = gat_layer(Tensor(rng.normal(size=(3, 4))), blocks, src, dst, etype, store, "g2", params)
    assert out.shape == (3, 5)
    assert params.out_dim == 5


def test_gat_singleton_node_self_attention_is_identity_weight():
    # one node, one self edge: alpha must be exactly 1 regardless of scores
    store = ParamStore(seed=17)
    params = GatLayerParams(in_dim=3, heads=2, head_dim=2,
                            node_types=("a",), edge_types=("self",))
    feats = np.array([[0.3, -1.2, 0.5]])
    out = gat_layer(Tensor(feats), [("a", 0, 1)], np.array([0]), np.array([0]),
                    np.array([0]), store, "g3", params)
    w = store.params["g3.proj.a"].data
    expect = np.tanh(feats @ w)
    assert np.allclose(out.data, expect, atol=1e-14)


def test_gat_layer_permutation_equivariance():
    rng = np.random.default_rng(18)
    store = ParamStore(seed=19)
    n_a = 5
    feats = rng.normal(size=(n_a + 1, 4))
    src = np.concatenate([np.arange(n_a), np.full(n_a, n_a), [n_a]])
    dst = np.concatenate([np.full(n_a, n_a), np.arange(n_a), [n_a]])
    etype = np.concatenate([np.zeros(n_a, int), np.ones(n_a, int), [2]])
    order = np.lexsort((src, dst))
    blocks = [("a", 0, n_a), ("b", n_a, n_a + 1)]
    params = GatLayerParams(in_dim=4, heads=2, head_dim=3,
                            node_types=NODE_TYPES, edge_types=EDGE_TYPES)
    base = gat_layer(Tensor(feats), blocks, src[order], dst[order], etype[order],
                     store, "g4", params)

    perm = np.array([3, 0, 4, 1, 2])  # permute type-a nodes only
    inv = np.argsort(perm)
    feats_p = feats.copy()
    feats_p[:n_a] = feats[perm]
    remap = np.concatenate([inv, [n_a]])
    src_p, dst_p = remap[src], remap[dst]
    order_p = np.lexsort((src_p, dst_p))
    out_p = gat_layer(Tensor(feats_p), blocks, src_p[order_p], dst_p[order_p],
                      etype[order_p], store, "g4", params)
    assert np.allclose(out_p.data[:n_a], base.data[perm], atol=1e-12)
    assert np.allclose(out_p.data[n_a], base.data[n_a], atol=1e-12)


def test_gat_layer_validates_inputs():
    store = ParamStore(seed=20)
    params = GatLayerParams(in_dim=3, heads=1, head_dim=2,
                            node_types=("a",), edge_types=("self",))
    feats = Tensor(np.zeros((2, 3)))
    with pytest.raises(ValueError):  # blocks must partition rows
        gat_layer(feats, [("a", 0, 1)], np.array([0]), np.array([0]), np.array([0]),
                  store, "g5", params)
    with pytest.raises(ValueError):  # edges must be sorted by (dst, src)
        gat_layer(feats, [("a", 0, 2)], np.array([1, 0]), np.array([1, 0]),
                  np.array([0, 0]), store, "g5", params)
    with pytest.raises(ValueError):  # dangling edge index
        gat_layer(feats, [("a", 0, 2)], np.array([0, 5]), np.array([0, 1]),
                  np.array([0, 0]), store, "g5", params)


def test_gat_layer_gradients():
    rng = np.random.default_rng(21)
    store = ParamStore(seed=22)
    blocks, src, dst, etype = _tiny_graph()
    feats = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    params = GatLayerParams(in_dim=4, heads=2, head_dim=3,
                            node_types=NODE_TYPES, edge_types=EDGE_TYPES)
    _ = gat_layer(feats, blocks, src, dst, etype, store, "g6", params)
    check = {n: store.params[n] for n in store.names() if n.startswith("g6.")}
    check["feats"] = feats

    def fn():
        out = gat_layer(feats, blocks, src, dst, etype, store, "g6", params)
        return T.tensor_sum(T.mul(out, out))

    worst, at = grad_check(fn, check)
    assert worst < 1e-5, at
