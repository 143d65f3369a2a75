import numpy as np
import pytest

from chainrec import autodiff as ad
from chainrec.autodiff import ParamStore, Tensor
from chainrec.catalog import Catalog, SynthConfig, generate_synthetic
from chainrec.env import OptionKind, SessionState, reset_session
from chainrec.graph_state import (
    ROLE_REJ_ITEM,
    attribute_preference_score,
    build_dynamic_graph,
    encode_state,
    encode_states_batch,
    gcn_encode,
    init_encoder_params,
    item_preference_score,
    prune_candidates,
    pruned_candidates,
)
from chainrec.kg_embed import EmbeddingTable
from chainrec.optim import finite_diff_check

SIGMA_1 = 0.7310585786300049  # sigmoid(1), hand value


def micro_catalog() -> Catalog:
    # 1 user, 1 item with attributes {0, 1}, 2 attributes
    return Catalog(1, [(0, (0, 1))], [(0, 0), (1, 0)], [(0, 0)],
                   [(1, 0, 2), (1, 0, 3)])


def micro_table(vectors: dict[int, tuple[float, float]], n: int) -> EmbeddingTable:
    ent = np.zeros((n, 2))
    for i, v in vectors.items():
        ent[i] = v
    return EmbeddingTable(ent, np.zeros((1, 2)))


def test_item_score_zero_embeddings():
    c = micro_catalog()
    s = SessionState(user=0, target=0, acc_attrs=(0,))
    tbl = micro_table({}, c.num_entities)
    assert item_preference_score(s, tbl, c, 0) == pytest.approx(0.5)


def test_item_score_hand_value():
    c = micro_catalog()
    # entities: user 0, item 1, attrs 2..3
    tbl = micro_table({0: (1, 0), 1: (1, 0), 2: (0, 1)}, c.num_entities)
    s = SessionState(user=0, target=0, acc_attrs=(0,))
    # e_u.e_v = 1, e_v.e_p = 0 -> sigmoid(1)
    assert item_preference_score(s, tbl, c, 0) == pytest.approx(SIGMA_1, abs=1e-12)


def test_item_score_zero_vector_rejection_no_change():
    c = micro_catalog()
    tbl = micro_table({0: (1, 0), 1: (1, 0), 2: (0, 1)}, c.num_entities)
    base = item_preference_score(SessionState(0, 0, (0,)), tbl, c, 0)
    with_rej = item_preference_score(SessionState(0, 0, (0,), rej_attrs=(1,)), tbl, c, 0)
    assert with_rej == pytest.approx(base, abs=1e-15)  # attr 1 embeds to zero


def test_attribute_score_cases():
    c = micro_catalog()
    zero = micro_table({}, c.num_entities)
    s = SessionState(user=0, target=0, acc_attrs=(0,))
    assert attribute_preference_score(s, zero, c, 1) == pytest.approx(0.5)
    # accepted attr and the query attr share direction -> sigmoid(1)
    tbl = micro_table({2: (1, 0), 3: (1, 0)}, c.num_entities)
    assert attribute_preference_score(s, tbl, c, 1) == pytest.approx(SIGMA_1, abs=1e-12)
    # orthogonal to user and every answered attribute -> 0.5
    tbl2 = micro_table({0: (1, 0), 2: (1, 0), 3: (0, 1)}, c.num_entities)
    assert attribute_preference_score(s, tbl2, c, 1) == pytest.approx(0.5)


def test_scores_strictly_inside_unit_interval():
    c = generate_synthetic(SynthConfig(2, 20, 10, 2, 3, 2), seed=0)
    rng = np.random.default_rng(0)
    tbl = EmbeddingTable(rng.normal(size=(c.num_entities, 4)) * 10, np.zeros((2, 4)))
    s = reset_session(c, 0, 3, rng=1)
    for item in range(c.num_items):
        assert 0.0 < item_preference_score(s, tbl, c, item) < 1.0


def test_prune_fewer_than_k():
    out = prune_candidates(np.array([4, 7, 9]), np.array([0.1, 0.2, 0.3]), k=5)
    assert list(out) == [9, 7, 4]


def test_prune_hand_order():
    out = prune_candidates(np.array([10, 11, 12]), np.array([0.9, 0.1, 0.5]), k=2)
    assert list(out) == [10, 12]


def test_prune_tie_breaks_ascending():
    out = prune_candidates(np.array([5, 3, 4]), np.array([0.5, 0.5, 0.5]), k=2)
    assert list(out) == [3, 4]


def test_prune_rejects_bad_k():
    with pytest.raises(ValueError, match="positive"):
        prune_candidates(np.array([1]), np.array([0.5]), k=0)


def test_prune_subset_and_deterministic():
    rng = np.random.default_rng(3)
    ids = rng.permutation(50)[:20]
    scores = rng.uniform(size=20)
    a = prune_candidates(ids, scores, 7)
    b = prune_candidates(ids, scores, 7)
    assert np.array_equal(a, b)
    assert set(a) <= set(ids)


def test_build_graph_fresh_session_edge_count():
    c = micro_catalog()
    s = reset_session(c, 0, 0, rng=0)
    tbl = micro_table({0: (1, 0), 1: (1, 0), 2: (0, 1), 3: (1, 1)}, c.num_entities)
    g = build_dynamic_graph(s, tbl, c)
    # nodes: user, accepted attr, candidate attr, item
    assert g.num_nodes == 4
    # undirected edges: user-item, item-acc attr, item-cand attr
    assert g.edge_src.shape[0] == 6
    pairs = {tuple(sorted((int(a), int(b)))) for a, b in zip(g.edge_src, g.edge_dst)}
    assert len(pairs) == 3
    item_pos = int(g.cand_item_pos[0])
    assert (0, item_pos) in pairs


def test_build_graph_no_candidates_isolates_user():
    c = micro_catalog()
    s = SessionState(user=0, target=0, acc_attrs=(0,), rej_items=(0,))
    g = build_dynamic_graph(s, micro_table({}, c.num_entities), c)
    assert g.degrees[0] == 0.0
    assert g.edge_src.shape[0] == 0


def test_build_graph_rejected_item_degree_zero():
    c = Catalog(1, [(0, (0,)), (1, (0,))], [(0, 0)], [(0, 0)], [(1, 0, 3)])
    s = SessionState(user=0, target=0, acc_attrs=(0,), rej_items=(1,))
    tbl = micro_table({}, c.num_entities)
    g = build_dynamic_graph(s, tbl, c)
    rejected_nodes = np.nonzero(g.roles == ROLE_REJ_ITEM)[0]
    assert rejected_nodes.shape[0] == 1
    assert g.degrees[rejected_nodes[0]] == 0.0


def test_star_graph_normalization():
    # user connected to k candidate items of one attribute each, all weight 1
    k = 4
    items = [(i, (0,)) for i in range(k)]
    c = Catalog(1, items, [(0, 0)], [(0, 0)], [(1, 0, 1 + k)])
    tbl = EmbeddingTable(np.zeros((c.num_entities, 2)), np.zeros((1, 2)))
    s = SessionState(user=0, target=0, acc_attrs=(0,))
    g = build_dynamic_graph(s, tbl, c)
    # user degree = k * 0.5 (sigmoid(0) edge weights); attr-item edges weight 1
    # check a unit-weight star instead: attr node is the hub of the k items
    attr_pos = 1
    hub_deg = g.degrees[attr_pos]
    assert hub_deg == pytest.approx(k)
    for src, dst, w in zip(g.edge_src, g.edge_dst, g.edge_norm_w):
        if int(src) == attr_pos and g.roles[int(dst)] == 4:
            item_deg = g.degrees[int(dst)]
            assert w == pytest.approx(1.0 / np.sqrt(hub_deg * item_deg))


def encoder_store(dim: int, n_entities: int, seed: int) -> ParamStore:
    rng = np.random.default_rng(seed)
    store = ParamStore()
    store.add("embed/entities", rng.normal(size=(n_entities, dim)) * 0.5)
    init_encoder_params(store, dim, rng)
    return store


def dense_gcn_oracle(graph, features, w0, b0, w1, b1):
    """Dense-matrix two-layer GCN, written independently of gcn_encode."""
    n = graph.num_nodes
    adj = np.zeros((n, n))
    for s, d, w in zip(graph.edge_src, graph.edge_dst, graph.edge_norm_w):
        adj[int(d), int(s)] = w  # message flows src -> dst
    x = features
    for w_mat, b_mat in ((w0, b0), (w1, b1)):
        x = np.maximum(adj @ x @ w_mat + x @ b_mat, 0.0)
    return x


def test_gcn_single_isolated_node():
    c = micro_catalog()
    s = SessionState(user=0, target=0, acc_attrs=(0,), rej_items=(0,))
    store = encoder_store(4, c.num_entities, seed=1)
    g = build_dynamic_graph(s, EmbeddingTable(store["embed/entities"].data, None), c)
    reps = gcn_encode(g, store["embed/entities"], store).data
    b0, b1 = store["gcn/b0"].data, store["gcn/b1"].data
    e = store["embed/entities"].data[g.node_entities]
    expected = np.maximum(np.maximum(e @ b0, 0.0) @ b1, 0.0)
    assert np.allclose(reps, expected, atol=1e-12)


def test_gcn_matches_dense_oracle():
    c = generate_synthetic(SynthConfig(2, 12, 8, 2, 3, 2), seed=6)
    store = encoder_store(6, c.num_entities, seed=2)
    tbl = EmbeddingTable(store["embed/entities"].data.copy(), np.zeros((2, 6)))
    s = reset_session(c, 0, 5, rng=1)
    g = build_dynamic_graph(s, tbl, c, k_item=5, k_attr=5)
    reps = gcn_encode(g, store["embed/entities"], store).data
    oracle = dense_gcn_oracle(g, tbl.entity_vectors[g.node_entities],
                              store["gcn/w0"].data, store["gcn/b0"].data,
                              store["gcn/w1"].data, store["gcn/b1"].data)
    assert np.allclose(reps, oracle, atol=1e-10)


def test_gcn_two_node_hand_case():
    # one candidate item, no free attributes: user-item edge only
    c = Catalog(1, [(0, (0,))], [(0, 0)], [(0, 0)], [(1, 0, 2)])
    store = encoder_store(3, c.num_entities, seed=3)
    # identity weights make mixing explicit
    for name in ("gcn/w0", "gcn/b0", "gcn/w1", "gcn/b1"):
        store[name].data[:] = np.eye(3)
    ent = np.abs(store["embed/entities"].data) + 0.1  # keep ReLU inactive
    store["embed/entities"].data[:] = ent
    tbl = EmbeddingTable(ent.copy(), np.zeros((1, 3)))
    s = SessionState(user=0, target=0, acc_attrs=(0,))
    g = build_dynamic_graph(s, tbl, c)
    reps = gcn_encode(g, store["embed/entities"], store).data
    oracle = dense_gcn_oracle(g, ent[g.node_entities], *(np.eye(3),) * 4)
    assert np.allclose(reps, oracle, atol=1e-12)


def test_gcn_permutation_equivariance():
    c = generate_synthetic(SynthConfig(2, 12, 8, 2, 3, 2), seed=7)
    store = encoder_store(4, c.num_entities, seed=4)
    tbl = EmbeddingTable(store["embed/entities"].data.copy(), np.zeros((2, 4)))
    s = reset_session(c, 0, 3, rng=2)
    g = build_dynamic_graph(s, tbl, c, k_item=5, k_attr=5)
    reps = gcn_encode(g, store["embed/entities"], store).data

    perm = np.random.default_rng(5).permutation(g.num_nodes)
    inv = np.argsort(perm)
    permuted = build_dynamic_graph(s, tbl, c, k_item=5, k_attr=5)
    permuted.node_entities = g.node_entities[perm]
    permuted.edge_src = inv[g.edge_src]
    permuted.edge_dst = inv[g.edge_dst]
    permuted.degrees = g.degrees[perm]
    reps_perm = gcn_encode(permuted, store["embed/entities"], store).data
    assert np.allclose(reps_perm, reps[perm], atol=1e-12)


def test_encode_state_single_row_identity():
    c = micro_catalog()
    store = encoder_store(4, c.num_entities, seed=8)
    tbl = EmbeddingTable(store["embed/entities"].data.copy(), np.zeros((1, 4)))
    s = reset_session(c, 0, 0, rng=0)
    g = build_dynamic_graph(s, tbl, c)
    reps = gcn_encode(g, store["embed/entities"], store)
    vec = encode_state(s, reps, store)
    # single accepted attribute: pooled vector equals the transformed row
    from chainrec.graph_state import _transform_sequence
    row = ad.gather_rows(reps, g.acc_positions)
    expected = _transform_sequence(row, store, 2, None, None).data
    assert np.allclose(vec.data, expected, atol=1e-12)
    assert vec.data.shape == (1, 4)


def test_encode_state_duplicate_rows_pool_to_same():
    dim = 4
    rng = np.random.default_rng(9)
    store = ParamStore()
    init_encoder_params(store, dim, rng)
    row = rng.normal(size=(1, dim))
    single = ad.mean_pool(
        __import__("chainrec.graph_state", fromlist=["_transform_sequence"])
        ._transform_sequence(Tensor(row), store, 2, None, None))
    double = ad.mean_pool(
        __import__("chainrec.graph_state", fromlist=["_transform_sequence"])
        ._transform_sequence(Tensor(np.vstack([row, row])), store, 2, None, None))
    assert np.allclose(single.data, double.data, atol=1e-10)


def test_encode_state_matches_pipeline_oracle():
    """Step-by-step numpy rebuild of attention + FFN + LayerNorm + pooling."""
    dim, heads = 4, 2
    rng = np.random.default_rng(10)
    store = ParamStore()
    init_encoder_params(store, dim, rng)
    x = rng.normal(size=(3, dim))

    def oracle(x):
        wq, wk, wv, wo = (store[f"attn/{n}"].data for n in ("wq", "wk", "wv", "wo"))
        dh = dim // heads
        q, k, v = x @ wq, x @ wk, x @ wv
        heads_out = []
        for h in range(heads):
            sl = slice(h * dh, (h + 1) * dh)
            sc = q[:, sl] @ k[:, sl].T / np.sqrt(dh)
            e = np.exp(sc - sc.max(axis=1, keepdims=True))
            a = e / e.sum(axis=1, keepdims=True)
            heads_out.append(a @ v[:, sl])
        att = np.concatenate(heads_out, axis=1) @ wo
        z = att + x
        h1 = np.maximum(z @ store["ffn/w1"].data + store["ffn/b1"].data, 0.0)
        h2 = h1 @ store["ffn/w2"].data + store["ffn/b2"].data
        mu = h2.mean(axis=1, keepdims=True)
        var = h2.var(axis=1, keepdims=True)
        normed = (h2 - mu) / np.sqrt(var + 1e-8)
        out = normed * store["ln/gamma"].data + store["ln/beta"].data
        return out.mean(axis=0, keepdims=True)

    state = SessionState(user=0, target=0, acc_attrs=(0, 1, 2))
    reps = Tensor(np.vstack([np.zeros(dim), x]))  # row 0 plays the user node
    got = encode_state(state, reps, store, heads=heads)
    assert np.allclose(got.data, oracle(x), atol=1e-10)


def test_encode_state_requires_accepted_attrs():
    store = ParamStore()
    init_encoder_params(store, 4, np.random.default_rng(0))
    s = SessionState(user=0, target=0, acc_attrs=())
    with pytest.raises(ValueError, match="no accepted attributes"):
        encode_state(s, Tensor(np.zeros((1, 4))), store)


def test_batch_encoding_matches_single():
    c = generate_synthetic(SynthConfig(3, 30, 12, 3, 3, 3), seed=11)
    store = encoder_store(6, c.num_entities, seed=12)
    tbl = EmbeddingTable(store["embed/entities"].data.copy(), np.zeros((2, 6)))
    states = []
    rng = np.random.default_rng(13)
    for episode in c.interactions[:4]:
        s = reset_session(c, episode[0], episode[1], rng=rng)
        from chainrec.env import Choice, apply_choice_outcome, candidate_actions, \
            simulate_user_response
        asks = candidate_actions(s, OptionKind.ASK, c)
        ch = Choice("attribute", int(asks[0]))
        s = apply_choice_outcome(s, ch, simulate_user_response(s, ch), c)
        states.append(s)
    graphs = [build_dynamic_graph(s, tbl, c, 5, 5) for s in states]
    batch_vecs, _, _ = encode_states_batch(graphs, store["embed/entities"], store)
    for i, (s, g) in enumerate(zip(states, graphs)):
        reps = gcn_encode(g, store["embed/entities"], store)
        single = encode_state(s, reps, store, acc_positions=g.acc_positions)
        assert np.allclose(batch_vecs.data[i], single.data[0], atol=1e-10)


def test_encoder_gradients_pass_finite_differences():
    c = micro_catalog()
    store = encoder_store(4, c.num_entities, seed=14)
    tbl = EmbeddingTable(store["embed/entities"].data.copy(), np.zeros((1, 4)))
    s = reset_session(c, 0, 0, rng=3)
    graph = build_dynamic_graph(s, tbl, c)
    head = np.random.default_rng(15).normal(size=(4, 1))  # fixed scalar head

    def f(params, tape):
        reps = gcn_encode(graph, params["embed/entities"], params, tape)
        vec = encode_state(s, reps, params, tape, acc_positions=graph.acc_positions)
        return ad.sum_all(ad.matmul(vec, Tensor(head), tape), tape)

    assert finite_diff_check(f, store, eps=1e-5) <= 1e-4


def test_pruned_candidates_shapes():
    c = generate_synthetic(SynthConfig(3, 40, 15, 3, 3, 3), seed=15)
    tbl = EmbeddingTable(np.random.default_rng(16).normal(size=(c.num_entities, 4)),
                         np.zeros((2, 4)))
    s = reset_session(c, 0, 7, rng=4)
    pruned = pruned_candidates(s, tbl, c, k_item=5, k_attr=3)
    assert pruned[OptionKind.REC].shape[0] <= 5
    assert pruned[OptionKind.ASK].shape[0] <= 3
