"""Per-timestep session graph, candidate scoring/pruning, and state encoding.

Node order inside a graph is fixed: user, accepted attributes (acceptance
order), pruned candidate attributes (score order), rejected attributes,
pruned candidate items (score order), rejected items. Rejected nodes are
isolated; the user connects to candidate items with their preference score
and candidate items connect to their own attribute nodes with weight 1.

Preference scores enter the adjacency as constants: gradients flow through
the GCN/attention parameters and the layer-0 embeddings, not through the
edge weights.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Tape, Tensor
from .catalog import Catalog
from .env import OptionKind, SessionState, candidate_sets
from .kg_embed import EmbeddingTable

ROLE_USER, ROLE_ACC_ATTR, ROLE_CAND_ATTR, ROLE_REJ_ATTR = 0, 1, 2, 3
ROLE_CAND_ITEM, ROLE_REJ_ITEM = 4, 5


@dataclass
class DynamicGraph:
    node_entities: np.ndarray  # global entity ids, graph node order
    roles: np.ndarray
    edge_src: np.ndarray  # directed half-edges (both directions present)
    edge_dst: np.ndarray
    edge_norm_w: np.ndarray  # weight / sqrt(deg_src * deg_dst)
    degrees: np.ndarray  # weighted degree per node
    acc_positions: np.ndarray  # accepted-attribute nodes, acceptance order
    cand_attr_ids: np.ndarray
    cand_attr_pos: np.ndarray
    cand_item_ids: np.ndarray
    cand_item_pos: np.ndarray

    @property
    def num_nodes(self) -> int:
        return self.node_entities.shape[0]

    def candidate_ids(self, option: OptionKind) -> np.ndarray:
        return self.cand_item_ids if option is OptionKind.REC else self.cand_attr_ids

    def candidate_positions(self, option: OptionKind) -> np.ndarray:
        return self.cand_item_pos if option is OptionKind.REC else self.cand_attr_pos


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # |x| <= 36 covers the entire representable output range in float64
    out = 1.0 / (1.0 + np.exp(-np.clip(x, -36.0, 36.0)))
    return np.clip(out, 1e-15, 1.0 - 1e-15)


def _query_vector(state: SessionState, table: EmbeddingTable, catalog: Catalog) -> np.ndarray:
    ent = table.entity_vectors
    base = catalog.num_users + catalog.num_items
    q = ent[catalog.user_entity(state.user)].copy()
    if state.acc_attrs:
        q += ent[base + np.asarray(state.acc_attrs, dtype=np.int64)].sum(axis=0)
    if state.rej_attrs:
        q -= ent[base + np.asarray(state.rej_attrs, dtype=np.int64)].sum(axis=0)
    return q


def item_preference_scores(state: SessionState, table: EmbeddingTable,
                           catalog: Catalog, items: np.ndarray) -> np.ndarray:
    """sigmoid(e_u . e_v + sum_acc e_v . e_p - sum_rej e_v . e_p) per item."""
    if items.shape[0] == 0:
        return np.zeros(0)
    rows = table.entity_vectors[catalog.num_users + np.asarray(items, dtype=np.int64)]
    return _sigmoid(rows @ _query_vector(state, table, catalog))


def attribute_preference_scores(state: SessionState, table: EmbeddingTable,
                                catalog: Catalog, attrs: np.ndarray) -> np.ndarray:
    """Same shape of score for candidate attributes (accepted/rejected
    attribute embeddings play the role of the reference vectors)."""
    if attrs.shape[0] == 0:
        return np.zeros(0)
    base = catalog.num_users + catalog.num_items
    rows = table.entity_vectors[base + np.asarray(attrs, dtype=np.int64)]
    return _sigmoid(rows @ _query_vector(state, table, catalog))


def item_preference_score(state: SessionState, table: EmbeddingTable,
                          catalog: Catalog, item: int) -> float:
    if not 0 <= item < catalog.num_items:
        raise IndexError(f"item id {item} out of range")
    return float(item_preference_scores(state, table, catalog, np.array([item]))[0])


def attribute_preference_score(state: SessionState, table: EmbeddingTable,
                               catalog: Catalog, attr: int) -> float:
    if not 0 <= attr < catalog.num_attributes:
        raise IndexError(f"attribute id {attr} out of range")
    return float(attribute_preference_scores(state, table, catalog, np.array([attr]))[0])


def prune_candidates(ids: np.ndarray, scores: np.ndarray, k: int) -> np.ndarray:
    """Top-k ids by score, score-descending with ascending-id tie break."""
    ids = np.asarray(ids, dtype=np.int64)
    scores = np.asarray(scores, dtype=np.float64)
    if ids.shape[0] != scores.shape[0]:
        raise ValueError(f"{ids.shape[0]} ids vs {scores.shape[0]} scores")
    if k <= 0:
        raise ValueError(f"k must be positive, got {k}")
    order = np.lexsort((ids, -scores))
    return ids[order[:k]]


def pruned_candidates(state: SessionState, table: EmbeddingTable, catalog: Catalog,
                      k_item: int, k_attr: int) -> dict[OptionKind, np.ndarray]:
    """Both options' candidate lists after preference-score pruning."""
    items, attrs = candidate_sets(state, catalog)
    out = {}
    out[OptionKind.REC] = (
        prune_candidates(items, item_preference_scores(state, table, catalog, items), k_item)
        if items.shape[0] else items
    )
    out[OptionKind.ASK] = (
        prune_candidates(attrs, attribute_preference_scores(state, table, catalog, attrs), k_attr)
        if attrs.shape[0] else attrs
    )
    return out


def build_dynamic_graph(state: SessionState, table: EmbeddingTable, catalog: Catalog,
                        k_item: int = 10, k_attr: int = 10,
                        cand_items: np.ndarray | None = None,
                        cand_attrs: np.ndarray | None = None) -> DynamicGraph:
    """Session graph at the current timestep.

    Candidate lists may be passed explicitly (replayed experiences store the
    lists that were live when they were collected); otherwise they are
    derived from the state and pruned to k_item/k_attr.
    """
    if cand_items is None or cand_attrs is None:
        pruned = pruned_candidates(state, table, catalog, k_item, k_attr)
        cand_items = pruned[OptionKind.REC] if cand_items is None else cand_items
        cand_attrs = pruned[OptionKind.ASK] if cand_attrs is None else cand_attrs
    cand_items = np.asarray(cand_items, dtype=np.int64)
    cand_attrs = np.asarray(cand_attrs, dtype=np.int64)

    acc = np.asarray(state.acc_attrs, dtype=np.int64)
    rej_attrs = np.asarray(state.rej_attrs, dtype=np.int64)
    rej_items = np.asarray(state.rej_items, dtype=np.int64)
    n_acc, n_cand_attr = acc.shape[0], cand_attrs.shape[0]
    n_cand_item = cand_items.shape[0]
    attr_base = catalog.num_users + catalog.num_items
    item_base_entity = catalog.num_users

    entities = np.concatenate([
        np.array([state.user], dtype=np.int64),
        attr_base + acc, attr_base + cand_attrs, attr_base + rej_attrs,
        item_base_entity + cand_items, item_base_entity + rej_items,
    ])
    n = entities.shape[0]
    counts = (1, n_acc, n_cand_attr, rej_attrs.shape[0], n_cand_item,
              rej_items.shape[0])
    roles = np.repeat(np.arange(6, dtype=np.int64), counts)
    item_base = 1 + n_acc + n_cand_attr + rej_attrs.shape[0]

    # map attribute id -> node position for the linkable (non-rejected) nodes
    attr_node = np.full(catalog.num_attributes, -1, dtype=np.int64)
    attr_node[acc] = 1 + np.arange(n_acc)
    attr_node[cand_attrs] = 1 + n_acc + np.arange(n_cand_attr)

    w_v = item_preference_scores(state, table, catalog, cand_items)
    # candidate-item <-> attribute edges, all items at once via the CSR
    starts = catalog.item_indptr[cand_items]
    stops = catalog.item_indptr[cand_items + 1]
    lengths = stops - starts
    if lengths.sum():
        take = np.concatenate([catalog.item_indices[a:b] for a, b in zip(starts, stops)])
        owner = np.repeat(item_base + np.arange(n_cand_item, dtype=np.int64), lengths)
        nodes = attr_node[take]
        valid = nodes >= 0
        attr_src = owner[valid]
        attr_dst = nodes[valid]
    else:
        attr_src = attr_dst = np.zeros(0, dtype=np.int64)
    s_half = np.concatenate([np.zeros(n_cand_item, dtype=np.int64), attr_src])
    d_half = np.concatenate([item_base + np.arange(n_cand_item, dtype=np.int64),
                             attr_dst])
    w_half = np.concatenate([w_v, np.ones(attr_src.shape[0])])
    src_arr = np.concatenate([s_half, d_half])
    dst_arr = np.concatenate([d_half, s_half])
    w_arr = np.concatenate([w_half, w_half])

    degrees = np.zeros(n)
    np.add.at(degrees, src_arr, w_arr)
    norm = w_arr / np.sqrt(degrees[src_arr] * degrees[dst_arr]) if src_arr.shape[0] \
        else w_arr

    return DynamicGraph(
        node_entities=entities,
        roles=roles,
        edge_src=src_arr,
        edge_dst=dst_arr,
        edge_norm_w=norm,
        degrees=degrees,
        acc_positions=np.arange(1, 1 + n_acc, dtype=np.int64),
        cand_attr_ids=cand_attrs,
        cand_attr_pos=np.arange(1 + n_acc, 1 + n_acc + n_cand_attr, dtype=np.int64),
        cand_item_ids=cand_items,
        cand_item_pos=np.arange(item_base, item_base + n_cand_item, dtype=np.int64),
    )


# ---------------------------------------------------------------------------
# encoder parameters and forward passes


ENCODER_PREFIXES = ("gcn/", "attn/", "ffn/", "ln/")


def _xavier(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


NOISE_SCALE = 0.05


def init_encoder_params(store: ParamStore, dim: int, rng: np.random.Generator) -> None:
    """Two GCN layers, one attention block, FFN (hidden 2d) and LayerNorm.

    Initialization is near-identity (self-dominant GCN, attenuated attention
    output, an exact identity FFN couple): the pretrained layer-0 geometry
    then survives the whole encoder at step one instead of having to be
    relearned through TD noise.
    """
    eye = np.eye(dim)
    for layer in (0, 1):
        store.add(f"gcn/w{layer}", NOISE_SCALE * _xavier(rng, dim, dim))
        store.add(f"gcn/b{layer}", eye + NOISE_SCALE * _xavier(rng, dim, dim))
    store.add("attn/wq", _xavier(rng, dim, dim))
    store.add("attn/wk", _xavier(rng, dim, dim))
    store.add("attn/wv", eye + NOISE_SCALE * _xavier(rng, dim, dim))
    store.add("attn/wo", NOISE_SCALE * _xavier(rng, dim, dim))
    store.add("ffn/w1", np.hstack([eye, -eye]) + NOISE_SCALE * _xavier(rng, dim, 2 * dim))
    store.add("ffn/b1", np.zeros(2 * dim))
    store.add("ffn/w2", np.vstack([eye, -eye]) + NOISE_SCALE * _xavier(rng, 2 * dim, dim))
    store.add("ffn/b2", np.zeros(dim))
    store.add("ln/gamma", np.ones(dim))
    store.add("ln/beta", np.zeros(dim))


def _merge_graphs(graphs: list[DynamicGraph]):
    """Block-diagonal union: global entity list, offset edge lists."""
    entities = np.concatenate([g.node_entities for g in graphs])
    srcs, dsts, ws = [], [], []
    offsets = []
    offset = 0
    for g in graphs:
        offsets.append(offset)
        srcs.append(g.edge_src + offset)
        dsts.append(g.edge_dst + offset)
        ws.append(g.edge_norm_w)
        offset += g.num_nodes
    return (entities, np.concatenate(srcs) if srcs else np.zeros(0, np.int64),
            np.concatenate(dsts) if dsts else np.zeros(0, np.int64),
            np.concatenate(ws) if ws else np.zeros(0), offsets, offset)


def gcn_encode(graph: DynamicGraph | list[DynamicGraph], entities: Tensor,
               params: ParamStore, tape: Tape | None = None) -> Tensor:
    """Two rounds of ReLU(norm-adjacency @ x @ W + x @ B) over the graph
    (or over several graphs merged block-diagonally)."""
    graphs = graph if isinstance(graph, list) else [graph]
    node_ents, src, dst, w, _, n = _merge_graphs(graphs)
    if n == 0:
        raise ValueError("cannot encode an empty graph")
    x = ad.gather_rows(entities, node_ents, tape)
    for layer in (0, 1):
        msg = ad.scatter_message(x, src, dst, w, n, tape)
        mixed = ad.add(ad.matmul(msg, params[f"gcn/w{layer}"], tape),
                       ad.matmul(x, params[f"gcn/b{layer}"], tape), tape)
        x = ad.relu(mixed, tape)
    return x


def _transform_sequence(x: Tensor, params: ParamStore, heads: int,
                        bias: np.ndarray | None, tape: Tape | None) -> Tensor:
    att = ad.attention_core(x, params["attn/wq"], params["attn/wk"],
                            params["attn/wv"], params["attn/wo"], heads, bias, tape)
    z = ad.add(att, x, tape)
    h = ad.relu(ad.affine(z, params["ffn/w1"], params["ffn/b1"], tape), tape)
    h = ad.affine(h, params["ffn/w2"], params["ffn/b2"], tape)
    return ad.layer_norm(h, params["ln/gamma"], params["ln/beta"], tape)


def encode_state(state: SessionState, node_reps: Tensor, params: ParamStore,
                 tape: Tape | None = None, heads: int = 2,
                 acc_positions: np.ndarray | None = None) -> Tensor:
    """Final (1, d) state vector from the accepted-attribute sequence."""
    if not state.acc_attrs:
        raise ValueError("state has no accepted attributes to encode")
    if acc_positions is None:
        acc_positions = np.arange(1, 1 + len(state.acc_attrs), dtype=np.int64)
    seq = ad.gather_rows(node_reps, acc_positions, tape)
    transformed = _transform_sequence(seq, params, heads, None, tape)
    return ad.mean_pool(transformed, tape)


def encode_states_batch(graphs: list[DynamicGraph], entities: Tensor,
                        params: ParamStore, tape: Tape | None = None,
                        heads: int = 2) -> tuple[Tensor, Tensor, list[int]]:
    """Encode many states in one pass.

    Returns (state vectors (B, d), merged node representations, node offsets
    per graph). Sequences are concatenated and isolated from each other with
    a block-diagonal attention bias, so no padding is involved.
    """
    node_reps = gcn_encode(graphs, entities, params, tape)
    offsets = np.cumsum([0] + [g.num_nodes for g in graphs])[:-1]
    seq_positions = []
    lengths = []
    for g, off in zip(graphs, offsets):
        if g.acc_positions.shape[0] == 0:
            raise ValueError("state has no accepted attributes to encode")
        seq_positions.append(g.acc_positions + off)
        lengths.append(g.acc_positions.shape[0])
    positions = np.concatenate(seq_positions)
    total = positions.shape[0]
    bias = np.full((total, total), ad.MASKED_BIAS)
    pool = np.zeros((len(graphs), total))
    row = 0
    for b, ln in enumerate(lengths):
        bias[row:row + ln, row:row + ln] = 0.0
        pool[b, row:row + ln] = 1.0 / ln
        row += ln
    seq = ad.gather_rows(node_reps, positions, tape)
    transformed = _transform_sequence(seq, params, heads, bias, tape)
    state_vecs = ad.matmul(Tensor(pool), transformed, tape)
    return state_vecs, node_reps, list(offsets)
