"""Translation-based KG embedding pretraining (margin-ranking SGD).

The resulting entity vectors seed the layer-0 node features of the state
encoder; relation vectors are only used during pretraining itself.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _kernels
from .catalog import Catalog


@dataclass
class EmbeddingTable:
    entity_vectors: np.ndarray  # (num_entities, d)
    relation_vectors: np.ndarray  # (num_relations, d)

    @property
    def dim(self) -> int:
        return self.entity_vectors.shape[1]


@dataclass(frozen=True)
class TransEConfig:
    dim: int = 64
    margin: float = 1.0
    lr: float = 0.01
    epochs: int = 100
    batch: int = 32


def transe_energy(head: int, relation: int, tail: int, table: EmbeddingTable) -> float:
    """||e_head + e_relation - e_tail||_2; zero iff the translation is exact."""
    n_ent = table.entity_vectors.shape[0]
    n_rel = table.relation_vectors.shape[0]
    if not 0 <= head < n_ent or not 0 <= tail < n_ent:
        raise IndexError(f"entity id out of range: head={head}, tail={tail}, have {n_ent}")
    if not 0 <= relation < n_rel:
        raise IndexError(f"relation id out of range: {relation}, have {n_rel}")
    diff = (table.entity_vectors[head] + table.relation_vectors[relation]
            - table.entity_vectors[tail])
    return float(np.sqrt(diff @ diff))


def _namespace_range(catalog: Catalog, entity_id: int) -> tuple[int, int]:
    u, v = catalog.num_users, catalog.num_items
    if entity_id < u:
        return 0, u
    if entity_id < u + v:
        return u, u + v
    return u + v, catalog.num_entities


def sample_negative(
    triple: tuple[int, int, int],
    catalog: Catalog,
    rng: np.random.Generator,
    positives: set[tuple[int, int, int]] | None = None,
) -> tuple[int, int, int]:
    """Corrupt one endpoint of ``triple`` uniformly within its namespace.

    The replacement keeps the endpoint's namespace (user/item/attribute) and
    never returns a positive triple of the catalog.
    """
    if positives is None:
        positives = set(catalog.kg_triples)
    head, rel, tail = triple
    corrupt_head = bool(rng.integers(2))
    for side in (corrupt_head, not corrupt_head):
        lo, hi = _namespace_range(catalog, head if side else tail)
        if hi - lo < 2:
            continue
        for _ in range(100):
            repl = int(rng.integers(lo, hi))
            cand = (repl, rel, tail) if side else (head, rel, repl)
            if cand != triple and cand not in positives:
                return cand
    raise ValueError(f"cannot corrupt triple {triple}: no usable replacement entity")


def training_subgraph(catalog: Catalog, train_pairs: list[tuple[int, int]]) -> Catalog:
    """Catalog copy whose KG keeps only train-split user-item edges.

    Pretraining on the full graph would place held-out targets right next to
    their users, letting preference scores read the answer off the table.
    """
    allowed = set(train_pairs)
    u, v = catalog.num_users, catalog.num_items

    def keep(head: int, tail: int) -> bool:
        for user_end, other in ((head, tail), (tail, head)):
            if user_end < u:  # a user entity: require a train interaction
                if not u <= other < u + v:
                    return False
                return (user_end, other - u) in allowed
        return True

    triples = [t for t in catalog.kg_triples if keep(t[0], t[2])]
    return Catalog(catalog.num_users, catalog.items, catalog.attributes,
                   catalog.interactions, triples, catalog.labels)


def init_table(num_entities: int, num_relations: int, dim: int,
               rng: np.random.Generator) -> EmbeddingTable:
    """Uniform in [-6/sqrt(d), 6/sqrt(d)], then row-normalized."""
    bound = 6.0 / np.sqrt(dim)
    ent = rng.uniform(-bound, bound, size=(num_entities, dim))
    rel = rng.uniform(-bound, bound, size=(max(num_relations, 1), dim))
    ent /= np.maximum(np.linalg.norm(ent, axis=1, keepdims=True), 1e-12)
    rel /= np.maximum(np.linalg.norm(rel, axis=1, keepdims=True), 1e-12)
    return EmbeddingTable(ent, rel)


def _project_to_unit_ball(vectors: np.ndarray) -> None:
    norms = np.linalg.norm(vectors, axis=1, keepdims=True)
    np.divide(vectors, norms, out=vectors, where=norms > 1.0)


def pretrain_transe_trace(
    catalog: Catalog, cfg: TransEConfig, seed: int
) -> tuple[EmbeddingTable, list[float]]:
    """Margin-ranking pretraining over the catalog triples.

    Entity vectors are projected back into the unit ball after every epoch;
    the run is deterministic for a fixed seed. Returns the table plus the
    mean hinge loss per epoch (as observed before each SGD update).
    """
    if not catalog.kg_triples:
        raise ValueError("catalog has no KG triples to pretrain on")
    rng = np.random.default_rng(seed)
    table = init_table(catalog.num_entities, catalog.num_relations, cfg.dim, rng)
    triples = np.asarray(catalog.kg_triples, dtype=np.int64)
    positives = set(catalog.kg_triples)
    n = triples.shape[0]
    losses = []
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        negatives = np.empty((n, 3), dtype=np.int64)
        for row, idx in enumerate(order):
            negatives[row] = sample_negative(tuple(triples[idx]), catalog, rng, positives)
        total = 0.0
        for start in range(0, n, cfg.batch):
            sel = order[start:start + cfg.batch]
            neg = negatives[start:start + cfg.batch]
            total += _kernels.transe_sgd(
                table.entity_vectors, table.relation_vectors,
                triples[sel, 0], triples[sel, 1], triples[sel, 2],
                neg[:, 0], neg[:, 2], cfg.lr, cfg.margin,
            )
        _project_to_unit_ball(table.entity_vectors)
        losses.append(total / n)
    return table, losses


def pretrain_transe(catalog: Catalog, cfg: TransEConfig, seed: int) -> EmbeddingTable:
    return pretrain_transe_trace(catalog, cfg, seed)[0]


def mean_energies(catalog: Catalog, table: EmbeddingTable, seed: int,
                  samples: int | None = None) -> tuple[float, float]:
    """Mean energy over positive triples vs freshly corrupted ones."""
    rng = np.random.default_rng(seed)
    triples = catalog.kg_triples
    if samples is not None and samples < len(triples):
        idx = rng.choice(len(triples), size=samples, replace=False)
        triples = [catalog.kg_triples[i] for i in idx]
    positives = set(catalog.kg_triples)
    pos = [transe_energy(h, r, t, table) for h, r, t in triples]
    neg = [transe_energy(*sample_negative(tr, catalog, rng, positives), table)
           for tr in triples]
    return float(np.mean(pos)), float(np.mean(neg))


def save_embeddings(path: str | Path, table: EmbeddingTable, seed: int) -> None:
    header = {
        "num_entities": int(table.entity_vectors.shape[0]),
        "num_relations": int(table.relation_vectors.shape[0]),
        "d": int(table.dim),
        "seed": int(seed),
    }
    np.savez(path, header=np.frombuffer(json.dumps(header).encode(), dtype=np.uint8),
             entity_vectors=table.entity_vectors, relation_vectors=table.relation_vectors)


def load_embeddings(path: str | Path) -> tuple[EmbeddingTable, dict]:
    with np.load(path) as data:
        header = json.loads(bytes(data["header"]).decode())
        table = EmbeddingTable(
            np.ascontiguousarray(data["entity_vectors"], dtype=np.float64),
            np.ascontiguousarray(data["relation_vectors"], dtype=np.float64),
        )
    if table.entity_vectors.shape != (header["num_entities"], header["d"]):
        raise ValueError("embedding checkpoint header disagrees with matrix shapes")
    return table, header
