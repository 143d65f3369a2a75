"""Static recommendation world: users, items, typed attributes, interactions, KG triples.

The on-disk form is one JSONL file per record kind (items.jsonl,
attributes.jsonl, interactions.jsonl, kg_triples.jsonl, optional
labels.jsonl). KG entity ids share one namespace with offsets:
users [0, U), items [U, U+V), attributes [U+V, U+V+P).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

FILE_NAMES = ("items.jsonl", "attributes.jsonl", "interactions.jsonl", "kg_triples.jsonl")
LABELS_FILE = "labels.jsonl"


class CatalogError(ValueError):
    """Malformed catalog files or violated catalog invariants."""


@dataclass
class Catalog:
    """Immutable after construction; safe to share across threads."""

    num_users: int
    items: list[tuple[int, tuple[int, ...]]]
    attributes: list[tuple[int, int]]
    interactions: list[tuple[int, int]]
    kg_triples: list[tuple[int, int, int]]
    labels: dict[str, dict[int, str]] = field(default_factory=dict)

    # derived indexes, built once in __post_init__
    item_indptr: np.ndarray = field(init=False, repr=False, compare=False)
    item_indices: np.ndarray = field(init=False, repr=False, compare=False)
    attr_indptr: np.ndarray = field(init=False, repr=False, compare=False)
    attr_indices: np.ndarray = field(init=False, repr=False, compare=False)
    attr_type: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        n_items = len(self.items)
        n_attrs = len(self.attributes)
        counts = np.zeros(n_items + 1, dtype=np.int64)
        for item_id, attrs in self.items:
            if 0 <= item_id < n_items:
                counts[item_id + 1] = len(attrs)
        self.item_indptr = np.cumsum(counts)
        cols = np.zeros(int(self.item_indptr[-1]), dtype=np.int64)
        inv: list[list[int]] = [[] for _ in range(n_attrs)]
        for item_id, attrs in self.items:
            if not 0 <= item_id < n_items:
                continue
            row = np.sort(np.asarray(attrs, dtype=np.int64))
            cols[self.item_indptr[item_id]:self.item_indptr[item_id + 1]] = row
            for a in attrs:
                if 0 <= a < n_attrs:
                    inv[a].append(item_id)
        self.item_indices = cols
        acounts = np.zeros(n_attrs + 1, dtype=np.int64)
        for a, rows in enumerate(inv):
            acounts[a + 1] = len(rows)
        self.attr_indptr = np.cumsum(acounts)
        self.attr_indices = np.zeros(int(self.attr_indptr[-1]), dtype=np.int64)
        for a, rows in enumerate(inv):
            self.attr_indices[self.attr_indptr[a]:self.attr_indptr[a + 1]] = np.sort(rows)
        self.attr_type = np.full(n_attrs, -1, dtype=np.int64)
        for attr_id, type_id in self.attributes:
            if 0 <= attr_id < n_attrs and self.attr_type[attr_id] == -1:
                self.attr_type[attr_id] = type_id

    @property
    def num_items(self) -> int:
        return len(self.items)

    @property
    def num_attributes(self) -> int:
        return len(self.attributes)

    @property
    def num_types(self) -> int:
        return len({t for _, t in self.attributes})

    @property
    def num_entities(self) -> int:
        return self.num_users + self.num_items + self.num_attributes

    @property
    def num_relations(self) -> int:
        return max((r for _, r, _ in self.kg_triples), default=-1) + 1

    def counts(self) -> dict[str, int]:
        return {
            "users": self.num_users,
            "items": self.num_items,
            "attributes": self.num_attributes,
            "types": self.num_types,
            "interactions": len(self.interactions),
            "triples": len(self.kg_triples),
        }

    def item_attrs(self, item_id: int) -> np.ndarray:
        """Sorted attribute ids of one item."""
        return self.item_indices[self.item_indptr[item_id]:self.item_indptr[item_id + 1]]

    def user_entity(self, user_id: int) -> int:
        return user_id

    def item_entity(self, item_id: int) -> int:
        return self.num_users + item_id

    def attr_entity(self, attr_id: int) -> int:
        return self.num_users + self.num_items + attr_id

    def label(self, kind: str, entity_id: int) -> str | None:
        return self.labels.get(kind, {}).get(entity_id)


@dataclass
class InteractionSplit:
    """Disjoint (user, target item) episode lists."""

    train: list[tuple[int, int]]
    validation: list[tuple[int, int]]
    test: list[tuple[int, int]]


def _read_jsonl(path: Path, required: tuple[str, ...]) -> list[dict]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CatalogError(f"{path.name}:{lineno}: malformed JSON ({exc.msg})") from exc
            if not isinstance(rec, dict):
                raise CatalogError(f"{path.name}:{lineno}: expected an object")
            for key in required:
                if key not in rec:
                    raise CatalogError(f"{path.name}:{lineno}: missing field {key!r}")
            records.append(rec)
    return records


def load_catalog(directory: str | Path) -> Catalog:
    """Load and validate a catalog from its four JSONL files (plus labels).

    Raises CatalogError on missing files, malformed lines, duplicate ids,
    dangling references, or any other violated invariant. The number of
    users is inferred from the interaction file.
    """
    directory = Path(directory)
    for name in FILE_NAMES:
        if not (directory / name).is_file():
            raise CatalogError(f"missing catalog file {name} in {directory}")

    item_recs = _read_jsonl(directory / "items.jsonl", ("item_id", "attributes"))
    if not item_recs:
        raise CatalogError("items.jsonl: no items")
    attr_recs = _read_jsonl(directory / "attributes.jsonl", ("attribute_id", "type_id"))
    inter_recs = _read_jsonl(directory / "interactions.jsonl", ("user_id", "item_id"))
    triple_recs = _read_jsonl(directory / "kg_triples.jsonl", ("head", "relation", "tail"))

    items = [(int(r["item_id"]), tuple(int(a) for a in r["attributes"])) for r in item_recs]
    attributes = [(int(r["attribute_id"]), int(r["type_id"])) for r in attr_recs]
    interactions = [(int(r["user_id"]), int(r["item_id"])) for r in inter_recs]
    kg_triples = [(int(r["head"]), int(r["relation"]), int(r["tail"])) for r in triple_recs]

    seen = set()
    for item_id, _ in items:
        if item_id in seen:
            raise CatalogError(f"items.jsonl: duplicate item id {item_id}")
        seen.add(item_id)
    seen = set()
    for attr_id, _ in attributes:
        if attr_id in seen:
            raise CatalogError(f"attributes.jsonl: duplicate attribute id {attr_id}")
        seen.add(attr_id)

    num_users = max((u for u, _ in interactions), default=-1) + 1
    labels: dict[str, dict[int, str]] = {}
    labels_path = directory / LABELS_FILE
    if labels_path.is_file():
        for rec in _read_jsonl(labels_path, ("kind", "id", "label")):
            labels.setdefault(str(rec["kind"]), {})[int(rec["id"])] = str(rec["label"])

    catalog = Catalog(
        num_users=num_users,
        items=sorted(items),
        attributes=sorted(attributes),
        interactions=interactions,
        kg_triples=kg_triples,
        labels=labels,
    )
    issues = validate_catalog(catalog)
    if issues:
        raise CatalogError("; ".join(issues[:5]))
    return catalog


def save_catalog(catalog: Catalog, directory: str | Path) -> None:
    """Write the four JSONL files (plus labels.jsonl when present)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / "items.jsonl", "w", encoding="utf-8") as fh:
        for item_id, attrs in catalog.items:
            fh.write(json.dumps({"item_id": item_id, "attributes": list(attrs)}) + "\n")
    with open(directory / "attributes.jsonl", "w", encoding="utf-8") as fh:
        for attr_id, type_id in catalog.attributes:
            fh.write(json.dumps({"attribute_id": attr_id, "type_id": type_id}) + "\n")
    with open(directory / "interactions.jsonl", "w", encoding="utf-8") as fh:
        for user_id, item_id in catalog.interactions:
            fh.write(json.dumps({"user_id": user_id, "item_id": item_id}) + "\n")
    with open(directory / "kg_triples.jsonl", "w", encoding="utf-8") as fh:
        for head, rel, tail in catalog.kg_triples:
            fh.write(json.dumps({"head": head, "relation": rel, "tail": tail}) + "\n")
    if catalog.labels:
        with open(directory / LABELS_FILE, "w", encoding="utf-8") as fh:
            for kind in sorted(catalog.labels):
                for entity_id in sorted(catalog.labels[kind]):
                    rec = {"kind": kind, "id": entity_id, "label": catalog.labels[kind][entity_id]}
                    fh.write(json.dumps(rec) + "\n")


def validate_catalog(catalog: Catalog) -> list[str]:
    """Return one message per violated invariant (empty list when clean)."""
    issues = []
    n_items, n_attrs = catalog.num_items, catalog.num_attributes

    seen_attrs: dict[int, int] = {}
    for attr_id, type_id in catalog.attributes:
        if attr_id in seen_attrs and seen_attrs[attr_id] != type_id:
            issues.append(f"attribute {attr_id} listed under two types "
                          f"({seen_attrs[attr_id]} and {type_id})")
        seen_attrs[attr_id] = type_id
    for want, attr_id in enumerate(sorted(seen_attrs)):
        if attr_id != want:
            issues.append(f"attribute ids not dense: expected {want}, found {attr_id}")
            break

    item_ids = sorted(i for i, _ in catalog.items)
    for want, item_id in enumerate(item_ids):
        if item_id != want:
            issues.append(f"item ids not dense: expected {want}, found {item_id}")
            break
    for item_id, attrs in catalog.items:
        if not attrs:
            issues.append(f"item {item_id} has no attributes")
        if len(set(attrs)) != len(attrs):
            issues.append(f"item {item_id} lists a duplicate attribute")
        for a in attrs:
            if not 0 <= a < n_attrs:
                issues.append(f"dangling attribute {a} in item {item_id}")

    for user_id, item_id in catalog.interactions:
        if not 0 <= user_id < catalog.num_users:
            issues.append(f"dangling user {user_id} in interaction ({user_id}, {item_id})")
        if not 0 <= item_id < n_items:
            issues.append(f"dangling item {item_id} in interaction ({user_id}, {item_id})")

    n_entities = catalog.num_entities
    for head, rel, tail in catalog.kg_triples:
        if not 0 <= head < n_entities or not 0 <= tail < n_entities:
            issues.append(f"dangling entity in triple ({head}, {rel}, {tail})")
        if rel < 0:
            issues.append(f"negative relation in triple ({head}, {rel}, {tail})")
    return issues


@dataclass(frozen=True)
class SynthConfig:
    num_users: int
    num_items: int
    num_attributes: int
    num_types: int
    attrs_per_item: int
    interactions_per_user: int
    # attribute popularity skew: 0 draws uniformly, larger values give a
    # heavier head (weight of attribute a proportional to 1/(a+1)^skew)
    attr_skew: float = 0.0


def generate_synthetic(cfg: SynthConfig, seed: int) -> Catalog:
    """Deterministic random catalog; KG holds item-has-attribute (relation 0)
    and user-interacted (relation 1) triples."""
    if cfg.num_users < 1 or cfg.num_items < 1 or cfg.num_attributes < 1:
        raise CatalogError("need at least one user, item and attribute")
    if not 1 <= cfg.attrs_per_item <= cfg.num_attributes:
        raise CatalogError(
            f"attrs_per_item must be in [1, {cfg.num_attributes}], got {cfg.attrs_per_item}")
    if not 1 <= cfg.num_types <= cfg.num_attributes:
        raise CatalogError(f"num_types must be in [1, {cfg.num_attributes}], got {cfg.num_types}")
    if not 1 <= cfg.interactions_per_user <= cfg.num_items:
        raise CatalogError(
            f"interactions_per_user must be in [1, {cfg.num_items}], "
            f"got {cfg.interactions_per_user}")

    rng = np.random.default_rng(seed)
    attributes = [(a, a % cfg.num_types) for a in range(cfg.num_attributes)]
    weights = 1.0 / np.arange(1, cfg.num_attributes + 1) ** cfg.attr_skew
    weights /= weights.sum()
    items = []
    for item_id in range(cfg.num_items):
        attrs = rng.choice(cfg.num_attributes, size=cfg.attrs_per_item,
                           replace=False, p=weights)
        items.append((item_id, tuple(int(a) for a in np.sort(attrs))))
    interactions = []
    for user_id in range(cfg.num_users):
        liked = rng.choice(cfg.num_items, size=cfg.interactions_per_user, replace=False)
        interactions.extend((user_id, int(v)) for v in np.sort(liked))

    u, v = cfg.num_users, cfg.num_items
    kg_triples = [(u + item_id, 0, u + v + a) for item_id, attrs in items for a in attrs]
    kg_triples.extend((user_id, 1, u + item_id) for user_id, item_id in interactions)
    return Catalog(
        num_users=cfg.num_users,
        items=items,
        attributes=attributes,
        interactions=interactions,
        kg_triples=kg_triples,
    )


def split_interactions(
    catalog: Catalog, seed: int, ratios: tuple[float, float, float] = (0.7, 0.1, 0.2)
) -> InteractionSplit:
    """Shuffle interactions under ``seed`` and cut train/validation/test."""
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"split ratios must sum to 1, got {ratios}")
    pairs = list(catalog.interactions)
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(pairs))
    shuffled = [pairs[i] for i in order]
    n_train = int(round(ratios[0] * len(pairs)))
    n_valid = int(round(ratios[1] * len(pairs)))
    return InteractionSplit(
        train=shuffled[:n_train],
        validation=shuffled[n_train:n_train + n_valid],
        test=shuffled[n_train + n_valid:],
    )
