"""Pure numpy fallbacks for the compiled kernels.

Signatures and numeric semantics mirror ``_core`` exactly; the compiled
module is preferred at import time when available.
"""

import numpy as np


def items_with_attrs(attr_indptr, attr_indices, required, excluded):
    """Mask of items carrying every attribute id in ``required``.

    attr_indptr/attr_indices is the attribute->items CSR (the inverted
    index); ``excluded`` marks items dropped regardless of attributes.
    """
    mask = ~excluded.astype(bool)
    for a in required:
        hits = np.zeros(mask.shape[0], dtype=bool)
        hits[attr_indices[attr_indptr[a]:attr_indptr[a + 1]]] = True
        mask &= hits
    return mask


def attrs_of_items(item_indptr, item_indices, item_ids, num_attrs):
    """Boolean mask over attributes appearing in any of ``item_ids``."""
    mask = np.zeros(num_attrs, dtype=bool)
    if item_ids.shape[0]:
        cols = np.concatenate(
            [item_indices[item_indptr[v]:item_indptr[v + 1]] for v in item_ids]
        )
        mask[cols] = True
    return mask


def scatter_rows_add(src, dst, w, x, n_out):
    """out[dst[e]] += w[e] * x[src[e]] over all edges e."""
    out = np.zeros((n_out, x.shape[1]), dtype=np.float64)
    np.add.at(out, dst, w[:, None] * x[src])
    return out


def transe_sgd(ent, rel, ph, pr, pt, nh, nt, lr, margin):
    """One sequential SGD pass over paired positive/corrupted triples.

    Updates ``ent``/``rel`` in place, one triple at a time, minimizing
    max(0, margin + ||e_h + e_r - e_t|| - ||e_h' + e_r - e_t'||).
    Returns the summed hinge loss observed before each update.
    """
    total = 0.0
    for i in range(ph.shape[0]):
        h, r, t = ph[i], pr[i], pt[i]
        h2, t2 = nh[i], nt[i]
        d_pos = ent[h] + rel[r] - ent[t]
        d_neg = ent[h2] + rel[r] - ent[t2]
        e_pos = float(np.sqrt(d_pos @ d_pos))
        e_neg = float(np.sqrt(d_neg @ d_neg))
        hinge = margin + e_pos - e_neg
        if hinge <= 0.0:
            continue
        total += hinge
        u_pos = d_pos / e_pos if e_pos > 0.0 else np.zeros_like(d_pos)
        u_neg = d_neg / e_neg if e_neg > 0.0 else np.zeros_like(d_neg)
        ent[h] -= lr * u_pos
        ent[t] += lr * u_pos
        rel[r] -= lr * u_pos
        ent[h2] += lr * u_neg
        ent[t2] -= lr * u_neg
        rel[r] += lr * u_neg
    return total
