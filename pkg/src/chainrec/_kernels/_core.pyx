#cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled twins of the kernels in pure.py (same signatures, same numerics)."""

import numpy as np

cimport numpy as cnp

from libc.math cimport sqrt


def items_with_attrs(attr_indptr, attr_indices, required, excluded):
    cdef cnp.int64_t[::1] indptr = np.ascontiguousarray(attr_indptr, dtype=np.int64)
    cdef cnp.int64_t[::1] indices = np.ascontiguousarray(attr_indices, dtype=np.int64)
    cdef cnp.int64_t[::1] req = np.ascontiguousarray(required, dtype=np.int64)
    cdef cnp.uint8_t[::1] ex = np.ascontiguousarray(excluded, dtype=bool).view(np.uint8)
    cdef Py_ssize_t n_items = ex.shape[0]
    cdef cnp.int64_t[::1] cnt = np.zeros(n_items, dtype=np.int64)
    cdef Py_ssize_t k, j
    cdef cnp.int64_t a, need = req.shape[0]
    for k in range(req.shape[0]):
        a = req[k]
        for j in range(indptr[a], indptr[a + 1]):
            cnt[indices[j]] += 1
    mask = np.empty(n_items, dtype=bool)
    cdef cnp.uint8_t[::1] m = mask.view(np.uint8)
    for j in range(n_items):
        m[j] = (not ex[j]) and cnt[j] == need
    return mask


def attrs_of_items(item_indptr, item_indices, item_ids, num_attrs):
    cdef cnp.int64_t[::1] indptr = np.ascontiguousarray(item_indptr, dtype=np.int64)
    cdef cnp.int64_t[::1] indices = np.ascontiguousarray(item_indices, dtype=np.int64)
    cdef cnp.int64_t[::1] ids = np.ascontiguousarray(item_ids, dtype=np.int64)
    mask = np.zeros(num_attrs, dtype=bool)
    cdef cnp.uint8_t[::1] m = mask.view(np.uint8)
    cdef Py_ssize_t k, j
    cdef cnp.int64_t v
    for k in range(ids.shape[0]):
        v = ids[k]
        for j in range(indptr[v], indptr[v + 1]):
            m[indices[j]] = True
    return mask


def scatter_rows_add(src, dst, w, x, n_out):
    cdef cnp.int64_t[::1] s = np.ascontiguousarray(src, dtype=np.int64)
    cdef cnp.int64_t[::1] d = np.ascontiguousarray(dst, dtype=np.int64)
    cdef cnp.float64_t[::1] wv = np.ascontiguousarray(w, dtype=np.float64)
    cdef cnp.float64_t[:, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    out = np.zeros((n_out, x.shape[1]), dtype=np.float64)
    cdef cnp.float64_t[:, ::1] o = out
    cdef Py_ssize_t e, c, cols = xv.shape[1]
    cdef cnp.float64_t we
    cdef cnp.int64_t se, de
    for e in range(s.shape[0]):
        se = s[e]
        de = d[e]
        we = wv[e]
        for c in range(cols):
            o[de, c] += we * xv[se, c]
    return out


def transe_sgd(ent, rel, ph, pr, pt, nh, nt, double lr, double margin):
    cdef cnp.float64_t[:, ::1] E = ent
    cdef cnp.float64_t[:, ::1] R = rel
    cdef cnp.int64_t[::1] a = np.ascontiguousarray(ph, dtype=np.int64)
    cdef cnp.int64_t[::1] b = np.ascontiguousarray(pr, dtype=np.int64)
    cdef cnp.int64_t[::1] c = np.ascontiguousarray(pt, dtype=np.int64)
    cdef cnp.int64_t[::1] a2 = np.ascontiguousarray(nh, dtype=np.int64)
    cdef cnp.int64_t[::1] c2 = np.ascontiguousarray(nt, dtype=np.int64)
    cdef Py_ssize_t n = a.shape[0], dim = E.shape[1], i, k
    cdef double total = 0.0, e_pos, e_neg, hinge, g, u
    cdef cnp.float64_t[::1] d_pos = np.empty(dim, dtype=np.float64)
    cdef cnp.float64_t[::1] d_neg = np.empty(dim, dtype=np.float64)
    cdef cnp.int64_t h, r, t, h2, t2
    for i in range(n):
        h = a[i]
        r = b[i]
        t = c[i]
        h2 = a2[i]
        t2 = c2[i]
        e_pos = 0.0
        e_neg = 0.0
        for k in range(dim):
            g = E[h, k] + R[r, k] - E[t, k]
            d_pos[k] = g
            e_pos += g * g
            g = E[h2, k] + R[r, k] - E[t2, k]
            d_neg[k] = g
            e_neg += g * g
        e_pos = sqrt(e_pos)
        e_neg = sqrt(e_neg)
        hinge = margin + e_pos - e_neg
        if hinge <= 0.0:
            continue
        total += hinge
        for k in range(dim):
            u = d_pos[k] / e_pos if e_pos > 0.0 else 0.0
            E[h, k] -= lr * u
            E[t, k] += lr * u
            R[r, k] -= lr * u
        for k in range(dim):
            u = d_neg[k] / e_neg if e_neg > 0.0 else 0.0
            E[h2, k] += lr * u
            E[t2, k] -= lr * u
            R[r, k] += lr * u
    return total
