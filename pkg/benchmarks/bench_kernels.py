"""Compare the compiled kernels against the numpy fallbacks.

Run: python benchmarks/bench_kernels.py [--repeats N]
"""

import argparse
import timeit

import numpy as np

from chainrec._kernels import pure

try:
    from chainrec._kernels import _core as compiled
except ImportError:
    compiled = None

from chainrec.catalog import SynthConfig, generate_synthetic


def bench(label, fn_pure, fn_compiled, repeats):
    t_pure = min(timeit.repeat(fn_pure, number=1, repeat=repeats))
    if compiled is None:
        print(f"{label:28s} pure {t_pure * 1e3:8.3f} ms   (no compiled build)")
        return
    t_comp = min(timeit.repeat(fn_compiled, number=1, repeat=repeats))
    speedup = t_pure / t_comp if t_comp > 0 else float("inf")
    print(f"{label:28s} pure {t_pure * 1e3:8.3f} ms   compiled "
          f"{t_comp * 1e3:8.3f} ms   x{speedup:5.1f}")


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=7)
    args = parser.parse_args()

    catalog = generate_synthetic(SynthConfig(50, 5000, 400, 20, 6, 20,
                                             attr_skew=1.0), seed=1)
    rng = np.random.default_rng(0)

    required = np.sort(rng.choice(400, size=3, replace=False))
    excluded = rng.random(5000) < 0.1
    bench("items_with_attrs (5k items)",
          lambda: pure.items_with_attrs(catalog.attr_indptr, catalog.attr_indices,
                                        required, excluded),
          lambda: compiled.items_with_attrs(catalog.attr_indptr,
                                            catalog.attr_indices, required,
                                            excluded),
          args.repeats)

    ids = rng.choice(5000, size=800, replace=False)
    bench("attrs_of_items (800 items)",
          lambda: pure.attrs_of_items(catalog.item_indptr, catalog.item_indices,
                                      ids, 400),
          lambda: compiled.attrs_of_items(catalog.item_indptr,
                                          catalog.item_indices, ids, 400),
          args.repeats)

    n_nodes, n_edges, dim = 2000, 20000, 32
    src = rng.integers(0, n_nodes, n_edges)
    dst = rng.integers(0, n_nodes, n_edges)
    w = rng.random(n_edges)
    x = rng.normal(size=(n_nodes, dim))
    bench(f"scatter_rows_add ({n_edges} e)",
          lambda: pure.scatter_rows_add(src, dst, w, x, n_nodes),
          lambda: compiled.scatter_rows_add(src, dst, w, x, n_nodes),
          args.repeats)

    n_ent, n_tr, d = 3000, 5000, 32
    ph = rng.integers(0, n_ent, n_tr)
    pr = rng.integers(0, 4, n_tr)
    pt = rng.integers(0, n_ent, n_tr)
    nh = rng.integers(0, n_ent, n_tr)
    nt = rng.integers(0, n_ent, n_tr)

    def run_pure():
        ent = rng.standard_normal((n_ent, d))
        rel = rng.standard_normal((4, d))
        pure.transe_sgd(ent, rel, ph, pr, pt, nh, nt, 0.01, 1.0)

    def run_compiled():
        ent = rng.standard_normal((n_ent, d))
        rel = rng.standard_normal((4, d))
        compiled.transe_sgd(ent, rel, ph, pr, pt, nh, nt, 0.01, 1.0)

    bench(f"transe_sgd ({n_tr} triples)", run_pure, run_compiled, args.repeats)


if __name__ == "__main__":
    main()
