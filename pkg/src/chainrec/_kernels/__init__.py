"""Hot numeric kernels: compiled extension when built, numpy fallback otherwise.

Set CHAINREC_PURE_KERNELS=1 to force the fallback (used by the parity tests
and the benchmark).
"""

import os

from . import pure

if os.environ.get("CHAINREC_PURE_KERNELS") == "1":
    _impl = pure
    BACKEND = "pure"
else:
    try:
        from . import _core as _impl

        BACKEND = "compiled"
    except ImportError:
        _impl = pure
        BACKEND = "pure"

items_with_attrs = _impl.items_with_attrs
attrs_of_items = _impl.attrs_of_items
scatter_rows_add = _impl.scatter_rows_add
transe_sgd = _impl.transe_sgd

__all__ = [
    "BACKEND",
    "attrs_of_items",
    "items_with_attrs",
    "pure",
    "scatter_rows_add",
    "transe_sgd",
]
