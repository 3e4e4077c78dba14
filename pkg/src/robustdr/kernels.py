"""Hot loops behind a single import point.

The compiled extension is preferred; set ``ROBUSTDR_PURE_PYTHON=1`` to force
the numpy fallback (useful for benchmarking and for checking that both agree).
"""

import os

import numpy as np

from . import _fallback

BACKEND = "python"
_impl = _fallback

if os.environ.get("ROBUSTDR_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _fallback


def _ids(a):
    return np.ascontiguousarray(a, dtype=np.int64)


def bag_mean(table: np.ndarray, ids, offsets, impl=None) -> np.ndarray:
    """Mean of ``table`` rows for each bag ``ids[offsets[i]:offsets[i+1]]``."""
    impl = impl or _impl
    return impl.bag_mean(np.ascontiguousarray(table, dtype=np.float64), _ids(ids), _ids(offsets))


def bag_mean_backward(grad_out: np.ndarray, ids, offsets, grad_table: np.ndarray, impl=None) -> None:
    """Accumulate the gradient of :func:`bag_mean` into ``grad_table`` in place."""
    impl = impl or _impl
    if not grad_table.flags.c_contiguous or grad_table.dtype != np.float64:
        raise ValueError("grad_table must be C-contiguous float64")
    impl.bag_mean_backward(np.ascontiguousarray(grad_out, dtype=np.float64), _ids(ids), _ids(offsets), grad_table)


def topk_scan(matrix: np.ndarray, query: np.ndarray, k: int, impl=None):
    """Exact top-``k`` rows by inner product; ties go to the lower row index.

    Returns ``(indices, scores)`` best-first.
    """
    impl = impl or _impl
    return impl.topk_scan(
        np.ascontiguousarray(matrix, dtype=np.float64),
        np.ascontiguousarray(query, dtype=np.float64),
        int(k),
    )
