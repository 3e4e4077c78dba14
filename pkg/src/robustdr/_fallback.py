"""Pure-numpy versions of the compiled kernels, used when the extension is absent."""

import numpy as np


def bag_mean(table, ids, offsets):
    lengths = np.diff(offsets)
    if np.any(lengths <= 0):
        raise ValueError("empty bag at position %d" % int(np.argmax(lengths <= 0)))
    rows = table[ids]
    sums = np.add.reduceat(rows, offsets[:-1], axis=0) if len(ids) else rows
    return sums / lengths[:, None]


def bag_mean_backward(grad_out, ids, offsets, grad_table):
    lengths = np.diff(offsets)
    per_token = np.repeat(grad_out / lengths[:, None], lengths, axis=0)
    np.add.at(grad_table, ids, per_token)


def topk_scan(matrix, query, k):
    scores = matrix @ query
    k = min(k, len(scores))
    order = np.lexsort((np.arange(len(scores)), -scores))[:k]
    return order.astype(np.intp), scores[order]
