"""Independent reference implementations used by the tests.

Written directly from the definitions, favouring clarity over speed; none
of them reuse package internals.
"""

from fractions import Fraction

import numpy as np


def _sse_exact(values):
    vals = [Fraction(v) for v in values]
    if not vals:
        return Fraction(0)
    mean = sum(vals) / len(vals)
    return sum((v - mean) ** 2 for v in vals)


def brute_force_cart(X, y, max_depth, min_leaf=1):
    """Greedy CART by enumerating every (feature, threshold) pair.

    Candidate thresholds are midpoints between consecutive distinct values.
    Children SSE is computed exactly with rationals; ties go to the lowest
    feature, then the lowest threshold. A split is taken only if it strictly
    lowers the SSE. Returns the leaves as sorted tuples of row indices.
    """
    X = np.asarray(X, dtype=float)
    y = [float(v) for v in y]

    def rec(rows, depth):
        if depth >= max_depth:
            return [tuple(sorted(rows))]
        parent = _sse_exact([y[i] for i in rows])
        best = None
        for f in range(X.shape[1]):
            vals = sorted(set(X[rows, f]))
            for lo, hi in zip(vals[:-1], vals[1:]):
                thr = 0.5 * (lo + hi)
                left = [i for i in rows if X[i, f] < thr]
                right = [i for i in rows if not X[i, f] < thr]
                if len(left) < min_leaf or len(right) < min_leaf:
                    continue
                sse = _sse_exact([y[i] for i in left]) + _sse_exact([y[i] for i in right])
                if sse < parent and (best is None or sse < best[0]):
                    best = (sse, left, right)
        if best is None:
            return [tuple(sorted(rows))]
        return rec(best[1], depth + 1) + rec(best[2], depth + 1)

    return sorted(rec(list(range(len(y))), 0))


def partition_sse(leaves, y):
    y = np.asarray(y, dtype=float)
    return float(sum(np.sum((y[list(l)] - y[list(l)].mean()) ** 2) for l in leaves))


def tree_leaves(tree, X):
    ids = tree.apply(np.asarray(X, dtype=float))
    return sorted(tuple(np.flatnonzero(ids == k).tolist()) for k in np.unique(ids))


def geometric_life_expectancy(p):
    """``1/2 + sum_k p^k`` for an unbounded constant-survival table."""
    return 0.5 + p / (1 - p)


def geometric_annuity(p, v):
    return p * v / (1 - p * v)


def finite_difference(f, x, h=1e-6):
    """Central differences of scalar ``f`` at vector ``x``."""
    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e.flat[i] = h
        g.flat[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def rel_error(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12)


def block_gradient_errors(block, x, seed):
    """Relative errors of a block's backward pass against central differences.

    The scalar probed is ``sum(out * R)`` for a fixed random ``R``; returns a
    dict keyed by parameter name plus ``"input"``.
    """
    out, cache = block.forward(x)
    R = np.random.default_rng(seed).normal(size=out.shape)
    grads, d_x = block.backward(cache, R)
    errors = {}
    for name, p in block.params.items():
        def f(v, p=p):
            saved = p.copy()
            p[...] = v.reshape(p.shape)
            val = float(np.sum(block.forward(x)[0] * R))
            p[...] = saved
            return val
        errors[name] = rel_error(grads[name], finite_difference(f, p.ravel()).reshape(p.shape))
    fd_x = finite_difference(lambda v: float(np.sum(block.forward(v.reshape(x.shape))[0] * R)), x.ravel())
    errors["input"] = rel_error(d_x, fd_x.reshape(x.shape))
    return errors
