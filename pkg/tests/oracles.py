"""Independent reference computations used only by the tests."""
import itertools

import numpy as np


def svm_exact_optimum(X, y, lam):
    """Exact minimiser of lam/2 ||w||^2 + mean(max(0, 1 - y w.x)) for tiny m.

    Enumerates every assignment of the dual variables to {0, 1, free}, solves the
    KKT system on the free set, and keeps the feasible candidate with the best
    dual objective.  By strong duality the primal optimum equals that value.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    m = len(y)
    Q = (y[:, None] * X) @ (y[:, None] * X).T
    best = None
    for assign in itertools.product((0, 1, 2), repeat=m):
        a = np.zeros(m)
        upper = [i for i in range(m) if assign[i] == 1]
        free = [i for i in range(m) if assign[i] == 2]
        a[upper] = 1.0
        if free:
            rhs = lam * m - Q[np.ix_(free, upper)].sum(axis=1)
            sol, *_ = np.linalg.lstsq(Q[np.ix_(free, free)], rhs, rcond=None)
            if np.any(sol < -1e-12) or np.any(sol > 1 + 1e-12):
                continue
            a[free] = sol
        w = (a * y) @ X / (lam * m)
        margin = y * (X @ w)
        ok = all(margin[i] >= 1 - 1e-9 for i in range(m) if assign[i] == 0)
        ok &= all(margin[i] <= 1 + 1e-9 for i in upper)
        ok &= all(abs(margin[i] - 1) <= 1e-9 for i in free)
        if not ok:
            continue
        dual = a.sum() / m - lam / 2 * w @ w
        if best is None or dual > best[1]:
            best = (w, dual)
    w, _ = best
    primal = lam / 2 * w @ w + np.maximum(0, 1 - y * (X @ w)).mean()
    return w, primal
