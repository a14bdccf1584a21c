"""Integer least-squares ambiguity resolution.

Decorrelation by integer Gauss transformations with symmetric pivoting,
followed by a depth-first search-and-shrink enumeration of integer
candidates.  The search minimizes ``(a - z)^T Q^{-1} (a - z)`` and returns
the best few candidates so a ratio test can accept or reject the fix.
"""

from dataclasses import dataclass

import numpy as np

from .errors import AmbiguityError


def ltdl_decompose(Q):
    """Factor Q = L^T diag(d) L with L unit lower triangular."""
    Q = np.array(Q, dtype=float)
    n = Q.shape[0]
    L = np.zeros((n, n))
    d = np.zeros(n)
    for i in range(n - 1, -1, -1):
        d[i] = Q[i, i]
        if d[i] <= 0.0 or not np.isfinite(d[i]):
            raise AmbiguityError("covariance is not positive definite")
        L[i, : i + 1] = Q[i, : i + 1] / np.sqrt(d[i])
        for j in range(i):
            Q[j, : j + 1] -= L[i, : j + 1] * L[i, j]
        L[i, : i + 1] /= L[i, i]
    return L, d


def decorrelate(Q, a):
    """Z-transform the ambiguity problem to near-diagonal covariance.

    Returns (z, L, d, Z) with ``z = Z.T @ a`` and L, d the factors of the
    transformed covariance ``Z.T @ Q @ Z``.
    """
    a = np.asarray(a, dtype=float)
    n = a.shape[0]
    L, d = ltdl_decompose(Q)
    Z = np.eye(n)
    if n == 1:
        return a.copy(), L, d, Z

    i1 = n - 2
    swapped = True
    while swapped:
        i = n - 1
        swapped = False
        while not swapped and i > 0:
            i -= 1
            if i <= i1:
                for j in range(i + 1, n):
                    mu = round(L[j, i])
                    if mu != 0:
                        L[j:n, i] -= mu * L[j:n, j]
                        Z[:, i] -= mu * Z[:, j]
            delta = d[i] + L[i + 1, i] ** 2 * d[i + 1]
            if delta < d[i + 1]:
                lam = d[i + 1] * L[i + 1, i] / delta
                eta = d[i] / delta
                d[i] = eta * d[i + 1]
                d[i + 1] = delta
                if i > 0:
                    M = np.array([[-L[i + 1, i], 1.0], [eta, lam]])
                    L[i:i + 2, 0:i] = M @ L[i:i + 2, 0:i]
                L[i + 1, i] = lam
                if i + 2 < n:
                    L[i + 2:n, [i, i + 1]] = L[i + 2:n, [i + 1, i]]
                Z[:, [i, i + 1]] = Z[:, [i + 1, i]]
                i1 = i
                swapped = True
    return Z.T @ a, L, d, Z


def _sign_step(y):
    return 1.0 if y >= 0.0 else -1.0


def ils_search(zhat, L, d, ncands=2, max_nodes=100_000):
    """Depth-first integer search over the decorrelated problem.

    Enumerates candidates closest-first per level, shrinking the ellipsoid
    to the worst kept candidate once ``ncands`` are found.
    """
    n = zhat.shape[0]
    z = np.zeros(n)
    zb = np.zeros(n)
    step = np.zeros(n)
    tcost = np.zeros(n + 1)   # tcost[k]: cost of levels k..n-1
    best = []                 # (cost, tuple) kept sorted, at most ncands

    k = n - 1
    zb[k] = zhat[k]
    z[k] = np.rint(zb[k])
    step[k] = _sign_step(zb[k] - z[k])
    radius = np.inf
    nodes = 0

    while True:
        nodes += 1
        if nodes > max_nodes:
            raise AmbiguityError(f"integer search exceeded {max_nodes} nodes")
        newdist = tcost[k + 1] + (z[k] - zb[k]) ** 2 / d[k]
        if newdist < radius:
            if k > 0:
                tcost[k] = newdist
                k -= 1
                zb[k] = zhat[k] + L[k + 1:n, k] @ (z[k + 1:n] - zb[k + 1:n])
                z[k] = np.rint(zb[k])
                step[k] = _sign_step(zb[k] - z[k])
            else:
                best.append((newdist, tuple(int(v) for v in z)))
                best.sort(key=lambda c: c[0])
                if len(best) > ncands:
                    best.pop()
                if len(best) == ncands:
                    radius = best[-1][0]
                z[0] += step[0]
                step[0] = -step[0] - _sign_step(step[0])
        else:
            k += 1
            if k == n:
                break
            z[k] += step[k]
            step[k] = -step[k] - _sign_step(step[k])

    if not best:
        raise AmbiguityError("integer search found no candidate")
    costs = np.array([c[0] for c in best])
    cands = np.array([c[1] for c in best], dtype=np.int64)
    return cands, costs


@dataclass
class ArResult:
    candidates: np.ndarray    # (m, n) integer candidates, best first
    costs: np.ndarray
    ratio: float
    fixed: bool


def resolve_ambiguities(a_float, Q, ratio_threshold=3.0, ncands=2,
                        max_nodes=100_000):
    """Decorrelated integer search plus ratio test.

    On a search-budget blowout the result is flagged unfixed with no
    candidates rather than raising, so callers can fall back to the float
    solution.
    """
    a_float = np.asarray(a_float, dtype=float)
    z, L, d, Z = decorrelate(Q, a_float)
    try:
        zcands, costs = ils_search(z, L, d, ncands=ncands, max_nodes=max_nodes)
    except AmbiguityError:
        return ArResult(np.zeros((0, a_float.shape[0]), dtype=np.int64),
                        np.array([]), 0.0, False)
    Zi = np.rint(np.linalg.inv(Z))
    if not np.allclose(Z @ Zi, np.eye(Z.shape[0]), atol=1e-8):
        raise AmbiguityError("decorrelation transform is not unimodular")
    cands = (Zi.T @ zcands.T).T.astype(np.int64)
    if len(costs) > 1:
        ratio = float(costs[1] / costs[0]) if costs[0] > 0.0 else np.inf
    else:
        ratio = np.inf
    fixed = ratio >= ratio_threshold
    return ArResult(cands, costs, ratio, fixed)
