"""Hot inner loops, each with a numba kernel and a numpy twin.

The public wrappers dispatch on :data:`perturblearn._accel.USE_NUMBA`. Both
paths perform the same floating point operations in the same order for the
Lasso sweep, so they agree to rounding; the split search picks the same
split unless two candidates are within 1e-12 in impurity reduction.
"""
import numpy as np

from ._accel import USE_NUMBA, njit


# --------------------------------------------------------------------------
# Lasso coordinate descent on the Gram form
#   minimise 1/2 w'Gw - c'w + alpha*|w|_1 with G = X'X/n, c = X'y/n
# --------------------------------------------------------------------------


@njit
def _soft_threshold_scalar(x, t):
    if x > t:
        return x - t
    if x < -t:
        return x + t
    return 0.0


@njit
def _kkt_gram_jit(gram, xty, w, alpha):
    p = w.shape[0]
    worst = 0.0
    for j in range(p):
        g = xty[j]
        for k in range(p):
            g -= gram[j, k] * w[k]
        if w[j] == 0.0:
            v = abs(g) - alpha
            if v < 0.0:
                v = 0.0
        elif w[j] > 0.0:
            v = abs(g - alpha)
        else:
            v = abs(g + alpha)
        if v > worst:
            worst = v
    return worst


@njit
def _cd_gram_jit(gram, xty, alpha, max_iters, tol):
    p = xty.shape[0]
    w = np.zeros(p)
    q = np.zeros(p)
    converged = False
    n_iter = 0
    for it in range(max_iters):
        n_iter = it + 1
        max_delta = 0.0
        for j in range(p):
            gjj = gram[j, j]
            if gjj <= 0.0:
                continue
            old = w[j]
            rho = xty[j] - q[j] + gjj * old
            new = _soft_threshold_scalar(rho, alpha) / gjj
            d = new - old
            if d != 0.0:
                for k in range(p):
                    q[k] += gram[k, j] * d
                w[j] = new
                if abs(d) > max_delta:
                    max_delta = abs(d)
        if max_delta <= tol:
            if _kkt_gram_jit(gram, xty, w, alpha) <= tol:
                converged = True
                break
    return w, n_iter, converged


def _soft_threshold_np(x, t):
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def _kkt_gram_np(gram, xty, w, alpha):
    g = xty - gram @ w
    viol = np.where(
        w == 0.0,
        np.maximum(np.abs(g) - alpha, 0.0),
        np.abs(g - alpha * np.sign(w)),
    )
    return float(viol.max()) if viol.size else 0.0


def _cd_gram_np(gram, xty, alpha, max_iters, tol):
    p = xty.shape[0]
    w = np.zeros(p)
    q = np.zeros(p)
    diag = np.diag(gram).copy()
    converged = False
    n_iter = 0
    for it in range(max_iters):
        n_iter = it + 1
        max_delta = 0.0
        for j in range(p):
            gjj = diag[j]
            if gjj <= 0.0:
                continue
            old = w[j]
            rho = xty[j] - q[j] + gjj * old
            new = float(_soft_threshold_np(rho, alpha)) / gjj
            d = new - old
            if d != 0.0:
                q += gram[:, j] * d
                w[j] = new
                max_delta = max(max_delta, abs(d))
        if max_delta <= tol and _kkt_gram_np(gram, xty, w, alpha) <= tol:
            converged = True
            break
    return w, n_iter, converged


def lasso_gram(gram, xty, alpha, max_iters, tol):
    """Cyclic coordinate descent; returns ``(w, n_iter, converged)``."""
    gram = np.ascontiguousarray(gram, dtype=np.float64)
    xty = np.ascontiguousarray(xty, dtype=np.float64)
    if USE_NUMBA:
        w, n_iter, ok = _cd_gram_jit(gram, xty, float(alpha), int(max_iters), float(tol))
        return w, int(n_iter), bool(ok)
    return _cd_gram_np(gram, xty, float(alpha), int(max_iters), float(tol))


def kkt_gram(gram, xty, w, alpha):
    if USE_NUMBA:
        return float(_kkt_gram_jit(np.ascontiguousarray(gram), np.ascontiguousarray(xty),
                                   np.ascontiguousarray(w, dtype=np.float64), float(alpha)))
    return _kkt_gram_np(gram, xty, w, alpha)


# --------------------------------------------------------------------------
# Regression-tree split search (variance reduction)
# --------------------------------------------------------------------------


@njit
def _best_split_jit(X, y, idx, features):
    n = idx.shape[0]
    best_gain = 0.0
    best_feat = -1
    best_thr = 0.0
    total = 0.0
    for i in range(n):
        total += y[idx[i]]
    for f in features:
        vals = np.empty(n)
        for i in range(n):
            vals[i] = X[idx[i], f]
        order = np.argsort(vals, kind="mergesort")
        left_sum = 0.0
        for r in range(n - 1):
            left_sum += y[idx[order[r]]]
            xl = vals[order[r]]
            xr = vals[order[r + 1]]
            if xr <= xl:
                continue
            nl = r + 1
            nr = n - nl
            right_sum = total - left_sum
            # SSE reduction up to the constant sum(y^2) - total^2/n
            gain = left_sum * left_sum / nl + right_sum * right_sum / nr - total * total / n
            if gain > best_gain + 1e-12:
                best_gain = gain
                best_feat = f
                best_thr = 0.5 * (xl + xr)
    return best_feat, best_thr, best_gain


def _best_split_np(X, y, idx, features):
    n = idx.shape[0]
    yy = y[idx]
    total = yy.sum()
    best_gain, best_feat, best_thr = 0.0, -1, 0.0
    if n < 2:
        return best_feat, best_thr, best_gain
    for f in features:
        vals = X[idx, f]
        order = np.argsort(vals, kind="mergesort")
        sv = vals[order]
        left = np.cumsum(yy[order])[:-1]
        nl = np.arange(1, n, dtype=np.float64)
        nr = n - nl
        right = total - left
        gain = left * left / nl + right * right / nr - total * total / n
        gain = np.where(sv[1:] > sv[:-1], gain, -np.inf)
        r = int(np.argmax(gain))
        if gain[r] > best_gain + 1e-12:
            best_gain = float(gain[r])
            best_feat = int(f)
            best_thr = 0.5 * (sv[r] + sv[r + 1])
    return best_feat, best_thr, best_gain


def best_split(X, y, idx, features):
    """Best variance-reduction split of rows ``idx`` over candidate ``features``.

    Returns ``(feature, threshold, gain)``; ``feature == -1`` when no split
    reduces the squared error.
    """
    idx = np.ascontiguousarray(idx, dtype=np.int64)
    features = np.ascontiguousarray(features, dtype=np.int64)
    if USE_NUMBA:
        f, t, g = _best_split_jit(X, y, idx, features)
        return int(f), float(t), float(g)
    return _best_split_np(X, y, idx, features)
