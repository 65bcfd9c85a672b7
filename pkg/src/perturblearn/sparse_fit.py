"""L1-regularised influence fitting."""
from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .perturb import PerturbationDataset


class LassoConvergenceWarning(UserWarning):
    pass


@dataclass(frozen=True)
class LassoConfig:
    alpha: float = 0.001
    max_iters: int = 10000
    tol: float = 1e-8

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be nonnegative")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be positive")


@dataclass
class LassoFit:
    coef: np.ndarray
    n_iter: int
    converged: bool
    kkt_violation: float


def soft_threshold(x, t):
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def _polish(gram, xty, w, alpha, tol, max_steps=None):
    """Primal active-set refinement of an approximate Lasso solution.

    Each step either moves along a null direction of the active Gram block
    (leaves the fit unchanged, does not raise the L1 term), steps toward the
    fixed-sign solution and stops at the first sign change, or admits the
    worst KKT-violating inactive coordinate. Every step is non-increasing in
    the objective. Returns the result only if it certifies KKT within
    ``tol``, otherwise ``None``.
    """
    w = w.copy()
    p = w.size
    max_steps = max_steps or 20 * p + 20
    for _ in range(max_steps):
        active = np.flatnonzero(w)
        if active.size:
            s = np.sign(w[active])
            G = gram[np.ix_(active, active)]
            ev, vecs = np.linalg.eigh(G)
            if ev[0] <= 1e-12 * max(ev[-1], 1e-300):
                d = vecs[:, 0]
                if s @ d > 0:
                    d = -d
                ratios = np.full(active.size, np.inf)
                toward_zero = d * s < 0
                ratios[toward_zero] = -w[active][toward_zero] / d[toward_zero]
                k = int(np.argmin(ratios))
                w[active] += ratios[k] * d
                w[active[k]] = 0.0
                continue
            target = np.linalg.solve(G, xty[active] - alpha * s)
            flips = np.sign(target) != s
            if flips.any():
                step = target - w[active]
                ts = -w[active][flips] / step[flips]
                k = int(np.argmin(ts))
                w[active] += ts[k] * step
                w[active[np.flatnonzero(flips)[k]]] = 0.0
                continue
            w[active] = target
        g = xty - gram @ w
        slack = np.where(w == 0, np.abs(g) - alpha, -np.inf)
        j = int(np.argmax(slack))
        if slack[j] <= tol:
            break
        # a tiny step in the descent direction seeds the new active coordinate
        w[j] = np.sign(g[j]) * min(tol, (abs(g[j]) - alpha) / max(gram[j, j], 1e-300))
    return w if kernels.kkt_gram(gram, xty, w, alpha) <= tol else None


def lasso_fit(X, y, cfg: LassoConfig) -> LassoFit:
    """Minimise ``(1/2n)|y - Xw|^2 + alpha*|w|_1`` by cyclic coordinate descent.

    No intercept. Stops once the largest coefficient update is below
    ``cfg.tol`` and the KKT residual is too. When the sweeps run out (slow
    on ill-conditioned designs) the active set found so far is solved
    exactly; that result is kept only if it passes the KKT check.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
        raise ValueError("features must be a nonempty n x p matrix")
    if y.shape != (X.shape[0],):
        raise ValueError("target length must equal the number of rows")
    if not (np.isfinite(X).all() and np.isfinite(y).all()):
        raise ValueError("features and target must be finite")
    n = X.shape[0]
    gram = X.T @ X / n
    xty = X.T @ y / n
    w, n_iter, converged = kernels.lasso_gram(gram, xty, cfg.alpha, cfg.max_iters, cfg.tol)
    if not converged:
        polished = _polish(gram, xty, w, cfg.alpha, cfg.tol)
        if polished is not None:
            w, converged = polished, True
    viol = kernels.kkt_gram(gram, xty, w, cfg.alpha)
    return LassoFit(w, n_iter, converged, viol)


def lasso(X, y, cfg: LassoConfig) -> np.ndarray:
    """Coefficient vector of :func:`lasso_fit`; warns if it did not converge."""
    fit = lasso_fit(X, y, cfg)
    if not fit.converged:
        warnings.warn(
            f"lasso did not converge in {cfg.max_iters} sweeps (KKT violation {fit.kkt_violation:.3g})",
            LassoConvergenceWarning,
            stacklevel=2,
        )
    return fit.coef


def kkt_violation(X, y, w, alpha) -> float:
    """Largest KKT residual of ``w``, computed directly from ``X`` and ``y``."""
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    g = X.T @ (np.asarray(y) - X @ w) / n
    viol = np.where(w == 0, np.maximum(np.abs(g) - alpha, 0.0), np.abs(g - alpha * np.sign(w)))
    return float(viol.max())


@dataclass
class InfluenceMatrix:
    """Attribute-by-latent weight matrix."""

    values: np.ndarray
    attribute_names: tuple[str, ...]
    latents: tuple[int, ...]
    unconverged: list[int] = field(default_factory=list)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.attribute_names = tuple(self.attribute_names)
        self.latents = tuple(int(k) for k in self.latents)
        if self.values.shape != (len(self.attribute_names), len(self.latents)):
            raise ValueError("influence matrix shape does not match its labels")
        if not np.isfinite(self.values).all():
            raise ValueError("influence matrix entries must be finite")

    def support(self) -> np.ndarray:
        return self.values != 0

    def column(self, latent: int) -> np.ndarray:
        return self.values[:, self.latents.index(latent)]


def fit_influence(ds: PerturbationDataset, cfg: LassoConfig, workers: int = 1) -> InfluenceMatrix:
    """Column ``i`` = Lasso of ``dz`` on standardised ``da`` over latent-``i`` records."""
    da = ds.da

    def fit_column(i):
        rows = ds.latent == i
        if not rows.any():
            return np.zeros(len(ds.attribute_names)), True
        fit = lasso_fit(da[rows], ds.dz[rows], cfg)
        return fit.coef, fit.converged

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            cols = list(pool.map(fit_column, range(ds.latent_dim)))
    else:
        cols = [fit_column(i) for i in range(ds.latent_dim)]
    W = np.column_stack([c for c, _ in cols]) if cols else np.zeros((len(ds.attribute_names), 0))
    bad = [i for i, (_, ok) in enumerate(cols) if not ok]
    if bad:
        warnings.warn(f"lasso did not converge for latent columns {bad}", LassoConvergenceWarning, stacklevel=2)
    return InfluenceMatrix(W, ds.attribute_names, tuple(range(ds.latent_dim)), bad)
