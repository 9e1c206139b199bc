"""Univariate L2 regression trees with cost-complexity pruning.

Used to bin noisy per-age estimates into piecewise-constant age bands.
The tree is grown by exhaustive split search, then pruned along the
weakest-link sequence; the complexity penalty is chosen by k-fold
cross-validation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class _Node:
    lo: int
    hi: int
    mean: float
    sse: float
    threshold: float | None = None
    left: "_Node | None" = None
    right: "_Node | None" = None
    # pruning level at which this node becomes a leaf
    collapse_at: float = np.inf

    @property
    def is_split(self) -> bool:
        return self.left is not None


def _grow(x, y, w, lo, hi, min_leaf, cw, cwy, cwyy) -> _Node:
    def stats(a, b):
        sw = cw[b] - cw[a]
        swy = cwy[b] - cwy[a]
        sse = (cwyy[b] - cwyy[a]) - (swy * swy / sw if sw > 0 else 0.0)
        return (swy / sw if sw > 0 else 0.0), max(sse, 0.0)

    mean, sse = stats(lo, hi)
    node = _Node(lo, hi, mean, sse)
    if hi - lo < 2 * min_leaf or sse <= 1e-14 * max(1.0, abs(cwyy[hi] - cwyy[lo])):
        return node
    best, best_k = sse, None
    for k in range(lo + min_leaf, hi - min_leaf + 1):
        if x[k - 1] == x[k]:
            continue
        s = stats(lo, k)[1] + stats(k, hi)[1]
        if s < best - 1e-12 * max(sse, 1e-300):
            best, best_k = s, k
    if best_k is None:
        return node
    node.threshold = 0.5 * (x[best_k - 1] + x[best_k])
    node.left = _grow(x, y, w, lo, best_k, min_leaf, cw, cwy, cwyy)
    node.right = _grow(x, y, w, best_k, hi, min_leaf, cw, cwy, cwyy)
    return node


def _subtree(node: _Node, alpha: float):
    """(sum of leaf sse, leaf count) of the subtree at penalty alpha."""
    if not node.is_split or node.collapse_at <= alpha:
        return node.sse, 1
    ls, ln = _subtree(node.left, alpha)
    rs, rn = _subtree(node.right, alpha)
    return ls + rs, ln + rn


def _internal(node: _Node, alpha: float):
    if node.is_split and node.collapse_at > alpha:
        yield node
        yield from _internal(node.left, alpha)
        yield from _internal(node.right, alpha)


def _prune_path(root: _Node) -> list[float]:
    """Annotate nodes with their weakest-link collapse level; return the alpha sequence."""
    alphas = [0.0]
    current = 0.0
    while root.is_split and root.collapse_at == np.inf:
        best = np.inf
        scores = []
        for node in _internal(root, current):
            r_sub, n_leaves = _subtree(node, current)
            g = (node.sse - r_sub) / (n_leaves - 1)
            scores.append((node, g))
            best = min(best, g)
        best = max(best, current)
        for node, g in scores:
            if g <= best * (1 + 1e-10) + 1e-300:
                node.collapse_at = best
        current = best
        alphas.append(best)
    return alphas


def _predict(root: _Node, alpha: float, xs) -> np.ndarray:
    out = np.empty(len(xs))
    for i, v in enumerate(xs):
        node = root
        while node.is_split and node.collapse_at > alpha:
            node = node.left if v < node.threshold else node.right
        out[i] = node.mean
    return out


def _leaves(root: _Node, alpha: float):
    if not root.is_split or root.collapse_at <= alpha:
        return [root]
    return _leaves(root.left, alpha) + _leaves(root.right, alpha)


def _build(x, y, w, min_leaf) -> _Node:
    order = np.argsort(x, kind="stable")
    x, y, w = x[order], y[order], w[order]
    cw = np.concatenate([[0.0], np.cumsum(w)])
    cwy = np.concatenate([[0.0], np.cumsum(w * y)])
    cwyy = np.concatenate([[0.0], np.cumsum(w * y * y)])
    root = _grow(x, y, w, 0, x.size, min_leaf, cw, cwy, cwyy)
    root._x = x  # sorted inputs, for bin edges
    return root


@dataclass(frozen=True)
class BinFit:
    """Piecewise-constant fit: ``means[k]`` applies to ``edges[k] <= x < edges[k+1]``."""

    thresholds: np.ndarray
    means: np.ndarray
    alpha: float
    cv_error: float | None

    @property
    def n_bins(self) -> int:
        return self.means.size

    def predict(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return self.means[np.searchsorted(self.thresholds, x, side="right")]


def cart_bin(x, y, weights=None, folds: int = 5, min_leaf: int = 1, seed: int = 0, one_se: bool = True) -> BinFit:
    """Bin ``y`` over ``x`` with a cross-validated, cost-complexity-pruned L2 tree.

    Parameters
    ----------
    x, y : array_like
        Covariate (ages) and response values; non-finite responses are ignored.
    weights : array_like, optional
        Non-negative case weights for the L2 loss.
    folds : int
        Number of cross-validation folds (reduced to the sample size if larger).
    min_leaf : int
        Minimum number of observations per bin.
    seed : int
        Seed for the random fold assignment.
    one_se : bool
        Pick the simplest tree within one standard error of the CV minimum.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    w = np.ones_like(y) if weights is None else np.asarray(weights, dtype=float)
    keep = np.isfinite(y) & np.isfinite(x) & (w > 0)
    x, y, w = x[keep], y[keep], w[keep]
    if x.size == 0:
        raise ValueError("cart_bin needs at least one finite observation")
    root = _build(x, y, w, min_leaf)
    alphas = _prune_path(root)
    # candidate penalties: geometric midpoints of the pruning sequence
    cands = [0.0] + [float(np.sqrt(a * b)) for a, b in zip(alphas[1:-1], alphas[2:])]
    if len(alphas) > 1:
        cands.append(alphas[-1] * 1.0000001 + 1e-300)
    cands = sorted(set(cands))
    k = min(folds, x.size)
    cv_err = None
    chosen = cands[-1]
    if root.is_split and k >= 2:
        rng = np.random.default_rng(seed)
        fold_of = np.empty(x.size, dtype=int)
        fold_of[rng.permutation(x.size)] = np.arange(x.size) % k
        errs = np.zeros((len(cands), x.size))
        for f in range(k):
            tr, te = fold_of != f, fold_of == f
            sub = _build(x[tr], y[tr], w[tr], min_leaf)
            _prune_path(sub)
            for ci, a in enumerate(cands):
                errs[ci, te] = w[te] * (y[te] - _predict(sub, a, x[te])) ** 2
        total = errs.sum(axis=1)
        best = int(np.argmin(total))
        if one_se:
            se = np.sqrt(x.size) * errs[best].std()
            ok = np.nonzero(total <= total[best] + se)[0]
            best = int(ok.max())
        else:
            # ties resolve to the simpler tree
            best = int(np.nonzero(total <= total[best] * (1 + 1e-12))[0].max())
        chosen = cands[best]
        cv_err = float(total[best])
    leaves = _leaves(root, chosen)
    xs = root._x
    thresholds = np.array([0.5 * (xs[l.hi - 1] + xs[l.hi]) for l in leaves[:-1]])
    means = np.array([l.mean for l in leaves])
    return BinFit(thresholds=thresholds, means=means, alpha=float(chosen), cv_error=cv_err)
