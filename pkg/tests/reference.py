"""Plain (no feature construction) C4.5-style tree, AdaBoost and gradient
boosting, written from scratch on numpy for equivalence tests.

Nothing here imports treefc. The numerical recipe (stable sort, running sums,
midpoint thresholds, relative tie tolerance) follows the documented split
contract so that the two code paths agree bit for bit.
"""

from __future__ import annotations

import math

import numpy as np

TIE = 1e-9
ZERO = 1e-12


def _h2(q):
    q = np.clip(q, 0.0, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = -(q * np.log2(q) + (1 - q) * np.log2(1 - q))
    return np.nan_to_num(out, nan=0.0)


def _safe_div(a, b):
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(b > 0, a / np.where(b > 0, b, 1.0), 0.0)


def best_cut(x, y, w, min_leaf, regression):
    """(score, threshold) of the best cut of one column, or None."""
    order = np.argsort(x, kind="stable")
    xs, ys, ws = x[order], y[order], w[order]
    n = len(xs)
    idx = np.arange(min_leaf - 1, n - min_leaf)
    idx = idx[xs[idx] < xs[idx + 1]]
    if idx.size == 0:
        return None
    cw = np.cumsum(ws)
    total = cw[-1]
    if total <= 0:
        return None
    if regression:
        ys = ys.astype(np.float64)
        cs = np.cumsum(ws * ys)
        mean = cs[-1] / total
        scale = float(np.dot(ws, (ys - mean) ** 2) / total)
        if scale <= 0:
            return None
        wl, sl = cw[idx], cs[idx]
        wr, sr = total - wl, cs[-1] - sl
        scores = (np.where(wl > 0, (_safe_div(sl, wl) - mean) ** 2 * wl, 0.0)
                  + np.where(wr > 0, (_safe_div(sr, wr) - mean) ** 2 * wr, 0.0)) / total
    else:
        scale = 1.0
        cp = np.cumsum(ws * (ys == 1))
        wl, pl = cw[idx], cp[idx]
        wr, pr = total - wl, cp[-1] - pl
        scores = (_h2(cp[-1] / total) - (wl / total) * _h2(_safe_div(pl, wl))
                  - (wr / total) * _h2(_safe_div(pr, wr)))
    top = scores.max()
    if not top > ZERO * scale:
        return None
    k = int(np.flatnonzero(scores >= top - TIE * abs(top))[0])
    lo, hi = xs[idx[k]], xs[idx[k] + 1]
    t = 0.5 * lo + 0.5 * hi
    return float(scores[k]), float(t if t < hi else lo)


def _leaf(y, w, regression):
    if regression:
        s = w.sum()
        return float(np.dot(w, y) / s) if s > 0 else float(np.mean(y))
    w = w if w.sum() > 0 else np.ones(len(y))
    return float(w[y == 1].sum() / w.sum())


class PlainTree:
    """Nodes are dicts; 'value' is p(signal) or the regression value."""

    def __init__(self, columns: dict, y, w, max_depth=20, min_split=20, min_leaf=5, regression=False):
        self.regression = regression
        self.nodes = []
        names = list(columns)
        rows = np.arange(len(y))
        self.nodes.append({"depth": 1, "value": _leaf(y, w, regression), "n": len(y)})
        frontier = [(0, rows)]
        while frontier:
            nxt = []
            for i, r in frontier:
                node = self.nodes[i]
                if node["depth"] > max_depth or len(r) < min_split:
                    continue
                best = None
                for name in names:
                    cut = best_cut(columns[name][r], y[r], w[r], min_leaf, regression)
                    if cut is not None and (best is None or cut[0] > best[0]):
                        best = (cut[0], cut[1], name)
                if best is None:
                    continue
                node["col"], node["thr"] = best[2], best[1]
                left = columns[best[2]][r] <= best[1]
                kids = []
                for part in (r[left], r[~left]):
                    self.nodes.append({"depth": node["depth"] + 1, "value": _leaf(y[part], w[part], regression),
                                       "n": len(part)})
                    kids.append(len(self.nodes) - 1)
                    nxt.append((len(self.nodes) - 1, part))
                node["kids"] = kids
            frontier = nxt

    def leaf_index(self, columns: dict) -> np.ndarray:
        n = len(next(iter(columns.values())))
        out = np.zeros(n, dtype=np.int64)
        for j in range(n):
            i = 0
            while "kids" in self.nodes[i]:
                nd = self.nodes[i]
                i = nd["kids"][0] if columns[nd["col"]][j] <= nd["thr"] else nd["kids"][1]
            out[j] = i
        return out

    def values(self, columns: dict) -> np.ndarray:
        table = np.array([nd["value"] for nd in self.nodes])
        return table[self.leaf_index(columns)]

    def labels(self, columns: dict) -> np.ndarray:
        p1 = self.values(columns)
        return (p1 > 1 - p1).astype(np.int8)

    def shape(self):
        return [(nd["depth"], nd.get("col"), nd.get("thr"), nd["n"]) for nd in self.nodes]


def plain_adaboost(columns, y, w, n_rounds, min_split=20, min_leaf=5):
    """Two-class SAMME over information-gain stumps. Returns [(stump, alpha)]."""
    w = np.asarray(w, dtype=np.float64)
    w = w / w.sum()
    out = []
    for _ in range(n_rounds):
        stump = PlainTree(columns, y, w, max_depth=1, min_split=min_split, min_leaf=min_leaf)
        miss = stump.labels(columns) != y
        err = float(w[miss].sum() / w.sum())
        if err >= 0.5:
            break
        if err == 0:
            out.append((stump, math.log(1e10)))
            break
        alpha = math.log((1 - err) / err)
        out.append((stump, alpha))
        w = w * np.exp(alpha * miss)
        w = w / w.sum()
    return out


def adaboost_margin(stages, columns):
    n = len(next(iter(columns.values())))
    m = np.zeros(n)
    for stump, alpha in stages:
        m += alpha * np.where(stump.labels(columns) == 1, 1.0, -1.0)
    return m


def plain_gradient_boosting(columns, y01, w, n_stages, lr=0.1, depth=3, min_split=20, min_leaf=5):
    """Binomial deviance boosting with Newton leaf steps. Returns (F0, trees)."""
    y = np.where(y01 == 1, 1.0, -1.0)
    w = np.asarray(w, dtype=np.float64)
    f0 = 0.5 * math.log(w[y > 0].sum() / w[y < 0].sum())
    f = np.full(len(y), f0)
    trees = []
    for _ in range(n_stages):
        r = 2.0 * y / (1.0 + np.exp(np.clip(2.0 * y * f, -700, 700)))
        tree = PlainTree(columns, r, w, max_depth=depth, min_split=min_split, min_leaf=min_leaf, regression=True)
        leaf = tree.leaf_index(columns)
        for i, nd in enumerate(tree.nodes):
            if "kids" in nd:
                continue
            at = leaf == i
            a = np.abs(r[at])
            den = float(np.dot(w[at], a * (2.0 - a)))
            nd["value"] = float(np.dot(w[at], r[at])) / den if den > 0 else 0.0
        f = f + lr * np.array([nd["value"] for nd in tree.nodes])[leaf]
        trees.append(tree)
    return f0, trees


def gb_margin(f0, trees, columns, lr=0.1):
    n = len(next(iter(columns.values())))
    total = np.zeros(n)
    for tree in trees:
        total += tree.values(columns)
    return f0 + lr * total
