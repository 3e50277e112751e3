"""Gradient-boosted regression trees with exact greedy split search.

Squared-error boosting in the second-order frame: per round the gradient of
each row is g_i = pred_i - y_i and the hessian is 1, so node statistics are
(G, H) = (sum of gradients, row count). Splits maximize

    gain = 1/2 [ G_L^2/(H_L + l2) + G_R^2/(H_R + l2)
                 - (G_L + G_R)^2/(H_L + H_R + l2) ]

over every midpoint between adjacent distinct sorted feature values, ties
broken toward the lowest feature index and then the lowest threshold. Leaf
weights apply the L1 soft threshold,

    w = -sign(G) * max(|G| - l1, 0) / (H + l2),

and predictions are base_score + learning_rate * sum of tree outputs.

Trees grow level by level over presorted feature columns (one stable argsort
per fit, reused by every round); the numba kernels keep the whole fit inside
compiled code. There is no randomness anywhere in the fit: identical inputs
give identical models regardless of config.seed.

Left-side statistics accumulate in ascending sorted order and right-side
statistics in descending order (suffix sums), never by subtracting left from
total. Oracle tests rely on this: a plain-Python enumeration using the same
accumulation orders reproduces every gain bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit


@dataclass(frozen=True)
class GbtConfig:
    n_estimators: int
    max_depth: int
    l1: float
    l2: float
    learning_rate: float
    seed: int = 0  # carried in records; the fit itself is deterministic

    def to_dict(self) -> dict:
        return {
            "n_estimators": self.n_estimators,
            "max_depth": self.max_depth,
            "l1": self.l1,
            "l2": self.l2,
            "learning_rate": self.learning_rate,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "GbtConfig":
        return cls(
            n_estimators=int(payload["n_estimators"]),
            max_depth=int(payload["max_depth"]),
            l1=float(payload["l1"]),
            l2=float(payload["l2"]),
            learning_rate=float(payload["learning_rate"]),
            seed=int(payload.get("seed", 0)),
        )


@dataclass
class TreeNode:
    """Nested tree view: internal {feature, threshold, left, right} or leaf {weight}."""

    feature: int | None = None
    threshold: float | None = None
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None
    weight: float | None = None

    @property
    def is_leaf(self) -> bool:
        return self.feature is None

    def to_dict(self) -> dict:
        if self.is_leaf:
            return {"weight": self.weight}
        return {
            "feature": self.feature,
            "threshold": self.threshold,
            "left": self.left.to_dict(),
            "right": self.right.to_dict(),
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "TreeNode":
        if "feature" not in payload or payload["feature"] is None:
            return cls(weight=float(payload["weight"]))
        return cls(
            feature=int(payload["feature"]),
            threshold=float(payload["threshold"]),
            left=cls.from_dict(payload["left"]),
            right=cls.from_dict(payload["right"]),
        )


@dataclass
class _Tree:
    """Array-form tree: node i is a leaf iff feature[i] < 0."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    weight: np.ndarray

    def to_node(self, i: int = 0) -> TreeNode:
        if self.feature[i] < 0:
            return TreeNode(weight=float(self.weight[i]))
        return TreeNode(
            feature=int(self.feature[i]),
            threshold=float(self.threshold[i]),
            left=self.to_node(int(self.left[i])),
            right=self.to_node(int(self.right[i])),
        )

    @classmethod
    def from_node(cls, root: TreeNode) -> "_Tree":
        nodes: list[TreeNode] = []

        def number(node: TreeNode) -> int:
            idx = len(nodes)
            nodes.append(node)
            if not node.is_leaf:
                number(node.left)
                number(node.right)
            return idx

        number(root)
        k = len(nodes)
        feature = np.full(k, -1, dtype=np.int32)
        threshold = np.zeros(k)
        left = np.full(k, -1, dtype=np.int32)
        right = np.full(k, -1, dtype=np.int32)
        weight = np.zeros(k)
        # second pass for child indices: preorder numbering means left child
        # is idx+1; right child index needs the left subtree size
        def fill(node: TreeNode, idx: int) -> int:
            if node.is_leaf:
                weight[idx] = node.weight
                return idx + 1
            feature[idx] = node.feature
            threshold[idx] = node.threshold
            left[idx] = idx + 1
            after_left = fill(node.left, idx + 1)
            right[idx] = after_left
            return fill(node.right, after_left)

        fill(root, 0)
        return cls(feature, threshold, left, right, weight)


@njit(cache=True, inline="always")
def _soft_leaf(g_sum, h_sum, lam, alpha):
    mag = abs(g_sum) - alpha
    if mag < 0.0:
        mag = 0.0
    if g_sum > 0.0:
        return -mag / (h_sum + lam)
    if g_sum < 0.0:
        return mag / (h_sum + lam)
    return 0.0


@njit(cache=True)
def _grow_tree(g, sort_idx, XT, invub, lam, alpha, max_depth):
    # XT is feature-major (d, n); scans read it through the per-feature row
    # id tracks, so one row of XT at a time serves as a small hot lookup
    # table while the tracks themselves stream sequentially
    d, n = XT.shape
    max_nodes = 2 * n + 2

    feat = np.full(max_nodes, -1, np.int32)
    thr = np.zeros(max_nodes)
    left = np.full(max_nodes, -1, np.int32)
    right = np.full(max_nodes, -1, np.int32)
    weight = np.zeros(max_nodes)
    depth = np.zeros(max_nodes, np.int32)

    # per-node stats and best-split records; node ids are never reused, so
    # these are written exactly once per node. For children, (G, H) are taken
    # from the winning candidate's side sums at creation time, which lets
    # terminal children (depth cap, too few rows) close without another scan.
    node_g = np.zeros(max_nodes)
    node_h = np.zeros(max_nodes)
    best_gain = np.zeros(max_nodes)
    best_feat = np.full(max_nodes, -1, np.int32)
    best_thr = np.zeros(max_nodes)
    best_gl = np.zeros(max_nodes)
    best_hl = np.zeros(max_nodes)
    best_gr = np.zeros(max_nodes)
    best_hr = np.zeros(max_nodes)
    is_open = np.zeros(max_nodes, np.uint8)

    # row bookkeeping: each open node owns one contiguous segment per feature
    # track, holding its rows in feature-sorted order; stable partition at
    # every split keeps the per-node order identical to a fresh stable sort,
    # so accumulation sequences match the naive per-node scan bit for bit
    seg_start = np.zeros(max_nodes, np.int32)
    seg_end = np.zeros(max_nodes, np.int32)
    frontier = np.zeros(max_nodes, np.int32)
    next_frontier = np.zeros(max_nodes, np.int32)
    side_of = np.zeros(n, np.uint8)  # 0 keep-left, 1 keep-right, 2 retire
    node_of = np.zeros(n, np.int32)
    rsuf = np.zeros(n)  # suffix gradient sums for the segment being scanned
    # two-row nodes see the same gain on every feature with distinct values,
    # so once any feature lands a candidate the rest can be skipped
    h2_done = np.zeros(max_nodes, np.uint8)
    # per-node under-approximation of 1/(node_h + lam), filled when a node
    # opens so the scan's gain bound pays no division per feature
    pinv_lb = np.zeros(max_nodes)

    total_g = 0.0
    for i in range(n):
        total_g += g[i]
    node_g[0] = total_g
    node_h[0] = float(n)
    n_nodes = 1

    if n < 2 or max_depth < 1:
        weight[0] = _soft_leaf(node_g[0], node_h[0], lam, alpha)
        out = np.full(n, weight[0])
        return (
            feat[:1].copy(), thr[:1].copy(), left[:1].copy(),
            right[:1].copy(), weight[:1].copy(), out,
        )

    frontier[0] = 0
    n_front = 1
    seg_start[0] = 0
    seg_end[0] = n
    pinv_lb[0] = (1.0 / (node_h[0] + lam)) * (1.0 - 1e-9)
    # active row ids per feature, value-sorted; column n is a scratch slot
    # that the partition pass's never-advancing cursors write into.  The ids
    # are the only per-row state carried between levels — values and
    # gradients are fetched through them from XT and g, which are small
    # enough to stay cache-resident for a whole level.
    act = np.empty((d, n + 1), dtype=np.int32)
    act[:, :n] = sort_idx
    buf = np.empty_like(act)

    while n_front > 0:
        # scan feature-major (ascending f, so ties break to the lowest
        # feature) with this level's nodes inside: each id track is then
        # walked front to back in memory order, and XT's row f plus g are
        # the only gathered reads
        for f in range(d):
            for q in range(n_front):
                nd = frontier[q]
                if h2_done[nd] == 1:
                    continue
                s = seg_start[nd]
                e = seg_end[nd]
                # suffix gradient sums, descending, so the walk below reads
                # the right-hand total in O(1)
                racc = 0.0
                for i in range(e - 1, s - 1, -1):
                    racc += g[act[f, i]]
                    rsuf[i] = racc
                # ascending walk; candidate between each pair of adjacent
                # distinct values (prev_v starts NaN so the first row and
                # ties both fail the > test).  The cheap bound below brackets
                # the gain from above: invub over-approximates 1/(k+lam) for
                # the side terms and pinv_lb under-approximates 1/(nh+lam)
                # for the subtracted parent term, with 1e-9 headroom dwarfing
                # every rounding in between.  Candidates that cannot beat the
                # running best therefore skip the exact divisions, and the
                # exact expression alone decides what is recorded.
                run_g = 0.0
                prev_v = np.nan
                bg = best_gain[nd]
                nh = node_h[nd]
                pinv = pinv_lb[nd]
                for i in range(s, e):
                    r = act[f, i]
                    v = XT[f, r]
                    if v > prev_v:
                        g_l = run_g
                        g_r = rsuf[i]
                        ub = 0.5 * (
                            g_l * g_l * invub[i - s] + g_r * g_r * invub[e - i]
                        )
                        gsum = g_l + g_r
                        if ub - 0.5 * gsum * gsum * pinv > bg:
                            t = 0.5 * (prev_v + v)
                            # guard against the midpoint rounding onto the
                            # lower value, which would desync the gain from
                            # the partition
                            if t > prev_v:
                                h_l = np.float64(i - s)
                                h_r = nh - h_l
                                gain = 0.5 * (
                                    g_l * g_l / (h_l + lam)
                                    + g_r * g_r / (h_r + lam)
                                    - (g_l + g_r) * (g_l + g_r) / (h_l + h_r + lam)
                                )
                                if gain > bg:
                                    bg = gain
                                    best_gain[nd] = gain
                                    best_feat[nd] = f
                                    best_thr[nd] = t
                                    best_gl[nd] = g_l
                                    best_hl[nd] = h_l
                                    best_gr[nd] = g_r
                                    best_hr[nd] = h_r
                    run_g += g[r]
                    prev_v = v
                if e - s == 2 and best_feat[nd] >= 0:
                    h2_done[nd] = 1

        # split or close each frontier node; children carry their stats,
        # so terminal children (depth cap, too few rows) close immediately
        # and their rows retire without another scan
        n_next = 0
        w = 0  # packed cursor laying out next level's segments
        for q in range(n_front):
            nd = frontier[q]
            if best_gain[nd] > 0.0:
                feat[nd] = best_feat[nd]
                thr[nd] = best_thr[nd]
                lc = n_nodes
                rc = n_nodes + 1
                n_nodes += 2
                left[nd] = lc
                right[nd] = rc
                depth[lc] = depth[nd] + 1
                depth[rc] = depth[nd] + 1
                node_g[lc] = best_gl[nd]
                node_h[lc] = best_hl[nd]
                node_g[rc] = best_gr[nd]
                node_h[rc] = best_hr[nd]
                for c in range(2):
                    child = lc if c == 0 else rc
                    if depth[child] >= max_depth or node_h[child] < 2.0:
                        weight[child] = _soft_leaf(
                            node_g[child], node_h[child], lam, alpha
                        )
                    else:
                        is_open[child] = 1
                        seg_start[child] = w
                        w += np.int32(node_h[child])
                        seg_end[child] = w
                        pinv_lb[child] = (1.0 / (node_h[child] + lam)) * (
                            1.0 - 1e-9
                        )
                        next_frontier[n_next] = child
                        n_next += 1
            else:
                weight[nd] = _soft_leaf(node_g[nd], node_h[nd], lam, alpha)

        # decide each row's side once, walking the split feature's own track
        # (every track holds the same row set); the right child id is always
        # left + 1, which keeps this branchless
        for q in range(n_front):
            nd = frontier[q]
            if feat[nd] < 0:
                continue
            bf = feat[nd]
            bt = thr[nd]
            lc = left[nd]
            side_l = np.uint8(0) if is_open[lc] == 1 else np.uint8(2)
            side_r = np.uint8(1) if is_open[lc + 1] == 1 else np.uint8(2)
            for i in range(seg_start[nd], seg_end[nd]):
                r = act[bf, i]
                ge = np.int32(XT[bf, r] >= bt)
                node_of[r] = lc + ge
                side_of[r] = side_r if ge == 1 else side_l

        # stable partition every id track into the new segments; the store
        # position is selected arithmetically (retiring rows land in the
        # scratch column), so the loop carries no data-dependent branch
        if n_next > 0:
            nn = np.int32(n)
            for f in range(d):
                for q in range(n_front):
                    nd = frontier[q]
                    if feat[nd] < 0:
                        continue
                    wl = seg_start[left[nd]] if is_open[left[nd]] == 1 else nn
                    wr = seg_start[right[nd]] if is_open[right[nd]] == 1 else nn
                    for i in range(seg_start[nd], seg_end[nd]):
                        r = act[f, i]
                        sd = side_of[r]
                        m0 = np.int32(sd == 0)
                        m1 = np.int32(sd == 1)
                        pos = m0 * wl + m1 * wr + (1 - m0 - m1) * nn
                        buf[f, pos] = r
                        wl += m0
                        wr += m1
            tmp = act
            act = buf
            buf = tmp
        for q in range(n_next):
            frontier[q] = next_frontier[q]
        n_front = n_next

    out = np.empty(n)
    for r in range(n):
        out[r] = weight[node_of[r]]
    return (
        feat[:n_nodes].copy(),
        thr[:n_nodes].copy(),
        left[:n_nodes].copy(),
        right[:n_nodes].copy(),
        weight[:n_nodes].copy(),
        out,
    )


@njit(cache=True)
def _best_split_root(XT, g, sort_idx, lam):
    """Best split of a single node holding every row; mirrors _grow_tree."""
    d, n = XT.shape
    rsuf = np.zeros(n)
    best_gain = 0.0
    best_feat = np.int64(-1)
    best_thr = 0.0
    total_h = float(n)
    gate_scale = 2.0 * (1.0 + lam) * (1.0 - 1e-12)
    gate = 0.0
    for f in range(d):
        racc = 0.0
        for i in range(n - 1, -1, -1):
            racc += g[sort_idx[f, i]]
            rsuf[i] = racc
        run_g = 0.0
        run_h = 0.0
        prev_v = 0.0
        has_prev = False
        for i in range(n):
            r = sort_idx[f, i]
            v = XT[f, r]
            if has_prev and v > prev_v:
                g_l = run_g
                g_r = rsuf[i]
                if g_l * g_l + g_r * g_r > gate:
                    t = 0.5 * (prev_v + v)
                    if t > prev_v:
                        h_l = run_h
                        h_r = total_h - h_l
                        gain = 0.5 * (
                            g_l * g_l / (h_l + lam)
                            + g_r * g_r / (h_r + lam)
                            - (g_l + g_r) * (g_l + g_r) / (h_l + h_r + lam)
                        )
                        if gain > best_gain:
                            best_gain = gain
                            best_feat = np.int64(f)
                            best_thr = t
                            gate = gain * gate_scale
            run_g += g[r]
            run_h += 1.0
            prev_v = v
            has_prev = True
    return best_feat, best_thr, best_gain


@njit(cache=True)
def _predict_forest(feat, thr, left, right, weight, offsets, X, base, lr):
    n = X.shape[0]
    n_trees = offsets.shape[0] - 1
    out = np.full(n, base)
    for ti in range(n_trees):
        off = offsets[ti]
        for i in range(n):
            node = 0
            while feat[off + node] >= 0:
                if X[i, feat[off + node]] < thr[off + node]:
                    node = left[off + node]
                else:
                    node = right[off + node]
            out[i] += lr * weight[off + node]
    return out


def _presort(X: np.ndarray) -> np.ndarray:
    # stable so equal values keep row order; the split oracle sorts the same way
    return np.ascontiguousarray(np.argsort(X, axis=0, kind="stable").T.astype(np.int32))


def leaf_weight(g_sum: float, h_sum: float, l1: float, l2: float) -> float:
    """Optimal leaf output -sign(G) * max(|G| - l1, 0) / (H + l2)."""
    mag = max(abs(g_sum) - l1, 0.0)
    if g_sum > 0.0:
        return -mag / (h_sum + l2)
    if g_sum < 0.0:
        return mag / (h_sum + l2)
    return 0.0


def find_best_split(X, gradients, l2: float = 0.0):
    """Best (feature, threshold, gain) for a node holding all given rows.

    Hessians are implicitly 1 per row. Returns (None, nan, 0.0) when no
    candidate has positive gain. This is the same scan the tree grower runs,
    exposed for oracle comparison.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    g = np.ascontiguousarray(gradients, dtype=np.float64)
    if X.ndim != 2 or g.shape != (X.shape[0],):
        raise ValueError("X must be 2-D with one gradient per row")
    feature, threshold, gain = _best_split_root(
        np.ascontiguousarray(X.T), g, _presort(X), float(l2)
    )
    if feature < 0:
        return None, float("nan"), 0.0
    return int(feature), float(threshold), float(gain)


@dataclass
class GbtModel:
    base_score: float
    config: GbtConfig
    tree_arrays: list[_Tree] = field(repr=False, default_factory=list)
    train_mse: tuple[float, ...] = ()
    fitted_predictions: np.ndarray | None = field(repr=False, default=None)
    n_features: int = 0

    @property
    def trees(self) -> list[TreeNode]:
        """Nested-object view of the forest (used for serialization/tests)."""
        return [t.to_node() for t in self.tree_arrays]

    def predict(self, X) -> np.ndarray:
        return predict_gbt(self, X)

    def _flat(self):
        cached = getattr(self, "_flat_cache", None)
        if cached is not None:
            return cached
        sizes = [t.feature.shape[0] for t in self.tree_arrays]
        offsets = np.zeros(len(sizes) + 1, dtype=np.int64)
        np.cumsum(sizes, out=offsets[1:])
        if self.tree_arrays:
            flat = (
                np.concatenate([t.feature for t in self.tree_arrays]),
                np.concatenate([t.threshold for t in self.tree_arrays]),
                np.concatenate([t.left for t in self.tree_arrays]),
                np.concatenate([t.right for t in self.tree_arrays]),
                np.concatenate([t.weight for t in self.tree_arrays]),
                offsets,
            )
        else:
            empty_i = np.zeros(0, dtype=np.int32)
            empty_f = np.zeros(0)
            flat = (empty_i, empty_f, empty_i, empty_i, empty_f, offsets)
        self._flat_cache = flat
        return flat

    def to_json_dict(self) -> dict:
        return {
            "family": "trees",
            "base_score": self.base_score,
            "config": self.config.to_dict(),
            "n_features": self.n_features,
            "train_mse": list(self.train_mse),
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_json_dict(cls, payload: dict) -> "GbtModel":
        roots = [TreeNode.from_dict(t) for t in payload["trees"]]
        return cls(
            base_score=float(payload["base_score"]),
            config=GbtConfig.from_dict(payload["config"]),
            tree_arrays=[_Tree.from_node(r) for r in roots],
            train_mse=tuple(payload.get("train_mse", ())),
            n_features=int(payload["n_features"]),
        )


def fit_gbt(X, y, config: GbtConfig, base_score: float | None = None) -> GbtModel:
    """Boost ``config.n_estimators`` trees on (X, y).

    ``base_score`` defaults to mean(y); tests override it to isolate single
    trees. Raises on empty or non-finite input.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
        raise ValueError("X must be (n, d) with y of length n")
    n = X.shape[0]
    if n < 2:
        raise ValueError("fit_gbt needs at least 2 rows")
    if not np.all(np.isfinite(X)) or not np.all(np.isfinite(y)):
        raise ValueError("fit_gbt requires finite features and target")

    base = float(np.mean(y)) if base_score is None else float(base_score)
    lam = float(config.l2)
    alpha = float(config.l1)
    lr = float(config.learning_rate)
    sort_idx = _presort(X)
    XT = np.ascontiguousarray(X.T)
    # certified upper bounds on 1/(k + lam) for integer side hessians k;
    # the 1e-9 headroom dwarfs the half-ulp division error, so the split
    # scan's cheap gain bound can never round below the true value (index
    # 0 is a placeholder, empty sides are never probed)
    ks = np.arange(n + 1, dtype=np.float64)
    ks[0] = 1.0
    invub = (1.0 / (ks + lam)) * (1.0 + 1e-9)

    pred = np.full(n, base)
    trees: list[_Tree] = []
    trace: list[float] = []
    for _ in range(config.n_estimators):
        g = pred - y
        feat, thr, left, right, weight, leaf_out = _grow_tree(
            g, sort_idx, XT, invub, lam, alpha, int(config.max_depth)
        )
        trees.append(_Tree(feat, thr, left, right, weight))
        pred = pred + lr * leaf_out
        resid = pred - y
        trace.append(float(np.mean(resid * resid)))

    return GbtModel(
        base_score=base,
        config=config,
        tree_arrays=trees,
        train_mse=tuple(trace),
        fitted_predictions=pred,
        n_features=X.shape[1],
    )


def predict_gbt(model: GbtModel, X) -> np.ndarray:
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.n_features:
        raise ValueError(
            f"expected {model.n_features} feature columns, got "
            f"{X.shape[1] if X.ndim == 2 else 'non-2D input'}"
        )
    if not model.tree_arrays:
        return np.full(X.shape[0], model.base_score)
    feat, thr, left, right, weight, offsets = model._flat()
    return _predict_forest(
        feat, thr, left, right, weight, offsets, X,
        model.base_score, model.config.learning_rate,
    )
