"""Gradient-boosted regression trees: squared error, exact greedy splits.

Second-order boosting with g = prediction - target and unit hessians, leaf
weights -G/(H + lambda), depth-limited level-wise growth, per-round row
subsampling without replacement and per-tree column sampling. Thresholds and
leaf values are quantized to float32 at fit time so persisted models predict
bit-identically.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import BundleFormatError, ConfigError

# hyperparameter search space reported as best-performing; fits may use values
# outside it (the worked examples do), validate_search_ranges opts in
SEARCH_RANGES = {
    "max_depth": (6, 9),
    "n_estimators": (100, 300),
    "learning_rate": (0.03, 0.15),
    "subsample": (0.6, 0.9),
    "colsample_bytree": (0.7, 1.0),
    "min_child_weight": (1.0, 5.0),
}


@dataclass
class GbtConfig:
    max_depth: int = 6
    n_estimators: int = 200
    learning_rate: float = 0.1
    subsample: float = 0.8
    colsample_bytree: float = 1.0
    min_child_weight: float = 1.0
    reg_lambda: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.max_depth < 1:
            raise ConfigError(f"max_depth must be >= 1, got {self.max_depth}")
        if self.n_estimators < 1:
            raise ConfigError(f"n_estimators must be >= 1, got {self.n_estimators}")
        if not 0.0 < self.learning_rate <= 1.0:
            raise ConfigError(f"learning_rate must be in (0, 1], got {self.learning_rate}")
        if not 0.0 < self.subsample <= 1.0:
            raise ConfigError(f"subsample must be in (0, 1], got {self.subsample}")
        if not 0.0 < self.colsample_bytree <= 1.0:
            raise ConfigError(
                f"colsample_bytree must be in (0, 1], got {self.colsample_bytree}")
        if self.min_child_weight < 0:
            raise ConfigError(
                f"min_child_weight must be >= 0, got {self.min_child_weight}")
        if self.reg_lambda < 0:
            raise ConfigError(f"reg_lambda must be >= 0, got {self.reg_lambda}")

    def validate_search_ranges(self) -> None:
        """Reject values outside the documented tuning ranges."""
        for name, (lo, hi) in SEARCH_RANGES.items():
            value = getattr(self, name)
            if not lo <= value <= hi:
                raise ConfigError(f"{name}={value} outside tuning range [{lo}, {hi}]")


@dataclass
class Tree:
    """Flat node arrays; feature == -1 marks a leaf."""

    feature: np.ndarray    # int32
    threshold: np.ndarray  # float32
    left: np.ndarray       # int32
    right: np.ndarray      # int32
    value: np.ndarray      # float32

    def __len__(self) -> int:
        return len(self.feature)

    def predict(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(len(X), dtype=np.int64)
        out = np.zeros(len(X))
        pending = np.arange(len(X))
        while pending.size:
            feats = self.feature[node[pending]]
            leaf = feats < 0
            if leaf.any():
                done = pending[leaf]
                out[done] = self.value[node[done]]
                pending = pending[~leaf]
                feats = feats[~leaf]
            if not pending.size:
                break
            cur = node[pending]
            go_left = X[pending, feats] < self.threshold[cur]
            node[pending] = np.where(go_left, self.left[cur], self.right[cur])
        return out


@dataclass
class GbtModel:
    base_score: float
    learning_rate: float
    feature_count: int
    trees: list[Tree] = field(default_factory=list)
    train_mse: list[float] = field(default_factory=list)

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.feature_count:
            raise ConfigError(
                f"expected {self.feature_count} features, got shape {X.shape}")
        out = np.full(len(X), self.base_score)
        for tree in self.trees:
            out += self.learning_rate * tree.predict(X)
        return out


def predict(model: GbtModel, X: np.ndarray) -> np.ndarray:
    return model.predict(X)


def _grow_tree(Xs: np.ndarray, gs: np.ndarray, order: np.ndarray,
               cols: np.ndarray, max_depth: int, lam: float,
               min_child: float) -> Tree:
    """Level-wise exact greedy tree on a pre-sorted feature submatrix.

    Xs: (n, fc) selected rows/columns; gs: gradients; order: per-column
    stable argsort of Xs; cols: global feature indices of the columns.
    """
    n, fc = Xs.shape
    feature = [-1]
    threshold = [0.0]
    left = [-1]
    right = [-1]
    node_of = np.zeros(n, dtype=np.int64)
    active = [0]

    for _ in range(max_depth):
        if not active:
            break
        key = node_of[order]
        perm = np.argsort(key, axis=0, kind="stable")
        sorted_rows = np.take_along_axis(order, perm, axis=0)
        xs = np.take_along_axis(Xs, sorted_rows, axis=0)
        csum = np.cumsum(gs[sorted_rows], axis=0)
        counts = np.bincount(node_of, minlength=len(feature))
        starts = np.concatenate([[0], np.cumsum(counts)])

        next_active = []
        for node in active:
            lo, hi = starts[node], starts[node] + counts[node]
            m = hi - lo
            if m < max(2, 2 * min_child):
                continue
            base = csum[lo - 1] if lo > 0 else np.zeros(fc)
            g_left = csum[lo:hi - 1] - base          # (m-1, fc)
            g_total = csum[hi - 1, 0] - (csum[lo - 1, 0] if lo > 0 else 0.0)
            h_left = np.arange(1, m, dtype=float)[:, None]
            h_right = m - h_left
            gain = (g_left ** 2 / (h_left + lam)
                    + (g_total - g_left) ** 2 / (h_right + lam)
                    - g_total ** 2 / (m + lam))
            valid = ((xs[lo:hi - 1] < xs[lo + 1:hi])
                     & (h_left >= min_child) & (h_right >= min_child))
            gain = np.where(valid, gain, -np.inf)
            # column-major argmax: ties resolve to lowest feature index,
            # then lowest threshold (positions ascend with x)
            flat = np.argmax(gain.T)
            col, pos = divmod(flat, m - 1)
            if not np.isfinite(gain[pos, col]) or gain[pos, col] <= 0.0:
                continue
            thr = np.float32(0.5 * (xs[lo + pos, col] + xs[lo + pos + 1, col]))
            seg_rows = sorted_rows[lo:hi, col]
            go_left = Xs[seg_rows, col] < float(thr)
            if not go_left.any() or go_left.all():
                continue  # float32 midpoint failed to separate, keep as leaf
            left_id = len(feature)
            right_id = left_id + 1
            feature[node] = int(cols[col])
            threshold[node] = float(thr)
            left[node] = left_id
            right[node] = right_id
            feature += [-1, -1]
            threshold += [0.0, 0.0]
            left += [-1, -1]
            right += [-1, -1]
            node_of[seg_rows[go_left]] = left_id
            node_of[seg_rows[~go_left]] = right_id
            next_active += [left_id, right_id]
        active = next_active

    g_sum = np.bincount(node_of, weights=gs, minlength=len(feature))
    h_sum = np.bincount(node_of, minlength=len(feature)).astype(float)
    values = np.zeros(len(feature), dtype=np.float32)
    leaves = np.array(feature) < 0
    values[leaves] = (-g_sum[leaves] / (h_sum[leaves] + lam)).astype(np.float32)
    return Tree(
        feature=np.array(feature, dtype=np.int32),
        threshold=np.array(threshold, dtype=np.float32),
        left=np.array(left, dtype=np.int32),
        right=np.array(right, dtype=np.int32),
        value=values,
    )


def fit(X: np.ndarray, y: np.ndarray, config: GbtConfig | None = None) -> GbtModel:
    """Boost depth-limited regression trees on the squared-error objective.

    Training MSE is recorded after every round; a round whose tree is a
    single zero leaf (gradients exhausted) stops boosting early.
    """
    config = config or GbtConfig()
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).reshape(-1)
    if X.ndim != 2 or len(X) == 0:
        raise ConfigError(f"X must be a non-empty 2-D matrix, got shape {X.shape}")
    if len(y) != len(X):
        raise ConfigError(f"X has {len(X)} rows but y has {len(y)}")
    if np.isnan(X).any() or np.isnan(y).any():
        raise ConfigError("NaN in inputs; impute missing values upstream")

    n, f = X.shape
    rng = np.random.default_rng(config.seed)
    model = GbtModel(
        base_score=float(np.float32(y.mean())),
        learning_rate=float(np.float32(config.learning_rate)),
        feature_count=f,
    )
    preds = np.full(n, model.base_score)
    n_rows = max(1, int(round(config.subsample * n)))
    n_cols = max(1, int(round(config.colsample_bytree * f)))

    for _ in range(config.n_estimators):
        rows = (np.sort(rng.choice(n, size=n_rows, replace=False))
                if n_rows < n else np.arange(n))
        cols = (np.sort(rng.choice(f, size=n_cols, replace=False))
                if n_cols < f else np.arange(f))
        g = preds[rows] - y[rows]
        Xs = X[np.ix_(rows, cols)]
        order = np.argsort(Xs, axis=0, kind="stable")
        tree = _grow_tree(Xs, g, order, cols, config.max_depth,
                          config.reg_lambda, config.min_child_weight)
        if len(tree) == 1 and tree.value[0] == 0.0:
            break
        model.trees.append(tree)
        preds += model.learning_rate * tree.predict(X)
        model.train_mse.append(float(np.mean((y - preds) ** 2)))
    return model


# --------------------------------------------------------------------------
# Binary serialization (used inside pipeline bundles)
# --------------------------------------------------------------------------

def dump_model(model: GbtModel) -> bytes:
    parts = [struct.pack("<IffI", model.feature_count,
                         np.float32(model.base_score), np.float32(model.learning_rate),
                         len(model.trees))]
    for tree in model.trees:
        parts.append(struct.pack("<I", len(tree)))
        for i in range(len(tree)):
            parts.append(struct.pack(
                "<ifiif", int(tree.feature[i]), float(tree.threshold[i]),
                int(tree.left[i]), int(tree.right[i]), float(tree.value[i])))
    return b"".join(parts)


def parse_model(payload: bytes) -> GbtModel:
    offset = 0

    def take(fmt: str):
        nonlocal offset
        size = struct.calcsize(fmt)
        if offset + size > len(payload):
            raise BundleFormatError("boosted-tree blob truncated")
        values = struct.unpack_from(fmt, payload, offset)
        offset += size
        return values

    feature_count, base, lr, n_trees = take("<IffI")
    model = GbtModel(base_score=float(base), learning_rate=float(lr),
                     feature_count=feature_count)
    for _ in range(n_trees):
        (n_nodes,) = take("<I")
        feature = np.empty(n_nodes, dtype=np.int32)
        threshold = np.empty(n_nodes, dtype=np.float32)
        left = np.empty(n_nodes, dtype=np.int32)
        right = np.empty(n_nodes, dtype=np.int32)
        value = np.empty(n_nodes, dtype=np.float32)
        for i in range(n_nodes):
            feature[i], threshold[i], left[i], right[i], value[i] = take("<ifiif")
        model.trees.append(Tree(feature, threshold, left, right, value))
    if offset != len(payload):
        raise BundleFormatError("boosted-tree blob has trailing bytes")
    return model
