"""Regression models for residual estimation.

RidgeLinear: single-target ridge regression on standardized features,
closed form, unpenalized intercept.

GradientBoostedTrees: single-target squared-error gradient boosting over
depth-limited regression trees.  Split points are searched on a seeded
row subsample; leaf values are then refit as the mean residual of ALL
rows reaching the leaf, which keeps the full-data training MSE
non-increasing per round for learning rates in (0, 1].

ZoneGroupEstimator wraps one independent model per target zone, and
trained estimators serialize to a version-tagged .npz file.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .features import GROUP_FEATURES, ResidualDataset

SERIAL_VERSION = 1
_VAR_FLOOR = 1e-12


class NotFittedError(RuntimeError):
    """predict was called before fit."""


class RidgeLinear:
    """min_w ||y - Xw - b||^2 + lam ||w||^2 on standardized features."""

    def __init__(self, lam: float = 1e-6):
        self.lam = float(lam)
        self.coef_ = None
        self.intercept_ = 0.0
        self._mu = None
        self._sd = None

    def fit(self, x: np.ndarray, y: np.ndarray) -> "RidgeLinear":
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float).ravel()
        if x.ndim != 2 or x.shape[0] != y.size:
            raise ValueError("x must be (n, f) aligned with y")
        if x.shape[0] == 0:
            raise ValueError("cannot fit on an empty dataset")
        if np.unique(x, axis=0).shape[0] < 2:
            raise ValueError("ridge needs at least 2 distinct rows")
        self._mu = x.mean(axis=0)
        self._sd = np.sqrt(np.maximum(x.var(axis=0), _VAR_FLOOR))
        xs = (x - self._mu) / self._sd
        yc = y - y.mean()
        n_feat = x.shape[1]
        gram = xs.T @ xs + self.lam * np.eye(n_feat)
        w = np.linalg.solve(gram, xs.T @ yc)
        self.coef_ = w
        self.intercept_ = float(y.mean())
        return self

    def predict(self, x: np.ndarray) -> np.ndarray:
        if self.coef_ is None:
            raise NotFittedError("RidgeLinear.predict before fit")
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != self.coef_.size:
            raise ValueError(f"expected {self.coef_.size} features, got {x.shape[1]}")
        return ((x - self._mu) / self._sd) @ self.coef_ + self.intercept_

    def input_coefficients(self) -> tuple[np.ndarray, float]:
        """Weights and intercept in raw (unstandardized) feature units."""
        if self.coef_ is None:
            raise NotFittedError("RidgeLinear has no coefficients yet")
        w = self.coef_ / self._sd
        b = self.intercept_ - float(w @ self._mu)
        return w, b


@dataclass
class _Tree:
    """Flat array representation; children index -1 marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def predict(self, x: np.ndarray) -> np.ndarray:
        node = np.zeros(x.shape[0], dtype=int)
        active = self.left[node] >= 0
        while np.any(active):
            idx = node[active]
            go_left = x[active, self.feature[idx]] <= self.threshold[idx]
            node[active] = np.where(go_left, self.left[idx], self.right[idx])
            active = self.left[node] >= 0
        return self.value[node]


_MAX_BINS = 64


def _bin_features(x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    """Quantile-bin each feature column once per fit.

    Returns integer codes (n, f) and the per-feature cut values; a code c
    means value > cuts[c-1] and value <= cuts[c], so a split "code <= b"
    equals the raw-value test "value <= cuts[b]".
    """
    n, nf = x.shape
    codes = np.empty((n, nf), dtype=np.int16)
    cuts: list[np.ndarray] = []
    qs = np.linspace(0.0, 1.0, _MAX_BINS + 1)[1:-1]
    for f in range(nf):
        col = x[:, f]
        cut = np.unique(np.quantile(col, qs))
        cut = cut[(cut >= col.min()) & (cut < col.max())]
        codes[:, f] = np.searchsorted(cut, col, side="left")
        cuts.append(cut)
    return codes, cuts


def _grow_tree(codes: np.ndarray, cuts: list[np.ndarray], g: np.ndarray,
               rows: np.ndarray, max_depth: int, min_leaf: int) -> _Tree:
    """Fit one squared-error tree to residuals g over the given rows."""
    feature, threshold, left, right, value = [], [], [], [], []
    nf = codes.shape[1]

    def new_node() -> int:
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(0.0)
        return len(feature) - 1

    def split(node: int, rows: np.ndarray, depth: int) -> None:
        gr = g[rows]
        n = rows.size
        value[node] = float(gr.mean())
        if depth >= max_depth or n < 2 * min_leaf:
            return
        best_gain, best = 0.0, None
        total = gr.sum()
        base = total * total / n
        node_codes = codes[rows]
        for f in range(nf):
            nbin = cuts[f].size + 1
            if nbin < 2:
                continue
            c = node_codes[:, f]
            cnt = np.bincount(c, minlength=nbin)
            sums = np.bincount(c, weights=gr, minlength=nbin)
            nl = np.cumsum(cnt)[:-1]
            sl = np.cumsum(sums)[:-1]
            valid = (nl >= min_leaf) & (n - nl >= min_leaf)
            if not np.any(valid):
                continue
            with np.errstate(divide="ignore", invalid="ignore"):
                gain = sl * sl / nl + (total - sl) ** 2 / (n - nl) - base
            gain = np.where(valid, gain, -np.inf)
            b = int(np.argmax(gain))
            if gain[b] > best_gain + 1e-12:
                best_gain = float(gain[b])
                best = (f, b)
        if best is None:
            return
        f, b = best
        go_left = node_codes[:, f] <= b
        feature[node] = f
        threshold[node] = float(cuts[f][b])
        nl_, nr_ = new_node(), new_node()
        left[node], right[node] = nl_, nr_
        split(nl_, rows[go_left], depth + 1)
        split(nr_, rows[~go_left], depth + 1)

    root = new_node()
    split(root, rows, 0)
    return _Tree(feature=np.array(feature, dtype=int), threshold=np.array(threshold),
                 left=np.array(left, dtype=int), right=np.array(right, dtype=int),
                 value=np.array(value))


def _leaf_assignment(tree: _Tree, x: np.ndarray) -> np.ndarray:
    node = np.zeros(x.shape[0], dtype=int)
    active = tree.left[node] >= 0
    while np.any(active):
        idx = node[active]
        go_left = x[active, tree.feature[idx]] <= tree.threshold[idx]
        node[active] = np.where(go_left, tree.left[idx], tree.right[idx])
        active = tree.left[node] >= 0
    return node


class GradientBoostedTrees:
    """Squared-error gradient boosting; deterministic given the seed."""

    def __init__(self, n_trees: int = 300, max_depth: int = 4,
                 learning_rate: float = 0.1, min_samples_leaf: int = 5,
                 subsample: float = 0.8, seed: int = 0):
        self.n_trees = n_trees
        self.max_depth = max_depth
        self.learning_rate = learning_rate
        self.min_samples_leaf = min_samples_leaf
        self.subsample = subsample
        self.seed = seed
        self.base_value_ = None
        self.trees_: list[_Tree] = []
        self.train_mse_: np.ndarray | None = None

    def fit(self, x: np.ndarray, y: np.ndarray) -> "GradientBoostedTrees":
        x = np.ascontiguousarray(x, dtype=float)
        y = np.asarray(y, dtype=float).ravel()
        if x.ndim != 2 or x.shape[0] != y.size:
            raise ValueError("x must be (n, f) aligned with y")
        n = x.shape[0]
        if n == 0:
            raise ValueError("cannot fit on an empty dataset")
        rng = np.random.default_rng(self.seed)
        self.base_value_ = float(y.mean())
        self.trees_ = []
        pred = np.full(n, self.base_value_)
        mse_path = []
        n_sub = max(min(n, 2 * self.min_samples_leaf), int(round(self.subsample * n)))
        codes, cuts = _bin_features(x)
        all_rows = np.arange(n)
        for _ in range(self.n_trees):
            resid = y - pred
            rows = (np.sort(rng.choice(n, size=n_sub, replace=False))
                    if n_sub < n else all_rows)
            tree = _grow_tree(codes, cuts, resid, rows, self.max_depth,
                              self.min_samples_leaf)
            # refit leaf values on all rows: keeps full-data MSE monotone
            leaves = _leaf_assignment(tree, x)
            sums = np.bincount(leaves, weights=resid, minlength=tree.value.size)
            counts = np.bincount(leaves, minlength=tree.value.size)
            filled = counts > 0
            tree.value[filled] = sums[filled] / counts[filled]
            pred = pred + self.learning_rate * tree.value[leaves]
            self.trees_.append(tree)
            mse_path.append(float(np.mean((y - pred) ** 2)))
        self.train_mse_ = np.array(mse_path)
        return self

    def predict(self, x: np.ndarray) -> np.ndarray:
        if self.base_value_ is None:
            raise NotFittedError("GradientBoostedTrees.predict before fit")
        x = np.atleast_2d(np.ascontiguousarray(x, dtype=float))
        out = np.full(x.shape[0], self.base_value_)
        for tree in self.trees_:
            out += self.learning_rate * tree.predict(x)
        return out


@dataclass
class GbtConfig:
    n_trees: int = 300
    max_depth: int = 4
    learning_rate: float = 0.1
    min_samples_leaf: int = 5
    subsample: float = 0.8


class ZoneGroupEstimator:
    """One independent regressor per target zone of a group."""

    def __init__(self, group: str, kind: str, gbt: GbtConfig | None = None,
                 ridge_lam: float = 1e-6, seed: int = 0):
        if kind not in ("ridge", "gbt"):
            raise ValueError(f"unknown regressor kind {kind!r}")
        self.group = group
        self.kind = kind
        self.gbt = gbt or GbtConfig()
        self.ridge_lam = ridge_lam
        self.seed = seed
        self.models: list = []

    def fit(self, ds: ResidualDataset) -> "ZoneGroupEstimator":
        if len(ds) == 0:
            raise ValueError("cannot fit on an empty dataset")
        if ds.group != self.group:
            raise ValueError(f"dataset group {ds.group!r} != estimator group {self.group!r}")
        self.models = []
        for z in range(ds.y.shape[1]):
            if self.kind == "ridge":
                model = RidgeLinear(lam=self.ridge_lam)
            else:
                model = GradientBoostedTrees(
                    n_trees=self.gbt.n_trees, max_depth=self.gbt.max_depth,
                    learning_rate=self.gbt.learning_rate,
                    min_samples_leaf=self.gbt.min_samples_leaf,
                    subsample=self.gbt.subsample, seed=self.seed * 1000 + z)
            model.fit(ds.x, ds.y[:, z])
            self.models.append(model)
        return self

    @property
    def fitted(self) -> bool:
        return bool(self.models)

    def predict(self, x: np.ndarray) -> np.ndarray:
        """(n, zones-of-group) predictions."""
        if not self.models:
            raise NotFittedError("ZoneGroupEstimator.predict before fit")
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != len(GROUP_FEATURES[self.group]):
            raise ValueError(f"expected {len(GROUP_FEATURES[self.group])} features")
        return np.column_stack([m.predict(x) for m in self.models])


def save_estimator(path, estimator: ZoneGroupEstimator) -> None:
    """Serialize a trained estimator to a version-tagged .npz file."""
    if not estimator.fitted:
        raise NotFittedError("cannot save an unfitted estimator")
    blobs = {
        "version": np.array([SERIAL_VERSION]),
        "group": np.array([estimator.group]),
        "kind": np.array([estimator.kind]),
        "n_models": np.array([len(estimator.models)]),
        "seed": np.array([estimator.seed]),
        "ridge_lam": np.array([estimator.ridge_lam]),
        "gbt_params": np.array([estimator.gbt.n_trees, estimator.gbt.max_depth,
                                estimator.gbt.min_samples_leaf]),
        "gbt_fparams": np.array([estimator.gbt.learning_rate, estimator.gbt.subsample]),
    }
    for z, m in enumerate(estimator.models):
        if estimator.kind == "ridge":
            blobs[f"m{z}_coef"] = m.coef_
            blobs[f"m{z}_stats"] = np.concatenate([[m.intercept_], m._mu, m._sd])
        else:
            blobs[f"m{z}_base"] = np.array([m.base_value_])
            blobs[f"m{z}_ntrees"] = np.array([len(m.trees_)])
            for t, tree in enumerate(m.trees_):
                blobs[f"m{z}_t{t}"] = np.vstack([
                    tree.feature.astype(float), tree.threshold,
                    tree.left.astype(float), tree.right.astype(float), tree.value])
    np.savez_compressed(path, **blobs)


def load_estimator(path) -> ZoneGroupEstimator:
    with np.load(path, allow_pickle=False) as z:
        version = int(z["version"][0])
        if version != SERIAL_VERSION:
            raise ValueError(f"unsupported estimator file version {version}")
        group = str(z["group"][0])
        kind = str(z["kind"][0])
        nt, md, ml = (int(v) for v in z["gbt_params"])
        lr, ss = (float(v) for v in z["gbt_fparams"])
        est = ZoneGroupEstimator(group=group, kind=kind,
                                 gbt=GbtConfig(n_trees=nt, max_depth=md,
                                               learning_rate=lr, min_samples_leaf=ml,
                                               subsample=ss),
                                 ridge_lam=float(z["ridge_lam"][0]),
                                 seed=int(z["seed"][0]))
        n_feat = len(GROUP_FEATURES[group])
        for zi in range(int(z["n_models"][0])):
            if kind == "ridge":
                m = RidgeLinear(lam=est.ridge_lam)
                m.coef_ = z[f"m{zi}_coef"]
                stats = z[f"m{zi}_stats"]
                m.intercept_ = float(stats[0])
                m._mu = stats[1:1 + n_feat]
                m._sd = stats[1 + n_feat:]
            else:
                m = GradientBoostedTrees(n_trees=nt, max_depth=md, learning_rate=lr,
                                         min_samples_leaf=ml, subsample=ss,
                                         seed=est.seed * 1000 + zi)
                m.base_value_ = float(z[f"m{zi}_base"][0])
                m.trees_ = []
                for t in range(int(z[f"m{zi}_ntrees"][0])):
                    arr = z[f"m{zi}_t{t}"]
                    m.trees_.append(_Tree(
                        feature=arr[0].astype(int), threshold=arr[1],
                        left=arr[2].astype(int), right=arr[3].astype(int),
                        value=arr[4]))
            est.models.append(m)
    return est
