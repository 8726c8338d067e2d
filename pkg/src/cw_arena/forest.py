"""Random-forest baseline: bagged depth-limited Gini trees trained to predict
the next-step optimal MCW from the agent's local feature vector."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .env import ContentionEnv
from .errors import InvalidParameter
from .seeding import stream

FORMAT = "cw-arena/forest"
VERSION = 1


@dataclass
class Tree:
    feature: np.ndarray  # -1 marks a leaf
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    label: np.ndarray

    def depth(self, node=0):
        if self.feature[node] < 0:
            return 0
        return 1 + max(self.depth(self.left[node]), self.depth(self.right[node]))

    def predict(self, X):
        X = np.atleast_2d(X)
        node = np.zeros(len(X), dtype=np.int64)
        rows = np.arange(len(X))
        while True:
            f = self.feature[node]
            inner = f >= 0
            if not inner.any():
                return self.label[node]
            go_left = X[rows[inner], f[inner]] <= self.threshold[node[inner]]
            node[inner] = np.where(go_left, self.left[node[inner]], self.right[node[inner]])


@dataclass
class Forest:
    trees: list
    n_classes: int
    n_features: int

    def votes(self, X):
        X = np.atleast_2d(X)
        counts = np.zeros((len(X), self.n_classes), dtype=np.int64)
        for t in self.trees:
            counts[np.arange(len(X)), t.predict(X)] += 1
        return counts

    def predict(self, X):
        # argmax -> ties go to the smallest action index
        return np.argmax(self.votes(X), axis=1)

    def to_json(self):
        return json.dumps({
            "format": FORMAT,
            "version": VERSION,
            "n_classes": self.n_classes,
            "n_features": self.n_features,
            "trees": [
                {k: getattr(t, k).tolist() for k in ("feature", "threshold", "left", "right", "label")}
                for t in self.trees
            ],
        })

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        if d.get("format") != FORMAT or d.get("version") != VERSION:
            raise InvalidParameter("not a version-1 forest file")
        trees = [
            Tree(*(np.asarray(t[k], dtype=float if k == "threshold" else np.int64)
                   for k in ("feature", "threshold", "left", "right", "label")))
            for t in d["trees"]
        ]
        return cls(trees, d["n_classes"], d["n_features"])


def gini(counts):
    n = counts.sum(axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        p = counts / n[..., None]
    return np.where(n > 0, 1.0 - np.sum(p * p, axis=-1), 0.0)


def _best_split(X, y, features, n_classes):
    """Best (gain, feature, threshold) over the candidate features; gain is
    the weighted Gini decrease."""
    n = len(y)
    parent = gini(np.bincount(y, minlength=n_classes))
    best = (0.0, -1, 0.0)
    onehot = np.eye(n_classes, dtype=np.int64)[y]
    for f in features:
        order = np.argsort(X[:, f], kind="stable")
        xs = X[order, f]
        cum = np.cumsum(onehot[order], axis=0)
        # split after position i (left = first i+1 samples) where value changes
        cut = np.nonzero(xs[1:] > xs[:-1])[0]
        if cut.size == 0:
            continue
        left = cum[cut]
        right = cum[-1] - left
        nl = cut + 1.0
        score = (nl * gini(left) + (n - nl) * gini(right)) / n
        j = int(np.argmin(score))
        gain = parent - score[j]
        if gain > best[0] + 1e-12:
            best = (gain, int(f), 0.5 * (xs[cut[j]] + xs[cut[j] + 1]))
    return best


def _majority(y, n_classes):
    return int(np.argmax(np.bincount(y, minlength=n_classes)))


def build_tree(X, y, n_classes, max_depth, n_sub, rng):
    feature, threshold, left, right, label = [], [], [], [], []

    def grow(idx, depth):
        node = len(feature)
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        label.append(_majority(y[idx], n_classes))
        if depth >= max_depth or len(idx) < 2 or np.all(y[idx] == y[idx[0]]):
            return node
        cand = rng.choice(X.shape[1], size=n_sub, replace=False)
        gain, f, thr = _best_split(X[idx], y[idx], cand, n_classes)
        if f < 0:
            return node
        mask = X[idx, f] <= thr
        feature[node], threshold[node] = f, thr
        left[node] = grow(idx[mask], depth + 1)
        right[node] = grow(idx[~mask], depth + 1)
        return node

    grow(np.arange(len(y)), 0)
    return Tree(np.array(feature), np.array(threshold), np.array(left), np.array(right), np.array(label))


def rf_train(X, y, n_classes=None, n_trees=15, max_depth=5, seed=0):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=np.int64)
    if len(y) == 0:
        raise InvalidParameter("empty training set")
    n_classes = int(n_classes if n_classes is not None else y.max() + 1)
    n_sub = max(1, math.ceil(math.sqrt(X.shape[1])))
    rng = stream(seed, "rf")
    trees = []
    for _ in range(n_trees):
        boot = rng.integers(0, len(y), len(y))
        trees.append(build_tree(X[boot], y[boot], n_classes, max_depth, n_sub, rng))
    return Forest(trees, n_classes, X.shape[1])


def rf_predict(forest: Forest, features):
    return int(forest.predict(np.asarray(features, dtype=float)[None, :])[0])


def rf_generate_dataset(env: ContentionEnv, table, episodes, seed=0):
    """Uniform-random behaviour policy; each state is labelled with the best
    action for the background state that actually follows it."""
    best = np.argmax(table.mean, axis=1)
    X, y = [], []
    n_act = len(env.space)
    for ep in range(episodes):
        rng = stream(seed, ep, "rf")
        env.reset(seed, ep)
        while not env.done:
            X.append(env.features)
            env.step(int(rng.integers(n_act)))
            y.append(int(best[table.row(env.hidden.key())]))
    return np.array(X), np.array(y, dtype=np.int64)
