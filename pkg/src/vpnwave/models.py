"""Binary VPN/nonVPN classifiers with a scikit-learn estimator interface.

Three detectors share :class:`BinaryDetector`: a random forest, a small
fully connected network and a linear SVM. Labels are encoded as integers,
``0 = nonVPN`` and ``1 = VPN``. Every detector exposes a continuous score
(:meth:`BinaryDetector.score_samples`) and predicts VPN only when the score
is strictly above its threshold, so exact ties fall to nonVPN.

Fitted state is kept as plain numpy arrays; :func:`save_model` writes it to a
single self-describing JSON file and :func:`load_model` restores a detector
that predicts identically.
"""

import json
import logging
import warnings
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.ensemble import RandomForestClassifier
from sklearn.exceptions import ConvergenceWarning
from sklearn.model_selection import train_test_split
from sklearn.svm import LinearSVC
from sklearn.utils.validation import check_is_fitted

from ._validation import check_binary_labels, check_matrix
from .exceptions import ConfigError, SchemaError, SplitError, TrainingError

logger = logging.getLogger(__name__)

MODEL_FORMAT = "vpnwave-model"
MODEL_VERSION = 1


def split(X, y, train_fraction=0.8, seed=0, stratified=True):
    """Deterministic train/test partition; returns ``(train_idx, test_idx)``.

    With ``stratified=True`` each class keeps its proportion on both sides.
    """
    y = np.asarray(y)
    if not 0.0 < train_fraction < 1.0:
        raise ConfigError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    if len(y) != len(X):
        raise SplitError(f"{len(X)} samples but {len(y)} labels")
    classes, counts = np.unique(y, return_counts=True)
    if len(classes) < 2:
        raise SplitError("cannot split a single-class dataset")
    if stratified and counts.min() < 2:
        raise SplitError(f"stratified split needs >= 2 samples per class, got {dict(zip(classes.tolist(), counts.tolist()))}")
    idx = np.arange(len(y))
    try:
        train_idx, test_idx = train_test_split(
            idx, train_size=train_fraction, random_state=seed, stratify=y if stratified else None
        )
    except ValueError as exc:
        raise SplitError(str(exc)) from exc
    return np.sort(train_idx), np.sort(test_idx)


class BinaryDetector(ClassifierMixin, BaseEstimator):
    """Shared fit validation, thresholding and state (de)serialisation."""

    kind = None
    threshold = 0.0

    def _validate_fit(self, X, y):
        X = check_matrix(X)
        if X.shape[0] == 0:
            raise TrainingError("empty training set")
        y = check_binary_labels(y, X.shape[0])
        if np.unique(y).size < 2:
            raise TrainingError("training set must contain both classes")
        self.n_features_in_ = X.shape[1]
        self.classes_ = np.array([0, 1])
        return X, y

    def _check_X(self, X):
        check_is_fitted(self, "n_features_in_")
        return check_matrix(X, self.n_features_in_)

    def score_samples(self, X):
        raise NotImplementedError

    def predict(self, X):
        return (self.score_samples(X) > self.threshold).astype(np.int64)

    def _state(self):
        raise NotImplementedError

    def _load_state(self, state):
        raise NotImplementedError


# -- random forest -----------------------------------------------------------


def _export_tree(tree):
    t = tree.tree_
    leaf_class = np.argmax(t.value[:, 0, :], axis=1).astype(np.int8)
    return {
        "feature": t.feature.astype(np.int64),
        "threshold": t.threshold.astype(np.float64),
        "left": t.children_left.astype(np.int64),
        "right": t.children_right.astype(np.int64),
        "leaf_class": leaf_class,
    }


def _tree_apply(tree, X32):
    n = X32.shape[0]
    rows = np.arange(n)
    node = np.zeros(n, dtype=np.int64)
    left, right, feat, thr = tree["left"], tree["right"], tree["feature"], tree["threshold"]
    active = left[node] != -1
    while active.any():
        nd = node[active]
        go_left = X32[rows[active], feat[nd]] <= thr[nd]
        node[active] = np.where(go_left, left[nd], right[nd])
        active = left[node] != -1
    return tree["leaf_class"][node]


class RandomForestDetector(BinaryDetector):
    """Bagged CART ensemble scored by the fraction of trees voting VPN.

    Defaults: 100 trees, Gini impurity, bootstrap samples, ``sqrt(F)``
    candidate features per split, unlimited depth, ``min_samples_split=2``.
    Trees are grown by scikit-learn and stored as flat arrays; traversal
    compares float32 feature values with the split thresholds exactly as the
    grower does.
    """

    kind = "RF"
    threshold = 0.5

    def __init__(self, n_estimators=100, criterion="gini", max_features="sqrt", max_depth=None,
                 min_samples_split=2, bootstrap=True, random_state=0, n_jobs=None):
        self.n_estimators = n_estimators
        self.criterion = criterion
        self.max_features = max_features
        self.max_depth = max_depth
        self.min_samples_split = min_samples_split
        self.bootstrap = bootstrap
        self.random_state = random_state
        self.n_jobs = n_jobs

    def fit(self, X, y):
        X, y = self._validate_fit(X, y)
        forest = RandomForestClassifier(
            n_estimators=self.n_estimators,
            criterion=self.criterion,
            max_features=self.max_features,
            max_depth=self.max_depth,
            min_samples_split=self.min_samples_split,
            bootstrap=self.bootstrap,
            random_state=self.random_state,
            n_jobs=self.n_jobs,
        ).fit(X, y)
        self.trees_ = [_export_tree(est) for est in forest.estimators_]
        return self

    def tree_votes(self, X):
        """``(n_trees, n_samples)`` matrix of per-tree class votes."""
        X32 = self._check_X(X).astype(np.float32)
        return np.vstack([_tree_apply(t, X32) for t in self.trees_])

    def score_samples(self, X):
        return self.tree_votes(X).mean(axis=0)

    def predict_proba(self, X):
        p = self.score_samples(X)
        return np.column_stack([1.0 - p, p])

    def _state(self):
        return {"trees": [{k: v.tolist() for k, v in t.items()} for t in self.trees_]}

    def _load_state(self, state):
        dtypes = {"feature": np.int64, "threshold": np.float64, "left": np.int64, "right": np.int64, "leaf_class": np.int8}
        self.trees_ = [{k: np.asarray(t[k], dtype=dt) for k, dt in dtypes.items()} for t in state["trees"]]


# -- neural network --------------------------------------------------------


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def mlp_forward(params, X):
    """Logits of the ReLU network; returns ``(logits, activations)``."""
    acts = [X]
    h = X
    n_layers = len(params) // 2
    for i in range(n_layers):
        W, b = params[2 * i], params[2 * i + 1]
        z = h @ W + b
        if i < n_layers - 1:
            h = np.maximum(z, 0.0)
            acts.append(h)
        else:
            return z[:, 0], acts
    raise ValueError("empty parameter list")


def bce_loss_and_grads(params, X, y):
    """Mean binary cross-entropy of sigmoid(logits) and its exact gradient."""
    z, acts = mlp_forward(params, X)
    loss = np.mean(np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z))))
    delta = ((_sigmoid(z) - y) / X.shape[0])[:, None]
    grads = [None] * len(params)
    for i in range(len(params) // 2 - 1, -1, -1):
        grads[2 * i] = acts[i].T @ delta
        grads[2 * i + 1] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ params[2 * i].T) * (acts[i] > 0)
    return float(loss), grads


class NeuralNetDetector(BinaryDetector):
    """Fully connected ``F -> 64 -> 32 -> 1`` network, ReLU hidden layers.

    Trained with mini-batch Adam on binary cross-entropy; the score is the
    sigmoid output and the decision threshold 0.5. Weights are drawn from
    ``U(-sqrt(6 / fan_in), sqrt(6 / fan_in))``, biases start at zero, and the
    batch order is reshuffled every epoch from ``random_state``.
    """

    kind = "NN"
    threshold = 0.5

    def __init__(self, hidden_layer_sizes=(64, 32), epochs=20, batch_size=32, learning_rate=1e-3,
                 beta_1=0.9, beta_2=0.999, epsilon=1e-8, random_state=0):
        self.hidden_layer_sizes = hidden_layer_sizes
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.beta_1 = beta_1
        self.beta_2 = beta_2
        self.epsilon = epsilon
        self.random_state = random_state

    def _init_params(self, n_in, rng):
        sizes = [n_in, *self.hidden_layer_sizes, 1]
        params = []
        for fan_in, fan_out in zip(sizes, sizes[1:]):
            limit = np.sqrt(6.0 / fan_in)
            params.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            params.append(np.zeros(fan_out))
        return params

    def fit(self, X, y):
        X, y = self._validate_fit(X, y)
        y = y.astype(np.float64)
        rng = np.random.default_rng(self.random_state)
        params = self._init_params(X.shape[1], rng)
        m = [np.zeros_like(p) for p in params]
        v = [np.zeros_like(p) for p in params]
        b1, b2, lr, eps = self.beta_1, self.beta_2, self.learning_rate, self.epsilon
        step = 0
        self.loss_curve_ = []
        n = X.shape[0]
        for epoch in range(self.epochs):
            order = rng.permutation(n)
            total = 0.0
            for start in range(0, n, self.batch_size):
                batch = order[start : start + self.batch_size]
                loss, grads = bce_loss_and_grads(params, X[batch], y[batch])
                if not np.isfinite(loss):
                    biggest = max(float(np.max(np.abs(p))) for p in params)
                    raise TrainingError(
                        f"non-finite loss at epoch {epoch}, batch starting {start}; "
                        f"max |weight| = {biggest:.3g}, max |input| = {float(np.max(np.abs(X[batch]))):.3g}"
                    )
                total += loss * len(batch)
                step += 1
                for i, g in enumerate(grads):
                    m[i] = b1 * m[i] + (1 - b1) * g
                    v[i] = b2 * v[i] + (1 - b2) * g * g
                    m_hat = m[i] / (1 - b1**step)
                    v_hat = v[i] / (1 - b2**step)
                    params[i] = params[i] - lr * m_hat / (np.sqrt(v_hat) + eps)
            self.loss_curve_.append(total / n)
        self.params_ = params
        return self

    def score_samples(self, X):
        X = self._check_X(X)
        z, _ = mlp_forward(self.params_, X)
        return _sigmoid(z)

    def predict_proba(self, X):
        p = self.score_samples(X)
        return np.column_stack([1.0 - p, p])

    def _state(self):
        return {"params": [p.tolist() for p in self.params_], "loss_curve": list(self.loss_curve_)}

    def _load_state(self, state):
        self.params_ = [np.asarray(p, dtype=np.float64) for p in state["params"]]
        self.loss_curve_ = list(state.get("loss_curve", []))


# -- linear SVM --------------------------------------------------------------


class LinearSVMDetector(BinaryDetector):
    """Standardised features fed to an L2-regularised squared-hinge linear SVM.

    The per-feature mean/std come from the training set and are reused at
    prediction time; a zero-variance feature gets divisor 1. ``converged_``
    is False when the solver hit ``max_iter``; the model is still usable.
    """

    kind = "SVM"
    threshold = 0.0

    def __init__(self, C=1.0, max_iter=10_000, tol=1e-4, dual="auto", random_state=0):
        self.C = C
        self.max_iter = max_iter
        self.tol = tol
        self.dual = dual
        self.random_state = random_state

    def fit(self, X, y):
        X, y = self._validate_fit(X, y)
        mean = X.mean(axis=0)
        scale = X.std(axis=0)
        constant = scale == 0
        if constant.any():
            logger.warning("%d zero-variance feature(s); scaling divisor clamped to 1", int(constant.sum()))
            scale[constant] = 1.0
        self.scaler_mean_, self.scaler_scale_ = mean, scale
        svc = LinearSVC(
            C=self.C, loss="squared_hinge", penalty="l2", dual=self.dual,
            tol=self.tol, max_iter=self.max_iter, random_state=self.random_state,
        )
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", ConvergenceWarning)
            svc.fit((X - mean) / scale, y)
        self.converged_ = not any(issubclass(w.category, ConvergenceWarning) for w in caught)
        if not self.converged_:
            logger.warning("linear SVM did not converge within %d iterations", self.max_iter)
        self.n_iter_ = int(np.max(svc.n_iter_))
        self.coef_ = svc.coef_[0].astype(np.float64)
        self.intercept_ = float(svc.intercept_[0])
        return self

    def transform_features(self, X):
        return (self._check_X(X) - self.scaler_mean_) / self.scaler_scale_

    def decision_function(self, X):
        return self.transform_features(X) @ self.coef_ + self.intercept_

    def score_samples(self, X):
        return self.decision_function(X)

    def _state(self):
        return {
            "coef": self.coef_.tolist(),
            "intercept": self.intercept_,
            "scaler_mean": self.scaler_mean_.tolist(),
            "scaler_scale": self.scaler_scale_.tolist(),
            "converged": self.converged_,
            "n_iter": self.n_iter_,
        }

    def _load_state(self, state):
        self.coef_ = np.asarray(state["coef"], dtype=np.float64)
        self.intercept_ = float(state["intercept"])
        self.scaler_mean_ = np.asarray(state["scaler_mean"], dtype=np.float64)
        self.scaler_scale_ = np.asarray(state["scaler_scale"], dtype=np.float64)
        self.converged_ = bool(state["converged"])
        self.n_iter_ = int(state["n_iter"])


DETECTORS = {cls.kind: cls for cls in (RandomForestDetector, NeuralNetDetector, LinearSVMDetector)}


def make_detector(kind, seed=0, **params):
    try:
        cls = DETECTORS[kind.upper()]
    except KeyError:
        raise ConfigError(f"unknown model kind {kind!r}; choose from {sorted(DETECTORS)}") from None
    return cls(random_state=seed, **params)


def predict(model, X):
    """``(labels, scores)`` for the rows of ``X``.

    Scores are the RF vote fraction, the NN sigmoid output or the SVM
    decision value. A column count different from the training data raises
    :class:`~vpnwave.exceptions.DimensionError`.
    """
    scores = model.score_samples(X)
    return (scores > model.threshold).astype(np.int64), scores


def _jsonable(value):
    if isinstance(value, tuple):
        return list(value)
    return value


def model_to_dict(model, metadata=None):
    check_is_fitted(model, "n_features_in_")
    return {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "kind": model.kind,
        "n_features": int(model.n_features_in_),
        "params": {k: _jsonable(v) for k, v in model.get_params().items()},
        "metadata": dict(metadata if metadata is not None else getattr(model, "metadata_", {})),
        "state": model._state(),
    }


def model_from_dict(data):
    if data.get("format") != MODEL_FORMAT:
        raise SchemaError(f"not a model file (format={data.get('format')!r})")
    if data.get("version") != MODEL_VERSION:
        raise SchemaError(f"unsupported model file version {data.get('version')!r}, expected {MODEL_VERSION}")
    cls = DETECTORS[data["kind"]]
    params = dict(data["params"])
    if "hidden_layer_sizes" in params:
        params["hidden_layer_sizes"] = tuple(params["hidden_layer_sizes"])
    model = cls(**params)
    model._load_state(data["state"])
    model.n_features_in_ = int(data["n_features"])
    model.classes_ = np.array([0, 1])
    model.metadata_ = dict(data.get("metadata", {}))
    return model


def save_model(model, path, metadata=None):
    text = json.dumps(model_to_dict(model, metadata), sort_keys=True)
    Path(path).write_text(text)


def load_model(path):
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: not a JSON model file ({exc})") from exc
    return model_from_dict(data)
