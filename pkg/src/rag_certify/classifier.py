"""Single logistic unit over lookback features, trained against answer consistency."""

import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import expit
from scipy.stats import rankdata

from .errors import FormatError, ModeMismatch, OneClassOnly
from .jsonl import read_json, read_jsonl, require, write_json
from .rng import SplitMix64

logger = logging.getLogger(__name__)

DEFAULT_MAX_ITER = 1000
DEFAULT_L2 = 1.0
GRAD_TOL = 1e-6


@dataclass
class LabeledSample:
    qa_id: str
    features: object  # LookbackFeatures
    gamma_ac: int


@dataclass
class EvalReport:
    auroc: float
    n_samples: int
    accuracy_at_round: float

    def to_record(self):
        return {"auroc": self.auroc, "n_samples": self.n_samples,
                "accuracy_at_round": self.accuracy_at_round}


def binarize(gamma):
    """Answer consistency is rounded at 0.5."""
    return int(float(gamma) >= 0.5)


def load_labels(path):
    labels = {}
    for lineno, rec in read_jsonl(path):
        where = f"{path}:{lineno}"
        require(rec, ("qa_id", "gamma_ac"), where)
        g = float(rec["gamma_ac"])
        if not 0.0 <= g <= 1.0:
            raise FormatError(f"{where}: gamma_ac {g} outside [0, 1]")
        labels[rec["qa_id"]] = binarize(g)
    return labels


def join_labels(features, labels):
    samples = []
    for f in features:
        if f.qa_id not in labels:
            raise FormatError(f"no gamma_ac label for qa_id '{f.qa_id}'")
        samples.append(LabeledSample(f.qa_id, f, labels[f.qa_id]))
    return samples


def split_train_valid(samples, seed, ratio=(3, 2)):
    n = len(samples)
    if n < sum(ratio):
        raise ValueError(f"need at least {sum(ratio)} samples to split, got {n}")
    perm = SplitMix64(seed).permutation(n)
    n_train = round(n * ratio[0] / sum(ratio))
    return [samples[i] for i in perm[:n_train]], [samples[i] for i in perm[n_train:]]


def design_matrix(samples):
    layouts = {(s.features.mode, s.features.L, s.features.H, s.features.K) for s in samples}
    if len(layouts) != 1:
        raise ModeMismatch(f"samples mix feature layouts {sorted(layouts)}")
    X = np.stack([s.features.vector for s in samples])
    y = np.array([s.gamma_ac for s in samples], dtype=float)
    return X, y, layouts.pop()


def balanced_weights(y):
    """Per-sample weight ``n / (2 * n_class)``."""
    n = len(y)
    n_pos = float(y.sum())
    n_neg = n - n_pos
    if n_pos == 0 or n_neg == 0:
        raise OneClassOnly("training labels contain a single class")
    return np.where(y == 1, n / (2 * n_pos), n / (2 * n_neg))


def loss_and_grad(theta, X, y, sample_weight, l2):
    """Weighted negative log-likelihood plus ``l2/2 * |w|^2`` (bias unpenalized).

    ``theta`` packs the weights followed by the bias.
    """
    w, b = theta[:-1], theta[-1]
    z = X @ w + b
    loss = np.sum(sample_weight * (np.logaddexp(0.0, z) - y * z)) + 0.5 * l2 * (w @ w)
    r = sample_weight * (expit(z) - y)
    grad = np.empty_like(theta)
    grad[:-1] = X.T @ r + l2 * w
    grad[-1] = r.sum()
    return loss, grad


def minimize_logistic(X, y, sample_weight, l2=DEFAULT_L2, max_iter=DEFAULT_MAX_ITER, tol=GRAD_TOL):
    """Full-batch gradient descent from zero with Barzilai-Borwein trial steps
    and Armijo backtracking. Returns ``(theta, n_iter)``."""
    theta = np.zeros(X.shape[1] + 1)
    f, g = loss_and_grad(theta, X, y, sample_weight, l2)
    # inverse of a Lipschitz bound for the first trial step
    step = 1.0 / (0.25 * np.sum(sample_weight * (np.sum(X * X, axis=1) + 1.0)) + l2)
    for it in range(max_iter):
        if np.max(np.abs(g)) < tol:
            return theta, it
        t, gg = step, g @ g
        while True:
            cand = theta - t * g
            f_new, g_new = loss_and_grad(cand, X, y, sample_weight, l2)
            if f_new <= f - 1e-4 * t * gg or t < 1e-16:
                break
            t *= 0.5
        s, dg = cand - theta, g_new - g
        theta, f, g = cand, f_new, g_new
        sy = s @ dg
        step = (s @ s) / sy if sy > 0 else 2.0 * t
    return theta, max_iter


@dataclass
class FactualityClassifier:
    weights: np.ndarray
    bias: float
    feature_mode: str
    L: int
    H: int
    K: int = 0
    trained_on: str = ""

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        expected = self.L * self.H * (self.K if self.feature_mode == "cw" else 1)
        if len(self.weights) != expected:
            raise FormatError(f"classifier has {len(self.weights)} weights, layout needs {expected}")

    def decision(self, X):
        return np.asarray(X, dtype=float) @ self.weights + self.bias

    def save(self, path):
        write_json(path, {"feature_mode": self.feature_mode, "L": self.L, "H": self.H,
                          "K": self.K, "weights": self.weights.tolist(), "bias": self.bias,
                          "trained_on": self.trained_on})

    @classmethod
    def load(cls, path):
        rec = read_json(path)
        require(rec, ("feature_mode", "L", "H", "weights", "bias"), path)
        return cls(rec["weights"], float(rec["bias"]), rec["feature_mode"], int(rec["L"]),
                   int(rec["H"]), int(rec.get("K", 0)), rec.get("trained_on", ""))


def fit(train, max_iter=DEFAULT_MAX_ITER, l2_strength=DEFAULT_L2, trained_on=""):
    if not train:
        raise OneClassOnly("empty training set")
    X, y, (mode, L, H, K) = design_matrix(train)
    theta, n_iter = minimize_logistic(X, y, balanced_weights(y), l2_strength, max_iter)
    if n_iter == max_iter and max_iter > 0:
        logger.info("logistic fit stopped at max_iter=%d", max_iter)
    return FactualityClassifier(theta[:-1], float(theta[-1]), mode, L, H, K, trained_on)


def _check_layout(clf, features):
    layout = (features.mode, features.L, features.H, features.K if features.mode == "cw" else 0)
    if layout != (clf.feature_mode, clf.L, clf.H, clf.K if clf.feature_mode == "cw" else 0):
        raise ModeMismatch(f"{features.qa_id}: features {layout} do not match classifier "
                           f"({clf.feature_mode}, {clf.L}, {clf.H}, {clf.K})")


def predict_factuality(clf, features):
    _check_layout(clf, features)
    return float(expit(clf.decision(features.vector)))


def predict_many(clf, samples):
    for s in samples:
        _check_layout(clf, s.features)
    if not samples:
        return np.zeros(0)
    return expit(clf.decision(np.stack([s.features.vector for s in samples])))


def auroc(scores, labels):
    """Mann-Whitney AUROC; tied positive/negative pairs earn half credit."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise OneClassOnly("AUROC needs both classes")
    ranks = rankdata(scores)
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def evaluate(clf, samples):
    p = predict_many(clf, samples)
    y = np.array([s.gamma_ac for s in samples])
    acc = float(np.mean((p >= 0.5).astype(int) == y))
    return EvalReport(auroc(p, y), len(samples), acc)


def cross_validate_groups(groups, seed=0, max_iter=DEFAULT_MAX_ITER, l2_strength=DEFAULT_L2):
    """AUROC matrix: row = group trained on, column = group validated on.

    Returns ``(group names in sorted order, matrix)``.
    """
    if len(groups) < 2:
        raise ValueError("cross validation needs at least two groups")
    names = sorted(groups)
    splits, models = {}, {}
    for name in names:
        try:
            splits[name] = split_train_valid(groups[name], seed)
            models[name] = fit(splits[name][0], max_iter, l2_strength, trained_on=name)
        except (ValueError, OneClassOnly) as exc:
            raise type(exc)(f"group '{name}': {exc}") from None
    matrix = np.zeros((len(names), len(names)))
    for i, src in enumerate(names):
        for j, dst in enumerate(names):
            valid = splits[dst][1]
            try:
                matrix[i, j] = auroc(predict_many(models[src], valid),
                                     [s.gamma_ac for s in valid])
            except OneClassOnly:
                raise OneClassOnly(f"group '{dst}': validation split has a single class") from None
    return names, matrix
