"""Synthetic datasets with known ground truth.

Retrieval scenarios:

``exchangeable``
    every question retrieves ``n_correct`` right-source chunks and ``K - n_correct``
    wrong-source chunks, all scores drawn independently per class.
``retriever_failure``
    like ``exchangeable``, but for a ``failure_fraction`` of questions the
    right-source chunks never make it into the top K.
``retriever_saturation``
    the top K holds only right-source chunks and the retriever gives them one
    shared per-question score (plus a tiny jitter), so a question is trusted
    all-or-nothing.
"""

from dataclasses import asdict, dataclass, field

import numpy as np

from .classifier import LabeledSample
from .conformal import CalibrationScores
from .lookback import CW, FC, AttentionDump, LookbackFeatures
from .rng import SplitMix64

SCENARIOS = ("exchangeable", "retriever_failure", "retriever_saturation")


@dataclass
class SynthConfig:
    seed: int = 0
    n_questions: int = 500
    K: int = 10
    scenario: str = "exchangeable"
    correct_score_dist: tuple = ("gaussian", (0.7, 0.1))
    incorrect_score_dist: tuple = ("gaussian", (0.3, 0.1))
    correct_h_dist: tuple = ("uniform", (0.2, 1.0))
    incorrect_h_dist: tuple = ("uniform", (0.0, 0.4))
    n_correct: int = 1
    failure_fraction: float = 0.4
    saturation_jitter: float = 1e-3
    raw_scale: float = 10.0
    # lookback features
    n_samples: int = 200
    feature_sep: float = 3.0
    feature_sd: float = 0.1
    n_informative: int = 2
    lookback_mode: str = CW
    L: int = 2
    H: int = 2
    T: int = 4
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario '{self.scenario}'")
        if self.feature_sep < 0:
            raise ValueError("feature_sep must be >= 0")
        if not 0 <= self.n_correct <= self.K:
            raise ValueError("n_correct must lie in [0, K]")
        self.correct_score_dist = _dist(self.correct_score_dist)
        self.incorrect_score_dist = _dist(self.incorrect_score_dist)
        self.correct_h_dist = _dist(self.correct_h_dist)
        self.incorrect_h_dist = _dist(self.incorrect_h_dist)

    def to_record(self):
        return asdict(self)

    @classmethod
    def from_record(cls, rec):
        known = set(cls.__dataclass_fields__)
        unknown = set(rec) - known
        if unknown:
            raise ValueError(f"unknown synth settings {sorted(unknown)}")
        return cls(**rec)


def _dist(spec):
    family, params = spec
    if family not in ("uniform", "gaussian"):
        raise ValueError(f"unknown distribution family '{family}'")
    return (family, tuple(float(p) for p in params))


def draw(rng, spec, n):
    """Draw ``n`` values in [0, 1]; gaussians are clamped."""
    family, (a, b) = spec
    if family == "uniform":
        x = rng.uniform(a, b, n)
    else:
        x = rng.normal(n, a, b)
    return np.clip(x, 0.0, 1.0)


def _retrieval_block(rng, cfg, prefix):
    n, K = cfg.n_questions, cfg.K
    size = n * K
    s_ok = draw(rng, cfg.correct_score_dist, size).reshape(n, K)
    s_bad = draw(rng, cfg.incorrect_score_dist, size).reshape(n, K)
    h_ok = draw(rng, cfg.correct_h_dist, size).reshape(n, K)
    h_bad = draw(rng, cfg.incorrect_h_dist, size).reshape(n, K)

    correct = np.zeros((n, K), dtype=bool)
    if cfg.scenario == "retriever_saturation":
        correct[:] = True
        shared = s_ok[:, :1]
        s_ok = np.clip(shared + cfg.saturation_jitter * rng.normal(size).reshape(n, K), 0.0, 1.0)
    else:
        correct[:, :cfg.n_correct] = True
    if cfg.scenario == "retriever_failure":
        failed = np.array(rng.permutation(n)[:round(cfg.failure_fraction * n)], dtype=np.int64)
        correct[failed] = False

    score = np.where(correct, s_ok, s_bad) * cfg.raw_scale
    h = np.where(correct, h_ok, h_bad)
    order = np.argsort(-score, axis=1, kind="stable")
    rows = np.arange(n)[:, None]
    score, h, correct, slot = score[rows, order], h[rows, order], correct[rows, order], order

    qa = np.array([f"{prefix}-{i:05d}" for i in range(n)], dtype=object)
    qa_ids = np.repeat(qa, K)
    slot = slot.ravel()
    chunk_ids = [f"{q}#{j:02d}" for q, j in zip(qa_ids, slot)]
    doc_ids = [f"doc-{q}" if ok else f"doc-{q}-x{j:02d}"
               for q, j, ok in zip(qa_ids, slot, correct.ravel())]
    return CalibrationScores(qa_ids, np.tile(np.arange(1, K + 1), n), score.ravel(), h.ravel(),
                             correct.ravel(), chunk_ids, doc_ids)


def gen_retrieval_scenario(cfg):
    """Return ``(calibration, holdout)`` pools drawn from one seeded stream."""
    rng = SplitMix64(cfg.seed)
    return _retrieval_block(rng, cfg, "cal"), _retrieval_block(rng, cfg, "test")


def _balanced_labels(rng, n):
    labels = np.array([1] * (n // 2) + [0] * (n - n // 2))
    return labels[rng.permutation(n)]


def gen_lookback_dataset(cfg):
    """Class-conditional lookback features with a mean gap of ``feature_sep`` sd.

    The informative coordinates are the first-chunk slots of the first
    ``n_informative`` (layer, head) pairs (CW) or the first ``n_informative``
    coordinates (FC); positives are shifted up by half the gap, negatives down.
    """
    rng = SplitMix64(cfg.seed)
    n, L, H, K = cfg.n_samples, cfg.L, cfg.H, cfg.K
    labels = _balanced_labels(rng, n)
    lh = L * H
    width = lh * K if cfg.lookback_mode == CW else lh
    base = 0.5 + cfg.feature_sd * rng.normal(n * width).reshape(n, width)
    k_present = 1 + rng.integers(K, n)
    if cfg.lookback_mode == CW:
        informative = [p * K for p in range(min(cfg.n_informative, lh))]
    else:
        informative = list(range(min(cfg.n_informative, lh)))
    shift = 0.5 * cfg.feature_sep * cfg.feature_sd * (2 * labels - 1)
    base[:, informative] += shift[:, None]
    samples = []
    for i in range(n):
        vec = base[i]
        if cfg.lookback_mode == CW:
            vec = np.where(np.tile(np.arange(K) < k_present[i], lh), vec, 0.0)
            feats = LookbackFeatures(f"lb-{i:05d}", CW, vec, int(k_present[i]), L, H, K)
        else:
            feats = LookbackFeatures(f"lb-{i:05d}", FC, vec, int(k_present[i]), L, H)
        samples.append(LabeledSample(feats.qa_id, feats, int(labels[i])))
    return samples


def gen_attention_dataset(cfg, n_pre=8, n_chunk=16, n_qu=6):
    """Attention dumps whose chunk attention rises with the consistency label.

    Returns ``(dumps, gamma)`` with real-valued ``gamma_ac`` that round to the
    class label. In the first ``n_informative`` heads (layer-major order), chunk
    attention of consistent answers is scaled by ``1 + 0.5 * feature_sep``; the
    head-specific boost survives per-sample normalization.
    """
    rng = SplitMix64(cfg.seed)
    n, L, H, T, K = cfg.n_samples, cfg.L, cfg.H, cfg.T, cfg.K
    labels = _balanced_labels(rng, n)
    k_present = 1 + rng.integers(K, n)
    gamma_u = rng.random(n)
    dumps, gamma = [], {}
    for i in range(n):
        k = int(k_present[i])
        names = ["pre"] + [f"c{j}" for j in range(1, k + 1)] + ["qu", "output"]
        counts = [n_pre] + [n_chunk] * k + [n_qu, T]
        A = 0.01 + 0.01 * rng.random(L * H * T * len(names)).reshape(L, H, T, len(names))
        heads = A.reshape(L * H, T, len(names))
        heads[:cfg.n_informative, :, 1:k + 1] *= 1.0 + 0.5 * cfg.feature_sep * labels[i]
        qa_id = f"lb-{i:05d}"
        dumps.append(AttentionDump(qa_id, L, H, T, list(zip(names, counts)), A))
        gamma[qa_id] = 0.5 + 0.5 * gamma_u[i] if labels[i] else 0.49 * gamma_u[i]
    return dumps, gamma
