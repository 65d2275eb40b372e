"""Split-conformal calibration of retrieval scores and trust labelling.

Calibration pools every retrieved chunk of every calibration question:

1. raw scores are min-max normalized with bounds ``n1``/``n2`` taken from the pool;
2. ``s_thres`` is the ``beta`` percentile of the similarity ``h`` among chunks
   from the wrong source document;
3. a chunk is ground-truth correct when ``h >= s_thres`` and its source is right;
4. ``q_hat`` is the adjusted-level percentile of ``1 - norm`` over correct chunks.

At inference a chunk is trusted when ``norm >= 1 - q_hat``. All percentiles use
the nearest-rank "higher" rule: the value at 1-based rank ``ceil(p * m)`` of the
ascending sort (rank 1 when ``p * m <= 0``).
"""

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DegenerateScores, FormatError, NoCorrectChunks
from .jsonl import read_json, read_jsonl, require, write_json, write_jsonl
from .retrieval import RetrievalResult, ScoredChunk, with_norm_scores
from .similarity import rouge_l

logger = logging.getLogger(__name__)

DEFAULT_ALPHA = 0.1
DEFAULT_BETA = 0.0


def _ceil(x):
    # absorbs float noise such as 0.07 * 100 == 7.000000000000001
    return math.ceil(round(x, 9))


def nearest_rank(p, m):
    """1-based rank of the ``p`` percentile among ``m`` sorted values."""
    if m < 1:
        raise ValueError("percentile of an empty set")
    return min(m, max(1, _ceil(p * m)))


def percentile_higher(values, p):
    values = np.sort(np.asarray(values, dtype=float))
    return float(values[nearest_rank(p, len(values)) - 1])


@dataclass
class CalibrationScores:
    """Column-wise pool of retrieved chunks with their calibration attributes."""

    qa_ids: np.ndarray
    ranks: np.ndarray
    raw: np.ndarray
    h: np.ndarray
    correct: np.ndarray
    chunk_ids: np.ndarray = None
    doc_ids: np.ndarray = None
    norm: np.ndarray = None

    def __post_init__(self):
        self.qa_ids = np.asarray(self.qa_ids, dtype=object)
        self.ranks = np.asarray(self.ranks, dtype=np.int64)
        self.raw = np.asarray(self.raw, dtype=float)
        self.h = np.asarray(self.h, dtype=float)
        self.correct = np.asarray(self.correct, dtype=bool)
        n = len(self.raw)
        if self.chunk_ids is None:
            self.chunk_ids = np.array([f"{q}@{r}" for q, r in zip(self.qa_ids, self.ranks)],
                                      dtype=object)
        if self.doc_ids is None:
            self.doc_ids = np.full(n, "", dtype=object)
        self.chunk_ids = np.asarray(self.chunk_ids, dtype=object)
        self.doc_ids = np.asarray(self.doc_ids, dtype=object)
        if self.norm is not None:
            self.norm = np.asarray(self.norm, dtype=float)
        for name in ("qa_ids", "ranks", "h", "correct", "chunk_ids", "doc_ids"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"column '{name}' has the wrong length")

    def __len__(self):
        return len(self.raw)

    @property
    def n_cal(self):
        return len(set(self.qa_ids.tolist()))

    def question_index(self):
        """(unique qa_ids in first-seen order, per-entry index into them)."""
        order, inverse = {}, np.empty(len(self), dtype=np.int64)
        for i, q in enumerate(self.qa_ids):
            inverse[i] = order.setdefault(q, len(order))
        return list(order), inverse

    def entries(self):
        norm = self.norm if self.norm is not None else [None] * len(self)
        for row in zip(self.qa_ids, self.ranks, self.raw, norm, self.h, self.correct):
            yield row

    def with_norm(self, norm):
        return CalibrationScores(self.qa_ids, self.ranks, self.raw, self.h, self.correct,
                                 self.chunk_ids, self.doc_ids, norm)

    def to_records(self, labels=None):
        for i in range(len(self)):
            rec = {
                "qa_id": self.qa_ids[i],
                "rank": int(self.ranks[i]),
                "chunk_id": self.chunk_ids[i],
                "doc_id": self.doc_ids[i],
                "raw_score": float(self.raw[i]),
                "h_score": float(self.h[i]),
                "affiliation_correct": bool(self.correct[i]),
            }
            if self.norm is not None:
                rec["norm_score"] = float(self.norm[i])
            if labels is not None:
                rec["label"] = bool(labels[i])
            yield rec

    def to_results(self):
        """Regroup the pool into RetrievalResults, rank order within a question."""
        qids, inverse = self.question_index()
        grouped = [[] for _ in qids]
        for i in np.lexsort((self.ranks, inverse)):
            grouped[inverse[i]].append(ScoredChunk(self.chunk_ids[i], self.doc_ids[i],
                                                   float(self.raw[i])))
        return [RetrievalResult(q, cands) for q, cands in zip(qids, grouped)]


def save_scores(path, scores, labels=None):
    write_jsonl(path, scores.to_records(labels))


def load_scores(path):
    cols = {k: [] for k in ("qa_ids", "ranks", "raw", "h", "correct", "chunk_ids", "doc_ids")}
    for lineno, rec in read_jsonl(path):
        where = f"{path}:{lineno}"
        require(rec, ("qa_id", "rank", "raw_score", "h_score", "affiliation_correct"), where)
        cols["qa_ids"].append(rec["qa_id"])
        cols["ranks"].append(int(rec["rank"]))
        cols["raw"].append(float(rec["raw_score"]))
        cols["h"].append(float(rec["h_score"]))
        cols["correct"].append(bool(rec["affiliation_correct"]))
        cols["chunk_ids"].append(rec.get("chunk_id", f"{rec['qa_id']}@{rec['rank']}"))
        cols["doc_ids"].append(rec.get("doc_id", ""))
    return CalibrationScores(**cols)


def build_calibration_scores(results, chunk_text, qa_by_id, measure="f1"):
    """Attach similarity and affiliation to retrieved chunks.

    Args:
        results: RetrievalResults for calibration questions.
        chunk_text: mapping chunk_id -> chunk text.
        qa_by_id: mapping qa_id -> QaRecord.
        measure: which ROUGE-L component serves as ``h``.
    """
    cols = {k: [] for k in ("qa_ids", "ranks", "raw", "h", "correct", "chunk_ids", "doc_ids")}
    for res in results:
        if res.qa_id not in qa_by_id:
            raise FormatError(f"retrieval result for unknown qa_id '{res.qa_id}'")
        qa = qa_by_id[res.qa_id]
        for j, cand in enumerate(res.candidates, start=1):
            if cand.chunk_id not in chunk_text:
                raise FormatError(f"unknown chunk_id '{cand.chunk_id}'")
            cols["qa_ids"].append(res.qa_id)
            cols["ranks"].append(j)
            cols["raw"].append(cand.raw_score)
            cols["h"].append(rouge_l(chunk_text[cand.chunk_id], qa.reference_answer).get(measure))
            cols["correct"].append(cand.doc_id == qa.gold_doc_id)
            cols["chunk_ids"].append(cand.chunk_id)
            cols["doc_ids"].append(cand.doc_id)
    return CalibrationScores(**cols)


def apply_normalization(raw, n1, n2):
    """Min-max map with calibration bounds, clamped into [0, 1]."""
    return np.clip((np.asarray(raw, dtype=float) - n1) / (n2 - n1), 0.0, 1.0)


def normalize_scores(scores):
    """Return ``(scores with norm set, n1, n2)``; bounds are the pool's min and max."""
    if len(scores) == 0:
        raise DegenerateScores("no calibration scores")
    n1, n2 = float(scores.raw.min()), float(scores.raw.max())
    if not n2 > n1:
        raise DegenerateScores(f"all calibration raw scores equal {n1}")
    return scores.with_norm(apply_normalization(scores.raw, n1, n2)), n1, n2


def compute_s_thres(scores, beta):
    wrong = scores.h[~scores.correct]
    if len(wrong) == 0:
        logger.warning("no wrongly-affiliated calibration chunks; s_thres set to 0")
        return 0.0
    return percentile_higher(wrong, beta)


def label_calibration(scores, s_thres):
    return (scores.h >= s_thres) & scores.correct


def q_hat_rank(n, alpha, delta_formula="standard"):
    """1-based rank into the sorted correct nonconformity scores.

    ``standard`` uses level ``min(1, ceil((n + 1)(1 - alpha)) / n)``; ``literal``
    uses ``ceil((n + 1)(1 - alpha) / n)`` read as a fraction, which selects the
    maximum for every practical ``n``.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    if delta_formula == "standard":
        return min(n, max(1, _ceil((n + 1) * (1.0 - alpha))))
    if delta_formula == "literal":
        level = _ceil((n + 1) * (1.0 - alpha) / n)
        return nearest_rank(min(level, 1), n)
    raise ValueError(f"unknown delta formula '{delta_formula}'")


def compute_q_hat(scores, labels, alpha, delta_formula="standard"):
    """Return ``(q_hat, n)`` where ``n`` counts correct calibration chunks."""
    if scores.norm is None:
        raise ValueError("normalize_scores must run before compute_q_hat")
    labels = np.asarray(labels, dtype=bool)
    nonconf = np.sort(1.0 - scores.norm[labels])
    n = len(nonconf)
    if n == 0:
        raise NoCorrectChunks("no calibration chunk passes s_thres with the right source")
    return float(nonconf[q_hat_rank(n, alpha, delta_formula) - 1]), n


@dataclass(frozen=True)
class ConformalModel:
    n1: float
    n2: float
    s_thres: float
    q_hat: float
    alpha: float
    beta: float
    K: int
    n_correct: int
    delta_formula: str = "standard"

    def __post_init__(self):
        if not self.n2 > self.n1:
            raise DegenerateScores("n2 must exceed n1")
        if not 0.0 <= self.q_hat <= 1.0:
            raise ValueError("q_hat outside [0, 1]")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")

    @property
    def threshold(self):
        return 1.0 - self.q_hat

    def normalize(self, raw):
        return apply_normalization(raw, self.n1, self.n2)

    def trusted(self, norm):
        # compared in nonconformity space, the space q_hat was selected in
        return (1.0 - np.asarray(norm, dtype=float)) <= self.q_hat

    def save(self, path):
        write_json(path, asdict(self))

    @classmethod
    def load(cls, path):
        rec = read_json(path)
        require(rec, ("n1", "n2", "s_thres", "q_hat", "alpha", "beta", "K", "n_correct"), path)
        return cls(float(rec["n1"]), float(rec["n2"]), float(rec["s_thres"]), float(rec["q_hat"]),
                   float(rec["alpha"]), float(rec["beta"]), int(rec["K"]), int(rec["n_correct"]),
                   rec.get("delta_formula", "standard"))


def calibrate(scores, alpha=DEFAULT_ALPHA, beta=DEFAULT_BETA, K=10, delta_formula="standard"):
    """Fit a ConformalModel; returns ``(model, normalized scores, labels)``."""
    normed, n1, n2 = normalize_scores(scores)
    s_thres = compute_s_thres(normed, beta)
    labels = label_calibration(normed, s_thres)
    q_hat, n = compute_q_hat(normed, labels, alpha, delta_formula)
    model = ConformalModel(n1, n2, s_thres, q_hat, alpha, beta, K, n, delta_formula)
    return model, normed, labels


@dataclass
class TrustLabels:
    qa_id: str
    labels: list
    k_trusted: int
    m1: bool
    m2: float

    def to_record(self):
        return asdict(self)


def predict_trust(model, result):
    if len(result.candidates) > model.K:
        raise ValueError(f"{result.qa_id}: {len(result.candidates)} candidates exceed K={model.K}")
    norms = model.normalize([c.raw_score for c in result.candidates])
    labels = [bool(x) for x in model.trusted(norms)]
    k = sum(labels)
    return TrustLabels(result.qa_id, labels, k, k > 0, k / model.K)


def normalize_result(model, result):
    return with_norm_scores(result, model.normalize([c.raw_score for c in result.candidates]))


def filter_chunks(result, labels):
    if len(labels.labels) != len(result.candidates):
        raise ValueError("trust labels are not aligned with the retrieval result")
    kept = [c for c, keep in zip(result.candidates, labels.labels) if keep]
    return RetrievalResult(result.qa_id, kept)


@dataclass
class DiagnosticsReport:
    alpha: float
    n_questions: int
    mean_m1: float
    mean_m2: float
    se_m1: float
    se_m2: float
    m1_deviation: float
    coverage: float | None = None
    extra: dict = field(default_factory=dict)

    def to_record(self):
        return asdict(self)


def _mean_se(x):
    x = np.asarray(x, dtype=float)
    se = float(x.std(ddof=1) / math.sqrt(len(x))) if len(x) > 1 else 0.0
    return float(x.mean()), se


def diagnostics_from_metrics(m1, m2, alpha):
    if len(m1) == 0:
        raise ValueError("diagnostics need at least one question")
    mean_m1, se_m1 = _mean_se(m1)
    mean_m2, se_m2 = _mean_se(m2)
    return DiagnosticsReport(alpha, len(m1), mean_m1, mean_m2, se_m1, se_m2,
                             mean_m1 - (1.0 - alpha))


def aggregate_diagnostics(all_labels, alpha):
    return diagnostics_from_metrics([float(t.m1) for t in all_labels],
                                    [t.m2 for t in all_labels], alpha)


def question_metrics(model, scores):
    """Per-question ``(m1, m2)`` arrays for a scored pool, under ``model``."""
    _, inverse = scores.question_index()
    trusted = model.trusted(model.normalize(scores.raw))
    k = np.bincount(inverse, weights=trusted.astype(float), minlength=inverse.max() + 1)
    return (k > 0).astype(float), k / model.K


def coverage_audit(model, holdout):
    """Fraction of ground-truth correct holdout chunks that the model trusts."""
    labels = label_calibration(holdout, model.s_thres)
    if not labels.any():
        raise NoCorrectChunks("holdout has no ground-truth correct chunks")
    trusted = model.trusted(model.normalize(holdout.raw))
    return float(trusted[labels].mean())


def alpha_sweep(calibration, alphas, beta=DEFAULT_BETA, K=10, evaluation=None,
                delta_formula="standard"):
    """Recalibrate at each alpha; report mean m1/m2 on ``evaluation`` (default: calibration)."""
    evaluation = calibration if evaluation is None else evaluation
    normed, n1, n2 = normalize_scores(calibration)
    s_thres = compute_s_thres(normed, beta)
    labels = label_calibration(normed, s_thres)
    rows = []
    for alpha in alphas:
        q_hat, n = compute_q_hat(normed, labels, alpha, delta_formula)
        model = ConformalModel(n1, n2, s_thres, q_hat, alpha, beta, K, n, delta_formula)
        m1, m2 = question_metrics(model, evaluation)
        rows.append((float(alpha), float(m1.mean()), float(m2.mean())))
    return rows


def parse_sweep(spec):
    """``start:stop:step`` (inclusive stop) -> list of alphas rounded to 10 digits."""
    try:
        start, stop, step = (float(x) for x in spec.split(":"))
    except ValueError:
        raise ValueError(f"alpha sweep must be start:stop:step, got '{spec}'") from None
    if step <= 0 or stop < start:
        raise ValueError(f"bad alpha sweep '{spec}'")
    count = int(math.floor(round((stop - start) / step, 9))) + 1
    return [round(start + i * step, 10) for i in range(count)]
