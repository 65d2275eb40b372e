"""Okapi BM25 over chunks, top-K retrieval and external score ingestion."""

import heapq
import math
from collections import Counter
from dataclasses import dataclass, field, replace

from .corpus import tokenize
from .errors import FormatError
from .jsonl import read_json, read_jsonl, require, write_json, write_jsonl

DEFAULT_K = 10
DEFAULT_K1 = 1.5
DEFAULT_B = 0.75


@dataclass(frozen=True)
class ScoredChunk:
    chunk_id: str
    doc_id: str
    raw_score: float
    norm_score: float | None = None

    def to_record(self):
        rec = {"chunk_id": self.chunk_id, "doc_id": self.doc_id, "raw_score": self.raw_score}
        if self.norm_score is not None:
            rec["norm_score"] = self.norm_score
        return rec


@dataclass
class RetrievalResult:
    qa_id: str
    candidates: list = field(default_factory=list)

    def to_record(self):
        return {"qa_id": self.qa_id, "candidates": [c.to_record() for c in self.candidates]}


def _rank_key(sc):
    return (-sc.raw_score, sc.chunk_id)


def sort_candidates(candidates):
    """Descending raw score, ties by ascending chunk_id."""
    return sorted(candidates, key=_rank_key)


class InvertedIndex:
    """Term postings and length statistics for a fixed list of chunks."""

    def __init__(self, postings, lengths, doc_of):
        self.postings = postings   # term -> {chunk_id: tf}
        self.lengths = lengths     # chunk_id -> token count
        self.doc_of = doc_of       # chunk_id -> doc_id
        self.n_chunks = len(lengths)
        self.avg_length = sum(lengths.values()) / self.n_chunks

    def idf(self, term):
        df = len(self.postings.get(term, ()))
        return math.log(1.0 + (self.n_chunks - df + 0.5) / (df + 0.5))

    def to_record(self):
        return {
            "n_chunks": self.n_chunks,
            "avg_length": self.avg_length,
            "lengths": self.lengths,
            "doc_of": self.doc_of,
            "postings": self.postings,
        }

    @classmethod
    def from_record(cls, rec):
        return cls({t: dict(p) for t, p in rec["postings"].items()},
                   dict(rec["lengths"]), dict(rec["doc_of"]))

    def save(self, path):
        write_json(path, self.to_record())

    @classmethod
    def load(cls, path):
        return cls.from_record(read_json(path))


def build_index(chunks):
    if not chunks:
        raise ValueError("cannot index an empty chunk list")
    postings, lengths, doc_of = {}, {}, {}
    for chunk in chunks:
        tokens = tokenize(chunk.text)
        lengths[chunk.chunk_id] = len(tokens)
        doc_of[chunk.chunk_id] = chunk.doc_id
        for term, tf in Counter(tokens).items():
            postings.setdefault(term, {})[chunk.chunk_id] = tf
    return InvertedIndex(postings, lengths, doc_of)


def _term_weight(tf, length, avg_length, k1, b):
    return tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * length / avg_length))


def bm25_score(index, query, chunk_id, k1=DEFAULT_K1, b=DEFAULT_B):
    """Okapi BM25 of one chunk. Repeated query terms count once per occurrence."""
    length = index.lengths[chunk_id]
    score = 0.0
    for term in tokenize(query):
        tf = index.postings.get(term, {}).get(chunk_id, 0)
        if tf:
            score += index.idf(term) * _term_weight(tf, length, index.avg_length, k1, b)
    return score


def score_all(index, query, k1=DEFAULT_K1, b=DEFAULT_B):
    """BM25 for every indexed chunk; chunks sharing no query term score 0."""
    scores = dict.fromkeys(index.lengths, 0.0)
    for term in tokenize(query):
        postings = index.postings.get(term)
        if not postings:
            continue
        idf = index.idf(term)
        for cid, tf in postings.items():
            scores[cid] += idf * _term_weight(tf, index.lengths[cid], index.avg_length, k1, b)
    return scores


def retrieve_top_k(index, question, K=DEFAULT_K, qa_id="", k1=DEFAULT_K1, b=DEFAULT_B):
    scores = score_all(index, question, k1, b)
    best = heapq.nsmallest(K, scores.items(), key=lambda kv: (-kv[1], kv[0]))
    return RetrievalResult(qa_id, [ScoredChunk(cid, index.doc_of[cid], s) for cid, s in best])


def load_external_scores(path, doc_of, qa_ids=None, K=DEFAULT_K):
    """Group a ``{qa_id, chunk_id, raw_score}`` file into sorted RetrievalResults.

    ``doc_of`` maps every known chunk_id to its doc_id. Results keep the order
    in which qa_ids first appear in the file.
    """
    grouped = {}
    for lineno, rec in read_jsonl(path):
        where = f"{path}:{lineno}"
        require(rec, ("qa_id", "chunk_id", "raw_score"), where)
        qa_id, cid = rec["qa_id"], rec["chunk_id"]
        if qa_ids is not None and qa_id not in qa_ids:
            raise FormatError(f"{where}: unknown qa_id '{qa_id}'")
        if cid not in doc_of:
            raise FormatError(f"{where}: unknown chunk_id '{cid}'")
        try:
            score = float(rec["raw_score"])
        except (TypeError, ValueError):
            raise FormatError(f"{where}: raw_score is not a number") from None
        if not math.isfinite(score):
            raise FormatError(f"{where}: raw_score is not finite")
        grouped.setdefault(qa_id, []).append(ScoredChunk(cid, doc_of[cid], score))
    results = []
    for qa_id, cands in grouped.items():
        if len(cands) > K:
            raise FormatError(f"{path}: qa_id '{qa_id}' has {len(cands)} candidates, more than K={K}")
        results.append(RetrievalResult(qa_id, sort_candidates(cands)))
    return results


def save_results(path, results):
    write_jsonl(path, (r.to_record() for r in results))


def load_results(path):
    results = []
    for lineno, rec in read_jsonl(path):
        where = f"{path}:{lineno}"
        require(rec, ("qa_id", "candidates"), where)
        cands = []
        for c in rec["candidates"]:
            require(c, ("chunk_id", "doc_id", "raw_score"), where)
            cands.append(ScoredChunk(c["chunk_id"], c["doc_id"], float(c["raw_score"]),
                                     c.get("norm_score")))
        results.append(RetrievalResult(rec["qa_id"], cands))
    return results


def with_norm_scores(result, norms):
    cands = [replace(c, norm_score=float(n)) for c, n in zip(result.candidates, norms)]
    return RetrievalResult(result.qa_id, cands)
