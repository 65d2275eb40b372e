"""Lookback-ratio features from segment-averaged attention.

A prompt is laid out as ``pre, c1 .. ck, qu, output``. For every layer ``l``,
head ``h`` and generation step ``t`` a dump holds the mean attention paid to
each segment. Chunk-wise (CW) ratios measure attention on a single chunk
relative to context plus output; full-context (FC) ratios measure the whole
context against the output.
"""

import logging
import re
from dataclasses import dataclass

import numpy as np

from .errors import BadLayout, FormatError
from .jsonl import read_jsonl, require, write_jsonl

logger = logging.getLogger(__name__)

CW, FC = "cw", "fc"
INCLUDE_PRE_QU, CHUNKS_ONLY = "include-pre-qu", "chunks-only"

_CHUNK_NAME = re.compile(r"^c_?(\d+)$")


def chunk_index(name):
    """1-based chunk index for names like ``c3`` or ``c_3``; None otherwise."""
    m = _CHUNK_NAME.match(name)
    return int(m.group(1)) if m else None


@dataclass
class AttentionDump:
    qa_id: str
    L: int
    H: int
    T: int
    segments: list  # [(name, n_tokens)]
    A: np.ndarray   # [L, H, T, len(segments)]

    def __post_init__(self):
        self.segments = [(str(n), int(c)) for n, c in self.segments]
        self.A = np.asarray(self.A, dtype=float)
        expected = (self.L, self.H, self.T, len(self.segments))
        if self.A.shape != expected:
            raise FormatError(f"{self.qa_id}: attention shape {self.A.shape} != {expected}")
        if self.T < 1:
            raise FormatError(f"{self.qa_id}: T must be >= 1")
        if not np.all(np.isfinite(self.A)) or np.any(self.A < 0):
            raise FormatError(f"{self.qa_id}: attention values must be finite and >= 0")
        names = [n for n, _ in self.segments]
        for special in ("pre", "qu", "output"):
            if names.count(special) != 1:
                raise BadLayout(f"{self.qa_id}: need exactly one '{special}' segment")
        idx = [chunk_index(n) for n in names]
        unknown = [n for n, i in zip(names, idx) if i is None and n not in ("pre", "qu", "output")]
        if unknown:
            raise BadLayout(f"{self.qa_id}: unknown segment names {unknown}")
        chunks = sorted(i for i in idx if i is not None)
        if chunks != list(range(1, len(chunks) + 1)):
            raise BadLayout(f"{self.qa_id}: chunk segments must be numbered 1..k")
        for name, count in self.segments:
            if count < 1 and name != "output":
                raise BadLayout(f"{self.qa_id}: segment '{name}' has no tokens")

    def position(self, name):
        return [n for n, _ in self.segments].index(name)

    @property
    def chunk_positions(self):
        """Segment positions of c1..ck, highest retrieval score first."""
        found = {chunk_index(n): p for p, (n, _) in enumerate(self.segments)}
        found.pop(None, None)
        return [found[i] for i in sorted(found)]

    @property
    def k(self):
        return len(self.chunk_positions)

    def to_record(self):
        return {"qa_id": self.qa_id, "L": self.L, "H": self.H, "T": self.T,
                "segments": [{"name": n, "n_tokens": c} for n, c in self.segments],
                "a": self.A.ravel().tolist()}


def segment_average(raw, layout, qa_id=""):
    """Average per-token attention ``raw[l, h, t, p]`` over segment token ranges.

    ``layout`` is a list of ``(name, start, end)`` half-open ranges that must
    tile ``[0, P)`` without gaps or overlaps.
    """
    raw = np.asarray(raw, dtype=float)
    if raw.ndim != 4:
        raise FormatError("per-token attention must be 4-dimensional [l, h, t, p]")
    L, H, T, P = raw.shape
    pos = 0
    for name, start, end in sorted(layout, key=lambda s: (s[1], s[2])):
        if start != pos:
            raise BadLayout(f"{qa_id}: segment '{name}' starts at {start}, expected {pos}")
        if end <= start:
            raise BadLayout(f"{qa_id}: segment '{name}' is empty")
        pos = end
    if pos != P:
        raise BadLayout(f"{qa_id}: segments cover {pos} of {P} prompt tokens")
    A = np.stack([raw[..., s:e].mean(axis=-1) for _, s, e in layout], axis=-1)
    return AttentionDump(qa_id, L, H, T, [(n, e - s) for n, s, e in layout], A)


def context_aggregate(dump, denominator=INCLUDE_PRE_QU):
    """Token-weighted context attention and output attention, each ``[L, H, T]``."""
    if denominator == INCLUDE_PRE_QU:
        ctx = [dump.position("pre"), *dump.chunk_positions, dump.position("qu")]
    elif denominator == CHUNKS_ONLY:
        ctx = dump.chunk_positions
    else:
        raise ValueError(f"unknown denominator mode '{denominator}'")
    out = dump.A[..., dump.position("output")]
    if not ctx:
        return np.zeros_like(out), out
    weights = np.array([dump.segments[p][1] for p in ctx], dtype=float)
    a_ctx = dump.A[..., ctx] @ weights / weights.sum()
    return a_ctx, out


def _safe_ratio(num, den, qa_id):
    zero = den == 0
    if np.any(zero):
        logger.warning("%s: zero attention denominator at %d step(s); ratio set to 0",
                       qa_id, int(zero.sum()))
    den = np.where(zero, 1.0, den)
    return np.where(zero, 0.0, num / den)


@dataclass
class LookbackFeatures:
    qa_id: str
    mode: str
    vector: np.ndarray
    k_present: int
    L: int
    H: int
    K: int = 0  # 0 for FC

    def __post_init__(self):
        self.vector = np.asarray(self.vector, dtype=float)
        if len(self.vector) != self.expected_length:
            raise FormatError(f"{self.qa_id}: feature length {len(self.vector)} "
                              f"!= {self.expected_length} for mode {self.mode}")

    @property
    def expected_length(self):
        return self.L * self.H * (self.K if self.mode == CW else 1)

    @property
    def mask(self):
        """True at positions that carry a measured ratio (False at zero pads)."""
        if self.mode == FC:
            return np.ones(len(self.vector), dtype=bool)
        slots = np.arange(self.K) < self.k_present
        return np.tile(slots, self.L * self.H)

    def to_record(self):
        return {"qa_id": self.qa_id, "mode": self.mode, "L": self.L, "H": self.H, "K": self.K,
                "k_present": self.k_present, "vector": self.vector.tolist()}

    @classmethod
    def from_record(cls, rec, where=""):
        require(rec, ("qa_id", "mode", "L", "H", "k_present", "vector"), where)
        return cls(rec["qa_id"], rec["mode"], rec["vector"], int(rec["k_present"]),
                   int(rec["L"]), int(rec["H"]), int(rec.get("K", 0)))


def lookback_ratios_cw(dump, K, denominator=INCLUDE_PRE_QU):
    """Time-averaged chunk-wise ratios unrolled as ``[l, h, chunk]``, zero-padded to K chunks."""
    if dump.k > K:
        raise ValueError(f"{dump.qa_id}: {dump.k} chunks present but K={K}")
    a_ctx, a_out = context_aggregate(dump, denominator)
    den = a_ctx + a_out
    out = np.zeros((dump.L, dump.H, K))
    if dump.k:
        a_chunks = dump.A[..., dump.chunk_positions]           # [L, H, T, k]
        ratios = _safe_ratio(K * a_chunks, den[..., None], dump.qa_id)
        out[..., :dump.k] = ratios.mean(axis=2)
    return LookbackFeatures(dump.qa_id, CW, out.ravel(), dump.k, dump.L, dump.H, K)


def lookback_ratios_fc(dump):
    a_ctx, a_out = context_aggregate(dump, INCLUDE_PRE_QU)
    ratios = _safe_ratio(a_ctx, a_ctx + a_out, dump.qa_id)
    return LookbackFeatures(dump.qa_id, FC, ratios.mean(axis=2).ravel(), dump.k, dump.L, dump.H)


def extract_features(dump, mode, K, denominator=INCLUDE_PRE_QU):
    if mode == CW:
        return lookback_ratios_cw(dump, K, denominator)
    if mode == FC:
        return lookback_ratios_fc(dump)
    raise ValueError(f"unknown lookback mode '{mode}'")


def normalize_features(features):
    """Per-sample min-max scaling over measured positions; pads stay 0."""
    mask = features.mask
    vec = np.zeros_like(features.vector)
    values = features.vector[mask]
    if values.size:
        lo, hi = values.min(), values.max()
        if hi > lo:
            vec[mask] = (values - lo) / (hi - lo)
        else:
            logger.warning("%s: constant feature vector mapped to zeros", features.qa_id)
    return LookbackFeatures(features.qa_id, features.mode, vec, features.k_present,
                            features.L, features.H, features.K)


def dump_from_record(rec, where=""):
    """Parse a pre-aggregated (``a``) or per-token (``attn``) attention record."""
    require(rec, ("qa_id", "L", "H", "T", "segments"), where)
    L, H, T = int(rec["L"]), int(rec["H"]), int(rec["T"])
    segs = rec["segments"]
    if "a" in rec:
        flat = np.asarray(rec["a"], dtype=float)
        if flat.size != L * H * T * len(segs):
            raise FormatError(f"{where}: array length {flat.size} != L*H*T*|segments| "
                              f"= {L * H * T * len(segs)}")
        for s in segs:
            require(s, ("name", "n_tokens"), where)
        return AttentionDump(rec["qa_id"], L, H, T, [(s["name"], s["n_tokens"]) for s in segs],
                             flat.reshape(L, H, T, len(segs)))
    if "attn" in rec:
        for s in segs:
            require(s, ("name", "start", "end"), where)
        layout = [(s["name"], int(s["start"]), int(s["end"])) for s in segs]
        P = max(e for _, _, e in layout)
        flat = np.asarray(rec["attn"], dtype=float)
        if flat.size != L * H * T * P:
            raise FormatError(f"{where}: per-token array length {flat.size} != L*H*T*P")
        return segment_average(flat.reshape(L, H, T, P), layout, rec["qa_id"])
    raise FormatError(f"{where}: record has neither 'a' nor 'attn'")


def load_dumps(path):
    return [dump_from_record(rec, f"{path}:{n}") for n, rec in read_jsonl(path)]


def save_dumps(path, dumps):
    write_jsonl(path, (d.to_record() for d in dumps))


def save_features(path, features):
    write_jsonl(path, (f.to_record() for f in features))


def load_features(path):
    return [LookbackFeatures.from_record(rec, f"{path}:{n}") for n, rec in read_jsonl(path)]
