"""Pipeline configuration: one JSON file plus command-line overrides."""

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields

from .errors import FormatError
from .jsonl import read_json


@dataclass
class PipelineConfig:
    chunk_size: int = 512
    K: int = 10
    alpha: float = 0.1
    beta: float = 0.0
    bm25_k1: float = 1.5
    bm25_b: float = 0.75
    similarity: str = "f1"
    lr_mode: str = "cw"
    denominator: str = "include-pre-qu"
    delta_formula: str = "standard"
    normalize_features: bool = True
    clf_max_iter: int = 1000
    clf_l2: float = 1.0
    seed: int = 0
    synth: dict = field(default_factory=dict)

    def __post_init__(self):
        checks = [
            (self.chunk_size >= 1, "chunk_size must be >= 1"),
            (self.K >= 1, "K must be >= 1"),
            (0.0 < self.alpha < 1.0, "alpha must lie in (0, 1)"),
            (0.0 <= self.beta <= 1.0, "beta must lie in [0, 1]"),
            (self.similarity in ("f1", "precision", "recall"), "similarity: f1|precision|recall"),
            (self.lr_mode in ("cw", "fc"), "lr_mode must be cw or fc"),
            (self.denominator in ("include-pre-qu", "chunks-only"),
             "denominator must be include-pre-qu or chunks-only"),
            (self.delta_formula in ("standard", "literal"), "delta_formula: standard|literal"),
        ]
        for ok, msg in checks:
            if not ok:
                raise FormatError(f"config: {msg}")

    @classmethod
    def from_file(cls, path, overrides=None):
        rec = read_json(path) if path else {}
        if not isinstance(rec, dict):
            raise FormatError(f"{path}: config must be an object")
        names = {f.name for f in fields(cls)}
        unknown = set(rec) - names
        if unknown:
            raise FormatError(f"{path}: unknown config keys {sorted(unknown)}")
        rec.update({k: v for k, v in (overrides or {}).items() if v is not None})
        return cls(**rec)

    def to_record(self):
        return asdict(self)

    def digest(self):
        blob = json.dumps(self.to_record(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()
