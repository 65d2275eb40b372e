"""Token-level ROUGE-L between a chunk and a reference answer."""

from dataclasses import dataclass

from .corpus import tokenize


@dataclass(frozen=True)
class RougeScore:
    precision: float
    recall: float
    f1: float

    def get(self, measure):
        return {"f1": self.f1, "precision": self.precision, "recall": self.recall}[measure]


def lcs_length(a, b):
    """Length of the longest common subsequence of two token sequences.

    Two-row dynamic program, O(len(a) * len(b)) time and O(len(b)) memory.
    """
    if len(a) < len(b):
        a, b = b, a
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l_tokens(cand, ref):
    if not cand or not ref:
        return RougeScore(0.0, 0.0, 0.0)
    lcs = lcs_length(cand, ref)
    p, r = lcs / len(cand), lcs / len(ref)
    f1 = 0.0 if p + r == 0 else 2 * p * r / (p + r)
    return RougeScore(p, r, f1)


def rouge_l(candidate, reference):
    """ROUGE-L precision, recall and F1 over lowercased whitespace tokens."""
    return rouge_l_tokens(tokenize(candidate), tokenize(reference))
