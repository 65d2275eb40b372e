"""Documents, QA triplets and fixed-size whitespace chunking."""

import logging
from dataclasses import dataclass

from .errors import EmptyDocument, FormatError
from .jsonl import read_jsonl, require, write_jsonl

logger = logging.getLogger(__name__)

DEFAULT_CHUNK_SIZE = 512


@dataclass(frozen=True)
class Document:
    doc_id: str
    text: str


@dataclass(frozen=True)
class Chunk:
    chunk_id: str
    doc_id: str
    text: str
    token_count: int

    def to_record(self):
        return {"chunk_id": self.chunk_id, "doc_id": self.doc_id,
                "text": self.text, "token_count": self.token_count}


@dataclass(frozen=True)
class QaRecord:
    qa_id: str
    question: str
    reference_answer: str
    gold_doc_id: str

    def to_record(self):
        return {"qa_id": self.qa_id, "question": self.question,
                "reference_answer": self.reference_answer, "gold_doc_id": self.gold_doc_id}


def tokenize(text):
    """Lowercased whitespace tokens, shared by retrieval and similarity."""
    return text.lower().split()


def chunk_id_for(doc_id, ordinal):
    return f"{doc_id}#{ordinal:05d}"


def chunk_document(doc, chunk_size=DEFAULT_CHUNK_SIZE):
    """Split ``doc`` into consecutive windows of ``chunk_size`` whitespace tokens.

    Chunk text is the window's tokens joined by single spaces, so joining all
    chunk texts with a space reproduces the document up to whitespace runs.
    Only the final chunk may be shorter than ``chunk_size``.
    """
    if chunk_size < 1:
        raise ValueError("chunk_size must be >= 1")
    tokens = doc.text.split()
    if not tokens:
        raise EmptyDocument(f"document '{doc.doc_id}' has no tokens")
    chunks = []
    for ordinal, start in enumerate(range(0, len(tokens), chunk_size)):
        window = tokens[start:start + chunk_size]
        chunks.append(Chunk(chunk_id_for(doc.doc_id, ordinal), doc.doc_id,
                            " ".join(window), len(window)))
    return chunks


def chunk_corpus(docs, chunk_size=DEFAULT_CHUNK_SIZE):
    out = []
    for doc in docs:
        out.extend(chunk_document(doc, chunk_size))
    return out


def _nonempty_str(record, name, where):
    value = record[name]
    if not isinstance(value, str) or not value.strip():
        raise FormatError(f"{where}: field '{name}' must be a non-empty string")
    return value


def load_corpus(path):
    docs, seen = [], set()
    for lineno, rec in read_jsonl(path):
        where = f"{path}:{lineno}"
        require(rec, ("doc_id", "text"), where)
        doc_id = _nonempty_str(rec, "doc_id", where)
        if doc_id in seen:
            raise FormatError(f"{where}: duplicate doc_id '{doc_id}'")
        seen.add(doc_id)
        docs.append(Document(doc_id, _nonempty_str(rec, "text", where)))
    if not docs:
        logger.warning("%s: corpus file is empty", path)
    return docs


def load_qa_dataset(path, doc_ids=None):
    """Read QA triplets in file order.

    If ``doc_ids`` is given, every ``gold_doc_id`` must be one of them.
    """
    records, seen = [], set()
    for lineno, rec in read_jsonl(path):
        where = f"{path}:{lineno}"
        require(rec, ("qa_id", "question", "reference_answer", "gold_doc_id"), where)
        qa = QaRecord(*(_nonempty_str(rec, f, where)
                        for f in ("qa_id", "question", "reference_answer", "gold_doc_id")))
        if qa.qa_id in seen:
            raise FormatError(f"{where}: duplicate qa_id '{qa.qa_id}'")
        if doc_ids is not None and qa.gold_doc_id not in doc_ids:
            raise FormatError(f"{where}: gold_doc_id '{qa.gold_doc_id}' is not in the corpus")
        seen.add(qa.qa_id)
        records.append(qa)
    if not records:
        logger.warning("%s: QA file is empty", path)
    return records


def save_chunks(path, chunks):
    write_jsonl(path, (c.to_record() for c in chunks))


def load_chunks(path):
    chunks, seen = [], set()
    for lineno, rec in read_jsonl(path):
        where = f"{path}:{lineno}"
        require(rec, ("chunk_id", "doc_id", "text", "token_count"), where)
        if rec["chunk_id"] in seen:
            raise FormatError(f"{where}: duplicate chunk_id '{rec['chunk_id']}'")
        seen.add(rec["chunk_id"])
        chunks.append(Chunk(rec["chunk_id"], rec["doc_id"], rec["text"], int(rec["token_count"])))
    return chunks


def save_qa(path, records):
    write_jsonl(path, (r.to_record() for r in records))
