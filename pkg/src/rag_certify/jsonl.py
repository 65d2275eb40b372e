"""Line-delimited JSON reading and writing with line-numbered errors."""

import json
import logging
from pathlib import Path

from .errors import FormatError, MissingInput

logger = logging.getLogger(__name__)


def read_jsonl(path):
    """Yield ``(line_number, record)`` for every non-blank line of ``path``."""
    path = Path(path)
    if not path.exists():
        raise MissingInput(f"{path}: no such file")
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            if not isinstance(record, dict):
                raise FormatError(f"{path}:{lineno}: expected an object")
            yield lineno, record


def write_jsonl(path, records):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(json.dumps(rec, ensure_ascii=False, sort_keys=True))
            fh.write("\n")


def read_json(path):
    path = Path(path)
    if not path.exists():
        raise MissingInput(f"{path}: no such file")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc.msg})") from None


def write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n",
                    encoding="utf-8")


def require(record, fields, where):
    """Raise FormatError naming the first field of ``fields`` absent from ``record``."""
    for name in fields:
        if name not in record:
            raise FormatError(f"{where}: missing field '{name}'")
