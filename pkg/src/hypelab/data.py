"""
Datasets, Tokenization and Batching

Sentence and sentence-pair datasets read from JSONL or TSV files, a
whitespace tokenizer with a character fallback over a small fixed
vocabulary, low-resource subsampling and label-space remapping.
"""

import csv
import io
import json
import logging
import math
import re
import string
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Literal, Mapping, Sequence

import numpy as np

from .classes import Batch, Encoding
from .errors import CPos, DataParseError, DatasetError, InputError, MappingError, OutputError
from .rng import RngStream

logger = logging.getLogger(__name__)

TaskKind = Literal["classification", "regression"]
DataFormat = Literal["jsonl", "tsv"]

COLUMNS = ("text_a", "text_b", "label")
MISSING_LABELS = (None, "", "-")
TSV_ESCAPES = {"\\": "\\\\", "\t": "\\t", "\n": "\\n", "\r": "\\r"}
_TSV_UNESCAPE = re.compile(r"\\([\\tnr])")


@dataclass(frozen=True)
class Example:
    text_a: str
    text_b: str | None = None
    target: int | float | None = None


@dataclass(frozen=True)
class Dataset:
    """
    Named, ordered list of examples of one task kind.

    Classification targets index into `label_names`; a target of None marks
    an example without a gold label.
    """

    name: str
    examples: tuple[Example, ...]
    kind: TaskKind = "classification"
    label_names: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "examples", tuple(self.examples))
        object.__setattr__(self, "label_names", tuple(self.label_names))
        if not self.examples:
            raise DatasetError(f"dataset '{self.name}' is empty")
        if self.kind not in ("classification", "regression"):
            raise DatasetError(f"unknown task kind '{self.kind}'")
        for i, ex in enumerate(self.examples):
            if ex.target is None:
                continue
            if self.kind == "classification":
                if not isinstance(ex.target, (int, np.integer)) or not 0 <= ex.target < len(self.label_names):
                    raise DatasetError(
                        f"dataset '{self.name}': example {i} has target {ex.target!r} outside [0, {len(self.label_names)})"
                    )
            elif not math.isfinite(float(ex.target)):
                raise DatasetError(f"dataset '{self.name}': example {i} has a non-finite score")

    def __len__(self):
        return len(self.examples)

    @property
    def n_classes(self) -> int:
        return len(self.label_names)

    @property
    def is_pair(self) -> bool:
        return any(ex.text_b is not None for ex in self.examples)

    def targets(self) -> np.ndarray:
        dtype = np.int64 if self.kind == "classification" else np.float64
        return np.array([ex.target for ex in self.examples], dtype=dtype)

    def edit(self, **kwargs) -> "Dataset":
        return replace(self, **kwargs)


SPECIAL_TOKENS = ("[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]")
FALLBACK_CHARS = string.ascii_lowercase + string.digits


@dataclass(frozen=True)
class TokenizerSpec:
    """
    Fixed vocabulary with special tokens.

    Words are lower-cased and split on whitespace; a word outside the
    vocabulary falls back to its characters, and characters outside the
    vocabulary map to the unknown token.
    """

    vocab: Mapping[str, int] = field(hash=False)
    first_token: str = "[CLS]"
    sep_token: str = "[SEP]"
    pad_token: str = "[PAD]"
    mask_token: str = "[MASK]"
    unk_token: str = "[UNK]"

    def __post_init__(self):
        specials = (self.first_token, self.sep_token, self.pad_token, self.mask_token, self.unk_token)
        missing = [s for s in specials if s not in self.vocab]
        if missing:
            raise InputError(f"special tokens missing from vocabulary: {', '.join(missing)}")
        if len({self.vocab[s] for s in specials}) != len(specials):
            raise InputError("special token ids must be distinct")
        if sorted(self.vocab.values()) != list(range(len(self.vocab))):
            raise InputError("vocabulary ids must be 0..n-1")

    @classmethod
    def build(cls, words: Iterable[str], chars: str = FALLBACK_CHARS) -> "TokenizerSpec":
        tokens = list(SPECIAL_TOKENS) + list(dict.fromkeys(chars))
        tokens += sorted(set(w.lower() for w in words) - set(tokens))
        return cls({tok: i for i, tok in enumerate(tokens)})

    def extend(self, texts: Iterable[str], limit: int) -> "TokenizerSpec":
        """
        Append unseen words of `texts`, most frequent first (ties
        alphabetical), until the vocabulary holds `limit` tokens. Existing ids
        are kept.
        """
        counts = Counter(w for text in texts for w in text.lower().split() if w not in self.vocab)
        room = max(0, limit - len(self.vocab))
        ranked = sorted(counts, key=lambda w: (-counts[w], w))[:room]
        vocab = dict(self.vocab)
        for word in ranked:
            vocab[word] = len(vocab)
        return replace(self, vocab=vocab)

    def __len__(self):
        return len(self.vocab)

    @property
    def pad_id(self) -> int:
        return self.vocab[self.pad_token]

    @property
    def first_id(self) -> int:
        return self.vocab[self.first_token]

    @property
    def sep_id(self) -> int:
        return self.vocab[self.sep_token]

    @property
    def mask_id(self) -> int:
        return self.vocab[self.mask_token]

    @property
    def unk_id(self) -> int:
        return self.vocab[self.unk_token]

    @property
    def special_ids(self) -> frozenset[int]:
        return frozenset(
            self.vocab[t]
            for t in (self.first_token, self.sep_token, self.pad_token, self.mask_token, self.unk_token)
        )

    def word_ids(self, text: str | None) -> list[int]:
        if not text:
            return []
        ids: list[int] = []
        for word in text.lower().split():
            if word in self.vocab:
                ids.append(self.vocab[word])
            else:
                ids.extend(self.vocab.get(ch, self.unk_id) for ch in word)
        return ids


def tokenize(spec: TokenizerSpec, example: Example, max_len: int = 128, pad: bool = True) -> Encoding:
    """
    [FIRST] a [SEP] (b [SEP]), truncated to `max_len` (longest segment first)
    and padded to `max_len` when `pad` is set.
    """
    a = spec.word_ids(example.text_a)
    b = spec.word_ids(example.text_b) if example.text_b is not None else None
    budget = max_len - (3 if b is not None else 2)
    if budget < 0:
        raise InputError(f"max_len {max_len} leaves no room for special tokens")

    if b is None:
        a = a[:budget]
    else:
        while len(a) + len(b) > budget:
            if len(a) >= len(b):
                a.pop()
            else:
                b.pop()

    ids = [spec.first_id, *a, spec.sep_id]
    segments = [0] * len(ids)
    if b is not None:
        ids += [*b, spec.sep_id]
        segments += [1] * (len(b) + 1)
    mask = [1] * len(ids)

    if pad and len(ids) < max_len:
        fill = max_len - len(ids)
        ids += [spec.pad_id] * fill
        mask += [0] * fill
        segments += [0] * fill
    return Encoding(tuple(ids), tuple(mask), tuple(segments))


def collate(
    encodings: Sequence[Encoding],
    pad_id: int,
    pad_to: Literal["batch", "max_len"] = "batch",
    max_len: int = 128,
) -> Batch:
    """Stack encodings into id / mask / segment matrices."""
    width = max_len if pad_to == "max_len" else max(len(e) for e in encodings)
    n = len(encodings)
    ids = np.full((n, width), pad_id, dtype=np.int64)
    mask = np.zeros((n, width), dtype=np.int64)
    segments = np.zeros((n, width), dtype=np.int64)
    for row, enc in enumerate(encodings):
        if len(enc) > width:
            raise InputError(f"encoding of length {len(enc)} does not fit width {width}")
        ids[row, : len(enc)] = enc.input_ids
        mask[row, : len(enc)] = enc.attention_mask
        segments[row, : len(enc)] = enc.segment_ids
    return Batch(ids, mask, segments)


def encode_dataset(
    spec: TokenizerSpec, dataset: Dataset, max_len: int = 128, pad_to: Literal["batch", "max_len"] = "batch"
) -> list[Encoding]:
    return [tokenize(spec, ex, max_len=max_len, pad=pad_to == "max_len") for ex in dataset.examples]


def _infer_format(path: Path, fmt: str | None) -> DataFormat:
    fmt = fmt or path.suffix.lstrip(".").lower()
    if fmt not in ("jsonl", "tsv"):
        raise InputError(f"cannot infer dataset format of '{path}', expected .jsonl or .tsv")
    return fmt  # type: ignore[return-value]


def _as_number(x: object) -> float | None:
    if isinstance(x, bool):
        return None
    if isinstance(x, (int, float)):
        return float(x)
    try:
        value = float(str(x))
    except ValueError:
        return None
    return value if math.isfinite(value) else None


def _is_int(text: str) -> bool:
    try:
        int(text)
    except ValueError:
        return False
    return True


def _escape_tsv(text: str) -> str:
    return "".join(TSV_ESCAPES.get(c, c) for c in text)


def _unescape_tsv(text: str) -> str:
    return _TSV_UNESCAPE.sub(lambda m: {"t": "\t", "n": "\n", "r": "\r"}.get(m.group(1), m.group(1)), text)


def _build(
    name: str,
    raw: list[tuple[str, str | None, object]],
    kind: TaskKind | None,
    label_names: Sequence[str] | None,
) -> Dataset:
    present = [label for _, _, label in raw if label not in MISSING_LABELS]
    numbers = [_as_number(x) for x in present]
    numeric = bool(present) and all(n is not None for n in numbers)
    if kind is None:
        # JSON floats and TSV scores like "3.25" or "4.0" mark a regression task
        fractional = any(isinstance(x, float) or (isinstance(x, str) and not _is_int(x)) for x in present)
        kind = "regression" if numeric and fractional else "classification"

    if kind == "regression":
        examples = [
            Example(a, b, None if label in MISSING_LABELS else float(label))  # type: ignore[arg-type]
            for a, b, label in raw
        ]
        return Dataset(name, tuple(examples), "regression", ())

    if label_names:
        names = list(label_names)
    else:
        names = list(dict.fromkeys(str(x) for x in present))
        if numeric:
            # numeric class labels keep their order, so label 1 stays the positive class
            names.sort(key=lambda n: _as_number(n))  # type: ignore[arg-type, return-value]
    index = {n: i for i, n in enumerate(names)}
    examples = []
    for a, b, label in raw:
        if label in MISSING_LABELS:
            examples.append(Example(a, b, None))
            continue
        if str(label) not in index:
            raise MappingError(f"label '{label}' is not one of {', '.join(names)}")
        examples.append(Example(a, b, index[str(label)]))
    return Dataset(name, tuple(examples), "classification", tuple(names))


def load_dataset(
    path: str | Path,
    format: DataFormat | None = None,
    name: str | None = None,
    kind: TaskKind | None = None,
    label_names: Sequence[str] | None = None,
) -> Dataset:
    """
    Read one example per record, in file order.

    JSONL: one object per line with keys text_a, text_b (optional) and
    label. TSV: header row `text_a<TAB>text_b<TAB>label`. Labels may be
    strings or numbers; a missing label, "" or "-" marks an unlabeled example.
    """
    path = Path(path)
    fmt = _infer_format(path, format)
    try:
        data = path.read_bytes()
    except OSError as e:
        raise DatasetError(f"cannot read dataset '{path}': {e.strerror}", path=str(path))
    try:
        code = data.decode("utf-8")
    except UnicodeDecodeError as e:
        lineno = data.count(b"\n", 0, e.start) + 1
        col = e.start - (data.rfind(b"\n", 0, e.start) + 1) + 1
        raise DataParseError(
            f"line {lineno}: invalid UTF-8 byte 0x{data[e.start]:02x}",
            pos=CPos(lineno, col, lineno, col + 1),
            path=str(path),
        )

    lines = code.splitlines()
    raw: list[tuple[str, str | None, object]] = []

    def fail(lineno: int, message: str):
        return DataParseError(
            f"line {lineno}: {message}",
            pos=CPos(lineno, 1, lineno, len(lines[lineno - 1]) + 1 if lineno <= len(lines) else 2),
            path=str(path),
            code=code,
        )

    if fmt == "jsonl":
        for lineno, line in enumerate(lines, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise fail(lineno, f"invalid JSON ({e.msg})")
            if not isinstance(record, dict):
                raise fail(lineno, "record must be a JSON object")
            unknown = set(record) - set(COLUMNS)
            if unknown:
                raise fail(lineno, f"unknown field '{sorted(unknown)[0]}'")
            text_a, text_b, label = record.get("text_a"), record.get("text_b"), record.get("label")
            if not isinstance(text_a, str):
                raise fail(lineno, "field 'text_a' must be a string")
            if text_b is not None and not isinstance(text_b, str):
                raise fail(lineno, "field 'text_b' must be a string or absent")
            if label is not None and (isinstance(label, bool) or not isinstance(label, (str, int, float))):
                raise fail(lineno, "field 'label' must be a string or a number")
            if isinstance(label, float) and not math.isfinite(label):
                raise fail(lineno, "field 'label' must be finite")
            raw.append((text_a, text_b, label))
    else:
        reader = csv.reader(io.StringIO(code), delimiter="\t", quoting=csv.QUOTE_NONE)
        for lineno, row in enumerate(reader, start=1):
            if lineno == 1:
                if tuple(c.strip() for c in row) != COLUMNS:
                    raise fail(lineno, f"header must be {chr(9).join(COLUMNS)!r}")
                continue
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 3:
                raise fail(lineno, f"expected 3 tab-separated columns, got {len(row)}")
            text_a, text_b, label = row
            label_value: object = _unescape_tsv(label.strip())
            if kind == "regression" and label_value not in MISSING_LABELS:
                try:
                    label_value = float(label_value)  # type: ignore[arg-type]
                except ValueError:
                    raise fail(lineno, f"score '{label}' is not a number")
            raw.append((_unescape_tsv(text_a), _unescape_tsv(text_b) or None, label_value))

    if not raw:
        raise DatasetError(f"dataset '{path}' is empty", path=str(path))
    return _build(name or path.stem, raw, kind, label_names)


def write_dataset(dataset: Dataset, path: str | Path, format: DataFormat | None = None) -> Path:
    """Inverse of `load_dataset`: labels are written by name (or as scores)."""
    path = Path(path)
    fmt = _infer_format(path, format)

    def label_of(ex: Example):
        if ex.target is None:
            return None
        if dataset.kind == "regression":
            return float(ex.target)
        return dataset.label_names[int(ex.target)]

    if fmt == "jsonl":
        lines = []
        for ex in dataset.examples:
            record: dict[str, object] = {"text_a": ex.text_a}
            if ex.text_b is not None:
                record["text_b"] = ex.text_b
            record["label"] = label_of(ex)
            lines.append(json.dumps(record, ensure_ascii=False))
        text = "\n".join(lines) + "\n"
    else:
        rows = ["\t".join(COLUMNS)]
        for ex in dataset.examples:
            label = label_of(ex)
            cell = "" if label is None else (repr(label) if isinstance(label, float) else _escape_tsv(label))
            rows.append("\t".join([_escape_tsv(ex.text_a), _escape_tsv(ex.text_b or ""), cell]))
        text = "\n".join(rows) + "\n"

    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    except OSError as e:
        raise OutputError(f"cannot write dataset '{path}': {e.strerror}")
    return path


def subsample(dataset: Dataset, k: int = 1000, seed: int = 0) -> Dataset:
    """
    Uniform sample of `k` examples without replacement, kept in original order.
    """
    if not 1 <= k <= len(dataset):
        raise InputError(f"cannot subsample {k} examples from a dataset of {len(dataset)}")
    gen = RngStream(seed, purpose="subsample").generator()
    keep = np.sort(gen.choice(len(dataset), size=k, replace=False))
    return dataset.edit(examples=tuple(dataset.examples[i] for i in keep))


def remap_labels(dataset: Dataset, mapping: Mapping[str, str]) -> Dataset:
    """
    Rewrite labels through `mapping` (old name -> new name), compacting the
    label space and dropping examples without a gold label.
    """
    if dataset.kind != "classification":
        raise MappingError(f"dataset '{dataset.name}' is a regression task and has no label space")
    used = {dataset.label_names[ex.target] for ex in dataset.examples if ex.target is not None}  # type: ignore[index]
    missing = sorted(used - set(mapping))
    if missing:
        raise MappingError(f"label '{missing[0]}' has no mapping")

    names = list(dict.fromkeys(mapping[n] for n in dataset.label_names if n in mapping))
    index = {n: i for i, n in enumerate(names)}
    examples = tuple(
        replace(ex, target=index[mapping[dataset.label_names[ex.target]]])  # type: ignore[index]
        for ex in dataset.examples
        if ex.target is not None
    )
    dropped = len(dataset) - len(examples)
    if dropped:
        logger.info("dropped %d unlabeled examples from '%s'", dropped, dataset.name)
    return dataset.edit(examples=examples, label_names=tuple(names))


def parse_label_map(entries: Iterable[str]) -> dict[str, str]:
    """Turn ["contradiction=neutral", ...] into a mapping."""
    mapping: dict[str, str] = {}
    for entry in entries:
        if "=" not in entry:
            raise InputError(f"label mapping '{entry}' must look like 'old=new'")
        old, new = (s.strip() for s in entry.split("=", 1))
        mapping[old] = new
    return mapping
