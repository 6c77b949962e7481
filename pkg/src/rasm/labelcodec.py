"""Token vocabularies and fixed-length, right-to-left label vectors."""
from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from rasm.errors import CorruptLabelError, InvalidParameterError, OverlongLabelError

UNK = "[UNK]"
MAX_LABEL_LEN = 70


def load_display_map(path=None) -> dict[str, str]:
    """Parse a ``latin<TAB>arabic`` table; ``None`` loads the shipped one.

    Lines starting with ``#`` and blank lines are ignored. The value is taken
    verbatim after the first tab, so a single space is a valid mapping.
    """
    if path is None:
        text = resources.files("rasm.data").joinpath("arabic_map.tsv").read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    table = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        if "\t" not in line:
            raise InvalidParameterError(f"display map line {lineno}: missing tab separator")
        latin, arabic = line.split("\t", 1)
        table[latin] = arabic
    return table


@dataclass(frozen=True)
class Vocabulary:
    """Bijection between label tokens and class ids ``0..size-1``.

    ``[UNK]`` always holds id 0; the remaining tokens follow in sorted order.
    """

    tokens: tuple[str, ...]
    display_map: Mapping[str, str] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if len(set(self.tokens)) != len(self.tokens):
            raise InvalidParameterError("vocabulary tokens must be distinct")
        if self.tokens.count(UNK) != 1:
            raise InvalidParameterError("vocabulary must contain [UNK] exactly once")
        object.__setattr__(self, "_index", {t: i for i, t in enumerate(self.tokens)})

    @property
    def size(self) -> int:
        return len(self.tokens)

    @property
    def unk_id(self) -> int:
        return self._index[UNK]

    @property
    def pad_id(self) -> int:
        # size is the CTC blank, so the pad sits one above every class id
        return self.size + 1

    @property
    def blank_id(self) -> int:
        return self.size

    @property
    def num_classes(self) -> int:
        """Network output width: every token plus the CTC blank."""
        return self.size + 1

    def token_to_id(self, token: str) -> int:
        return self._index.get(token, self._index[UNK])

    def id_to_token(self, idx: int) -> str:
        return self.tokens[idx]

    def ids(self, tokens: Iterable[str]) -> list[int]:
        return [self.token_to_id(t) for t in tokens]


def build_vocabulary(transcripts: Iterable[Sequence[str]], display_map=None) -> Vocabulary:
    """Collect the distinct tokens of ``transcripts`` into a vocabulary."""
    transcripts = list(transcripts)
    if not transcripts:
        raise InvalidParameterError("cannot build a vocabulary from no transcripts")
    support = {t for seq in transcripts for t in seq}
    support.discard(UNK)
    return Vocabulary((UNK, *sorted(support)), dict(display_map or {}))


@dataclass(frozen=True)
class LabelSequence:
    ids: np.ndarray
    true_length: int

    def __len__(self):
        return len(self.ids)


def pad_and_reverse(ids: Sequence[int], max_len: int, pad_id: int) -> np.ndarray:
    """Right-pad ``ids`` to ``max_len`` and reverse the whole vector."""
    if len(ids) > max_len:
        raise OverlongLabelError(f"label of length {len(ids)} exceeds maximum {max_len}")
    out = np.full(max_len, pad_id, dtype=np.int64)
    out[: len(ids)] = ids
    return out[::-1].copy()


def encode(tokens: Sequence[str], vocab: Vocabulary, max_len: int = MAX_LABEL_LEN) -> LabelSequence:
    """Map tokens to ids, pad to ``max_len`` and store right-to-left.

    The result has leading pads and the ids in reversed order at the tail,
    which is the left-to-right visual order of Arabic script.
    """
    return LabelSequence(pad_and_reverse(vocab.ids(tokens), max_len, vocab.pad_id), len(tokens))


def decode(label, vocab: Vocabulary) -> list[str]:
    ids = label.ids if isinstance(label, LabelSequence) else np.asarray(label)
    out = []
    for idx in ids[::-1]:
        idx = int(idx)
        if idx == vocab.pad_id:
            continue
        if not 0 <= idx < vocab.size:
            raise CorruptLabelError(f"id {idx} is neither pad ({vocab.pad_id}) nor a class id")
        out.append(vocab.id_to_token(idx))
    return out


def visual_ids(label: LabelSequence) -> np.ndarray:
    """The non-pad tail of a label vector: the CTC target in visual order."""
    return np.asarray(label.ids[len(label.ids) - label.true_length:], dtype=np.int64)


def to_display(tokens: Sequence[str], vocab: Vocabulary) -> str:
    table = vocab.display_map
    return "".join(table.get(t, t) for t in tokens)
