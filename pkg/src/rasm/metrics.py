"""Edit distance and the error / recognition rates built on it."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

from rasm.errors import UndefinedRateError


def levenshtein(a: Sequence, b: Sequence) -> int:
    """Unit-cost insert/delete/substitute distance, two-row DP table."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        cur = [i]
        for j, y in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y)))
        prev = cur
    return prev[-1]


def cer(reference: Sequence, hypothesis: Sequence) -> float:
    if len(reference) == 0:
        raise UndefinedRateError("character error rate needs a non-empty reference")
    return levenshtein(reference, hypothesis) / len(reference)


def wer(reference: str, hypothesis: str) -> float:
    ref = reference.split()
    if not ref:
        raise UndefinedRateError("word error rate needs at least one reference word")
    return levenshtein(ref, hypothesis.split()) / len(ref)


@dataclass(frozen=True)
class EvalResult:
    cer: float
    wer: float
    exact_match: float
    samples: int

    @property
    def char_recognition_rate(self) -> float:
        return max(0.0, 1.0 - self.cer)

    @property
    def word_recognition_rate(self) -> float:
        return max(0.0, 1.0 - self.wer)

    def as_dict(self) -> dict:
        return {
            "samples": self.samples,
            "cer": self.cer,
            "wer": self.wer,
            "char_recognition_rate": self.char_recognition_rate,
            "word_recognition_rate": self.word_recognition_rate,
            "exact_match": self.exact_match,
        }

    def report(self) -> str:
        return "\n".join([
            f"samples                 {self.samples}",
            f"character error rate    {self.cer:.4f}",
            f"word error rate         {self.wer:.4f}",
            f"char recognition rate   {self.char_recognition_rate:.2%}",
            f"word recognition rate   {self.word_recognition_rate:.2%}",
            f"exact line matches      {self.exact_match:.2%}",
        ])


def evaluate(pairs: Iterable[tuple[str, str]]) -> EvalResult:
    """Corpus-pooled rates over ``(reference, hypothesis)`` text pairs.

    Character distances are taken over the characters of each string and word
    distances over whitespace-separated words; both are summed over the
    corpus before dividing by the summed reference length.
    """
    pairs = list(pairs)
    if not pairs:
        raise UndefinedRateError("cannot evaluate an empty corpus")
    char_err = char_len = word_err = word_len = exact = 0
    for ref, hyp in pairs:
        if len(ref) == 0:
            raise UndefinedRateError("every reference must be non-empty")
        char_err += levenshtein(ref, hyp)
        char_len += len(ref)
        words = ref.split()
        word_err += levenshtein(words, hyp.split())
        word_len += len(words)
        exact += ref == hyp
    wer_value = word_err / word_len if word_len else float(word_err > 0)
    return EvalResult(char_err / char_len, wer_value, exact / len(pairs), len(pairs))
