"""Parsers for model output.

Two grammars: the single-line vector grammar ("A=0, B=1, ..., X=0") and the
per-theme single-answer grammar ("A=[1]"). Strict mode demands exactly the
canonical form; lenient mode scans prose, since models sometimes wrap the
classification line in chatter. Parsers return outcomes, never raise on
arbitrary input.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass
from typing import Mapping

from .codebook import Codebook, LabelVector

FAILURE_REASONS = (
    "missing-code",
    "duplicate-code",
    "non-binary-value",
    "no-line-found",
    "extra-prose-strict",
)

PARSE_MODES = ("strict", "lenient")

_ASSIGN_RE = re.compile(r"([A-Za-z]+)\s*=\s*(\[[^\]\n]*\]|[^\s,]*)")
_TRAILING_PUNCT = ".,;:!?"


@dataclass(frozen=True)
class ParseFailure:
    reason: str
    detail: str

    def __post_init__(self) -> None:
        assert self.reason in FAILURE_REASONS, self.reason


@dataclass(frozen=True)
class ParseOutcome:
    """Either a total LabelVector or a ParseFailure, never both."""

    vector: LabelVector | None = None
    failure: ParseFailure | None = None

    def __post_init__(self) -> None:
        assert (self.vector is None) != (self.failure is None)

    @property
    def ok(self) -> bool:
        return self.vector is not None

    @classmethod
    def success(cls, vector: LabelVector) -> "ParseOutcome":
        return cls(vector=vector)

    @classmethod
    def fail(cls, reason: str, detail: str) -> "ParseOutcome":
        return cls(failure=ParseFailure(reason=reason, detail=detail))


def _normalize_value(token: str) -> str | None:
    """Reduce a value token to '0'/'1', tolerating brackets and trailing
    sentence punctuation; None when not binary."""
    t = token.strip().rstrip(_TRAILING_PUNCT)
    if t.startswith("[") and t.endswith("]"):
        t = t[1:-1].strip()
        t = t.rstrip(_TRAILING_PUNCT)
    return t if t in ("0", "1") else None


def _known_assignments(line: str, alphabet: tuple[str, ...]) -> list[tuple[str, str]]:
    known = set(alphabet)
    return [(c, v) for c, v in _ASSIGN_RE.findall(line) if c in known]


def _canonical_re(alphabet: tuple[str, ...]) -> re.Pattern:
    return re.compile("^" + ", ".join(f"{re.escape(c)}=[01]" for c in alphabet) + "$")


def _vector_from_assignments(
    assignments: list[tuple[str, str]], alphabet: tuple[str, ...]
) -> ParseOutcome:
    values: dict[str, int] = {}
    for code, tok in assignments:
        norm = _normalize_value(tok)
        if norm is None:
            return ParseOutcome.fail(
                "non-binary-value", f"code {code} has value {tok!r}"
            )
        values[code] = int(norm)
    return ParseOutcome.success(
        LabelVector(codes=alphabet, values=tuple(values[c] for c in alphabet))
    )


def parse_single_line(text: str, cb: Codebook, mode: str = "lenient") -> ParseOutcome:
    """Parse a full classification line over the codebook alphabet.

    Strict: the entire payload must be exactly one canonical line, modulo
    surrounding whitespace. Lenient: scan lines top to bottom and accept the
    first containing an assignment for every code exactly once; comma
    without space is tolerated. Values other than 0/1 fail either way.
    """
    alphabet = cb.alphabet
    if mode == "strict":
        return _parse_line_strict(text, alphabet)
    if mode != "lenient":
        raise ValueError(f"unknown parse mode {mode!r}")

    best_partial: tuple[int, list[str]] | None = None
    duplicate_detail: str | None = None
    for line in text.splitlines():
        assignments = _known_assignments(line, alphabet)
        if not assignments:
            continue
        counts = Counter(c for c, _ in assignments)
        if set(counts) == set(alphabet):
            dupes = sorted(c for c, n in counts.items() if n > 1)
            if dupes:
                if duplicate_detail is None:
                    duplicate_detail = f"code(s) assigned more than once: {', '.join(dupes)}"
                continue
            return _vector_from_assignments(assignments, alphabet)
        missing = [c for c in alphabet if c not in counts]
        if best_partial is None or len(missing) < len(best_partial[1]):
            best_partial = (len(counts), missing)
    if duplicate_detail is not None:
        return ParseOutcome.fail("duplicate-code", duplicate_detail)
    if best_partial is not None:
        return ParseOutcome.fail(
            "missing-code", f"no line assigns code(s): {', '.join(best_partial[1])}"
        )
    return ParseOutcome.fail("no-line-found", "no classification assignments found")


def _parse_line_strict(text: str, alphabet: tuple[str, ...]) -> ParseOutcome:
    stripped = text.strip()
    if not stripped:
        return ParseOutcome.fail("no-line-found", "empty payload")
    lines = stripped.splitlines()
    if len(lines) != 1:
        return ParseOutcome.fail(
            "extra-prose-strict", f"expected one line, payload has {len(lines)}"
        )
    line = lines[0]
    if _canonical_re(alphabet).match(line):
        return _vector_from_assignments(_known_assignments(line, alphabet), alphabet)
    # diagnose the deviation
    assignments = _known_assignments(line, alphabet)
    if not assignments:
        return ParseOutcome.fail("no-line-found", "no classification assignments found")
    counts = Counter(c for c, _ in assignments)
    dupes = sorted(c for c, n in counts.items() if n > 1)
    if dupes:
        return ParseOutcome.fail(
            "duplicate-code", f"code(s) assigned more than once: {', '.join(dupes)}"
        )
    missing = [c for c in alphabet if c not in counts]
    if missing:
        return ParseOutcome.fail("missing-code", f"line missing code(s): {', '.join(missing)}")
    for code, tok in assignments:
        if _normalize_value(tok) is None:
            return ParseOutcome.fail("non-binary-value", f"code {code} has value {tok!r}")
    return ParseOutcome.fail(
        "extra-prose-strict", "line deviates from the canonical format"
    )


def parse_single_answer(text: str, code: str, mode: str = "lenient") -> ParseOutcome:
    """Parse one per-theme answer ("A=1", "A=[0]", ...) for the target code.

    Returns an outcome over the one-code alphabet (code,). Lenient scans
    prose for the assignment; strict requires the payload to be exactly the
    assignment.
    """
    target_re = re.compile(
        rf"(?<![A-Za-z0-9_]){re.escape(code)}\s*=\s*(\[[^\]\n]*\]|[^\s,]*)"
    )
    matches = [m.group(1) for m in target_re.finditer(text)]
    if mode == "strict":
        stripped = text.strip()
        m = target_re.fullmatch(stripped)
        if m is None:
            if matches:
                return ParseOutcome.fail(
                    "extra-prose-strict",
                    f"payload is not exactly one {code}= assignment",
                )
            return ParseOutcome.fail("no-line-found", f"no assignment for code {code}")
        raw = m.group(1)
        if raw not in ("0", "1", "[0]", "[1]"):
            if _normalize_value(raw) is None:
                return ParseOutcome.fail(
                    "non-binary-value", f"code {code} has value {raw!r}"
                )
            return ParseOutcome.fail(
                "extra-prose-strict", f"value {raw!r} deviates from the answer format"
            )
        return ParseOutcome.success(
            LabelVector(codes=(code,), values=(int(_normalize_value(raw)),))
        )
    if mode != "lenient":
        raise ValueError(f"unknown parse mode {mode!r}")
    if not matches:
        return ParseOutcome.fail("no-line-found", f"no assignment for code {code}")
    if len(matches) > 1:
        return ParseOutcome.fail(
            "duplicate-code", f"code {code} assigned {len(matches)} times"
        )
    value = _normalize_value(matches[0])
    if value is None:
        return ParseOutcome.fail(
            "non-binary-value", f"code {code} has value {matches[0]!r}"
        )
    return ParseOutcome.success(LabelVector(codes=(code,), values=(int(value),)))


def assemble_per_theme(outcomes: Mapping[str, ParseOutcome], cb: Codebook) -> ParseOutcome:
    """Merge per-code outcomes into one total vector.

    Any failed code fails the merge; the failure names every failed code.
    """
    alphabet = cb.alphabet
    missing = [c for c in alphabet if c not in outcomes]
    if missing:
        return ParseOutcome.fail(
            "missing-code", f"no outcome supplied for code(s): {', '.join(missing)}"
        )
    failed = [(c, outcomes[c].failure) for c in alphabet if not outcomes[c].ok]
    if failed:
        detail = "; ".join(f"{c}: {f.reason} ({f.detail})" for c, f in failed)
        return ParseOutcome.fail(failed[0][1].reason, f"failed code(s): {detail}")
    values = tuple(outcomes[c].vector[c] for c in alphabet)
    return ParseOutcome.success(LabelVector(codes=alphabet, values=values))
