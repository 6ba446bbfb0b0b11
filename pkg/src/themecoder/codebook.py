"""Theme taxonomy: codes, definitions, few-shot exemplars, and gold labels.

A codebook is configuration, not code. The shipped default lives in
``data/codebook_default.yaml`` and carries thirteen codes (A through L plus
the null code X); any other alphabet with exactly one null code is legal,
down to a two-code book.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping

import yaml

from .errors import DataError

log = logging.getLogger(__name__)

DEFAULT_CODEBOOK_PATH = Path(__file__).parent / "data" / "codebook_default.yaml"


@dataclass(frozen=True)
class LabelVector:
    """A total binary assignment over a codebook alphabet.

    Immutable and hashable; ``codes`` fixes the canonical order used for
    rendering and parsing.
    """

    codes: tuple[str, ...]
    values: tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.codes) != len(self.values):
            raise DataError(
                f"label vector has {len(self.codes)} codes but {len(self.values)} values"
            )
        if len(set(self.codes)) != len(self.codes):
            raise DataError("label vector codes are not unique")
        bad = [v for v in self.values if v not in (0, 1)]
        if bad:
            raise DataError(f"label vector values must be 0 or 1, got {bad[0]!r}")

    @classmethod
    def from_mapping(
        cls, labels: Mapping[str, int], alphabet: Iterable[str]
    ) -> "LabelVector":
        """Build a vector from a code->value mapping, enforcing totality."""
        codes = tuple(alphabet)
        missing = [c for c in codes if c not in labels]
        if missing:
            raise DataError(f"label vector missing code(s): {', '.join(missing)}")
        unknown = [c for c in labels if c not in codes]
        if unknown:
            raise DataError(f"label vector has unknown code(s): {', '.join(unknown)}")
        return cls(codes=codes, values=tuple(int(labels[c]) for c in codes))

    def __getitem__(self, code: str) -> int:
        try:
            return self.values[self.codes.index(code)]
        except ValueError:
            raise KeyError(code) from None

    def as_dict(self) -> dict[str, int]:
        return dict(zip(self.codes, self.values))

    def positives(self) -> tuple[str, ...]:
        return tuple(c for c, v in zip(self.codes, self.values) if v == 1)


@dataclass(frozen=True)
class Exemplar:
    """One worked example: a post text plus its full label assignment.

    ``labels`` is kept as loaded so an incomplete assignment can exist long
    enough for validate_codebook to name what is missing.
    """

    text: str
    labels: Mapping[str, int]

    def vector(self, alphabet: Iterable[str]) -> LabelVector:
        return LabelVector.from_mapping(self.labels, alphabet)


@dataclass(frozen=True)
class ThemeDef:
    code: str
    name: str
    definition: str
    exemplars: tuple[Exemplar, ...] = ()


@dataclass(frozen=True)
class Codebook:
    """Ordered theme definitions; file order is the canonical order."""

    version: str
    themes: tuple[ThemeDef, ...]
    null_code: str

    @property
    def alphabet(self) -> tuple[str, ...]:
        return tuple(t.code for t in self.themes)

    @property
    def exemplars(self) -> tuple[Exemplar, ...]:
        """The flat exemplar pool: theme order, then file order within theme.

        Shot-policy selection indices refer to positions in this pool.
        """
        pool: list[Exemplar] = []
        for theme in self.themes:
            pool.extend(theme.exemplars)
        return tuple(pool)

    def theme(self, code: str) -> ThemeDef:
        for t in self.themes:
            if t.code == code:
                return t
        raise KeyError(code)

    def vector(self, labels: Mapping[str, int]) -> LabelVector:
        return LabelVector.from_mapping(labels, self.alphabet)

    def to_mapping(self) -> dict:
        return {
            "version": self.version,
            "null_code": self.null_code,
            "themes": [
                {
                    "code": t.code,
                    "name": t.name,
                    "definition": t.definition,
                    **(
                        {
                            "exemplars": [
                                {"text": e.text, "labels": dict(e.labels)}
                                for e in t.exemplars
                            ]
                        }
                        if t.exemplars
                        else {}
                    ),
                }
                for t in self.themes
            ],
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(
            yaml.safe_dump(self.to_mapping(), sort_keys=False, allow_unicode=True),
            encoding="utf-8",
        )


@dataclass(frozen=True)
class GoldLabelSet:
    """Expert label vectors keyed by post id, bound to one corpus."""

    corpus_name: str
    vectors: Mapping[str, LabelVector]
    note: str = ""
    lint_warnings: tuple[str, ...] = ()

    def __len__(self) -> int:
        return len(self.vectors)

    def __getitem__(self, post_id: str) -> LabelVector:
        return self.vectors[post_id]

    def __contains__(self, post_id: str) -> bool:
        return post_id in self.vectors

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(sorted(self.vectors))

    def items(self) -> Iterator[tuple[str, LabelVector]]:
        return iter(sorted(self.vectors.items()))


def lint_null_conflict(vector: LabelVector, null_code: str) -> bool:
    """True when the null code and any substantive code are both positive.

    This is a lint, never an error: the output grammar permits the
    combination and gold data may contain it.
    """
    if null_code not in vector.codes or vector[null_code] != 1:
        return False
    return any(v == 1 for c, v in zip(vector.codes, vector.values) if c != null_code)


def validate_codebook(cb: Codebook) -> list[str]:
    """Return one finding per invariant violation; empty means valid."""
    findings: list[str] = []
    seen: set[str] = set()
    for t in cb.themes:
        if not (len(t.code) == 1 and t.code.isalpha() and t.code.isupper()):
            findings.append(f"code {t.code!r} is not a single uppercase letter")
        if t.code in seen:
            findings.append(f"duplicate code: {t.code}")
        seen.add(t.code)
        if not t.name.strip():
            findings.append(f"code {t.code}: empty name")
        if not t.definition.strip():
            findings.append(f"code {t.code}: missing definition")
    if not cb.themes:
        findings.append("codebook has no themes")
    if cb.null_code not in seen:
        findings.append(f"no null theme: null code {cb.null_code!r} is not in the alphabet")
    alphabet = cb.alphabet
    for i, ex in enumerate(cb.exemplars):
        if not ex.text.strip():
            findings.append(f"exemplar {i}: empty text")
        missing = [c for c in alphabet if c not in ex.labels]
        for c in missing:
            findings.append(f"exemplar {i}: vector missing code {c}")
        for c, v in ex.labels.items():
            if c not in alphabet:
                findings.append(f"exemplar {i}: unknown code {c}")
            elif v not in (0, 1):
                findings.append(f"exemplar {i}: non-binary value {v!r} for code {c}")
    return findings


def load_codebook(path: str | Path | None = None) -> Codebook:
    """Load and validate a codebook file (the shipped default when path is None)."""
    p = Path(path) if path is not None else DEFAULT_CODEBOOK_PATH
    try:
        raw = yaml.safe_load(p.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise DataError(f"codebook file not found: {p}") from None
    except yaml.YAMLError as exc:
        raise DataError(f"codebook file {p} is not valid YAML: {exc}") from exc
    if not isinstance(raw, dict) or "themes" not in raw:
        raise DataError(f"codebook file {p} must be a mapping with a 'themes' list")

    themes: list[ThemeDef] = []
    for i, entry in enumerate(raw["themes"]):
        if not isinstance(entry, dict):
            raise DataError(f"codebook theme entry {i} is not a mapping")
        try:
            code = str(entry["code"])
            name = str(entry["name"])
            definition = str(entry["definition"])
        except KeyError as exc:
            raise DataError(f"codebook theme entry {i} missing field {exc}") from None
        exemplars = tuple(
            Exemplar(text=str(e["text"]), labels=dict(e.get("labels", {})))
            for e in entry.get("exemplars", ())
        )
        themes.append(ThemeDef(code=code, name=name, definition=definition, exemplars=exemplars))

    cb = Codebook(
        version=str(raw.get("version", "unversioned")),
        themes=tuple(themes),
        null_code=str(raw.get("null_code", "X")),
    )
    findings = validate_codebook(cb)
    if findings:
        raise DataError(f"codebook file {p} is invalid: " + "; ".join(findings))
    for i, ex in enumerate(cb.exemplars):
        if lint_null_conflict(ex.vector(cb.alphabet), cb.null_code):
            log.warning("codebook exemplar %d sets the null code alongside a substantive code", i)
    return cb


def load_gold(path: str | Path, corpus, cb: Codebook) -> GoldLabelSet:
    """Load expert labels from a wide delimited table.

    Parameters
    ----------
    path : file with header ``post_id`` followed by one column per code.
    corpus : the Corpus the ids must resolve against.
    cb : codebook supplying the alphabet.

    Returns
    -------
    GoldLabelSet with one total LabelVector per labeled post.
    """
    p = Path(path)
    alphabet = cb.alphabet
    corpus_ids = {post.id for post in corpus.posts}
    vectors: dict[str, LabelVector] = {}
    lint: list[str] = []
    try:
        rows = list(csv.reader(p.open(encoding="utf-8", newline="")))
    except FileNotFoundError:
        raise DataError(f"gold label file not found: {p}") from None
    if not rows:
        raise DataError(f"gold label file {p} is empty")
    header = rows[0]
    if not header or header[0] != "post_id":
        raise DataError(f"gold label file {p}: first column must be 'post_id'")
    code_cols = header[1:]
    missing = [c for c in alphabet if c not in code_cols]
    if missing:
        raise DataError(f"gold label file {p}: missing column for code {', '.join(missing)}")
    unknown = [c for c in code_cols if c not in alphabet]
    if unknown:
        raise DataError(f"gold label file {p}: unknown code column {', '.join(unknown)}")
    if len(set(code_cols)) != len(code_cols):
        raise DataError(f"gold label file {p}: duplicated code column")

    for lineno, row in enumerate(rows[1:], start=2):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) != len(header):
            raise DataError(f"gold label file {p} row {lineno}: expected {len(header)} cells")
        post_id = row[0]
        if post_id in vectors:
            raise DataError(f"gold label file {p} row {lineno}: duplicate post id {post_id!r}")
        if post_id not in corpus_ids:
            raise DataError(
                f"gold label file {p} row {lineno}: unknown post id {post_id!r} "
                f"(not in corpus {corpus.name!r})"
            )
        labels: dict[str, int] = {}
        for code, cell in zip(code_cols, row[1:]):
            cell = cell.strip()
            if cell not in ("0", "1"):
                raise DataError(
                    f"gold label file {p} row {lineno}: non-binary cell {cell!r} for code {code}"
                )
            labels[code] = int(cell)
        vec = LabelVector.from_mapping(labels, alphabet)
        if lint_null_conflict(vec, cb.null_code):
            lint.append(f"post {post_id}: null code {cb.null_code} set alongside a substantive code")
        vectors[post_id] = vec

    log.info("loaded %d gold-labeled posts from %s", len(vectors), p)
    for w in lint:
        log.warning("gold lint: %s", w)
    return GoldLabelSet(
        corpus_name=corpus.name,
        vectors=vectors,
        note=f"{len(vectors)} labeled posts from {p.name}",
        lint_warnings=tuple(lint),
    )
