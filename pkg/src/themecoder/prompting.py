"""Prompt rendering under the three template generations.

v1-per-theme asks one theme per prompt (one render per code), v2 asks all
themes as numbered questions in one prompt, v3 (the default) demands one
strict classification line. Templates are versioned text assets with
``{{placeholder}}`` slots and can be overridden by path; rendering is a
pure function of its arguments.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .codebook import Codebook, Exemplar, LabelVector
from .corpus import Post
from .errors import ConfigError, DataError

TEMPLATE_VERSIONS = ("v1-per-theme", "v2-multi-question", "v3-single-line")
DEFAULT_TEMPLATE_VERSION = "v3-single-line"
DEFAULT_EXEMPLAR_BUDGET = 1500

_TEMPLATE_DIR = Path(__file__).parent / "data" / "templates"
_TEMPLATE_FILES = {
    "v1-per-theme": "v1_per_theme.txt",
    "v2-multi-question": "v2_multi_question.txt",
    "v3-single-line": "v3_single_line.txt",
}
_REQUIRED_SLOTS = {
    "v1-per-theme": ("{{post}}", "{{theme_name}}", "{{theme_definition}}", "{{code}}"),
    "v2-multi-question": ("{{post}}", "{{questions}}"),
    "v3-single-line": ("{{post}}", "{{format_line}}", "{{categories}}"),
}


@dataclass(frozen=True)
class ShotPolicy:
    """How many worked exemplars to embed, and which ones.

    ``selection`` gives explicit indices into the codebook exemplar pool;
    when None, selection is seed-driven at render time.
    """

    shots: int = 0
    selection: tuple[int, ...] | None = None

    def __post_init__(self) -> None:
        if self.shots < 0:
            raise ConfigError(f"shots must be >= 0, got {self.shots}")
        if self.selection is not None:
            object.__setattr__(self, "selection", tuple(self.selection))
            if len(self.selection) != self.shots:
                raise ConfigError(
                    f"exemplar selection has {len(self.selection)} indices "
                    f"but shots={self.shots}"
                )


@dataclass(frozen=True)
class PromptTemplate:
    version: str
    scaffold: str

    def __post_init__(self) -> None:
        if self.version not in TEMPLATE_VERSIONS:
            raise ConfigError(
                f"unknown template version {self.version!r}; "
                f"known: {', '.join(TEMPLATE_VERSIONS)}"
            )
        for slot in _REQUIRED_SLOTS[self.version]:
            if slot not in self.scaffold:
                raise ConfigError(
                    f"template {self.version} scaffold is missing slot {slot}"
                )
        if self.version == "v3-single-line" and "strictly in the format" not in self.scaffold:
            raise ConfigError("v3 scaffold must carry the strict format directive")


@dataclass(frozen=True)
class RenderedPrompt:
    """One ready-to-send prompt. ``target`` is the code(s) the response
    must assign: a single code for v1, the full alphabet otherwise."""

    text: str
    template_version: str
    shots: int
    target: tuple[str, ...]
    post_id: str
    post_text: str = ""

    def format_reminder(self) -> str:
        """One-line format reminder appended on a re-ask."""
        if len(self.target) == 1:
            code = self.target[0]
            return (
                f'Reminder: answer with exactly "{code}=[0]" or "{code}=[1]" '
                "and nothing else."
            )
        line = ", ".join(f"{c}=_" for c in self.target)
        return (
            "Reminder: reply with exactly one line, strictly in the format: "
            f"{line}"
        )


def load_template(version: str = DEFAULT_TEMPLATE_VERSION, path: str | Path | None = None) -> PromptTemplate:
    """Load a shipped template by version, or an override scaffold from path."""
    if path is not None:
        scaffold = Path(path).read_text(encoding="utf-8")
    else:
        try:
            filename = _TEMPLATE_FILES[version]
        except KeyError:
            raise ConfigError(
                f"unknown template version {version!r}; known: {', '.join(TEMPLATE_VERSIONS)}"
            ) from None
        scaffold = (_TEMPLATE_DIR / filename).read_text(encoding="utf-8")
    return PromptTemplate(version=version, scaffold=scaffold)


def canonical_line(v: LabelVector, cb: Codebook) -> str:
    """Render a vector as the canonical classification line.

    Canonical order comes from the codebook, terms are comma-space
    separated, and there is no trailing punctuation.
    """
    missing = [c for c in cb.alphabet if c not in v.codes]
    if missing:
        raise DataError(f"vector is missing code(s) {', '.join(missing)}")
    return ", ".join(f"{c}={v[c]}" for c in cb.alphabet)


def select_exemplars(cb: Codebook, policy: ShotPolicy, seed: int = 0) -> tuple[Exemplar, ...]:
    """Pick ``policy.shots`` exemplars from the codebook pool.

    Explicit indices win; otherwise a seeded uniform draw without
    replacement, in draw order. Deterministic either way.
    """
    if policy.shots == 0:
        return ()
    pool = cb.exemplars
    if len(pool) < policy.shots:
        raise ConfigError(
            f"shot policy wants {policy.shots} exemplars but the codebook has {len(pool)}"
        )
    if policy.selection is not None:
        bad = [i for i in policy.selection if not 0 <= i < len(pool)]
        if bad:
            raise ConfigError(
                f"exemplar index {bad[0]} out of range (pool has {len(pool)})"
            )
        return tuple(pool[i] for i in policy.selection)
    rng = np.random.default_rng(seed)
    indices = rng.choice(len(pool), size=policy.shots, replace=False)
    return tuple(pool[int(i)] for i in indices)


def _truncate(text: str, budget: int) -> str:
    if len(text) <= budget:
        return text
    return text[:budget] + " [truncated]"


def _payload(post: Post, include_title: bool) -> str:
    if not post.body.strip():
        raise DataError(f"post {post.id!r} has an empty body")
    if include_title and post.title.strip():
        return f"{post.title}\n\n{post.body}"
    return post.body


def _examples_section(
    exemplars: tuple[Exemplar, ...], cb: Codebook, budget: int
) -> str:
    if not exemplars:
        return ""
    parts = ["\n\nExamples:\n"]
    for i, ex in enumerate(exemplars, start=1):
        line = canonical_line(ex.vector(cb.alphabet), cb)
        parts.append(
            f'\n{i}. Post:\n"{_truncate(ex.text, budget)}"\n\nClassification:\n{line}\n'
        )
    return "".join(parts).rstrip("\n")


def _v1_examples_section(
    exemplars: tuple[Exemplar, ...], code: str, cb: Codebook, budget: int
) -> str:
    # per-theme prompts show only the target code's answer for each exemplar
    if not exemplars:
        return ""
    parts = ["\n\nExamples:\n"]
    for i, ex in enumerate(exemplars, start=1):
        value = ex.vector(cb.alphabet)[code]
        parts.append(
            f'\n{i}. Post:\n"{_truncate(ex.text, budget)}"\n\nAnswer:\n{code}=[{value}]\n'
        )
    return "".join(parts).rstrip("\n")


def render_prompt(
    post: Post,
    cb: Codebook,
    tpl: PromptTemplate,
    policy: ShotPolicy,
    seed: int = 0,
    include_title: bool = False,
    exemplar_budget: int = DEFAULT_EXEMPLAR_BUDGET,
):
    """Render the prompt(s) for one post.

    Returns one RenderedPrompt for v2/v3, or a list with one per code for
    v1-per-theme. Identical inputs produce byte-identical text.
    """
    exemplars = select_exemplars(cb, policy, seed)
    payload = _payload(post, include_title)
    alphabet = cb.alphabet

    if tpl.version == "v1-per-theme":
        prompts = []
        for theme in cb.themes:
            text = (
                tpl.scaffold.replace("{{theme_name}}", theme.name)
                .replace("{{theme_definition}}", theme.definition)
                .replace("{{code}}", theme.code)
                .replace(
                    "{{examples_section}}",
                    _v1_examples_section(exemplars, theme.code, cb, exemplar_budget),
                )
                .replace("{{post}}", payload)
            )
            prompts.append(
                RenderedPrompt(
                    text=text,
                    template_version=tpl.version,
                    shots=policy.shots,
                    target=(theme.code,),
                    post_id=post.id,
                    post_text=payload,
                )
            )
        return prompts

    if tpl.version == "v2-multi-question":
        questions = "\n\n".join(
            f'{i}. {t.name}: {t.definition}. Format: "{t.code}=[answer]".'
            for i, t in enumerate(cb.themes, start=1)
        )
        text = (
            tpl.scaffold.replace("{{questions}}", questions)
            .replace("{{examples_section}}", _examples_section(exemplars, cb, exemplar_budget))
            .replace("{{post}}", payload)
        )
    else:  # v3-single-line
        categories = "\n\n".join(f"{t.code}. {t.name}\n{t.definition}" for t in cb.themes)
        format_line = ", ".join(f"{c}=_" for c in alphabet)
        text = (
            tpl.scaffold.replace("{{n_topics}}", str(len(alphabet)))
            .replace("{{first_code}}", alphabet[0])
            .replace("{{last_code}}", alphabet[-1])
            .replace("{{format_line}}", format_line)
            .replace("{{categories}}", categories)
            .replace("{{examples_section}}", _examples_section(exemplars, cb, exemplar_budget))
            .replace("{{post}}", payload)
        )
    return RenderedPrompt(
        text=text,
        template_version=tpl.version,
        shots=policy.shots,
        target=alphabet,
        post_id=post.id,
        post_text=payload,
    )
