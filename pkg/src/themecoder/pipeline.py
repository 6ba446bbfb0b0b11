"""Run orchestration: config files, manifests, result stores, commands.

A run lives in one output directory owned by one process at a time:
``manifest.json`` (write-once), ``ledger.jsonl`` (append-only status
events), ``results*.jsonl`` (append-only classification records),
``cache*.jsonl`` (response cache), ``audit.jsonl`` (backend log), and
``reports/`` (evaluation output). Stores and reports contain no
timestamps or latencies, so a rerun of the same manifest against a
deterministic backend reproduces them byte for byte.
"""

from __future__ import annotations

import csv
import json
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from hashlib import sha256
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import yaml

from .backends import (
    AuditLog,
    BackendConfig,
    ClassificationFailure,
    ResponseCache,
    RetryPolicy,
    classify_with_retry,
    make_backend,
)
from .codebook import Codebook, LabelVector, load_codebook, load_gold
from .corpus import (
    Corpus,
    SamplingSpec,
    dedup_clean,
    keyword_filter,
    load_keywords,
    load_posts,
    parse_timestamp,
    sample_random,
    temporal_split,
    write_posts,
)
from .errors import BackendError, ConfigError, DataError, ThemecoderError
from .evaluation import (
    FAILURE_POLICIES,
    METRIC_NAMES,
    MetricSet,
    ModelRanking,
    avg_rank,
    evaluate_predictions,
    run_stats,
    theme_distribution,
)
from .parsing import PARSE_MODES, ParseOutcome, assemble_per_theme, parse_single_answer, parse_single_line
from .prompting import (
    DEFAULT_EXEMPLAR_BUDGET,
    DEFAULT_TEMPLATE_VERSION,
    ShotPolicy,
    load_template,
    render_prompt,
)

try:
    from importlib.metadata import PackageNotFoundError, version

    TOOL_VERSION = version("themecoder")
except PackageNotFoundError:  # running from a source tree
    TOOL_VERSION = "0.0.0-dev"


def _sha256_file(path: Path) -> str:
    return sha256(path.read_bytes()).hexdigest()


def _sha256_text(text: str) -> str:
    return sha256(text.encode("utf-8")).hexdigest()


def _utcnow() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


# --- configuration ------------------------------------------------------------

_SECTION_KEYS = {
    "run": {"label", "dataset", "output_dir", "repeats"},
    "corpus": {"path", "format", "keywords", "rule", "split_at", "sample"},
    "codebook": {"path"},
    "gold": {"path"},
    "prompting": {
        "template_version",
        "template_path",
        "shots",
        "selection",
        "exemplar_seed",
        "include_title",
        "exemplar_budget",
    },
    "parsing": {"mode"},
    "backend": {
        "kind",
        "model",
        "endpoint",
        "temperature",
        "max_output_tokens",
        "credential_env",
        "timeout",
        "replay_path",
        "in_flight_limit",
        "requests_per_second",
    },
    "retry": {
        "max_attempts",
        "reask_on_parse_failure",
        "backoff_initial",
        "backoff_multiplier",
        "backoff_cap",
        "transport_retries",
    },
    "evaluation": {
        "aggregation",
        "failure_policy",
        "bootstrap_resamples",
        "bootstrap_seed",
        "bootstrap_metrics",
    },
}
_SAMPLE_KEYS = {"n", "seed", "from"}


@dataclass(frozen=True)
class RunConfig:
    """One run's full configuration with every seed made explicit."""

    label: str
    dataset: str
    output_dir: Path
    repeats: int
    corpus_path: Path
    corpus_format: str
    keywords_path: Path | None
    filter_rule: str | None
    split_at: str | None
    sample_n: int | None
    sample_seed: int
    sample_from: str
    codebook_path: Path | None
    gold_path: Path | None
    template_version: str
    template_path: Path | None
    shots: int
    selection: tuple[int, ...] | None
    exemplar_seed: int
    include_title: bool
    exemplar_budget: int
    parse_mode: str
    backend: BackendConfig
    retry: RetryPolicy
    aggregation: str
    failure_policy: str
    bootstrap_resamples: int
    bootstrap_seed: int
    bootstrap_metrics: tuple[str, ...]

    def to_dict(self) -> dict:
        """JSON-safe mirror, frozen into the manifest."""
        out = {
            "label": self.label,
            "dataset": self.dataset,
            "output_dir": str(self.output_dir),
            "repeats": self.repeats,
            "corpus_path": str(self.corpus_path),
            "corpus_format": self.corpus_format,
            "keywords_path": str(self.keywords_path) if self.keywords_path else None,
            "filter_rule": self.filter_rule,
            "split_at": self.split_at,
            "sample_n": self.sample_n,
            "sample_seed": self.sample_seed,
            "sample_from": self.sample_from,
            "codebook_path": str(self.codebook_path) if self.codebook_path else None,
            "gold_path": str(self.gold_path) if self.gold_path else None,
            "template_version": self.template_version,
            "template_path": str(self.template_path) if self.template_path else None,
            "shots": self.shots,
            "selection": list(self.selection) if self.selection is not None else None,
            "exemplar_seed": self.exemplar_seed,
            "include_title": self.include_title,
            "exemplar_budget": self.exemplar_budget,
            "parse_mode": self.parse_mode,
            "backend": {
                "kind": self.backend.kind,
                "model": self.backend.model,
                "endpoint": self.backend.endpoint,
                "temperature": self.backend.temperature,
                "max_output_tokens": self.backend.max_output_tokens,
                "credential_env": self.backend.credential_env,
                "timeout": self.backend.timeout,
                "replay_path": self.backend.replay_path,
                "in_flight_limit": self.backend.in_flight_limit,
                "requests_per_second": self.backend.requests_per_second,
            },
            "retry": {
                "max_attempts": self.retry.max_attempts,
                "reask_on_parse_failure": self.retry.reask_on_parse_failure,
                "backoff_initial": self.retry.backoff_initial,
                "backoff_multiplier": self.retry.backoff_multiplier,
                "backoff_cap": self.retry.backoff_cap,
                "transport_retries": self.retry.transport_retries,
            },
            "aggregation": self.aggregation,
            "failure_policy": self.failure_policy,
            "bootstrap_resamples": self.bootstrap_resamples,
            "bootstrap_seed": self.bootstrap_seed,
            "bootstrap_metrics": list(self.bootstrap_metrics),
        }
        return out


def _check_keys(section: str, raw: Mapping, allowed: set[str]) -> None:
    unknown = sorted(set(raw) - allowed)
    if unknown:
        raise ConfigError(
            f"config section {section!r} has unknown key(s): {', '.join(unknown)}"
        )


def _existing_path(value, what: str) -> Path:
    p = Path(value)
    if not p.exists():
        raise ConfigError(f"{what} does not exist: {p}")
    return p


def load_config(
    path: str | Path,
    *,
    overrides: Mapping[str, int] | None = None,
    offline: bool = False,
) -> RunConfig:
    """Load and validate a run config file.

    Every seed is defaulted here, never downstream, so the manifest's
    frozen config always shows the exact values used. ``overrides`` may
    carry sample_seed / exemplar_seed / bootstrap_seed replacements;
    ``offline`` forbids remote backend kinds.
    """
    p = Path(path)
    try:
        raw = yaml.safe_load(p.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {p}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"config file {p} is not valid YAML: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"config file {p} must contain a mapping")
    unknown = sorted(set(raw) - set(_SECTION_KEYS))
    if unknown:
        raise ConfigError(f"config file {p} has unknown section(s): {', '.join(unknown)}")

    sections = {name: raw.get(name) or {} for name in _SECTION_KEYS}
    for name, body in sections.items():
        if not isinstance(body, dict):
            raise ConfigError(f"config section {name!r} must be a mapping")
        _check_keys(name, body, _SECTION_KEYS[name])

    run = sections["run"]
    corpus = sections["corpus"]
    if "path" not in corpus:
        raise ConfigError("config requires corpus.path")
    if "output_dir" not in run:
        raise ConfigError("config requires run.output_dir")
    corpus_path = _existing_path(corpus["path"], "corpus path")

    sample = corpus.get("sample") or {}
    if not isinstance(sample, dict):
        raise ConfigError("corpus.sample must be a mapping")
    _check_keys("corpus.sample", sample, _SAMPLE_KEYS)
    sample_n = int(sample["n"]) if "n" in sample else None
    sample_seed = int(sample.get("seed", 0))
    sample_from = str(sample.get("from", "pre"))
    if sample_from not in ("pre", "post"):
        raise ConfigError(f"corpus.sample.from must be 'pre' or 'post', got {sample_from!r}")

    split_at = corpus.get("split_at")
    if split_at is not None:
        split_at = str(split_at)
        try:
            parse_timestamp(split_at)
        except (ThemecoderError, ValueError) as exc:
            raise ConfigError(f"corpus.split_at is not a timestamp: {exc}") from exc

    keywords_path = (
        _existing_path(corpus["keywords"], "keyword set path")
        if corpus.get("keywords")
        else None
    )
    codebook_path = (
        _existing_path(sections["codebook"]["path"], "codebook path")
        if sections["codebook"].get("path")
        else None
    )
    gold_path = (
        _existing_path(sections["gold"]["path"], "gold path")
        if sections["gold"].get("path")
        else None
    )

    prompting = sections["prompting"]
    template_version = str(prompting.get("template_version", DEFAULT_TEMPLATE_VERSION))
    template_path = (
        _existing_path(prompting["template_path"], "template path")
        if prompting.get("template_path")
        else None
    )
    shots = int(prompting.get("shots", 0))
    selection = prompting.get("selection")
    if selection is not None:
        selection = tuple(int(i) for i in selection)
    exemplar_seed = int(prompting.get("exemplar_seed", 0))

    parse_mode = str(sections["parsing"].get("mode", "lenient"))
    if parse_mode not in PARSE_MODES:
        raise ConfigError(f"unknown parsing mode {parse_mode!r}; known: {', '.join(PARSE_MODES)}")

    backend_raw = dict(sections["backend"])
    if "kind" not in backend_raw:
        raise ConfigError("config requires backend.kind")
    if offline and backend_raw["kind"] == "remote-chat":
        raise ConfigError("remote backends are forbidden in offline mode")
    backend = BackendConfig(**backend_raw)
    if backend.kind == "replay":
        _existing_path(backend.replay_path, "replay script path")
    retry = RetryPolicy(**sections["retry"]) if sections["retry"] else RetryPolicy()

    evaluation = sections["evaluation"]
    aggregation = str(evaluation.get("aggregation", "micro"))
    failure_policy = str(evaluation.get("failure_policy", "exclude-and-report"))
    if failure_policy not in FAILURE_POLICIES:
        raise ConfigError(
            f"unknown failure_policy {failure_policy!r}; known: {', '.join(FAILURE_POLICIES)}"
        )
    bootstrap_metrics = tuple(str(m) for m in evaluation.get("bootstrap_metrics", ()))
    for m in bootstrap_metrics:
        if m not in METRIC_NAMES:
            raise ConfigError(f"unknown bootstrap metric {m!r}; known: {', '.join(METRIC_NAMES)}")
    bootstrap_seed = int(evaluation.get("bootstrap_seed", 0))

    ov = dict(overrides or {})
    unknown_ov = sorted(set(ov) - {"sample_seed", "exemplar_seed", "bootstrap_seed"})
    if unknown_ov:
        raise ConfigError(f"unknown seed override(s): {', '.join(unknown_ov)}")
    sample_seed = int(ov.get("sample_seed", sample_seed))
    exemplar_seed = int(ov.get("exemplar_seed", exemplar_seed))
    bootstrap_seed = int(ov.get("bootstrap_seed", bootstrap_seed))

    dataset = str(run.get("dataset", corpus_path.stem))
    model_part = backend.model or backend.kind
    label = str(run.get("label", f"{dataset}_{shots}shot_{model_part}"))
    # repeat runs only make sense against a nondeterministic backend
    default_repeats = 1 if (backend.temperature == 0 or backend.kind != "remote-chat") else 3
    repeats = int(run.get("repeats", default_repeats))
    if repeats < 1:
        raise ConfigError(f"run.repeats must be >= 1, got {repeats}")

    return RunConfig(
        label=label,
        dataset=dataset,
        output_dir=Path(run["output_dir"]),
        repeats=repeats,
        corpus_path=corpus_path,
        corpus_format=str(corpus.get("format", "post-lines")),
        keywords_path=keywords_path,
        filter_rule=str(corpus["rule"]) if corpus.get("rule") else None,
        split_at=split_at,
        sample_n=sample_n,
        sample_seed=sample_seed,
        sample_from=sample_from,
        codebook_path=codebook_path,
        gold_path=gold_path,
        template_version=template_version,
        template_path=template_path,
        shots=shots,
        selection=selection,
        exemplar_seed=exemplar_seed,
        include_title=bool(prompting.get("include_title", False)),
        exemplar_budget=int(prompting.get("exemplar_budget", DEFAULT_EXEMPLAR_BUDGET)),
        parse_mode=parse_mode,
        backend=backend,
        retry=retry,
        aggregation=aggregation,
        failure_policy=failure_policy,
        bootstrap_resamples=int(evaluation.get("bootstrap_resamples", 2000)),
        bootstrap_seed=bootstrap_seed,
        bootstrap_metrics=bootstrap_metrics,
    )


# --- manifest, ledger, store, lock --------------------------------------------


def build_manifest(cfg: RunConfig, scaffold: str) -> dict:
    """Frozen config plus content hashes of every input."""
    hashes = {
        "corpus": _sha256_file(cfg.corpus_path),
        "codebook": _sha256_file(cfg.codebook_path) if cfg.codebook_path else None,
        "gold": _sha256_file(cfg.gold_path) if cfg.gold_path else None,
        "keywords": _sha256_file(cfg.keywords_path) if cfg.keywords_path else None,
        "template_scaffold": _sha256_text(scaffold),
    }
    return {
        "config": cfg.to_dict(),
        "hashes": hashes,
        "tool_version": TOOL_VERSION,
        "started_at": _utcnow(),
    }


class RunLedger:
    """Append-only JSON-lines event log; the one mutable run artifact."""

    def __init__(self, path: str | Path) -> None:
        self.path = Path(path)
        self._lock = threading.Lock()

    def append(self, event: dict) -> None:
        event = dict(event)
        event.setdefault("ts", _utcnow())
        with self._lock:
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(event, sort_keys=True, ensure_ascii=False) + "\n")

    def events(self) -> list[dict]:
        if not self.path.exists():
            return []
        return [
            json.loads(line)
            for line in self.path.read_text(encoding="utf-8").splitlines()
            if line.strip()
        ]

    def statuses(self, run_index: int = 1) -> dict[str, str]:
        """post id -> classified|failed for one repeat run."""
        out: dict[str, str] = {}
        for ev in self.events():
            if ev.get("event") == "post" and ev.get("run_index", 1) == run_index:
                out[ev["post_id"]] = ev["status"]
        return out


class ResultsStore:
    """Append-only classification records, one line per (post, label).

    Records carry no timestamps, latencies, or cache flags, so two runs of
    the same manifest against a deterministic backend produce identical
    bytes.
    """

    def __init__(self, path: str | Path) -> None:
        self.path = Path(path)
        self._lock = threading.Lock()
        self.records: list[dict] = []
        self._keys: set[tuple[str, str]] = set()
        if self.path.exists():
            for line in self.path.read_text(encoding="utf-8").splitlines():
                if not line.strip():
                    continue
                rec = json.loads(line)
                self._remember(rec)

    def _remember(self, rec: dict) -> None:
        key = (rec["post_id"], rec["label"])
        if key in self._keys:
            raise DataError(
                f"results store {self.path} has two records for post {key[0]!r} "
                f"under label {key[1]!r}"
            )
        self._keys.add(key)
        self.records.append(rec)

    def __len__(self) -> int:
        return len(self.records)

    def keys(self) -> set[tuple[str, str]]:
        return set(self._keys)

    def append(self, rec: dict) -> None:
        with self._lock:
            self._remember(rec)
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(rec, sort_keys=True, ensure_ascii=False) + "\n")

    def labels(self) -> tuple[str, ...]:
        return tuple(sorted({r["label"] for r in self.records}))

    def classified_vectors(self, alphabet: Sequence[str], label: str | None = None) -> dict[str, LabelVector]:
        out: dict[str, LabelVector] = {}
        for rec in self.records:
            if rec["status"] != "classified":
                continue
            if label is not None and rec["label"] != label:
                continue
            values = tuple(int(rec["vector"][code]) for code in alphabet)
            out[rec["post_id"]] = LabelVector(codes=tuple(alphabet), values=values)
        return out

    def failed_ids(self, label: str | None = None) -> tuple[str, ...]:
        return tuple(
            sorted(
                rec["post_id"]
                for rec in self.records
                if rec["status"] == "failed" and (label is None or rec["label"] == label)
            )
        )


class RunLock:
    """One process per run directory, enforced with an exclusive lock file."""

    def __init__(self, run_dir: Path) -> None:
        self.path = Path(run_dir) / ".lock"

    def __enter__(self) -> "RunLock":
        self.path.parent.mkdir(parents=True, exist_ok=True)
        try:
            with self.path.open("x", encoding="utf-8") as fh:
                fh.write(f"{_utcnow()}\n")
        except FileExistsError:
            raise ConfigError(
                f"run directory is locked by another process; remove {self.path} if stale"
            ) from None
        return self

    def __exit__(self, *exc) -> None:
        self.path.unlink(missing_ok=True)


# --- commands -----------------------------------------------------------------


def _stage(name: str, fn, *args, **kwargs):
    """Run one ingest stage, prefixing errors with the stage name."""
    try:
        return fn(*args, **kwargs)
    except ThemecoderError as exc:
        raise type(exc)(f"stage {name}: {exc}") from exc


def cmd_ingest(cfg: RunConfig) -> dict:
    """Load, filter, clean, optionally split and sample; write each stage.

    Returns the stage-count summary and prints it as one line.
    """
    out_dir = cfg.output_dir / "corpora"
    out_dir.mkdir(parents=True, exist_ok=True)
    summary: dict = {"loaded": 0}
    outputs: dict[str, str] = {}

    corpus = _stage("load", load_posts, cfg.corpus_path, cfg.corpus_format)
    summary["loaded"] = len(corpus)

    if cfg.filter_rule:
        keywords = _stage("keywords", load_keywords, cfg.keywords_path)
        corpus = _stage("keyword_filter", keyword_filter, corpus, keywords, cfg.filter_rule)
        summary["filtered"] = len(corpus)
        outputs["filtered"] = f"{corpus.name}_filtered.jsonl"
        write_posts(corpus, out_dir / outputs["filtered"])

    clean = _stage("dedup_clean", dedup_clean, corpus)
    corpus = clean.corpus
    summary["cleaned"] = len(corpus)
    summary["removed"] = dict(clean.removed)
    outputs["cleaned"] = f"{corpus.name}_clean.jsonl"
    write_posts(corpus, out_dir / outputs["cleaned"])

    if cfg.split_at is not None:
        pre, post = _stage("temporal_split", temporal_split, corpus, parse_timestamp(cfg.split_at))
        summary["split_pre"] = len(pre)
        summary["split_post"] = len(post)
        outputs["split_pre"] = f"{pre.name}.jsonl"
        outputs["split_post"] = f"{post.name}.jsonl"
        write_posts(pre, out_dir / outputs["split_pre"])
        write_posts(post, out_dir / outputs["split_post"])
        corpus = pre if cfg.sample_from == "pre" else post

    if cfg.sample_n is not None:
        spec = SamplingSpec(target_n=cfg.sample_n, seed=cfg.sample_seed)
        corpus = _stage("sample_random", sample_random, corpus, spec)
        summary["sampled"] = len(corpus)
        outputs["sampled"] = f"{corpus.name}_sampled.jsonl"
        write_posts(corpus, out_dir / outputs["sampled"])

    summary["outputs"] = outputs
    (cfg.output_dir / "ingest_summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True, ensure_ascii=False) + "\n",
        encoding="utf-8",
    )
    parts = [f"{k}={summary[k]}" for k in ("loaded", "filtered", "cleaned", "sampled") if k in summary]
    print(", ".join(parts))
    return summary


def _classify_one(post, cb: Codebook, tpl, shot, cfg: RunConfig, backend, policy, cache, audit) -> dict:
    """Render and classify one post; returns its store record."""
    rendered = render_prompt(
        post,
        cb,
        tpl,
        shot,
        seed=cfg.exemplar_seed,
        include_title=cfg.include_title,
        exemplar_budget=cfg.exemplar_budget,
    )
    if isinstance(rendered, list):  # one prompt per theme
        outcomes: dict[str, ParseOutcome] = {}
        attempts = 0
        fingerprints = []
        for rp in rendered:
            code = rp.target[0]
            result, cres = classify_with_retry(
                cfg.backend,
                policy,
                rp,
                lambda text, c=code: parse_single_answer(text, c, cfg.parse_mode),
                backend=backend,
                cache=cache,
                audit=audit,
            )
            attempts += cres.attempts
            fingerprints.append(cres.fingerprint)
            if isinstance(result, ClassificationFailure):
                raw, failure = result.attempts[-1]
                outcomes[code] = ParseOutcome.fail(failure.reason, failure.detail)
            else:
                outcomes[code] = ParseOutcome.success(result)
        merged = assemble_per_theme(outcomes, cb)
        fingerprint = _sha256_text("\n".join(fingerprints))
        if merged.ok:
            return {
                "post_id": post.id,
                "label": cfg.label,
                "status": "classified",
                "vector": merged.vector.as_dict(),
                "attempts": attempts,
                "template_version": tpl.version,
                "backend_kind": cfg.backend.kind,
                "fingerprint": fingerprint,
            }
        return {
            "post_id": post.id,
            "label": cfg.label,
            "status": "failed",
            "failures": [{"reason": merged.failure.reason, "detail": merged.failure.detail}],
            "attempts": attempts,
            "template_version": tpl.version,
            "backend_kind": cfg.backend.kind,
            "fingerprint": fingerprint,
        }

    result, cres = classify_with_retry(
        cfg.backend,
        policy,
        rendered,
        lambda text: parse_single_line(text, cb, cfg.parse_mode),
        backend=backend,
        cache=cache,
        audit=audit,
    )
    if isinstance(result, ClassificationFailure):
        return {
            "post_id": post.id,
            "label": cfg.label,
            "status": "failed",
            "failures": [
                {"reason": f.reason, "detail": f.detail} for _, f in result.attempts
            ],
            "attempts": cres.attempts,
            "template_version": tpl.version,
            "backend_kind": cfg.backend.kind,
            "fingerprint": cres.fingerprint,
        }
    return {
        "post_id": post.id,
        "label": cfg.label,
        "status": "classified",
        "vector": result.as_dict(),
        "attempts": cres.attempts,
        "template_version": tpl.version,
        "backend_kind": cfg.backend.kind,
        "fingerprint": cres.fingerprint,
    }


def cmd_classify(cfg: RunConfig, *, resume: bool = False) -> list[ResultsStore]:
    """Classify every corpus post against the configured backend.

    Fan-out is bounded by the backend's in-flight limit; records commit in
    corpus order regardless of completion order. With resume, posts already
    recorded are skipped and the manifest must match the original.
    """
    run_dir = cfg.output_dir
    run_dir.mkdir(parents=True, exist_ok=True)
    corpus = load_posts(cfg.corpus_path, cfg.corpus_format)
    cb = load_codebook(cfg.codebook_path)
    tpl = load_template(cfg.template_version, cfg.template_path)
    shot = ShotPolicy(shots=cfg.shots, selection=cfg.selection)
    manifest = build_manifest(cfg, tpl.scaffold)

    with RunLock(run_dir):
        manifest_path = run_dir / "manifest.json"
        if manifest_path.exists():
            existing = json.loads(manifest_path.read_text(encoding="utf-8"))
            if not resume:
                raise ConfigError(
                    f"{manifest_path} already exists; pass resume to continue that run"
                )
            if existing.get("config") != manifest["config"] or existing.get("hashes") != manifest["hashes"]:
                raise ConfigError(
                    "resume refused: config or input hashes differ from the original manifest"
                )
        else:
            manifest_path.write_text(
                json.dumps(manifest, indent=2, sort_keys=True, ensure_ascii=False) + "\n",
                encoding="utf-8",
            )

        ledger = RunLedger(run_dir / "ledger.jsonl")
        audit = AuditLog(run_dir / "audit.jsonl")
        stores: list[ResultsStore] = []
        for r in range(1, cfg.repeats + 1):
            suffix = "" if cfg.repeats == 1 else f"_r{r}"
            store = ResultsStore(run_dir / f"results{suffix}.jsonl")
            if len(store) and not resume:
                raise ConfigError(
                    f"{store.path} already has records; pass resume to continue"
                )
            cache = ResponseCache(run_dir / f"cache{suffix}.jsonl")
            done = {pid for pid, lbl in store.keys() if lbl == cfg.label}
            pending = [p for p in corpus.posts if p.id not in done]
            ledger.append(
                {"event": "start", "run_index": r, "total": len(corpus), "pending": len(pending)}
            )
            backend = make_backend(cfg.backend, retry=cfg.retry, audit=audit)
            classified = failed = 0
            try:
                with ThreadPoolExecutor(max_workers=cfg.backend.in_flight_limit) as pool:
                    futures = [
                        pool.submit(
                            _classify_one, p, cb, tpl, shot, cfg, backend, cfg.retry, cache, audit
                        )
                        for p in pending
                    ]
                    for post, fut in zip(pending, futures):
                        rec = fut.result()  # backend errors abort here, ledger intact
                        store.append(rec)
                        ledger.append(
                            {
                                "event": "post",
                                "run_index": r,
                                "post_id": post.id,
                                "status": rec["status"],
                            }
                        )
                        if rec["status"] == "classified":
                            classified += 1
                        else:
                            failed += 1
            except BackendError:
                ledger.append({"event": "abort", "run_index": r})
                raise
            totals = {"classified": 0, "failed": 0}
            for rec in store.records:
                if rec["label"] == cfg.label:
                    totals[rec["status"]] += 1
            ledger.append({"event": "end", "run_index": r, **totals})
            print(
                f"run {r}/{cfg.repeats}: classified={totals['classified']}, "
                f"failed={totals['failed']}, total={len(corpus)}"
            )
            stores.append(store)
        return stores


def _load_metrics_table(path: str | Path) -> list[tuple[str, MetricSet]]:
    """Read a delimited metrics table: label plus the four metric columns."""
    p = Path(path)
    try:
        with p.open(encoding="utf-8", newline="") as fh:
            reader = csv.DictReader(fh)
            fields = reader.fieldnames or []
            for col in ("label", *METRIC_NAMES):
                if col not in fields:
                    raise DataError(f"metrics table {p}: missing column {col!r}")
            rows = []
            for lineno, row in enumerate(reader, start=2):
                try:
                    mset = MetricSet(
                        precision=float(row["precision"]),
                        recall=float(row["recall"]),
                        f1=float(row["f1"]),
                        accuracy=float(row["accuracy"]),
                        aggregation="micro",
                        n_decisions=0,
                    )
                except ValueError as exc:
                    raise DataError(f"metrics table {p} row {lineno}: {exc}") from exc
                rows.append((row["label"], mset))
    except FileNotFoundError:
        raise DataError(f"metrics table not found: {p}") from None
    if not rows:
        raise DataError(f"metrics table {p} has no rows")
    return rows


def _write_ranking(ranking: ModelRanking, out_dir: Path) -> tuple[Path, Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    json_path = out_dir / "ranking.json"
    payload = [
        {
            "label": row.label,
            "avg_rank": row.avg_rank,
            "ranks": dict(row.ranks),
            "precision": row.metrics.precision,
            "recall": row.metrics.recall,
            "f1": row.metrics.f1,
            "accuracy": row.metrics.accuracy,
        }
        for row in ranking.rows
    ]
    json_path.write_text(
        json.dumps(payload, indent=2, sort_keys=True, ensure_ascii=False) + "\n",
        encoding="utf-8",
    )
    csv_path = out_dir / "ranking.csv"
    with csv_path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["label", *METRIC_NAMES, *(f"rank_{m}" for m in METRIC_NAMES), "avg_rank"]
        )
        for row in ranking.rows:
            writer.writerow(
                [
                    row.label,
                    *(f"{row.metrics.value(m):.6f}" for m in METRIC_NAMES),
                    *(f"{row.ranks[m]:g}" for m in METRIC_NAMES),
                    f"{row.avg_rank:.3f}",
                ]
            )
    return json_path, csv_path


def _print_ranking(ranking: ModelRanking) -> None:
    for row in ranking.rows:
        print(f"{row.avg_rank:>7.3f}  {row.label}")


def cmd_evaluate(
    cfg: RunConfig,
    *,
    store_paths: Sequence[str | Path] | None = None,
    metrics_table: str | Path | None = None,
):
    """Score stored predictions against gold, or rank an external metrics table.

    Store mode writes one report per model-prompt label plus a ranking when
    two or more labels are present; metrics-table mode skips scoring and
    ranks the supplied rows directly.
    """
    reports_dir = cfg.output_dir / "reports"
    if metrics_table is not None:
        ranking = avg_rank(_load_metrics_table(metrics_table))
        _write_ranking(ranking, reports_dir)
        _print_ranking(ranking)
        return ranking

    corpus = load_posts(cfg.corpus_path, cfg.corpus_format)
    cb = load_codebook(cfg.codebook_path)
    if cfg.gold_path is None:
        raise ConfigError("evaluation requires gold.path in the config")
    gold = load_gold(cfg.gold_path, corpus, cb)

    if store_paths:
        paths = [Path(s) for s in store_paths]
    else:
        paths = sorted(cfg.output_dir.glob("results*.jsonl"))
    if not paths:
        raise DataError(f"no results stores found under {cfg.output_dir}")
    stores = [ResultsStore(p) for p in paths]

    by_label: dict[str, list[tuple[dict[str, LabelVector], tuple[str, ...]]]] = {}
    for store in stores:
        for label in store.labels():
            vectors = store.classified_vectors(cb.alphabet, label)
            failed = store.failed_ids(label)
            evaluated_ids = set(vectors) | set(failed)
            missing = sorted(evaluated_ids - set(gold.vectors))
            if missing:
                raise DataError(
                    f"gold does not cover {len(missing)} evaluated post(s): "
                    + ", ".join(missing[:20])
                )
            by_label.setdefault(label, []).append((vectors, failed))

    reports = {}
    headline_rows: list[tuple[str, MetricSet]] = []
    for label in sorted(by_label):
        runs = by_label[label]
        per_run_reports = []
        for vectors, failed in runs:
            gold_subset = {pid: gold.vectors[pid] for pid in set(vectors) | set(failed)}
            per_run_reports.append(
                evaluate_predictions(
                    gold_subset,
                    vectors,
                    cb,
                    failed_ids=failed,
                    failure_policy=cfg.failure_policy,
                    label=label,
                    bootstrap_metrics=cfg.bootstrap_metrics,
                    bootstrap_resamples=cfg.bootstrap_resamples,
                    bootstrap_seed=cfg.bootstrap_seed,
                )
            )
        report = per_run_reports[0]
        if len(per_run_reports) > 1:
            report.stats = run_stats([r.micro for r in per_run_reports])
        report.write(reports_dir / label)
        reports[label] = report
        headline_rows.append((label, report.micro))
        m = report.micro
        banner = f", failures={report.n_failures} ({cfg.failure_policy})" if report.n_failures else ""
        print(
            f"{label}: P={m.precision:.3f}, R={m.recall:.3f}, F1={m.f1:.3f}, "
            f"Acc={m.accuracy:.3f}, n_posts={report.n_posts}{banner}"
        )

    if len(headline_rows) >= 2:
        ranking = avg_rank(headline_rows)
        _write_ranking(ranking, reports_dir)
        _print_ranking(ranking)
    return reports


def cmd_distribute(cfg: RunConfig, *, store_path: str | Path | None = None, top_k: int = 5) -> dict:
    """Theme distribution over all classified posts; no gold required."""
    cb = load_codebook(cfg.codebook_path)
    path = Path(store_path) if store_path is not None else cfg.output_dir / "results.jsonl"
    if not path.exists():
        raise DataError(f"results store not found: {path}")
    store = ResultsStore(path)
    vectors = store.classified_vectors(cb.alphabet)
    if not vectors:
        raise DataError(f"results store {path} has no classified posts")
    dist = theme_distribution(vectors, cb)
    ranked = sorted(dist.codes, key=lambda c: (-dist.counts[c], c))
    top = ranked[: max(top_k, 0)]
    payload = {
        "n": dist.n,
        "n_failed": len(store.failed_ids()),
        "counts": dict(dist.counts),
        "percentages": {c: dist.percentage(c) for c in dist.codes},
        "top_themes": top,
    }
    reports_dir = cfg.output_dir / "reports"
    reports_dir.mkdir(parents=True, exist_ok=True)
    (reports_dir / "distribution.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True, ensure_ascii=False) + "\n",
        encoding="utf-8",
    )
    with (reports_dir / "distribution.csv").open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["code", "count", "percentage"])
        for code in dist.codes:
            writer.writerow([code, dist.counts[code], f"{dist.percentage(code):.1f}"])
    for code in top:
        print(f"{code}: {dist.counts[code]} ({dist.percentage(code):.1f}%)")
    return payload


def cmd_rank(metrics_table: str | Path, out_dir: str | Path | None = None) -> ModelRanking:
    """Rank externally supplied metric rows; no model calls involved."""
    ranking = avg_rank(_load_metrics_table(metrics_table))
    if out_dir is not None:
        _write_ranking(ranking, Path(out_dir))
    _print_ranking(ranking)
    return ranking
