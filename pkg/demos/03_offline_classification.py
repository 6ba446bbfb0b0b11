"""End-to-end offline run: ingest a corpus, classify it, inspect the artifacts.

Uses the mock-rules backend, a deterministic keyword scorer that stands in
for a remote model. No network, no credentials; the whole run lives in a
temporary directory and the flow is exactly what `themecoder ingest` and
`themecoder classify` execute.
"""

import json
import tempfile
from pathlib import Path

import yaml

from themecoder.pipeline import cmd_classify, cmd_ingest, load_config

FIXTURES = Path(__file__).resolve().parents[1] / "tests" / "fixtures"


def write_cfg(path: Path, corpus_path: Path, out_dir: Path, rule: str | None = None) -> Path:
    corpus: dict = {"path": str(corpus_path)}
    if rule is not None:
        corpus["rule"] = rule
    path.write_text(
        yaml.safe_dump(
            {
                "run": {"dataset": "demo", "output_dir": str(out_dir)},
                "corpus": corpus,
                "backend": {"kind": "mock-rules", "model": "mock"},
            },
            sort_keys=True,
        ),
        encoding="utf-8",
    )
    return path


def main() -> None:
    with tempfile.TemporaryDirectory() as tmp:
        tmp_dir = Path(tmp)
        out_dir = tmp_dir / "run"

        # stage one: filter and clean the raw corpus
        ingest_cfg = load_config(
            write_cfg(tmp_dir / "ingest.yaml", FIXTURES / "posts_50.jsonl", out_dir,
                      rule="xylazine AND wound"),
            offline=True,
        )
        print("== ingest ==")
        summary = cmd_ingest(ingest_cfg)
        cleaned = out_dir / "corpora" / summary["outputs"]["cleaned"]

        # stage two: classify the cleaned corpus the ingest stage wrote
        cfg = load_config(write_cfg(tmp_dir / "classify.yaml", cleaned, out_dir), offline=True)
        print(f"\nrun label: {cfg.label}")
        print("\n== classify ==")
        stores = cmd_classify(cfg)
        store = stores[0]

        print("\nfirst two result records:")
        for rec in store.records[:2]:
            print(json.dumps(rec, sort_keys=True))

        manifest = json.loads((out_dir / "manifest.json").read_text(encoding="utf-8"))
        print("\nmanifest hashes (inputs are content-addressed):")
        for name, digest in manifest["hashes"].items():
            print(f"  {name}: {str(digest)[:16]}")

        ledger = [
            json.loads(line)
            for line in (out_dir / "ledger.jsonl").read_text(encoding="utf-8").splitlines()
        ]
        events = [e["event"] for e in ledger]
        print(f"\nledger: {len(ledger)} events ({events[0]} .. {events[-1]})")

        # a second classify against the same directory must be explicit
        print("\n== re-run protection ==")
        try:
            cmd_classify(cfg)
        except Exception as exc:
            print(f"refused: {exc}")
        print("resuming instead:")
        cmd_classify(cfg, resume=True)

        baseline = (out_dir / "results.jsonl").read_bytes()

        # a fresh run in a different directory produces byte-identical results
        print("\n== determinism check ==")
        rerun_dir = tmp_dir / "rerun"
        cfg2 = load_config(
            write_cfg(tmp_dir / "classify2.yaml", cleaned, rerun_dir), offline=True
        )
        cmd_classify(cfg2)
        rerun = (rerun_dir / "results.jsonl").read_bytes()
        print(f"fresh run byte-identical to first run: {rerun == baseline}")


if __name__ == "__main__":
    main()
