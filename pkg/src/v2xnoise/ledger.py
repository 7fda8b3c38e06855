"""Corruption ledger: writing, reading and replay verification."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .config import RunConfig
from .dataset_io import _write_bytes, file_digest, read_manifest, validate_document
from .errors import ParseError, VerificationError


def write_ledger(ledger: dict, path) -> None:
    validate_document(ledger, "ledger", path)
    # sorted keys and fixed separators keep the file byte-stable across runs
    text = json.dumps(ledger, indent=1, sort_keys=True, allow_nan=False)
    _write_bytes(path, (text + "\n").encode("utf-8"))


def read_ledger(path) -> dict:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", path, f"line {exc.lineno}") from None
    validate_document(doc, "ledger", path)
    return doc


@dataclass
class VerificationReport:
    divergences: list = field(default_factory=list)
    files_checked: int = 0
    records_checked: int = 0

    @property
    def ok(self) -> bool:
        return not self.divergences

    def raise_if_failed(self):
        if self.divergences:
            raise VerificationError(f"{len(self.divergences)} divergence(s)", self.divergences)


def _key_str(rec):
    return f"{rec['agent']}/{rec['sensor']}@{rec['frame']}:{rec['noise_kind']}"


def verify_ledger(ledger, output_root, seed: Optional[int] = None, workers: int = 1) -> VerificationReport:
    """Recompute output digests and re-derive every sampled parameter.

    ``seed`` overrides the ledger's root seed, which is how a replay under a
    different seed shows up as parameter divergences.
    """
    from .pipeline import record_key, rederive_records

    out = Path(output_root)
    if not isinstance(ledger, dict):
        ledger = read_ledger(ledger)
    report = VerificationReport()

    for entry in ledger["files"]:
        p = out / entry["path"]
        report.files_checked += 1
        if not p.is_file():
            report.divergences.append({"kind": "missing_file", "path": entry["path"]})
        elif file_digest(p) != entry["output_sha256"]:
            report.divergences.append({"kind": "digest", "path": entry["path"]})

    seed = ledger["root_seed"] if seed is None else int(seed)
    config = RunConfig.from_document(ledger["config"])
    manifest = read_manifest(out / ledger["manifest"])
    fresh = {record_key(r): r for r in rederive_records(manifest, config, seed, workers)}
    stored = {record_key(r): r for r in ledger["records"]}
    for key in sorted(set(fresh) | set(stored), key=str):
        a, b = stored.get(key), fresh.get(key)
        report.records_checked += 1
        if a is None:
            report.divergences.append({"kind": "missing_record", "record": _key_str(b)})
        elif b is None:
            report.divergences.append({"kind": "unexpected_record", "record": _key_str(a)})
        else:
            bad = sorted(n for n in set(a["params"]) | set(b["params"]) if a["params"].get(n) != b["params"].get(n))
            if a.get("pairing") != b.get("pairing"):
                bad.append("pairing")
            if a.get("stream") != b.get("stream"):
                bad.append("stream")
            if bad:
                report.divergences.append({"kind": "params", "record": _key_str(a), "fields": bad})
    return report
