"""ASVspoof-style protocol files and tab-separated utterance manifests."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .errors import ParseError

KEYS = ("bonafide", "spoof")


@dataclass(frozen=True)
class ProtocolEntry:
    speaker_id: str
    utt_id: str
    system_id: str
    key: str

    @property
    def label(self):
        """1 for bona fide, 0 for spoof."""
        return int(self.key == "bonafide")


def parse_protocol(path):
    """Parse ``SPK UTT - SYS KEY`` lines, preserving file order."""
    path = Path(path)
    entries, seen = [], set()
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            cols = line.split()
            if not cols:
                continue
            if len(cols) != 5:
                raise ParseError(path, lineno, f"expected 5 columns, got {len(cols)}")
            spk, utt, _, sys_id, key = cols
            if key not in KEYS:
                raise ParseError(path, lineno, f"unknown key {key!r}, expected one of {KEYS}")
            if utt in seen:
                raise ParseError(path, lineno, f"duplicate utt_id {utt!r}")
            seen.add(utt)
            entries.append(ProtocolEntry(spk, utt, sys_id, key))
    return entries


def write_protocol(path, entries):
    with open(path, "w", encoding="utf-8") as f:
        for e in entries:
            f.write(f"{e.speaker_id} {e.utt_id} - {e.system_id} {e.key}\n")


@dataclass
class ManifestEntry:
    utt_id: str
    path: Path
    label: str  # "bonafide" | "spoof"
    corruption: dict | None = None

    @property
    def target(self):
        return int(self.label == "bonafide")


def read_manifest(path):
    """Read ``utt_id<TAB>path<TAB>label[<TAB>corruption_json]`` lines.

    Relative paths are resolved against the manifest's directory.
    """
    path = Path(path)
    root = path.parent
    entries, seen = [], set()
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            cols = line.split("\t")
            if len(cols) not in (3, 4):
                raise ParseError(path, lineno, f"expected 3 or 4 tab-separated columns, got {len(cols)}")
            utt, rel, label = cols[:3]
            if label not in KEYS:
                raise ParseError(path, lineno, f"unknown label {label!r}")
            if utt in seen:
                raise ParseError(path, lineno, f"duplicate utt_id {utt!r}")
            seen.add(utt)
            corruption = None
            if len(cols) == 4:
                try:
                    corruption = json.loads(cols[3])
                except json.JSONDecodeError as exc:
                    raise ParseError(path, lineno, f"bad corruption json: {exc}") from None
            p = Path(rel)
            entries.append(ManifestEntry(utt, p if p.is_absolute() else root / p, label, corruption))
    return entries


def write_manifest(path, entries, relative_to=None):
    path = Path(path)
    base = Path(relative_to) if relative_to is not None else path.parent
    with open(path, "w", encoding="utf-8") as f:
        for e in entries:
            try:
                rel = Path(e.path).resolve().relative_to(base.resolve())
            except ValueError:
                rel = Path(e.path).resolve()
            cols = [e.utt_id, rel.as_posix(), e.label]
            if e.corruption is not None:
                cols.append(json.dumps(e.corruption, sort_keys=True, separators=(",", ":")))
            f.write("\t".join(cols) + "\n")


def manifest_from_protocol(protocol, audio_dir, suffix=".wav"):
    audio_dir = Path(audio_dir)
    return [ManifestEntry(e.utt_id, audio_dir / f"{e.utt_id}{suffix}", e.key) for e in protocol]
