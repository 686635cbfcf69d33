"""Sample loading and HTML preprocessing.

A sample on disk is a URL file plus a raw HTML file. Preprocessing turns it
into the ``(url, cleaned_html, visible_text)`` triple consumed by every
detection method.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from bs4 import BeautifulSoup, Doctype, Tag

from .labels import Assessment, parse_gold_label

logger = logging.getLogger(__name__)

URL_FILENAME = "url.txt"
HTML_FILENAME = "html.txt"
MANIFEST_FILENAME = "manifest.json"
LABEL_DIRS = {"phishing": Assessment.PHISHING, "legitimate": Assessment.LEGITIMATE}

_REMOVED_TAGS = ("style", "noscript", "script")
_WS = re.compile(r"\s+")


class SampleLoadError(OSError):
    """A sample file could not be read (distinct from an empty sample)."""


class DatasetError(Exception):
    """The dataset root or manifest is unusable."""


@dataclass(frozen=True)
class RawSample:
    id: str
    url_text: str
    raw_html: str


@dataclass(frozen=True)
class Skip:
    reason: str


@dataclass(frozen=True)
class ProcessedSample:
    id: str
    url: str
    cleaned_html: str
    visible_text: str
    label: Assessment | None = None

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "url": self.url,
            "cleaned_html": self.cleaned_html,
            "visible_text": self.visible_text,
            "label": self.label.value if self.label else None,
        }


@dataclass(frozen=True)
class ManifestEntry:
    id: str
    url_file: Path
    html_file: Path
    label: Assessment | None


@dataclass
class DatasetManifest:
    root_path: Path
    entries: list[ManifestEntry] = field(default_factory=list)

    @classmethod
    def from_directory(cls, root: str | Path) -> "DatasetManifest":
        """Build a manifest from ``root``.

        ``root/manifest.json`` takes precedence when present. Otherwise every
        ``root/<label>/<name>/`` directory holding the URL and HTML files
        becomes an entry with id ``<label>/<name>``.
        """
        root = Path(root)
        if not root.is_dir():
            raise DatasetError(f"dataset root does not exist: {root}")
        manifest_file = root / MANIFEST_FILENAME
        if manifest_file.is_file():
            return cls.from_json(manifest_file)
        entries = []
        for label_name, label in LABEL_DIRS.items():
            label_dir = root / label_name
            if not label_dir.is_dir():
                continue
            for sample_dir in sorted(p for p in label_dir.iterdir() if p.is_dir()):
                entries.append(
                    ManifestEntry(
                        id=f"{label_name}/{sample_dir.name}",
                        url_file=sample_dir / URL_FILENAME,
                        html_file=sample_dir / HTML_FILENAME,
                        label=label,
                    )
                )
        return cls(root, entries)

    @classmethod
    def from_json(cls, path: str | Path) -> "DatasetManifest":
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise DatasetError(f"unreadable manifest {path}: {exc}") from exc
        if not isinstance(data, list):
            raise DatasetError("manifest must be a JSON list of entries")
        root = path.parent
        entries = []
        seen = set()
        for item in data:
            try:
                sample_id = str(item["id"])
                label = item.get("label")
                entry = ManifestEntry(
                    id=sample_id,
                    url_file=root / item["url_file"],
                    html_file=root / item["html_file"],
                    label=parse_gold_label(label) if label is not None else None,
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise DatasetError(f"bad manifest entry {item!r}: {exc}") from exc
            if sample_id in seen:
                raise DatasetError(f"duplicate sample id in manifest: {sample_id}")
            seen.add(sample_id)
            entries.append(entry)
        return cls(root, entries)


@dataclass
class SkipReport:
    skipped: list[tuple[str, str]] = field(default_factory=list)

    def add(self, sample_id: str, reason: str) -> None:
        self.skipped.append((sample_id, reason))

    def __len__(self) -> int:
        return len(self.skipped)

    def to_list(self) -> list[dict]:
        return [{"id": i, "reason": r} for i, r in self.skipped]


def _read_text(path: Path) -> str:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise SampleLoadError(f"cannot read {path}: {exc}") from exc
    return data.decode("utf-8", errors="replace")


def load_raw_sample(url_file, html_file, sample_id: str | None = None) -> RawSample | Skip:
    url_text = _read_text(url_file).strip()
    raw_html = _read_text(html_file)
    if not url_text:
        return Skip("empty URL file")
    if not raw_html.strip():
        return Skip("empty HTML file")
    return RawSample(id=sample_id or Path(url_file).parent.name, url_text=url_text, raw_html=raw_html)


def _is_stylesheet_link(tag) -> bool:
    if tag.name != "link":
        return False
    rel = tag.get("rel") or []
    if isinstance(rel, str):
        rel = rel.split()
    return any(r.lower() == "stylesheet" for r in rel)


def clean_html(raw_html: str) -> str:
    """Strip style, noscript, stylesheet links and scripts (element and contents)."""
    soup = BeautifulSoup(raw_html, "html.parser")
    for tag in soup.find_all(_REMOVED_TAGS):
        tag.decompose()
    for tag in soup.find_all(_is_stylesheet_link):
        tag.decompose()
    return "".join(_serialize(node) for node in soup.contents)


def _serialize(node) -> str:
    # bs4 appends a newline to doctypes; keep the source spacing instead.
    if isinstance(node, Doctype):
        return f"<!DOCTYPE {node}>"
    if isinstance(node, Tag):
        return node.decode()
    return node.output_ready()


def normalize_whitespace(text: str) -> str:
    return _WS.sub(" ", text).strip()


def extract_visible_text(cleaned_html: str) -> str:
    if not cleaned_html:
        return ""
    soup = BeautifulSoup(cleaned_html, "html.parser")
    return normalize_whitespace(soup.get_text(" "))


def preprocess(raw: RawSample, label: Assessment | None = None) -> ProcessedSample | Skip:
    cleaned = clean_html(raw.raw_html)
    if not cleaned.strip():
        return Skip("HTML empty after cleaning")
    return ProcessedSample(
        id=raw.id,
        url=raw.url_text,
        cleaned_html=cleaned,
        visible_text=extract_visible_text(cleaned),
        label=label,
    )


def load_sample(url_file, html_file, sample_id: str | None = None, label=None) -> ProcessedSample | Skip:
    raw = load_raw_sample(url_file, html_file, sample_id)
    if isinstance(raw, Skip):
        return raw
    return preprocess(raw, label)


def load_dataset(manifest: DatasetManifest) -> tuple[list[ProcessedSample], SkipReport]:
    """Preprocess every loadable entry, sorted by id; failures go to the report."""
    if not Path(manifest.root_path).is_dir():
        raise DatasetError(f"dataset root does not exist: {manifest.root_path}")
    samples: list[ProcessedSample] = []
    report = SkipReport()
    for entry in sorted(manifest.entries, key=lambda e: e.id):
        try:
            result = load_sample(entry.url_file, entry.html_file, entry.id, entry.label)
        except SampleLoadError as exc:
            report.add(entry.id, str(exc))
            continue
        if isinstance(result, Skip):
            report.add(entry.id, result.reason)
        else:
            samples.append(result)
    if report:
        logger.info("skipped %d of %d samples", len(report), len(manifest.entries))
    return samples, report


def load_dataset_dir(root: str | Path) -> tuple[list[ProcessedSample], SkipReport]:
    return load_dataset(DatasetManifest.from_directory(root))


def label_counts(samples: Iterable[ProcessedSample]) -> dict[Assessment, int]:
    counts = {Assessment.PHISHING: 0, Assessment.LEGITIMATE: 0}
    for s in samples:
        if s.label is not None:
            counts[s.label] += 1
    return counts
