"""Policy text preprocessing: HTML to plaintext, privacy-link discovery, sentence splitting.

Nothing here touches the network.  Multi-hop link discovery walks a
directory-backed :class:`PageStore` of pages fetched earlier.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from html.parser import HTMLParser
from pathlib import Path
from typing import Literal
from urllib.parse import urldefrag, urljoin

DocKind = Literal["policy_html", "homepage_html", "policy_text"]

PRIVACY_KEYWORDS = ("privacy",)
EXTENDED_KEYWORDS = ("privacy", "notice", "terms", "data protection")


class EmptyDocumentError(ValueError):
    pass


class DocumentKindError(ValueError):
    pass


@dataclass(frozen=True)
class RawDocument:
    app_id: str
    kind: DocKind
    content: bytes
    source_url: str = ""

    def __post_init__(self):
        if self.kind not in ("policy_html", "homepage_html", "policy_text"):
            raise DocumentKindError(f"unknown document kind {self.kind!r}")
        if not self.content:
            raise EmptyDocumentError(f"document for {self.app_id!r} has no bytes")

    def text(self) -> str:
        try:
            return self.content.decode("utf-8")
        except UnicodeDecodeError:
            return self.content.decode("latin-1")


@dataclass
class Sentence:
    index: int
    text: str
    labels: frozenset = frozenset()
    matched_rules: tuple[str, ...] = ()
    tuples: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "text": self.text,
            "labels": sorted(str(label) for label in self.labels),
            "matched_rules": list(self.matched_rules),
            "tuples": [t.to_dict() for t in self.tuples],
        }


@dataclass
class PolicyDocument:
    app_id: str
    sentences: list[Sentence]
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        for i, s in enumerate(self.sentences):
            if s.index != i:
                raise ValueError(f"sentence indices must run 0..n-1; got {s.index} at position {i}")
            if not s.text.strip():
                raise ValueError(f"sentence {i} is empty")

    @property
    def text(self) -> str:
        return " ".join(s.text for s in self.sentences)

    def to_dict(self) -> dict:
        return {
            "app_id": self.app_id,
            "provenance": dict(sorted(self.provenance.items())),
            "sentences": [s.to_dict() for s in self.sentences],
        }


# -- HTML to plaintext --------------------------------------------------------

_SKIP = {"script", "style", "noscript", "template", "nav", "head", "svg", "iframe", "button", "select"}
_BLOCK = {
    "p", "div", "section", "article", "main", "header", "footer", "aside",
    "h1", "h2", "h3", "h4", "h5", "h6", "ul", "ol", "dl", "table", "tr",
    "blockquote", "pre", "form", "hr", "address", "figure", "figcaption",
    "thead", "tbody", "tfoot", "caption", "body", "html",
}
_LINE = {"li", "dt", "dd", "br"}
_CELL = {"td", "th"}
_VOID = {"area", "base", "br", "col", "embed", "hr", "img", "input", "link", "meta", "param", "source", "track", "wbr"}


class _TextExtractor(HTMLParser):
    def __init__(self):
        super().__init__(convert_charrefs=True)
        self.parts: list[str] = []
        self.skip_depth = 0
        self.open: list[str] = []
        self.mismatched = 0
        self.pre_depth = 0

    def handle_starttag(self, tag, attrs):
        if tag not in _VOID:
            self.open.append(tag)
        if tag == "pre":
            self.pre_depth += 1
        if tag in _SKIP:
            self.skip_depth += 1
        elif tag in _BLOCK:
            self.parts.append(_PARA)
        elif tag in _LINE:
            self.parts.append("\n")
        elif tag in _CELL:
            self.parts.append(" ")

    def handle_startendtag(self, tag, attrs):
        if tag in _BLOCK:
            self.parts.append(_PARA)
        elif tag in _LINE:
            self.parts.append("\n")

    def handle_endtag(self, tag):
        if tag in _VOID:
            return
        if tag in self.open:
            # pop implicitly-closed tags too (e.g. unclosed <p> inside <div>)
            while self.open:
                t = self.open.pop()
                if t in _SKIP:
                    self.skip_depth = max(0, self.skip_depth - 1)
                if t == "pre":
                    self.pre_depth = max(0, self.pre_depth - 1)
                if t == tag:
                    break
                if t not in ("p", "li", "td", "th", "tr", "dt", "dd", "option"):
                    self.mismatched += 1
        else:
            self.mismatched += 1
        if tag in _BLOCK:
            self.parts.append(_PARA)
        elif tag in _LINE:
            self.parts.append("\n")

    def handle_data(self, data):
        if self.skip_depth:
            return
        if not self.pre_depth:
            # source newlines are just whitespace outside <pre>
            data = re.sub(r"\s+", " ", data)
        self.parts.append(data.replace(_PARA, ""))


_PARA = "\x00"


def _tidy(raw: str) -> str:
    """Paragraphs separated by a blank line, lines within them by a newline."""
    paragraphs = []
    for para in raw.split(_PARA):
        lines = [re.sub(r"[ \t\r\f\v\u00a0]+", " ", ln).strip() for ln in para.split("\n")]
        lines = [ln for ln in lines if ln]
        if lines:
            paragraphs.append("\n".join(lines))
    return "\n\n".join(paragraphs)


def html_to_plaintext(doc: RawDocument | str, provenance: dict | None = None) -> str:
    """Visible text of a policy page, one block element per paragraph.

    If ``provenance`` is given it receives ``degraded`` (markup was
    malformed and the text is best-effort) and ``mismatched_tags``.
    """
    if isinstance(doc, RawDocument):
        if doc.kind != "policy_html":
            raise DocumentKindError(f"html_to_plaintext needs policy_html, got {doc.kind}")
        html = doc.text()
    else:
        html = doc
    parser = _TextExtractor()
    degraded = False
    try:
        parser.feed(html)
        parser.close()
        text = _tidy("".join(parser.parts))
    except Exception:
        degraded = True
        stripped = re.sub(r"(?is)<(script|style)[^>]*>.*?</\1>", " ", html)
        text = _tidy(re.sub(r"<[^>]*>", _PARA, stripped))
    leftover = [t for t in parser.open if t not in ("p", "li", "html", "body", "td", "tr", "dt", "dd")]
    mismatched = parser.mismatched + len(leftover)
    degraded = degraded or mismatched > 0
    if provenance is not None:
        provenance["degraded"] = degraded
        provenance["mismatched_tags"] = mismatched
    if not text:
        raise EmptyDocumentError("no visible text in policy HTML")
    return text


# -- privacy links ------------------------------------------------------------


class _AnchorCollector(HTMLParser):
    def __init__(self):
        super().__init__(convert_charrefs=True)
        self.anchors: list[tuple[str, str]] = []
        self.base: str | None = None
        self._href: str | None = None
        self._text: list[str] = []

    def handle_starttag(self, tag, attrs):
        attrs = dict(attrs)
        if tag == "base" and attrs.get("href") and self.base is None:
            self.base = attrs["href"]
        elif tag == "a":
            self._flush()
            self._href = attrs.get("href") or ""
            self._text = [attrs.get("title") or "", attrs.get("aria-label") or ""]

    def handle_endtag(self, tag):
        if tag == "a":
            self._flush()

    def handle_data(self, data):
        if self._href is not None:
            self._text.append(data)

    def close(self):
        super().close()
        self._flush()

    def _flush(self):
        if self._href is not None:
            text = re.sub(r"\s+", " ", " ".join(self._text)).strip()
            self.anchors.append((self._href, text))
        self._href = None
        self._text = []


def anchors(html: str, page_url: str = "") -> list[tuple[str, str]]:
    """``(resolved url, anchor text)`` for every ``<a>`` in ``html``."""
    parser = _AnchorCollector()
    parser.feed(html)
    parser.close()
    base = urljoin(page_url, parser.base) if parser.base else page_url
    out = []
    for href, text in parser.anchors:
        href = href.strip()
        if href.lower().startswith(("javascript:", "mailto:", "tel:")):
            resolved = href
        else:
            resolved = urljoin(base, href) if base else href
        out.append((resolved, text))
    return out


@dataclass(frozen=True)
class PrivacyLink:
    url: str
    anchor_text: str
    hop: int
    found_on: str
    fake_redirect: bool = False

    def to_dict(self) -> dict:
        return {"url": self.url, "anchor_text": self.anchor_text, "hop": self.hop,
                "found_on": self.found_on, "fake_redirect": self.fake_redirect}


def _is_self_link(href: str, page_url: str) -> bool:
    if not href or href.startswith("#") or href.lower().startswith("javascript:"):
        return True
    if not page_url:
        return False
    a, _ = urldefrag(href)
    b, _ = urldefrag(page_url)
    return a.rstrip("/") == b.rstrip("/")


class PageStore:
    """Directory of previously fetched pages keyed by URL.

    Layout: ``index.json`` maps ``url -> {"file", "fetched_at"}``; page
    bodies live next to it under a hash of the URL.
    """

    def __init__(self, root: str | Path):
        self.root = Path(root)
        index_path = self.root / "index.json"
        self._index: dict[str, dict] = {}
        if index_path.exists():
            self._index = json.loads(index_path.read_text(encoding="utf-8"))

    @staticmethod
    def key(url: str) -> str:
        return urldefrag(url)[0]

    @staticmethod
    def filename(url: str) -> str:
        return hashlib.sha256(PageStore.key(url).encode()).hexdigest()[:24] + ".html"

    def __contains__(self, url: str) -> bool:
        return self.key(url) in self._index

    def urls(self) -> list[str]:
        return sorted(self._index)

    def get(self, url: str) -> bytes | None:
        entry = self._index.get(self.key(url))
        if entry is None:
            return None
        path = self.root / entry["file"]
        return path.read_bytes() if path.exists() else None

    def put(self, url: str, content: bytes | str, fetched_at: str = "") -> None:
        self.root.mkdir(parents=True, exist_ok=True)
        if isinstance(content, str):
            content = content.encode("utf-8")
        name = self.filename(url)
        (self.root / name).write_bytes(content)
        self._index[self.key(url)] = {"file": name, "fetched_at": fetched_at}
        (self.root / "index.json").write_text(json.dumps(self._index, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def extract_privacy_links(
    doc: RawDocument,
    max_hops: int = 2,
    store: PageStore | None = None,
    extended_keywords: bool = False,
) -> list[PrivacyLink]:
    """Privacy links reachable from a homepage within ``max_hops`` clicks.

    Hop 1 is an anchor on the homepage itself; deeper hops follow any
    anchor whose target is present in ``store``.  Self-links such as
    ``href="#"`` are kept but flagged ``fake_redirect``.
    """
    if doc.kind != "homepage_html":
        raise DocumentKindError(f"extract_privacy_links needs homepage_html, got {doc.kind}")
    if max_hops < 1:
        raise ValueError("max_hops must be >= 1")
    keywords = EXTENDED_KEYWORDS if extended_keywords else PRIVACY_KEYWORDS

    found: list[PrivacyLink] = []
    seen_links: set[str] = set()
    visited = {PageStore.key(doc.source_url)} if doc.source_url else set()
    frontier = [(doc.source_url, doc.text())]
    for hop in range(1, max_hops + 1):
        next_frontier = []
        for page_url, html in frontier:
            for url, text in anchors(html, page_url):
                if any(k in text.lower() for k in keywords):
                    if url not in seen_links:
                        seen_links.add(url)
                        found.append(PrivacyLink(url, text, hop, page_url, _is_self_link(url, page_url)))
                elif store is not None and hop < max_hops:
                    key = PageStore.key(url)
                    if key not in visited and url in store:
                        visited.add(key)
                        body = store.get(url)
                        if body:
                            next_frontier.append((url, body.decode("utf-8", errors="replace")))
        frontier = next_frontier
        if not frontier:
            break
    return found


# -- sentence segmentation ----------------------------------------------------

ABBREVIATIONS = frozenset("""
e.g i.e etc vs inc ltd co corp llc mr mrs ms dr jr sr st no nos approx dept est fig
jan feb mar apr jun jul aug sep sept oct nov dec u.s u.k e.u a.m p.m art sec ca cf al
""".split())

_TERMINATOR = re.compile(r"[.!?]+[\"'”’)\]]*(?=\s|$)")
_BULLET = re.compile(r"^\s*(?:[-*•●▪·]|\d+[.)]|[a-z][.)])\s+")


def _split_line(line: str) -> list[str]:
    out = []
    start = 0
    for m in _TERMINATOR.finditer(line):
        end = m.end()
        word = re.search(r"(\S+)$", line[start:m.start() + 1])
        token = word.group(1).lower().rstrip(".!?") if word else ""
        token = token.lstrip("(\"'“")
        if m.group().startswith(".") and len(m.group().rstrip("\"'”’)]")) == 1:
            if token in ABBREVIATIONS or (len(token) == 1 and token.isalpha()) or re.fullmatch(r"(?:[a-z]\.)+[a-z]", token):
                continue
        rest = line[end:].lstrip()
        if rest and not (rest[0].isupper() or rest[0].isdigit() or rest[0] in "\"'(“[•*-"):
            continue
        piece = line[start:end].strip()
        if piece:
            out.append(piece)
        start = end
    tail = line[start:].strip()
    if tail:
        out.append(tail)
    return out


def _logical_lines(text: str) -> list[str]:
    """Physical lines, re-joining hard-wrapped prose."""
    lines = [ln.strip() for ln in text.splitlines()]
    merged: list[str] = []
    prev_blank = True
    for ln in lines:
        if not ln:
            prev_blank = True
            continue
        if (merged and not prev_blank and ln[0].islower() and not _BULLET.match(ln)
                and not re.search(r"[.!?:;]$", merged[-1])):
            merged[-1] = merged[-1] + " " + ln
        else:
            merged.append(ln)
        prev_blank = False
    return merged


def segment_sentences(text: str) -> list[Sentence]:
    if not text or not text.strip():
        raise ValueError("segment_sentences needs nonempty text")
    pieces: list[str] = []
    for line in _logical_lines(text):
        pieces.extend(_split_line(line))
    return [Sentence(i, p) for i, p in enumerate(pieces)]


def build_policy_document(raw: RawDocument) -> PolicyDocument:
    """Plaintext and sentences for one stored policy; empty policies give zero sentences."""
    prov: dict = {"kind": raw.kind, "source_url": raw.source_url}
    if raw.kind == "policy_html":
        try:
            text = html_to_plaintext(raw, prov)
        except EmptyDocumentError:
            prov["empty"] = True
            return PolicyDocument(raw.app_id, [], prov)
    elif raw.kind == "policy_text":
        text = raw.text()
    else:
        raise DocumentKindError("homepage documents are not policies")
    if not text.strip():
        prov["empty"] = True
        return PolicyDocument(raw.app_id, [], prov)
    return PolicyDocument(raw.app_id, segment_sentences(text), prov)


def policy_from_text(app_id: str, text: str, source: str = "text") -> PolicyDocument:
    prov = {"kind": "policy_text", "source_url": source}
    if not text.strip():
        prov["empty"] = True
        return PolicyDocument(app_id, [], prov)
    return PolicyDocument(app_id, segment_sentences(text), prov)


def normalize_whitespace(text: str) -> str:
    return " ".join(text.split())

