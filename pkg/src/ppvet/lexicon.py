"""Terminologization: mapping surface phrases onto ontology terms.

Data phrases resolve through the synonym list first; when an embedding
provider is configured, a phrase whose best similarity to a known synonym
reaches the threshold inherits that synonym's term.  Entity phrases also
go through keyword rules for company names and an app-identity check for
implicit first parties.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import re
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Literal, Mapping, Protocol, Sequence, runtime_checkable

from .ontology import Ontology, UnknownTermError, load_ontology

log = logging.getLogger(__name__)

DEFAULT_SIMILARITY_THRESHOLD = 0.8
FIRST_PARTY = "we"
THIRD_PARTY = "third party"

Source = Literal["seed", "clustered", "keyword"]

_TOKEN = re.compile(r"[a-z0-9]+")
_LEADING = ("the", "your", "our")
_CORPORATE_SUFFIXES = {
    "inc", "incorporated", "llc", "ltd", "limited", "corp", "corporation",
    "co", "company", "gmbh", "plc", "sa", "ag", "bv", "pty", "srl",
}


def tokenize(text: str) -> list[str]:
    return _TOKEN.findall(text.lower())


def normalize_phrase(phrase: str) -> str:
    """Lowercase, strip punctuation, collapse whitespace, drop leading articles."""
    toks = tokenize(phrase)
    while len(toks) > 1 and toks[0] in _LEADING:
        toks = toks[1:]
    return " ".join(toks)


def singular_candidates(phrase: str) -> list[str]:
    """Possible singular forms of the last word; callers keep only known ones."""
    head, _, last = phrase.rpartition(" ")
    prefix = head + " " if head else ""
    out = []
    if last.endswith("ies") and len(last) > 4:
        out.append(prefix + last[:-3] + "y")
    if last.endswith("es") and len(last) > 3:
        out.append(prefix + last[:-2])
    if last.endswith("s") and not last.endswith("ss") and len(last) > 2:
        out.append(prefix + last[:-1])
    return out


class LexiconError(ValueError):
    pass


class LexiconConflictError(LexiconError):
    def __init__(self, conflicts: Sequence[tuple[str, str, str]]):
        self.conflicts = list(conflicts)
        desc = "; ".join(f"{p!r} already maps to {old!r}, not {new!r}" for p, old, new in conflicts)
        super().__init__(f"lexicon conflict: {desc}")


class ProviderError(RuntimeError):
    """An embedding backend failed; distinct from a phrase being unterminologized."""


@dataclass(frozen=True)
class SynonymEntry:
    phrase: str
    term: str
    source: Source = "seed"


@dataclass(frozen=True)
class KeywordRule:
    pattern: str
    term: str

    def matches(self, phrase: str) -> bool:
        return re.search(rf"\b{re.escape(self.pattern)}\b", phrase) is not None


@dataclass(frozen=True)
class Unterminologized:
    phrase: str

    def __bool__(self) -> bool:
        return False


@dataclass(frozen=True)
class AppIdentity:
    """What the policy's own company might be called."""

    app_id: str = ""
    app_name: str = ""
    publisher: str = ""
    domains: tuple[str, ...] = ()

    @staticmethod
    def domain_label(url_or_host: str) -> str:
        host = re.sub(r"^[a-z]+://", "", url_or_host.lower()).split("/")[0].split(":")[0]
        parts = [p for p in host.split(".") if p and p != "www"]
        if len(parts) >= 3 and parts[-2] in {"co", "com", "org", "net", "ac"}:
            return parts[-3]
        return parts[-2] if len(parts) >= 2 else (parts[0] if parts else "")

    def identity_phrases(self) -> list[tuple[str, ...]]:
        """Token sequences that denote the first party, longest first."""
        seqs: set[tuple[str, ...]] = set()
        for name in (self.app_name, self.publisher):
            toks = tuple(strip_corporate_suffix(tokenize(name)))
            if toks:
                seqs.add(toks)
        for d in self.domains:
            label = self.domain_label(d)
            if label:
                seqs.add((label,))
        return sorted(seqs, key=lambda s: (-len(s), s))

    def matches(self, phrase: str) -> bool:
        toks = strip_corporate_suffix(tokenize(phrase))
        if not toks:
            return False
        joined = "".join(toks)
        for seq in self.identity_phrases():
            if len(seq) == 1 and joined == seq[0]:
                return True
            if _contains_seq(toks, list(seq)):
                return True
        return False


def strip_corporate_suffix(toks: list[str]) -> list[str]:
    toks = list(toks)
    while toks and toks[-1] in _CORPORATE_SUFFIXES:
        toks.pop()
    while toks and toks[0] in _LEADING:
        toks.pop(0)
    return toks


def _contains_seq(toks: list[str], seq: list[str]) -> bool:
    n = len(seq)
    return any(toks[i:i + n] == seq for i in range(len(toks) - n + 1))


# -- embedding providers -------------------------------------------------------


@runtime_checkable
class EmbeddingProvider(Protocol):
    def embed(self, phrase: str) -> Sequence[float]: ...

    def similarity(self, a: str, b: str) -> float: ...


class TokenJaccardProvider:
    """Offline stand-in for a sentence-embedding model.

    ``similarity`` is the Jaccard index of the two token sets.  ``embed``
    returns a hashed bag-of-tokens indicator vector of fixed width, which is
    enough for callers that only need a vector.
    """

    def __init__(self, dim: int = 256):
        self.dim = dim

    def embed(self, phrase: str) -> list[float]:
        vec = [0.0] * self.dim
        for tok in set(tokenize(phrase)):
            h = int(hashlib.md5(tok.encode()).hexdigest(), 16)
            vec[h % self.dim] = 1.0
        return vec

    def similarity(self, a: str, b: str) -> float:
        sa, sb = set(tokenize(a)), set(tokenize(b))
        if not sa and not sb:
            return 1.0
        return len(sa & sb) / len(sa | sb)


class ExactMatchProvider:
    """Similarity 1 for identical normalized phrases, 0 otherwise."""

    def embed(self, phrase: str) -> list[float]:
        return TokenJaccardProvider(dim=64).embed(normalize_phrase(phrase))

    def similarity(self, a: str, b: str) -> float:
        return 1.0 if normalize_phrase(a) == normalize_phrase(b) else 0.0


class CosineProvider:
    """Wraps any ``phrase -> vector`` callable; similarity is cosine."""

    def __init__(self, encoder):
        self._encoder = encoder
        self._cache: dict[str, tuple[float, ...]] = {}

    def embed(self, phrase: str) -> tuple[float, ...]:
        if phrase not in self._cache:
            try:
                self._cache[phrase] = tuple(float(x) for x in self._encoder(phrase))
            except Exception as exc:  # backend failures of any kind
                raise ProviderError(f"embedding failed for {phrase!r}: {exc}") from exc
        return self._cache[phrase]

    def similarity(self, a: str, b: str) -> float:
        va, vb = self.embed(a), self.embed(b)
        na = math.sqrt(sum(x * x for x in va))
        nb = math.sqrt(sum(x * x for x in vb))
        if na == 0 or nb == 0:
            return 0.0
        return max(-1.0, min(1.0, sum(x * y for x, y in zip(va, vb)) / (na * nb)))


def _safe_similarity(provider: EmbeddingProvider, a: str, b: str) -> float:
    try:
        return float(provider.similarity(a, b))
    except ProviderError:
        raise
    except Exception as exc:
        raise ProviderError(f"similarity({a!r}, {b!r}) failed: {exc}") from exc


# -- lexicon -----------------------------------------------------------------


class Lexicon:
    """Immutable phrase-to-term mapping bound to one ontology."""

    def __init__(
        self,
        ontology: Ontology,
        entries: Iterable[SynonymEntry] = (),
        keyword_rules: Iterable[KeywordRule] = (),
        version: str = "",
        name: str = "",
    ):
        self.ontology = ontology
        self.version = version
        self.name = name or f"{ontology.kind}-lexicon"
        table: dict[str, SynonymEntry] = {}
        conflicts = []
        for e in entries:
            phrase = normalize_phrase(e.phrase)
            if not phrase:
                raise LexiconError(f"empty phrase in entry {e!r}")
            e = replace(e, phrase=phrase)
            prior = table.get(phrase)
            if prior is not None and prior.term != e.term:
                conflicts.append((phrase, prior.term, e.term))
                continue
            table.setdefault(phrase, e)
        if conflicts:
            raise LexiconConflictError(conflicts)
        ontology.require(e.term for e in table.values())
        rules = [replace(r, pattern=normalize_phrase(r.pattern)) for r in keyword_rules]
        if rules and ontology.kind != "entity":
            raise LexiconError("keyword rules only apply to entity lexicons")
        ontology.require(r.term for r in rules)
        self._entries = table
        # longest pattern first, so "google analytics" beats "google"
        self.keyword_rules: tuple[KeywordRule, ...] = tuple(
            sorted(set(rules), key=lambda r: (-len(r.pattern), r.pattern, r.term))
        )

    @property
    def entries(self) -> tuple[SynonymEntry, ...]:
        return tuple(self._entries[p] for p in sorted(self._entries))

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, phrase: str) -> bool:
        return self.lookup(phrase) is not None

    def phrases(self) -> list[str]:
        return sorted(self._entries)

    def lookup(self, phrase: str) -> str | None:
        """Exact normalized hit, then a singular form the lexicon knows."""
        norm = normalize_phrase(phrase)
        hit = self._entries.get(norm)
        if hit is None:
            for cand in singular_candidates(norm):
                hit = self._entries.get(cand)
                if hit is not None:
                    break
        return hit.term if hit else None

    def keyword_term(self, phrase: str) -> str | None:
        norm = normalize_phrase(phrase)
        for rule in self.keyword_rules:
            if rule.matches(norm):
                return rule.term
        return None

    def with_entries(self, new: Iterable[SynonymEntry]) -> "Lexicon":
        return Lexicon(self.ontology, list(self.entries) + list(new), self.keyword_rules,
                       self.version, self.name)

    def to_dict(self, ontology_ref: str = "") -> dict:
        return {
            "name": self.name,
            "version": self.version,
            "ontology": ontology_ref,
            "entries": [{"phrase": e.phrase, "term": e.term, "source": e.source} for e in self.entries],
            "keyword_rules": [{"pattern": r.pattern, "term": r.term} for r in self.keyword_rules],
        }


def load_lexicon(path: str | Path, ontology: Ontology | None = None) -> Lexicon:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise LexiconError(f"{path}:{exc.lineno}: {exc.msg}") from exc
    return lexicon_from_dict(doc, ontology, base_dir=path.parent)


def lexicon_from_dict(doc: Mapping, ontology: Ontology | None = None, base_dir: Path | None = None) -> Lexicon:
    if ontology is None:
        ref = doc.get("ontology")
        if not ref:
            raise LexiconError("lexicon has no ontology reference and none was supplied")
        ref_path = Path(ref)
        if not ref_path.is_absolute() and base_dir is not None:
            ref_path = base_dir / ref_path
        ontology = load_ontology(ref_path)
    try:
        entries = [SynonymEntry(e["phrase"], e["term"], e.get("source", "seed")) for e in doc.get("entries", [])]
        rules = [KeywordRule(r["pattern"], r["term"]) for r in doc.get("keyword_rules", [])]
    except (KeyError, TypeError) as exc:
        raise LexiconError(f"malformed lexicon entry: {exc}") from exc
    try:
        return Lexicon(ontology, entries, rules, str(doc.get("version", "")), doc.get("name", ""))
    except UnknownTermError as exc:
        raise LexiconError(f"lexicon terms not in ontology {ontology.name!r}: {exc.terms}") from exc


# -- terminologization --------------------------------------------------------


def terminologize_data_phrase(
    lex: Lexicon,
    provider: EmbeddingProvider | None,
    phrase: str,
    threshold: float = DEFAULT_SIMILARITY_THRESHOLD,
) -> str | Unterminologized:
    if not phrase or not phrase.strip():
        raise ValueError("phrase must be nonempty")
    norm = normalize_phrase(phrase)
    hit = lex.lookup(norm)
    if hit is not None:
        return hit
    if provider is not None:
        best, best_term = -math.inf, None
        for p in lex.phrases():  # sorted, so ties resolve to the first phrase
            s = _safe_similarity(provider, norm, p)
            if s > best:
                best, best_term = s, lex.lookup(p)
        if best_term is not None and best >= threshold:
            return best_term
    return Unterminologized(norm)


def terminologize_entity_phrase(lex: Lexicon, phrase: str, app_ctx: AppIdentity | None = None) -> str | Unterminologized:
    """Identity match, then company keyword rules, then the synonym list."""
    if not phrase or not phrase.strip():
        raise ValueError("phrase must be nonempty")
    norm = normalize_phrase(phrase)
    if norm in (FIRST_PARTY, "us"):
        return FIRST_PARTY
    if app_ctx is not None and app_ctx.matches(phrase):
        return FIRST_PARTY
    kw = lex.keyword_term(norm)
    if kw is not None:
        return kw
    hit = lex.lookup(norm)
    if hit is not None:
        return hit
    stripped = " ".join(strip_corporate_suffix(norm.split()))
    if stripped and stripped != norm:
        hit = lex.lookup(stripped)
        if hit is not None:
            return hit
    return Unterminologized(norm)


# -- clustering of leftovers --------------------------------------------------


@dataclass
class ClusterProposal:
    members: tuple[str, ...]
    suggested_term: str | None = None
    mean_similarity: float = 1.0
    min_similarity: float = 1.0
    term: str | None = None  # set by a reviewer to accept the proposal

    def to_dict(self) -> dict:
        return {
            "members": list(self.members),
            "suggested_term": self.suggested_term,
            "mean_similarity": round(self.mean_similarity, 6),
            "min_similarity": round(self.min_similarity, 6),
            "term": self.term,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ClusterProposal":
        return cls(
            members=tuple(d["members"]),
            suggested_term=d.get("suggested_term"),
            mean_similarity=float(d.get("mean_similarity", 1.0)),
            min_similarity=float(d.get("min_similarity", 1.0)),
            term=d.get("term"),
        )


def cluster_unterminologized(
    provider: EmbeddingProvider,
    phrases: Iterable[str],
    threshold: float = DEFAULT_SIMILARITY_THRESHOLD,
    lexicon: Lexicon | None = None,
) -> list[ClusterProposal]:
    """Greedy threshold clustering of phrases for human review.

    Each round seeds a cluster with the unassigned phrase that has the most
    neighbours at or above ``threshold`` (ties go to the lexicographically
    smallest phrase), then repeatedly absorbs the unassigned phrase with the
    highest mean similarity to the current members while that mean stays at
    or above ``threshold``.  Nothing here edits a lexicon or ontology.
    """
    if not 0 < threshold <= 1:
        raise ValueError(f"threshold must be in (0, 1], got {threshold}")
    items = sorted({normalize_phrase(p) for p in phrases if p and p.strip()})
    n = len(items)
    if n == 0:
        return []
    sim = [[1.0] * n for _ in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            sim[i][j] = sim[j][i] = _safe_similarity(provider, items[i], items[j])

    unassigned = set(range(n))
    proposals = []
    while unassigned:
        seed = min(unassigned, key=lambda i: (-sum(1 for j in unassigned if j != i and sim[i][j] >= threshold), items[i]))
        members = [seed]
        unassigned.discard(seed)
        while True:
            best, best_score = None, -math.inf
            for j in sorted(unassigned, key=lambda k: items[k]):
                score = sum(sim[j][m] for m in members) / len(members)
                if score > best_score:
                    best, best_score = j, score
            if best is None or best_score < threshold:
                break
            members.append(best)
            unassigned.discard(best)
        pair = [sim[a][b] for ai, a in enumerate(members) for b in members[ai + 1:]]
        proposals.append(ClusterProposal(
            members=tuple(sorted(items[m] for m in members)),
            suggested_term=_suggest_term(provider, [items[m] for m in members], lexicon),
            mean_similarity=sum(pair) / len(pair) if pair else 1.0,
            min_similarity=min(pair) if pair else 1.0,
        ))
    return proposals


def _suggest_term(provider: EmbeddingProvider, members: list[str], lexicon: Lexicon | None) -> str | None:
    if lexicon is None or len(lexicon) == 0:
        return None
    best, best_term = 0.0, None
    for p in lexicon.phrases():
        s = sum(_safe_similarity(provider, m, p) for m in members) / len(members)
        if s > best:
            best, best_term = s, lexicon.lookup(p)
    return best_term


def merge_lexicon(base: Lexicon, accepted: Iterable[ClusterProposal], on_conflict: str = "raise") -> Lexicon:
    """Add accepted cluster members to ``base`` as ``clustered`` entries.

    The first mapping of a phrase wins.  A proposal that would remap a
    phrase raises :class:`LexiconConflictError` unless ``on_conflict`` is
    ``"skip"``, in which case the conflicting phrases are logged and left
    out.
    """
    if on_conflict not in ("raise", "skip"):
        raise ValueError("on_conflict must be 'raise' or 'skip'")
    current = {e.phrase: e.term for e in base.entries}
    new: list[SynonymEntry] = []
    conflicts = []
    for prop in accepted:
        if not prop.term:
            raise LexiconError(f"proposal {list(prop.members)} has no assigned term")
        base.ontology.require([prop.term])
        for m in prop.members:
            phrase = normalize_phrase(m)
            old = current.get(phrase)
            if old is None:
                current[phrase] = prop.term
                new.append(SynonymEntry(phrase, prop.term, "clustered"))
            elif old != prop.term:
                conflicts.append((phrase, old, prop.term))
    if conflicts and on_conflict == "raise":
        raise LexiconConflictError(conflicts)
    for phrase, old, term in conflicts:
        log.warning("kept %r -> %r; rejected remap to %r", phrase, old, term)
    return base.with_entries(new) if new else base

