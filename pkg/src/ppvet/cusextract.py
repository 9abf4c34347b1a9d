"""CUS sentence identification and ⟨entity, data⟩ tuple extraction.

There is no syntactic parser here.  Tuples come from positional rules over
the token stream, which are simple to audit but fail in predictable ways:

* long-range attachment: a data phrase binds to the nearest preceding SoC
  verb, even when a human reader would attach it to an earlier one;
* passive voice is only recognised as ``<data> <aux> [adverb] <participle>``
  with an optional ``by <entity>`` agent;
* pronoun coreference is not resolved; "they" falls back to the nearest
  earlier entity mention;
* negation is detected lexically between the clause start and the verb.

Anything implementing :class:`TupleExtractor` can replace the heuristic.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Iterable, Iterator, Literal, Mapping, Protocol, Sequence

from .lexicon import (
    DEFAULT_SIMILARITY_THRESHOLD,
    FIRST_PARTY,
    THIRD_PARTY,
    AppIdentity,
    EmbeddingProvider,
    Lexicon,
    Unterminologized,
    normalize_phrase,
    terminologize_data_phrase,
    terminologize_entity_phrase,
)
from .ontology import Ontology
from .textproc import PolicyDocument, Sentence

Action = Literal["share", "collect"]
Role = Literal["data", "entity"]

_WORD = re.compile(r"[A-Za-z0-9]+")
_LEADING = frozenset({"the", "your", "our"})
HEAD_NOUNS = frozenset({"data", "information", "info", "details"})
# "contact us", "email you": the noun reading of these is a false data hit
_VERBAL_NOUNS = frozenset({"contact", "email", "message", "call"})
_OBJECT_PRONOUNS = frozenset({"us", "you", "me", "them", "him", "her"})
_AUX = frozenset({"is", "are", "was", "were", "be", "been", "being"})
_NEGATION = re.compile(r"\b(?:not|never|no longer|cannot|neither|nor)\b|n['’]t\b", re.I)
_CLAUSE_BREAK = re.compile(r"[,;:()]|\b(?:but|however|whereas|although|unless)\b", re.I)
_RECIPIENT_PREPS = frozenset({"with", "to"})
_NAME_PREPS = frozenset({"with", "to", "by", "from", "including", "like"})
_NOT_NAMES = frozenset({
    "we", "our", "us", "you", "your", "this", "these", "those", "the", "a", "an", "if",
    "in", "for", "when", "such", "please", "it", "they", "their", "any", "all", "some",
    "i", "personal", "information", "data", "policy", "privacy", "services", "service",
    "app", "application", "platform", "site", "website",
})
_CANDIDATE_STOP = frozenset({
    "the", "a", "an", "and", "or", "of", "to", "for", "with", "your", "our", "this", "that",
    "such", "any", "other", "all", "some", "we", "you", "is", "are", "be",
})
_CORPORATE = frozenset({"inc", "llc", "ltd", "corp", "co", "gmbh", "plc", "limited"})
# a user who provides data implies the first party receives it
_USER_TO_US = frozenset({
    "provide", "give", "send", "share", "supply", "disclose", "transfer", "transmit",
    "deliver", "forward", "tell", "show", "reveal", "display", "publish", "release", "pass",
})


class SyntheticTemplateError(ValueError):
    pass


# -- verbs --------------------------------------------------------------------


def _third_person(v: str) -> str:
    if v.endswith(("s", "sh", "ch", "x", "z")):
        return v + "es"
    if v.endswith("y") and v[-2:-1] not in "aeiou":
        return v[:-1] + "ies"
    return v + "s"


def _past(v: str, doubled: bool) -> str:
    if doubled:
        return v + v[-1] + "ed"
    if v.endswith("e"):
        return v + "d"
    if v.endswith("y") and v[-2:-1] not in "aeiou":
        return v[:-1] + "ied"
    return v + "ed"


def _gerund(v: str, doubled: bool) -> str:
    if doubled:
        return v + v[-1] + "ing"
    if v.endswith("e") and not v.endswith("ee"):
        return v[:-1] + "ing"
    return v + "ing"


@dataclass(frozen=True)
class VerbForm:
    lemma: str
    action: Action
    participle: bool  # usable as a passive participle


class SocVerbList:
    """Sharing and collection lemmas plus every inflected form of each."""

    def __init__(
        self,
        sharing: Iterable[str],
        collection: Iterable[str],
        irregular: Mapping[str, Mapping[str, Sequence[str]]] | None = None,
        doubled: Iterable[str] = (),
        version: str = "",
    ):
        self.sharing = frozenset(v.lower() for v in sharing)
        self.collection = frozenset(v.lower() for v in collection)
        overlap = self.sharing & self.collection
        if overlap:
            raise ValueError(f"verbs listed as both sharing and collection: {sorted(overlap)}")
        self.version = version
        irregular = dict(irregular or {})
        doubled = {d.lower() for d in doubled}
        forms: dict[str, VerbForm] = {}
        for lemma in sorted(self.sharing | self.collection):
            action: Action = "share" if lemma in self.sharing else "collect"
            d = lemma in doubled
            irr = irregular.get(lemma, {})
            # an irregular past replaces the regular one
            for f in irr.get("past") or [_past(lemma, d)]:
                forms.setdefault(f.lower(), VerbForm(lemma, action, True))
            for f in [lemma, _third_person(lemma), _gerund(lemma, d), *irr.get("other", [])]:
                forms.setdefault(f.lower(), VerbForm(lemma, action, False))
        self._forms = forms

    def __len__(self) -> int:
        return len(self.sharing) + len(self.collection)

    def __contains__(self, word: str) -> bool:
        return word.lower() in self._forms

    def form(self, word: str) -> VerbForm | None:
        return self._forms.get(word.lower())

    def forms_of(self, lemma: str) -> list[str]:
        return sorted(f for f, v in self._forms.items() if v.lemma == lemma)

    def action(self, word: str) -> Action | None:
        f = self._forms.get(word.lower())
        return f.action if f else None

    @classmethod
    def from_dict(cls, doc: Mapping) -> "SocVerbList":
        try:
            return cls(doc["sharing"], doc["collection"], doc.get("irregular"), doc.get("doubled", ()),
                       str(doc.get("version", "")))
        except KeyError as exc:
            raise ValueError(f"verb file missing {exc.args[0]!r}") from exc

    def to_dict(self) -> dict:
        return {"version": self.version, "sharing": sorted(self.sharing), "collection": sorted(self.collection)}


def load_verbs(path: str | Path | None = None) -> SocVerbList:
    if path is None:
        text = resources.files("ppvet.data").joinpath("soc_verbs.json").read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    return SocVerbList.from_dict(json.loads(text))


# -- phrase matching ----------------------------------------------------------


@dataclass(frozen=True)
class Token:
    text: str  # lowercased
    start: int
    end: int
    raw: str


def tokens(text: str) -> list[Token]:
    return [Token(m.group().lower(), m.start(), m.end(), m.group()) for m in _WORD.finditer(text)]


@dataclass(frozen=True)
class PhraseMatch:
    start: int
    end: int
    surface: str
    role: Role
    term: str | None = None
    source: str = "lexicon"

    def to_dict(self) -> dict:
        return {"span": [self.start, self.end], "surface": self.surface, "role": self.role,
                "term": self.term, "source": self.source}


def _gazetteer(toks: list[Token], lex: Lexicon, max_len: int) -> Iterator[tuple[int, int, str]]:
    words = [t.text for t in toks]
    for i in range(len(words)):
        # phrases are stored without leading articles; a span starting on one
        # would only duplicate the shorter match after it
        if words[i] in _LEADING:
            continue
        for j in range(i + 1, min(len(words), i + max_len) + 1):
            term = lex.lookup(" ".join(words[i:j]))
            if term is not None:
                yield i, j, term


def _max_phrase_len(lex: Lexicon) -> int:
    return max((len(p.split()) for p in lex.phrases()), default=1)


def match_phrases(
    sentence: Sentence,
    lex: Lexicon,
    entity_lex: Lexicon | None = None,
    app_ctx: AppIdentity | None = None,
    verbs: SocVerbList | None = None,
) -> list[PhraseMatch]:
    """Longest-match, non-overlapping gazetteer matching.

    Data phrases come from ``lex``; entities from ``entity_lex`` (synonyms,
    company keywords, pronouns), the app's own identity, and capitalised
    names after a preposition or in subject position.  Overlaps resolve in
    favour of the longer span, then the leftmost, then data over entity.
    """
    text = sentence.text
    toks = tokens(text)
    words = [t.text for t in toks]
    cands: list[tuple[int, int, int, str, str, str]] = []  # (i, j, role rank, role, term, source)

    for i, j, term in _gazetteer(toks, lex, _max_phrase_len(lex)):
        if j - i == 1 and words[i] in _VERBAL_NOUNS and j < len(words) and words[j] in _OBJECT_PRONOUNS:
            continue
        # bare "data"/"information" only counts as "your data"
        if j - i == 1 and words[i] in HEAD_NOUNS and (i == 0 or words[i - 1] != "your"):
            continue
        cands.append((i, j, 0, "data", term, "lexicon"))
        # "eye gaze" + "data" reads as one phrase, and must outrank bare "data"
        if j < len(words) and words[j] in HEAD_NOUNS:
            cands.append((i, j + 1, 0, "data", term, "lexicon"))
    if entity_lex is not None:
        for i, j, term in _gazetteer(toks, entity_lex, _max_phrase_len(entity_lex)):
            cands.append((i, j, 1, "entity", term, "lexicon"))
        patterns = {r.pattern.split().__len__() for r in entity_lex.keyword_rules}
        for n in sorted(patterns):
            for i in range(len(words) - n + 1):
                ng = " ".join(words[i:i + n])
                for r in entity_lex.keyword_rules:
                    if r.pattern == ng:
                        j = i + n
                        # "Mixpanel Inc." is still Mixpanel
                        while j < len(words) and words[j] in _CORPORATE:
                            j += 1
                        cands.append((i, j, 1, "entity", r.term, "keyword"))
                        break
    if app_ctx is not None:
        for seq in app_ctx.identity_phrases():
            n = len(seq)
            for i in range(len(words) - n + 1):
                if tuple(words[i:i + n]) == tuple(seq):
                    j = i + n
                    while j < len(words) and words[j] in _CORPORATE:
                        j += 1
                    cands.append((i, j, 1, "entity", FIRST_PARTY, "identity"))

    taken = [False] * len(toks)
    chosen: list[tuple[int, int, str, str | None, str]] = []
    for i, j, _, role, term, source in sorted(cands, key=lambda c: (-(c[1] - c[0]), c[0], c[2], c[4])):
        if any(taken[i:j]):
            continue
        for k in range(i, j):
            taken[k] = True
        chosen.append((i, j, role, term, source))

    # unknown "your <words> data" phrases, left for the embedding provider
    for i, w in enumerate(words):
        if w != "your" or taken[i]:
            continue
        j = i + 1
        while j < len(words) and j - i <= 4 and not taken[j] and words[j] not in HEAD_NOUNS \
                and words[j] not in _CANDIDATE_STOP and (verbs is None or words[j] not in verbs):
            j += 1
        if j > i + 1 and j < len(words) and not taken[j] and words[j] in HEAD_NOUNS:
            for k in range(i + 1, j + 1):
                taken[k] = True
            chosen.append((i + 1, j + 1, "data", None, "candidate"))

    for i, j in _name_spans(toks, taken, verbs):
        for k in range(i, j):
            taken[k] = True
        chosen.append((i, j, "entity", None, "name"))

    out = [PhraseMatch(toks[i].start, toks[j - 1].end, text[toks[i].start:toks[j - 1].end], role, term, source)
           for i, j, role, term, source in chosen]
    return sorted(out, key=lambda m: (m.start, m.end))


def _is_cap(t: Token) -> bool:
    return t.raw[:1].isupper() and t.text not in _NOT_NAMES


def _name_spans(toks: list[Token], taken: list[bool], verbs: SocVerbList | None) -> list[tuple[int, int]]:
    spans = []
    i = 0
    while i < len(toks):
        if taken[i] or not _is_cap(toks[i]) or (verbs is not None and toks[i].text in verbs):
            i += 1
            continue
        j = i
        while j < len(toks) and not taken[j] and (_is_cap(toks[j]) or (j > i and toks[j].text in _CORPORATE)):
            j += 1
        after_prep = i > 0 and (toks[i - 1].text in _NAME_PREPS or toks[i - 1].text in ("and", "or"))
        # subject position: the name directly precedes a (modal +) SoC verb
        k = j
        while k < len(toks) and toks[k].text in {"may", "might", "will", "can", "could", "would", "also", "does"}:
            k += 1
        before_verb = verbs is not None and k < len(toks) and toks[k].text in verbs and (i == 0 or toks[i - 1].text in {"and", "or"})
        if after_prep or before_verb:
            spans.append((i, j))
        i = max(j, i + 1)
    return spans


def terminologize_matches(
    matches: Sequence[PhraseMatch],
    lex: Lexicon,
    provider: EmbeddingProvider | None,
    threshold: float = DEFAULT_SIMILARITY_THRESHOLD,
) -> tuple[list[PhraseMatch], list[str]]:
    """Resolve unresolved data matches; return them plus leftover phrases."""
    out, leftover = [], []
    for m in matches:
        if m.role == "data" and m.term is None:
            r = terminologize_data_phrase(lex, provider, m.surface, threshold)
            if isinstance(r, Unterminologized):
                leftover.append(r.phrase)
            else:
                m = replace(m, term=r, source="similarity")
        out.append(m)
    return out, leftover


# -- tuples -------------------------------------------------------------------


@dataclass(frozen=True)
class CusTuple:
    entity: str
    data: str
    action: Action
    negated: bool = False
    app_id: str = ""
    sentence_index: int = -1
    data_phrase: str = ""
    data_span: tuple[int, int] = (0, 0)
    entity_phrase: str = ""
    entity_span: tuple[int, int] | None = None
    verb: str = ""
    entity_source: str = "default"
    unresolved: bool = False
    role: Literal["agent", "recipient"] = "agent"

    @property
    def pair(self) -> tuple[str, str]:
        return self.entity, self.data

    def to_dict(self) -> dict:
        return {
            "entity": self.entity,
            "data": self.data,
            "action": self.action,
            "negated": self.negated,
            "app_id": self.app_id,
            "sentence_index": self.sentence_index,
            "data_phrase": self.data_phrase,
            "data_span": list(self.data_span),
            "entity_phrase": self.entity_phrase,
            "entity_span": list(self.entity_span) if self.entity_span else None,
            "verb": self.verb,
            "entity_source": self.entity_source,
            "unresolved": self.unresolved,
            "role": self.role,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "CusTuple":
        es = d.get("entity_span")
        return cls(
            entity=d["entity"], data=d["data"], action=d["action"], negated=bool(d.get("negated", False)),
            app_id=d.get("app_id", ""), sentence_index=int(d.get("sentence_index", -1)),
            data_phrase=d.get("data_phrase", ""), data_span=tuple(d.get("data_span", (0, 0))),
            entity_phrase=d.get("entity_phrase", ""), entity_span=tuple(es) if es else None,
            verb=d.get("verb", ""), entity_source=d.get("entity_source", "default"),
            unresolved=bool(d.get("unresolved", False)), role=d.get("role", "agent"),
        )


@dataclass(frozen=True)
class _Verb:
    index: int  # token index
    start: int
    end: int
    form: VerbForm
    passive: bool


class TupleExtractor(Protocol):
    def extract(self, sentence: Sentence, matches: Sequence[PhraseMatch], verbs: SocVerbList,
                app_id: str = "") -> list[CusTuple]: ...


def _clause_start(text: str, pos: int) -> int:
    start = 0
    for m in _CLAUSE_BREAK.finditer(text, 0, pos):
        start = m.end()
    return start


def _find_verbs(toks: list[Token], matches: Sequence[PhraseMatch], verbs: SocVerbList) -> list[_Verb]:
    covered = [(m.start, m.end) for m in matches]
    out = []
    for i, t in enumerate(toks):
        f = verbs.form(t.text)
        if f is None or any(s <= t.start < e for s, e in covered):
            continue
        back = [toks[k].text for k in range(max(0, i - 3), i)]
        passive = f.participle and any(w in _AUX for w in back[-2:]) and not (back and back[-1] == "to")
        out.append(_Verb(i, t.start, t.end, f, passive))
    return out


def _between_has_break(text: str, a: int, b: int) -> bool:
    return bool(_CLAUSE_BREAK.search(text, a, b))


def extract_tuples(
    sentence: Sentence,
    matches: Sequence[PhraseMatch],
    verbs: SocVerbList,
    app_id: str = "",
) -> list[CusTuple]:
    """Positional stand-in for a dependency-tree extractor.

    Each resolved data match binds to a passive SoC participle right after
    it, else the nearest preceding SoC verb, else the nearest following one
    in the same clause.  The agent is the nearest earlier entity mention
    (``by X`` for passives), defaulting to the first party.  Sharing verbs
    also credit the entities after "with"/"to" as recipients.
    """
    text = sentence.text
    toks = tokens(text)
    found = _find_verbs(toks, matches, verbs)
    if not found:
        return []
    entities = [m for m in matches if m.role == "entity"]
    out: list[CusTuple] = []
    seen = set()

    def emit(t: CusTuple):
        key = (t.entity, t.data, t.action, t.negated, t.role, t.entity_phrase)
        if key not in seen:
            seen.add(key)
            out.append(t)

    for dm in matches:
        if dm.role != "data" or dm.term is None:
            continue
        verb = None
        nxt = [v for v in found if v.start >= dm.end and v.passive and not _between_has_break(text, dm.end, v.start)]
        if nxt:
            verb = nxt[0]
        else:
            prev = [v for v in found if v.end <= dm.start]
            if prev:
                verb = prev[-1]
            else:
                after = [v for v in found if v.start >= dm.end and not _between_has_break(text, dm.end, v.start)]
                verb = after[0] if after else None
        if verb is None or _not_a_practice(toks, verb, dm):
            continue

        cs = _clause_start(text, verb.start)
        negated = bool(_NEGATION.search(text, min(cs, dm.start) if verb.passive else cs, verb.start))
        action = verb.form.action
        base = dict(data=dm.term, negated=negated, app_id=app_id, sentence_index=sentence.index,
                    data_phrase=dm.surface, data_span=(dm.start, dm.end), verb=verb.form.lemma)

        agent = None
        if verb.passive:
            by = [e for e in entities if e.start > verb.end and text[verb.end:e.start].lower().split()[-1:] == ["by"]]
            agent = by[0] if by else None
            if agent is not None:
                emit(_entity_tuple(agent, action, base))
            else:
                emit(CusTuple(entity=FIRST_PARTY, action=action, entity_source="default", **base))
        else:
            before = [e for e in entities if e.end <= verb.start]
            last_ent = before[-1] if before else None
            if _user_is_subject(toks, verb.index) and (last_ent is None or last_ent.end <= _you_start(toks, verb.index)):
                if verb.form.lemma in _USER_TO_US:
                    emit(CusTuple(entity=FIRST_PARTY, action="collect", entity_source="implied", **base))
                # otherwise the user is acting on their own data
            elif last_ent is not None:
                emit(_entity_tuple(last_ent, action, base))
            else:
                emit(CusTuple(entity=FIRST_PARTY, action=action, entity_source="default", **base))

        if action == "share":
            for e in _recipients(toks, entities, verb):
                emit(replace(_entity_tuple(e, "share", base), role="recipient"))
    return out


_SUBJECT_GAP = frozenset({
    "can", "may", "might", "could", "will", "would", "should", "must", "also", "to", "choose",
    "want", "wish", "need", "decide", "not", "do", "don", "t", "never", "always", "then",
})
_DETERMINERS = frozenset({
    "our", "the", "their", "its", "certain", "trusted", "selected", "select", "other", "some",
    "any", "various", "a", "an", "such", "these",
})


_RIGHT_NOUNS = frozenset({"right", "rights", "ability", "option", "opportunity"})
_STATE_VERBS = frozenset({"keep", "hold", "maintain"})
_STATE_ADJ = frozenset({"accurate", "secure", "safe", "confidential", "private", "current", "up", "protected"})


def _not_a_practice(toks: list[Token], verb: _Verb, data: PhraseMatch) -> bool:
    """Verb uses that describe a user right or data upkeep, not a data practice."""
    i = verb.index
    # "you have the right to request ..."
    if i >= 2 and toks[i - 1].text == "to" and toks[i - 2].text in _RIGHT_NOUNS:
        return True
    # "keep your data accurate"
    if verb.form.lemma in _STATE_VERBS and data.start > verb.end:
        after = [t for t in toks if t.start >= data.end][:1]
        if after and after[0].text in _STATE_ADJ:
            return True
    return False


def _you_start(toks: list[Token], vi: int) -> int:
    k = vi - 1
    while k >= 0 and toks[k].text in _SUBJECT_GAP:
        k -= 1
    return toks[k].start if k >= 0 else -1


def _user_is_subject(toks: list[Token], vi: int) -> bool:
    """"you [may|can|choose to ...] <verb>": the user, not an entity, acts."""
    k = vi - 1
    while k >= 0 and toks[k].text in _SUBJECT_GAP:
        k -= 1
    return k >= 0 and toks[k].text in ("you", "users", "user")


def _recipients(toks: list[Token], entities: Sequence[PhraseMatch], verb: _Verb) -> list[PhraseMatch]:
    """Entities after the verb introduced by with/to, plus those coordinated with them."""
    out = []
    starts = {t.start: i for i, t in enumerate(toks)}
    for e in entities:
        if e.start <= verb.end:
            continue
        k = starts[e.start] - 1
        while k > verb.index and toks[k].text in _DETERMINERS:
            k -= 1
        if k <= verb.index:
            continue
        w = toks[k].text
        if w in _RECIPIENT_PREPS or (w in ("and", "or") and out):
            out.append(e)
    return out


def _entity_tuple(e: PhraseMatch, action: Action, base: dict) -> CusTuple:
    if e.term is None:
        return CusTuple(entity=THIRD_PARTY, action=action, entity_phrase=e.surface,
                        entity_span=(e.start, e.end), entity_source="unresolved", unresolved=True, **base)
    source = "pronoun" if normalize_phrase(e.surface) in (FIRST_PARTY, "us") else e.source
    return CusTuple(entity=e.term, action=action, entity_phrase=e.surface, entity_span=(e.start, e.end),
                    entity_source=source, **base)


class HeuristicExtractor:
    def extract(self, sentence, matches, verbs, app_id=""):
        return extract_tuples(sentence, matches, verbs, app_id)


def entity_source(lex: Lexicon, phrase: str, app_ctx: AppIdentity | None) -> tuple[str, str, bool]:
    """``(term, source, unresolved)`` for an entity phrase."""
    norm = normalize_phrase(phrase)
    if norm in (FIRST_PARTY, "us"):
        return FIRST_PARTY, "pronoun", False
    if app_ctx is not None and app_ctx.matches(phrase):
        return FIRST_PARTY, "identity", False
    r = terminologize_entity_phrase(lex, phrase, app_ctx)
    if isinstance(r, Unterminologized):
        return THIRD_PARTY, "unresolved", True
    return r, ("keyword" if lex.keyword_term(norm) == r else "lexicon"), False


def resolve_first_party(tuples: Iterable[CusTuple], app_ctx: AppIdentity | None, lex: Lexicon) -> list[CusTuple]:
    """Re-resolve each tuple's entity phrase against the app identity and lexicon.

    Tuples whose agent was implicit keep the first party.  Names that
    resolve nowhere become an unresolved generic third party.
    """
    out = []
    for t in tuples:
        if not t.entity_phrase:
            out.append(t)
            continue
        term, source, unresolved = entity_source(lex, t.entity_phrase, app_ctx)
        out.append(replace(t, entity=term, entity_source=source, unresolved=unresolved))
    return out


def identify_cus_sentences(doc: PolicyDocument | Iterable[Sentence], verbs: SocVerbList, lex: Lexicon) -> list[int]:
    """Indices of sentences holding an SoC verb and at least one data phrase."""
    sentences = doc.sentences if isinstance(doc, PolicyDocument) else doc
    out = []
    for s in sentences:
        ms = [m for m in match_phrases(s, lex, verbs=verbs) if m.role == "data"]
        if ms and _find_verbs(tokens(s.text), ms, verbs):
            out.append(s.index)
    return out


# -- document pipeline --------------------------------------------------------


@dataclass
class DocumentExtraction:
    app_id: str
    cus_sentences: list[int]
    tuples: list[CusTuple]
    unterminologized: list[tuple[int, str]] = field(default_factory=list)

    @property
    def claimed_tuples(self) -> list[CusTuple]:
        return [t for t in self.tuples if not t.negated]

    @property
    def negated_tuples(self) -> list[CusTuple]:
        return [t for t in self.tuples if t.negated]

    @property
    def claimed_data(self) -> frozenset[str]:
        return frozenset(t.data for t in self.claimed_tuples)

    def to_dict(self) -> dict:
        return {
            "app_id": self.app_id,
            "cus_sentences": self.cus_sentences,
            "tuples": [t.to_dict() for t in self.tuples],
            "unterminologized": [{"sentence_index": i, "phrase": p} for i, p in self.unterminologized],
        }


class CusExtractor:
    """Bundles the data files the pipeline needs and runs it per sentence."""

    def __init__(
        self,
        verbs: SocVerbList,
        data_lex: Lexicon,
        entity_lex: Lexicon,
        provider: EmbeddingProvider | None = None,
        threshold: float = DEFAULT_SIMILARITY_THRESHOLD,
        extractor: TupleExtractor | None = None,
    ):
        self.verbs = verbs
        self.data_lex = data_lex
        self.entity_lex = entity_lex
        self.provider = provider
        self.threshold = threshold
        self.extractor = extractor or HeuristicExtractor()

    @property
    def data_ontology(self) -> Ontology:
        return self.data_lex.ontology

    @property
    def entity_ontology(self) -> Ontology:
        return self.entity_lex.ontology

    def sentence(self, s: Sentence, app_id: str = "", app_ctx: AppIdentity | None = None
                 ) -> tuple[bool, list[CusTuple], list[str]]:
        matches = match_phrases(s, self.data_lex, self.entity_lex, app_ctx, self.verbs)
        data = [m for m in matches if m.role == "data"]
        if not data or not _find_verbs(tokens(s.text), matches, self.verbs):
            return False, [], []
        matches, leftover = terminologize_matches(matches, self.data_lex, self.provider, self.threshold)
        found = self.extractor.extract(s, matches, self.verbs, app_id)
        return True, resolve_first_party(found, app_ctx, self.entity_lex), leftover

    def document(self, doc: PolicyDocument, app_ctx: AppIdentity | None = None) -> DocumentExtraction:
        app_id = doc.app_id
        cus, all_tuples, left = [], [], []
        for s in doc.sentences:
            is_cus, found, leftover = self.sentence(s, app_id, app_ctx)
            s.tuples = found
            if is_cus:
                cus.append(s.index)
            all_tuples.extend(found)
            left.extend((s.index, p) for p in leftover)
        return DocumentExtraction(app_id, cus, all_tuples, left)


# -- synthetic corpus ---------------------------------------------------------


SLOT = "<data>"


@dataclass(frozen=True)
class SyntheticTemplate:
    text: str
    cus: bool
    entities: tuple[str, ...] = (FIRST_PARTY,)

    def __post_init__(self):
        n = len(self.slots)
        if self.cus and n == 0:
            raise SyntheticTemplateError(f"CUS template has no {SLOT} slot: {self.text!r}")
        if not self.cus and n:
            raise SyntheticTemplateError(f"non-CUS sentence contains a {SLOT} slot: {self.text!r}")

    @property
    def slots(self) -> tuple[int, ...]:
        return tuple(m.start() for m in re.finditer(re.escape(SLOT), self.text))


@dataclass(frozen=True)
class GoldSentence:
    id: str
    text: str
    cus: bool
    spans: tuple[tuple[int, int, str, str], ...] = ()  # start, end, phrase, term
    tuples: tuple[tuple[str, str], ...] = ()  # entity, data

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "text": self.text,
            "cus": self.cus,
            "spans": [{"start": s, "end": e, "phrase": p, "term": t, "role": "data"} for s, e, p, t in self.spans],
            "tuples": [{"entity": en, "data": d} for en, d in self.tuples],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "GoldSentence":
        return cls(
            d["id"], d["text"], bool(d["cus"]),
            tuple((s["start"], s["end"], s["phrase"], s["term"]) for s in d.get("spans", [])),
            tuple((t["entity"], t["data"]) for t in d.get("tuples", [])),
        )


def _line_of(raw: str, needle: str) -> int:
    pos = raw.find(json.dumps(needle)[1:-1])
    return raw.count("\n", 0, pos) + 1 if pos >= 0 else 0


def parse_templates(raw: str, origin: str = "<templates>") -> list[SyntheticTemplate]:
    """Parse a template file: ``{"cus": [{"text", "entities"}], "non_cus": [str]}``."""
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise SyntheticTemplateError(f"{origin}: line {exc.lineno}: {exc.msg}") from exc
    if not isinstance(doc, Mapping):
        raise SyntheticTemplateError(f"{origin}: line 1: expected a JSON object")
    out = []
    for item in doc.get("cus", []):
        if isinstance(item, str):
            item = {"text": item}
        text = item.get("text", "") if isinstance(item, Mapping) else ""
        try:
            out.append(SyntheticTemplate(text, True, tuple(item.get("entities", [FIRST_PARTY]))))
        except SyntheticTemplateError as exc:
            raise SyntheticTemplateError(f"{origin}: line {_line_of(raw, text)}: {exc}") from None
    for text in doc.get("non_cus", []):
        try:
            out.append(SyntheticTemplate(text, False, ()))
        except SyntheticTemplateError as exc:
            raise SyntheticTemplateError(f"{origin}: line {_line_of(raw, text)}: {exc}") from None
    return out


def load_templates(path: str | Path | None = None) -> list[SyntheticTemplate]:
    if path is None:
        return parse_templates(resources.files("ppvet.data").joinpath("synthetic_templates.json").read_text("utf-8"),
                               "synthetic_templates.json")
    return parse_templates(Path(path).read_text(encoding="utf-8"), str(path))


def load_phrases(path: str | Path | None = None, ontology: Ontology | None = None) -> list[tuple[str, str]]:
    if path is None:
        raw = resources.files("ppvet.data").joinpath("vr_phrases.json").read_text("utf-8")
    else:
        raw = Path(path).read_text(encoding="utf-8")
    doc = json.loads(raw)
    items = doc["phrases"] if isinstance(doc, Mapping) else doc
    pairs = [(p["phrase"], p["term"]) for p in items]
    if ontology is not None:
        ontology.require(t for _, t in pairs)
    return pairs


def generate_synthetic_corpus(
    templates: Sequence[SyntheticTemplate],
    phrases: Sequence[tuple[str, str]],
) -> list[GoldSentence]:
    """Every CUS template crossed with every phrase, then the non-CUS sentences.

    With several slots, slot ``i`` of instantiation ``j`` takes phrase
    ``(j + i) mod n`` so each sentence mixes distinct phrases.
    """
    out = []
    n = len(phrases)
    for ti, tpl in enumerate(templates):
        if not tpl.cus:
            continue
        for j in range(n):
            parts = tpl.text.split(SLOT)
            text, spans = parts[0], []
            for i, rest in enumerate(parts[1:]):
                phrase, term = phrases[(j + i) % n]
                spans.append((len(text), len(text) + len(phrase), phrase, term))
                text += phrase + rest
            gold = []
            for e in tpl.entities:
                for *_, term in spans:
                    if (e, term) not in gold:
                        gold.append((e, term))
            out.append(GoldSentence(f"cus-{ti:03d}-{j:03d}", text, True, tuple(spans), tuple(gold)))
    for ti, tpl in enumerate(templates):
        if not tpl.cus:
            out.append(GoldSentence(f"non-{ti:03d}", tpl.text, False))
    return out


def write_jsonl(corpus: Iterable[GoldSentence], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for g in corpus:
            fh.write(json.dumps(g.to_dict(), sort_keys=True) + "\n")


def read_jsonl(path: str | Path) -> list[GoldSentence]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            if line.strip():
                try:
                    out.append(GoldSentence.from_dict(json.loads(line)))
                except (json.JSONDecodeError, KeyError) as exc:
                    raise ValueError(f"{path}: line {n}: {exc}") from exc
    return out


@dataclass
class SyntheticEvaluation:
    gold_tuples: int
    recovered: int
    cus_sentences: int
    non_cus_sentences: int
    false_positives: int
    misses: list[dict] = field(default_factory=list)

    @property
    def recall(self) -> float:
        return self.recovered / self.gold_tuples if self.gold_tuples else 1.0

    @property
    def false_positive_rate(self) -> float:
        return self.false_positives / self.non_cus_sentences if self.non_cus_sentences else 0.0

    def to_dict(self, max_misses: int = 20) -> dict:
        return {
            "gold_tuples": self.gold_tuples,
            "recovered": self.recovered,
            "recall": round(self.recall, 6),
            "cus_sentences": self.cus_sentences,
            "non_cus_sentences": self.non_cus_sentences,
            "false_positives": self.false_positives,
            "false_positive_rate": round(self.false_positive_rate, 6),
            "misses": self.misses[:max_misses],
        }


def evaluate_extractor(corpus: Iterable[GoldSentence], extractor: CusExtractor) -> SyntheticEvaluation:
    """Gold-tuple recall over CUS sentences; share of non-CUS sentences yielding any tuple."""
    gold_n = hit = cus_n = non_n = fp = 0
    misses = []
    for g in corpus:
        _, found, _ = extractor.sentence(Sentence(0, g.text), "synthetic")
        pred = {t.pair for t in found if not t.negated}
        if g.cus:
            cus_n += 1
            gold_n += len(g.tuples)
            got = [t for t in g.tuples if tuple(t) in pred]
            hit += len(got)
            if len(got) < len(g.tuples):
                misses.append({"id": g.id, "text": g.text, "missing": [list(t) for t in g.tuples if tuple(t) not in pred],
                               "predicted": sorted(map(list, pred))})
        else:
            non_n += 1
            if found:
                fp += 1
                misses.append({"id": g.id, "text": g.text, "false_positive": sorted(map(list, {t.pair for t in found}))})
    return SyntheticEvaluation(gold_n, hit, cus_n, non_n, fp, misses)
