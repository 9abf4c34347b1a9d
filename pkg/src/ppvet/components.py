"""Sentence-level component labelling and the completeness check.

The default classifier is a versioned regex ruleset.  Anything with a
``classify(sentence) -> ComponentAnnotation`` method can replace it; the
completeness verdict only looks at the labels.
"""

from __future__ import annotations

import enum
import json
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Protocol

from .textproc import PolicyDocument, Sentence


class ComponentLabel(str, enum.Enum):
    DataCUS = "DataCUS"
    DataRetention = "DataRetention"
    DataSecurity = "DataSecurity"
    UserChoice = "UserChoice"
    UserRights = "UserRights"
    PolicyChange = "PolicyChange"
    SpecificAudiences = "SpecificAudiences"

    def __str__(self) -> str:
        return self.value


ALL_LABELS = frozenset(ComponentLabel)


class RuleSetError(ValueError):
    pass


@dataclass(frozen=True)
class _LabelRules:
    patterns: tuple[re.Pattern, ...]
    exclude: tuple[re.Pattern, ...] = ()


@dataclass(frozen=True)
class ComponentAnnotation:
    sentence_index: int
    labels: frozenset[ComponentLabel]
    matched_rules: tuple[str, ...] = ()

    def __post_init__(self):
        if bool(self.labels) != bool(self.matched_rules):
            raise ValueError("matched_rules must be nonempty exactly when labels are")


class SentenceClassifier(Protocol):
    def classify(self, sentence: Sentence) -> ComponentAnnotation: ...


class ComponentRuleSet:
    """Per-label regex include/exclude lists.

    A label fires when some include pattern matches the lowercased
    sentence and no exclude pattern for that label does.
    """

    def __init__(self, rules: Mapping[ComponentLabel, _LabelRules], version: str = ""):
        missing = ALL_LABELS - set(rules)
        if missing:
            raise RuleSetError(f"ruleset has no rules for {sorted(map(str, missing))}")
        for label, r in rules.items():
            if not r.patterns:
                raise RuleSetError(f"label {label} has no include patterns")
        self.rules = dict(rules)
        self.version = version

    @classmethod
    def from_dict(cls, doc: Mapping) -> "ComponentRuleSet":
        labels = doc.get("labels", doc)
        version = str(doc.get("version", "")) if "labels" in doc else ""
        rules = {}
        for name, spec in labels.items():
            if name == "version":
                continue
            try:
                label = ComponentLabel(name)
            except ValueError:
                raise RuleSetError(f"unknown component label {name!r}") from None
            if isinstance(spec, list):
                inc, exc = spec, []
            else:
                inc, exc = spec.get("patterns", []), spec.get("exclude", [])
            try:
                rules[label] = _LabelRules(tuple(re.compile(p) for p in inc), tuple(re.compile(p) for p in exc))
            except re.error as e:
                raise RuleSetError(f"pattern for {name} does not compile: {e}") from e
        return cls(rules, version)

    def classify(self, sentence: Sentence) -> ComponentAnnotation:
        return classify_sentence(self, sentence)


def load_ruleset(path: str | Path | None = None) -> ComponentRuleSet:
    if path is None:
        text = resources.files("ppvet.data").joinpath("component_rules.json").read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise RuleSetError(f"ruleset line {exc.lineno}: {exc.msg}") from exc
    return ComponentRuleSet.from_dict(doc)


def _prep(text: str) -> str:
    return " ".join(text.lower().replace("’", "'").split())


def classify_sentence(rules: ComponentRuleSet, s: Sentence) -> ComponentAnnotation:
    text = _prep(s.text)
    labels = set()
    matched = []
    for label in ComponentLabel:  # enum order keeps matched_rules stable
        r = rules.rules[label]
        hits = [f"{label.value}#{i}" for i, p in enumerate(r.patterns) if p.search(text)]
        if hits and not any(p.search(text) for p in r.exclude):
            labels.add(label)
            matched.extend(hits)
    return ComponentAnnotation(s.index, frozenset(labels), tuple(matched))


def annotate_document(doc: PolicyDocument, classifier: SentenceClassifier) -> list[ComponentAnnotation]:
    """Classify every sentence, writing labels back onto the sentences."""
    out = []
    for s in doc.sentences:
        ann = classifier.classify(s)
        s.labels = ann.labels
        s.matched_rules = ann.matched_rules
        out.append(ann)
    return out


@dataclass(frozen=True)
class CompletenessRecord:
    present: dict[ComponentLabel, bool]
    evidence: dict[ComponentLabel, tuple[int, ...]] = field(default_factory=dict)

    @property
    def complete(self) -> bool:
        return all(self.present.values())

    @property
    def missing(self) -> frozenset[ComponentLabel]:
        return frozenset(k for k, v in self.present.items() if not v)

    @property
    def zero_components(self) -> bool:
        return not any(self.present.values())

    def to_dict(self) -> dict:
        return {
            "complete": self.complete,
            "zero_components": self.zero_components,
            "present": {str(k): self.present[k] for k in ComponentLabel},
            "missing": sorted(str(m) for m in self.missing),
            "evidence_sentences": {str(k): list(self.evidence.get(k, ())) for k in ComponentLabel},
        }


def completeness_verdict(doc: PolicyDocument | Iterable[Sentence]) -> CompletenessRecord:
    sentences = doc.sentences if isinstance(doc, PolicyDocument) else list(doc)
    evidence: dict[ComponentLabel, list[int]] = {label: [] for label in ComponentLabel}
    for s in sentences:
        for label in s.labels:
            evidence[ComponentLabel(label)].append(s.index)
    present = {label: bool(evidence[label]) for label in ComponentLabel}
    return CompletenessRecord(present, {k: tuple(sorted(v)) for k, v in evidence.items()})


CHILD_KEYWORDS = re.compile(r"\b(child|children|kids?|minors?|coppa|under (?:the age of )?1[3-8]|parent(?:al)? consent)\b")
CHILD_GENRES = frozenset({"education", "educational", "kids", "children", "family"})


def children_policy_check(doc: PolicyDocument, genres: Iterable[str]) -> dict | None:
    """For kid/family/education apps: does the policy address children at all?

    Returns ``None`` for apps outside those genres.
    """
    if not CHILD_GENRES & {g.lower() for g in genres}:
        return None
    hits = [s.index for s in doc.sentences
            if ComponentLabel.SpecificAudiences in s.labels and CHILD_KEYWORDS.search(_prep(s.text))]
    return {"applies": True, "addresses_children": bool(hits), "sentences": hits}
