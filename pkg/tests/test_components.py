import json

import pytest

from ppvet.components import (
    ComponentLabel,
    ComponentRuleSet,
    RuleSetError,
    annotate_document,
    children_policy_check,
    completeness_verdict,
    load_ruleset,
)
from ppvet.textproc import Sentence, policy_from_text

# one example sentence per component, plus the dual-label sentence
COMPONENT_FIXTURES = [
    ("we may collect or you may provide Personal Information about you", {"DataCUS"}),
    ("when determining the specific retention period, we consider various factors", {"DataRetention"}),
    ("we use technical safeguards to improve the integrity and security of Personal Information", {"DataSecurity"}),
    ("you may opt out from receiving commercial email by sending your request to us by email", {"UserChoice"}),
    ("you may submit a verifiable request that we delete Personal Information about you", {"UserRights"}),
    ("if we modify this Policy, we will make it available through the Platform", {"PolicyChange"}),
    ("we do not knowingly collect Personal Information from children", {"SpecificAudiences"}),
    ("we may collect your IP address, if you do not want us to do so, you can opt-out", {"DataCUS", "UserChoice"}),
]

FULL_POLICY = " ".join(s[0][0].upper() + s[0][1:] + "." for s in COMPONENT_FIXTURES[:7])


@pytest.fixture(scope="module")
def rules():
    return load_ruleset()


@pytest.mark.parametrize("text,labels", COMPONENT_FIXTURES)
def test_table2(rules, text, labels):
    ann = rules.classify(Sentence(0, text))
    assert {str(x) for x in ann.labels} == labels
    assert all(r.split("#")[0] in labels for r in ann.matched_rules)


def test_all_labels_have_rules(rules):
    assert set(rules.rules) == set(ComponentLabel)
    assert rules.version == "1.0"


def test_complete_policy(rules):
    doc = policy_from_text("a", FULL_POLICY)
    annotate_document(doc, rules)
    rec = completeness_verdict(doc)
    assert rec.complete and not rec.missing and not rec.zero_components
    d = rec.to_dict()
    assert d["missing"] == [] and all(d["present"].values())
    assert d["evidence_sentences"]["DataRetention"] == [1]


def test_empty_policy_zero_components(rules):
    doc = policy_from_text("a", " ")
    annotate_document(doc, rules)
    rec = completeness_verdict(doc)
    assert rec.zero_components and not rec.complete
    assert len(rec.missing) == 7


def test_under_construction(rules):
    doc = policy_from_text("a", "Under Construction")
    annotate_document(doc, rules)
    assert completeness_verdict(doc).zero_components


def test_unknown_label():
    with pytest.raises(RuleSetError):
        ComponentRuleSet.from_dict({"labels": {"Bogus": ["x"]}})


def test_missing_label():
    with pytest.raises(RuleSetError):
        ComponentRuleSet.from_dict({"labels": {"DataCUS": ["collect"]}})


def test_bad_regex(tmp_path):
    doc = {"version": "x", "labels": {label.value: ["ok"] for label in ComponentLabel}}
    doc["labels"]["DataCUS"] = ["("]
    with pytest.raises(RuleSetError, match="DataCUS"):
        ComponentRuleSet.from_dict(doc)
    p = tmp_path / "r.json"
    p.write_text('{"labels":\n {')
    with pytest.raises(RuleSetError, match="line 2"):
        load_ruleset(p)


def test_exclude_patterns():
    doc = {"labels": {label.value: {"patterns": ["zzz"]} for label in ComponentLabel}}
    doc["labels"]["DataCUS"] = {"patterns": [r"\bcollect\b"], "exclude": [r"\bnot collect\b"]}
    rs = ComponentRuleSet.from_dict(doc)
    assert ComponentLabel.DataCUS in rs.classify(Sentence(0, "We collect email.")).labels
    assert not rs.classify(Sentence(0, "We do not collect email.")).labels


def test_ruleset_file_is_json(rules):
    from importlib import resources
    doc = json.loads(resources.files("ppvet.data").joinpath("component_rules.json").read_text())
    assert set(doc["labels"]) == {label.value for label in ComponentLabel}


def test_children_check(rules):
    doc = policy_from_text("a", "We do not knowingly collect Personal Information from children. We use cookies.")
    annotate_document(doc, rules)
    assert children_policy_check(doc, ["Action"]) is None
    assert children_policy_check(doc, ["Education"]) == {"applies": True, "addresses_children": True, "sentences": [0]}
    doc2 = policy_from_text("a", "We use cookies.")
    annotate_document(doc2, rules)
    assert children_policy_check(doc2, ["Kids"])["addresses_children"] is False
