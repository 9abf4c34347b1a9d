import json
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ppvet.cusextract import (
    CusExtractor,
    CusTuple,
    GoldSentence,
    SyntheticTemplate,
    SyntheticTemplateError,
    evaluate_extractor,
    generate_synthetic_corpus,
    identify_cus_sentences,
    load_phrases,
    load_templates,
    load_verbs,
    match_phrases,
    parse_templates,
    read_jsonl,
    write_jsonl,
)
from ppvet.lexicon import AppIdentity, Lexicon, TokenJaccardProvider
from ppvet.textproc import Sentence, policy_from_text

VRCHAT = AppIdentity("vrchat", "VRChat", "VRChat Inc.", ("vrchat.com",))


@pytest.fixture(scope="module")
def verbs():
    return load_verbs()


@pytest.fixture(scope="module")
def ex(verbs, data_lexicon, entity_lexicon):
    return CusExtractor(verbs, data_lexicon, entity_lexicon, TokenJaccardProvider())


def run(ex, text, ctx=None):
    return ex.sentence(Sentence(0, text), "app", ctx)


def triples(found):
    return sorted((t.entity, t.data, t.action, t.negated) for t in found)


def test_verb_list(verbs):
    assert len(verbs) == 64
    assert len(verbs.sharing) + len(verbs.collection) == 64
    for form in ("collects", "collected", "collecting", "sold", "shared", "given", "gave", "analysed", "transferred"):
        assert verbs.form(form) is not None, form
    assert verbs.action("sell") == "share"
    assert verbs.action("collect") == "collect"
    assert verbs.form("table") is None


@pytest.mark.parametrize("text,qualifies", [
    ("We may collect your ip address", True),
    ("This policy was updated in June.", False),
    ("There may also be opportunities for you to grant permission for use of other of your eye tracking information",
     True),
])
def test_identify(ex, text, qualifies):
    assert run(ex, text)[0] is qualifies


def test_identify_document(verbs, data_lexicon):
    doc = policy_from_text("a", "We may collect your ip address. This policy was updated in June.")
    assert identify_cus_sentences(doc, verbs, data_lexicon) == [0]


def test_longest_match(data_lexicon, entity_lexicon, verbs):
    ms = match_phrases(Sentence(0, "we share your email address"), data_lexicon, entity_lexicon, None, verbs)
    data = [m for m in ms if m.role == "data"]
    assert [(m.surface, m.term) for m in data] == [("email address", "email address")]
    assert any(m.role == "entity" and m.surface.lower() == "we" for m in ms)
    ms = match_phrases(Sentence(0, "collect your eye tracking data"), data_lexicon, entity_lexicon, None, verbs)
    assert [m.surface for m in ms if m.role == "data"] == ["eye tracking data"]


def test_match_independent_of_storage_order(data_lexicon, entity_lexicon, verbs):
    entries = list(data_lexicon.entries)
    random.Random(7).shuffle(entries)
    shuffled = Lexicon(data_lexicon.ontology, entries, version=data_lexicon.version)
    s = Sentence(0, "We collect your email address, device id and eye tracking data with Google Analytics.")
    a = match_phrases(s, data_lexicon, entity_lexicon, None, verbs)
    b = match_phrases(s, shuffled, entity_lexicon, None, verbs)
    assert a == b


def test_basic_tuple(ex):
    _, found, _ = run(ex, "We may collect your ip address")
    assert triples(found) == [("we", "ip address", "collect", False)]


def test_negated_share(ex):
    _, found, _ = run(ex, "We will never sell your email address")
    assert triples(found) == [("we", "email address", "share", True)]


def test_conjunction(ex):
    _, found, _ = run(ex, "We collect your age and your voice clip")
    assert triples(found) == [("we", "age", "collect", False), ("we", "audio", "collect", False)]


def test_first_party_resolution(ex):
    _, found, _ = run(ex, "VRChat Inc. collects your hand tracking data.", VRCHAT)
    assert [(t.entity, t.entity_source) for t in found] == [("we", "identity")]


def test_recipient_category(ex):
    _, found, _ = run(ex, "We share your device id with our analytics partners.")
    pairs = {(t.entity, t.data, t.role) for t in found}
    assert ("analytic provider", "device id", "recipient") in pairs


def test_named_company(ex):
    _, found, _ = run(ex, "Google Analytics may collect your IP address.")
    assert [(t.entity, t.entity_source) for t in found] == [("analytic provider", "keyword")]


def test_unknown_company_unresolved(ex):
    _, found, _ = run(ex, "We share your device id with Zorblax Metrics.")
    rec = [t for t in found if t.role == "recipient"]
    assert rec and rec[0].entity == "third party" and rec[0].unresolved


def test_passive(ex):
    _, found, _ = run(ex, "Your location is shared with advertisers.")
    assert {(t.entity, t.data, t.role) for t in found} == {
        ("we", "geo location", "agent"), ("advertiser", "geo location", "recipient")}
    _, found, _ = run(ex, "Your email address may be disclosed to our affiliates by us.")
    assert {(t.entity, t.entity_source) for t in found} == {("we", "pronoun"), ("affiliate", "lexicon")}


def test_user_subject(ex):
    _, found, _ = run(ex, "You may provide your email address when you register.")
    assert {t.pair for t in found} == {("we", "email address")}
    _, found, _ = run(ex, "You can request deletion of your personal information.")
    assert found == []


def test_spans_inside_sentence_and_roundtrip(ex):
    text = "We collect your email address and share your device id with Acme Metrics."
    _, found, _ = run(ex, text)
    assert found
    for t in found:
        a, b = t.data_span
        assert 0 <= a < b <= len(text)
        assert text[a:b].lower().endswith(t.data_phrase.split()[-1])
        if t.entity_span:
            assert 0 <= t.entity_span[0] < t.entity_span[1] <= len(text)
        assert CusTuple.from_dict(json.loads(json.dumps(t.to_dict()))) == t


_SENTS = ["We collect your email address.", "We share your device id with Acme Metrics.",
          "We do not sell your phone number.", "Your location is shared with advertisers.",
          "You may provide your age.", "Cookies are small files.", "We use your eye tracking data."]


@given(st.lists(st.sampled_from(_SENTS), min_size=1, max_size=5))
@settings(max_examples=40, deadline=None)
def test_extraction_deterministic(ex, picks):
    doc1 = policy_from_text("a", " ".join(picks))
    doc2 = policy_from_text("a", " ".join(picks))
    r1 = ex.document(doc1)
    r2 = ex.document(doc2)
    assert r1.to_dict() == r2.to_dict()
    for t in r1.tuples:
        s = doc1.sentences[t.sentence_index].text
        assert t.data_span[1] <= len(s)


def test_document_outputs(ex):
    doc = policy_from_text("a", "We collect your email address. We will never sell your phone number.")
    ext = ex.document(doc)
    assert ext.cus_sentences == [0, 1]
    assert {t.data for t in ext.claimed_tuples} == {"email address"}
    assert len(ext.negated_tuples) == 1
    assert ext.claimed_data == {"email address"}
    assert doc.sentences[0].tuples


def test_unterminologized_reported(ex):
    _, found, left = run(ex, "We collect your zibbly wobble data.")
    assert found == [] and left == ["zibbly wobble data"]


# -- synthetic corpus -------------------------------------------------------


def test_single_template():
    tpl = [SyntheticTemplate("We will collect your <data>", True)]
    corpus = generate_synthetic_corpus(tpl, [("eye tracking", "eye tracking")])
    assert len(corpus) == 1
    g = corpus[0]
    assert g.text == "We will collect your eye tracking"
    assert g.tuples == (("we", "eye tracking"),)
    assert g.text[g.spans[0][0]:g.spans[0][1]] == "eye tracking"


def test_cartesian_count():
    tpls = [SyntheticTemplate(t, True) for t in ("We collect <data>.", "We use <data>.", "We share <data>.")]
    phrases = [(p, p) for p in ("email", "age", "gender", "ip address")]
    corpus = generate_synthetic_corpus(tpls, phrases)
    assert sum(g.cus for g in corpus) == 12


def test_zero_phrases():
    tpls = [SyntheticTemplate("We collect <data>.", True), SyntheticTemplate("Hello.", False)]
    corpus = generate_synthetic_corpus(tpls, [])
    assert [g.cus for g in corpus] == [False]


def test_multi_slot_distinct():
    tpl = [SyntheticTemplate("We collect <data> and <data>.", True)]
    corpus = generate_synthetic_corpus(tpl, [("age", "age"), ("gender", "gender"), ("email", "email address")])
    for g in corpus:
        assert len({s[2] for s in g.spans}) == 2
        for s, e, p, _ in g.spans:
            assert g.text[s:e] == p


def test_slotless_template_error():
    with pytest.raises(SyntheticTemplateError):
        SyntheticTemplate("We collect things.", True)
    raw = '{\n "cus": [\n  {"text": "We collect <data>."},\n  {"text": "No slot here."}\n ]\n}'
    with pytest.raises(SyntheticTemplateError, match="line 4"):
        parse_templates(raw)


def test_malformed_template_file():
    with pytest.raises(SyntheticTemplateError, match="line 2"):
        parse_templates('{"cus": [\n  {"text": }]}')


def test_shipped_phrase_list(data_ontology):
    phrases = dict(load_phrases(ontology=data_ontology))
    assert len(phrases) >= 40
    for need in ("eye tracking", "hand tracking", "pupil distance"):
        assert need in phrases


def test_jsonl_roundtrip(tmp_path):
    corpus = generate_synthetic_corpus(load_templates()[:3], [("age", "age"), ("email", "email address")])
    p = tmp_path / "c.jsonl"
    write_jsonl(corpus, p)
    assert read_jsonl(p) == corpus
    assert GoldSentence.from_dict(corpus[0].to_dict()) == corpus[0]


def test_evaluate_counts(ex):
    corpus = [GoldSentence("c", "We collect your email address.", True, (), (("we", "email address"),)),
              GoldSentence("n", "Cookies are small files.", False),
              GoldSentence("n2", "We never sell your age.", False)]
    ev = evaluate_extractor(corpus, ex)
    assert ev.recall == 1.0
    # a negated tuple on a non-CUS sentence still counts against the extractor
    assert ev.false_positives == 1 and ev.false_positive_rate == 0.5
