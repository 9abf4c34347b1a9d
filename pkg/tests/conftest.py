import json
import random
from importlib import resources
from pathlib import Path

import pytest

from ppvet.lexicon import Lexicon, SynonymEntry, load_lexicon
from ppvet.ontology import Ontology, load_ontology

DATA = resources.files("ppvet.data")

HEALTH_ONTO = {
    "kind": "data",
    "root": "pii",
    "nodes": ["pii", "health", "workout", "blood sugar"],
    "edges": [["pii", "health"], ["health", "workout"], ["health", "blood sugar"]],
}


@pytest.fixture
def health_onto() -> Ontology:
    return load_ontology(HEALTH_ONTO)


@pytest.fixture
def health_lexicon(health_onto) -> Lexicon:
    return Lexicon(health_onto, [SynonymEntry("health information", "health"), SynonymEntry("workout data", "workout"),
                          SynonymEntry("blood sugar", "blood sugar")])


@pytest.fixture(scope="session")
def data_ontology() -> Ontology:
    return load_ontology(DATA / "data_ontology.json")


@pytest.fixture(scope="session")
def entity_ontology() -> Ontology:
    return load_ontology(DATA / "entity_ontology.json")


@pytest.fixture(scope="session")
def data_lexicon(data_ontology) -> Lexicon:
    return load_lexicon(DATA / "data_lexicon.json", data_ontology)


@pytest.fixture(scope="session")
def entity_lexicon(entity_ontology) -> Lexicon:
    return load_lexicon(DATA / "entity_lexicon.json", entity_ontology)


def random_dag(rng: random.Random, n: int, p: float = 0.3, kind: str = "data") -> Ontology:
    """Rooted DAG on n nodes: node 0 is the root, every other node gets a parent with a lower index."""
    names = [f"n{i}" for i in range(n)]
    edges = set()
    for j in range(1, n):
        edges.add((names[rng.randrange(j)], names[j]))
        for i in range(j):
            if rng.random() < p:
                edges.add((names[i], names[j]))
    return Ontology(kind, names[0], names, sorted(edges))


def write_health_toolkit_files(d: Path) -> dict:
    """Config pieces that swap the packaged data ontology for a small health ontology."""
    (d / "onto.json").write_text(json.dumps(HEALTH_ONTO))
    (d / "lex.json").write_text(json.dumps({
        "version": "t", "ontology": "onto.json",
        "entries": [{"phrase": "health information", "term": "health"},
                    {"phrase": "workout data", "term": "workout"},
                    {"phrase": "blood sugar", "term": "blood sugar"}]}))
    (d / "emap.json").write_text(json.dumps({
        "version": "t",
        "entries": [{"id": "glucose", "kind": "api", "pattern": "Glucose.*", "data_term": "blood sugar"},
                    {"id": "steps", "kind": "api", "pattern": "Steps.*", "data_term": "workout"}]}))
    return {"data_ontology": str(d / "onto.json"), "data_lexicon": str(d / "lex.json"),
            "evidence_map": str(d / "emap.json")}


POLICY_SENTENCES = [
    "We collect your email address and your age when you register.",
    "We may collect your eye tracking data to improve rendering.",
    "We share your device id with our analytics partners.",
    "Google Analytics may collect your IP address.",
    "We collect your health information such as your workout data.",
    "We use your hand tracking data and your voice recordings.",
    "We will never sell your phone number.",
    "We retain personal information for as long as your account is active.",
    "We use encryption to protect your personal information.",
    "You may opt out of marketing emails at any time.",
    "You have the right to access and delete your personal information.",
    "If we modify this Policy, we will notify you.",
    "We do not knowingly collect personal information from children under 13.",
    "Your location is shared with advertisers.",
]
EVIDENCE = ["microphone", "android.permission.CAMERA", "eye_tracking", "android.permission.ACCESS_FINE_LOCATION",
            "hand_tracking"]
GENRES = ["Action", "Education", "Social", "Puzzle"]


def fixture_rows(n: int = 20, seed: int = 11) -> list[dict]:
    """Metadata rows plus in-memory policy/evidence payloads for a synthetic store."""
    rng = random.Random(seed)
    rows = []
    shared = " ".join(POLICY_SENTENCES[:6])
    for i in range(n):
        app_id = f"app{i:02d}"
        row = {"app_id": app_id, "name": f"Game {i:02d}", "platforms": [["Quest", "Rift", "Sidequest"][i % 3]],
               "genres": [GENRES[i % len(GENRES)]], "developer": f"Studio {i % 5}",
               "description": " ".join(rng.sample(["vr", "sword", "arena", "puzzle", "music", "rhythm",
                                                    "social", "chat", "space", "learn"], 4)),
               "recommendations": sorted({f"app{rng.randrange(n):02d}" for _ in range(3)} - {app_id})}
        if i % 7 == 3:
            row["homepage"] = f"https://studio{i}.example/"
        elif i % 9 != 4:
            row["policy_url"] = f"https://studio{i}.example/privacy"
        if i % 9 != 4:
            if i % 6 == 0:
                row["_policy"] = shared
            elif i == 5:
                row["_policy"] = ""
            else:
                k = rng.randint(3, len(POLICY_SENTENCES))
                row["_policy"] = " ".join(rng.sample(POLICY_SENTENCES, k))
        if i % 3 == 1:
            row["_evidence"] = rng.sample(EVIDENCE, rng.randint(1, 3))
        rows.append(row)
    return rows


def build_store(root: Path, n: int = 20, seed: int = 11):
    from ppvet.corpus import CorpusStore, ingest_metadata

    rows = fixture_rows(n, seed)
    store = CorpusStore.create(root)
    ingest_metadata(store, [{k: v for k, v in r.items() if not k.startswith("_")} for r in rows])
    pages = store.page_store()
    for r in rows:
        if "_policy" in r:
            store.put_policy(r["app_id"], r["_policy"], "text")
        if "_evidence" in r:
            store.put_evidence(r["app_id"], r["_evidence"])
        if r.get("homepage"):
            link = "About us" if r["app_id"].endswith("7") else "Privacy Policy"
            pages.put(r["homepage"], f'<a href="{r["homepage"]}legal">{link}</a>')
    return store


# -- acceptance reporting: one line per criterion in the terminal summary ----

_CRITERIA: dict[str, str] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    name = mark.args[0]
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        ok = rep.outcome == "passed"
        if _CRITERIA.get(name) != "FAIL":
            _CRITERIA[name] = "PASS" if ok else "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_CRITERIA):
        terminalreporter.write_line(f"{_CRITERIA[name]}  {name}")
