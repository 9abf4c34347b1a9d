import json

import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import percentileofscore

from conftest import build_store
from ppvet.corpus import (
    AppRecord,
    CorpusStore,
    NoPpgError,
    StoreCorruptionError,
    UnknownPlatformError,
    app_availability,
    availability,
    default_platforms,
    ingest_metadata,
    normalize_name,
    percentile_of,
    platform_stats,
    ppg_percentile,
    read_metadata_jsonl,
    reuse_detector,
)
from ppvet.textproc import PageStore


@pytest.fixture
def store(tmp_path):
    return CorpusStore.create(tmp_path / "s")


def test_platforms():
    assert len(default_platforms()) == 10
    assert "Quest" in default_platforms() and "App Lab" in default_platforms()


def test_normalize_name():
    assert normalize_name("Beat Saber!") == normalize_name("beat  saber") == "beat saber"


def test_ingest_and_reload(store):
    s = ingest_metadata(store, [{"app_id": "a", "name": "Alpha", "platforms": ["Quest"]},
                                {"app_id": "b", "name": "Beta", "platforms": ["Rift"], "price": 9.99}])
    assert (s.inserted, s.merged, s.rejected) == (2, 0, [])
    again = CorpusStore(store.root)
    assert [r.app_id for r in again.records()] == ["a", "b"]
    assert again.get("b").price == 9.99
    again.verify()


def test_dedup_merges_and_aliases(store):
    ingest_metadata(store, [{"app_id": "a", "name": "Alpha", "platforms": ["Quest"]}])
    s = ingest_metadata(store, [{"app_id": "a-rift", "name": "ALPHA", "platforms": ["Rift"], "developer": "Acme"}])
    assert s.merged == 1
    rec = store.get("a-rift")
    assert rec.app_id == "a" and rec.platforms == {"Quest", "Rift"} and rec.developer == "Acme"
    assert len(store) == 1


def test_ingest_idempotent(store):
    rows = [{"app_id": "a", "name": "Alpha", "platforms": ["Quest"]},
            {"app_id": "b", "name": "beta", "platforms": ["Quest"]}]
    ingest_metadata(store, rows)
    before = (store.root / "records.jsonl").read_bytes()
    s = ingest_metadata(store, rows)
    assert s.changed == 0 and s.unchanged == 2
    assert (store.root / "records.jsonl").read_bytes() == before


def test_ingest_rejects(store):
    s = ingest_metadata(store, [{"app_id": "a", "name": "A", "platforms": ["Dreamcast"]},
                                {"name": "no id"},
                                {"app_id": "c", "name": "C", "price": -1}])
    assert [r["index"] for r in s.rejected] == [0, 1, 2]
    assert len(store) == 0
    ingest_metadata(store, [{"app_id": "x", "name": "X"}])
    s = ingest_metadata(store, [{"app_id": "x", "name": "Different"}])
    assert s.rejected and "already used" in s.rejected[0]["error"]


def test_unknown_platform(store):
    with pytest.raises(UnknownPlatformError):
        store.by_platform("Dreamcast")


def test_corruption_detected(store):
    ingest_metadata(store, [{"app_id": "a", "name": "Alpha", "platforms": ["Quest"]}])
    (store.root / "records.jsonl").write_text('{"app_id": "a", "name": "Tampered"}\n')
    with pytest.raises(StoreCorruptionError):
        CorpusStore(store.root)
    (store.root / "records.jsonl").write_text("not json\n")
    with pytest.raises(StoreCorruptionError):
        CorpusStore(store.root)


def test_dangling_policy_ref(store):
    ingest_metadata(store, [{"app_id": "a", "name": "Alpha"}])
    store.put_policy("a", "We collect your email.", "text")
    (store.root / "policies" / "a.txt").unlink()
    with pytest.raises(StoreCorruptionError):
        store.verify()


def test_lock_blocks_second_writer(store):
    (store.root / ".lock").write_text("")
    with pytest.raises(RuntimeError, match="locked"):
        ingest_metadata(store, [{"app_id": "a", "name": "Alpha"}])


def test_empty_policy_is_present(store):
    ingest_metadata(store, [{"app_id": "a", "name": "Alpha"}, {"app_id": "b", "name": "Beta"}])
    store.put_policy("a", b"", "text")
    raw = store.load_policy("a")
    assert raw is not None and raw.content.strip() == b""
    assert store.load_policy("b") is None


def test_read_metadata_jsonl(tmp_path):
    p = tmp_path / "m.jsonl"
    p.write_text('{"app_id": "a", "name": "A"}\n\n{"app_id": \n')
    with pytest.raises(ValueError, match="line 3"):
        read_metadata_jsonl(p)


def test_record_roundtrip():
    r = AppRecord("a", "A", frozenset({"Quest"}), genres=frozenset({"x", "a"}))
    assert AppRecord.from_dict(json.loads(json.dumps(r.to_dict()))) == r
    assert AppRecord.from_dict({**r.to_dict(), "extra": 1}) == r


# -- availability -----------------------------------------------------------


def test_availability_three_apps(store):
    ingest_metadata(store, [
        {"app_id": "a", "name": "A", "platforms": ["Quest"], "policy_url": "https://a/p"},
        {"app_id": "b", "name": "B", "platforms": ["Quest"], "policy_url": "https://b/p"},
        {"app_id": "c", "name": "C", "platforms": ["Quest"]},
    ])
    av = availability(store, "Quest")
    assert (av.app_count, av.policy_count) == (3, 2)
    assert round(av.ratio, 3) == 0.667
    assert availability(store, "Rift").ratio is None


def test_homepage_availability(tmp_path):
    pages = PageStore(tmp_path)
    pages.put("https://h/", '<a href="/about">About</a>')
    pages.put("https://h/about", '<a href="/privacy">Privacy</a>')
    rec = AppRecord("a", "A", homepage="https://h/")
    v = app_availability(rec, pages)
    assert v.available and v.via == "homepage" and v.links[0].hop == 2
    assert not app_availability(rec, pages, max_hops=1).available
    assert not app_availability(AppRecord("b", "B"), pages).available
    assert app_availability(AppRecord("c", "C", policy_url="https://c/p"), None).via == "item_page"


# -- percentiles and stats ---------------------------------------------------


@given(st.lists(st.integers(0, 50), min_size=1, max_size=40), st.integers(0, 50))
def test_percentile_matches_scipy(values, v):
    assert percentile_of(values, v) == pytest.approx(percentileofscore(values, v, kind="mean"))


def test_ppg_percentile():
    ppgs = {"a": 0, "b": 10, "c": 10, "d": 30}
    assert ppg_percentile(ppgs, "a") == 12.5
    assert ppg_percentile(ppgs, "b") == 50.0
    with pytest.raises(NoPpgError):
        ppg_percentile(ppgs, "zz")
    with pytest.raises(ValueError):
        percentile_of([], 1)


def test_platform_stats(store):
    ingest_metadata(store, [
        {"app_id": "a", "name": "A", "platforms": ["Quest"], "policy_url": "u"},
        {"app_id": "b", "name": "B", "platforms": ["Quest"], "policy_url": "u"},
        {"app_id": "c", "name": "C", "platforms": ["Quest"]},
    ])
    st_ = platform_stats(store, "Quest", {"a": 2, "b": 5}, {"a": True, "b": False})
    d = st_.to_dict()
    assert d["ppg_mean"] == 3.5 and d["ppg_median"] == 3.5
    assert d["comparable_count"] == 2 and d["overbroad_ratio"] == 0.5
    assert d["availability"] == pytest.approx(0.666667)


def test_reuse_detector(tmp_path):
    s = build_store(tmp_path / "s")
    clusters = reuse_detector(s)
    assert [c.app_ids for c in clusters] == [("app00", "app06", "app12", "app18")]


def test_reuse_ignores_whitespace(store):
    ingest_metadata(store, [{"app_id": "a", "name": "A"}, {"app_id": "b", "name": "B"}, {"app_id": "c", "name": "C"}])
    store.put_policy("a", "We collect\n  data.", "text")
    store.put_policy("b", "<p>We collect data.</p>", "html")
    store.put_policy("c", "Something else.", "text")
    assert [c.app_ids for c in reuse_detector(store)] == [("a", "b")]
