"""End-to-end vetting: configuration, per-app reports and corpus bundles."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import jsonschema

from . import __version__
from .compliance import (
    DEFAULT_K,
    DEFAULT_MAJORITY,
    EvidenceMap,
    UnresolvedEvidenceError,
    consistency_analysis,
    find_counterparts,
    granularity_analysis,
    load_evidence_map,
    minimization_analysis,
)
from .components import ComponentRuleSet, annotate_document, children_policy_check, completeness_verdict, load_ruleset
from .corpus import (
    AppRecord,
    CorpusStore,
    app_availability,
    availability,
    platform_stats,
    ppg_percentile,
    reuse_detector,
)
from .cusextract import CusExtractor, SocVerbList, load_verbs
from .lexicon import (
    DEFAULT_SIMILARITY_THRESHOLD,
    EmbeddingProvider,
    ExactMatchProvider,
    Lexicon,
    TokenJaccardProvider,
    load_lexicon,
)
from .ontology import BoundsResult, Ontology, load_ontology
from .textproc import PageStore, RawDocument, build_policy_document

log = logging.getLogger(__name__)

SCHEMA_VERSION = "1.0"
PASS, FAIL, NOT_EVALUATED = "pass", "fail", "not_evaluated"


class ConfigError(ValueError):
    pass


class InputFormatError(ValueError):
    pass


def _data_path(name: str) -> str:
    return str(resources.files("ppvet.data").joinpath(name))


@dataclass(frozen=True)
class RunConfig:
    data_ontology: str = ""
    entity_ontology: str = ""
    data_lexicon: str = ""
    entity_lexicon: str = ""
    verbs: str = ""
    ruleset: str = ""
    evidence_map: str = ""
    similarity_threshold: float = DEFAULT_SIMILARITY_THRESHOLD
    majority: float = DEFAULT_MAJORITY
    coarse_ctg: int = 2
    k: int = DEFAULT_K
    max_hops: int = 2
    extended_keywords: bool = False
    strict_minimization: bool = False
    provider: str = "jaccard"
    workers: int = 4

    _DEFAULTS = {
        "data_ontology": "data_ontology.json",
        "entity_ontology": "entity_ontology.json",
        "data_lexicon": "data_lexicon.json",
        "entity_lexicon": "entity_lexicon.json",
        "verbs": "soc_verbs.json",
        "ruleset": "component_rules.json",
        "evidence_map": "evidence_map.json",
    }

    def resolved(self) -> "RunConfig":
        """Fill unset paths with the packaged data files and validate."""
        cfg = replace(self, **{k: _data_path(v) for k, v in self._DEFAULTS.items() if not getattr(self, k)})
        cfg.validate()
        return cfg

    def validate(self) -> None:
        for k in self._DEFAULTS:
            p = getattr(self, k)
            if p and not Path(p).is_file():
                raise ConfigError(f"{k}: no such file {p}")
        if not 0 < self.similarity_threshold <= 1:
            raise ConfigError("similarity_threshold must be in (0, 1]")
        if not 0 < self.majority <= 1:
            raise ConfigError("majority must be in (0, 1]")
        if self.coarse_ctg < 1:
            raise ConfigError("coarse_ctg must be >= 1")
        if self.k < 1:
            raise ConfigError("k must be >= 1")
        if self.max_hops < 1:
            raise ConfigError("max_hops must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.provider not in ("jaccard", "exact", "none"):
            raise ConfigError("provider must be jaccard, exact or none")

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        path = Path(path)
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        names = {f.name for f in fields(cls)}
        unknown = sorted(set(doc) - names)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        # relative paths in a config file are relative to that file
        for k in cls._DEFAULTS:
            if doc.get(k) and not Path(doc[k]).is_absolute():
                doc[k] = str((path.parent / doc[k]).resolve())
        return cls(**doc)

    def with_overrides(self, **kw: Any) -> "RunConfig":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})


def _file_info(role: str, path: str, version: str) -> dict:
    data = Path(path).read_bytes()
    return {"role": role, "file": Path(path).name, "version": version,
            "sha256": hashlib.sha256(data).hexdigest()}


class Toolkit:
    """Everything loaded from a RunConfig, shared read-only by workers."""

    def __init__(self, config: RunConfig):
        cfg = config.resolved()
        self.config = cfg
        try:
            self.data_ontology: Ontology = load_ontology(cfg.data_ontology)
            self.entity_ontology: Ontology = load_ontology(cfg.entity_ontology)
            self.data_lexicon: Lexicon = load_lexicon(cfg.data_lexicon, self.data_ontology)
            self.entity_lexicon: Lexicon = load_lexicon(cfg.entity_lexicon, self.entity_ontology)
            self.verbs: SocVerbList = load_verbs(cfg.verbs)
            self.rules: ComponentRuleSet = load_ruleset(cfg.ruleset)
            self.evidence_map: EvidenceMap = load_evidence_map(cfg.evidence_map, self.data_ontology)
        except (ValueError, KeyError) as exc:
            raise ConfigError(str(exc)) from exc
        self.provider: EmbeddingProvider | None = {
            "jaccard": TokenJaccardProvider(), "exact": ExactMatchProvider(), "none": None}[cfg.provider]
        self.extractor = CusExtractor(self.verbs, self.data_lexicon, self.entity_lexicon,
                                      self.provider, cfg.similarity_threshold)
        self.data_files = [
            _file_info("data_ontology", cfg.data_ontology, self.data_ontology.version),
            _file_info("entity_ontology", cfg.entity_ontology, self.entity_ontology.version),
            _file_info("data_lexicon", cfg.data_lexicon, self.data_lexicon.version),
            _file_info("entity_lexicon", cfg.entity_lexicon, self.entity_lexicon.version),
            _file_info("verbs", cfg.verbs, self.verbs.version),
            _file_info("ruleset", cfg.ruleset, self.rules.version),
            _file_info("evidence_map", cfg.evidence_map, self.evidence_map.version),
        ]

    def settings(self) -> dict:
        c = self.config
        return {"similarity_threshold": c.similarity_threshold, "majority": c.majority,
                "coarse_ctg": c.coarse_ctg, "k": c.k, "max_hops": c.max_hops,
                "extended_keywords": c.extended_keywords, "strict_minimization": c.strict_minimization,
                "provider": c.provider}


# -- per-app analysis ---------------------------------------------------------


@dataclass
class AppAnalysis:
    """Everything about one app that does not need the rest of the corpus."""

    record: AppRecord
    has_policy: bool
    c1: dict
    c2: dict
    extraction: dict
    granularity: dict | None
    bounds: BoundsResult | None
    children: dict | None
    evidence: list[str] | None
    degraded: list[str] = field(default_factory=list)

    @property
    def lower(self) -> frozenset[str] | None:
        return self.bounds.lower if self.bounds is not None and self.bounds.claimed else None

    @property
    def ppg(self) -> int | None:
        return self.bounds.ppg if self.bounds is not None and self.bounds.claimed else None


def _status(status: str, reason: str = "", **extra) -> dict:
    return {"status": status, "reason": reason, **extra}


def analyze_app(
    tk: Toolkit,
    record: AppRecord,
    policy: RawDocument | None,
    evidence: Sequence[str] | None = None,
    pages: PageStore | None = None,
) -> AppAnalysis:
    cfg = tk.config
    degraded: list[str] = []

    if record.policy_url or record.homepage:
        av = app_availability(record, pages, cfg.max_hops, cfg.extended_keywords)
        c1 = _status(PASS if av.available else FAIL, "" if av.available else "no policy link on item page or within reach of the homepage",
                     via=av.via, links=[lk.to_dict() for lk in av.links])
    else:
        c1 = _status(NOT_EVALUATED, "no item page or homepage metadata", via="", links=[])

    if policy is None:
        return AppAnalysis(record, False, c1, _status(NOT_EVALUATED, "no policy document"),
                           {"cus_sentences": [], "tuples": [], "unterminologized": [], "sentence_count": 0},
                           None, None, None, list(evidence) if evidence is not None else None, degraded)

    doc = build_policy_document(policy)
    if doc.provenance.get("degraded"):
        degraded.append("textproc: HTML parse fell back to tag stripping")
    annotate_document(doc, tk.rules)
    comp = completeness_verdict(doc)
    c2 = _status(PASS if comp.complete else FAIL,
                 "" if comp.complete else ("no component found" if comp.zero_components else "missing components"),
                 **comp.to_dict())
    ex = tk.extractor.document(doc, record.identity())
    gr = granularity_analysis(ex.tuples, tk.data_ontology, tk.entity_ontology, cfg.coarse_ctg)
    extraction = {
        "sentence_count": len(doc.sentences),
        "cus_sentences": ex.cus_sentences,
        "tuples": [t.to_dict() for t in ex.tuples],
        "negated_tuples": len(ex.negated_tuples),
        "unterminologized": [{"sentence_index": i, "phrase": p} for i, p in ex.unterminologized],
    }
    return AppAnalysis(record, True, c1, c2, extraction, gr.to_dict(), gr.bounds,
                       children_policy_check(doc, record.genres),
                       list(evidence) if evidence is not None else None, degraded)


def _c3(a: AppAnalysis, percentile: float | None, have_corpus: bool) -> dict:
    if not a.has_policy:
        return _status(NOT_EVALUATED, "no policy document", granularity=None, ppg=None, ppg_percentile=None)
    g = a.granularity
    if not g["tuples"]:
        return _status(NOT_EVALUATED, "policy makes no CUS claims", granularity=g, ppg=None, ppg_percentile=None)
    coarse = g["coarse_tuple_count"]
    reason = f"{coarse} coarse-grained tuple(s)" if coarse else ""
    if percentile is None and not have_corpus:
        reason = (reason + "; " if reason else "") + "percentile needs a corpus"
    return _status(FAIL if coarse else PASS, reason, granularity=g, ppg=g["ppg"],
                   ppg_percentile=None if percentile is None else round(percentile, 6))


def _c4(tk: Toolkit, a: AppAnalysis, counterparts: Mapping | None, lowers: Mapping[str, frozenset[str]]) -> dict:
    cfg = tk.config
    if a.lower is None:
        return _status(NOT_EVALUATED, "no claimed data to compare", comparable=False, counterparts=[],
                       findings=[], majority=cfg.majority)
    if counterparts is None:
        return _status(NOT_EVALUATED, "counterpart search needs a corpus", comparable=False, counterparts=[],
                       findings=[], majority=cfg.majority)
    if not counterparts["counterparts"]:
        return _status(NOT_EVALUATED, "no counterparts found; not comparable", comparable=False,
                       counterparts=[], findings=[], majority=cfg.majority)
    ids = [c["app_id"] for c in counterparts["counterparts"]]
    findings = minimization_analysis(a.lower, [lowers[i] for i in ids], tk.data_ontology, cfg.majority,
                                     cfg.strict_minimization)
    return _status(FAIL if findings else PASS, f"{len(findings)} overbroad term(s)" if findings else "",
                   comparable=True, counterparts=counterparts["counterparts"],
                   findings=[f.to_dict() for f in findings], majority=cfg.majority)


def _c5(tk: Toolkit, a: AppAnalysis) -> dict:
    if a.evidence is None:
        return _status(NOT_EVALUATED, "no code evidence supplied", no_policy=not a.has_policy, findings=[])
    bounds = a.bounds if a.has_policy else None
    try:
        rep = consistency_analysis(a.evidence, tk.evidence_map, bounds)
    except UnresolvedEvidenceError as exc:
        raise InputFormatError(f"{a.record.app_id}: {exc}") from exc
    d = rep.to_dict()
    bad = len(d["vague"]) + len(d["inconsistent"])
    if not rep.findings:
        return _status(PASS, "no data-sensitive evidence", **d)
    reason = "no privacy policy" if rep.no_policy else (f"{bad} term(s) vague or undisclosed" if bad else "")
    return _status(FAIL if bad else PASS, reason, **d)


def assemble_report(
    tk: Toolkit,
    a: AppAnalysis,
    percentile: float | None = None,
    counterparts: Mapping | None = None,
    lowers: Mapping[str, frozenset[str]] | None = None,
    have_corpus: bool = False,
) -> dict:
    r = a.record
    report = {
        "schema_version": SCHEMA_VERSION,
        "toolkit": {"name": "ppvet", "version": __version__},
        "data_files": tk.data_files,
        "settings": tk.settings(),
        "app": {"app_id": r.app_id, "name": r.name, "platforms": sorted(r.platforms),
                "developer": r.developer, "genres": sorted(r.genres)},
        "has_policy": a.has_policy,
        "c1_availability": a.c1,
        "c2_completeness": a.c2,
        "c3_granularity": _c3(a, percentile, have_corpus),
        "c4_minimization": _c4(tk, a, counterparts, lowers or {}),
        "c5_consistency": _c5(tk, a),
        "children_policy": a.children,
        "extraction": a.extraction,
        "degraded": a.degraded,
    }
    return report


def gate_failed(report: Mapping) -> bool:
    """True when any of C2-C5 failed; availability alone never trips the gate."""
    return any(report[k]["status"] == FAIL for k in
               ("c2_completeness", "c3_granularity", "c4_minimization", "c5_consistency"))


# -- entry points -------------------------------------------------------------


def read_policy_input(path: str | Path, app_id: str) -> RawDocument:
    path = Path(path)
    try:
        content = path.read_bytes()
    except OSError as exc:
        raise InputFormatError(f"cannot read policy {path}: {exc}") from exc
    head = content[:2048].lower()
    is_html = path.suffix.lower() in (".html", ".htm") or b"<html" in head or b"<body" in head or b"<p" in head
    if not content.strip():
        content = b" "
    return RawDocument(app_id, "policy_html" if is_html else "policy_text", content, str(path.name))


def read_evidence_input(path: str | Path) -> list[str]:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise InputFormatError(f"cannot read evidence {path}: {exc}") from exc
    items = doc.get("evidence", []) if isinstance(doc, Mapping) else doc
    if not isinstance(items, list) or not all(isinstance(x, str) for x in items):
        raise InputFormatError(f"{path}: evidence must be a list of strings")
    return items


def vet_policy(
    tk: Toolkit,
    policy: RawDocument | None,
    record: AppRecord,
    evidence: Sequence[str] | None = None,
    pages: PageStore | None = None,
) -> dict:
    """Vet one app on its own; corpus-relative parts are marked not evaluated."""
    a = analyze_app(tk, record, policy, evidence, pages)
    report = assemble_report(tk, a)
    validate_report(report)
    return report


@dataclass
class CorpusBundle:
    reports: list[dict]
    platform_stats: list[dict]
    reuse: list[dict]
    warnings: list[str]
    ppgs: dict[str, int]

    def summary(self) -> dict:
        statuses: dict[str, dict[str, int]] = {}
        for r in self.reports:
            for k in ("c1_availability", "c2_completeness", "c3_granularity", "c4_minimization", "c5_consistency"):
                s = statuses.setdefault(k, {PASS: 0, FAIL: 0, NOT_EVALUATED: 0})
                s[r[k]["status"]] += 1
        return {"apps": len(self.reports), "criteria": statuses, "reuse_clusters": len(self.reuse),
                "warnings": self.warnings}


def vet_corpus(tk: Toolkit, store: CorpusStore, workers: int | None = None) -> CorpusBundle:
    """Vet every app in the store, then the corpus-relative criteria."""
    store.verify()
    records = store.records()
    warnings = []
    if not records:
        warnings.append("corpus store is empty")
    pages = store.page_store()

    def phase1(r: AppRecord) -> AppAnalysis:
        return analyze_app(tk, r, store.load_policy(r.app_id), store.load_evidence(r.app_id), pages)

    with ThreadPoolExecutor(max_workers=workers or tk.config.workers) as pool:
        analyses = list(pool.map(phase1, records))
    ppgs = {a.record.app_id: a.ppg for a in analyses if a.ppg is not None}
    lowers = {a.record.app_id: a.lower for a in analyses if a.lower is not None}

    def phase2(a: AppAnalysis) -> dict:
        pct = ppg_percentile(ppgs, a.record.app_id) if a.record.app_id in ppgs else None
        cps = None
        if a.lower is not None:
            cps = find_counterparts(a.record, store, tk.config.k,
                                    eligible=lambda r: r.app_id in lowers).to_dict()
        return assemble_report(tk, a, pct, cps, lowers, have_corpus=True)

    with ThreadPoolExecutor(max_workers=workers or tk.config.workers) as pool:
        reports = list(pool.map(phase2, analyses))
    for rep in reports:
        validate_report(rep)

    overbroad = {r["app"]["app_id"]: r["c4_minimization"]["status"] == FAIL
                 for r in reports if r["c4_minimization"]["comparable"]}
    stats = []
    for p in store.platforms:
        av = availability(store, p, tk.config.max_hops, tk.config.extended_keywords)
        stats.append(platform_stats(store, p, ppgs, overbroad, av).to_dict())
    reuse = [c.to_dict() for c in reuse_detector(store)]
    return CorpusBundle(reports, stats, reuse, warnings, ppgs)


# -- schema and rendering -----------------------------------------------------


def report_schema() -> dict:
    return json.loads(resources.files("ppvet.data").joinpath("report.schema.json").read_text(encoding="utf-8"))


def validate_report(report: Mapping) -> None:
    jsonschema.validate(report, report_schema())


def dumps(obj: Any) -> str:
    return json.dumps(obj, indent=1, sort_keys=True, ensure_ascii=False) + "\n"


_LABELS = {PASS: "PASS", FAIL: "FAIL", NOT_EVALUATED: "NOT EVALUATED"}


def render_text(report: Mapping) -> str:
    """Plain-language summary; not-evaluated criteria are spelled out."""
    app = report["app"]
    lines = [f"{app['app_id']} ({app['name']})"]
    names = [("c1_availability", "C1 availability"), ("c2_completeness", "C2 completeness"),
             ("c3_granularity", "C3 granularity"), ("c4_minimization", "C4 minimization"),
             ("c5_consistency", "C5 consistency")]
    for key, label in names:
        sec = report[key]
        line = f"  {label:<17} {_LABELS[sec['status']]}"
        if sec.get("reason"):
            line += f"  ({sec['reason']})"
        lines.append(line)
    c2 = report["c2_completeness"]
    if c2.get("missing"):
        lines.append(f"    missing: {', '.join(c2['missing'])}")
    c3 = report["c3_granularity"]
    if c3.get("ppg") is not None:
        pct = c3.get("ppg_percentile")
        lines.append(f"    ppg {c3['ppg']}" + (f", percentile {pct:.1f}" if pct is not None else ""))
        if c3["granularity"]["coarse_data_terms"]:
            lines.append(f"    coarse data terms: {', '.join(c3['granularity']['coarse_data_terms'])}")
    for f in report["c4_minimization"].get("findings", []):
        lines.append(f"    overbroad: {f['term']} ({f['covered']}/{f['total']} counterparts)")
    c5 = report["c5_consistency"]
    for k in ("vague", "inconsistent"):
        if c5.get(k):
            lines.append(f"    {k}: {', '.join(c5[k])}")
    ch = report.get("children_policy")
    if ch and not ch["addresses_children"]:
        lines.append("    children: app is in a kids/family/education genre but the policy does not address children")
    for d in report.get("degraded", []):
        lines.append(f"    degraded: {d}")
    return "\n".join(lines) + "\n"


STATS_COLUMNS = ["platform", "app_count", "policy_count", "availability", "ppg_mean", "ppg_median",
                 "comparable_count", "overbroad_count", "overbroad_ratio"]


def stats_csv(rows: Iterable[Mapping]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, STATS_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: ("" if r.get(k) is None else r[k]) for k in STATS_COLUMNS})
    return buf.getvalue()


def write_bundle(bundle: CorpusBundle, out: str | Path, figures: bool = True) -> list[Path]:
    """Reports, CSV/JSON stats, text summary and (optionally) figures under ``out``."""
    out = Path(out)
    (out / "reports").mkdir(parents=True, exist_ok=True)
    written = []

    def put(rel: str, text: str):
        p = out / rel
        p.write_text(text, encoding="utf-8")
        written.append(p)

    for r in bundle.reports:
        put(f"reports/{r['app']['app_id']}.json", dumps(r))
    put("platform_stats.json", dumps(bundle.platform_stats))
    put("platform_stats.csv", stats_csv(bundle.platform_stats))
    put("reuse.json", dumps(bundle.reuse))
    put("summary.json", dumps(bundle.summary()))
    put("summary.txt", "".join(render_text(r) for r in bundle.reports) or "no apps\n")
    if figures:
        from . import plotting
        written.extend(plotting.corpus_figures(bundle, out / "figures"))
    return written
