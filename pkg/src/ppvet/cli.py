"""Command-line entry point.

Exit codes report tool health: 0 for a clean run whatever the verdicts,
1 when ``--gate`` is given and a gated check failed, 2 for configuration
or input errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .corpus import (
    AppRecord,
    CorpusStore,
    StoreCorruptionError,
    availability,
    ingest_metadata,
    read_metadata_jsonl,
    reuse_detector,
)
from .cusextract import (
    SyntheticTemplateError,
    evaluate_extractor,
    generate_synthetic_corpus,
    load_phrases,
    load_templates,
    write_jsonl,
)
from .lexicon import ClusterProposal, LexiconError, cluster_unterminologized, merge_lexicon
from .ontology import UnknownTermError
from .pipeline import (
    ConfigError,
    InputFormatError,
    RunConfig,
    Toolkit,
    dumps,
    gate_failed,
    read_evidence_input,
    read_policy_input,
    render_text,
    stats_csv,
    vet_corpus,
    vet_policy,
    write_bundle,
)
from .textproc import PageStore

log = logging.getLogger("ppvet")

EXIT_OK, EXIT_GATE, EXIT_ERROR = 0, 1, 2

# metadata JSONL keys that point at files instead of describing the app
_FILE_KEYS = ("policy_file", "evidence_file", "pages")


def _config_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("configuration (overrides --config)")
    g.add_argument("--config", help="JSON config file")
    for name in RunConfig._DEFAULTS:
        g.add_argument("--" + name.replace("_", "-"), dest=name, metavar="PATH")
    g.add_argument("--similarity-threshold", type=float)
    g.add_argument("--majority", type=float)
    g.add_argument("--coarse-ctg", type=int)
    g.add_argument("-k", type=int, dest="k", help="counterparts per app")
    g.add_argument("--max-hops", type=int)
    g.add_argument("--extended-keywords", action="store_true", default=None)
    g.add_argument("--strict-minimization", action="store_true", default=None)
    g.add_argument("--provider", choices=["jaccard", "exact", "none"])
    g.add_argument("--workers", type=int)


def _toolkit(args) -> Toolkit:
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    names = list(RunConfig._DEFAULTS) + ["similarity_threshold", "majority", "coarse_ctg", "k", "max_hops",
                                         "extended_keywords", "strict_minimization", "provider", "workers"]
    cfg = cfg.with_overrides(**{n: getattr(args, n, None) for n in names})
    return Toolkit(cfg)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ppvet", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"ppvet {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("vet", help="vet one policy")
    p.add_argument("policy", nargs="?", help="policy file (HTML or text); omit for an app with no policy")
    p.add_argument("--metadata", help="JSON file with the app record")
    p.add_argument("--app-id")
    p.add_argument("--name")
    p.add_argument("--developer", default="")
    p.add_argument("--genre", action="append", default=[])
    p.add_argument("--evidence", help="JSON list of code-evidence items")
    p.add_argument("--pages", help="page store directory for homepage link search")
    p.add_argument("--out", help="write report.json and report.txt here")
    p.add_argument("--text", action="store_true", help="print the plain-text summary instead of JSON")
    p.add_argument("--gate", action="store_true", help="exit 1 if C2-C5 has a failure")
    _config_args(p)

    p = sub.add_parser("vet-corpus", help="vet every app in a corpus store")
    p.add_argument("store")
    p.add_argument("--out", required=True)
    p.add_argument("--figures", dest="figures", action="store_true", default=True)
    p.add_argument("--no-figures", dest="figures", action="store_false")
    p.add_argument("--gate", action="store_true")
    _config_args(p)

    p = sub.add_parser("ingest", help="add app metadata (and policy/evidence files) to a store")
    p.add_argument("store")
    p.add_argument("metadata", help="JSONL, one app per line")
    p.add_argument("--platform", action="append", help="platform names for a new store")

    p = sub.add_parser("gen-synthetic", help="build the synthetic CUS corpus and score the extractor")
    p.add_argument("--templates")
    p.add_argument("--phrases")
    p.add_argument("--out", required=True, help="gold corpus JSONL")
    p.add_argument("--gate", action="store_true", help="exit 1 below recall 0.95 or above FPR 0.05")
    _config_args(p)

    p = sub.add_parser("cluster-phrases", help="propose lexicon entries from unterminologized phrases")
    p.add_argument("phrases", help="text file (one phrase per line) or a vet report / reports directory")
    p.add_argument("--out", help="write proposals JSON here")
    p.add_argument("--apply", metavar="PROPOSALS",
                   help="merge reviewed proposals (those with a term set) into the data lexicon")
    p.add_argument("--lexicon-out", help="where --apply writes the merged lexicon")
    _config_args(p)

    p = sub.add_parser("stats", help="per-platform availability and policy reuse for a store")
    p.add_argument("store")
    p.add_argument("--max-hops", type=int, default=2)
    p.add_argument("--extended-keywords", action="store_true")
    return parser


# -- subcommands --------------------------------------------------------------


def _record_from_args(args) -> AppRecord:
    meta: dict = {}
    if args.metadata:
        try:
            meta = json.loads(Path(args.metadata).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise InputFormatError(f"cannot read metadata {args.metadata}: {exc}") from exc
    if args.app_id:
        meta["app_id"] = args.app_id
    if args.name:
        meta["name"] = args.name
    if args.developer:
        meta["developer"] = args.developer
    if args.genre:
        meta["genres"] = args.genre
    if "app_id" not in meta:
        stem = Path(args.policy).stem if args.policy else ""
        if not stem:
            raise InputFormatError("app id needed: pass --app-id or --metadata")
        meta["app_id"] = stem
    meta.setdefault("name", meta["app_id"])
    return AppRecord.from_dict(meta)


def cmd_vet(args) -> int:
    tk = _toolkit(args)
    record = _record_from_args(args)
    policy = read_policy_input(args.policy, record.app_id) if args.policy else None
    evidence = read_evidence_input(args.evidence) if args.evidence else None
    pages = PageStore(args.pages) if args.pages else None
    report = vet_policy(tk, policy, record, evidence, pages)
    text = render_text(report)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(dumps(report), encoding="utf-8")
        (out / "report.txt").write_text(text, encoding="utf-8")
        sys.stdout.write(text)
    else:
        sys.stdout.write(text if args.text else dumps(report))
    return EXIT_GATE if args.gate and gate_failed(report) else EXIT_OK


def cmd_vet_corpus(args) -> int:
    tk = _toolkit(args)
    try:
        store = CorpusStore(args.store)
    except FileNotFoundError as exc:
        raise InputFormatError(str(exc)) from exc
    bundle = vet_corpus(tk, store)
    for w in bundle.warnings:
        log.warning(w)
    written = write_bundle(bundle, args.out, figures=args.figures)
    s = bundle.summary()
    print(f"{s['apps']} apps vetted; {len(written)} files written to {args.out}")
    for key, counts in s["criteria"].items():
        print(f"  {key:<17} pass {counts['pass']}  fail {counts['fail']}  not evaluated {counts['not_evaluated']}")
    if args.gate and any(gate_failed(r) for r in bundle.reports):
        return EXIT_GATE
    return EXIT_OK


def _load_line_ref(base: Path, ref: str) -> Path:
    p = Path(ref)
    return p if p.is_absolute() else base / p


def cmd_ingest(args) -> int:
    root = Path(args.store)
    store = CorpusStore(root) if (root / "store.json").exists() or (root / "records.jsonl").exists() \
        else CorpusStore.create(root, args.platform)
    meta_path = Path(args.metadata)
    try:
        rows = read_metadata_jsonl(meta_path)
    except (OSError, ValueError) as exc:
        raise InputFormatError(str(exc)) from exc
    records = [{k: v for k, v in row.items() if k not in _FILE_KEYS} for row in rows]
    summary = ingest_metadata(store, records)
    rejected = {r["index"] for r in summary.rejected}
    pages = store.page_store()
    for n, row in enumerate(rows):
        if n in rejected:
            continue
        app_id = row["app_id"]
        if row.get("policy_file"):
            src = _load_line_ref(meta_path.parent, row["policy_file"])
            kind = "html" if src.suffix.lower() in (".html", ".htm") else "text"
            store.put_policy(app_id, src.read_bytes(), kind)
        if row.get("evidence_file"):
            store.put_evidence(app_id, read_evidence_input(_load_line_ref(meta_path.parent, row["evidence_file"])))
        for url, ref in sorted((row.get("pages") or {}).items()):
            pages.put(url, _load_line_ref(meta_path.parent, ref).read_bytes())
    print(json.dumps(summary.to_dict(), sort_keys=True))
    return EXIT_ERROR if summary.rejected and not summary.changed and not summary.unchanged else EXIT_OK


GATE_RECALL, GATE_FPR = 0.95, 0.05


def cmd_gen_synthetic(args) -> int:
    tk = _toolkit(args)
    try:
        templates = load_templates(args.templates)
        phrases = load_phrases(args.phrases, tk.data_ontology)
    except OSError as exc:
        raise InputFormatError(str(exc)) from exc
    corpus = generate_synthetic_corpus(templates, phrases)
    write_jsonl(corpus, args.out)
    ev = evaluate_extractor(corpus, tk.extractor)
    print(f"gold sentences: {len(corpus)} ({ev.cus_sentences} CUS, {ev.non_cus_sentences} non-CUS)")
    print(f"recall: {ev.recall:.4f} ({ev.recovered}/{ev.gold_tuples})")
    print(f"false positive rate: {ev.false_positive_rate:.4f} ({ev.false_positives}/{ev.non_cus_sentences})")
    ok = ev.recall >= GATE_RECALL and ev.false_positive_rate <= GATE_FPR
    if not ok:
        for m in ev.misses[:10]:
            log.warning("miss: %s", json.dumps(m, sort_keys=True))
    return EXIT_GATE if args.gate and not ok else EXIT_OK


def _phrases_from(path: Path) -> list[str]:
    if path.is_dir():
        files = sorted(path.rglob("*.json"))
    elif path.suffix == ".json":
        files = [path]
    else:
        return [ln.strip() for ln in path.read_text(encoding="utf-8").splitlines() if ln.strip()]
    out = []
    for f in files:
        doc = json.loads(f.read_text(encoding="utf-8"))
        if isinstance(doc, dict) and "extraction" in doc:
            out.extend(u["phrase"] for u in doc["extraction"].get("unterminologized", []))
    return out


def cmd_cluster_phrases(args) -> int:
    tk = _toolkit(args)
    if args.apply:
        try:
            doc = json.loads(Path(args.apply).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise InputFormatError(f"cannot read proposals {args.apply}: {exc}") from exc
        accepted = [ClusterProposal.from_dict(d) for d in doc.get("proposals", doc) if d.get("term")]
        merged = merge_lexicon(tk.data_lexicon, accepted)
        out = Path(args.lexicon_out or tk.config.data_lexicon)
        ref = Path(tk.config.data_ontology)
        out.write_text(json.dumps(merged.to_dict(ref.name if ref.parent == out.parent else str(ref)),
                                  indent=1) + "\n", encoding="utf-8")
        print(f"added {len(merged) - len(tk.data_lexicon)} entries; wrote {out}")
        return EXIT_OK
    provider = tk.provider
    if provider is None:
        raise ConfigError("cluster-phrases needs a similarity provider")
    try:
        phrases = _phrases_from(Path(args.phrases))
    except (OSError, json.JSONDecodeError) as exc:
        raise InputFormatError(str(exc)) from exc
    props = cluster_unterminologized(provider, phrases, tk.config.similarity_threshold, tk.data_lexicon)
    text = dumps({"threshold": tk.config.similarity_threshold, "proposals": [p.to_dict() for p in props]})
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        print(f"{len(props)} proposals from {len(set(phrases))} phrases; wrote {args.out}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_stats(args) -> int:
    try:
        store = CorpusStore(args.store)
    except FileNotFoundError as exc:
        raise InputFormatError(str(exc)) from exc
    store.verify()
    rows = []
    for p in store.platforms:
        av = availability(store, p, args.max_hops, args.extended_keywords)
        rows.append({"platform": p, "app_count": av.app_count, "policy_count": av.policy_count,
                     "availability": None if av.ratio is None else round(av.ratio, 6)})
    sys.stdout.write(stats_csv(rows))
    reuse = reuse_detector(store)
    print(f"# reuse clusters: {len(reuse)} covering {sum(c.size for c in reuse)} apps", file=sys.stderr)
    return EXIT_OK


COMMANDS = {
    "vet": cmd_vet,
    "vet-corpus": cmd_vet_corpus,
    "ingest": cmd_ingest,
    "gen-synthetic": cmd_gen_synthetic,
    "cluster-phrases": cmd_cluster_phrases,
    "stats": cmd_stats,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, InputFormatError, SyntheticTemplateError, LexiconError, UnknownTermError,
            StoreCorruptionError, ValueError, OSError) as exc:
        print(f"ppvet: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
