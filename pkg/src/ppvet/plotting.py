"""Corpus figures rendered with matplotlib's Agg backend.

Output is byte-stable for a given bundle: PNG metadata carries no software
or timestamp fields and all inputs are sorted before plotting.
"""

from __future__ import annotations

from collections import Counter
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

_META = {"Software": None}


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, format="png", dpi=100, metadata=_META)
    plt.close(fig)
    return path


def _empty(ax, msg: str = "no data"):
    ax.text(0.5, 0.5, msg, ha="center", va="center", transform=ax.transAxes)
    ax.set_xticks([])
    ax.set_yticks([])


def ppg_cdf(ppgs: dict[str, int], path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    vals = sorted(ppgs.values())
    if vals:
        n = len(vals)
        ax.step(vals, [(i + 1) / n for i in range(n)], where="post")
        ax.set_xlabel("privacy policy gap (PPG)")
        ax.set_ylabel("fraction of apps")
        ax.set_ylim(0, 1.02)
    else:
        _empty(ax)
    ax.set_title("PPG distribution")
    return _save(fig, path)


def ctg_distribution(reports: list[dict], path: Path) -> Path:
    counts: Counter[int] = Counter()
    for r in reports:
        g = r["c3_granularity"].get("granularity")
        for t in (g or {}).get("tuples", []):
            counts[t["data_ctg"]] += 1
    fig, ax = plt.subplots(figsize=(5, 3.5))
    if counts:
        xs = sorted(counts)
        ax.bar([str(x) for x in xs], [counts[x] for x in xs])
        ax.set_xlabel("data term CTG")
        ax.set_ylabel("tuples")
    else:
        _empty(ax)
    ax.set_title("Granularity of claimed data")
    return _save(fig, path)


def availability_bars(stats: list[dict], path: Path) -> Path:
    rows = [s for s in stats if s["availability"] is not None]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    if rows:
        ax.bar([s["platform"] for s in rows], [s["availability"] for s in rows])
        ax.set_ylim(0, 1.05)
        ax.set_ylabel("apps with a policy")
        ax.tick_params(axis="x", rotation=45)
    else:
        _empty(ax)
    ax.set_title("Policy availability by platform")
    return _save(fig, path)


def reuse_histogram(reuse: list[dict], path: Path) -> Path:
    sizes = Counter(c["size"] for c in reuse)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    if sizes:
        xs = sorted(sizes)
        ax.bar([str(x) for x in xs], [sizes[x] for x in xs])
        ax.set_xlabel("apps sharing one policy")
        ax.set_ylabel("clusters")
    else:
        _empty(ax, "no reused policies")
    ax.set_title("Policy reuse")
    return _save(fig, path)


def overbroad_terms(reports: list[dict], path: Path, top: int = 15) -> Path:
    counts: Counter[str] = Counter()
    for r in reports:
        for f in r["c4_minimization"].get("findings", []):
            counts[f["term"]] += 1
    items = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:top]
    fig, ax = plt.subplots(figsize=(6, 4))
    if items:
        items.reverse()
        ax.barh([k for k, _ in items], [v for _, v in items])
        ax.set_xlabel("apps")
    else:
        _empty(ax, "no overbroad terms")
    ax.set_title("Most frequent overbroad data terms")
    return _save(fig, path)


def corpus_figures(bundle, out: str | Path) -> list[Path]:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    return [
        ppg_cdf(bundle.ppgs, out / "ppg_cdf.png"),
        ctg_distribution(bundle.reports, out / "ctg_distribution.png"),
        availability_bars(bundle.platform_stats, out / "availability.png"),
        reuse_histogram(bundle.reuse, out / "reuse.png"),
        overbroad_terms(bundle.reports, out / "overbroad_terms.png"),
    ]
