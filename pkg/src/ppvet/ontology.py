"""Term ontologies and the granularity mathematics built on them.

An ontology is a rooted DAG whose edges point from a broader term to the
narrower term it subsumes.  Two are used: one for data objects, one for
entities.  Everything here is pure; an :class:`Ontology` is never mutated
after construction, so instances can be shared freely between workers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Literal, Mapping

Kind = Literal["data", "entity"]


class OntologyError(ValueError):
    """Base class for malformed ontology documents."""


class OntologyParseError(OntologyError):
    pass


class CycleError(OntologyError):
    def __init__(self, node: str):
        super().__init__(f"cycle detected through node {node!r}")
        self.node = node


class DanglingEdgeError(OntologyError):
    def __init__(self, parent: str, child: str, missing: str):
        super().__init__(f"edge ({parent!r}, {child!r}) references unknown node {missing!r}")
        self.edge = (parent, child)
        self.missing = missing


class RootError(OntologyError):
    pass


class UnknownTermError(KeyError):
    def __init__(self, terms: Iterable[str], ontology: str = ""):
        self.terms = sorted(set(terms))
        where = f" in ontology {ontology!r}" if ontology else ""
        super().__init__(f"unknown term(s){where}: {', '.join(self.terms)}")

    def __str__(self) -> str:  # KeyError quotes its message otherwise
        return self.args[0]


@dataclass(frozen=True)
class TermNode:
    id: str
    kind: Kind


class Ontology:
    """Immutable rooted DAG of terms.

    ``edges`` are ``(parent, child)`` pairs.  Construction validates the
    structure: one root, no cycles, no dangling edges, every node reachable
    from the root.
    """

    def __init__(
        self,
        kind: Kind,
        root: str,
        nodes: Iterable[str],
        edges: Iterable[tuple[str, str]],
        name: str = "",
        version: str = "",
    ):
        if kind not in ("data", "entity"):
            raise OntologyParseError(f"kind must be 'data' or 'entity', got {kind!r}")
        self.kind: Kind = kind
        self._ctg_cache: dict[str, int] = {}
        self._desc_cache: dict[str, frozenset[str]] = {}
        self.name = name or f"{kind}-ontology"
        self.version = version

        node_list = list(nodes)
        for n in node_list:
            if not isinstance(n, str) or not n.strip():
                raise OntologyParseError(f"node ids must be nonempty strings, got {n!r}")
        if len(set(node_list)) != len(node_list):
            dupes = sorted({n for n in node_list if node_list.count(n) > 1})
            raise OntologyParseError(f"duplicate node ids: {', '.join(dupes)}")
        self.terms: frozenset[str] = frozenset(node_list)

        children: dict[str, set[str]] = {n: set() for n in node_list}
        parents: dict[str, set[str]] = {n: set() for n in node_list}
        for edge in edges:
            parent, child = edge
            for end in (parent, child):
                if end not in self.terms:
                    raise DanglingEdgeError(parent, child, end)
            if parent == child:
                raise CycleError(parent)
            children[parent].add(child)
            parents[child].add(parent)

        if root not in self.terms:
            raise RootError(f"root {root!r} is not a node")
        self.root = root
        # sorted tuples keep every traversal order deterministic
        self._children = {n: tuple(sorted(c)) for n, c in children.items()}
        self._parents = {n: tuple(sorted(p)) for n, p in parents.items()}

        self._check_acyclic()
        extra_roots = sorted(n for n in node_list if not parents[n] and n != root)
        if self._parents[root]:
            raise RootError(f"root {root!r} has parents {list(self._parents[root])}")
        if extra_roots:
            raise RootError(f"multiple roots: {[root] + extra_roots}")
        unreachable = self.terms - self.descendants(root) - {root}
        if unreachable:
            raise RootError(f"nodes unreachable from root: {sorted(unreachable)}")

    # -- structure -------------------------------------------------------

    def _check_acyclic(self) -> None:
        white, grey, black = 0, 1, 2
        colour = dict.fromkeys(self.terms, white)
        for start in sorted(self.terms):
            if colour[start] != white:
                continue
            stack = [(start, iter(self._children[start]))]
            colour[start] = grey
            while stack:
                node, it = stack[-1]
                nxt = next(it, None)
                if nxt is None:
                    colour[node] = black
                    stack.pop()
                elif colour[nxt] == grey:
                    raise CycleError(nxt)
                elif colour[nxt] == white:
                    colour[nxt] = grey
                    stack.append((nxt, iter(self._children[nxt])))

    @property
    def edges(self) -> frozenset[tuple[str, str]]:
        return frozenset((p, c) for p, cs in self._children.items() for c in cs)

    @property
    def leaves(self) -> frozenset[str]:
        return frozenset(n for n, cs in self._children.items() if not cs)

    def __contains__(self, term: object) -> bool:
        return term in self.terms

    def __len__(self) -> int:
        return len(self.terms)

    def node(self, term: str) -> TermNode:
        self.require([term])
        return TermNode(term, self.kind)

    def children(self, term: str) -> tuple[str, ...]:
        self.require([term])
        return self._children[term]

    def parents(self, term: str) -> tuple[str, ...]:
        self.require([term])
        return self._parents[term]

    def require(self, terms: Iterable[str]) -> frozenset[str]:
        """Return ``terms`` as a frozenset, raising if any is unknown."""
        terms = frozenset(terms)
        unknown = terms - self.terms
        if unknown:
            raise UnknownTermError(unknown, self.name)
        return terms

    def descendants(self, term: str) -> frozenset[str]:
        """All nodes reachable from ``term`` by one or more edges."""
        cached = self._desc_cache.get(term)
        if cached is not None:
            return cached
        self.require([term])
        seen: set[str] = set()
        stack = list(self._children[term])
        while stack:
            n = stack.pop()
            if n not in seen:
                seen.add(n)
                stack.extend(self._children[n])
        result = frozenset(seen)
        self._desc_cache[term] = result
        return result

    def ancestors(self, term: str) -> frozenset[str]:
        self.require([term])
        seen: set[str] = set()
        stack = list(self._parents[term])
        while stack:
            n = stack.pop()
            if n not in seen:
                seen.add(n)
                stack.extend(self._parents[n])
        return frozenset(seen)

    def has_path(self, src: str, dst: str) -> bool:
        return dst in self.descendants(src)

    def granularity(self, term: str) -> int:
        """Longest chain, counted in nodes, from ``term`` down to a leaf.

        In a DAG every maximal path ends at a leaf, so the longest simple
        path to any leaf equals one plus the deepest child chain.
        """
        if term in self._ctg_cache:
            return self._ctg_cache[term]
        self.require([term])
        # iterative post-order so deep ontologies do not hit the recursion limit
        stack = [(term, False)]
        while stack:
            node, expanded = stack.pop()
            if node in self._ctg_cache:
                continue
            kids = self._children[node]
            if expanded or not kids:
                self._ctg_cache[node] = 1 + max((self._ctg_cache[k] for k in kids), default=0)
            else:
                stack.append((node, True))
                stack.extend((k, False) for k in kids if k not in self._ctg_cache)
        return self._ctg_cache[term]

    # -- serialization ---------------------------------------------------

    def to_dict(self) -> dict:
        doc = {
            "kind": self.kind,
            "root": self.root,
            "nodes": sorted(self.terms),
            "edges": [list(e) for e in sorted(self.edges)],
        }
        if self.name:
            doc["name"] = self.name
        if self.version:
            doc["version"] = self.version
        return doc

    @classmethod
    def from_dict(cls, doc: Mapping) -> "Ontology":
        if not isinstance(doc, Mapping):
            raise OntologyParseError("ontology document must be a JSON object")
        missing = [k for k in ("kind", "root", "nodes", "edges") if k not in doc]
        if missing:
            raise OntologyParseError(f"ontology document missing fields: {missing}")
        edges = []
        for e in doc["edges"]:
            if not isinstance(e, (list, tuple)) or len(e) != 2:
                raise OntologyParseError(f"edge must be a [parent, child] pair, got {e!r}")
            edges.append((e[0], e[1]))
        return cls(
            kind=doc["kind"],
            root=doc["root"],
            nodes=doc["nodes"],
            edges=edges,
            name=doc.get("name", ""),
            version=str(doc.get("version", "")),
        )

    def __repr__(self) -> str:
        return f"Ontology({self.name!r}, kind={self.kind!r}, root={self.root!r}, nodes={len(self)})"


def load_ontology(source: str | Path | Mapping) -> Ontology:
    """Load and validate an ontology from a path, JSON string, or parsed dict."""
    if isinstance(source, Mapping):
        return Ontology.from_dict(source)
    text: str
    if isinstance(source, Path) or (isinstance(source, str) and not source.lstrip().startswith("{")):
        path = Path(source)
        text = path.read_text(encoding="utf-8")
    else:
        text = source
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise OntologyParseError(f"invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    return Ontology.from_dict(doc)


# -- granularity metrics ------------------------------------------------------


def node_granularity(o: Ontology, v: str) -> int:
    return o.granularity(v)


def descendants(o: Ontology, v: str) -> frozenset[str]:
    return o.descendants(v)


def lower_bound(o: Ontology, claimed: Iterable[str]) -> frozenset[str]:
    """Finest claimed terms: those with no claimed descendant.

    Claimed nodes are visited bucket by bucket in ascending granularity.
    A node is dropped when it reaches something already retained; since
    anything reachable from a node has strictly smaller granularity, all
    of its claimed descendants have been decided by then.
    """
    claimed = o.require(claimed)
    buckets: dict[int, list[str]] = {}
    for n in claimed:
        buckets.setdefault(o.granularity(n), []).append(n)
    # seeded with claimed leaves only; seeding with every ontology leaf would
    # put unclaimed terms below Claimed
    lb: set[str] = set(buckets.pop(1, []))
    for ng in sorted(buckets):
        keep = [u for u in sorted(buckets[ng]) if not any(o.has_path(u, v) for v in lb)]
        lb.update(keep)
    return frozenset(lb)


def upper_bound(o: Ontology, claimed: Iterable[str]) -> frozenset[str]:
    claimed = o.require(claimed)
    ub = set(claimed)
    for n in claimed:
        ub |= o.descendants(n)
    return frozenset(ub)


@dataclass(frozen=True)
class BoundsResult:
    claimed: frozenset[str]
    lower: frozenset[str]
    upper: frozenset[str]
    ppg: int
    ontology: str = ""

    @property
    def gap(self) -> frozenset[str]:
        return self.upper - self.lower

    def to_dict(self) -> dict:
        return {
            "claimed": sorted(self.claimed),
            "lower_bound": sorted(self.lower),
            "upper_bound": sorted(self.upper),
            "gap": sorted(self.gap),
            "ppg": self.ppg,
        }

    @classmethod
    def empty(cls, ontology: str = "") -> "BoundsResult":
        e: frozenset[str] = frozenset()
        return cls(e, e, e, 0, ontology)


def ppg(o: Ontology, claimed: Iterable[str]) -> BoundsResult:
    claimed = o.require(claimed)
    lo = lower_bound(o, claimed)
    up = upper_bound(o, claimed)
    return BoundsResult(claimed, lo, up, len(up) - len(lo), o.name)


def tuple_granularity(data_ont: Ontology, entity_ont: Ontology, t) -> tuple[int, int]:
    """``(entity CTG, data CTG)`` for a CUS tuple (anything with ``entity``/``data``)."""
    return entity_ont.granularity(t.entity), data_ont.granularity(t.data)


def is_coarse(ctg_pair: tuple[int, int], threshold: int = 2) -> bool:
    return any(c >= threshold for c in ctg_pair)

