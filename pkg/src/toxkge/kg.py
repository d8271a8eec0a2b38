"""In-memory RDF-style triple store.

Parses a line-oriented subset of N-Triples, interns IRIs into dense integer
ids, answers conjunctive triple-pattern queries and walks a configurable
class hierarchy.
"""

from __future__ import annotations

import json
import operator
import re
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Iterable, NamedTuple, Union

from .errors import LookupFailure, ParseError, QueryError

RDFS_SUBCLASS = "http://www.w3.org/2000/01/rdf-schema#subClassOf"
RDF_TYPE = "http://www.w3.org/1999/02/22-rdf-syntax-ns#type"


@dataclass(frozen=True, order=True)
class Literal:
    """Typed literal; equality is lexical form plus datatype, no coercion."""

    lexical: str
    datatype: str | None = None

    def n3(self) -> str:
        text = (
            self.lexical.replace("\\", "\\\\")
            .replace('"', '\\"')
            .replace("\n", "\\n")
            .replace("\r", "\\r")
            .replace("\t", "\\t")
        )
        if self.datatype is None:
            return f'"{text}"'
        return f'"{text}"^^<{self.datatype}>'


Term = Union[str, Literal]


class Triple(NamedTuple):
    subject: str
    predicate: str
    object: Term

    def n3(self) -> str:
        obj = self.object.n3() if isinstance(self.object, Literal) else f"<{self.object}>"
        return f"<{self.subject}> <{self.predicate}> {obj} ."


class Var(str):
    """A named query variable, written ``?name`` in patterns."""

    def __new__(cls, name: str) -> "Var":
        return super().__new__(cls, name.lstrip("?"))

    def __repr__(self) -> str:
        return f"?{str(self)}"


class Dictionary:
    """Bidirectional IRI <-> dense integer id map."""

    def __init__(self, items: Iterable[str] = ()):
        self._ids: dict[str, int] = {}
        self._items: list[str] = []
        for item in items:
            self.add(item)

    def add(self, item: str) -> int:
        idx = self._ids.get(item)
        if idx is None:
            idx = len(self._items)
            self._ids[item] = idx
            self._items.append(item)
        return idx

    def id(self, item: str) -> int:
        try:
            return self._ids[item]
        except KeyError:
            raise LookupFailure(f"unknown term {item!r}") from None

    def item(self, idx: int) -> str:
        if not 0 <= idx < len(self._items):
            raise LookupFailure(f"id {idx} out of range [0, {len(self._items)})")
        return self._items[idx]

    def __contains__(self, item: object) -> bool:
        return item in self._ids

    def __len__(self) -> int:
        return len(self._items)

    def __iter__(self):
        return iter(self._items)


_IRI = r"<([^<>\s]*)>"
_LIT = r'"((?:[^"\\]|\\.)*)"(?:\^\^<([^<>\s]*)>)?'
_LINE = re.compile(rf"^\s*{_IRI}\s+{_IRI}\s+(?:{_IRI}|{_LIT})\s*\.\s*(?:#.*)?$")
_ESCAPES = {"t": "\t", "n": "\n", "r": "\r", '"': '"', "\\": "\\", "'": "'"}


def _unescape(text: str) -> str:
    if "\\" not in text:
        return text
    out = []
    chars = iter(text)
    for ch in chars:
        if ch == "\\":
            nxt = next(chars)
            out.append(_ESCAPES.get(nxt, nxt))
        else:
            out.append(ch)
    return "".join(out)


def parse_line(line: str, lineno: int = 0) -> Triple | None:
    """Parse one N-Triples line; returns None for blank and comment lines."""
    stripped = line.strip()
    if not stripped or stripped.startswith("#"):
        return None
    m = _LINE.match(stripped)
    if m is None:
        raise ParseError(f"line {lineno}: malformed triple: {stripped[:80]!r}", lineno)
    s, p, o_iri, o_lex, o_type = m.groups()
    obj: Term = o_iri if o_iri is not None else Literal(_unescape(o_lex), o_type)
    return Triple(s, p, obj)


class KnowledgeGraph:
    """Immutable set of triples with interned entity/relation dictionaries.

    Parameters
    ----------
    triples : iterable of Triple
        Duplicates are dropped.
    hierarchy_predicates : iterable of str
        Predicates whose edges point from a child to its parent
        (``child pred parent``).
    """

    def __init__(self, triples: Iterable[Triple] = (), hierarchy_predicates: Iterable[str] = (RDFS_SUBCLASS,)):
        seen: dict[Triple, None] = {}
        for t in triples:
            seen.setdefault(Triple(*t), None)
        self._triples = tuple(seen)
        self.entities = Dictionary()
        self.relations = Dictionary()
        for s, p, o in self._triples:
            self.entities.add(s)
            self.relations.add(p)
            if not isinstance(o, Literal):
                self.entities.add(o)
        self._by_s: dict[str, list[Triple]] = {}
        self._by_p: dict[str, list[Triple]] = {}
        self._by_o: dict[Term, list[Triple]] = {}
        for t in self._triples:
            self._by_s.setdefault(t.subject, []).append(t)
            self._by_p.setdefault(t.predicate, []).append(t)
            self._by_o.setdefault(t.object, []).append(t)
        self._set = frozenset(self._triples)
        self.hierarchy_predicates = tuple(hierarchy_predicates)
        self._parents: dict[int, list[int]] = {}
        self._children: dict[int, list[int]] = {}
        for pred in self.hierarchy_predicates:
            for s, _, o in self._by_p.get(pred, ()):
                if isinstance(o, Literal):
                    continue
                c, par = self.entities.id(s), self.entities.id(o)
                self._parents.setdefault(c, []).append(par)
                self._children.setdefault(par, []).append(c)

    @property
    def triples(self) -> tuple[Triple, ...]:
        return self._triples

    def __len__(self) -> int:
        return len(self._triples)

    def __contains__(self, triple: object) -> bool:
        return triple in self._set

    def __iter__(self):
        return iter(self._triples)

    def with_hierarchy(self, predicates: Iterable[str]) -> "KnowledgeGraph":
        return KnowledgeGraph(self._triples, predicates)

    def facts(self, subject: str) -> list[Triple]:
        return list(self._by_s.get(subject, ()))

    def objects(self, subject: str, predicate: str) -> list[Term]:
        return [t.object for t in self._by_s.get(subject, ()) if t.predicate == predicate]

    def subjects(self, predicate: str, obj: Term) -> list[str]:
        return [t.subject for t in self._by_o.get(obj, ()) if t.predicate == predicate]

    def parents(self, e: int) -> list[int]:
        self._check_entity(e)
        return list(self._parents.get(e, ()))

    def children(self, e: int) -> list[int]:
        self._check_entity(e)
        return list(self._children.get(e, ()))

    def is_leaf(self, e: int) -> bool:
        return not self._children.get(e)

    def stats(self) -> dict:
        return {
            "entities": len(self.entities),
            "relations": len(self.relations),
            "triples": len(self._triples),
        }

    def _check_entity(self, e: int) -> None:
        try:
            idx = operator.index(e)
        except TypeError:
            raise LookupFailure(f"unknown entity id {e!r}") from None
        if not 0 <= idx < len(self.entities):
            raise LookupFailure(f"unknown entity id {e!r}")


def load_ntriples(source, hierarchy_predicates: Iterable[str] = (RDFS_SUBCLASS,)) -> KnowledgeGraph:
    """Load a graph from a path or from a byte/text stream."""
    if not hasattr(source, "read"):
        with open(source, "rb") as fh:
            return load_ntriples(fh, hierarchy_predicates)
    data = source.read()
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    triples = []
    for lineno, line in enumerate(data.splitlines(), start=1):
        t = parse_line(line, lineno)
        if t is not None:
            triples.append(t)
    return KnowledgeGraph(triples, hierarchy_predicates)


def dump_ntriples(kg: KnowledgeGraph | Iterable[Triple], dest=None) -> str:
    """Serialise triples in sorted order; writes to ``dest`` (path or text stream) if given."""
    lines = sorted(Triple(*t).n3() for t in kg)
    text = "".join(line + "\n" for line in lines)
    if dest is None:
        return text
    if hasattr(dest, "write"):
        dest.write(text)
    else:
        with open(dest, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    return text


def dump_stats(kg: KnowledgeGraph, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(kg.stats(), fh, indent=2, sort_keys=True)
        fh.write("\n")


@dataclass
class PatternQuery:
    """Conjunctive basic graph pattern.

    Each pattern is a 3-tuple whose positions are constants (IRI string or
    :class:`Literal`) or :class:`Var`. Strings starting with ``?`` are
    promoted to variables.
    """

    patterns: list[tuple]
    projection: list[str] | None = None
    _vars: list[str] = field(init=False, repr=False)

    def __post_init__(self):
        if not self.patterns:
            raise QueryError("query needs at least one pattern")
        norm = []
        for pat in self.patterns:
            if len(pat) != 3:
                raise QueryError(f"pattern {pat!r} is not a triple")
            norm.append(tuple(_as_term(x) for x in pat))
        self.patterns = norm
        seen: list[str] = []
        for pat in norm:
            for x in pat:
                if isinstance(x, Var) and x not in seen:
                    seen.append(str(x))
        self._vars = seen
        if self.projection is not None:
            self.projection = [str(Var(v)) for v in self.projection]
            missing = [v for v in self.projection if v not in seen]
            if missing:
                raise QueryError(f"projected variables not in any pattern: {missing}")

    @property
    def variables(self) -> list[str]:
        return list(self._vars)


def _as_term(x):
    if isinstance(x, Var):
        return x
    if isinstance(x, str) and x.startswith("?"):
        return Var(x)
    return x


def _candidates(kg: KnowledgeGraph, pat: tuple) -> Iterable[Triple]:
    s, p, o = pat
    if not isinstance(s, Var):
        return kg._by_s.get(s, ())
    if not isinstance(o, Var):
        return kg._by_o.get(o, ())
    if not isinstance(p, Var):
        return kg._by_p.get(p, ())
    return kg.triples


def _bind(pat: tuple, binding: dict) -> tuple:
    return tuple(binding.get(str(x), x) if isinstance(x, Var) else x for x in pat)


def _unify(pat: tuple, triple: Triple, binding: dict) -> dict | None:
    out = binding
    for x, val in zip(pat, triple):
        if isinstance(x, Var):
            key = str(x)
            if key in out:
                if out[key] != val:
                    return None
            else:
                if out is binding:
                    out = dict(binding)
                out[key] = val
        elif x != val:
            return None
    return out if out is not binding else dict(binding)


def match_pattern(kg: KnowledgeGraph, q: PatternQuery) -> list[dict]:
    """All variable bindings under which every pattern of ``q`` is in ``kg``."""
    bindings: list[dict] = [{}]
    for pat in q.patterns:
        nxt = []
        for b in bindings:
            bound = _bind(pat, b)
            for t in _candidates(kg, bound):
                u = _unify(bound, t, b)
                if u is not None:
                    nxt.append(u)
        bindings = nxt
        if not bindings:
            break
    if q.projection is not None:
        projected = []
        seen = set()
        for b in bindings:
            row = {v: b[v] for v in q.projection}
            key = tuple(row.items())
            if key not in seen:
                seen.add(key)
                projected.append(row)
        return projected
    return bindings


def hierarchy_ancestors(kg: KnowledgeGraph, e: int, max_depth: int) -> list[tuple[int, int]]:
    """Ancestors of ``e`` with their shortest upward edge distance, ``e`` itself at depth 0."""
    kg._check_entity(e)
    e = int(e)
    if max_depth < 0:
        raise ValueError("max_depth must be non-negative")
    depth = {e: 0}
    order = [e]
    queue = deque([e])
    while queue:
        cur = queue.popleft()
        d = depth[cur]
        if d == max_depth:
            continue
        for par in kg._parents.get(cur, ()):
            if par not in depth:
                depth[par] = d + 1
                order.append(par)
                queue.append(par)
    return [(a, depth[a]) for a in order]


def descendants(kg: KnowledgeGraph, e: int) -> set[int]:
    out: set[int] = set()
    stack = [e]
    while stack:
        cur = stack.pop()
        for c in kg._children.get(cur, ()):
            if c not in out:
                out.add(c)
                stack.append(c)
    return out


def leaves_with_data_within_depth(
    kg: KnowledgeGraph, e: int, depth: int, has_data: Callable[[int], bool]
) -> int:
    """Count data-bearing leaves (other than ``e``) under ancestors of ``e`` at most ``depth`` levels up."""
    kg._check_entity(e)
    e = int(e)
    found: set[int] = set()
    for anc, _ in hierarchy_ancestors(kg, e, depth):
        for d in descendants(kg, anc):
            if d != e and kg.is_leaf(d) and has_data(d):
                found.add(d)
    return len(found)
