"""Schemas, instances, similarity relations, and matching functions.

Values are opaque strings.  A matching function on a domain is a partial
binary operation that is idempotent, commutative, and associative; a declared
table is completed ("saturated") by reading every named value as the join of
the base values it is built from, so that any pair whose join lands on a named
value gets a result even when no chain of declared equations reaches it.  The
induced order a <= b iff m(a, b) = b is what the chase and the generated
programs use to tell old tuple versions from current ones.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

from .errors import (
    ParseError,
    SemilatticeViolation,
    UndefinedMatch,
    UnknownDomain,
    ValidationError,
)

TID_ATTR = "tid"

SIM_BUILTINS = ("exact-equality", "token-overlap")
MF_BUILTINS = ("token-union", "value-min", "value-max")


def tokens(value: str) -> frozenset[str]:
    """Whitespace-separated token set of a value."""
    return frozenset(value.split())


def token_canonical(toks: frozenset[str]) -> str:
    return " ".join(sorted(toks))


# ---------------------------------------------------------------------------
# schema


@dataclass(frozen=True)
class Relation:
    """A relation name with its non-identifier attributes and their domains.

    The tuple identifier occupies an implicit first position named `tid` and
    has no domain; it never takes part in similarity or matching.
    """

    name: str
    attrs: tuple[str, ...]
    domains: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.name:
            raise ValidationError("relation name must be non-empty")
        if len(self.attrs) != len(self.domains):
            raise ValidationError(f"relation {self.name}: attribute/domain count mismatch")
        if len(set(self.attrs)) != len(self.attrs):
            raise ValidationError(f"relation {self.name}: duplicate attribute name")
        if TID_ATTR in self.attrs:
            raise ValidationError(f"relation {self.name}: {TID_ATTR!r} is reserved for the identifier column")

    @property
    def arity(self) -> int:
        """Number of non-identifier attributes."""
        return len(self.attrs)

    def position(self, attr: str) -> int:
        try:
            return self.attrs.index(attr)
        except ValueError:
            raise ValidationError(f"relation {self.name} has no attribute {attr!r}") from None

    def domain_of(self, attr: str) -> str:
        return self.domains[self.position(attr)]


class Schema:
    """A fixed collection of relations, indexed by name."""

    def __init__(self, relations: Iterable[Relation]):
        self.relations: dict[str, Relation] = {}
        for rel in relations:
            if rel.name in self.relations:
                raise ValidationError(f"duplicate relation {rel.name}")
            self.relations[rel.name] = rel

    def relation(self, name: str) -> Relation:
        try:
            return self.relations[name]
        except KeyError:
            raise ValidationError(f"unknown relation {name!r}") from None

    def domains(self) -> frozenset[str]:
        return frozenset(d for rel in self.relations.values() for d in rel.domains)

    def relation_names(self) -> list[str]:
        return sorted(self.relations)

    @classmethod
    def parse(cls, text: str) -> "Schema":
        """Parse lines of the form `R(A: doma, B: domb)`.  `#` starts a comment."""
        relations = []
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "(" not in line or not line.endswith(")"):
                raise ParseError("expected `Name(attr: domain, ...)`", lineno)
            name, body = line[:-1].split("(", 1)
            name = name.strip()
            attrs, domains = [], []
            if body.strip():
                for part in body.split(","):
                    if ":" not in part:
                        raise ParseError(f"attribute {part.strip()!r} needs a `: domain`", lineno)
                    attr, dom = part.split(":", 1)
                    attr, dom = attr.strip(), dom.strip()
                    if not attr or not dom:
                        raise ParseError("empty attribute or domain name", lineno)
                    attrs.append(attr)
                    domains.append(dom)
            relations.append(Relation(name, tuple(attrs), tuple(domains)))
        return cls(relations)

    @classmethod
    def load(cls, path: str | Path) -> "Schema":
        return cls.parse(Path(path).read_text())


# ---------------------------------------------------------------------------
# instances


class Instance:
    """Identified tuples plus the version history accumulated by the chase.

    Instances are treated as immutable: tuple updates go through
    `with_updates`, which records the displaced vectors in the history.
    History never takes part in instance identity; `canonical_key` covers
    current values only.
    """

    def __init__(
        self,
        schema: Schema,
        tuples: Mapping[str, Mapping[str, Sequence[str]]],
        history: Mapping[str, Mapping[str, Sequence[tuple[str, ...]]]] | None = None,
    ):
        self.schema = schema
        self.tuples: dict[str, dict[str, tuple[str, ...]]] = {}
        seen_tids: dict[str, str] = {}
        for rel_name in tuples:
            rel = schema.relation(rel_name)
            rows: dict[str, tuple[str, ...]] = {}
            for tid, vals in tuples[rel_name].items():
                vec = tuple(str(v) for v in vals)
                if len(vec) != rel.arity:
                    raise ValidationError(
                        f"{rel_name}/{tid}: expected {rel.arity} values, got {len(vec)}"
                    )
                if tid in seen_tids:
                    raise ValidationError(f"tuple identifier {tid!r} used more than once")
                seen_tids[tid] = rel_name
                rows[tid] = vec
            self.tuples[rel_name] = rows
        self.history: dict[str, dict[str, tuple[tuple[str, ...], ...]]] = {}
        for rel_name, rows in self.tuples.items():
            given = (history or {}).get(rel_name, {})
            self.history[rel_name] = {
                tid: tuple(tuple(str(x) for x in v) for v in given.get(tid, (vals,)))
                for tid, vals in rows.items()
            }
        for rel_name, hist in self.history.items():
            for tid, versions in hist.items():
                if versions[-1] != self.tuples[rel_name][tid]:
                    raise ValidationError(f"{rel_name}/{tid}: history must end at the current values")

    def current(self, rel: str, tid: str) -> tuple[str, ...]:
        return self.tuples[rel][tid]

    def value_of(self, rel: str, tid: str, attr: str) -> str:
        return self.tuples[rel][tid][self.schema.relation(rel).position(attr)]

    def iter_tuples(self) -> Iterator[tuple[str, str, tuple[str, ...]]]:
        for rel in sorted(self.tuples):
            for tid in sorted(self.tuples[rel]):
                yield rel, tid, self.tuples[rel][tid]

    def total_tuples(self) -> int:
        return sum(len(rows) for rows in self.tuples.values())

    def with_updates(self, updates: Mapping[tuple[str, str], tuple[str, ...]]) -> "Instance":
        """Return a new instance with the given (relation, tid) vectors replaced."""
        new_tuples = {rel: dict(rows) for rel, rows in self.tuples.items()}
        new_history = {rel: dict(hist) for rel, hist in self.history.items()}
        for (rel, tid), vec in updates.items():
            if tid not in new_tuples[rel]:
                raise ValidationError(f"{rel}/{tid}: no such tuple")
            vec = tuple(vec)
            if vec != new_tuples[rel][tid]:
                new_tuples[rel][tid] = vec
                new_history[rel][tid] = new_history[rel][tid] + (vec,)
        return Instance(self.schema, new_tuples, new_history)

    def canonical_key(self) -> tuple:
        return tuple(self.iter_tuples())

    def to_json_dict(self) -> dict:
        out: dict[str, list[dict[str, str]]] = {}
        for rel in sorted(self.tuples):
            attrs = self.schema.relation(rel).attrs
            rows = []
            for tid in sorted(self.tuples[rel]):
                row = {TID_ATTR: tid}
                row.update(zip(attrs, self.tuples[rel][tid]))
                rows.append(row)
            out[rel] = rows
        return out

    @classmethod
    def from_json_dict(cls, schema: Schema, data: Mapping) -> "Instance":
        tuples: dict[str, dict[str, tuple[str, ...]]] = {}
        for rel_name, rows in data.items():
            rel = schema.relation(rel_name)
            out_rows: dict[str, tuple[str, ...]] = {}
            for row in rows:
                if TID_ATTR not in row:
                    raise ValidationError(f"{rel_name}: row without {TID_ATTR!r} field")
                extra = set(row) - set(rel.attrs) - {TID_ATTR}
                if extra:
                    raise ValidationError(f"{rel_name}: unknown fields {sorted(extra)}")
                missing = set(rel.attrs) - set(row)
                if missing:
                    raise ValidationError(f"{rel_name}: missing fields {sorted(missing)}")
                out_rows[str(row[TID_ATTR])] = tuple(str(row[a]) for a in rel.attrs)
            tuples[rel_name] = out_rows
        return cls(schema, tuples)

    @classmethod
    def from_csv_dir(cls, schema: Schema, directory: str | Path) -> "Instance":
        """Load one `<relation>.csv` per relation; the header names the columns."""
        directory = Path(directory)
        tuples: dict[str, dict[str, tuple[str, ...]]] = {}
        for rel_name in schema.relation_names():
            path = directory / f"{rel_name}.csv"
            if not path.exists():
                continue
            rel = schema.relation(rel_name)
            with open(path, newline="") as handle:
                reader = csv.reader(handle)
                try:
                    header = next(reader)
                except StopIteration:
                    raise ValidationError(f"{path}: empty file") from None
                header = [h.strip() for h in header]
                if header != [TID_ATTR, *rel.attrs]:
                    raise ValidationError(
                        f"{path}: header {header} does not match [{TID_ATTR}, {', '.join(rel.attrs)}]"
                    )
                rows: dict[str, tuple[str, ...]] = {}
                for lineno, row in enumerate(reader, start=2):
                    if not row or (len(row) == 1 and not row[0].strip()):
                        continue
                    if len(row) != 1 + rel.arity:
                        raise ValidationError(f"{path}:{lineno}: expected {1 + rel.arity} fields")
                    rows[row[0].strip()] = tuple(v.strip() for v in row[1:])
                tuples[rel_name] = rows
        return cls(schema, tuples)

    @classmethod
    def load(cls, schema: Schema, path: str | Path) -> "Instance":
        path = Path(path)
        if path.is_dir():
            return cls.from_csv_dir(schema, path)
        return cls.from_json_dict(schema, json.loads(path.read_text()))


# ---------------------------------------------------------------------------
# similarity


class SimilarityRelation:
    """Reflexive symmetric similarity, given by pairs and per-domain built-in rules.

    Declared pairs are stored unordered; reflexivity and symmetry are applied
    at query time rather than materialised.
    """

    def __init__(
        self,
        pairs: Mapping[str, Iterable[tuple[str, str]]] | None = None,
        builtins: Mapping[str, str] | None = None,
        known_domains: Iterable[str] | None = None,
    ):
        self._pairs: dict[str, set[frozenset[str]]] = {}
        for dom, dom_pairs in (pairs or {}).items():
            bucket = self._pairs.setdefault(dom, set())
            for a, b in dom_pairs:
                bucket.add(frozenset((str(a), str(b))))
        self._builtins: dict[str, str] = {}
        for dom, rule in (builtins or {}).items():
            if rule not in SIM_BUILTINS:
                raise ValidationError(f"unknown similarity built-in {rule!r} (expected one of {SIM_BUILTINS})")
            self._builtins[dom] = rule
        self._known = frozenset(known_domains) if known_domains is not None else None
        if self._known is not None:
            for dom in list(self._pairs) + list(self._builtins):
                if dom not in self._known:
                    raise UnknownDomain(f"similarity declared on unknown domain {dom!r}")

    def _check_domain(self, domain: str) -> None:
        if self._known is not None and domain not in self._known:
            raise UnknownDomain(f"unknown domain {domain!r}")

    def similar(self, domain: str, a: str, b: str) -> bool:
        self._check_domain(domain)
        if a == b:
            return True
        if frozenset((a, b)) in self._pairs.get(domain, ()):
            return True
        rule = self._builtins.get(domain)
        if rule == "token-overlap":
            return bool(tokens(a) & tokens(b))
        return False

    def declared_pairs(self, domain: str) -> list[tuple[str, str]]:
        out = []
        for pair in self._pairs.get(domain, ()):
            a, b = sorted(pair) if len(pair) == 2 else (next(iter(pair)), next(iter(pair)))
            out.append((a, b))
        return sorted(out)

    def builtin_rule(self, domain: str) -> str | None:
        return self._builtins.get(domain)

    def declared_domains(self) -> list[str]:
        return sorted(set(self._pairs) | set(self._builtins))

    def with_known_domains(self, domains: Iterable[str]) -> "SimilarityRelation":
        return SimilarityRelation(
            {d: self.declared_pairs(d) for d in self._pairs},
            dict(self._builtins),
            domains,
        )

    @classmethod
    def parse(cls, text: str) -> "SimilarityRelation":
        """Parse lines `dom: v1 ~ v2` and `dom: builtin token-overlap`."""
        pairs: dict[str, list[tuple[str, str]]] = {}
        builtins: dict[str, str] = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if ":" not in line:
                raise ParseError("expected `domain: ...`", lineno)
            dom, rest = line.split(":", 1)
            dom, rest = dom.strip(), rest.strip()
            if rest.startswith("builtin"):
                rule = rest[len("builtin"):].strip()
                if rule not in SIM_BUILTINS:
                    raise ParseError(f"unknown similarity built-in {rule!r}", lineno)
                if builtins.get(dom, rule) != rule:
                    raise ParseError(f"conflicting built-in for domain {dom!r}", lineno)
                builtins[dom] = rule
            else:
                if "~" not in rest:
                    raise ParseError("expected `v1 ~ v2` or `builtin <rule>`", lineno)
                left, right = rest.split("~", 1)
                left, right = left.strip(), right.strip()
                if not left or not right:
                    raise ParseError("similarity needs two values", lineno)
                pairs.setdefault(dom, []).append((left, right))
        return cls(pairs, builtins)

    @classmethod
    def load(cls, path: str | Path) -> "SimilarityRelation":
        return cls.parse(Path(path).read_text())


# ---------------------------------------------------------------------------
# matching functions


class MatchingFunction:
    """Declared matching-function equations, before saturation."""

    def __init__(
        self,
        triples: Mapping[str, Iterable[tuple[str, str, str]]] | None = None,
        builtins: Mapping[str, str] | None = None,
    ):
        self.triples: dict[str, list[tuple[str, str, str]]] = {
            dom: [tuple(str(x) for x in t) for t in ts] for dom, ts in (triples or {}).items()
        }
        self.builtins: dict[str, str] = {}
        for dom, rule in (builtins or {}).items():
            if rule not in MF_BUILTINS:
                raise ValidationError(f"unknown matching built-in {rule!r} (expected one of {MF_BUILTINS})")
            if dom in self.triples:
                raise ValidationError(f"domain {dom!r} has both a table and a built-in rule")
            self.builtins[dom] = rule

    def declared_domains(self) -> list[str]:
        return sorted(set(self.triples) | set(self.builtins))

    def saturate(self, active: Mapping[str, Iterable[str]] | None = None) -> "SaturatedMatchingFunction":
        """Complete every declared domain over the given active values."""
        active = {dom: set(vals) for dom, vals in (active or {}).items()}
        domains: dict[str, _TableDomain | _BuiltinDomain] = {}
        for dom in sorted(self.triples):
            domains[dom] = _saturate_table(dom, self.triples[dom], frozenset(active.get(dom, ())))
        for dom in sorted(self.builtins):
            domains[dom] = _BuiltinDomain(dom, self.builtins[dom], frozenset(active.get(dom, ())))
        return SaturatedMatchingFunction(domains)

    @classmethod
    def parse(cls, text: str) -> "MatchingFunction":
        """Parse lines `dom: m(v1, v2) = v3` and `dom: builtin token-union`."""
        triples: dict[str, list[tuple[str, str, str]]] = {}
        builtins: dict[str, str] = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if ":" not in line:
                raise ParseError("expected `domain: ...`", lineno)
            dom, rest = line.split(":", 1)
            dom, rest = dom.strip(), rest.strip()
            if rest.startswith("builtin"):
                rule = rest[len("builtin"):].strip()
                if rule not in MF_BUILTINS:
                    raise ParseError(f"unknown matching built-in {rule!r}", lineno)
                if builtins.get(dom, rule) != rule:
                    raise ParseError(f"conflicting built-in for domain {dom!r}", lineno)
                builtins[dom] = rule
                continue
            if not rest.startswith("m(") or "=" not in rest:
                raise ParseError("expected `m(v1, v2) = v3` or `builtin <rule>`", lineno)
            call, result = rest.split("=", 1)
            call = call.strip()
            if not call.startswith("m(") or not call.endswith(")"):
                raise ParseError("expected `m(v1, v2)` on the left of `=`", lineno)
            inner = call[2:-1]
            if "," not in inner:
                raise ParseError("m(...) takes two comma-separated values", lineno)
            left, right = inner.split(",", 1)
            left, right, result = left.strip(), right.strip(), result.strip()
            if not left or not right or not result:
                raise ParseError("empty value in matching equation", lineno)
            triples.setdefault(dom, []).append((left, right, result))
        try:
            return cls(triples, builtins)
        except ValidationError as exc:
            raise ParseError(str(exc)) from exc

    @classmethod
    def load(cls, path: str | Path) -> "MatchingFunction":
        return cls.parse(Path(path).read_text())


class _TableDomain:
    """A saturated table domain: every value is a join of base values."""

    def __init__(self, name: str, generators: dict[str, frozenset[str]]):
        self.name = name
        self.generators = generators
        self.by_generators = {gens: v for v, gens in generators.items()}
        self.value_set = frozenset(generators)
        self._table: dict[tuple[str, str], str | None] = {}

    def match(self, a: str, b: str) -> str | None:
        key = (a, b)
        if key in self._table:
            return self._table[key]
        ga, gb = self.generators.get(a), self.generators.get(b)
        result = None if ga is None or gb is None else self.by_generators.get(ga | gb)
        self._table[key] = result
        return result

    def precedes(self, a: str, b: str) -> bool:
        ga, gb = self.generators.get(a), self.generators.get(b)
        if ga is None or gb is None:
            return a == b
        return ga <= gb

    def values(self) -> frozenset[str]:
        return self.value_set

    def triples(self) -> list[tuple[str, str, str]]:
        out = []
        for a in sorted(self.value_set):
            for b in sorted(self.value_set):
                r = self.match(a, b)
                if r is not None:
                    out.append((a, b, r))
        return out


def _saturate_table(
    domain: str, triples: Sequence[tuple[str, str, str]], active: frozenset[str]
) -> _TableDomain:
    declared: dict[tuple[str, str], str] = {}
    for a, b, c in triples:
        for key in ((a, b), (b, a)):
            if declared.setdefault(key, c) != c:
                raise SemilatticeViolation(
                    f"domain {domain!r}: m({key[0]}, {key[1]}) declared as both "
                    f"{declared[key]!r} and {c!r}"
                )
    values = set(active)
    for a, b, c in triples:
        values.update((a, b, c))
    defined = {c for a, b, c in triples if c != a and c != b}
    gens: dict[str, frozenset[str]] = {
        v: frozenset((v,)) if v not in defined else frozenset() for v in values
    }
    changed = True
    while changed:
        changed = False
        for a, b, c in triples:
            union = gens[a] | gens[b]
            if not union <= gens[c]:
                gens[c] = gens[c] | union
                changed = True
    for v in sorted(values):
        if not gens[v]:
            raise SemilatticeViolation(
                f"domain {domain!r}: value {v!r} is defined only in terms of other "
                "defined values (cyclic table)"
            )
    by_gens: dict[frozenset[str], str] = {}
    for v in sorted(values):
        other = by_gens.setdefault(gens[v], v)
        if other != v:
            raise SemilatticeViolation(
                f"domain {domain!r}: values {other!r} and {v!r} denote the same join "
                f"of {sorted(gens[v])}"
            )
    for a, b, c in triples:
        named = by_gens.get(gens[a] | gens[b])
        if named != c:
            raise SemilatticeViolation(
                f"domain {domain!r}: m({a}, {b}) = {c} is not reproduced by the "
                f"completed table (join resolves to {named!r})"
            )
    return _TableDomain(domain, gens)


class _BuiltinDomain:
    """A built-in matching rule, closed over the active values for enumeration."""

    def __init__(self, name: str, rule: str, active: frozenset[str]):
        self.name = name
        self.rule = rule
        self.active = active
        if rule == "token-union":
            sets = {tokens(v) for v in active}
            closed = set(sets)
            frontier = list(sets)
            while frontier:
                current = frontier.pop()
                for other in list(closed):
                    union = current | other
                    if union not in closed:
                        closed.add(union)
                        frontier.append(union)
            self.value_set = frozenset(active) | frozenset(token_canonical(s) for s in closed)
        else:
            self.value_set = frozenset(active)

    def match(self, a: str, b: str) -> str:
        if self.rule == "token-union":
            return token_canonical(tokens(a) | tokens(b))
        if self.rule == "value-min":
            return min(a, b)
        return max(a, b)

    def precedes(self, a: str, b: str) -> bool:
        # token values compare by token set: merge results are canonical
        # spellings, so requiring match(a, b) == b literally would make the
        # order irreflexive on unnormalised input values.
        if self.rule == "token-union":
            return tokens(a) <= tokens(b)
        if self.rule == "value-min":
            return b <= a
        return a <= b

    def values(self) -> frozenset[str]:
        return self.value_set

    def triples(self) -> list[tuple[str, str, str]]:
        out = []
        for a in sorted(self.value_set):
            for b in sorted(self.value_set):
                out.append((a, b, self.match(a, b)))
        return out


class SaturatedMatchingFunction:
    """Per-domain matching operations after saturation.

    Domains with no matching function at all still answer `precedes`: their
    induced order is plain equality.
    """

    def __init__(self, domains: Mapping[str, _TableDomain | _BuiltinDomain]):
        self._domains = dict(domains)

    def domains(self) -> list[str]:
        return sorted(self._domains)

    def has_mf(self, domain: str) -> bool:
        return domain in self._domains

    def try_match(self, domain: str, a: str, b: str) -> str | None:
        dom = self._domains.get(domain)
        if dom is None:
            return None
        return dom.match(a, b)

    def match(self, domain: str, a: str, b: str) -> str:
        result = self.try_match(domain, a, b)
        if result is None:
            raise UndefinedMatch(domain, a, b)
        return result

    def precedes(self, domain: str, a: str, b: str) -> bool:
        dom = self._domains.get(domain)
        if dom is None:
            return a == b
        return dom.precedes(a, b)

    def tuple_precedes(self, domains: Sequence[str], xs: Sequence[str], ys: Sequence[str]) -> bool:
        if len(xs) != len(ys) or len(xs) != len(domains):
            raise ValidationError("tuple_precedes needs equally long vectors")
        return all(self.precedes(d, x, y) for d, x, y in zip(domains, xs, ys))

    def values(self, domain: str) -> frozenset[str]:
        dom = self._domains.get(domain)
        return dom.values() if dom is not None else frozenset()

    def triples(self, domain: str) -> list[tuple[str, str, str]]:
        dom = self._domains.get(domain)
        return dom.triples() if dom is not None else []


def collect_active_values(
    schema: Schema,
    instance: Instance | None = None,
    sim: SimilarityRelation | None = None,
    mf: MatchingFunction | None = None,
) -> dict[str, set[str]]:
    """Values mentioned per domain, across instance, similarity, and MF tables."""
    active: dict[str, set[str]] = {}
    if instance is not None:
        for rel_name, rows in instance.tuples.items():
            rel = schema.relation(rel_name)
            for vals in rows.values():
                for dom, val in zip(rel.domains, vals):
                    active.setdefault(dom, set()).add(val)
    if sim is not None:
        for dom in sim.declared_domains():
            for a, b in sim.declared_pairs(dom):
                active.setdefault(dom, set()).update((a, b))
    if mf is not None:
        for dom, triples in mf.triples.items():
            for a, b, c in triples:
                active.setdefault(dom, set()).update((a, b, c))
    return active
