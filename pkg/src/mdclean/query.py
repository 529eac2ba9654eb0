"""Conjunctive queries with similarity literals, and certain answers.

Query text follows the usual rule shape, with the first argument of every
atom standing for the tuple identifier:

    q(X) :- R(T, X, Y), Y ~domb~ c.

Identifiers starting with an upper-case letter or underscore are variables;
everything else (or anything double-quoted) is a constant.  Evaluation is a
direct backtracking search over the instance, small enough to serve as the
reference the Datalog route is checked against.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Mapping, Sequence

from .errors import EmptyCleanSet, ParseError, ValidationError
from .model import Instance, Schema, SimilarityRelation
from .terms import Term, Var, is_var


@dataclass(frozen=True)
class QueryAtom:
    relation: str
    args: tuple[Term, ...]  # identifier first, then attribute terms


@dataclass(frozen=True)
class SimLiteral:
    left: Term
    right: Term
    domain: str | None = None


@dataclass(frozen=True)
class ConjunctiveQuery:
    name: str
    head: tuple[Var, ...]
    atoms: tuple[QueryAtom, ...]
    sims: tuple[SimLiteral, ...] = ()
    distinct_tids: bool = False

    def variables(self) -> list[Var]:
        seen: dict[Var, None] = {}
        for atom in self.atoms:
            for arg in atom.args:
                if is_var(arg):
                    seen.setdefault(arg)
        return list(seen)


def validate_query(query: ConjunctiveQuery, schema: Schema) -> None:
    body_vars = set(query.variables())
    for atom in query.atoms:
        rel = schema.relation(atom.relation)
        if len(atom.args) != 1 + rel.arity:
            raise ValidationError(
                f"query {query.name!r}: atom {atom.relation} has {len(atom.args)} "
                f"arguments, expected {1 + rel.arity}"
            )
    for v in query.head:
        if v not in body_vars:
            raise ValidationError(f"query {query.name!r}: head variable {v.name!r} not bound by the body")
    for lit in query.sims:
        resolve_sim_domain(query, schema, lit)


def resolve_sim_domain(query: ConjunctiveQuery, schema: Schema, lit: SimLiteral) -> str:
    domains = set()
    if lit.domain is not None:
        domains.add(lit.domain)
    for term in (lit.left, lit.right):
        if not is_var(term):
            continue
        for atom in query.atoms:
            rel = schema.relation(atom.relation)
            for pos, arg in enumerate(atom.args[1:]):
                if arg == term:
                    domains.add(rel.domains[pos])
    if len(domains) != 1:
        side = f"{_term_text(lit.left)} ~ {_term_text(lit.right)}"
        raise ValidationError(
            f"query {query.name!r}: cannot resolve a single domain for {side} "
            f"(candidates {sorted(domains)})"
        )
    return domains.pop()


def _term_text(term: Term) -> str:
    return term.name if is_var(term) else str(term)


def _bindings(
    instance: Instance,
    query: ConjunctiveQuery,
    sim: SimilarityRelation,
    domains: Mapping[int, str],
) -> Iterator[dict[Var, str]]:
    """All satisfying assignments, atoms matched in order, sorted tids first."""
    sims_by_stage: dict[int, list[tuple[SimLiteral, str]]] = {}
    for idx, lit in enumerate(query.sims):
        stage = 0
        for v in (lit.left, lit.right):
            if is_var(v):
                for a_idx, atom in enumerate(query.atoms):
                    if v in atom.args:
                        stage = max(stage, a_idx)
                        break
        sims_by_stage.setdefault(stage, []).append((lit, domains[idx]))

    # distinctness ranges over distinct identifier terms: a variable shared by
    # two atoms is one term and never conflicts with itself
    tid_terms = list(dict.fromkeys(atom.args[0] for atom in query.atoms))

    def value(term: Term, binding: dict[Var, str]) -> str | None:
        if is_var(term):
            return binding.get(term)
        return term

    def extend(stage: int, binding: dict[Var, str]) -> Iterator[dict[Var, str]]:
        if stage == len(query.atoms):
            yield binding
            return
        atom = query.atoms[stage]
        rows = instance.tuples.get(atom.relation, {})
        for tid in sorted(rows):
            vals = (tid,) + rows[tid]
            new = dict(binding)
            ok = True
            for arg, val in zip(atom.args, vals):
                if is_var(arg):
                    if new.setdefault(arg, val) != val:
                        ok = False
                        break
                elif arg != val:
                    ok = False
                    break
            if not ok:
                continue
            if query.distinct_tids:
                bound_tids = [value(t, new) for t in tid_terms]
                seen = [t for t in bound_tids if t is not None]
                if len(seen) != len(set(seen)):
                    continue
            for lit, dom in sims_by_stage.get(stage, ()):
                left, right = value(lit.left, new), value(lit.right, new)
                if left is None or right is None or not sim.similar(dom, left, right):
                    ok = False
                    break
            if not ok:
                continue
            yield from extend(stage + 1, new)

    yield from extend(0, {})


def eval_cq(
    instance: Instance, query: ConjunctiveQuery, sim: SimilarityRelation
) -> set[tuple[str, ...]]:
    """Answer tuples of the query on one instance."""
    validate_query(query, instance.schema)
    domains = {i: resolve_sim_domain(query, instance.schema, lit) for i, lit in enumerate(query.sims)}
    return {
        tuple(binding[v] for v in query.head)
        for binding in _bindings(instance, query, sim, domains)
    }


def find_witness(
    instance: Instance, query: ConjunctiveQuery, sim: SimilarityRelation
) -> dict[str, str] | None:
    """First satisfying assignment (variable name to value), or None."""
    validate_query(query, instance.schema)
    domains = {i: resolve_sim_domain(query, instance.schema, lit) for i, lit in enumerate(query.sims)}
    for binding in _bindings(instance, query, sim, domains):
        return {v.name: val for v, val in sorted(binding.items(), key=lambda kv: kv[0].name)}
    return None


def certain_answers(
    instances: Sequence[Instance], query: ConjunctiveQuery, sim: SimilarityRelation
) -> set[tuple[str, ...]]:
    """Answers that hold in every given clean instance."""
    if not instances:
        raise EmptyCleanSet("certain answers need at least one clean instance")
    result: set[tuple[str, ...]] | None = None
    for instance in instances:
        answers = eval_cq(instance, query, sim)
        result = answers if result is None else result & answers
    return result


# ---------------------------------------------------------------------------
# parsing


def _is_var_name(text: str) -> bool:
    return bool(text) and (text[0].isupper() or text[0] == "_")


def parse_query(text: str) -> ConjunctiveQuery:
    queries = parse_queries(text)
    if len(queries) != 1:
        raise ParseError(f"expected exactly one query, found {len(queries)}")
    return queries[0]


def parse_queries(text: str) -> list[ConjunctiveQuery]:
    stripped = "\n".join(raw.split("#", 1)[0] for raw in text.splitlines())
    statements = []
    depth, start, in_quote = 0, 0, False
    for i, ch in enumerate(stripped):
        if ch == '"':
            in_quote = not in_quote
        elif in_quote:
            continue
        elif ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        elif ch == "." and depth == 0:
            statements.append(stripped[start:i] + ".")
            start = i + 1
    if stripped[start:].strip():
        raise ParseError("query does not end with '.'")
    return [_parse_statement(s.strip()) for s in statements if s.strip()]


def _parse_statement(text: str) -> ConjunctiveQuery:
    if ":-" not in text:
        raise ParseError(f"missing ':-' in {text!r}")
    head_text, body_text = text.split(":-", 1)
    body_text = body_text.strip()
    if not body_text.endswith("."):
        raise ParseError("query does not end with '.'")
    body_text = body_text[:-1]
    name, head_vars = _parse_head(head_text.strip())
    atoms: list[QueryAtom] = []
    sims: list[SimLiteral] = []
    for chunk in _split_commas(body_text):
        chunk = chunk.strip()
        if not chunk:
            raise ParseError("empty literal in query body")
        if "~" in chunk and "(" not in chunk.split("~", 1)[0]:
            sims.append(_parse_sim(chunk))
        else:
            atoms.append(_parse_atom(chunk))
    head = tuple(Var(v) for v in head_vars)
    query = ConjunctiveQuery(name, head, tuple(atoms), tuple(sims))
    body_vars = set(query.variables())
    for v in head:
        if v not in body_vars:
            raise ParseError(f"head variable {v.name!r} not bound by the body")
    return query


def _parse_head(text: str) -> tuple[str, list[str]]:
    if "(" not in text:
        if not text:
            raise ParseError("query head missing")
        return text, []
    if not text.endswith(")"):
        raise ParseError(f"malformed query head {text!r}")
    name, inner = text[:-1].split("(", 1)
    name = name.strip()
    args = [a.strip() for a in _split_commas(inner) if a.strip()]
    for arg in args:
        if not _is_var_name(arg):
            raise ParseError(f"query head argument {arg!r} must be a variable")
    return name, args


def _parse_atom(chunk: str) -> QueryAtom:
    if "(" not in chunk or not chunk.endswith(")"):
        raise ParseError(f"malformed atom {chunk!r}")
    rel, inner = chunk[:-1].split("(", 1)
    rel = rel.strip()
    args = tuple(_parse_term(a.strip()) for a in _split_commas(inner))
    if not args:
        raise ParseError(f"atom {rel!r} needs at least the identifier argument")
    return QueryAtom(rel, args)


def _parse_sim(chunk: str) -> SimLiteral:
    left, rest = chunk.split("~", 1)
    if "~" in rest:
        dom, right = rest.split("~", 1)
        return SimLiteral(_parse_term(left.strip()), _parse_term(right.strip()), dom.strip())
    return SimLiteral(_parse_term(left.strip()), _parse_term(rest.strip()), None)


def _parse_term(text: str) -> Term:
    if not text:
        raise ParseError("empty term")
    if text.startswith('"') and text.endswith('"') and len(text) >= 2:
        return text[1:-1]
    if _is_var_name(text):
        return Var(text)
    return text


def _split_commas(text: str) -> list[str]:
    """Split on commas that are not inside parentheses or quotes."""
    parts, depth, start, in_quote = [], 0, 0, False
    for i, ch in enumerate(text):
        if ch == '"':
            in_quote = not in_quote
        elif in_quote:
            continue
        elif ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        elif ch == "," and depth == 0:
            parts.append(text[start:i])
            start = i + 1
    parts.append(text[start:])
    return parts


def load_queries(path: str | Path) -> list[ConjunctiveQuery]:
    return parse_queries(Path(path).read_text())
