"""Generate cleaning programs from a rule set and an instance.

Two related outputs.  The general form targets answer-set solvers: tuple
versions accumulate in `<rel>_v` predicates, every applicable rule pair opens
a disjunctive match-or-not choice, and constraints over a `prec` relation on
matchings discard models whose merges cannot be ordered into a valid
enforcement sequence.  When the classifier shows the rule set converges to
one clean instance, the residual form drops the disjunction, the `prec`
machinery, and all constraints, leaving stratified Datalog that computes that
instance bottom-up.

Similarity, merge, and order tables are materialised as facts (`sim_<dom>`,
`mf_<dom>`, `pre_<dom>`), so the emitted text is self-contained.  Matchings
are reified as `mt(...)` terms holding the two tuple versions, which keeps
`prec` binary even when rules range over relations of different arities.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import permutations

from .classify import Classification, Verdict
from .datalog import Program, evaluate, format_term, parse_asp, parse_program
from .errors import NotSci, ValidationError
from .mdlang import (
    MatchingDependency,
    MDSet,
    rhs_targets,
    rhs_domain,
    sim_domain,
    validate_mds,
)
from .model import (
    Instance,
    SaturatedMatchingFunction,
    Schema,
    SimilarityRelation,
    collect_active_values,
)

BLOCK_TITLES = {
    1: "initial tuple versions and value tables",
    2: "match choices, superseded versions, forced-match filter",
    3: "merged tuple insertion",
    4: "ordering: matchings of successive versions",
    5: "ordering: matchings sharing one version",
    6: "ordering is a partial order",
    7: "clean relation collection",
}


@dataclass(frozen=True)
class AspStatement:
    block: int
    kind: str
    text: str


@dataclass(frozen=True)
class AspText:
    statements: tuple[AspStatement, ...]

    def text(self) -> str:
        lines = []
        last_block = None
        for st in self.statements:
            if st.block != last_block:
                if last_block is not None:
                    lines.append("")
                lines.append(f"% {st.block}. {BLOCK_TITLES[st.block]}")
                last_block = st.block
            lines.append(st.text)
        return "\n".join(lines) + "\n"

    def of_kind(self, kind: str) -> list[AspStatement]:
        return [st for st in self.statements if st.kind == kind]

    def counts(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for st in self.statements:
            out[st.kind] = out.get(st.kind, 0) + 1
        return out


@dataclass(frozen=True)
class ResidualProgram:
    program: Program
    clean_predicates: tuple[tuple[str, str], ...]
    source: str

    def text(self) -> str:
        return self.source


# ---------------------------------------------------------------------------
# naming


def _pred(name: str) -> str:
    return name.lower()


def _version_pred(rel: str) -> str:
    return f"{_pred(rel)}_v"


def _clean_pred(rel: str) -> str:
    return f"{_pred(rel)}_clean"


def _oldversion_pred(rel: str) -> str:
    return f"oldversion_{_pred(rel)}"


def _vcap(var: str) -> str:
    return var[0].upper() + var[1:]


def _const(value: str) -> str:
    return format_term(value)


def _atom(pred: str, args) -> str:
    return f"{pred}({', '.join(args)})"


def _rule(head: str, body) -> str:
    return f"{head} :- {', '.join(body)}."


def _constraint(body) -> str:
    return f":- {', '.join(body)}."


def _fresh(base: str, taken: set[str]) -> str:
    name = base
    while name in taken:
        name += "q"
    taken.add(name)
    return name


def _rename_map(md: MatchingDependency, taken: set[str]) -> dict[str, str]:
    """Fresh capitalised names for every variable of `md`, avoiding `taken`."""
    out = {}
    for v in md.variables():
        out[v] = _fresh(_vcap(v) + "q", taken)
    return out


def _lead_args(md: MatchingDependency, side: int, rename=None) -> list[str]:
    atom = md.leading_atoms()[side]
    names = [atom.tid_var, *atom.attr_vars]
    if rename is None:
        return [_vcap(v) for v in names]
    return [rename[v] for v in names]


def _match_args(md: MatchingDependency, rename=None) -> list[str]:
    return _lead_args(md, 0, rename) + _lead_args(md, 1, rename)


def _mt(args) -> str:
    return f"mt({', '.join(args)})"


def _rhs_var_on_side(md: MatchingDependency, side: int) -> str:
    pos = dict(rhs_targets(md))[side]
    return md.leading_atoms()[side].attr_vars[pos]


def _written_positions(mds: MDSet, schema: Schema) -> dict[str, set[int]]:
    out: dict[str, set[int]] = {}
    for md in mds:
        lead = md.leading_atoms()
        for side, pos in rhs_targets(md):
            out.setdefault(lead[side].relation, set()).add(pos)
    return out


def _context_symmetric(md: MatchingDependency) -> bool:
    """Whether swapping the two leading tuples maps the context onto itself."""
    context = md.context_atoms()
    if not context:
        return True
    lead0, lead1 = md.leading_atoms()
    swap = {lead0.tid_var: lead1.tid_var, lead1.tid_var: lead0.tid_var}
    for a, b in zip(lead0.attr_vars, lead1.attr_vars):
        swap[a] = b
        swap[b] = a
    for perm in permutations(range(len(context))):
        mapping = dict(swap)
        ok = True
        for i, j in enumerate(perm):
            src, dst = context[i], context[j]
            if src.relation != dst.relation:
                ok = False
                break
            for x, y in zip((src.tid_var, *src.attr_vars), (dst.tid_var, *dst.attr_vars)):
                if mapping.setdefault(x, y) != y:
                    ok = False
                    break
            if not ok:
                break
        if ok:
            return True
    return False


# ---------------------------------------------------------------------------
# shared pieces


def _md_body(
    md: MatchingDependency,
    schema: Schema,
    relation_pred,
) -> list[str]:
    """Leading atoms, context atoms, similarity literals, and the RHS guard."""
    body = []
    for side in (0, 1):
        atom = md.leading_atoms()[side]
        body.append(_atom(relation_pred(atom.relation), _lead_args(md, side)))
    for atom in md.context_atoms():
        args = [_vcap(atom.tid_var), *(_vcap(v) for v in atom.attr_vars)]
        body.append(_atom(relation_pred(atom.relation), args))
    for sc in md.similarities:
        dom = sim_domain(md, schema, sc)
        body.append(_atom(f"sim_{_pred(dom)}", [_vcap(sc.left), _vcap(sc.right)]))
    body.append(f"{_vcap(md.rhs_left)} != {_vcap(md.rhs_right)}")
    return body


def _insertion_rules(
    md: MatchingDependency, schema: Schema, relation_pred
) -> list[str]:
    """One head per leading atom, writing the merged value over the match."""
    dom = rhs_domain(md, schema)
    taken = {_vcap(v) for v in md.variables()}
    merged = _fresh("Mv", taken)
    match_atom = _atom(f"match_{_pred(md.name)}", _match_args(md))
    mf_atom = _atom(
        f"mf_{_pred(dom)}", [_vcap(md.rhs_left), _vcap(md.rhs_right), merged]
    )
    rules = []
    targets = dict(rhs_targets(md))
    for side in (0, 1):
        atom = md.leading_atoms()[side]
        head_args = _lead_args(md, side)
        head_args[1 + targets[side]] = merged
        head = _atom(relation_pred(atom.relation), head_args)
        rules.append(_rule(head, [match_atom, mf_atom]))
    return rules


def _oldversion_rules(
    rel_name: str,
    schema: Schema,
    smf: SaturatedMatchingFunction,
    written: set[int],
    relation_pred,
) -> list[str]:
    """Superseded-version rules, one per position a rule can write.

    The version order compares attribute-wise: positions whose domain has a
    matching function get a `pre_<dom>` literal, the rest share one variable
    (their order is equality).  Versions of a tuple can only differ at
    written positions, so the tuple-inequality guard splits over those.
    """
    rel = schema.relation(rel_name)
    tid = "T"
    first = [_vcap(a) for a in rel.attrs]
    second = []
    body = []
    for i, (attr, dom) in enumerate(zip(rel.attrs, rel.domains)):
        if smf.has_mf(dom):
            second.append(first[i] + "q")
        else:
            second.append(first[i])
    pred = relation_pred(rel_name)
    body.append(_atom(pred, [tid, *first]))
    body.append(_atom(pred, [tid, *second]))
    for i, dom in enumerate(rel.domains):
        if smf.has_mf(dom):
            body.append(_atom(f"pre_{_pred(dom)}", [first[i], second[i]]))
    rules = []
    for pos in sorted(written):
        guard = f"{first[pos]} != {second[pos]}"
        head = _atom(_oldversion_pred(rel_name), [tid, *first])
        rules.append(_rule(head, body + [guard]))
    return rules


def _table_facts(
    mds: MDSet,
    schema: Schema,
    instance: Instance,
    sim: SimilarityRelation,
    smf: SaturatedMatchingFunction,
    written_rels,
) -> list[AspStatement]:
    active = collect_active_values(schema, instance, sim)
    out = []
    mf_domains = sorted({rhs_domain(md, schema) for md in mds})
    pre_domains = sorted(
        {
            dom
            for rel_name in written_rels
            for dom in schema.relation(rel_name).domains
            if smf.has_mf(dom)
        }
    )
    for dom in sorted(set(mf_domains) | set(pre_domains)):
        missing = active.get(dom, set()) - smf.values(dom)
        if missing:
            raise ValidationError(
                f"matching function for domain {dom!r} was not saturated over the "
                f"instance values; missing {sorted(missing)}"
            )
    for dom in mf_domains:
        for a, b, c in smf.triples(dom):
            out.append(
                AspStatement(
                    1,
                    "mf-fact",
                    _atom(f"mf_{_pred(dom)}", [_const(a), _const(b), _const(c)]) + ".",
                )
            )
    for dom in pre_domains:
        universe = sorted(smf.values(dom) | active.get(dom, set()))
        for a in universe:
            for b in universe:
                if smf.precedes(dom, a, b):
                    out.append(
                        AspStatement(
                            1,
                            "pre-fact",
                            _atom(f"pre_{_pred(dom)}", [_const(a), _const(b)]) + ".",
                        )
                    )
    sim_domains = sorted(
        {sim_domain(md, schema, sc) for md in mds for sc in md.similarities}
    )
    for dom in sim_domains:
        universe = sorted(smf.values(dom) | active.get(dom, set()))
        for a in universe:
            for b in universe:
                if sim.similar(dom, a, b):
                    out.append(
                        AspStatement(
                            1,
                            "sim-fact",
                            _atom(f"sim_{_pred(dom)}", [_const(a), _const(b)]) + ".",
                        )
                    )
    return out


# ---------------------------------------------------------------------------
# general ASP


def emit_general_asp(
    schema: Schema,
    instance: Instance,
    mds: MDSet,
    sim: SimilarityRelation,
    smf: SaturatedMatchingFunction,
) -> AspText:
    """The disjunctive cleaning program; stable models are the clean instances."""
    validate_mds(mds, schema)
    for md in mds:
        dom = rhs_domain(md, schema)
        if not smf.has_mf(dom):
            raise ValidationError(
                f"rule {md.name!r} writes domain {dom!r}, which has no matching function"
            )
    written = _written_positions(mds, schema)
    statements: list[AspStatement] = []

    for rel_name in schema.relation_names():
        pred = _version_pred(rel_name)
        for tid in sorted(instance.tuples.get(rel_name, {})):
            vals = instance.tuples[rel_name][tid]
            args = [_const(tid), *(_const(v) for v in vals)]
            statements.append(AspStatement(1, "version-fact", _atom(pred, args) + "."))
    statements.extend(_table_facts(mds, schema, instance, sim, smf, sorted(written)))

    for md in mds:
        name = _pred(md.name)
        args = _match_args(md)
        head = f"{_atom(f'match_{name}', args)} | {_atom(f'notmatch_{name}', args)}"
        statements.append(
            AspStatement(
                2, "disjunctive", _rule(head, _md_body(md, schema, _version_pred))
            )
        )
    for md in mds:
        (s0, p0), (s1, p1) = rhs_targets(md)
        if md.same_relation() and p0 == p1 and _context_symmetric(md):
            name = _pred(md.name)
            forward = _match_args(md)
            swapped = _lead_args(md, 1) + _lead_args(md, 0)
            statements.append(
                AspStatement(
                    2,
                    "symmetry",
                    _rule(_atom(f"match_{name}", swapped), [_atom(f"match_{name}", forward)]),
                )
            )
    for rel_name in sorted(written):
        for text in _oldversion_rules(rel_name, schema, smf, written[rel_name], _version_pred):
            statements.append(AspStatement(2, "oldversion", text))
    for md in mds:
        name = _pred(md.name)
        body = [_atom(f"notmatch_{name}", _match_args(md))]
        for side in (0, 1):
            atom = md.leading_atoms()[side]
            body.append(
                "not " + _atom(_oldversion_pred(atom.relation), _lead_args(md, side))
            )
        statements.append(AspStatement(2, "notmatch-constraint", _constraint(body)))

    for md in mds:
        for text in _insertion_rules(md, schema, _version_pred):
            statements.append(AspStatement(3, "insertion", text))

    statements.extend(_prec_recording(mds, schema, smf, written))

    for md in mds:
        args = _match_args(md)
        statements.append(
            AspStatement(
                6,
                "prec-reflexivity",
                _rule(
                    _atom("prec", [_mt(args), _mt(args)]),
                    [_atom(f"match_{_pred(md.name)}", args)],
                ),
            )
        )
    if len(mds):
        statements.append(
            AspStatement(
                6,
                "prec-antisymmetry",
                _constraint(["prec(M1, M2)", "prec(M2, M1)", "M1 != M2"]),
            )
        )
        statements.append(
            AspStatement(
                6,
                "prec-transitivity",
                _constraint(["prec(M1, M2)", "prec(M2, M3)", "not prec(M1, M3)"]),
            )
        )

    for rel_name in schema.relation_names():
        rel = schema.relation(rel_name)
        args = ["T", *(_vcap(a) for a in rel.attrs)]
        body = [_atom(_version_pred(rel_name), args)]
        if rel_name in written:
            body.append("not " + _atom(_oldversion_pred(rel_name), args))
        statements.append(
            AspStatement(7, "collect", _rule(_atom(_clean_pred(rel_name), args), body))
        )

    text = AspText(tuple(statements))
    parse_asp(text.text())
    return text


def _prec_recording(
    mds: MDSet,
    schema: Schema,
    smf: SaturatedMatchingFunction,
    written: dict[str, set[int]],
) -> list[AspStatement]:
    """Blocks 4 and 5: order every two matchings touching a common tuple.

    Each ordered rule pair yields up to four positional variants, one per
    choice of which component of each matching carries the shared tuple;
    variants whose components live in different relations are skipped.
    Block 4 covers matchings of two comparable versions (the earlier version
    matches first), block 5 matchings sharing one version (the matching that
    changes the tuple goes last).
    """
    out = []
    for mdj in mds:
        for mdk in mds:
            for i in (0, 1):
                for ip in (0, 1):
                    rel_j = mdj.leading_atoms()[i].relation
                    rel_k = mdk.leading_atoms()[ip].relation
                    if rel_j != rel_k:
                        continue
                    rel = schema.relation(rel_j)
                    lead_j = mdj.leading_atoms()[i]
                    lead_k = mdk.leading_atoms()[ip]
                    first_vars = {_vcap(v) for v in mdj.variables()}

                    taken = set(first_vars)
                    ren = _rename_map(mdk, taken)
                    for pos, (vj, vk) in enumerate(
                        zip(lead_j.attr_vars, lead_k.attr_vars)
                    ):
                        if not smf.has_mf(rel.domains[pos]):
                            ren[vk] = _vcap(vj)
                    ren[lead_k.tid_var] = _vcap(lead_j.tid_var)
                    body = [
                        _atom(f"match_{_pred(mdj.name)}", _match_args(mdj)),
                        _atom(f"match_{_pred(mdk.name)}", _match_args(mdk, ren)),
                    ]
                    for pos, (vj, vk) in enumerate(
                        zip(lead_j.attr_vars, lead_k.attr_vars)
                    ):
                        if smf.has_mf(rel.domains[pos]):
                            body.append(
                                _atom(
                                    f"pre_{_pred(rel.domains[pos])}",
                                    [_vcap(vj), ren[vk]],
                                )
                            )
                    head = _atom(
                        "prec", [_mt(_match_args(mdj)), _mt(_match_args(mdk, ren))]
                    )
                    for pos in sorted(written.get(rel_j, ())):
                        guard = f"{_vcap(lead_j.attr_vars[pos])} != {ren[lead_k.attr_vars[pos]]}"
                        out.append(
                            AspStatement(4, "prec-newer-version", _rule(head, body + [guard]))
                        )

                    taken = set(first_vars)
                    ren5 = _rename_map(mdk, taken)
                    for vj, vk in zip(lead_j.attr_vars, lead_k.attr_vars):
                        ren5[vk] = _vcap(vj)
                    ren5[lead_k.tid_var] = _vcap(lead_j.tid_var)
                    merged = _fresh("Mv", taken)
                    shared_rhs = ren5[_rhs_var_on_side(mdk, ip)]
                    other_rhs = ren5[_rhs_var_on_side(mdk, 1 - ip)]
                    dom_k = rhs_domain(mdk, schema)
                    body5 = [
                        _atom(f"match_{_pred(mdj.name)}", _match_args(mdj)),
                        _atom(f"match_{_pred(mdk.name)}", _match_args(mdk, ren5)),
                        _atom(f"mf_{_pred(dom_k)}", [shared_rhs, other_rhs, merged]),
                        f"{shared_rhs} != {merged}",
                    ]
                    head5 = _atom(
                        "prec", [_mt(_match_args(mdj)), _mt(_match_args(mdk, ren5))]
                    )
                    out.append(AspStatement(5, "prec-shared-version", _rule(head5, body5)))
    return out


# ---------------------------------------------------------------------------
# residual Datalog


def emit_residual_datalog(
    schema: Schema,
    instance: Instance,
    mds: MDSet,
    sim: SimilarityRelation,
    smf: SaturatedMatchingFunction,
    classification: Classification,
) -> ResidualProgram:
    """The non-disjunctive rewriting; only sound when the chase converges."""
    if classification.verdict is Verdict.GENERAL:
        raise NotSci(
            "rule set and instance classify as general; the residual rewriting "
            "is only sound for converging combinations"
        )
    validate_mds(mds, schema)
    written = _written_positions(mds, schema)
    lines: list[str] = []

    lines.append("% 1. " + BLOCK_TITLES[1])
    for rel_name in schema.relation_names():
        pred = _pred(rel_name)
        for tid in sorted(instance.tuples.get(rel_name, {})):
            vals = instance.tuples[rel_name][tid]
            args = [_const(tid), *(_const(v) for v in vals)]
            lines.append(_atom(pred, args) + ".")
    for st in _table_facts(mds, schema, instance, sim, smf, sorted(written)):
        lines.append(st.text)

    lines.append("")
    lines.append("% 2. matches over current tuples, superseded versions")
    for md in mds:
        head = _atom(f"match_{_pred(md.name)}", _match_args(md))
        lines.append(_rule(head, _md_body(md, schema, _pred)))
    for rel_name in sorted(written):
        lines.extend(
            _oldversion_rules(rel_name, schema, smf, written[rel_name], _pred)
        )

    lines.append("")
    lines.append("% 3. " + BLOCK_TITLES[3])
    for md in mds:
        lines.extend(_insertion_rules(md, schema, _pred))

    lines.append("")
    lines.append("% 7. " + BLOCK_TITLES[7])
    clean_preds = []
    for rel_name in schema.relation_names():
        rel = schema.relation(rel_name)
        args = ["T", *(_vcap(a) for a in rel.attrs)]
        body = [_atom(_pred(rel_name), args)]
        if rel_name in written:
            body.append("not " + _atom(_oldversion_pred(rel_name), args))
        lines.append(_rule(_atom(_clean_pred(rel_name), args), body))
        clean_preds.append((rel_name, _clean_pred(rel_name)))

    source = "\n".join(lines) + "\n"
    program = parse_program(source)
    return ResidualProgram(program, tuple(clean_preds), source)


def evaluate_residual(residual: ResidualProgram) -> dict[str, dict[str, tuple[str, ...]]]:
    """Clean tuples per relation, keyed by tuple identifier."""
    model = evaluate(residual.program)
    out: dict[str, dict[str, tuple[str, ...]]] = {}
    for rel_name, pred in residual.clean_predicates:
        rows: dict[str, tuple[str, ...]] = {}
        for row in sorted(model.get(pred)):
            tid, vals = row[0], row[1:]
            if rows.setdefault(tid, vals) != vals:
                raise ValidationError(
                    f"clean relation {rel_name!r} keeps two versions of {tid!r}; "
                    "the combination was not actually convergent"
                )
            rows[tid] = vals
        out[rel_name] = rows
    return out
