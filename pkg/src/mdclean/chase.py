"""Chase enforcement of matching dependencies.

A step picks two identified tuples matching the leading atoms of a rule
(plus a context assignment for any further atoms), checks the left-hand
similarities on current values, and replaces both right-hand values with
their merge.  `chase_all` explores every enforcement order and returns the
distinct stable endpoints; `chase_one` follows one seeded order.  States are
memoised on current values only, which keeps the exhaustive run exponential
in the number of reachable value states rather than in step interleavings.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

from .errors import (
    InstanceTooLarge,
    StepLimitExceeded,
    StepNotApplicable,
    ValidationError,
)
from .mdlang import (
    MatchingDependency,
    MDSet,
    rhs_domain,
    rhs_targets,
    sim_domain,
    validate_mds,
)
from .model import Instance, SaturatedMatchingFunction, Schema, SimilarityRelation

DEFAULT_STEP_LIMIT = 20000
DEFAULT_ENUMERATION_GATE = 12


@dataclass(frozen=True)
class EnforcementStep:
    """One applicable enforcement, identified by rule and leading tuples.

    For rules whose leading atoms share a relation the pair is stored in
    sorted order; `context_tids` is the first context witness found and
    `old_values` follow the leading order here.
    """

    md: str
    lead_tids: tuple[str, str]
    context_tids: tuple[str, ...]
    old_values: tuple[str, str]
    new_value: str

    def to_json_dict(self) -> dict:
        out = {
            "md": self.md,
            "tuples": list(self.lead_tids),
            "old": list(self.old_values),
            "new": self.new_value,
        }
        if self.context_tids:
            out["context"] = list(self.context_tids)
        return out


@dataclass(frozen=True)
class ChaseResult:
    """Stable endpoints with one witnessing step sequence each."""

    instances: tuple[Instance, ...]
    sequences: tuple[tuple[EnforcementStep, ...], ...]


class _CompiledMD:
    """Pre-resolved positions for matching one rule against instances."""

    def __init__(self, md: MatchingDependency, schema: Schema):
        self.md = md
        self.lead = md.leading_atoms()
        self.context = md.context_atoms()
        self.sims = [
            (sc.left, sc.right, sim_domain(md, schema, sc)) for sc in md.similarities
        ]
        (s0, p0), (s1, p1) = rhs_targets(md)
        assert (s0, s1) == (0, 1)
        self.rhs_pos = (p0, p1)
        self.rhs_domain = rhs_domain(md, schema)
        self.same_relation = md.same_relation()
        # both orientations of a same-relation pair write the same cells only
        # when the two right-hand positions coincide; otherwise each ordered
        # pair is its own step
        self.symmetric_write = self.same_relation and p0 == p1


class ChaseEngine:
    def __init__(
        self,
        schema: Schema,
        mds: MDSet,
        sim: SimilarityRelation,
        smf: SaturatedMatchingFunction,
    ):
        validate_mds(mds, schema)
        self.schema = schema
        self.mds = mds
        self.sim = sim
        self.smf = smf
        self._compiled = [_CompiledMD(md, schema) for md in mds]

    # -- step discovery ----------------------------------------------------

    def applicable_steps(self, instance: Instance) -> list[EnforcementStep]:
        """Every applicable step, sorted by rule order then leading tuples."""
        steps: dict[tuple, EnforcementStep] = {}
        for md_index, compiled in enumerate(self._compiled):
            for step in self._steps_for(instance, compiled):
                steps.setdefault((md_index, step.lead_tids), step)
        return [steps[key] for key in sorted(steps, key=lambda k: (k[0], k[1]))]

    def _steps_for(self, instance: Instance, compiled: _CompiledMD):
        lead0, lead1 = compiled.lead
        rows0 = instance.tuples.get(lead0.relation, {})
        rows1 = instance.tuples.get(lead1.relation, {})
        for tid0 in sorted(rows0):
            for tid1 in sorted(rows1):
                if compiled.same_relation and tid0 == tid1:
                    continue
                step = self._try_pair(instance, compiled, tid0, tid1)
                if step is not None:
                    yield step

    def _try_pair(
        self, instance: Instance, compiled: _CompiledMD, tid0: str, tid1: str
    ) -> EnforcementStep | None:
        lead0, lead1 = compiled.lead
        binding: dict[str, str] = {}
        for atom, tid in ((lead0, tid0), (lead1, tid1)):
            vals = instance.current(atom.relation, tid)
            binding[atom.tid_var] = tid
            for var, val in zip(atom.attr_vars, vals):
                if binding.setdefault(var, val) != val:
                    return None
        context = self._match_context(instance, compiled, binding)
        if context is None:
            return None
        v0 = instance.current(lead0.relation, tid0)[compiled.rhs_pos[0]]
        v1 = instance.current(lead1.relation, tid1)[compiled.rhs_pos[1]]
        if v0 == v1:
            return None
        if compiled.symmetric_write and tid1 < tid0:
            tid0, tid1 = tid1, tid0
            v0, v1 = v1, v0
        merged = self.smf.match(compiled.rhs_domain, v0, v1)
        return EnforcementStep(compiled.md.name, (tid0, tid1), context, (v0, v1), merged)

    def _match_context(
        self, instance: Instance, compiled: _CompiledMD, binding: dict[str, str]
    ) -> tuple[str, ...] | None:
        """First assignment of context atoms consistent with the binding."""

        def check_sims(current: dict[str, str]) -> bool:
            for left, right, dom in compiled.sims:
                lv, rv = current.get(left), current.get(right)
                if lv is not None and rv is not None and not self.sim.similar(dom, lv, rv):
                    return False
            return True

        def extend(idx: int, current: dict[str, str], chosen: tuple[str, ...]):
            if not check_sims(current):
                return None
            if idx == len(compiled.context):
                return chosen
            atom = compiled.context[idx]
            rows = instance.tuples.get(atom.relation, {})
            for tid in sorted(rows):
                trial = dict(current)
                if trial.setdefault(atom.tid_var, tid) != tid:
                    continue
                vals = rows[tid]
                ok = True
                for var, val in zip(atom.attr_vars, vals):
                    if trial.setdefault(var, val) != val:
                        ok = False
                        break
                if not ok:
                    continue
                found = extend(idx + 1, trial, chosen + (tid,))
                if found is not None:
                    return found
            return None

        return extend(0, binding, ())

    # -- enforcement -------------------------------------------------------

    def is_stable(self, instance: Instance) -> bool:
        return not self.applicable_steps(instance)

    def enforce(self, instance: Instance, step: EnforcementStep) -> Instance:
        compiled = self._find(step.md)
        lead0, lead1 = compiled.lead
        tid0, tid1 = step.lead_tids
        try:
            vals0 = instance.current(lead0.relation, tid0)
            vals1 = instance.current(lead1.relation, tid1)
        except KeyError:
            raise StepNotApplicable(f"step {step.md} on missing tuples {step.lead_tids}") from None
        v0, v1 = vals0[compiled.rhs_pos[0]], vals1[compiled.rhs_pos[1]]
        if (v0, v1) != step.old_values:
            raise StepNotApplicable(
                f"step {step.md} on {step.lead_tids}: values are now ({v0!r}, {v1!r}), "
                f"expected {step.old_values}"
            )
        if v0 == v1:
            raise StepNotApplicable(
                f"step {step.md} on {step.lead_tids}: values already agree on {v0!r}"
            )
        new0 = list(vals0)
        new0[compiled.rhs_pos[0]] = step.new_value
        updates = {(lead0.relation, tid0): tuple(new0)}
        base1 = updates.get((lead1.relation, tid1), vals1)
        new1 = list(base1)
        new1[compiled.rhs_pos[1]] = step.new_value
        updates[(lead1.relation, tid1)] = tuple(new1)
        return instance.with_updates(updates)

    def _find(self, md_name: str) -> _CompiledMD:
        for compiled in self._compiled:
            if compiled.md.name == md_name:
                return compiled
        raise ValidationError(f"unknown rule {md_name!r}")

    # -- chase -------------------------------------------------------------

    def chase_all(
        self,
        instance: Instance,
        step_limit: int = DEFAULT_STEP_LIMIT,
        enumeration_gate: int = DEFAULT_ENUMERATION_GATE,
    ) -> ChaseResult:
        """All stable endpoints reachable by any enforcement order."""
        if instance.total_tuples() > enumeration_gate:
            raise InstanceTooLarge(
                f"{instance.total_tuples()} tuples exceed the enumeration gate "
                f"({enumeration_gate}); use chase_one for large instances"
            )
        budget = step_limit
        seen: set[tuple] = set()
        results: dict[tuple, tuple[Instance, tuple[EnforcementStep, ...]]] = {}
        stack: list[tuple[Instance, tuple[EnforcementStep, ...]]] = [(instance, ())]
        while stack:
            current, path = stack.pop()
            key = current.canonical_key()
            if key in seen:
                continue
            seen.add(key)
            steps = self.applicable_steps(current)
            if not steps:
                results.setdefault(key, (current, path))
                continue
            for step in steps:
                if budget <= 0:
                    raise StepLimitExceeded(
                        f"chase exceeded {step_limit} enforcement steps"
                    )
                budget -= 1
                stack.append((self.enforce(current, step), path + (step,)))
        ordered = sorted(results)
        return ChaseResult(
            tuple(results[key][0] for key in ordered),
            tuple(results[key][1] for key in ordered),
        )

    def chase_one(
        self,
        instance: Instance,
        seed: int = 0,
        step_limit: int = DEFAULT_STEP_LIMIT,
    ) -> ChaseResult:
        """One stable instance, following the rule priority drawn from `seed`."""
        names = self.mds.names()
        priority: dict[str, int] = {}
        if names:
            perms = math.factorial(len(names))
            chosen = None
            for idx, perm in enumerate(itertools.permutations(names)):
                if idx == seed % perms:
                    chosen = perm
                    break
            priority = {name: rank for rank, name in enumerate(chosen)}
        current = instance
        path: list[EnforcementStep] = []
        for _ in range(step_limit):
            steps = self.applicable_steps(current)
            if not steps:
                return ChaseResult((current,), (tuple(path),))
            step = min(steps, key=lambda s: (priority.get(s.md, 0), s.lead_tids))
            current = self.enforce(current, step)
            path.append(step)
        raise StepLimitExceeded(f"chase exceeded {step_limit} enforcement steps")
