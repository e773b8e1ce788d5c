"""Shared hypothesis strategies and independent brute-force oracles.

The oracles here (naive ground closure, all-substitution step enumeration)
are deliberately written without reference to the engine internals; they are
the second route the engine is checked against.
"""

from __future__ import annotations

import itertools
import random

import hypothesis.strategies as st

from oracle_forge import template
from oracle_forge.kernel import Atom, Fact, KnowledgeBase, Rule, Term, const, var

# --------------------------------------------------------------------------
# Template strategies

_TRICKY = [
    "<RULE>",
    "</FACTS>",
    "\\",
    "a\\<b",
    "FINAL ANSWER: cheat",
    "<QUERY>nested</QUERY>",
    "line1\nline2",
    "- dash prefix",
    "trailing backslash\\",
]

_plain_text = st.text(
    alphabet=st.characters(blacklist_categories=("Cs",)), max_size=30
)

field_text = st.one_of(_plain_text, st.sampled_from(_TRICKY))

nonempty_field = field_text.filter(lambda s: bool(s.strip()))

_answer_text = st.text(
    alphabet=st.characters(blacklist_categories=("Cs",), blacklist_characters="\n\r"),
    min_size=1,
    max_size=20,
).filter(lambda s: s == s.strip() and bool(s))

revision_results = st.one_of(
    st.just(template.RevisionResult.retained()),
    field_text.map(template.RevisionResult.revised_to),
)


@st.composite
def reasoning_steps(draw, index: int = 0):
    return template.ReasoningStep(
        query=draw(nonempty_field),
        facts=tuple(draw(st.lists(nonempty_field, min_size=1, max_size=4))),
        rule=draw(nonempty_field),
        revision=draw(field_text),
        revision_result=draw(revision_results),
        reasoning_result=draw(nonempty_field),
        step_index=index,
    )


@st.composite
def structured_responses(draw):
    n = draw(st.integers(min_value=1, max_value=4))
    steps = tuple(draw(reasoning_steps(index=i)) for i in range(n))
    final = draw(st.one_of(st.just(""), _answer_text))
    return template.StructuredResponse(steps=steps, final_answer=final)


# --------------------------------------------------------------------------
# Random stratified knowledge bases

PREDS = [f"p{i}" for i in range(8)]
CONSTS = [const(c) for c in "abcde"]
VARS = [var(v) for v in "XYZ"]


def random_kb(
    rng: random.Random,
    max_facts: int = 30,
    max_rules: int = 10,
    negation: bool = True,
) -> KnowledgeBase:
    """Random KB, stratified by construction: every rule's body predicates
    have index <= the head's, negated ones strictly less."""
    arity = {p: rng.choice((1, 2)) for p in PREDS}

    def ground_atom(p):
        return Atom(p, tuple(rng.choice(CONSTS) for _ in range(arity[p])))

    facts = set()
    for _ in range(rng.randint(1, max_facts)):
        facts.add(Fact(ground_atom(rng.choice(PREDS))))

    rules = []
    for _ in range(rng.randint(0, max_rules)):
        h_idx = rng.randint(0, len(PREDS) - 1)
        body_pos = []
        bound: list[Term] = []
        for _ in range(rng.randint(1, 2)):
            p = PREDS[rng.randint(0, h_idx)]
            args = []
            for _ in range(arity[p]):
                t = rng.choice(VARS + CONSTS)
                args.append(t)
                if t.is_variable:
                    bound.append(t)
            body_pos.append(Atom(p, tuple(args)))
        pool = bound + list(CONSTS)
        head = Atom(
            PREDS[h_idx],
            tuple(rng.choice(pool) for _ in range(arity[PREDS[h_idx]])),
        )
        body_neg = []
        if negation and h_idx > 0 and rng.random() < 0.4:
            p = PREDS[rng.randint(0, h_idx - 1)]
            body_neg.append(
                Atom(p, tuple(rng.choice(pool) for _ in range(arity[p])))
            )
        rules.append(Rule(head, tuple(body_pos), tuple(body_neg)))
    return KnowledgeBase(frozenset(facts), tuple(rules))


# --------------------------------------------------------------------------
# Brute-force oracles


def _all_constants(kb: KnowledgeBase):
    consts = set()
    for f in kb.facts:
        consts.update(t for t in f.atom.args)
    for r in kb.rules:
        for a in itertools.chain((r.head,), r.body_pos, r.body_neg):
            consts.update(t for t in a.args if not t.is_variable)
    return sorted(consts)


def _ground_rule_instances(rule: Rule, consts):
    variables = sorted(
        set(
            t
            for a in itertools.chain((rule.head,), rule.body_pos, rule.body_neg)
            for t in a.args
            if t.is_variable
        )
    )
    if not variables:
        yield rule.head, rule.body_pos, rule.body_neg
        return
    for combo in itertools.product(consts, repeat=len(variables)):
        theta = dict(zip(variables, combo))
        yield (
            rule.head.substitute(theta),
            tuple(a.substitute(theta) for a in rule.body_pos),
            tuple(a.substitute(theta) for a in rule.body_neg),
        )


def naive_closure(kb: KnowledgeBase) -> frozenset[Fact]:
    """Brute-force stratified closure: process predicates in index order
    (valid for KBs from random_kb, whose negation points down the order),
    repeating all ground instantiations until nothing changes."""
    consts = _all_constants(kb)
    facts = {f.atom for f in kb.facts}

    def head_index(rule):
        name = rule.head.predicate
        return int(name[1:]) if name[1:].isdigit() else 0

    for s in range(len(PREDS)):
        layer = [r for r in kb.rules if head_index(r) == s]
        changed = True
        while changed:
            changed = False
            for r in layer:
                for head, pos, neg in _ground_rule_instances(r, consts):
                    if not head.is_ground:
                        continue
                    if all(a in facts for a in pos) and not any(
                        a in facts for a in neg
                    ):
                        if head not in facts:
                            facts.add(head)
                            changed = True
    return frozenset(Fact(a) for a in facts)


def naive_closure_positive(kb: KnowledgeBase) -> frozenset[Fact]:
    """Fully naive closure for negation-free KBs (no stratification needed)."""
    assert all(not r.body_neg for r in kb.rules)
    consts = _all_constants(kb)
    facts = {f.atom for f in kb.facts}
    changed = True
    while changed:
        changed = False
        for r in kb.rules:
            for head, pos, _neg in _ground_rule_instances(r, consts):
                if head.is_ground and all(a in facts for a in pos):
                    if head not in facts:
                        facts.add(head)
                        changed = True
    return frozenset(Fact(a) for a in facts)


def enumerate_step_verdict(facts, rule: Rule):
    """All-substitution oracle for single-step verification: heads derivable
    from exactly the given facts, closed-world negation over them."""
    fact_atoms = {f.atom for f in facts}
    consts = sorted(
        set(t for a in fact_atoms for t in a.args)
        | {
            t
            for a in itertools.chain((rule.head,), rule.body_pos, rule.body_neg)
            for t in a.args
            if not t.is_variable
        }
    )
    heads = set()
    for head, pos, neg in _ground_rule_instances(rule, consts):
        if not head.is_ground:
            continue
        if all(a in fact_atoms for a in pos) and not any(a in fact_atoms for a in neg):
            heads.add(Fact(head))
    return heads
