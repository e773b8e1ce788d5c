"""Horn-clause knowledge representation and forward-chaining inference.

Implements the symbolic verifier role: a small stratified-datalog engine with
negation-as-failure, a recursive-descent parser for the ``.kbl`` rule
language, and single-step syllogism verification against a closed fact set.

Rule language (see docs/rule_language.md):

    # comment
    fact parent(alice, bob).
    rule grandparent(X, Z) :- parent(X, Y), parent(Y, Z).
    rule lonely(X) :- person(X), not parent(X, Y).   # rejected: Y unsafe

Variables start with an uppercase letter or '?'; everything else is a
constant.  Zero-arity atoms may omit parentheses.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from enum import Enum

RULE_LANGUAGE_VERSION = "1"

DEFAULT_MAX_ITERATIONS = 10_000


class EngineError(Exception):
    pass


class NonStratifiable(EngineError):
    def __init__(self, predicates):
        super().__init__(
            "negation cycle through predicates: " + ", ".join(sorted(predicates))
        )
        self.predicates = tuple(sorted(predicates))


class IterationLimitExceeded(EngineError):
    pass


class KbError(ValueError):
    pass


class ArityMismatchError(KbError):
    def __init__(self, predicate: str, seen: int, expected: int):
        super().__init__(
            f"predicate {predicate} used with arity {seen}, expected {expected}"
        )
        self.predicate = predicate


class UnsafeRuleError(KbError):
    def __init__(self, rule: "Rule", variables):
        names = ", ".join(sorted(v.name for v in variables))
        super().__init__(f"unsafe rule {rule}: unbound variables {names}")
        self.rule = rule


class KblSyntaxError(KbError):
    def __init__(self, line: int, col: int, expected: str):
        super().__init__(f"line {line}, col {col}: expected {expected}")
        self.line = line
        self.col = col
        self.expected = expected


@dataclass(frozen=True, order=True)
class Term:
    name: str
    is_variable: bool = False

    def __post_init__(self):
        if not self.name:
            raise KbError("empty term name")

    def __str__(self):
        return self.name


def var(name: str) -> Term:
    return Term(name, is_variable=True)


def const(name: str) -> Term:
    return Term(name, is_variable=False)


@dataclass(frozen=True, order=True)
class Atom:
    predicate: str
    args: tuple[Term, ...] = ()

    def __post_init__(self):
        if not self.predicate:
            raise KbError("empty predicate")

    @property
    def is_ground(self) -> bool:
        return all(not t.is_variable for t in self.args)

    def variables(self) -> set[Term]:
        return {t for t in self.args if t.is_variable}

    def substitute(self, theta: dict[Term, Term]) -> "Atom":
        return Atom(self.predicate, tuple(theta.get(t, t) for t in self.args))

    def __str__(self):
        if not self.args:
            return self.predicate
        return f"{self.predicate}({', '.join(map(str, self.args))})"


@dataclass(frozen=True, order=True)
class Fact:
    atom: Atom

    def __post_init__(self):
        if not self.atom.is_ground:
            raise KbError(f"fact must be ground: {self.atom}")

    def __str__(self):
        return str(self.atom)


@dataclass(frozen=True)
class Rule:
    head: Atom
    body_pos: tuple[Atom, ...] = ()
    body_neg: tuple[Atom, ...] = ()

    def check_safety(self) -> None:
        bound: set[Term] = set()
        for a in self.body_pos:
            bound |= a.variables()
        need = set(self.head.variables())
        for a in self.body_neg:
            need |= a.variables()
        unsafe = need - bound
        if unsafe:
            raise UnsafeRuleError(self, unsafe)

    def __str__(self):
        if not self.body_pos and not self.body_neg:
            return f"{self.head}."
        parts = [str(a) for a in self.body_pos]
        parts += [f"not {a}" for a in self.body_neg]
        return f"{self.head} :- {', '.join(parts)}."


@dataclass(frozen=True)
class KnowledgeBase:
    facts: frozenset[Fact] = frozenset()
    rules: tuple[Rule, ...] = ()

    def __post_init__(self):
        arities: dict[str, int] = {}

        def check(atom: Atom):
            expected = arities.setdefault(atom.predicate, len(atom.args))
            if expected != len(atom.args):
                raise ArityMismatchError(atom.predicate, len(atom.args), expected)

        for f in self.facts:
            check(f.atom)
        for r in self.rules:
            check(r.head)
            for a in itertools.chain(r.body_pos, r.body_neg):
                check(a)
            r.check_safety()

    def pretty(self) -> str:
        lines = [f"fact {f.atom}." for f in sorted(self.facts)]
        lines += [f"rule {r}" for r in self.rules]
        return "\n".join(lines) + ("\n" if lines else "")


class FailureKind(Enum):
    PARSE_FAILURE = "ParseFailure"
    NO_RULE_FIRING = "NoRuleFiring"
    UNSAFE_RULE = "UnsafeRule"
    ARITY_MISMATCH = "ArityMismatch"


@dataclass(frozen=True)
class StepVerdict:
    executed: bool
    conclusions: tuple[Fact, ...] = ()
    failure: FailureKind | None = None
    detail: str = field(default="", compare=False)

    def __post_init__(self):
        ok = self.executed
        assert ok == (bool(self.conclusions) and self.failure is None)


# --------------------------------------------------------------------------
# Rule-language parser (recursive descent over a hand-rolled tokenizer)


class _Tokenizer:
    PUNCT = (":-", "(", ")", ",", ".")

    def __init__(self, src: str):
        self.src = src
        self.pos = 0
        self.line = 1
        self.col = 1

    def _advance(self, n: int):
        for _ in range(n):
            if self.src[self.pos] == "\n":
                self.line += 1
                self.col = 1
            else:
                self.col += 1
            self.pos += 1

    def skip_trivia(self):
        while self.pos < len(self.src):
            c = self.src[self.pos]
            if c in " \t\r\n":
                self._advance(1)
            elif c == "#":
                while self.pos < len(self.src) and self.src[self.pos] != "\n":
                    self._advance(1)
            else:
                break

    def next(self) -> tuple[str, str, int, int]:
        """Returns (kind, text, line, col); kind in {ident, var, punct, eof}."""
        self.skip_trivia()
        line, col = self.line, self.col
        if self.pos >= len(self.src):
            return ("eof", "", line, col)
        for p in self.PUNCT:
            if self.src.startswith(p, self.pos):
                self._advance(len(p))
                return ("punct", p, line, col)
        c = self.src[self.pos]
        if c == "?" or c.isalpha() or c == "_":
            start = self.pos
            if c == "?":
                self._advance(1)
            while self.pos < len(self.src) and (
                self.src[self.pos].isalnum() or self.src[self.pos] == "_"
            ):
                self._advance(1)
            text = self.src[start:self.pos]
            if text == "?" :
                raise KblSyntaxError(line, col, "name after '?'")
            first = text[1] if text[0] == "?" else text[0]
            kind = "var" if (text[0] == "?" or first.isupper()) else "ident"
            return (kind, text, line, col)
        raise KblSyntaxError(line, col, "identifier or punctuation")


class _Parser:
    def __init__(self, src: str):
        self.tok = _Tokenizer(src)
        self.cur = self.tok.next()

    def _bump(self):
        self.cur = self.tok.next()

    def _expect(self, kind: str, text: str | None = None) -> str:
        k, t, line, col = self.cur
        if k != kind or (text is not None and t != text):
            raise KblSyntaxError(line, col, text or kind)
        self._bump()
        return t

    def parse_term(self) -> Term:
        k, t, line, col = self.cur
        if k == "var":
            self._bump()
            return var(t)
        if k == "ident":
            self._bump()
            return const(t)
        raise KblSyntaxError(line, col, "term")

    def parse_atom(self) -> Atom:
        k, t, line, col = self.cur
        if k not in ("ident", "var"):
            raise KblSyntaxError(line, col, "predicate name")
        if k == "var":
            raise KblSyntaxError(line, col, "predicate name (lowercase)")
        self._bump()
        args: list[Term] = []
        if self.cur[:2] == ("punct", "("):
            self._bump()
            if self.cur[:2] != ("punct", ")"):
                args.append(self.parse_term())
                while self.cur[:2] == ("punct", ","):
                    self._bump()
                    args.append(self.parse_term())
            self._expect("punct", ")")
        return Atom(t, tuple(args))

    def parse_program(self) -> KnowledgeBase:
        facts: list[Fact] = []
        rules: list[Rule] = []
        while True:
            k, t, line, col = self.cur
            if k == "eof":
                break
            if k != "ident" or t not in ("fact", "rule"):
                raise KblSyntaxError(line, col, "'fact' or 'rule'")
            self._bump()
            if t == "fact":
                atom = self.parse_atom()
                if not atom.is_ground:
                    raise KblSyntaxError(line, col, "ground atom in fact")
                self._expect("punct", ".")
                facts.append(Fact(atom))
            else:
                head = self.parse_atom()
                body_pos: list[Atom] = []
                body_neg: list[Atom] = []
                if self.cur[:2] == ("punct", ":-"):
                    self._bump()
                    while True:
                        negated = False
                        if self.cur[0] == "ident" and self.cur[1] == "not":
                            negated = True
                            self._bump()
                        atom = self.parse_atom()
                        (body_neg if negated else body_pos).append(atom)
                        if self.cur[:2] == ("punct", ","):
                            self._bump()
                            continue
                        break
                self._expect("punct", ".")
                rules.append(Rule(head, tuple(body_pos), tuple(body_neg)))
        return KnowledgeBase(frozenset(facts), tuple(rules))


def parse_program(src: str) -> KnowledgeBase:
    """Parse ``.kbl`` source into a KnowledgeBase.

    Raises KblSyntaxError with line/column, ArityMismatchError, or
    UnsafeRuleError.
    """
    return _Parser(src).parse_program()


def parse_atom(src: str) -> Atom:
    p = _Parser(src)
    atom = p.parse_atom()
    if p.cur[0] != "eof" and p.cur[:2] != ("punct", "."):
        raise KblSyntaxError(p.cur[2], p.cur[3], "end of atom")
    return atom


# --------------------------------------------------------------------------
# Matching and forward chaining


def _match_atom(pattern: Atom, fact_atom: Atom, theta: dict) -> dict | None:
    if pattern.predicate != fact_atom.predicate:
        return None
    if len(pattern.args) != len(fact_atom.args):
        return None
    theta = dict(theta)
    for p, f in zip(pattern.args, fact_atom.args):
        if p.is_variable:
            bound = theta.get(p)
            if bound is None:
                theta[p] = f
            elif bound != f:
                return None
        elif p != f:
            return None
    return theta


def _satisfy_body(
    body_pos: tuple[Atom, ...],
    body_neg: tuple[Atom, ...],
    pos_facts,
    neg_facts,
    theta: dict,
    require_delta=None,
):
    """Yield substitutions grounding body_pos from pos_facts with body_neg
    absent from neg_facts.  If require_delta is given, at least one positive
    atom must match a fact in it (semi-naive restriction)."""
    # Sorted iteration keeps match (and hence trace) order independent of
    # hash randomization across processes.
    atoms_of = sorted({f.atom for f in pos_facts})
    neg_atoms = {f.atom for f in neg_facts}
    delta_atoms = {f.atom for f in require_delta} if require_delta is not None else None

    def rec(i: int, theta: dict, used_delta: bool):
        if i == len(body_pos):
            if delta_atoms is not None and not used_delta:
                return
            for na in body_neg:
                if na.substitute(theta) in neg_atoms:
                    return
            yield theta
            return
        pat = body_pos[i]
        for fa in atoms_of:
            t2 = _match_atom(pat, fa, theta)
            if t2 is not None:
                yield from rec(
                    i + 1,
                    t2,
                    used_delta or (delta_atoms is not None and fa in delta_atoms),
                )

    yield from rec(0, theta, False)


def _stratify(kb: KnowledgeBase) -> dict[str, int]:
    """Assign stratum numbers; raises NonStratifiable on a negative cycle."""
    preds = {f.atom.predicate for f in kb.facts}
    for r in kb.rules:
        preds.add(r.head.predicate)
        for a in itertools.chain(r.body_pos, r.body_neg):
            preds.add(a.predicate)
    stratum = {p: 0 for p in preds}
    n = max(1, len(preds))
    # Bellman-Ford style relaxation: positive edge >=, negative edge >.
    for _ in range(n + 1):
        changed_preds: set[str] = set()
        for r in kb.rules:
            h = r.head.predicate
            for a in r.body_pos:
                if stratum[h] < stratum[a.predicate]:
                    stratum[h] = stratum[a.predicate]
                    changed_preds.add(h)
            for a in r.body_neg:
                if stratum[h] < stratum[a.predicate] + 1:
                    stratum[h] = stratum[a.predicate] + 1
                    changed_preds.add(h)
        if not changed_preds:
            return stratum
    raise NonStratifiable(changed_preds)


@dataclass(frozen=True)
class Derivation:
    """One rule application recorded during forward chaining."""

    rule: Rule
    body_facts: tuple[Fact, ...]
    conclusion: Fact


def forward_chain_with_trace(
    kb: KnowledgeBase, max_iterations: int = DEFAULT_MAX_ITERATIONS
) -> tuple[frozenset[Fact], tuple[Derivation, ...]]:
    """Least fixpoint plus the derivation trace, semi-naive per stratum."""
    stratum = _stratify(kb)
    n_strata = max(stratum.values(), default=0) + 1
    total = set(kb.facts)
    trace: list[Derivation] = []
    iterations = 0
    for s in range(n_strata):
        layer_rules = [r for r in kb.rules if stratum[r.head.predicate] == s]
        delta = set(total)
        while delta:
            iterations += 1
            if iterations > max_iterations:
                raise IterationLimitExceeded(f"exceeded {max_iterations} rounds")
            new: set[Fact] = set()
            for r in sorted(layer_rules, key=str):
                for theta in _satisfy_body(
                    r.body_pos, r.body_neg, total, total, {}, require_delta=delta
                ):
                    head = r.head.substitute(theta)
                    fact = Fact(head)
                    if fact not in total and fact not in new:
                        new.add(fact)
                        body_facts = tuple(
                            Fact(a.substitute(theta)) for a in r.body_pos
                        )
                        trace.append(Derivation(r, body_facts, fact))
                # rules with empty positive body fire once against the delta
                if not r.body_pos:
                    fact = Fact(r.head)
                    if fact not in total and fact not in new:
                        if not any(
                            Fact(na) in total for na in r.body_neg
                        ):
                            new.add(fact)
                            trace.append(Derivation(r, (), fact))
            total |= new
            delta = new
    return frozenset(total), tuple(trace)


def forward_chain(
    kb: KnowledgeBase, max_iterations: int = DEFAULT_MAX_ITERATIONS
) -> frozenset[Fact]:
    """All derivable facts (originals included): the least fixpoint."""
    closure, _ = forward_chain_with_trace(kb, max_iterations)
    return closure


def answer_query(kb: KnowledgeBase, goal: Atom) -> bool:
    """Closed-world truth of a ground goal."""
    if not goal.is_ground:
        raise KbError(f"query goal must be ground: {goal}")
    return Fact(goal) in forward_chain(kb)


def verify_step(facts: list[Fact] | tuple[Fact, ...], rule: Rule) -> StepVerdict:
    """Check one syllogistic step: the cited premises alone must satisfy the
    rule body (closed-world negation over those premises) and derive at least
    one ground conclusion."""
    try:
        fact_set = frozenset(facts)
        arities: dict[str, int] = {}
        for a in itertools.chain(
            (f.atom for f in fact_set), (rule.head,), rule.body_pos, rule.body_neg
        ):
            expected = arities.setdefault(a.predicate, len(a.args))
            if expected != len(a.args):
                return StepVerdict(
                    False,
                    failure=FailureKind.ARITY_MISMATCH,
                    detail=f"predicate {a.predicate}",
                )
        rule.check_safety()
    except UnsafeRuleError as exc:
        return StepVerdict(False, failure=FailureKind.UNSAFE_RULE, detail=str(exc))
    except KbError as exc:
        return StepVerdict(False, failure=FailureKind.PARSE_FAILURE, detail=str(exc))
    heads: set[Fact] = set()
    for theta in _satisfy_body(rule.body_pos, rule.body_neg, fact_set, fact_set, {}):
        head = rule.head.substitute(theta)
        if head.is_ground:
            heads.add(Fact(head))
    if not heads:
        return StepVerdict(False, failure=FailureKind.NO_RULE_FIRING)
    return StepVerdict(True, conclusions=tuple(sorted(heads)))


def render_conclusions(verdict: StepVerdict) -> str:
    """Canonical text for engine conclusions, injected into steps."""
    return "; ".join(str(f) for f in verdict.conclusions)
