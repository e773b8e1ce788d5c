"""Deterministic synthetic reasoning tasks with ground-truth proofs.

Two generators:

- ``gen_chain_task``: linear implication chains over fictional ontologies
  ("every wumpus is a yumpus"), one subject constant, plus distractor rules
  that never fire.
- ``gen_rulebase_task``: small random stratified rule bases whose query truth
  is computed by the forward chainer, with the proof extracted from the
  derivation trace.

Every task carries an exact NL <-> symbolic pairing table, which makes the
scripted translator infallible unless deliberately corrupted, and a
ground-truth proof replayable through the step verifier.
"""

from __future__ import annotations

import hashlib
import json
import random
from dataclasses import dataclass, field

from . import kernel, template
from .kernel import Atom, Fact, KnowledgeBase, Rule, const, var


class RetryExhausted(RuntimeError):
    pass


@dataclass(frozen=True)
class ProofStep:
    facts: tuple[Fact, ...]
    rule: Rule
    conclusion: Fact


@dataclass
class TaskInstance:
    id: str
    question: str
    context: str
    gold_answer: str
    ground_truth_proof: tuple[ProofStep, ...]
    nl_pairing: dict[str, Fact | Rule]
    kb: KnowledgeBase | None = None
    nl_by_symbol: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if not self.nl_by_symbol:
            self.nl_by_symbol = {
                _symbol_key(sym): nl for nl, sym in self.nl_pairing.items()
            }

    def nl_of(self, sym: Fact | Rule) -> str:
        return self.nl_by_symbol[_symbol_key(sym)]


def _symbol_key(sym: Fact | Rule) -> str:
    return str(sym)


# --------------------------------------------------------------------------
# Fictional vocabulary

_ONSETS = ["w", "y", "z", "d", "r", "t", "v", "g", "f", "n", "l", "b", "sh", "br"]
_NUCLEI = ["um", "or", "im", "el", "am", "ol", "ur", "ax"]
_NAMES = ["max", "alex", "sam", "fae", "rex", "wren", "polly", "stella"]


def _nonsense_words(rng: random.Random, count: int) -> list[str]:
    words: list[str] = []
    seen = set()
    while len(words) < count:
        w = rng.choice(_ONSETS) + rng.choice(_NUCLEI) + "pus"
        if w not in seen:
            seen.add(w)
            words.append(w)
    return words


def _fact_nl(atom: Atom) -> str:
    name = atom.args[0].name
    return f"{name.capitalize()} is a {atom.predicate}."


def _rule_nl(rule: Rule) -> str:
    body = [f"a {a.predicate}" for a in rule.body_pos]
    body += [f"not a {a.predicate}" for a in rule.body_neg]
    if len(rule.body_pos) == 1 and not rule.body_neg:
        return f"Every {rule.body_pos[0].predicate} is a {rule.head.predicate}."
    return (
        "Anything that is "
        + " and ".join(body)
        + f" is a {rule.head.predicate}."
    )


# --------------------------------------------------------------------------
# Chain tasks (linear ontologies)


def gen_chain_task(hops: int, distractors: int = 2, seed: int = 0) -> TaskInstance:
    """A unique hops-length implication chain from a subject constant to the
    queried property; gold answer balanced by seed parity."""
    if hops < 1:
        raise ValueError("hops must be >= 1")
    rng = random.Random(("chain", hops, distractors, seed).__repr__())
    n_distractors = max(1, distractors)
    words = _nonsense_words(rng, hops + 1 + 2 * n_distractors)
    chain = words[: hops + 1]
    subject = const(rng.choice(_NAMES))
    x = var("X")

    facts = [Fact(Atom(chain[0], (subject,)))]
    rules = [
        Rule(Atom(chain[i + 1], (x,)), (Atom(chain[i], (x,)),))
        for i in range(hops)
    ]
    distractor_rules = []
    for i in range(n_distractors):
        src = words[hops + 1 + 2 * i]
        dst = words[hops + 2 + 2 * i]
        distractor_rules.append(Rule(Atom(dst, (x,)), (Atom(src, (x,)),)))
    kb = KnowledgeBase(frozenset(facts), tuple(rules + distractor_rules))

    gold_true = seed % 2 == 0
    if gold_true:
        query = Atom(chain[hops], (subject,))
    else:
        query = Atom(distractor_rules[0].head.predicate, (subject,))
    gold_answer = "true" if gold_true else "false"

    proof = tuple(
        ProofStep(
            facts=(Fact(Atom(chain[i], (subject,))),),
            rule=rules[i],
            conclusion=Fact(Atom(chain[i + 1], (subject,))),
        )
        for i in range(hops)
    )

    pairing: dict[str, Fact | Rule] = {}
    for i in range(hops + 1):
        f = Fact(Atom(chain[i], (subject,)))
        pairing[_fact_nl(f.atom)] = f
    for r in rules + distractor_rules:
        pairing[_rule_nl(r)] = r

    context_sentences = [_fact_nl(f.atom) for f in facts]
    context_sentences += [_rule_nl(r) for r in rules + distractor_rules]
    context = " ".join(context_sentences)
    question = f"Is it true that {_fact_nl(Atom(query.predicate, (subject,)))[:-1].lower()}?"

    return TaskInstance(
        id=f"chain-{hops}h-{seed}",
        question=question,
        context=context,
        gold_answer=gold_answer,
        ground_truth_proof=proof,
        nl_pairing=pairing,
        kb=kb,
    )


# --------------------------------------------------------------------------
# Rulebase tasks (random stratified KBs)

MAX_RULEBASE_FACTS = 30
MAX_RULEBASE_RULES = 12
_GEN_RETRIES = 100


def gen_rulebase_task(
    n_facts: int = 6,
    n_rules: int = 5,
    negation: bool = False,
    seed: int = 0,
) -> TaskInstance:
    """A random stratified rule base whose query truth is decided by forward
    chaining; proof steps are read off the derivation trace."""
    if not (1 <= n_facts <= MAX_RULEBASE_FACTS):
        raise ValueError(f"n_facts out of bounds (1..{MAX_RULEBASE_FACTS})")
    if not (1 <= n_rules <= MAX_RULEBASE_RULES):
        raise ValueError(f"n_rules out of bounds (1..{MAX_RULEBASE_RULES})")
    rng = random.Random(("rulebase", n_facts, n_rules, negation, seed).__repr__())
    for attempt in range(_GEN_RETRIES):
        task = _try_rulebase(rng, n_facts, n_rules, negation, seed)
        if task is not None:
            return task
    raise RetryExhausted(
        f"no satisfiable rulebase after {_GEN_RETRIES} attempts (seed {seed})"
    )


def _try_rulebase(rng, n_facts, n_rules, negation, seed) -> TaskInstance | None:
    n_preds = rng.randint(5, 8)
    preds = _nonsense_words(rng, n_preds)
    consts = [const(n) for n in rng.sample(_NAMES, rng.randint(3, 5))]
    x = var("X")

    all_ground = [Atom(p, (c,)) for p in preds for c in consts]
    facts = frozenset(Fact(a) for a in rng.sample(all_ground, min(n_facts, len(all_ground))))

    rules: list[Rule] = []
    seen_rules = set()
    for _ in range(n_rules * 3):
        if len(rules) >= n_rules:
            break
        head = Atom(rng.choice(preds), (x,))
        body_preds = rng.sample(preds, rng.randint(1, 2))
        body_pos = tuple(Atom(p, (x,)) for p in body_preds if p != head.predicate)
        if not body_pos:
            continue
        body_neg = ()
        if negation and rng.random() < 0.4:
            neg_choices = [
                p for p in preds
                if p != head.predicate and p not in body_preds
            ]
            if neg_choices:
                body_neg = (Atom(rng.choice(neg_choices), (x,)),)
        r = Rule(head, body_pos, body_neg)
        if str(r) in seen_rules:
            continue
        seen_rules.add(str(r))
        rules.append(r)
    if len(rules) < n_rules:
        return None

    try:
        kb = KnowledgeBase(facts, tuple(rules))
        closure, trace = kernel.forward_chain_with_trace(kb)
    except kernel.NonStratifiable:
        return None
    if not trace:
        return None

    gold_true = seed % 2 == 0
    derived = sorted(f.atom for f in closure - facts)
    underivable = sorted(a for a in all_ground if Fact(a) not in closure)
    if gold_true:
        query = rng.choice(derived)
        proof = _proof_for(query, trace, facts)
    else:
        if not underivable:
            return None
        query = rng.choice(underivable)
        # Replay still exercises the engine: use the trace of the deepest
        # derived fact as the demonstrative proof.
        proof = _proof_for(derived[-1], trace, facts)
    if not proof:
        return None
    gold_answer = "true" if gold_true else "false"

    pairing: dict[str, Fact | Rule] = {}
    for a in all_ground:
        pairing[_fact_nl(a)] = Fact(a)
    nl_rules = {}
    for r in rules:
        nl = _rule_nl(r)
        if nl in nl_rules:
            return None
        nl_rules[nl] = r
    pairing.update(nl_rules)

    context = " ".join(
        [_fact_nl(f.atom) for f in sorted(facts)] + [_rule_nl(r) for r in rules]
    )
    question = f"Is it true that {_fact_nl(query)[:-1].lower()}?"
    return TaskInstance(
        id=f"rulebase-{n_facts}f{n_rules}r-{seed}",
        question=question,
        context=context,
        gold_answer=gold_answer,
        ground_truth_proof=tuple(proof),
        nl_pairing=pairing,
        kb=kb,
    )


def _proof_for(goal: Atom, trace, base_facts) -> list[ProofStep]:
    """Minimal derivation chain ending at goal, in dependency order."""
    by_conclusion = {}
    order = {}
    for i, d in enumerate(trace):
        if d.conclusion.atom not in by_conclusion:
            by_conclusion[d.conclusion.atom] = d
            order[d.conclusion.atom] = i
    needed: list = []
    seen = set()

    def visit(atom: Atom):
        if atom in seen or Fact(atom) in base_facts:
            return
        seen.add(atom)
        d = by_conclusion.get(atom)
        if d is None:
            return
        for bf in d.body_facts:
            visit(bf.atom)
        needed.append(d)

    visit(goal)
    needed.sort(key=lambda d: order[d.conclusion.atom])
    return [ProofStep(d.body_facts, d.rule, d.conclusion) for d in needed]


# --------------------------------------------------------------------------
# Gold responses and planted stage-1 corpora


def gold_step(task: TaskInstance, index: int) -> template.ReasoningStep:
    """The ground-truth reasoning step at position ``index``."""
    ps = task.ground_truth_proof[index]
    conclusion_nl = task.nl_of(ps.conclusion)
    return template.ReasoningStep(
        query=f"Can we establish that {conclusion_nl[:-1].lower()}?",
        facts=tuple(task.nl_of(f) for f in ps.facts),
        rule=task.nl_of(ps.rule),
        revision="The selected facts and rule are sufficient for this step.",
        revision_result=template.RevisionResult.retained(),
        reasoning_result=kernel.render_conclusions(
            kernel.StepVerdict(True, conclusions=(ps.conclusion,))
        ),
        step_index=index,
    )


def gold_response(task: TaskInstance) -> template.StructuredResponse:
    steps = tuple(gold_step(task, i) for i in range(len(task.ground_truth_proof)))
    return template.StructuredResponse(steps=steps, final_answer=task.gold_answer)


@dataclass(frozen=True)
class CorruptionModel:
    """Independent per-candidate defect probabilities for the noisy backend."""

    p_bad_rule: float = 0.0
    p_bad_fact: float = 0.0
    p_format_break: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for p in (self.p_bad_rule, self.p_bad_fact, self.p_format_break):
            if not 0.0 <= p <= 1.0:
                raise ValueError("corruption probabilities must be in [0, 1]")

    def expected_engine_success_rate(self) -> float:
        """Closed-form success probability for candidates that reach the
        engine (format breaks are discarded before verification)."""
        return (1.0 - self.p_bad_rule) * (1.0 - self.p_bad_fact)


PLANT_CLEAN = "clean"
PLANT_MALFORMED = "malformed"
PLANT_WRONG_ANSWER = "wrong_answer"


@dataclass(frozen=True)
class PlantedSample:
    task_id: str
    prompt: str
    raw: str
    gold: str
    label: str


def planted_stage1_corpus(
    tasks,
    malformed_frac: float = 0.4,
    wrong_frac: float = 0.2,
    seed: int = 0,
) -> list[PlantedSample]:
    """Gold responses with a known fraction of planted defects, for testing
    the stage-1 filter."""
    tasks = list(tasks)
    rng = random.Random(("planted", seed).__repr__())
    n = len(tasks)
    n_malformed = round(n * malformed_frac)
    n_wrong = round(n * wrong_frac)
    labels = (
        [PLANT_MALFORMED] * n_malformed
        + [PLANT_WRONG_ANSWER] * n_wrong
        + [PLANT_CLEAN] * (n - n_malformed - n_wrong)
    )
    rng.shuffle(labels)
    out = []
    for task, label in zip(tasks, labels):
        raw = template.serialize_response(gold_response(task))
        if label == PLANT_MALFORMED:
            raw = raw.replace("<RULE>", "", 1)
        elif label == PLANT_WRONG_ANSWER:
            flipped = "false" if task.gold_answer == "true" else "true"
            raw = raw.replace(
                f"{template.FINAL_ANSWER_PREFIX} {task.gold_answer}",
                f"{template.FINAL_ANSWER_PREFIX} {flipped}",
            )
        prompt = f"{task.context}\n\n{task.question}"
        out.append(PlantedSample(task.id, prompt, raw, task.gold_answer, label))
    return out


# --------------------------------------------------------------------------
# JSONL export / import (stable CI fixtures)


def _rule_src(rule: Rule) -> str:
    return f"rule {rule}"


def _parse_rule(src: str) -> Rule:
    kb = kernel.parse_program(src)
    assert len(kb.rules) == 1
    return kb.rules[0]


def task_to_dict(task: TaskInstance) -> dict:
    return {
        "id": task.id,
        "question": task.question,
        "context": task.context,
        "gold_answer": task.gold_answer,
        "proof": [
            {
                "facts": [str(f.atom) for f in ps.facts],
                "rule": _rule_src(ps.rule),
                "conclusion": str(ps.conclusion.atom),
            }
            for ps in task.ground_truth_proof
        ],
        "nl_pairing": {
            nl: {
                "kind": "fact" if isinstance(sym, Fact) else "rule",
                "src": str(sym.atom) if isinstance(sym, Fact) else _rule_src(sym),
            }
            for nl, sym in sorted(task.nl_pairing.items())
        },
        "kb": task.kb.pretty() if task.kb is not None else None,
    }


def task_from_dict(d: dict) -> TaskInstance:
    def load_sym(entry):
        if entry["kind"] == "fact":
            return Fact(kernel.parse_atom(entry["src"]))
        return _parse_rule(entry["src"])

    proof = tuple(
        ProofStep(
            facts=tuple(Fact(kernel.parse_atom(s)) for s in ps["facts"]),
            rule=_parse_rule(ps["rule"]),
            conclusion=Fact(kernel.parse_atom(ps["conclusion"])),
        )
        for ps in d["proof"]
    )
    return TaskInstance(
        id=d["id"],
        question=d["question"],
        context=d["context"],
        gold_answer=d["gold_answer"],
        ground_truth_proof=proof,
        nl_pairing={nl: load_sym(e) for nl, e in d["nl_pairing"].items()},
        kb=kernel.parse_program(d["kb"]) if d.get("kb") else None,
    )


def save_tasks(tasks, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for t in tasks:
            fh.write(json.dumps(task_to_dict(t), sort_keys=True) + "\n")


def load_tasks(path) -> list[TaskInstance]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                out.append(task_from_dict(json.loads(line)))
    return out


def stable_digest(*parts) -> int:
    """Process-independent integer digest for seeding sub-RNGs."""
    h = hashlib.sha256("\x1f".join(str(p) for p in parts).encode("utf-8"))
    return int.from_bytes(h.digest()[:8], "big")
