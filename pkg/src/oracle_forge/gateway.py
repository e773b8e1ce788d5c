"""Pluggable step generation, NL->symbolic translation, and evaluation.

Three backends:

- ``ScriptedOracleBackend``: replays a task's ground-truth proof; exact and
  deterministic, used for pipeline tests and the oracle acceptance runs.
- ``ScriptedNoisyBackend``: the oracle with seeded per-candidate corruption
  (format breaks, unmatchable facts, non-firing rules), used to measure
  engine-success rates without an LLM.
- ``HttpBackend``: chat-completion-style JSON over HTTP with exponential
  backoff and a bounded in-flight limit (docs/http_backend.md).
"""

from __future__ import annotations

import json
import random
import threading
import time
from collections import Counter
from dataclasses import dataclass, field, replace

from . import kernel, template
from .corpus import CorruptionModel, TaskInstance, gold_step, stable_digest
from .kernel import Fact, Rule

DEFAULT_GENERATION_TEMPERATURE = 1.0
DEFAULT_EVALUATION_TEMPERATURE = 0.01

# Translation failure kinds; the failure taxonomy keys off these.
SOURCE_UNMATCHED = "source-unmatched"   # NL has no symbolic counterpart
SYMBOLIC_DEFECT = "symbolic-defect"     # symbolic form exists but is ill-formed


class BackendUnavailable(RuntimeError):
    pass


@dataclass(frozen=True)
class GenerationContext:
    question: str
    prior_steps: tuple[template.ReasoningStep, ...] = ()
    few_shot_asset: str = ""
    temperature: float = DEFAULT_GENERATION_TEMPERATURE
    seed: int = 0

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")


@dataclass(frozen=True)
class CandidateStep:
    step: template.ReasoningStep
    raw_text: str
    backend_id: str


@dataclass(frozen=True)
class TranslationResult:
    facts: tuple[Fact, ...] = ()
    rule: Rule | None = None
    error_kind: str | None = None
    detail: str = ""

    @property
    def ok(self) -> bool:
        return self.error_kind is None


@dataclass(frozen=True)
class EvalVerdict:
    precision_pass: bool
    feasibility_pass: bool


def _prior_digest(ctx: GenerationContext) -> int:
    return stable_digest(*(template.serialize_step(s) for s in ctx.prior_steps))


def _validate_symbolic(facts: tuple[Fact, ...], rule: Rule) -> TranslationResult:
    arities: dict[str, int] = {}
    atoms = [f.atom for f in facts] + [rule.head, *rule.body_pos, *rule.body_neg]
    for a in atoms:
        expected = arities.setdefault(a.predicate, len(a.args))
        if expected != len(a.args):
            return TranslationResult(
                error_kind=SYMBOLIC_DEFECT, detail=f"arity mismatch on {a.predicate}"
            )
    try:
        rule.check_safety()
    except kernel.UnsafeRuleError as exc:
        return TranslationResult(error_kind=SYMBOLIC_DEFECT, detail=str(exc))
    return TranslationResult(facts=facts, rule=rule)


class ScriptedOracleBackend:
    """Replays the ground-truth proof of one task; pure in (seed, ctx)."""

    backend_id = "scripted-oracle"

    def __init__(self, task: TaskInstance):
        self.task = task
        self.telemetry: Counter = Counter()

    def _position(self, ctx: GenerationContext) -> int:
        return len(ctx.prior_steps)

    def generate_candidates(self, ctx: GenerationContext, n: int) -> list[CandidateStep]:
        if n < 1:
            raise ValueError("n must be >= 1")
        i = self._position(ctx)
        if i >= len(self.task.ground_truth_proof):
            return []
        step = gold_step(self.task, i)
        raw = template.serialize_step(step)
        if i == len(self.task.ground_truth_proof) - 1:
            raw += f"{template.FINAL_ANSWER_PREFIX} {self.task.gold_answer}\n"
        return [CandidateStep(step=step, raw_text=raw, backend_id=self.backend_id)]

    def generate_response(self, ctx: GenerationContext) -> str:
        from .corpus import gold_response

        return template.serialize_response(gold_response(self.task))

    def translate(self, step: template.ReasoningStep) -> TranslationResult:
        facts = []
        for nl in step.facts:
            sym = self.task.nl_pairing.get(nl)
            if not isinstance(sym, Fact):
                return TranslationResult(
                    error_kind=SOURCE_UNMATCHED, detail=f"no pairing for fact: {nl!r}"
                )
            facts.append(sym)
        rule = self.task.nl_pairing.get(step.rule)
        if not isinstance(rule, Rule):
            return TranslationResult(
                error_kind=SOURCE_UNMATCHED, detail=f"no pairing for rule: {step.rule!r}"
            )
        return _validate_symbolic(tuple(facts), rule)

    def evaluate(self, step: template.ReasoningStep, ctx: GenerationContext) -> EvalVerdict:
        ok = self._matches_gold(step, ctx)
        return EvalVerdict(precision_pass=ok, feasibility_pass=ok)

    def _matches_gold(self, step: template.ReasoningStep, ctx: GenerationContext) -> bool:
        i = self._position(ctx)
        if i >= len(self.task.ground_truth_proof):
            return False
        gold = gold_step(self.task, i)
        return (
            step.facts == gold.facts
            and step.rule == gold.rule
            and step.query == gold.query
        )


class ScriptedNoisyBackend(ScriptedOracleBackend):
    """Oracle steps with independent seeded corruption per candidate."""

    backend_id = "scripted-noisy"

    def __init__(self, task: TaskInstance, corruption: CorruptionModel):
        super().__init__(task)
        self.corruption = corruption

    def _rng(self, ctx: GenerationContext, cand_index: int) -> random.Random:
        return random.Random(
            stable_digest(
                self.corruption.seed,
                ctx.seed,
                self.task.id,
                self._position(ctx),
                cand_index,
                _prior_digest(ctx),
            )
        )

    def _non_firing_rule_nls(self, step: template.ReasoningStep) -> list[str]:
        fact_preds = set()
        for nl in step.facts:
            sym = self.task.nl_pairing.get(nl)
            if isinstance(sym, Fact):
                fact_preds.add(sym.atom.predicate)
        out = []
        for nl, sym in sorted(self.task.nl_pairing.items()):
            if isinstance(sym, Rule) and nl != step.rule:
                body_preds = {a.predicate for a in sym.body_pos}
                if not body_preds <= fact_preds:
                    out.append(nl)
        return out

    def generate_candidates(self, ctx: GenerationContext, n: int) -> list[CandidateStep]:
        if n < 1:
            raise ValueError("n must be >= 1")
        i = self._position(ctx)
        if i >= len(self.task.ground_truth_proof):
            return []
        gold = gold_step(self.task, i)
        terminal = i == len(self.task.ground_truth_proof) - 1
        out: list[CandidateStep] = []
        for j in range(n):
            rng = self._rng(ctx, j)
            step = gold
            if rng.random() < self.corruption.p_bad_fact:
                bad = f"The statement {rng.randrange(10**6)} holds."
                step = replace(step, facts=(bad,) + step.facts[1:])
            if rng.random() < self.corruption.p_bad_rule:
                choices = self._non_firing_rule_nls(step)
                if choices:
                    step = replace(step, rule=rng.choice(choices))
            raw = template.serialize_step(step)
            if terminal:
                raw += f"{template.FINAL_ANSWER_PREFIX} {self.task.gold_answer}\n"
            if rng.random() < self.corruption.p_format_break:
                raw = raw.replace("<REVISION>", "", 1)
                self.telemetry["format_breaks"] += 1
                if not template.conforms_strictly(raw):
                    self.telemetry["discarded_candidates"] += 1
                    continue
            out.append(CandidateStep(step=step, raw_text=raw, backend_id=self.backend_id))
        return out

    def generate_response(self, ctx: GenerationContext) -> str:
        raw = super().generate_response(ctx)
        rng = self._rng(ctx, -1)
        if rng.random() < self.corruption.p_format_break:
            raw = raw.replace("<REVISION>", "", 1)
        return raw


class HttpBackend:
    """Chat-completion JSON over HTTP: retries with exponential backoff and a
    bounded number of concurrent in-flight requests.

    ``transport`` is a callable ``(url, payload_dict, headers, timeout) ->
    (status_code, body_text)``; the default posts with ``requests``.  Tests
    inject a fake transport for fault injection.
    """

    backend_id = "http"

    def __init__(
        self,
        endpoint: str,
        model: str,
        api_key: str | None = None,
        prompts: dict[str, str] | None = None,
        temperature: float = DEFAULT_GENERATION_TEMPERATURE,
        eval_temperature: float = DEFAULT_EVALUATION_TEMPERATURE,
        max_retries: int = 5,
        backoff_base: float = 0.5,
        max_in_flight: int = 4,
        timeout: float = 60.0,
        transport=None,
        sleep=time.sleep,
    ):
        self.endpoint = endpoint
        self.model = model
        self.api_key = api_key
        self.prompts = prompts or {}
        self.temperature = temperature
        self.eval_temperature = eval_temperature
        self.max_retries = max_retries
        self.backoff_base = backoff_base
        self.timeout = timeout
        self._sem = threading.Semaphore(max_in_flight)
        self._sleep = sleep
        self._transport = transport or self._requests_transport
        self.telemetry: Counter = Counter()

    @staticmethod
    def _requests_transport(url, payload, headers, timeout):
        import requests

        resp = requests.post(url, json=payload, headers=headers, timeout=timeout)
        return resp.status_code, resp.text

    def _complete(self, prompt: str, temperature: float, n: int = 1) -> list[str]:
        payload = {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": temperature,
            "n": n,
        }
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        last_error = "no attempt made"
        for attempt in range(self.max_retries):
            if attempt:
                self._sleep(self.backoff_base * 2 ** (attempt - 1))
            with self._sem:
                try:
                    status, body = self._transport(
                        self.endpoint, payload, headers, self.timeout
                    )
                except Exception as exc:
                    last_error = f"transport error: {exc}"
                    self.telemetry["transport_errors"] += 1
                    continue
            if status != 200:
                last_error = f"HTTP {status}"
                self.telemetry["http_errors"] += 1
                continue
            try:
                data = json.loads(body)
                return [c["message"]["content"] for c in data["choices"]]
            except (ValueError, KeyError, TypeError) as exc:
                last_error = f"bad response body: {exc}"
                self.telemetry["malformed_responses"] += 1
                continue
        raise BackendUnavailable(
            f"{self.endpoint}: retries exhausted ({last_error})"
        )

    def _prompt(self, name: str) -> str:
        return self.prompts.get(name, "")

    def generate_candidates(self, ctx: GenerationContext, n: int) -> list[CandidateStep]:
        if n < 1:
            raise ValueError("n must be >= 1")
        prior = "\n".join(template.serialize_step(s) for s in ctx.prior_steps)
        prompt = "\n\n".join(
            p for p in (self._prompt("generation"), ctx.few_shot_asset, ctx.question, prior) if p
        )
        out: list[CandidateStep] = []
        for raw in self._complete(prompt, ctx.temperature, n=n):
            try:
                resp = template.parse_response(raw)
                step = resp.steps[0]
                step.validate()
            except ValueError:
                self.telemetry["discarded_candidates"] += 1
                continue
            out.append(CandidateStep(step=step, raw_text=raw, backend_id=self.backend_id))
        return out

    def generate_response(self, ctx: GenerationContext) -> str:
        prompt = "\n\n".join(
            p for p in (self._prompt("generation"), ctx.few_shot_asset, ctx.question) if p
        )
        return self._complete(prompt, ctx.temperature, n=1)[0]

    def translate(self, step: template.ReasoningStep) -> TranslationResult:
        prompt = "\n\n".join(
            p for p in (self._prompt("translation"), template.serialize_step(step)) if p
        )
        text = self._complete(prompt, self.eval_temperature, n=1)[0]
        try:
            kb = kernel.parse_program(text)
        except kernel.KbError as exc:
            return TranslationResult(error_kind=SYMBOLIC_DEFECT, detail=str(exc))
        if len(kb.rules) != 1:
            return TranslationResult(
                error_kind=SYMBOLIC_DEFECT,
                detail=f"expected exactly 1 rule, got {len(kb.rules)}",
            )
        return _validate_symbolic(tuple(sorted(kb.facts)), kb.rules[0])

    def _yes_no(self, prompt_name: str, step: template.ReasoningStep, ctx) -> bool:
        prompt = "\n\n".join(
            p
            for p in (
                self._prompt(prompt_name),
                ctx.question,
                template.serialize_step(step),
            )
            if p
        )
        answer = self._complete(prompt, self.eval_temperature, n=1)[0].strip().upper()
        if answer not in ("YES", "NO"):
            self.telemetry["unparseable_judgments"] += 1
            return False
        return answer == "YES"

    def evaluate(self, step: template.ReasoningStep, ctx: GenerationContext) -> EvalVerdict:
        return EvalVerdict(
            precision_pass=self._yes_no("precision", step, ctx),
            feasibility_pass=self._yes_no("feasibility", step, ctx),
        )


def make_backend(name: str, task: TaskInstance | None = None, corruption=None, **http_kwargs):
    """Backend factory used by the CLI; scripted backends bind to one task."""
    if name == "scripted-oracle":
        assert task is not None
        return ScriptedOracleBackend(task)
    if name == "scripted-noisy":
        assert task is not None
        return ScriptedNoisyBackend(task, corruption or CorruptionModel())
    if name == "http":
        return HttpBackend(**http_kwargs)
    raise ValueError(f"unknown backend: {name}")
