"""Fixed-format reasoning step template: parse, serialize, validate.

A structured response is a sequence of step blocks, each made of six tagged
fields in a fixed order, optionally followed by a final answer line:

    <QUERY>...</QUERY>
    <FACTS>
    - fact one
    - fact two
    </FACTS>
    <RULE>...</RULE>
    <REVISION>...</REVISION>
    <REVISION_RESULT>RETAINED</REVISION_RESULT>
    <REASONING_RESULT>...</REASONING_RESULT>
    FINAL ANSWER: true

Literal tag text and backslashes inside field bodies are backslash-escaped by
the serializer and unescaped by the parser, so serialize -> parse is the
identity on the structured form.  See docs/template_format.md for the full
grammar.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace

TAG_ORDER = (
    "QUERY",
    "FACTS",
    "RULE",
    "REVISION",
    "REVISION_RESULT",
    "REASONING_RESULT",
)

FINAL_ANSWER_PREFIX = "FINAL ANSWER:"

RETAINED_TOKEN = "RETAINED"
REVISED_PREFIX = "REVISED:"

# Tags whose body must be non-empty after trimming.
_REQUIRED_NONEMPTY = {"QUERY", "RULE", "REASONING_RESULT"}

_ALL_TAG_STRINGS = tuple(f"<{t}>" for t in TAG_ORDER) + tuple(
    f"</{t}>" for t in TAG_ORDER
)


class ParseError(ValueError):
    """Base class for strict-mode template parse failures."""


class MissingTag(ParseError):
    def __init__(self, tag: str, step_index: int):
        super().__init__(f"missing <{tag}> in step {step_index}")
        self.tag = tag
        self.step_index = step_index


class TagOrderViolation(ParseError):
    def __init__(self, detail: str):
        super().__init__(detail)


class UnclosedBlock(ParseError):
    def __init__(self, tag: str):
        super().__init__(f"unclosed <{tag}> block")
        self.tag = tag


class EmptyField(ParseError):
    def __init__(self, tag: str):
        super().__init__(f"empty <{tag}> field")
        self.tag = tag


class NoFinalAnswer(ParseError):
    def __init__(self):
        super().__init__("response has no FINAL ANSWER line")


class MalformedField(ParseError):
    def __init__(self, tag: str, detail: str):
        super().__init__(f"malformed <{tag}>: {detail}")
        self.tag = tag


class InvariantViolation(ValueError):
    """Raised when serializing a step that breaks its own invariants."""


@dataclass(frozen=True)
class RevisionResult:
    """Outcome of the reflection field: retained as-is, or revised text."""

    revised: bool
    text: str = ""

    @staticmethod
    def retained() -> "RevisionResult":
        return RevisionResult(revised=False)

    @staticmethod
    def revised_to(text: str) -> "RevisionResult":
        return RevisionResult(revised=True, text=text)


@dataclass(frozen=True)
class ReasoningStep:
    query: str
    facts: tuple[str, ...]
    rule: str
    revision: str
    revision_result: RevisionResult
    reasoning_result: str
    step_index: int = 0

    def validate(self) -> None:
        if not self.query.strip():
            raise InvariantViolation("query empty")
        if not self.rule.strip():
            raise InvariantViolation("rule empty")
        if not self.reasoning_result.strip():
            raise InvariantViolation("reasoning_result empty")
        if not self.facts:
            raise InvariantViolation("facts empty")
        for f in self.facts:
            if not f.strip():
                raise InvariantViolation("blank fact entry")
        if self.step_index < 0:
            raise InvariantViolation("negative step_index")

    def with_reasoning_result(self, text: str) -> "ReasoningStep":
        return replace(self, reasoning_result=text)


@dataclass(frozen=True)
class StructuredResponse:
    steps: tuple[ReasoningStep, ...]
    final_answer: str = ""
    raw_text: str = field(default="", compare=False)

    @property
    def terminal(self) -> bool:
        return bool(self.final_answer)


def _escape(body: str, escape_newlines: bool = False) -> str:
    body = body.replace("\\", "\\\\")
    if escape_newlines:
        body = body.replace("\n", "\\n")
    for tag in _ALL_TAG_STRINGS:
        body = body.replace(tag, "\\" + tag)
    return body


def _unescape(body: str, unescape_newlines: bool = False) -> str:
    out = []
    i = 0
    while i < len(body):
        c = body[i]
        if c == "\\" and i + 1 < len(body):
            nxt = body[i + 1]
            if nxt == "\\":
                out.append("\\")
                i += 2
                continue
            if nxt == "<":
                out.append("<")
                i += 2
                continue
            if nxt == "n" and unescape_newlines:
                out.append("\n")
                i += 2
                continue
        out.append(c)
        i += 1
    return "".join(out)


def _find_unescaped(text: str, needle: str, start: int) -> int:
    """Index of the first occurrence of needle preceded by an even number of
    backslashes, or -1."""
    pos = start
    while True:
        idx = text.find(needle, pos)
        if idx < 0:
            return -1
        n_bs = 0
        j = idx - 1
        while j >= 0 and text[j] == "\\":
            n_bs += 1
            j -= 1
        if n_bs % 2 == 0:
            return idx
        pos = idx + 1


def serialize_step(step: ReasoningStep) -> str:
    """Render a step as canonical template text (deterministic, LF endings)."""
    step.validate()
    lines = []
    lines.append(f"<QUERY>{_escape(step.query)}</QUERY>")
    lines.append("<FACTS>")
    for f in step.facts:
        lines.append("- " + _escape(f, escape_newlines=True))
    lines.append("</FACTS>")
    lines.append(f"<RULE>{_escape(step.rule)}</RULE>")
    lines.append(f"<REVISION>{_escape(step.revision)}</REVISION>")
    rr = step.revision_result
    if rr.revised:
        rr_body = f"{REVISED_PREFIX} {_escape(rr.text)}"
    else:
        rr_body = RETAINED_TOKEN
    lines.append(f"<REVISION_RESULT>{rr_body}</REVISION_RESULT>")
    lines.append(
        f"<REASONING_RESULT>{_escape(step.reasoning_result)}</REASONING_RESULT>"
    )
    return "\n".join(lines) + "\n"


def serialize_response(resp: StructuredResponse) -> str:
    parts = [serialize_step(s) for s in resp.steps]
    text = "\n".join(parts)
    if resp.final_answer:
        text += f"\n{FINAL_ANSWER_PREFIX} {resp.final_answer}\n"
    return text


class _Scanner:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def skip_ws(self) -> None:
        while self.pos < len(self.text) and self.text[self.pos] in " \t\r\n":
            self.pos += 1

    def at_end(self) -> bool:
        return self.pos >= len(self.text)

    def peek_tag(self) -> str | None:
        """Name of the opening tag at the cursor, if any known tag starts here."""
        for tag in TAG_ORDER:
            if self.text.startswith(f"<{tag}>", self.pos):
                return tag
        return None

    def take_block(self, tag: str) -> str:
        open_s = f"<{tag}>"
        close_s = f"</{tag}>"
        assert self.text.startswith(open_s, self.pos)
        body_start = self.pos + len(open_s)
        end = _find_unescaped(self.text, close_s, body_start)
        if end < 0:
            raise UnclosedBlock(tag)
        body = self.text[body_start:end]
        self.pos = end + len(close_s)
        return body


def _parse_facts_body(body: str) -> tuple[str, ...]:
    # Body layout: newline, then "- entry" lines (newlines inside entries are
    # escaped), then a trailing newline before the closing tag.
    if not body.startswith("\n"):
        raise MalformedField("FACTS", "expected newline after <FACTS>")
    inner = body[1:]
    if inner.endswith("\n"):
        inner = inner[:-1]
    entries = []
    for line in inner.split("\n") if inner else []:
        if not line.startswith("- "):
            raise MalformedField("FACTS", f"fact line must start with '- ': {line!r}")
        entry = _unescape(line[2:], unescape_newlines=True)
        if not entry.strip():
            raise EmptyField("FACTS")
        entries.append(entry)
    if not entries:
        raise EmptyField("FACTS")
    return tuple(entries)


def _parse_revision_result(body: str) -> RevisionResult:
    if body == RETAINED_TOKEN:
        return RevisionResult.retained()
    if body.startswith(REVISED_PREFIX):
        text = body[len(REVISED_PREFIX):]
        if text.startswith(" "):
            text = text[1:]
        return RevisionResult.revised_to(_unescape(text))
    raise MalformedField(
        "REVISION_RESULT", f"expected {RETAINED_TOKEN} or {REVISED_PREFIX} ..."
    )


def _parse_step(sc: _Scanner, step_index: int) -> ReasoningStep:
    fields: dict[str, object] = {}
    for k, tag in enumerate(TAG_ORDER):
        sc.skip_ws()
        seen = sc.peek_tag()
        if seen != tag:
            if seen is None:
                raise MissingTag(tag, step_index)
            seen_pos = TAG_ORDER.index(seen)
            if seen_pos > k:
                raise MissingTag(tag, step_index)
            raise TagOrderViolation(
                f"<{seen}> appears where <{tag}> was expected in step {step_index}"
            )
        body = sc.take_block(tag)
        if tag == "FACTS":
            fields["facts"] = _parse_facts_body(body)
        elif tag == "REVISION_RESULT":
            fields["revision_result"] = _parse_revision_result(body)
        else:
            text = _unescape(body)
            if tag in _REQUIRED_NONEMPTY and not text.strip():
                raise EmptyField(tag)
            fields[tag.lower()] = text
    return ReasoningStep(
        query=fields["query"],
        facts=fields["facts"],
        rule=fields["rule"],
        revision=fields["revision"],
        revision_result=fields["revision_result"],
        reasoning_result=fields["reasoning_result"],
        step_index=step_index,
    )


_FINAL_RE = re.compile(
    re.escape(FINAL_ANSWER_PREFIX) + r"[ \t]*(?P<answer>[^\n]*)"
)


def parse_response(raw: str, require_final_answer: bool = False) -> StructuredResponse:
    """Strict parse of a template response.

    Raises a ParseError subclass on any structural deviation: missing or
    reordered tags, unclosed blocks, empty required fields, stray text between
    blocks.  ``require_final_answer`` additionally demands a terminal
    FINAL ANSWER line.
    """
    sc = _Scanner(raw)
    steps: list[ReasoningStep] = []
    final_answer = ""
    while True:
        sc.skip_ws()
        if sc.at_end():
            break
        if sc.text.startswith(FINAL_ANSWER_PREFIX, sc.pos):
            m = _FINAL_RE.match(sc.text, sc.pos)
            final_answer = m.group("answer").strip()
            if not final_answer:
                raise NoFinalAnswer()
            sc.pos = m.end()
            sc.skip_ws()
            if not sc.at_end():
                raise TagOrderViolation("content after FINAL ANSWER line")
            break
        tag = sc.peek_tag()
        if tag is None:
            raise TagOrderViolation(
                f"unexpected content at offset {sc.pos}: "
                f"{sc.text[sc.pos:sc.pos + 30]!r}"
            )
        if tag != "QUERY":
            # A non-leading tag at step start means the step lost its QUERY.
            raise MissingTag("QUERY", len(steps))
        steps.append(_parse_step(sc, len(steps)))
    if not steps:
        raise MissingTag("QUERY", 0)
    if require_final_answer and not final_answer:
        raise NoFinalAnswer()
    return StructuredResponse(
        steps=tuple(steps), final_answer=final_answer, raw_text=raw
    )


def conforms_strictly(raw: str, require_final_answer: bool = False) -> bool:
    """True iff the text parses in strict mode and every step is valid."""
    try:
        resp = parse_response(raw, require_final_answer=require_final_answer)
        for s in resp.steps:
            s.validate()
        return True
    except ValueError:
        return False


@dataclass(frozen=True)
class LenientReport:
    """Diagnostic parse: whatever blocks were recoverable, plus defects."""

    steps: tuple[ReasoningStep, ...]
    final_answer: str
    defects: tuple[str, ...]


def parse_lenient(raw: str) -> LenientReport:
    """Collect parseable step blocks and report defects; diagnostics only."""
    defects: list[str] = []
    steps: list[ReasoningStep] = []
    sc = _Scanner(raw)
    final_answer = ""
    while True:
        sc.skip_ws()
        if sc.at_end():
            break
        if sc.text.startswith(FINAL_ANSWER_PREFIX, sc.pos):
            m = _FINAL_RE.match(sc.text, sc.pos)
            final_answer = m.group("answer").strip()
            sc.pos = m.end()
            continue
        try:
            steps.append(_parse_step(sc, len(steps)))
        except ParseError as exc:
            defects.append(str(exc))
            nxt = sc.text.find("<QUERY>", sc.pos + 1)
            fin = sc.text.find(FINAL_ANSWER_PREFIX, sc.pos + 1)
            candidates = [p for p in (nxt, fin) if p >= 0]
            if not candidates:
                break
            sc.pos = min(candidates)
    return LenientReport(
        steps=tuple(steps), final_answer=final_answer, defects=tuple(defects)
    )
