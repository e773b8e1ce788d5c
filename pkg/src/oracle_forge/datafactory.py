"""Stage-1 filtering, SFT/DPO emission, run statistics, failure taxonomy.

Emitted files (all UTF-8, LF, fixed key order, no timestamps in records):

- ``sft.jsonl``:  {"prompt", "response", "task_id", "stage"}
- ``dpo.jsonl``:  {"prompt", "chosen", "rejected", "task_id"}
- ``audit.jsonl``: one beam node per line (schema in docs/audit_schema.md)
- ``manifest.json``: counts, seed, config hash, rule-language version
"""

from __future__ import annotations

import hashlib
import json
import os
import re
from dataclasses import dataclass, field

from . import kernel, template
from .beam import BeamResult
from .gateway import SOURCE_UNMATCHED, CandidateStep, TranslationResult
from .kernel import StepVerdict

GENERATION_ERROR = "GenerationError"
TRANSLATION_ERROR = "TranslationError"

FORMAT_VIOLATION = "FormatViolation"
WRONG_ANSWER = "WrongAnswer"

STAGE1 = "stage1"
STAGE2 = "stage2"


class MalformedAudit(ValueError):
    pass


@dataclass(frozen=True)
class SftRecord:
    prompt: str
    response: str
    task_id: str
    source_stage: str = STAGE2


@dataclass(frozen=True)
class DpoRecord:
    prompt: str
    chosen: str
    rejected: str
    task_id: str

    def __post_init__(self):
        if self.chosen == self.rejected:
            raise ValueError("chosen and rejected must differ")


@dataclass(frozen=True)
class RejectReason:
    task_id: str
    label: str
    detail: str = ""


@dataclass
class RunStats:
    steps_total: int = 0
    steps_executed: int = 0
    failures_generation: int = 0
    failures_translation: int = 0
    per_task_breakdown: dict = field(default_factory=dict)

    @property
    def success_rate(self) -> float:
        return self.steps_executed / self.steps_total if self.steps_total else 0.0

    def to_dict(self) -> dict:
        return {
            "steps_total": self.steps_total,
            "steps_executed": self.steps_executed,
            "success_rate": self.success_rate,
            "failures_generation": self.failures_generation,
            "failures_translation": self.failures_translation,
            "per_task_breakdown": self.per_task_breakdown,
        }


_TRUE_WORDS = {"yes", "true"}
_FALSE_WORDS = {"no", "false"}


def normalize_answer(raw: str) -> str:
    """Trim, case-fold, strip terminal punctuation, canonicalize booleans,
    collapse inner whitespace.  Idempotent."""
    text = raw.strip().casefold()
    text = re.sub(r"[.!?;:]+$", "", text).strip()
    text = re.sub(r"\s+", " ", text)
    if text in _TRUE_WORDS:
        return "true"
    if text in _FALSE_WORDS:
        return "false"
    return text


@dataclass(frozen=True)
class Stage1Sample:
    task_id: str
    prompt: str
    raw: str
    gold: str


def stage1_filter(samples) -> tuple[list[SftRecord], list[RejectReason]]:
    """Keep samples that strictly conform to the template and answer
    correctly; label rejects FormatViolation or WrongAnswer."""
    kept: list[SftRecord] = []
    rejected: list[RejectReason] = []
    for s in samples:
        if not template.conforms_strictly(s.raw, require_final_answer=True):
            rejected.append(RejectReason(s.task_id, FORMAT_VIOLATION))
            continue
        resp = template.parse_response(s.raw, require_final_answer=True)
        if normalize_answer(resp.final_answer) != normalize_answer(s.gold):
            rejected.append(
                RejectReason(s.task_id, WRONG_ANSWER, detail=resp.final_answer)
            )
            continue
        kept.append(
            SftRecord(
                prompt=s.prompt, response=s.raw, task_id=s.task_id, source_stage=STAGE1
            )
        )
    return kept, rejected


def classify_failure(
    candidate: CandidateStep | None,
    translation: TranslationResult | None,
    verdict: StepVerdict,
) -> str:
    """Split engine failures into the two reported classes: defects in the
    generated step itself vs defects introduced going symbolic."""
    if verdict.executed:
        raise ValueError("classify_failure requires a failed verdict")
    if candidate is not None:
        try:
            candidate.step.validate()
        except ValueError:
            return GENERATION_ERROR
    if translation is not None and not translation.ok:
        if translation.error_kind == SOURCE_UNMATCHED:
            return GENERATION_ERROR
        return TRANSLATION_ERROR
    # Symbolic form existed but the engine rejected it or nothing fired.
    return TRANSLATION_ERROR


# --------------------------------------------------------------------------
# Audit file


def node_to_audit(node, task_id: str) -> dict:
    executed = bool(node.verdict and node.verdict.executed)
    failure_class = None
    failure_kind = None
    if node.step is not None and not executed:
        failure_class = classify_failure(node.candidate, node.translation, node.verdict)
        if node.verdict and node.verdict.failure:
            failure_kind = node.verdict.failure.value
    return {
        "id": node.id,
        "parent": node.parent,
        "depth": node.depth,
        "task_id": task_id,
        "has_step": node.step is not None,
        "executed": executed,
        "failure_class": failure_class,
        "failure_kind": failure_kind,
        "w1": node.score.w1,
        "w2": node.score.w2,
        "w3": node.score.w3,
        "total": node.score.total,
        "terminal": node.terminal,
        "answer": node.answer,
        "selected": node.selected,
    }


def write_audit(results: list[BeamResult], path) -> int:
    n = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for result in results:
            for node in result.nodes:
                fh.write(
                    json.dumps(node_to_audit(node, result.task.id), sort_keys=True)
                    + "\n"
                )
                n += 1
    return n


def read_audit(path) -> list[dict]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except ValueError as exc:
                raise MalformedAudit(f"line {lineno}: {exc}") from exc
            if not isinstance(rec, dict) or "id" not in rec or "task_id" not in rec:
                raise MalformedAudit(f"line {lineno}: not an audit record")
            records.append(rec)
    return records


def compute_stats(audit: list[dict] | str | os.PathLike) -> RunStats:
    """Aggregate engine successes and failure classes from an audit dump."""
    records = read_audit(audit) if isinstance(audit, (str, os.PathLike)) else audit
    stats = RunStats()
    for rec in records:
        if not rec.get("has_step"):
            continue
        task_id = rec["task_id"]
        per = stats.per_task_breakdown.setdefault(
            task_id,
            {
                "steps_total": 0,
                "steps_executed": 0,
                "failures_generation": 0,
                "failures_translation": 0,
            },
        )
        stats.steps_total += 1
        per["steps_total"] += 1
        if rec["executed"]:
            stats.steps_executed += 1
            per["steps_executed"] += 1
        elif rec.get("failure_class") == GENERATION_ERROR:
            stats.failures_generation += 1
            per["failures_generation"] += 1
        elif rec.get("failure_class") == TRANSLATION_ERROR:
            stats.failures_translation += 1
            per["failures_translation"] += 1
        else:
            raise MalformedAudit(
                f"failed step without failure_class in task {task_id}"
            )
    return stats


def format_stats_tables(stats: RunStats) -> str:
    """Success-rate and error-taxonomy tables, one row per task family."""
    lines = ["success rate of engine-executed steps"]
    lines.append(f"{'task':40s} {'steps':>7s} {'executed':>9s} {'rate':>7s}")
    for task_id, per in sorted(stats.per_task_breakdown.items()):
        rate = per["steps_executed"] / per["steps_total"] if per["steps_total"] else 0.0
        lines.append(
            f"{task_id:40s} {per['steps_total']:7d} {per['steps_executed']:9d} {rate:7.3f}"
        )
    lines.append(
        f"{'TOTAL':40s} {stats.steps_total:7d} {stats.steps_executed:9d} "
        f"{stats.success_rate:7.3f}"
    )
    lines.append("")
    lines.append("failure taxonomy (engine failures only)")
    n_fail = stats.failures_generation + stats.failures_translation
    for label, count in (
        ("Generation Error", stats.failures_generation),
        ("Translation Error", stats.failures_translation),
    ):
        pct = 100.0 * count / n_fail if n_fail else 0.0
        lines.append(f"{label:20s} {count:7d} {pct:6.1f}%")
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# Dataset emission


def sft_records_from_result(result: BeamResult) -> list[SftRecord]:
    prompt = f"{result.task.context}\n\n{result.task.question}"
    records = []
    seen: set[tuple[str, str]] = set()
    for path in result.sft_paths:
        response = template.serialize_response(
            template.StructuredResponse(steps=path.steps, final_answer=path.answer)
        )
        key = (path.task_id, hashlib.sha256(response.encode("utf-8")).hexdigest())
        if key in seen:
            continue
        seen.add(key)
        records.append(
            SftRecord(prompt=prompt, response=response, task_id=path.task_id)
        )
    return records


def dpo_records_from_result(result: BeamResult) -> list[DpoRecord]:
    records = []
    for pair in result.pairs:
        chosen = template.serialize_step(pair.chosen)
        rejected = template.serialize_step(pair.rejected)
        if chosen == rejected:
            continue
        records.append(
            DpoRecord(
                prompt=pair.prompt,
                chosen=chosen,
                rejected=rejected,
                task_id=result.task.id,
            )
        )
    return records


def config_hash(config_obj) -> str:
    blob = json.dumps(config_obj, sort_keys=True, default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def emit_datasets(
    results: list[BeamResult],
    out_dir,
    seed: int,
    config: dict | None = None,
    max_sft: int | None = None,
    max_dpo: int | None = None,
) -> dict:
    """Write sft.jsonl, dpo.jsonl, audit.jsonl, and manifest.json; rerun with
    identical inputs is byte-identical."""
    os.makedirs(out_dir, exist_ok=True)
    sft: list[SftRecord] = []
    dpo: list[DpoRecord] = []
    for result in sorted(results, key=lambda r: r.task.id):
        sft.extend(sft_records_from_result(result))
        dpo.extend(dpo_records_from_result(result))
    if max_sft is not None:
        sft = sft[:max_sft]
    if max_dpo is not None:
        dpo = dpo[:max_dpo]

    sft_path = os.path.join(out_dir, "sft.jsonl")
    with open(sft_path, "w", encoding="utf-8", newline="\n") as fh:
        for r in sft:
            fh.write(
                json.dumps(
                    {
                        "prompt": r.prompt,
                        "response": r.response,
                        "task_id": r.task_id,
                        "stage": r.source_stage,
                    }
                )
                + "\n"
            )
    dpo_path = os.path.join(out_dir, "dpo.jsonl")
    with open(dpo_path, "w", encoding="utf-8", newline="\n") as fh:
        for r in dpo:
            fh.write(
                json.dumps(
                    {
                        "prompt": r.prompt,
                        "chosen": r.chosen,
                        "rejected": r.rejected,
                        "task_id": r.task_id,
                    }
                )
                + "\n"
            )
    audit_path = os.path.join(out_dir, "audit.jsonl")
    write_audit(sorted(results, key=lambda r: r.task.id), audit_path)

    manifest = {
        "counts": {"sft": len(sft), "dpo": len(dpo), "tasks": len(results)},
        "seed": seed,
        "config_hash": config_hash(config or {}),
        "rule_language_version": kernel.RULE_LANGUAGE_VERSION,
        "files": ["sft.jsonl", "dpo.jsonl", "audit.jsonl"],
    }
    with open(
        os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8", newline="\n"
    ) as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return manifest
