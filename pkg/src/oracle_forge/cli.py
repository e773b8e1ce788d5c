"""Operator entry point wiring the two-stage pipeline.

Subcommands:

- ``stage1``: few-shot response generation + strict template/answer filter
- ``stage2``: engine-guided beam search -> sft.jsonl, dpo.jsonl, audit, manifest
- ``stats``: success-rate and failure-taxonomy tables from an audit dump
- ``verify-step``: debug one symbolic step (facts file + rule file)
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor

from . import corpus, datafactory, gateway, kernel, template
from .beam import run_beam
from .config import ConfigError, PipelineConfig, load_config
from .datafactory import Stage1Sample, compute_stats, format_stats_tables
from .gateway import GenerationContext

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2


def build_tasks(cfg: PipelineConfig) -> list[corpus.TaskInstance]:
    spec = cfg.corpus
    if spec.kind == "file":
        return corpus.load_tasks(spec.path)
    tasks = []
    for i in range(spec.count):
        seed = cfg.seed * 1_000_003 + i
        if spec.kind == "chain":
            hops = 1 + (i % spec.hops) if spec.hops > 1 else 1
            tasks.append(corpus.gen_chain_task(hops, spec.distractors, seed))
        else:
            tasks.append(
                corpus.gen_rulebase_task(spec.n_facts, spec.n_rules, spec.negation, seed)
            )
    return tasks


def make_task_backend(cfg: PipelineConfig, task, prompts):
    if cfg.backend == "http":
        return gateway.HttpBackend(
            endpoint=cfg.http.endpoint,
            model=cfg.http.model,
            api_key=cfg.http.api_key,
            prompts=prompts,
            max_retries=cfg.http.max_retries,
            max_in_flight=cfg.http.max_in_flight,
            timeout=cfg.http.timeout,
        )
    return gateway.make_backend(cfg.backend, task=task, corruption=cfg.corruption)


def _run_per_task(cfg: PipelineConfig, tasks, fn):
    """Run fn(index, task) over tasks with a bounded pool; ordered results."""
    workers = cfg.effective_workers()
    if workers <= 1 or len(tasks) <= 1:
        return [fn(i, t) for i, t in enumerate(tasks)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda it: fn(*it), enumerate(tasks)))


def cmd_stage1(cfg: PipelineConfig) -> int:
    prompts = cfg.load_prompts()
    tasks = build_tasks(cfg)

    def one(i, task):
        backend = make_task_backend(cfg, task, prompts)
        ctx = GenerationContext(
            question=f"{task.context}\n\n{task.question}",
            few_shot_asset=prompts.get("few_shot", ""),
            temperature=cfg.beam.temperature,
            seed=cfg.seed,
        )
        raw = backend.generate_response(ctx)
        return Stage1Sample(
            task_id=task.id, prompt=ctx.question, raw=raw, gold=task.gold_answer
        )

    samples = _run_per_task(cfg, tasks, one)
    kept, rejected = datafactory.stage1_filter(samples)
    os.makedirs(cfg.out_dir, exist_ok=True)
    sft_path = os.path.join(cfg.out_dir, "sft.jsonl")
    with open(sft_path, "w", encoding="utf-8", newline="\n") as fh:
        for r in kept[: cfg.max_sft]:
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
    with open(
        os.path.join(cfg.out_dir, "rejections.jsonl"), "w", encoding="utf-8", newline="\n"
    ) as fh:
        for r in rejected:
            fh.write(
                json.dumps({"task_id": r.task_id, "label": r.label, "detail": r.detail})
                + "\n"
            )
    manifest = {
        "counts": {"kept": min(len(kept), cfg.max_sft), "rejected": len(rejected)},
        "seed": cfg.seed,
        "config_hash": datafactory.config_hash(cfg.hashable_dict()),
        "stage": datafactory.STAGE1,
        "partial": len(kept) > cfg.max_sft,
    }
    with open(
        os.path.join(cfg.out_dir, "manifest.json"), "w", encoding="utf-8", newline="\n"
    ) as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")
    print(f"stage1: kept {manifest['counts']['kept']}, rejected {len(rejected)}")
    return EXIT_OK


def cmd_stage2(cfg: PipelineConfig) -> int:
    prompts = cfg.load_prompts()
    tasks = build_tasks(cfg)
    beam_cfg = cfg.beam
    if prompts.get("few_shot"):
        from dataclasses import replace

        beam_cfg = replace(beam_cfg, few_shot_asset=prompts["few_shot"])

    def one(i, task):
        backend = make_task_backend(cfg, task, prompts)
        return run_beam(task, beam_cfg, backend)

    results = _run_per_task(cfg, tasks, one)
    manifest = datafactory.emit_datasets(
        results,
        cfg.out_dir,
        seed=cfg.seed,
        config=cfg.hashable_dict(),
        max_sft=cfg.max_sft,
        max_dpo=cfg.max_dpo,
    )
    n_without_path = sum(1 for r in results if not r.sft_paths)
    if n_without_path:
        print(
            f"warning: {n_without_path}/{len(results)} tasks yielded no correct path",
            file=sys.stderr,
        )
    print(
        f"stage2: sft {manifest['counts']['sft']}, dpo {manifest['counts']['dpo']}, "
        f"tasks {manifest['counts']['tasks']}"
    )
    return EXIT_OK


def cmd_stats(audit_path: str, as_json: bool) -> int:
    try:
        stats = compute_stats(audit_path)
    except (datafactory.MalformedAudit, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    if as_json:
        print(json.dumps(stats.to_dict(), sort_keys=True, indent=2))
    else:
        print(format_stats_tables(stats), end="")
    return EXIT_OK


def cmd_verify_step(facts_path: str, rule_path: str) -> int:
    try:
        with open(facts_path, encoding="utf-8") as fh:
            facts_kb = kernel.parse_program(fh.read())
        with open(rule_path, encoding="utf-8") as fh:
            rule_kb = kernel.parse_program(fh.read())
    except (kernel.KbError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    if len(rule_kb.rules) != 1:
        print(
            f"error: rule file must contain exactly 1 rule, got {len(rule_kb.rules)}",
            file=sys.stderr,
        )
        return EXIT_FAILURE
    verdict = kernel.verify_step(sorted(facts_kb.facts), rule_kb.rules[0])
    if verdict.executed:
        print(f"executed: {kernel.render_conclusions(verdict)}")
        return EXIT_OK
    print(f"failed: {verdict.failure.value}" + (f" ({verdict.detail})" if verdict.detail else ""))
    return EXIT_FAILURE


def _load_cfg(args) -> PipelineConfig:
    cfg = load_config(args.config) if args.config else PipelineConfig()
    if args.seed is not None:
        cfg.seed = args.seed
        from dataclasses import replace

        cfg.beam = replace(cfg.beam, seed=args.seed)
        cfg.corruption = corpus.CorruptionModel(
            p_bad_rule=cfg.corruption.p_bad_rule,
            p_bad_fact=cfg.corruption.p_bad_fact,
            p_format_break=cfg.corruption.p_format_break,
            seed=args.seed,
        )
    if args.backend:
        cfg.backend = args.backend
    if args.out:
        cfg.out_dir = args.out
    cfg.validate()
    return cfg


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="oracle-forge",
        description="Engine-verified synthetic reasoning data pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="YAML config file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument(
            "--backend", choices=["scripted-oracle", "scripted-noisy", "http"]
        )
        p.add_argument("--out", help="output directory")

    p1 = sub.add_parser("stage1", help="few-shot generation + strict filtering")
    add_common(p1)
    p2 = sub.add_parser("stage2", help="engine-guided beam search data generation")
    add_common(p2)
    ps = sub.add_parser("stats", help="report success rates and failure taxonomy")
    ps.add_argument("audit", help="audit.jsonl path")
    ps.add_argument("--json", action="store_true", dest="as_json")
    pv = sub.add_parser("verify-step", help="verify one symbolic step")
    pv.add_argument("facts", help=".kbl file with the premise facts")
    pv.add_argument("rule", help=".kbl file with exactly one rule")

    args = parser.parse_args(argv)
    if args.command == "stats":
        return cmd_stats(args.audit, args.as_json)
    if args.command == "verify-step":
        return cmd_verify_step(args.facts, args.rule)
    try:
        cfg = _load_cfg(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.command == "stage1":
        return cmd_stage1(cfg)
    return cmd_stage2(cfg)


if __name__ == "__main__":
    sys.exit(main())
