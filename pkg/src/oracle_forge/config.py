"""Pipeline configuration: YAML file with env-var interpolation for secrets.

Only string values of the form ``${VAR_NAME}`` are interpolated, so secrets
(API keys) stay out of config files on disk.  Everything else in the file is
literal.  See README for the full key reference.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass, field, asdict

import yaml

from .beam import BeamConfig
from .corpus import CorruptionModel


class ConfigError(ValueError):
    pass


_ENV_RE = re.compile(r"^\$\{(?P<name>[A-Za-z_][A-Za-z0-9_]*)\}$")

PROMPT_ASSETS = ("generation.txt", "translation.txt", "precision.txt", "feasibility.txt")


def _interpolate(value):
    if isinstance(value, str):
        m = _ENV_RE.match(value)
        if m:
            name = m.group("name")
            resolved = os.environ.get(name)
            if resolved is None:
                raise ConfigError(f"environment variable {name} is not set")
            return resolved
        return value
    if isinstance(value, dict):
        return {k: _interpolate(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_interpolate(v) for v in value]
    return value


@dataclass
class CorpusSpec:
    kind: str = "chain"          # chain | rulebase | file
    count: int = 20
    hops: int = 3
    distractors: int = 2
    n_facts: int = 6
    n_rules: int = 5
    negation: bool = False
    path: str | None = None


@dataclass
class HttpSpec:
    endpoint: str = ""
    model: str = ""
    api_key: str | None = None
    max_in_flight: int = 4
    max_retries: int = 5
    timeout: float = 60.0


@dataclass
class PipelineConfig:
    backend: str = "scripted-oracle"
    seed: int = 0
    out_dir: str = "out"
    workers: int = 0             # 0 = available cores
    prompts_dir: str | None = None
    beam: BeamConfig = field(default_factory=BeamConfig)
    corpus: CorpusSpec = field(default_factory=CorpusSpec)
    corruption: CorruptionModel = field(default_factory=CorruptionModel)
    http: HttpSpec = field(default_factory=HttpSpec)
    max_sft: int = 12000
    max_dpo: int = 2000

    def effective_workers(self) -> int:
        return self.workers or (os.cpu_count() or 1)

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["http"].get("api_key"):
            d["http"]["api_key"] = "<redacted>"
        return d

    def hashable_dict(self) -> dict:
        """to_dict minus keys that do not affect generated data (output
        location, parallelism), so replays to different directories hash
        identically."""
        d = self.to_dict()
        d.pop("out_dir", None)
        d.pop("workers", None)
        return d

    def load_prompts(self) -> dict[str, str]:
        if not self.prompts_dir:
            return {}
        prompts = {}
        for name in PROMPT_ASSETS + ("few_shot.txt",):
            p = os.path.join(self.prompts_dir, name)
            if os.path.exists(p):
                with open(p, encoding="utf-8") as fh:
                    prompts[name.removesuffix(".txt")] = fh.read()
        return prompts

    def validate(self) -> None:
        if self.backend not in ("scripted-oracle", "scripted-noisy", "http"):
            raise ConfigError(f"unknown backend: {self.backend}")
        if self.corpus.kind not in ("chain", "rulebase", "file"):
            raise ConfigError(f"unknown corpus kind: {self.corpus.kind}")
        if self.corpus.kind == "file":
            if not self.corpus.path or not os.path.exists(self.corpus.path):
                raise ConfigError(f"corpus file not found: {self.corpus.path}")
        if self.prompts_dir is not None and not os.path.isdir(self.prompts_dir):
            raise ConfigError(f"prompts directory not found: {self.prompts_dir}")
        if self.backend == "http":
            if not self.http.endpoint or not self.http.model:
                raise ConfigError("http backend requires endpoint and model")
            if not self.prompts_dir:
                raise ConfigError("http backend requires prompts_dir")
            for name in PROMPT_ASSETS:
                if not os.path.exists(os.path.join(self.prompts_dir, name)):
                    raise ConfigError(f"missing prompt asset: {name}")
        # BeamConfig and CorruptionModel validate themselves on construction.


def _build(data: dict) -> PipelineConfig:
    cfg = PipelineConfig()
    known_beam = {
        "width", "top_k", "max_depth", "score_w1", "score_w2", "score_w3",
        "seed", "max_pairs_per_node", "temperature",
    }
    beam_kwargs = {k: v for k, v in data.get("beam", {}).items() if k in known_beam}
    beam_kwargs.setdefault("seed", data.get("seed", 0))
    corr_kwargs = dict(data.get("corruption", {}))
    corr_kwargs.setdefault("seed", data.get("seed", 0))
    try:
        cfg.beam = BeamConfig(**beam_kwargs)
        cfg.corruption = CorruptionModel(**corr_kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    try:
        cfg.corpus = CorpusSpec(**data.get("corpus", {}))
        cfg.http = HttpSpec(**data.get("http", {}))
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    for key in ("backend", "seed", "out_dir", "workers", "prompts_dir", "max_sft", "max_dpo"):
        if key in data:
            setattr(cfg, key, data[key])
    return cfg


def load_config(path: str) -> PipelineConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            data = yaml.safe_load(fh) or {}
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    cfg = _build(_interpolate(data))
    cfg.validate()
    return cfg
