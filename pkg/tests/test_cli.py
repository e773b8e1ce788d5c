import json
import os

import pytest

from oracle_forge import cli
from oracle_forge.config import ConfigError, PipelineConfig, load_config
from oracle_forge.datafactory import compute_stats


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return str(path)


def run_cli(capsys, *argv):
    code = cli.main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


class TestConfig:
    def test_defaults(self):
        cfg = PipelineConfig()
        cfg.validate()
        assert cfg.backend == "scripted-oracle"
        assert cfg.beam.width == 9 and cfg.beam.top_k == 3

    def test_load_yaml(self, tmp_path):
        path = write(
            tmp_path / "cfg.yaml",
            "backend: scripted-noisy\nseed: 42\n"
            "beam: {width: 6, top_k: 2}\n"
            "corruption: {p_bad_rule: 0.25}\n"
            "corpus: {kind: chain, count: 5, hops: 2}\n",
        )
        cfg = load_config(path)
        assert cfg.backend == "scripted-noisy"
        assert cfg.seed == 42
        assert cfg.beam.width == 6
        assert cfg.beam.seed == 42  # inherits top-level seed
        assert cfg.corruption.p_bad_rule == 0.25
        assert cfg.corruption.seed == 42
        assert cfg.corpus.count == 5

    def test_env_interpolation(self, tmp_path, monkeypatch):
        monkeypatch.setenv("OF_TEST_KEY", "sekrit")
        path = write(
            tmp_path / "cfg.yaml",
            "http: {api_key: '${OF_TEST_KEY}', endpoint: 'http://x', model: m}\n",
        )
        cfg = load_config(path)
        assert cfg.http.api_key == "sekrit"
        # redacted when serialized back out
        assert cfg.to_dict()["http"]["api_key"] == "<redacted>"

    def test_env_interpolation_missing_var(self, tmp_path, monkeypatch):
        monkeypatch.delenv("OF_MISSING_KEY", raising=False)
        path = write(
            tmp_path / "cfg.yaml", "http: {api_key: '${OF_MISSING_KEY}'}\n"
        )
        with pytest.raises(ConfigError):
            load_config(path)

    def test_partial_env_pattern_is_literal(self, tmp_path):
        path = write(
            tmp_path / "cfg.yaml", "out_dir: 'prefix-${NOT_INTERPOLATED}'\n"
        )
        cfg = load_config(path)
        assert cfg.out_dir == "prefix-${NOT_INTERPOLATED}"

    def test_k_must_divide_w(self, tmp_path):
        path = write(tmp_path / "cfg.yaml", "beam: {width: 9, top_k: 4}\n")
        with pytest.raises(ConfigError):
            load_config(path)

    def test_http_backend_requires_prompt_assets(self, tmp_path):
        prompts = tmp_path / "prompts"
        prompts.mkdir()
        for name in ("generation.txt", "translation.txt", "precision.txt"):
            write(prompts / name, "x")
        # feasibility.txt missing
        path = write(
            tmp_path / "cfg.yaml",
            f"backend: http\nprompts_dir: {prompts}\n"
            "http: {endpoint: 'http://x', model: m}\n",
        )
        with pytest.raises(ConfigError, match="feasibility"):
            load_config(path)

    def test_http_backend_requires_endpoint(self, tmp_path):
        path = write(tmp_path / "cfg.yaml", "backend: http\n")
        with pytest.raises(ConfigError):
            load_config(path)

    def test_corpus_file_must_exist(self, tmp_path):
        path = write(
            tmp_path / "cfg.yaml", "corpus: {kind: file, path: /nope.jsonl}\n"
        )
        with pytest.raises(ConfigError):
            load_config(path)

    def test_unknown_backend(self, tmp_path):
        path = write(tmp_path / "cfg.yaml", "backend: telepathy\n")
        with pytest.raises(ConfigError):
            load_config(path)


class TestStage1Cli:
    def test_oracle_keeps_everything(self, tmp_path, capsys):
        cfg = write(
            tmp_path / "cfg.yaml",
            "corpus: {kind: chain, count: 50, hops: 3}\nworkers: 1\n",
        )
        out = tmp_path / "out"
        code, stdout, _ = run_cli(
            capsys, "stage1", "--config", cfg, "--out", str(out), "--seed", "1"
        )
        assert code == 0
        assert "kept 50, rejected 0" in stdout
        lines = (out / "sft.jsonl").read_text().splitlines()
        assert len(lines) == 50
        assert (out / "rejections.jsonl").read_text() == ""
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["counts"] == {"kept": 50, "rejected": 0}

    def test_config_error_exit_code(self, tmp_path, capsys):
        cfg = write(tmp_path / "cfg.yaml", "beam: {width: 9, top_k: 4}\n")
        code, _, stderr = run_cli(capsys, "stage1", "--config", cfg)
        assert code == cli.EXIT_CONFIG
        assert "config error" in stderr


class TestStage2Cli:
    def test_oracle_run_counts(self, tmp_path, capsys):
        cfg = write(
            tmp_path / "cfg.yaml",
            "corpus: {kind: chain, count: 10, hops: 3}\nworkers: 2\n",
        )
        out = tmp_path / "out"
        code, stdout, _ = run_cli(
            capsys, "stage2", "--config", cfg, "--out", str(out), "--seed", "3"
        )
        assert code == 0
        assert "tasks 10" in stdout
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["counts"]["tasks"] == 10
        assert manifest["counts"]["sft"] >= 10  # oracle finds every gold path
        stats = compute_stats(str(out / "audit.jsonl"))
        assert stats.success_rate == 1.0

    def test_total_corruption_emits_nothing_but_exits_zero(self, tmp_path, capsys):
        cfg = write(
            tmp_path / "cfg.yaml",
            "backend: scripted-noisy\n"
            "corruption: {p_format_break: 1.0}\n"
            "corpus: {kind: chain, count: 5, hops: 2}\nworkers: 1\n",
        )
        out = tmp_path / "out"
        code, stdout, stderr = run_cli(
            capsys, "stage2", "--config", cfg, "--out", str(out)
        )
        assert code == 0
        assert "sft 0" in stdout
        assert "no correct path" in stderr

    def test_replay_is_byte_identical(self, tmp_path, capsys):
        cfg = write(
            tmp_path / "cfg.yaml",
            "backend: scripted-noisy\n"
            "corruption: {p_bad_rule: 0.3}\n"
            "corpus: {kind: chain, count: 8, hops: 3}\n",
        )
        outs = []
        for name in ("a", "b"):
            out = tmp_path / name
            code, _, _ = run_cli(
                capsys, "stage2", "--config", cfg, "--out", str(out), "--seed", "5"
            )
            assert code == 0
            outs.append(out)
        for fname in ("sft.jsonl", "dpo.jsonl", "audit.jsonl", "manifest.json"):
            assert (outs[0] / fname).read_bytes() == (outs[1] / fname).read_bytes()

    def test_workers_do_not_change_output(self, tmp_path, capsys):
        outs = []
        for name, workers in (("w1", 1), ("w4", 4)):
            cfg = write(
                tmp_path / f"cfg-{name}.yaml",
                "backend: scripted-noisy\n"
                "corruption: {p_bad_rule: 0.3}\n"
                f"corpus: {{kind: chain, count: 8, hops: 3}}\nworkers: {workers}\n",
            )
            out = tmp_path / name
            code, _, _ = run_cli(
                capsys, "stage2", "--config", cfg, "--out", str(out), "--seed", "5"
            )
            assert code == 0
            outs.append(out)
        assert (outs[0] / "sft.jsonl").read_bytes() == (outs[1] / "sft.jsonl").read_bytes()
        assert (outs[0] / "audit.jsonl").read_bytes() == (outs[1] / "audit.jsonl").read_bytes()


class TestStatsCli:
    def _audit(self, tmp_path, capsys):
        cfg = write(
            tmp_path / "cfg.yaml",
            "backend: scripted-noisy\ncorruption: {p_bad_rule: 0.3}\n"
            "corpus: {kind: chain, count: 6, hops: 3}\n",
        )
        out = tmp_path / "out"
        run_cli(capsys, "stage2", "--config", cfg, "--out", str(out), "--seed", "2")
        return str(out / "audit.jsonl")

    def test_table_output(self, tmp_path, capsys):
        audit = self._audit(tmp_path, capsys)
        code, stdout, _ = run_cli(capsys, "stats", audit)
        assert code == 0
        assert "success rate" in stdout
        assert "Translation Error" in stdout

    def test_json_matches_in_process(self, tmp_path, capsys):
        audit = self._audit(tmp_path, capsys)
        code, stdout, _ = run_cli(capsys, "stats", audit, "--json")
        assert code == 0
        assert json.loads(stdout) == compute_stats(audit).to_dict()

    def test_missing_file(self, capsys):
        code, _, stderr = run_cli(capsys, "stats", "/no/such/audit.jsonl")
        assert code == cli.EXIT_FAILURE
        assert "error" in stderr


class TestVerifyStepCli:
    def test_socrates(self, tmp_path, capsys):
        facts = write(tmp_path / "facts.kbl", "fact man(socrates).\n")
        rule = write(tmp_path / "rule.kbl", "rule mortal(X) :- man(X).\n")
        code, stdout, _ = run_cli(capsys, "verify-step", facts, rule)
        assert code == 0
        assert stdout.strip() == "executed: mortal(socrates)"

    def test_no_rule_firing(self, tmp_path, capsys):
        facts = write(tmp_path / "facts.kbl", "fact man(socrates).\n")
        rule = write(tmp_path / "rule.kbl", "rule mortal(X) :- god(X).\n")
        code, stdout, _ = run_cli(capsys, "verify-step", facts, rule)
        assert code == cli.EXIT_FAILURE
        assert stdout.startswith("failed:")

    def test_unsafe_rule(self, tmp_path, capsys):
        facts = write(tmp_path / "facts.kbl", "fact man(socrates).\n")
        rule = write(tmp_path / "rule.kbl", "rule mortal(X) :- not man(X).\n")
        code, stdout, stderr = run_cli(capsys, "verify-step", facts, rule)
        assert code == cli.EXIT_FAILURE

    def test_rule_count_enforced(self, tmp_path, capsys):
        facts = write(tmp_path / "facts.kbl", "fact man(socrates).\n")
        rule = write(
            tmp_path / "rule.kbl",
            "rule mortal(X) :- man(X).\nrule wise(X) :- man(X).\n",
        )
        code, _, stderr = run_cli(capsys, "verify-step", facts, rule)
        assert code == cli.EXIT_FAILURE
        assert "exactly 1 rule" in stderr

    def test_parse_error(self, tmp_path, capsys):
        facts = write(tmp_path / "facts.kbl", "fact man(socrates\n")
        rule = write(tmp_path / "rule.kbl", "rule mortal(X) :- man(X).\n")
        code, _, stderr = run_cli(capsys, "verify-step", facts, rule)
        assert code == cli.EXIT_FAILURE
        assert "error" in stderr


class TestCorpusFileRoundTrip:
    def test_stage2_from_saved_tasks(self, tmp_path, capsys):
        from oracle_forge.corpus import gen_chain_task, save_tasks

        tasks = [gen_chain_task(2, seed=i) for i in range(4)]
        path = tmp_path / "tasks.jsonl"
        save_tasks(tasks, str(path))
        cfg = write(
            tmp_path / "cfg.yaml", f"corpus: {{kind: file, path: {path}}}\n"
        )
        out = tmp_path / "out"
        code, stdout, _ = run_cli(
            capsys, "stage2", "--config", cfg, "--out", str(out)
        )
        assert code == 0
        assert "tasks 4" in stdout


def test_module_entry_point():
    import subprocess
    import sys

    proc = subprocess.run(
        [sys.executable, "-m", "oracle_forge", "--help"],
        capture_output=True,
        text=True,
        cwd=os.path.dirname(os.path.dirname(os.path.abspath(__file__))),
    )
    assert proc.returncode == 0
    assert "stage1" in proc.stdout and "verify-step" in proc.stdout
