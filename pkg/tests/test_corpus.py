import pytest

from oracle_forge import corpus, kernel, template
from oracle_forge.corpus import (
    CorruptionModel,
    PLANT_CLEAN,
    PLANT_MALFORMED,
    PLANT_WRONG_ANSWER,
    gen_chain_task,
    gen_rulebase_task,
    gold_response,
    load_tasks,
    planted_stage1_corpus,
    save_tasks,
)
from oracle_forge.kernel import answer_query, parse_atom, verify_step


def replay_proof(task):
    for ps in task.ground_truth_proof:
        verdict = verify_step(ps.facts, ps.rule)
        assert verdict.executed
        assert ps.conclusion in verdict.conclusions


class TestChainTask:
    def test_single_hop(self):
        task = gen_chain_task(1, seed=0)
        assert len(task.ground_truth_proof) == 1

    def test_deterministic(self):
        a = gen_chain_task(3, 2, seed=5)
        b = gen_chain_task(3, 2, seed=5)
        assert a.question == b.question
        assert a.ground_truth_proof == b.ground_truth_proof
        assert a.nl_pairing == b.nl_pairing

    def test_gold_answer_balanced_by_seed_parity(self):
        assert gen_chain_task(2, seed=0).gold_answer == "true"
        assert gen_chain_task(2, seed=1).gold_answer == "false"

    @pytest.mark.parametrize("seed", range(8))
    def test_proof_replays_and_decides_gold(self, seed):
        task = gen_chain_task(1 + seed % 4, seed=seed)
        replay_proof(task)
        # the queried atom's closed-world truth equals the gold answer
        query_nl = task.question.removeprefix("Is it true that ").rstrip("?")
        subject, pred = query_nl.split(" is a ")
        goal = parse_atom(f"{pred}({subject})")
        assert answer_query(task.kb, goal) == (task.gold_answer == "true")

    def test_pairing_covers_proof(self):
        task = gen_chain_task(4, 3, seed=2)
        for ps in task.ground_truth_proof:
            for f in ps.facts:
                assert task.nl_of(f) in task.nl_pairing
            assert task.nl_of(ps.rule) in task.nl_pairing

    def test_hops_zero_rejected(self):
        with pytest.raises(ValueError):
            gen_chain_task(0)


class TestRulebaseTask:
    @pytest.mark.parametrize("seed", range(10))
    def test_proof_replays(self, seed):
        task = gen_rulebase_task(8, 5, negation=seed % 2 == 0, seed=seed)
        replay_proof(task)

    @pytest.mark.parametrize("seed", range(6))
    def test_gold_matches_engine(self, seed):
        task = gen_rulebase_task(10, 6, seed=seed)
        query_nl = task.question.removeprefix("Is it true that ").rstrip("?")
        subject, pred = query_nl.split(" is a ")
        goal = parse_atom(f"{pred}({subject})")
        assert answer_query(task.kb, goal) == (task.gold_answer == "true")

    def test_deterministic(self):
        a = gen_rulebase_task(8, 5, seed=3)
        b = gen_rulebase_task(8, 5, seed=3)
        assert a.kb == b.kb
        assert a.question == b.question

    def test_bounds_enforced(self):
        with pytest.raises(ValueError):
            gen_rulebase_task(n_facts=31)
        with pytest.raises(ValueError):
            gen_rulebase_task(n_rules=13)


class TestGoldResponse:
    def test_conforms_and_answers(self):
        task = gen_chain_task(3, seed=0)
        raw = template.serialize_response(gold_response(task))
        assert template.conforms_strictly(raw, require_final_answer=True)
        resp = template.parse_response(raw)
        assert resp.final_answer == task.gold_answer


class TestCorruptionModel:
    def test_probability_bounds(self):
        with pytest.raises(ValueError):
            CorruptionModel(p_bad_rule=1.5)

    def test_expected_success_rate(self):
        m = CorruptionModel(p_bad_rule=0.3, p_bad_fact=0.2)
        assert m.expected_engine_success_rate() == pytest.approx(0.7 * 0.8)
        assert CorruptionModel().expected_engine_success_rate() == 1.0


class TestPlantedCorpus:
    def test_fractions_and_labels(self):
        tasks = [gen_chain_task(2, seed=i) for i in range(50)]
        samples = planted_stage1_corpus(tasks, 0.4, 0.2, seed=1)
        labels = [s.label for s in samples]
        assert labels.count(PLANT_MALFORMED) == 20
        assert labels.count(PLANT_WRONG_ANSWER) == 10
        assert labels.count(PLANT_CLEAN) == 20
        for s in samples:
            conforms = template.conforms_strictly(s.raw, require_final_answer=True)
            if s.label == PLANT_MALFORMED:
                assert not conforms
            else:
                assert conforms


class TestTaskSerialization:
    def test_jsonl_round_trip(self, tmp_path):
        tasks = [gen_chain_task(2, seed=i) for i in range(3)]
        tasks.append(gen_rulebase_task(8, 5, seed=4))
        path = tmp_path / "tasks.jsonl"
        save_tasks(tasks, path)
        loaded = load_tasks(path)
        assert len(loaded) == len(tasks)
        for orig, back in zip(tasks, loaded):
            assert back.id == orig.id
            assert back.gold_answer == orig.gold_answer
            assert back.ground_truth_proof == orig.ground_truth_proof
            assert back.nl_pairing == orig.nl_pairing
            assert back.kb == orig.kb
