import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from reflectrl.core import ContractViolation, InvalidToken, Reflection, StateText
from reflectrl.envs import EnvConfig, EnvConfigError, make_env, run_trial
from reflectrl.envs.graphqa import SLOT_ROLES
from reflectrl.envs.setquery import run_query
from reflectrl.expert_data import collect_task
from reflectrl.metrics import iou_kendall_reward

from conftest import tasks_for


def random_chooser(rng):
    return lambda s, tb: (tb.action(int(rng.integers(len(tb)))), 0.0)


def expert_chooser(env, task, rng, error_rate=0.0):
    return lambda s, tb: env.expert_action(task, s, error_rate, rng)


# -- config -----------------------------------------------------------------

def test_env_config_defaults_and_validation():
    cfg = EnvConfig("setquery").resolved()
    assert (cfg.size, cfg.step_limit, cfg.ambiguity_rate) == (10, 10, 0.3)
    assert EnvConfig("graphqa").resolved().step_limit == 5
    assert EnvConfig("gridhouse").resolved().step_limit == 20
    assert EnvConfig("graphqa", ambiguity_rate=0.0).resolved().ambiguity_rate == 0.0
    for bad in (EnvConfig("nope"), EnvConfig("graphqa", step_limit=-1), EnvConfig("graphqa", expert_error_rate=1.0),
                EnvConfig("graphqa", ambiguity_rate=1.5)):
        with pytest.raises(EnvConfigError):
            bad.resolved()
    with pytest.raises(EnvConfigError):
        make_env(EnvConfig("graphqa", size=3))


def test_env_config_manifest_round_trip():
    cfg = EnvConfig("gridhouse", size=6, step_limit=9, expert_error_rate=0.1, ambiguity_rate=0.2, seed=4)
    assert EnvConfig.from_manifest(cfg.to_manifest()) == cfg


# -- shared contract ----------------------------------------------------------

def test_generation_is_deterministic(env):
    a, b = tasks_for(env, 10, 3), tasks_for(env, 10, 3)
    assert [t.task_tokens for t in a] == [t.task_tokens for t in b]
    assert [t.hidden_spec for t in a] == [t.hidden_spec for t in b]
    other = make_env(env.config)
    assert other.vocab == env.vocab and other.table == env.table


def test_task_tables_have_one_size(env):
    for task in tasks_for(env, 30):
        assert len(env.task_table(task)) == env.table_size


def test_random_trials_respect_step_limit_and_reward_range(env):
    rng = np.random.default_rng(0)
    for task in tasks_for(env, 30):
        traj = run_trial(env, task, [], 0, random_chooser(rng))
        assert 1 <= len(traj.steps) <= env.step_limit
        assert 0.0 <= traj.terminal_reward <= 1.0
        if traj.terminated_by == "step_limit":
            assert len(traj.steps) == env.step_limit
        if env.evaluator_pass(task, traj):
            assert traj.terminal_reward == 1.0
        assert env.final_reward(task, traj) == traj.terminal_reward


def test_trials_replay_identically(env):
    for task in tasks_for(env, 10):
        a = run_trial(env, task, [], 0, random_chooser(np.random.default_rng(5)))
        b = run_trial(env, task, [], 0, random_chooser(np.random.default_rng(5)))
        assert a == b


def test_step_contract_violations(env):
    task = tasks_for(env, 1)[0]
    s0 = env.reset(task)
    bad = env.task_table(task).action(0)
    with pytest.raises(ContractViolation):
        env.env_step(task, s0, type(bad)(bad.thought, bad.action_kind, bad.action_args, env.table_size))
    full = StateText(s0.task_tokens, (), (), (0,) * env.step_limit)
    with pytest.raises(ContractViolation):
        env.env_step(task, full, bad)


def test_reset_accepts_only_alphabet_reflections(env):
    task = tasks_for(env, 1)[0]
    ok = env.reflection_at(0, 0.0, 0)
    assert env.reset(task, [ok]).reflection_tokens == ok.tokens
    outside = next(i for i in range(len(env.vocab)) if i not in env.alphabet)
    with pytest.raises(InvalidToken):
        env.reset(task, [Reflection((outside,), 0.0, 0)])


def test_expert_logprob_is_a_normalized_mixture(env):
    task = tasks_for(env, 1)[0]
    s0 = env.reset(task)
    n = env.table_size
    best = env.optimal_action_id(task, s0)
    seen = {}
    rng = np.random.default_rng(0)
    for _ in range(400):
        a, lp = env.expert_action(task, s0, 0.3, rng)
        seen[a.action_id] = lp
    assert math.isclose(seen[best], math.log(0.7))
    for i, lp in seen.items():
        if i != best:
            assert math.isclose(lp, math.log(0.3 / (n - 1)))
    assert math.isclose(math.exp(seen[best]) + (n - 1) * 0.3 / (n - 1), 1.0)


def test_expert_reflection_only_for_failures(env):
    rng = np.random.default_rng(0)
    for task in tasks_for(env, 20):
        traj = run_trial(env, task, [], 0, random_chooser(rng))
        if env.evaluator_pass(task, traj):
            with pytest.raises(ContractViolation):
                env.expert_reflection(task, traj)
        else:
            f = env.expert_reflection(task, traj)
            assert f.tokens[0] in env.alphabet
            assert env.reflection_at(env.reflection_index(f), 0.0, 0).tokens == f.tokens


def test_noiseless_expert_with_its_own_reflections_solves_every_task(env):
    rng = np.random.default_rng(0)
    for task in tasks_for(env, 40):
        seq = collect_task(env, task, 3, 0.0, rng)
        assert seq.solved_at is not None and seq.solved_at <= 1


# -- graphqa ----------------------------------------------------------------

def test_graphqa_question_kinds(graphqa):
    tasks = tasks_for(graphqa, 200)
    kinds = {(t.hidden_spec.stated, len(t.hidden_spec.relations)) for t in tasks}
    assert kinds == {(True, 1), (True, 2), (False, 1), (False, 2)}
    share_open = np.mean([not t.hidden_spec.stated for t in tasks])
    assert abs(share_open - graphqa.config.ambiguity_rate) < 0.1
    for t in tasks:
        q = t.hidden_spec
        words = graphqa.vocab.words(t.task_tokens)
        assert words[0] == f"hops:{len(q.relations) if q.stated else 'open'}"
        assert sum(w.startswith("q") for w in words) == (len(q.relations) if q.stated else 1)
        # the final pair holds the last hop for stated questions; the first pair the named hop for open ones
        slot = SLOT_ROLES.index("final-a") if q.stated else 0
        assert q.order[slot] == q.relations[-1 if q.stated else 0]
        assert len(set(q.order)) == len(q.order)


def test_graphqa_progress_cues_only_for_stated_questions(graphqa):
    rng = np.random.default_rng(0)
    cues = {graphqa.vocab.id(w) for w in ("partial", "complete", "overshot")}
    for task in tasks_for(graphqa, 60):
        traj = run_trial(graphqa, task, [], 0, random_chooser(rng))
        seen = cues & {tok for s in traj.steps for tok in s.observation}
        if not task.hidden_spec.stated:
            assert not seen


def test_graphqa_reward_is_token_f1_of_entity_names(graphqa):
    task = next(t for t in tasks_for(graphqa, 50) if t.hidden_spec.stated)
    q = task.hidden_spec
    rng = np.random.default_rng(0)
    good = run_trial(graphqa, task, [], 0, expert_chooser(graphqa, task, rng))
    assert good.terminal_reward == 1.0 and graphqa.evaluator_pass(task, good)
    # finishing at the start entity scores by name overlap with the answer
    stop = run_trial(graphqa, task, [], 0, lambda s, tb: (tb.action(graphqa.FINISH), 0.0))
    start, answer = graphqa.names[q.start], graphqa.names[q.answer]
    overlap = len(set(start) & set(answer))
    assert stop.terminal_reward == pytest.approx(overlap / 2 if start != answer else 1.0)


def test_graphqa_open_questions_need_feedback(graphqa):
    rng = np.random.default_rng(0)
    one_hop = [t for t in tasks_for(graphqa, 100) if not t.hidden_spec.stated and len(t.hidden_spec.relations) == 1]
    for task in one_hop:
        first = run_trial(graphqa, task, [], 0, expert_chooser(graphqa, task, rng))
        assert not graphqa.evaluator_pass(task, first)
        hint = graphqa.expert_reflection(task, first)
        assert graphqa.describe(hint.tokens) == "hint:finish-sooner"
        second = run_trial(graphqa, task, [hint], 1, expert_chooser(graphqa, task, rng))
        assert graphqa.evaluator_pass(task, second)


@given(st.integers(0, 10_000))
def test_graphqa_hints_name_the_gold_slot(seed):
    env = make_env(EnvConfig("graphqa"))
    task = env.generate_tasks(1, np.random.default_rng(seed))[0]
    q = task.hidden_spec
    # follow the wrong sibling first: the hint points at the gold slot for hop one
    wrong = 1 + q.order.index(q.relations[0]) + 1
    traj = run_trial(env, task, [], 0, lambda s, tb: (tb.action(wrong if not s.trail else env.FINISH), 0.0))
    assume(not env.evaluator_pass(task, traj))  # the sibling can reach the gold entity by coincidence
    word = env.describe(env.expert_reflection(task, traj).tokens)
    role = SLOT_ROLES[q.order.index(q.relations[0])]
    assert word == f"hint:{role.replace('-', '=')}"


# -- setquery ---------------------------------------------------------------

def test_setquery_reward_is_iou_kendall_of_last_result():
    env = make_env(EnvConfig("setquery"))
    rng = np.random.default_rng(2)
    for task in tasks_for(env, 30):
        traj = run_trial(env, task, [], 0, random_chooser(rng))
        queries = [s.action.action_id for s in traj.steps if s.action.action_kind == "query"]
        submitted = traj.terminated_by == "submitted"
        last = run_query(task.hidden_spec, *env.queries[queries[-1]]) if queries else ()
        expected = iou_kendall_reward(last, env.gold(task)) if submitted else 0.0
        assert traj.terminal_reward == pytest.approx(expected, abs=1e-12)


def test_setquery_ambiguous_words_cover_two_filters():
    env = make_env(EnvConfig("setquery", ambiguity_rate=1.0))
    for task in tasks_for(env, 30):
        words = env.vocab.words(task.task_tokens)
        assert "sorted" in words


# -- gridhouse --------------------------------------------------------------

def test_gridhouse_binary_reward_and_lamp_ends_trial():
    env = make_env(EnvConfig("gridhouse"))
    rng = np.random.default_rng(0)
    for task in tasks_for(env, 30):
        traj = run_trial(env, task, [], 0, random_chooser(rng))
        assert traj.terminal_reward in (0.0, 1.0)
        if traj.terminated_by == "submitted":
            assert traj.steps[-1].action.action_kind == "use"
