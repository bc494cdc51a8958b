import json

import pytest

import softcheck


def test_worked_bias_and_variance_points():
    # S* = 0, q' = 0.8, a' = 0.7 (p' = 0.9), two items with one satisfied.
    _, chk = softcheck.bias(0.7, 0.7, 0.9, 0.8, [True, False])
    assert chk == pytest.approx(0.55, abs=1e-12)
    _, var_chk, bound = softcheck.variance(0.7, 0.7, 0.9, 0.8, [True, True, False, False])
    assert var_chk == pytest.approx(0.03125, abs=1e-12)
    assert var_chk <= bound


def test_corollary_thresholds():
    assert softcheck.correct_threshold(0.95, 0.9) == 3
    assert softcheck.correct_threshold(0.99, 0.5) is None


def test_soft_score_is_exact():
    assert softcheck.soft_score([True, False, True]) == (2, 3)
    assert softcheck.generator_reward([True, True], 0.5) == 1.0
    assert softcheck.generator_reward([True, False], 0.5) == pytest.approx(0.25)


def test_grpo_and_replay():
    adv = softcheck.grpo_advantages([1.0, 0.0, 0.0, 1.0])
    assert adv == pytest.approx([1.0, -1.0, -1.0, 1.0], abs=1e-5)
    assert softcheck.replay_admit(3, 8) == "negative"
    assert softcheck.replay_admit(4, 5) == "positive"
    assert softcheck.replay_admit(1, 2) == "skip"


def test_environment_round_trip():
    spec = softcheck.sample_spec(7)
    text = softcheck.render(softcheck.response_space_size() - 1)
    bits = softcheck.constraint_bits(spec, text)
    assert len(bits) == len(json.loads(spec)["constraints"])


def test_partition_scenario(tmp_path):
    config = {"scenario": "partition-check", "seeds": [1], "partition": {"instances": 10}}
    out = softcheck.run_scenario(json.dumps(config), str(tmp_path / "pc"))
    assert out["passed"]
    assert softcheck.report_matches(str(tmp_path / "pc"))


def test_tiny_training_run(tmp_path):
    config = {
        "scenario": "train",
        "seeds": [3],
        "trainer": {"mode": "sverl", "steps": 3, "eval_prompts": 4, "gold_size": 32,
                    "warm_start": {"steps": 5}},
    }
    out = softcheck.run_scenario(json.dumps(config), str(tmp_path / "tr"))
    assert out["passed"]
    assert softcheck.report_matches(str(tmp_path / "tr"))


def test_unknown_key_rejected(tmp_path):
    with pytest.raises(ValueError):
        softcheck.run_scenario(json.dumps({"scenario": "train", "colour": 1}), str(tmp_path / "x"))
