"""Tests for the three-component reward."""

import pytest

from turnwise.core import parse_multi_turn
from turnwise.rewards import (
    DEFAULT_CUE_WORDS,
    RewardBreakdown,
    RewardConfig,
    check_accuracy,
    check_format,
    check_unit_compactness,
    compute_reward,
    default_cue_lexicon,
    load_cue_lexicon,
)

VALID_CORRECT_COMPACT = "<think>compute 6*7 directly.</think>\\boxed{42}"
VALID_WRONG = "<think>compute 6*7 badly.</think>\\boxed{41}"
VALID_NONCOMPACT = (
    "<think>try x=1, get 42. Wait, double-check: still 42.</think>\\boxed{42}"
)
MALFORMED = "answer first<think>then think</think>oops"


# ---------------------------------------------------------------------------
# config


def test_config_defaults():
    cfg = RewardConfig()
    assert (cfg.format_pass, cfg.format_fail) == (1.0, -1.0)
    assert (cfg.accuracy_pass, cfg.accuracy_fail) == (2.0, -2.0)
    assert (cfg.unit_pass, cfg.unit_fail) == (0.0, -0.3)


def test_config_rejects_pass_below_fail():
    with pytest.raises(ValueError):
        RewardConfig(format_pass=-2.0, format_fail=0.0)


def test_config_from_file(tmp_path):
    p = tmp_path / "rw.json"
    p.write_text('{"unit_fail": -0.5}')
    cfg = RewardConfig.from_file(p)
    assert cfg.unit_fail == -0.5
    assert cfg.format_pass == 1.0


def test_config_from_file_rejects_unknown_keys(tmp_path):
    p = tmp_path / "rw.json"
    p.write_text('{"bogus": 1}')
    with pytest.raises(ValueError):
        RewardConfig.from_file(p)


# ---------------------------------------------------------------------------
# component checks


def test_check_format():
    assert check_format("<think>u</think>a")
    assert check_format("<think>u1</think>a1<think>u2</think>a2")
    assert not check_format(MALFORMED)
    assert not check_format("")


def test_check_accuracy_paths():
    r = parse_multi_turn("<think>t</think>\\boxed{10}")
    assert check_accuracy(r, "10")
    assert not check_accuracy(r, "9")
    half = parse_multi_turn("<think>t</think>\\boxed{0.5}")
    assert check_accuracy(half, "1/2")


def test_check_accuracy_uses_last_turn():
    r = parse_multi_turn("<think>a</think>\\boxed{1}<think>b</think>\\boxed{2}")
    assert check_accuracy(r, "2")
    assert not check_accuracy(r, "1")


def test_check_accuracy_requires_gold():
    r = parse_multi_turn("<think>t</think>1")
    with pytest.raises(ValueError):
        check_accuracy(r, "")


def test_compactness_cue_mid_turn_fails():
    r = parse_multi_turn("<think>Try x=3. Wait, double-check: x=3.</think>3")
    assert not check_unit_compactness(r)


def test_compactness_cue_at_turn_start_ok():
    r = parse_multi_turn(
        "<think>first attempt gives 3.</think>3"
        "<think>Wait, reconsider from scratch: yes 3.</think>3"
    )
    assert check_unit_compactness(r)


def test_compactness_no_cues_ok():
    r = parse_multi_turn("<think>straight computation.</think>4")
    assert check_unit_compactness(r)


def test_compactness_word_boundary():
    # "checkerboard" must not trigger the "check" cue.
    r = parse_multi_turn("<think>a pattern. checkerboard squares count 32.</think>32")
    assert check_unit_compactness(r)
    caught = parse_multi_turn("<think>a pattern. check the squares: 32.</think>32")
    assert not check_unit_compactness(caught)


def test_compactness_mid_sentence_cue_ignored():
    r = parse_multi_turn("<think>I will verify this later in the proof.</think>ok")
    assert check_unit_compactness(r)


def test_cue_lexicon_default_and_file(tmp_path):
    assert default_cue_lexicon().markers == DEFAULT_CUE_WORDS
    p = tmp_path / "cues.txt"
    p.write_text("Wait\n\n  Hmm  \n")
    lex = load_cue_lexicon(p)
    assert lex.markers == ("Wait", "Hmm")


# ---------------------------------------------------------------------------
# combined reward


def test_reward_valid_correct_compact():
    b = compute_reward(VALID_CORRECT_COMPACT, "42")
    assert (b.format, b.accuracy, b.unit) == (1.0, 2.0, 0.0)
    assert b.total == 3.0


def test_reward_valid_wrong_compact():
    b = compute_reward(VALID_WRONG, "42")
    assert (b.format, b.accuracy, b.unit) == (1.0, -2.0, 0.0)
    assert b.total == -1.0


def test_reward_valid_correct_noncompact():
    b = compute_reward(VALID_NONCOMPACT, "42")
    assert (b.format, b.accuracy, b.unit) == (1.0, 2.0, -0.3)
    assert b.total == 2.7


def test_reward_malformed_forces_all_fail():
    b = compute_reward(MALFORMED, "42")
    assert (b.format, b.accuracy, b.unit) == (-1.0, -2.0, -0.3)
    assert b.total == -3.3


def test_reward_total_is_plain_sum():
    b = RewardBreakdown(format=1.0, accuracy=-2.0, unit=-0.3)
    assert b.total == 1.0 + -2.0 + -0.3


def test_reachable_totals_exactly():
    cases = {
        ("<think>ok.</think>\\boxed{7}", "7"): 3.0,
        ("<think>ok. Wait, verify: 7.</think>\\boxed{7}", "7"): 2.7,
        ("<think>ok.</think>\\boxed{8}", "7"): -1.0,
        ("<think>ok. Wait, verify: 8.</think>\\boxed{8}", "7"): -1.3,
        ("no think tags", "7"): -3.3,
    }
    seen = set()
    for (text, gold), expected in cases.items():
        total = compute_reward(text, gold).total
        assert total == expected
        seen.add(total)
    assert seen == {3.0, 2.7, -1.0, -1.3, -3.3}
