import math
from pathlib import Path

import pytest

import xvspec

SCENARIOS = Path(__file__).resolve().parents[2] / "scenarios"


def small_config(**overrides):
    config = {
        "seed": 3,
        "lexicon": {"num_words": 30, "num_syllables": 25, "merge_richness": 0.6},
        "datasets": [{"id": "A", "seed": 11, "sentences": 200}],
        "engine": {"k": 3, "max_new_tokens": 16, "temperature": 1.0, "mode": "ngram"},
        "adapt": {"mode": "distill", "lr": 0.1, "interval": 4},
        "stream": {"samples": 20, "prompt_words": 2},
        "targets": [{"id": "t", "order": 1, "alpha": 0.01}],
        "drafter": {"alpha": 0.1, "general": {"sentences": 300}},
    }
    config.update(overrides)
    return config


def test_tokenizer_round_trip():
    tok = xvspec.Tokenizer.train(["abab", "abc"], 2)
    ids = tok.tokenize("ababc")
    assert tok.detokenize(ids) == "ababc"
    assert [tok.surface(i) for i in ids] == ["abab", "c"]
    back = xvspec.Tokenizer.from_json(tok.to_json())
    assert back.vocab == tok.vocab
    assert len(back) == tok.vocab_size


def test_tokenizer_rejects_unknown_symbol():
    tok = xvspec.Tokenizer.train(["ab"], 0)
    with pytest.raises(ValueError, match="'z'"):
        tok.tokenize("abz")


def test_direct_map_and_elevation_conserve_mass():
    draft = xvspec.Tokenizer.train(["ab"], 0)
    target = xvspec.Tokenizer.train(["ab"], 1)
    dmap = xvspec.DirectMap.build(draft, target)
    assert len(dmap) == 2
    a, b = draft.find("a"), draft.find("b")
    q = [0.6, 0.4]
    out = xvspec.elevate(q, dmap, target.vocab_size, target.find("ab"), [a, b], [q, [0.3, 0.7]])
    assert math.isclose(out[target.find("ab")], 0.6 * 0.7, abs_tol=1e-15)
    assert math.isclose(out[dmap.to_target(a)] + out[target.find("ab")], 0.6, abs_tol=1e-15)


def test_math_helpers():
    assert xvspec.residual([0.7, 0.3], [0.3, 0.7]) == pytest.approx([1.0, 0.0])
    assert xvspec.early_exit([0.9, 0.8, 0.7], 0.3)
    assert not xvspec.early_exit([0.9, 0.8], 0.3)
    assert xvspec.acceptance_label(0.3, 0.6) == pytest.approx(0.5)
    s = xvspec.compute_speedup([(2, 0.25, 1.0)])
    assert s["speedup"] == pytest.approx(1.6)


def test_run_scenario_is_deterministic():
    a = xvspec.run_scenario(small_config())
    b = xvspec.run_scenario(small_config())
    assert a["csv"] == b["csv"]
    assert len(a["rows"]) == 20
    assert 0.0 <= a["aggregates"]["acceptance_rate"] <= 1.0
    assert a["csv"].splitlines()[0].startswith("step,proposed,accepted")


def test_invalid_scenario_raises():
    with pytest.raises(ValueError):
        xvspec.run_scenario(small_config(datasets=[]))


def test_sweep_and_bundled_scenarios():
    result = xvspec.sweep(small_config(), "k", [3, 4])
    assert result["values"] == ["3", "4"]
    assert result["table"].startswith("k,acceptance_rate")
    for path in SCENARIOS.glob("*.json"):
        config = xvspec.load_scenario(path)
        assert xvspec.normalize_scenario(config) == config
