import math
import subprocess
import sys

import numpy as np
import pytest

from promptedit.errors import InvalidConfig, InvalidTask
from promptedit.prompts import PromptState, render
from promptedit.scoring import (
    MAX_CLASSES,
    MAX_VERBALIZERS,
    ScoreWeights,
    ScorerObservation,
    SyntheticScorer,
    SyntheticScorerParams,
    compute_s,
    fallback_text_features,
    log_softmax,
    state_score,
    text_tokens,
)

from conftest import make_task

W = ScoreWeights()


class TestComputeS:
    def test_two_class_hand_value(self):
        # P = (0.9, 0.1): 2*ln(0.9) - 1.8*ln(0.1)
        s = compute_s(np.log([0.9, 0.1]), correct=0, weights=W)
        assert s == pytest.approx(2 * math.log(0.9) - 1.8 * math.log(0.1), abs=1e-12)
        assert s == pytest.approx(3.9339, abs=1e-4)

    def test_uniform_two_class(self):
        s = compute_s(np.log([0.5, 0.5]), correct=0, weights=W)
        assert s == pytest.approx(-0.1386, abs=1e-4)

    def test_runner_up_is_best_competitor(self):
        # correct=0; competitors are 0.3 and 0.5, the max must be 0.5
        log_p = np.log([0.2, 0.3, 0.5])
        s = compute_s(log_p, correct=0, weights=W)
        assert s == pytest.approx(2 * log_p[0] - 1.8 * log_p[2], abs=1e-12)

    def test_accepts_observation_objects(self):
        obs = ScorerObservation(np.log([0.4, 0.6]), np.zeros(4))
        assert compute_s(obs, 1, W) == compute_s(np.log([0.4, 0.6]), 1, W)

    def test_single_label_rejected(self):
        with pytest.raises(InvalidTask):
            compute_s(np.array([0.0]), 0, W)

    def test_bad_correct_index_rejected(self):
        with pytest.raises(InvalidConfig):
            compute_s(np.log([0.5, 0.5]), 2, W)

    def test_nonpositive_weights_rejected(self):
        with pytest.raises(InvalidConfig):
            ScoreWeights(lambda_pos=0.0)
        with pytest.raises(InvalidConfig):
            ScoreWeights(lambda_neg=-1.0)


def test_observation_requires_normalized_probs():
    with pytest.raises(InvalidConfig):
        ScorerObservation(np.log([0.5, 0.4]), np.zeros(2))


def test_log_softmax_normalizes():
    out = log_softmax(np.array([1.0, 2.0, 3.0]))
    assert np.exp(out).sum() == pytest.approx(1.0, abs=1e-12)
    # shift invariance
    assert np.allclose(out, log_softmax(np.array([101.0, 102.0, 103.0])))


def test_text_tokens_strips_edge_punctuation():
    assert text_tokens('Hello, world! "Foo" (bar).') == frozenset(
        {"hello", "world", "foo", "bar"}
    )
    assert text_tokens("...") == frozenset()


class TestSyntheticScorer:
    def test_logits_match_hand_formula(self, task, pool, state):
        scorer = SyntheticScorer(task, pool)
        query = text_tokens(state.query)
        overlaps = []
        for c, label in enumerate(task.label_space):
            union = set()
            for ex_id in state.exemplar_slots:
                if pool[ex_id].label == label:
                    union |= text_tokens(pool[ex_id].text)
            overlaps.append(len(query & union))
        base = np.array(overlaps, dtype=float) + 0.5 / (1 + state.num_phrases)

        # query verbalizer 0: preferred by no class under the (c+1) % V default
        obs = scorer.score_state(state)
        assert np.allclose(obs.label_log_probs, log_softmax(base), atol=1e-12)

        # query verbalizer 1: class 0 collects the beta bonus
        st1 = PromptState(state.instruction, state.exemplar_slots, (0, 0, 1), state.query)
        bonus = base.copy()
        bonus[0] += 2.0
        assert np.allclose(
            scorer.score_state(st1).label_log_probs, log_softmax(bonus), atol=1e-12
        )

    def test_gamma_term_cancels_in_probabilities(self, task, pool, state):
        a = SyntheticScorer(task, pool, SyntheticScorerParams(gamma=0.5, preferred_verbalizer=(1, 2)))
        b = SyntheticScorer(task, pool, SyntheticScorerParams(gamma=9.0, preferred_verbalizer=(1, 2)))
        assert np.allclose(
            a.score_state(state).label_log_probs, b.score_state(state).label_log_probs, atol=1e-12
        )

    def test_feature_layout(self, task, pool, state):
        scorer = SyntheticScorer(task, pool)
        obs = scorer.score_state(state)
        feats = obs.features
        assert feats.shape == (32,)
        assert feats[MAX_CLASSES + state.query_verbalizer] == 1.0
        assert feats[MAX_CLASSES + MAX_VERBALIZERS] == state.num_phrases
        assert feats[MAX_CLASSES + MAX_VERBALIZERS + 1] == state.num_slots
        assert np.all(feats[MAX_CLASSES + MAX_VERBALIZERS + 2 :] == 0.0)

    def test_preferred_verbalizer_moves_probability(self, task, pool, state):
        scorer = SyntheticScorer(task, pool)
        # default preference: class c prefers verbalizer (c+1) % 3; class 0 -> 1
        on = PromptState(state.instruction, state.exemplar_slots, (0, 0, 1), state.query)
        s_on = compute_s(scorer.score_state(on), 0, W)
        s_off = compute_s(scorer.score_state(state), 0, W)
        assert s_on > s_off

    def test_preferred_verbalizer_length_checked(self, task, pool):
        with pytest.raises(InvalidConfig):
            SyntheticScorer(task, pool, SyntheticScorerParams(preferred_verbalizer=(0,)))

    def test_class_cap(self, pool):
        big = make_task(num_labels=MAX_CLASSES + 1, num_verbalizers=2)
        with pytest.raises(InvalidConfig):
            SyntheticScorer(big, ())

    def test_score_prompt_overlap_on_rendered_blocks(self, task, pool):
        scorer = SyntheticScorer(task, pool)
        rendered = (
            "Some instruction.\n"
            "Input: w0x0 w0x5 Output: v0c0\n"
            "Q: w1x0 A: v0c1\n"
            "Input: w0x0 w0x1 Output: <mask>"
        )
        obs = scorer.score_prompt(rendered, ["v0c0", "v0c1"])
        # query block tokens {input, w0x0, w0x1, output}; the class-0 block
        # shares {input, w0x0, output}, the class-1 block shares nothing
        assert obs.features[0] == 3.0
        assert obs.features[1] == 0.0
        assert np.allclose(obs.label_log_probs, log_softmax(np.array([3.0, 0.0])), atol=1e-12)
        # structure-only terms are absent from the text path
        assert obs.features[MAX_CLASSES : MAX_CLASSES + MAX_VERBALIZERS].sum() == 0.0
        assert obs.features[MAX_CLASSES + MAX_VERBALIZERS] == 0.0
        assert obs.features[MAX_CLASSES + MAX_VERBALIZERS + 1] == 2.0  # exemplar blocks seen

    def test_render_then_score_prompt_round_trips(self, task, pool, state):
        scorer = SyntheticScorer(task, pool)
        words = [task.verbalizer_pool[0].label_words[lab] for lab in task.label_space]
        obs = scorer.score_prompt(render(state, task, pool), words)
        assert np.exp(obs.label_log_probs).sum() == pytest.approx(1.0, abs=1e-9)

    def test_score_prompt_requires_one_mask_block(self, task, pool):
        scorer = SyntheticScorer(task, pool)
        with pytest.raises(InvalidConfig):
            scorer.score_prompt("no mask here", ["v0c0", "v0c1"])

    def test_state_score_helper(self, task, pool, state):
        scorer = SyntheticScorer(task, pool)
        s, obs = state_score(scorer, state, 0, W)
        assert s == compute_s(obs, 0, W)


class TestFallbackFeatures:
    def test_shape_and_counts(self):
        feats = fallback_text_features("a b\nc d d", num_labels=2, feature_dim=16)
        assert feats.shape == (16,)
        assert feats[0] == 2      # blocks
        assert feats[1] == 5      # tokens
        assert feats[2] == 4      # distinct tokens
        assert feats[3] == 2.0
        assert feats[4:].sum() == 5  # every token lands in one bucket

    def test_stable_across_processes(self):
        # bucket assignment must not depend on per-process string-hash salt
        code = (
            "from promptedit.scoring import fallback_text_features;"
            "print(list(fallback_text_features('alpha beta\\ngamma', 2, 12)))"
        )
        runs = {
            subprocess.run(
                [sys.executable, "-c", code], capture_output=True, text=True, check=True
            ).stdout
            for _ in range(2)
        }
        assert len(runs) == 1
        assert str(list(fallback_text_features("alpha beta\ngamma", 2, 12))) == runs.pop().strip()
