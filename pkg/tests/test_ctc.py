import math

import numpy as np
import pytest

from streamrec.ctc import (
    CtcBeamState,
    PosteriorGrid,
    collapse_path,
    ctc_brute_force,
    ctc_greedy,
    ctc_loss,
    ctc_prefix_beam_search,
    min_frames_for,
)
from streamrec.numerics import Tensor, grad_check, log_softmax


def random_grid(rng, frames, vocab):
    logits = rng.standard_normal((frames, vocab)) * 2.0
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def uniform_grid(frames, vocab):
    return np.full((frames, vocab), -math.log(vocab))


class TestCollapse:
    def test_repeats_then_blanks(self):
        assert collapse_path([0, 1, 1, 0, 2]) == (1, 2)

    def test_all_blank(self):
        assert collapse_path([0, 0, 0]) == ()

    def test_blank_separates_repeats(self):
        assert collapse_path([1, 0, 1]) == (1, 1)


class TestCtcLoss:
    def test_single_frame_single_token(self):
        lp = random_grid(np.random.default_rng(0), 1, 2)
        loss = ctc_loss(Tensor(lp), [1])
        assert loss.item() == pytest.approx(-lp[0, 1], abs=1e-12)

    def test_two_frames_three_alignments(self):
        lp = random_grid(np.random.default_rng(1), 2, 3)
        p = np.exp(lp)
        # paths collapsing to [a]: aa, blank-a, a-blank
        expected = p[0, 1] * p[1, 1] + p[0, 0] * p[1, 1] + p[0, 1] * p[1, 0]
        loss = ctc_loss(Tensor(lp), [1])
        assert loss.item() == pytest.approx(-math.log(expected), abs=1e-12)

    def test_empty_target_all_blank_path(self):
        lp = random_grid(np.random.default_rng(2), 2, 3)
        loss = ctc_loss(Tensor(lp), [])
        assert loss.item() == pytest.approx(-(lp[0, 0] + lp[1, 0]), abs=1e-12)

    def test_infeasible_target_inf_zero_grad(self):
        lp = Tensor(random_grid(np.random.default_rng(3), 2, 3), requires_grad=True)
        with pytest.warns(UserWarning, match="infeasible alignment"):
            loss = ctc_loss(lp, [1, 1, 2])
        assert math.isinf(loss.item())
        loss.backward()
        assert lp.grad is None or not lp.grad.any()

    def test_min_frames(self):
        assert min_frames_for([1, 2, 3]) == 3
        assert min_frames_for([1, 1, 2]) == 4
        assert min_frames_for([]) == 0

    def test_matches_oracle(self):
        rng = np.random.default_rng(4)
        for _ in range(25):
            frames = int(rng.integers(1, 5))
            vocab = int(rng.integers(2, 4))
            lp = random_grid(rng, frames, vocab)
            oracle = ctc_brute_force(lp)
            for labels, log_marginal in oracle.items():
                if len(labels) == 0 or min_frames_for(labels) > frames:
                    continue
                loss = ctc_loss(Tensor(lp), list(labels))
                assert loss.item() == pytest.approx(-log_marginal, abs=1e-9)

    def test_gradient(self):
        rng = np.random.default_rng(5)
        lp = Tensor(random_grid(rng, 4, 3), requires_grad=True)
        err = grad_check(lambda: ctc_loss(lp, [1, 2]), [lp], eps=1e-5, num_samples=150, rng=rng)
        assert err <= 1e-4

    def test_gradient_through_log_softmax(self):
        rng = np.random.default_rng(6)
        logits = Tensor(rng.standard_normal((5, 4)), requires_grad=True)
        err = grad_check(
            lambda: ctc_loss(log_softmax(logits), [2, 1, 2]),
            [logits], eps=1e-5, num_samples=150, rng=rng,
        )
        assert err <= 1e-4

    def test_token_outside_vocab_rejected(self):
        lp = random_grid(np.random.default_rng(7), 3, 3)
        with pytest.raises(ValueError):
            ctc_loss(Tensor(lp), [3])
        with pytest.raises(ValueError):
            ctc_loss(Tensor(lp), [0])


class TestGreedy:
    def test_collapse_rule(self):
        # argmax path blank,a,a,blank,b -> [a, b]
        lp = np.full((5, 3), -10.0)
        for t, tok in enumerate([0, 1, 1, 0, 2]):
            lp[t, tok] = -0.01
        assert ctc_greedy(lp) == (1, 2)

    def test_all_blank(self):
        lp = np.full((3, 3), -10.0)
        lp[:, 0] = -0.01
        assert ctc_greedy(lp) == ()

    def test_blank_separates_repeats(self):
        lp = np.full((3, 2), -10.0)
        for t, tok in enumerate([1, 0, 1]):
            lp[t, tok] = -0.01
        assert ctc_greedy(lp) == (1, 1)

    def test_tie_breaks_to_lower_index(self):
        lp = uniform_grid(1, 4)
        assert ctc_greedy(lp) == ()  # blank is index 0


class TestPrefixBeamSearch:
    def test_uniform_two_frames(self):
        # 9 paths, [a] and [b] get 3/9 each, tie broken to [a]
        found = ctc_prefix_beam_search(uniform_grid(2, 3), beam=16, nbest=5)
        labels, score = found[0]
        assert labels == (1,)
        assert score == pytest.approx(math.log(3.0 / 9.0), abs=1e-12)
        assert found[1][0] == (2,)
        assert {f[0] for f in found} == {(1,), (2,), (), (1, 2), (2, 1)}

    def test_exhaustive_beam_matches_oracle(self):
        rng = np.random.default_rng(8)
        for _ in range(30):
            frames = int(rng.integers(1, 5))
            vocab = int(rng.integers(2, 4))
            lp = random_grid(rng, frames, vocab)
            oracle = ctc_brute_force(lp)
            found = ctc_prefix_beam_search(lp, beam=512, nbest=512)
            assert len(found) == len(oracle)
            for labels, score in found:
                assert score == pytest.approx(oracle[labels], abs=1e-9)
            ranked = sorted(oracle.items(), key=lambda kv: (-kv[1], len(kv[0]), kv[0]))
            assert [labels for labels, _ in found] == [labels for labels, _ in ranked]

    def test_one_hot_grid_matches_greedy(self):
        path = [0, 1, 1, 0, 2, 2]
        lp = np.full((6, 3), -np.inf)
        for t, tok in enumerate(path):
            lp[t, tok] = 0.0
        found = ctc_prefix_beam_search(lp, beam=8, nbest=8)
        assert len(found) == 1
        assert found[0][0] == ctc_greedy(lp) == (1, 2)
        assert found[0][1] == pytest.approx(0.0, abs=1e-12)

    def test_beam_monotonicity(self):
        rng = np.random.default_rng(9)
        for _ in range(10)[:10]:
            lp = random_grid(rng, 6, 4)
            best = -np.inf
            for beam in (1, 2, 4, 8, 16):
                top = ctc_prefix_beam_search(lp, beam=beam, nbest=1)[0][1]
                assert top >= best - 1e-12
                best = max(best, top)

    def test_incremental_state_equals_fresh_run(self):
        rng = np.random.default_rng(10)
        lp = random_grid(rng, 12, 5)
        fresh = ctc_prefix_beam_search(lp, beam=6, nbest=6)
        state = CtcBeamState(6)
        for lo in range(0, 12, 3):
            state.advance(lp[lo : lo + 3])
        resumed = state.nbest(6)
        assert fresh == resumed

    def test_beam_nbest_validation(self):
        with pytest.raises(ValueError):
            ctc_prefix_beam_search(uniform_grid(2, 3), beam=2, nbest=4)


class TestBruteForce:
    def test_single_frame(self):
        lp = random_grid(np.random.default_rng(11), 1, 2)
        oracle = ctc_brute_force(lp)
        assert oracle[()] == pytest.approx(lp[0, 0], abs=1e-12)
        assert oracle[(1,)] == pytest.approx(lp[0, 1], abs=1e-12)

    def test_uniform_marginals(self):
        oracle = ctc_brute_force(uniform_grid(2, 3))
        expected = {
            (): 1 / 9,
            (1,): 3 / 9,
            (2,): 3 / 9,
            (1, 2): 1 / 9,
            (2, 1): 1 / 9,
        }
        assert set(oracle) == set(expected)
        for labels, prob in expected.items():
            assert oracle[labels] == pytest.approx(math.log(prob), abs=1e-12)

    def test_total_probability(self):
        rng = np.random.default_rng(12)
        for _ in range(10):
            lp = random_grid(rng, int(rng.integers(1, 5)), int(rng.integers(2, 4)))
            total = sum(math.exp(s) for s in ctc_brute_force(lp).values())
            assert total == pytest.approx(1.0, abs=1e-9)

    def test_size_limit(self):
        with pytest.raises(ValueError, match="oracle size limit"):
            ctc_brute_force(uniform_grid(30, 10))


class TestPosteriorGrid:
    def test_validate(self):
        grid = PosteriorGrid(uniform_grid(3, 4))
        grid.validate()
        with pytest.raises(ValueError):
            PosteriorGrid(np.zeros((2, 3))).validate()
