"""Loss-style and step-wise reconstruction baselines."""

import numpy as np
import pytest

from diffaudit.baselines import loss_based_score, loss_sample_steps, secmi_score
from diffaudit.diffusion import (forward_noise, reconstruct_at_step,
                                 traverse_to_step)
from diffaudit.frequency import PatchGrid, full_mask
from diffaudit.predictors import (ConstantPredictor, GaussianAnalyticPredictor,
                                  MemorizingPredictor, NoisePredictor)
from diffaudit.similarity import SsimParams, mia_score


class TrueNoisePredictor(NoisePredictor):
    """Oracle wiring: recovers the exact noise from the known clean image."""

    def __init__(self, x0):
        self.x0 = x0

    def predict(self, x_t, t, schedule):
        return (x_t - schedule.signal_scale(t) * self.x0) / schedule.noise_scale(t)


class TestLossSampleSteps:
    def test_uniform_spacing(self):
        steps = loss_sample_steps(1000, 10)
        assert steps[0] == 1
        assert steps[-1] == 1000
        assert len(steps) == 10
        diffs = np.diff(steps)
        assert diffs.max() - diffs.min() <= 1

    def test_single_step(self):
        assert loss_sample_steps(100, 1) == [1]

    def test_no_duplicates_when_count_exceeds_range(self):
        steps = loss_sample_steps(5, 10)
        assert steps == sorted(set(steps))


class TestLossBasedScore:
    def test_true_noise_predictor_scores_zero(self, schedule_1000, rng):
        x0 = rng.uniform(-1, 1, (8, 8, 1))
        score = loss_based_score(x0, [100, 500, 900], TrueNoisePredictor(x0),
                                 schedule_1000, seed=3, image_key="img")
        assert score <= 1e-24

    def test_constant_zero_predictor_near_unit_mse(self, schedule_1000, rng):
        # Residual is the drawn standard normal itself: chi^2 / N with
        # N = 1024 pixels, averaged over 10 steps.
        x0 = rng.uniform(-1, 1, (32, 32, 1))
        steps = loss_sample_steps(1000, 10)
        score = loss_based_score(x0, steps, ConstantPredictor(0.0),
                                 schedule_1000, seed=11, image_key="img")
        assert abs(score - 1.0) <= 0.06

    def test_member_scores_below_far_nonmember_on_average(self, schedule_1000, rng):
        bank = [rng.uniform(-1, 1, (8, 8, 1)) for _ in range(3)]
        pred = MemorizingPredictor(bank, temperature=1e-4)
        far = rng.uniform(-1, 1, (8, 8, 1))
        steps = [100, 300, 500]
        member_scores = []
        far_scores = []
        for seed in range(100):
            member_scores.append(loss_based_score(
                bank[0], steps, pred, schedule_1000, seed=seed, image_key="m"))
            far_scores.append(loss_based_score(
                far, steps, pred, schedule_1000, seed=seed, image_key="f"))
        assert np.mean(member_scores) < np.mean(far_scores)

    def test_seeded_reproducibility(self, schedule_1000, rng):
        x0 = rng.uniform(-1, 1, (8, 8, 1))
        pred = GaussianAnalyticPredictor(np.zeros((8, 8, 1)), 1.0)
        a = loss_based_score(x0, [50, 250], pred, schedule_1000, seed=7,
                             image_key="k")
        b = loss_based_score(x0, [50, 250], pred, schedule_1000, seed=7,
                             image_key="k")
        assert a == b
        c = loss_based_score(x0, [50, 250], pred, schedule_1000, seed=8,
                             image_key="k")
        assert a != c

    def test_validates_steps(self, schedule_1000, rng):
        x0 = rng.uniform(-1, 1, (4, 4, 1))
        with pytest.raises(ValueError):
            loss_based_score(x0, [], ConstantPredictor(0.0), schedule_1000)
        with pytest.raises(ValueError):
            loss_based_score(x0, [0], ConstantPredictor(0.0), schedule_1000)
        with pytest.raises(ValueError):
            loss_based_score(x0, [1001], ConstantPredictor(0.0), schedule_1000)


class TestSecmiScore:
    def test_constant_predictor_near_zero(self, schedule_1000, rng):
        x0 = rng.uniform(-1, 1, (16, 16, 1))
        score = secmi_score(x0, 100, 10, ConstantPredictor(0.3), schedule_1000)
        assert score <= 1e-10

    def test_equals_restricted_pipeline_configuration(self, schedule_1000, rng):
        # Full mask, SSIM off, normalization off must reduce to the raw
        # reconstruction norm.
        bank = [rng.uniform(-1, 1, (16, 16, 1)) for _ in range(4)]
        pred = MemorizingPredictor(bank, temperature=0.05)
        params = SsimParams.from_dynamic_range(2.0)
        for _ in range(10):
            x0 = np.clip(bank[0] + 0.3 * rng.standard_normal((16, 16, 1)),
                         -1.0, 1.0)
            direct = secmi_score(x0, 100, 10, pred, schedule_1000)
            x_t = traverse_to_step(x0, 100, 10, pred, schedule_1000)
            x_tilde = reconstruct_at_step(x_t, 100, 10, pred, schedule_1000)
            record = mia_score(x_t, x_tilde, full_mask(x_t, PatchGrid(8)),
                               params, use_ssim=False, normalize=False)
            assert abs(direct - record.mia_score) <= 1e-12

    def test_noised_member_scores_below_nonmember(self, schedule_1000, rng):
        bank = [rng.uniform(-1, 1, (16, 16, 1)) for _ in range(6)]
        pred = MemorizingPredictor(bank, temperature=0.01)
        member = np.clip(bank[1] + 0.05 * rng.standard_normal((16, 16, 1)),
                         -1.0, 1.0)
        nonmember = rng.uniform(-1, 1, (16, 16, 1))
        assert secmi_score(member, 100, 10, pred, schedule_1000) \
            < secmi_score(nonmember, 100, 10, pred, schedule_1000)
