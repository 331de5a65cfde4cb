import numpy as np
import pytest

import riskrnn.autodiff as ad
from riskrnn.autodiff import Tape
from riskrnn.geometry import Box, relative_config
from riskrnn.losses import total_loss
from riskrnn.model import (FrameInput, ModelConfig, RegionSet, RiskModel,
                           agent_rnn_step, anticipate_step,
                           apply_box_transform_nodes, forward_video,
                           fuse_predictions, imagine_location, param_specs,
                           pool_regions, relative_config_nodes, score_regions,
                           variant_config)
from riskrnn.nn import lstm_step, lstm_zero_state

from helpers import (TINY_CONFIG, random_box, random_frames, random_targets,
                     tiny_model, zeroed_model)


class TestConfig:
    def test_variants(self):
        base = ModelConfig()
        assert variant_config(base, "RA").variant == "RA"
        assert variant_config(base, "RAI").variant == "RAI"
        assert variant_config(base, "L-RA").variant == "L-RA"
        assert variant_config(base, "L-RAI").variant == "L-RAI"

    def test_memoryless_variants_have_no_rnn_blocks(self):
        for variant in ("RA", "RAI"):
            names = [name for name, _, _ in param_specs(variant_config(ModelConfig(), variant))]
            assert not any("rnn" in n for n in names)

    def test_no_imagination_variants_drop_the_head(self):
        names = [name for name, _, _ in param_specs(variant_config(ModelConfig(), "L-RA"))]
        assert "imagine_head_W" not in names

    def test_lambda_length_enforced(self):
        with pytest.raises(ValueError):
            ModelConfig(imagine_steps=2, lambdas=(0.6, 0.4)).validate()

    def test_lambdas_must_be_convex(self):
        with pytest.raises(ValueError):
            ModelConfig(lambdas=(0.6, 0.6)).validate()

    def test_unknown_variant(self):
        with pytest.raises(ValueError):
            variant_config(ModelConfig(), "L-R*CNN")


class TestTapeGeometry:
    def test_relative_config_matches_scalar_version(self):
        rng = np.random.default_rng(21)
        for _ in range(30):
            agent = random_box(rng)
            regions = RegionSet([random_box(rng) for _ in range(5)],
                                rng.normal(size=(5, 3)))
            tape = Tape()
            got = relative_config_nodes(tape, tape.const(agent.as_array()), regions)
            want = np.stack([relative_config(agent, r).as_array()
                             for r in regions.boxes], axis=1)
            np.testing.assert_allclose(got.value, want, rtol=1e-12, atol=1e-12)

    def test_box_transform_matches_scalar_version(self):
        tape = Tape()
        p = tape.const([2.0, 3.0, 4.0, 5.0])
        c = tape.const([1.0, 0.0, 0.0, 0.0])
        out = apply_box_transform_nodes(p, c)
        np.testing.assert_allclose(out.value, [6, 3, 4, 5])

    def test_box_transform_range_check(self):
        tape = Tape()
        with pytest.raises(ValueError):
            apply_box_transform_nodes(tape.const([0.0, 0.0, 1.0, 1.0]),
                                      tape.const([0.0, 0.0, 25.0, 0.0]))


class TestScoreRegions:
    def test_zero_scorer_gives_half(self):
        model = zeroed_model(TINY_CONFIG)
        rng = np.random.default_rng(1)
        regions = RegionSet([random_box(rng) for _ in range(4)],
                            rng.normal(size=(4, TINY_CONFIG.d_region)))
        tape = Tape()
        u = relative_config_nodes(tape, tape.const(random_box(rng).as_array()), regions)
        scores, _ = score_regions(tape, model.store, tape.const(np.zeros(8)), u, regions)
        np.testing.assert_allclose(scores.value, 0.5)

    def test_identical_regions_get_identical_scores(self):
        model = tiny_model(3)
        rng = np.random.default_rng(2)
        box = random_box(rng)
        feat = rng.normal(size=TINY_CONFIG.d_region)
        regions = RegionSet([box, box], np.stack([feat, feat]))
        tape = Tape()
        u = relative_config_nodes(tape, tape.const(random_box(rng).as_array()), regions)
        scores, _ = score_regions(tape, model.store, tape.const(np.zeros(8)), u, regions)
        assert scores.value[0] == scores.value[1]

    def test_sigmoid_of_logit(self):
        # doubling the appearance doubles the logit: sigmoid(2) -> sigmoid(4)
        assert 1 / (1 + np.exp(-2.0)) == pytest.approx(0.8808, abs=1e-4)
        assert 1 / (1 + np.exp(-4.0)) == pytest.approx(0.9820, abs=1e-4)


class TestPoolRegions:
    def test_zero_scores_give_zero_vector(self):
        rng = np.random.default_rng(3)
        regions = RegionSet([random_box(rng) for _ in range(3)],
                            rng.normal(size=(3, 4)))
        tape = Tape()
        out = pool_regions(tape, tape.const(np.zeros(3)), regions)
        np.testing.assert_allclose(out.value, 0.0)

    def test_single_region_full_weight(self):
        rng = np.random.default_rng(4)
        feat = rng.normal(size=4)
        regions = RegionSet([random_box(rng)], feat[None, :])
        tape = Tape()
        out = pool_regions(tape, tape.const(np.ones(1)), regions)
        np.testing.assert_allclose(out.value, feat)

    def test_hand_weighted_sum(self):
        rng = np.random.default_rng(5)
        regions = RegionSet([random_box(rng), random_box(rng)],
                            np.array([[1.0, 0.0], [0.0, 1.0]]))
        tape = Tape()
        out = pool_regions(tape, tape.const([0.5, 0.5]), regions)
        np.testing.assert_allclose(out.value, [0.5, 0.5])


class TestRecurrentSteps:
    def test_agent_rnn_matches_plain_lstm_on_concat_input(self):
        model = tiny_model(6)
        rng = np.random.default_rng(6)
        feat = rng.normal(size=8)
        box = random_box(rng)
        tape = Tape()
        state = lstm_zero_state(tape, 8)
        got = agent_rnn_step(tape, model.store, state, feat, box)
        ref = lstm_step(tape, model.store["agent_rnn_W"], model.store["agent_rnn_b"],
                        tape.const(np.concatenate([feat, box.as_array()])), state)
        np.testing.assert_array_equal(got.hidden.value, ref.hidden.value)
        np.testing.assert_array_equal(got.cell.value, ref.cell.value)

    def test_zero_everything_gives_zero_code(self):
        model = zeroed_model(TINY_CONFIG)
        rng = np.random.default_rng(7)
        tape = Tape()
        state = lstm_zero_state(tape, 8)
        out = agent_rnn_step(tape, model.store, state, np.zeros(8), random_box(rng))
        np.testing.assert_allclose(out.hidden.value, 0.0)

    def test_anticipate_zero_head_gives_half(self):
        model = zeroed_model(TINY_CONFIG)
        tape = Tape()
        state = lstm_zero_state(tape, 8)
        _, _, y = anticipate_step(tape, model.store, TINY_CONFIG, state,
                                  tape.const(np.zeros(8)), tape.const(np.ones(8)))
        np.testing.assert_allclose(y.value, [0.5, 0.5])

    def test_y_sums_to_one(self):
        model = tiny_model(8)
        rng = np.random.default_rng(8)
        tape = Tape()
        state = lstm_zero_state(tape, 8)
        for _ in range(20):
            _, _, y = anticipate_step(tape, model.store, TINY_CONFIG, state,
                                      tape.const(rng.normal(size=8)),
                                      tape.const(rng.normal(size=8)))
            assert abs(y.value.sum() - 1.0) <= 1e-12


class TestImagination:
    def test_zero_head_is_identity(self):
        model = zeroed_model(TINY_CONFIG)
        tape = Tape()
        box = tape.const([0.4, 0.6, 0.1, 0.2])
        c, moved = imagine_location(tape, model.store, tape.const(np.zeros(8)), box)
        np.testing.assert_allclose(c.value, 0.0)
        np.testing.assert_allclose(moved.value, box.value)

    def test_zero_head_reassessment_reproduces_observed_scores(self):
        # with a zero transform head the imagined box equals the observed one,
        # so region re-scoring must reproduce the observed scores exactly
        model = tiny_model(9)
        model.store["imagine_head_W"].values[...] = 0.0
        rng = np.random.default_rng(9)
        frames = random_frames(rng, TINY_CONFIG, 3, 4)
        for pred in model.forward_video(frames):
            np.testing.assert_allclose(pred.imagined[0].s, pred.s, atol=1e-12)

    def test_zero_head_reassessment_memoryless_reproduces_y(self):
        # without memory the anticipation is a pure function of q, so an
        # identical imagined box reproduces y as well (with memory the hop
        # advances the branched recurrent state by one step by design)
        cfg = variant_config(TINY_CONFIG, "RAI")
        model = RiskModel.create(cfg, seed=9)
        model.store["imagine_head_W"].values[...] = 0.0
        rng = np.random.default_rng(9)
        frames = random_frames(rng, cfg, 3, 4)
        for pred in model.forward_video(frames):
            np.testing.assert_allclose(pred.imagined[0].y, pred.y, atol=1e-12)
            np.testing.assert_allclose(pred.imagined[0].s, pred.s, atol=1e-12)

    def test_committed_state_untouched_by_imagination(self):
        cfg_on = TINY_CONFIG
        cfg_off = variant_config(TINY_CONFIG, "L-RA")
        model = tiny_model(10)
        rng = np.random.default_rng(10)
        frames = random_frames(rng, cfg_on, 4, 3)
        on = forward_video(model.store, cfg_on, frames, Tape(train=False))
        off = forward_video(model.store, cfg_off, frames, Tape(train=False))
        for a, b in zip(on, off):
            assert np.array_equal(a.y, b.y)
            assert np.array_equal(a.s, b.s)

    def test_two_step_recursion_chains_boxes(self):
        cfg = ModelConfig(d_agent=8, d_region=8, d_u=6, h_agent=8, h_aa=8,
                          horizon=1, imagine_steps=2, lambdas=(0.5, 0.3, 0.2))
        model = RiskModel.create(cfg, seed=11)
        rng = np.random.default_rng(11)
        frames = random_frames(rng, cfg, 2, 3)
        preds = model.forward_video(frames)
        for pred in preds:
            assert len(pred.imagined) == 2
            first, second = pred.imagined
            # second hop starts from the first imagined box
            assert second.box != first.box


class TestFusion:
    def test_single_level_is_identity(self):
        y = np.array([0.3, 0.7])
        s = np.array([0.2, 0.9])
        y_f, s_f = fuse_predictions(y, s, [], [], (1.0,))
        np.testing.assert_array_equal(y_f, y)
        np.testing.assert_array_equal(s_f, s)

    def test_hand_mixture(self):
        y = np.array([0.5, 0.5])
        y_hat = np.array([0.0, 1.0])
        y_f, _ = fuse_predictions(y, np.zeros(1), [y_hat], [np.zeros(1)], (0.6, 0.4))
        assert y_f[1] == pytest.approx(0.7, abs=1e-12)

    def test_convex_combination_stays_a_distribution(self):
        rng = np.random.default_rng(12)
        for _ in range(50):
            a = rng.dirichlet([1, 1])
            b = rng.dirichlet([1, 1])
            y_f, _ = fuse_predictions(a, np.zeros(1), [b], [np.zeros(1)], (0.6, 0.4))
            assert abs(y_f.sum() - 1.0) <= 1e-12
            assert np.all(y_f >= 0.0)

    def test_weight_count_mismatch(self):
        with pytest.raises(ValueError):
            fuse_predictions(np.ones(2), np.ones(1), [], [], (0.6, 0.4))


class TestForwardVideo:
    def test_zero_model_single_frame(self):
        model = zeroed_model(TINY_CONFIG)
        rng = np.random.default_rng(13)
        preds = model.forward_video(random_frames(rng, TINY_CONFIG, 1, 4))
        np.testing.assert_allclose(preds[0].y, [0.5, 0.5])
        np.testing.assert_allclose(preds[0].s, 0.5)

    def test_empty_video_rejected(self):
        with pytest.raises(ValueError):
            tiny_model(0).forward_video([])

    def test_frame_count_preserved(self):
        model = tiny_model(14)
        rng = np.random.default_rng(14)
        assert len(model.forward_video(random_frames(rng, TINY_CONFIG, 5, 3))) == 5

    def test_region_permutation_equivariance(self):
        model = tiny_model(15)
        rng = np.random.default_rng(15)
        frames = random_frames(rng, TINY_CONFIG, 3, 6)
        perm = rng.permutation(6)
        frames_p = [
            FrameInput(f.agent_feat, f.agent_box,
                       RegionSet([f.region_boxes[i] for i in perm],
                                 f.region_feats[perm]))
            for f in frames
        ]
        base = model.forward_video(frames)
        swapped = model.forward_video(frames_p)
        for a, b in zip(base, swapped):
            np.testing.assert_allclose(b.s, a.s[perm], rtol=0, atol=1e-12)
            np.testing.assert_allclose(b.y, a.y, rtol=0, atol=1e-12)
            np.testing.assert_allclose(b.y_fused, a.y_fused, rtol=0, atol=1e-12)

    def test_probability_invariants_random_passes(self):
        rng = np.random.default_rng(16)
        for trial in range(25):
            model = tiny_model(100 + trial)
            frames = random_frames(rng, TINY_CONFIG, 2, 3)
            for pred in model.forward_video(frames):
                assert abs(pred.y.sum() - 1.0) <= 1e-12
                assert abs(pred.y_fused.sum() - 1.0) <= 1e-12
                assert np.all((pred.s > 0.0) & (pred.s < 1.0))

    def test_translation_invariance_with_box_inputs_zeroed(self):
        # dyadic coordinates keep the translation arithmetic exact
        cfg = TINY_CONFIG
        model = tiny_model(17)
        model.store["agent_rnn_W"].values[:, cfg.d_agent:cfg.d_agent + 4] = 0.0
        rng = np.random.default_rng(17)

        def dyadic_box(shift=0.0):
            cx = rng.integers(16, 48) / 64.0 + shift
            cy = rng.integers(16, 48) / 64.0 + shift
            w = rng.integers(4, 16) / 64.0
            h = rng.integers(4, 16) / 64.0
            return Box(cx, cy, w, h)

        state = np.random.default_rng(18)
        frames, moved = [], []
        shift = 0.25
        for _ in range(3):
            agent = dyadic_box()
            boxes = [dyadic_box() for _ in range(4)]
            feats = state.normal(size=(4, cfg.d_region))
            agent_feat = state.normal(size=cfg.d_agent)
            frames.append(FrameInput(agent_feat, agent, RegionSet(boxes, feats)))
            moved.append(FrameInput(
                agent_feat,
                Box(agent.cx + shift, agent.cy + shift, agent.w, agent.h),
                RegionSet([Box(b.cx + shift, b.cy + shift, b.w, b.h) for b in boxes],
                          feats)))
        for a, b in zip(model.forward_video(frames), model.forward_video(moved)):
            assert np.array_equal(a.y, b.y)
            assert np.array_equal(a.s, b.s)


class TestGradients:
    def test_full_model_matches_finite_differences(self):
        from riskrnn.nn import finite_diff_check
        from helpers import gradcheck_fixture
        model = tiny_model(19)
        rng = np.random.default_rng(19)
        frames, targets = gradcheck_fixture(rng, TINY_CONFIG, 3, 4, positive=True)

        def make_loss():
            tape = Tape()
            preds = forward_video(model.store, TINY_CONFIG, frames, tape)
            return tape, total_loss(tape, frames, preds, targets,
                                    TINY_CONFIG.lambdas, TINY_CONFIG.horizon)

        assert finite_diff_check(model.store, make_loss) < 1e-4


class TestSaveLoad:
    def test_roundtrip_preserves_forward(self, tmp_path):
        model = tiny_model(20)
        rng = np.random.default_rng(20)
        frames = random_frames(rng, TINY_CONFIG, 3, 4)
        path = tmp_path / "model.rrm"
        model.save(path)
        loaded = RiskModel.load(path)
        assert loaded.cfg == model.cfg
        for a, b in zip(model.forward_video(frames), loaded.forward_video(frames)):
            assert np.array_equal(a.y, b.y)
            assert np.array_equal(a.s, b.s)
            assert np.array_equal(a.y_fused, b.y_fused)

    def test_variant_roundtrip(self, tmp_path):
        for variant in ("RA", "RAI", "L-RA", "L-RAI"):
            cfg = variant_config(TINY_CONFIG, variant)
            model = RiskModel.create(cfg, seed=21)
            path = tmp_path / f"{variant}.rrm"
            model.save(path)
            assert RiskModel.load(path).cfg.variant == variant
