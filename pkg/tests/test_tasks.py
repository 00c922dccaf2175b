"""Task entry point checks: perturbation endpoints and grids, the constraint
compiler's slot/step/field validation, and end-to-end pin satisfaction."""
import numpy as np
import pytest

from trafficdiff.constraints import CollisionClip, OnroadClip, RangeClip
from trafficdiff.denoiser import (
    MixtureScenePrior,
    OracleDenoiser,
    StubDenoiser,
)
from trafficdiff.diffusion import uniform_times
from trafficdiff.rollout import RolloutConfig, run_conditional_chain
from trafficdiff.scene_tensor import (
    AGENT_TYPES,
    CH_COS,
    CH_SIN,
    CH_TYPE,
    CH_X,
    CH_Y,
    CH_Z,
    FeatureNormalizer,
    InpaintingSpec,
    SceneTensor,
    TYPE_STATS,
)
from trafficdiff.tasks import (
    compile_constraint_config,
    run_log_perturbation,
    run_scenegen,
)
from trafficdiff.world import WorldConfig, build_world

A, H, F = 2, 3, 6
T = H + F
D = 12


def _scene(seed=0):
    rng = np.random.default_rng(seed)
    return SceneTensor(rng.normal(0.0, 0.3, size=(A, T, D)), H), np.ones(
        (A, T), dtype=bool
    )


def _oracle():
    means = np.stack([np.full((A, T, D), -0.3), np.full((A, T, D), 0.3)])
    return OracleDenoiser(
        MixtureScenePrior(np.array([0.5, 0.5]), means, np.full((2, A, T, D), 0.04))
    )


class TestLogPerturbation:
    def test_zero_level_returns_log_bitwise(self):
        scene, validity = _scene(1)
        den = _oracle()
        res = run_log_perturbation(scene, validity, 0.0, den,
                                   RolloutConfig(denoise_steps=4),
                                   np.random.default_rng(2))
        assert res.nfe == 0
        assert den.nfe == 0
        assert res.noise_levels == {"t_star": 0.0}
        np.testing.assert_array_equal(res.scene.values, scene.values)

    def test_partial_level_resumes_grid_below(self):
        scene, validity = _scene(3)
        den = _oracle()
        res = run_log_perturbation(scene, validity, 0.6, den,
                                   RolloutConfig(denoise_steps=4),
                                   np.random.default_rng(4))
        # grid 1, .75, .5, .25, 0 -> resume at .6 then [.5, .25, 0]
        np.testing.assert_allclose(res.noise_levels["grid"], [0.6, 0.5, 0.25, 0.0])
        assert res.nfe == 3
        assert res.noise_levels["t_star"] == 0.6
        np.testing.assert_array_equal(res.scene.values[:, :H], scene.values[:, :H])
        assert not np.array_equal(res.scene.values[:, H:], scene.values[:, H:])

    def test_grid_node_level_not_duplicated(self):
        scene, validity = _scene(3)
        res = run_log_perturbation(scene, validity, 0.75, _oracle(),
                                   RolloutConfig(denoise_steps=4),
                                   np.random.default_rng(4))
        np.testing.assert_allclose(res.noise_levels["grid"], [0.75, 0.5, 0.25, 0.0])

    def test_full_level_runs_whole_chain(self):
        scene, validity = _scene(3)
        res = run_log_perturbation(scene, validity, 1.0, _oracle(),
                                   RolloutConfig(denoise_steps=4),
                                   np.random.default_rng(5))
        np.testing.assert_allclose(res.noise_levels["grid"], uniform_times(4))
        assert res.nfe == 4

    def test_tiny_level_still_reaches_zero(self):
        scene, validity = _scene(3)
        res = run_log_perturbation(scene, validity, 0.05, _oracle(),
                                   RolloutConfig(denoise_steps=4),
                                   np.random.default_rng(6))
        assert res.noise_levels["grid"] == [0.05, 0.0]
        assert res.nfe == 1

    def test_out_of_range_level_rejected(self):
        scene, validity = _scene(3)
        with pytest.raises(AssertionError):
            run_log_perturbation(scene, validity, 1.5, _oracle(),
                                 RolloutConfig(), np.random.default_rng(7))


class TestScenegen:
    def test_batch_is_reproducible_and_diverse(self):
        inpaint = InpaintingSpec(np.zeros((A, T, D), bool), np.zeros((A, T, D)))
        cfg = RolloutConfig(denoise_steps=3)
        runs_a = run_scenegen((A, T, D), H, inpaint, np.ones((A, T), bool),
                              _oracle(), cfg, np.random.default_rng(11),
                              num_samples=3)
        runs_b = run_scenegen((A, T, D), H, inpaint, np.ones((A, T), bool),
                              _oracle(), cfg, np.random.default_rng(11),
                              num_samples=3)
        assert len(runs_a) == 3
        for ra, rb in zip(runs_a, runs_b):
            assert ra.nfe == 3
            np.testing.assert_array_equal(ra.scene.values, rb.scene.values)
        assert not np.array_equal(runs_a[0].scene.values, runs_a[1].scene.values)


class TestCompilerAgents:
    def _validity(self, free=(1,)):
        v = np.ones((A, T), dtype=bool)
        for a in free:
            v[a] = False
        return v

    def test_claims_lowest_free_slot(self):
        cc = compile_constraint_config(
            'agent { type: "car" }', (A, T, D), H, self._validity(free=(1,))
        )
        assert cc.injected_agents == (1,)
        assert cc.validity[1].all()

    def test_no_free_slot_raises(self):
        with pytest.raises(ValueError, match="free agent slot"):
            compile_constraint_config(
                'agent { type: "car" }', (A, T, D), H, np.ones((A, T), bool)
            )

    def test_two_agents_two_slots(self):
        v = np.zeros((A, T), dtype=bool)
        cc = compile_constraint_config(
            'agent { type: "car" } agent { type: "cyclist" }', (A, T, D), H, v
        )
        assert cc.injected_agents == (0, 1)

    def test_type_pin_values(self):
        cc = compile_constraint_config(
            'agent { type: "pedestrian" }', (A, T, D), H, self._validity()
        )
        slot = cc.injected_agents[0]
        onehot = np.zeros(len(AGENT_TYPES))
        onehot[AGENT_TYPES.index("pedestrian")] = 1.0
        mu, sigma = TYPE_STATS
        want = (onehot - mu) / (2.0 * sigma)
        assert cc.inpaint.mask[slot, :, CH_TYPE].all()
        np.testing.assert_array_equal(
            cc.inpaint.values[slot, 0, CH_TYPE], want
        )

    def test_unknown_type_raises(self):
        with pytest.raises(ValueError, match="unknown agent type"):
            compile_constraint_config(
                'agent { type: "horse" }', (A, T, D), H, self._validity()
            )

    def test_empty_agent_block_raises(self):
        with pytest.raises(ValueError, match="declares nothing"):
            compile_constraint_config("agent { }", (A, T, D), H, self._validity())


class TestCompilerControlPoints:
    _validity = staticmethod(lambda: np.pad(
        np.ones((1, T), dtype=bool), ((0, 1), (0, 0))
    ).astype(bool))

    def test_pins_encoded_features(self):
        text = 'agent { control_point { time_step: 2 x: 12.0 y: -4.0 heading: 1.5707963267948966 } }'
        cc = compile_constraint_config(text, (A, T, D), H, self._validity())
        slot = cc.injected_agents[0]
        row = H + 2
        norm = FeatureNormalizer()
        assert cc.inpaint.values[slot, row, CH_X] == norm.encode_feature("x", 12.0)
        assert cc.inpaint.values[slot, row, CH_Y] == norm.encode_feature("y", -4.0)
        assert cc.inpaint.values[slot, row, CH_COS] == pytest.approx(0.0, abs=1e-12)
        assert cc.inpaint.values[slot, row, CH_SIN] == pytest.approx(1.0)
        assert cc.inpaint.mask[slot, row, [CH_X, CH_Y, CH_COS, CH_SIN]].all()
        # only the listed step is pinned for position features
        assert cc.inpaint.mask[slot, :, CH_X].sum() == 1

    def test_negative_step_lands_in_history(self):
        text = f'agent {{ control_point {{ time_step: {-H} x: 1.0 }} }}'
        cc = compile_constraint_config(text, (A, T, D), H, self._validity())
        assert cc.inpaint.mask[cc.injected_agents[0], 0, CH_X]

    def test_step_bounds_enforced(self):
        for tau in (-H - 1, T - H):
            text = f'agent {{ control_point {{ time_step: {tau} x: 1.0 }} }}'
            with pytest.raises(ValueError, match="outside"):
                compile_constraint_config(text, (A, T, D), H, self._validity())

    def test_duplicate_steps_rejected(self):
        text = ('agent { control_point { time_step: 1 x: 1.0 } '
                'control_point { time_step: 1 y: 2.0 } }')
        with pytest.raises(ValueError, match="duplicate"):
            compile_constraint_config(text, (A, T, D), H, self._validity())

    def test_missing_time_step_rejected(self):
        with pytest.raises(ValueError, match="time_step"):
            compile_constraint_config(
                "agent { control_point { x: 1.0 } }", (A, T, D), H, self._validity()
            )

    def test_unknown_field_rejected(self):
        with pytest.raises(ValueError, match="unknown control_point field"):
            compile_constraint_config(
                "agent { control_point { time_step: 0 speed: 3.0 } }",
                (A, T, D), H, self._validity(),
            )


class TestCompilerHardConstraints:
    _validity = staticmethod(lambda: np.ones((A, T), dtype=bool))

    def test_non_collision(self):
        cc = compile_constraint_config(
            "hard_constraint { kind: NON_COLLISION }", (A, T, D), H, self._validity()
        )
        assert len(cc.clips) == 1
        assert isinstance(cc.clips[0], CollisionClip)
        assert cc.injected_agents == ()

    def test_onroad_needs_roadgraph(self):
        text = "hard_constraint { kind: ONROAD }"
        with pytest.raises(ValueError, match="roadgraph"):
            compile_constraint_config(text, (A, T, D), H, self._validity())
        road = build_world(WorldConfig())
        cc = compile_constraint_config(text, (A, T, D), H, self._validity(),
                                       roadgraph=road)
        assert isinstance(cc.clips[0], OnroadClip)
        assert cc.clips[0].polygons == tuple(road.boundaries)

    def test_range_normalizes_bounds(self):
        cc = compile_constraint_config(
            'hard_constraint { kind: RANGE feature: "z" min: 0.0 max: 2.0 }',
            (A, T, D), H, self._validity(),
        )
        clip = cc.clips[0]
        assert isinstance(clip, RangeClip)
        assert clip.channel == CH_Z
        norm = FeatureNormalizer()
        assert clip.lo == norm.encode_feature("z", 0.0)
        assert clip.hi == norm.encode_feature("z", 2.0)

    def test_range_validation(self):
        with pytest.raises(ValueError, match="RANGE feature"):
            compile_constraint_config(
                'hard_constraint { kind: RANGE feature: "speed" min: 0 max: 1 }',
                (A, T, D), H, self._validity(),
            )
        with pytest.raises(ValueError, match="min and max"):
            compile_constraint_config(
                'hard_constraint { kind: RANGE feature: "z" min: 0.0 }',
                (A, T, D), H, self._validity(),
            )

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError, match="unknown hard_constraint kind"):
            compile_constraint_config(
                "hard_constraint { kind: TELEPORT }", (A, T, D), H, self._validity()
            )


class TestCompiledRoundTrip:
    def test_to_text_recompiles_identically(self):
        text = ('agent { type: "car" control_point { time_step: 1 x: 8.0 } }\n'
                "hard_constraint { kind: NON_COLLISION }\n")
        validity = np.zeros((A, T), dtype=bool)
        cc1 = compile_constraint_config(text, (A, T, D), H, validity)
        cc2 = compile_constraint_config(cc1.to_text(), (A, T, D), H, validity)
        np.testing.assert_array_equal(cc1.inpaint.mask, cc2.inpaint.mask)
        np.testing.assert_array_equal(cc1.inpaint.values, cc2.inpaint.values)
        assert cc1.injected_agents == cc2.injected_agents
        assert len(cc1.clips) == len(cc2.clips)


class TestEndToEnd:
    def test_control_points_exact_in_generated_scene(self):
        text = ('agent { type: "car" '
                "control_point { time_step: 0 x: 10.0 y: 2.0 } "
                "control_point { time_step: 4 x: 16.0 } }")
        validity = np.zeros((A, T), dtype=bool)
        validity[0] = True
        cc = compile_constraint_config(text, (A, T, D), H, validity)
        slot = cc.injected_agents[0]
        res = run_conditional_chain(
            (A, T, D), H, cc.inpaint, cc.validity, StubDenoiser(),
            RolloutConfig(denoise_steps=3, clips=cc.clips),
            np.random.default_rng(31),
        )
        norm = FeatureNormalizer()
        assert res.scene.values[slot, H, CH_X] == norm.encode_feature("x", 10.0)
        assert res.scene.values[slot, H, CH_Y] == norm.encode_feature("y", 2.0)
        assert res.scene.values[slot, H + 4, CH_X] == norm.encode_feature("x", 16.0)

    def test_range_clip_holds_on_output(self):
        text = 'hard_constraint { kind: RANGE feature: "z" min: 0.0 max: 1.0 }'
        validity = np.ones((A, T), dtype=bool)
        cc = compile_constraint_config(text, (A, T, D), H, validity)
        res = run_conditional_chain(
            (A, T, D), H, InpaintingSpec(np.zeros((A, T, D), bool), np.zeros((A, T, D))),
            validity, _oracle(),
            RolloutConfig(denoise_steps=3, clips=cc.clips),
            np.random.default_rng(32),
        )
        norm = FeatureNormalizer()
        z_vals = res.scene.values[:, :, CH_Z]
        assert np.all(z_vals >= norm.encode_feature("z", 0.0) - 1e-12)
        assert np.all(z_vals <= norm.encode_feature("z", 1.0) + 1e-12)
