"""Scene tensor layout, normalization round trips, masks, and imputation."""
import numpy as np
from hypothesis import given, settings, strategies as st

from trafficdiff import scene_tensor as stz
from trafficdiff.scene_tensor import (
    AGENT_TYPES,
    CH_COS,
    CH_SIN,
    CH_X,
    CH_Y,
    CH_Z,
    NUM_FEATURES,
    FeatureNormalizer,
    InpaintingSpec,
    RawScene,
    SceneTensor,
    denormalize_scene,
    normalize_scene,
)


def _random_raw(rng, A=3, T=7):
    heading = rng.uniform(-np.pi, np.pi, (A, T))
    return RawScene(
        x=rng.uniform(-100, 100, (A, T)),
        y=rng.uniform(-100, 100, (A, T)),
        z=rng.uniform(-2, 2, (A, T)),
        heading=heading,
        length=rng.uniform(0.5, 12, (A, T)),
        width=rng.uniform(0.3, 3, (A, T)),
        height=rng.uniform(0.5, 4, (A, T)),
        type_idx=rng.integers(0, len(AGENT_TYPES), A),
    )


def test_channel_layout_constants():
    assert NUM_FEATURES == 12
    assert (CH_X, CH_Y, CH_Z, CH_COS, CH_SIN) == (0, 1, 2, 3, 4)
    assert stz.CH_TYPE == slice(8, 12)
    assert AGENT_TYPES == ("av", "car", "pedestrian", "cyclist")


def test_position_normalization_scale():
    # 80 meters encodes to exactly 1.0
    raw = _random_raw(np.random.default_rng(0), A=1, T=1)
    raw.x[:] = 80.0
    raw.y[:] = -40.0
    scene = normalize_scene(raw, history_len=0)
    np.testing.assert_allclose(scene.values[0, 0, CH_X], 1.0, atol=1e-12)
    np.testing.assert_allclose(scene.values[0, 0, CH_Y], -0.5, atol=1e-12)


def test_size_normalization_stats():
    # a 4.5 m long, 2.0 m wide, 1.75 m tall car encodes to zeros
    raw = _random_raw(np.random.default_rng(0), A=1, T=1)
    raw.length[:] = 4.5
    raw.width[:] = 2.0
    raw.height[:] = 1.75
    scene = normalize_scene(raw, history_len=0)
    np.testing.assert_allclose(scene.values[0, 0, 5:8], 0.0, atol=1e-12)
    # one standard deviation above the mean lands at +0.5
    raw.length[:] = 4.5 + 2.5
    scene = normalize_scene(raw, history_len=0)
    np.testing.assert_allclose(scene.values[0, 0, 5], 0.5, atol=1e-12)


def test_heading_becomes_unit_vector():
    raw = _random_raw(np.random.default_rng(1), A=2, T=5)
    scene = normalize_scene(raw, history_len=2)
    np.testing.assert_allclose(scene.values[..., CH_COS], np.cos(raw.heading), atol=1e-12)
    np.testing.assert_allclose(scene.values[..., CH_SIN], np.sin(raw.heading), atol=1e-12)


def test_type_onehot_encoding():
    raw = _random_raw(np.random.default_rng(2), A=4, T=3)
    raw.type_idx[:] = [0, 1, 2, 3]
    scene = normalize_scene(raw, history_len=1)
    onehot = (scene.values[:, 0, stz.CH_TYPE] * 1.0 + 0.5)  # invert (f-.5)/(2*.5)
    np.testing.assert_allclose(onehot, np.eye(4), atol=1e-12)


def test_round_trip_encode_decode():
    rng = np.random.default_rng(3)
    raw = _random_raw(rng)
    scene = normalize_scene(raw, history_len=2)
    back = denormalize_scene(scene)
    np.testing.assert_allclose(back.x, raw.x, atol=1e-9)
    np.testing.assert_allclose(back.y, raw.y, atol=1e-9)
    np.testing.assert_allclose(back.z, raw.z, atol=1e-9)
    np.testing.assert_allclose(
        np.mod(back.heading - raw.heading + np.pi, 2 * np.pi) - np.pi, 0.0, atol=1e-9
    )
    np.testing.assert_allclose(back.length, raw.length, atol=1e-9)
    np.testing.assert_allclose(back.width, raw.width, atol=1e-9)
    np.testing.assert_allclose(back.height, raw.height, atol=1e-9)
    assert np.array_equal(back.type_idx, raw.type_idx)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), hist=st.integers(0, 6))
def test_round_trip_property(seed, hist):
    raw = _random_raw(np.random.default_rng(seed), A=2, T=6)
    back = denormalize_scene(normalize_scene(raw, history_len=hist))
    np.testing.assert_allclose(back.x, raw.x, atol=1e-9)
    np.testing.assert_allclose(back.length, raw.length, atol=1e-9)


def test_scene_tensor_indices():
    values = np.zeros((2, 10, NUM_FEATURES))
    scene = SceneTensor(values, history_len=3)
    assert scene.num_agents == 2
    assert scene.num_steps == 10
    assert scene.future_len == 7
    # array index i maps to relative step tau = i - H
    assert scene.step_index(0) == 3  # tau=0 is the current step
    assert scene.step_index(-3) == 0
    assert scene.step_index(6) == 9


def test_bp_mask_shape_and_content():
    m = stz.make_bp_mask(3, 10)
    assert m.shape == (1, 10, 1)
    assert m[0, :3, 0].all() and not m[0, 3:, 0].any()


def test_scenegen_mask_subsets_valid_agents():
    rng = np.random.default_rng(5)
    validity = np.ones((6, 4), dtype=bool)
    validity[4:] = False  # agents 4,5 invalid
    seen_sizes = set()
    for _ in range(50):
        m = stz.sample_scenegen_mask(validity, rng)
        assert m.shape == (6, 1, 1)
        assert not m[4:].any()  # invalid agents never become context
        seen_sizes.add(int(m.sum()))
    assert seen_sizes == {0, 1, 2, 3, 4}  # uniform over subset sizes hits all


def test_control_mask_outer_product():
    rng = np.random.default_rng(6)
    m = stz.sample_control_mask((5, 7, 4), rng, p_agent=1.0, p_time=1.0, p_feature=1.0)
    assert m.all()
    m = stz.sample_control_mask((5, 7, 4), rng, p_agent=0.0)
    assert not m.any()
    # outer-product structure: the mask is rank one along each axis
    m = stz.sample_control_mask((8, 9, 6), rng, p_agent=0.5, p_time=0.5, p_feature=0.5)
    if m.any():
        rows = m.any(axis=(1, 2))
        cols = m.any(axis=(0, 2))
        feats = m.any(axis=(0, 1))
        np.testing.assert_array_equal(
            m, rows[:, None, None] & cols[None, :, None] & feats[None, None, :]
        )


def test_inpainting_apply_and_merge():
    rng = np.random.default_rng(7)
    shape = (2, 4, NUM_FEATURES)
    x = rng.standard_normal(shape)
    a = InpaintingSpec.empty(shape)
    assert np.array_equal(stz.apply_inpainting(x, a), x)

    mask1 = np.zeros(shape, bool); mask1[0, :2] = True
    mask2 = np.zeros(shape, bool); mask2[0, 1:3] = True
    s1 = InpaintingSpec(mask1, np.full(shape, 1.0))
    s2 = InpaintingSpec(mask2, np.full(shape, 2.0))
    merged = s1.merge(s2)
    assert np.array_equal(merged.mask, mask1 | mask2)
    out = stz.apply_inpainting(x, merged)
    np.testing.assert_array_equal(out[0, 0], np.ones(NUM_FEATURES))
    np.testing.assert_array_equal(out[0, 1], np.full(NUM_FEATURES, 2.0))  # later spec wins
    np.testing.assert_array_equal(out[0, 2], np.full(NUM_FEATURES, 2.0))
    np.testing.assert_array_equal(out[1], x[1])


def test_impute_interior_gap_linear():
    T = 6
    values = np.zeros((1, T, NUM_FEATURES))
    validity = np.array([[True, True, False, False, True, True]])
    values[0, :, CH_X] = [0.0, 1.0, 99.0, 99.0, 4.0, 5.0]
    out = stz.impute_invalid_steps(values, validity)
    np.testing.assert_allclose(out[0, :, CH_X], [0, 1, 2, 3, 4, 5], atol=1e-12)
    # valid entries never change
    np.testing.assert_array_equal(out[0, [0, 1, 4, 5]], values[0, [0, 1, 4, 5]])


def test_impute_edge_extrapolation():
    values = np.zeros((1, 5, NUM_FEATURES))
    validity = np.array([[False, True, True, False, False]])
    values[0, :, CH_Y] = [99.0, 10.0, 12.0, 99.0, 99.0]
    out = stz.impute_invalid_steps(values, validity)
    np.testing.assert_allclose(out[0, :, CH_Y], [8.0, 10.0, 12.0, 14.0, 16.0], atol=1e-12)


def test_impute_single_valid_is_constant():
    values = np.zeros((1, 4, NUM_FEATURES))
    validity = np.array([[False, False, True, False]])
    values[0, 2, CH_Z] = 7.0
    out = stz.impute_invalid_steps(values, validity)
    np.testing.assert_allclose(out[0, :, CH_Z], 7.0, atol=1e-12)


def test_impute_no_valid_untouched():
    values = np.full((1, 3, NUM_FEATURES), 5.0)
    validity = np.zeros((1, 3), dtype=bool)
    out = stz.impute_invalid_steps(values, validity)
    np.testing.assert_array_equal(out, values)


def test_encode_feature_map():
    norm = FeatureNormalizer()
    np.testing.assert_allclose(norm.encode_feature("x", 12.0), 0.15, atol=1e-12)
    np.testing.assert_allclose(norm.encode_feature("length", 7.0), 0.5, atol=1e-12)
    np.testing.assert_allclose(norm.encode_feature("width", 2.8), 0.5, atol=1e-12)
    np.testing.assert_allclose(norm.encode_feature("height", 2.35), 0.5, atol=1e-12)
