import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from invariantlab import transforms as tr
from invariantlab.autodiff import DimensionError


def test_environment_code_must_be_finite():
    with pytest.raises(ValueError):
        tr.EnvironmentCode([np.inf])


# -- rotation -----------------------------------------------------------------

def test_rotation_identity_code_is_identity():
    model = tr.rotation_model((0, 1), (0.0, 2 * np.pi))
    x = np.array([0.3, -0.7, 2.0])
    out = tr.apply(model, x, model.identity_code())
    assert np.allclose(out, x, atol=1e-12)


def test_rotation_quarter_turn():
    model = tr.rotation_model((0, 1), (0.0, 2 * np.pi))
    out = tr.apply(model, np.array([1.0, 0.0]),
                   tr.EnvironmentCode([np.pi / 2]))
    assert np.allclose(out, [0.0, 1.0], atol=1e-12)


def test_rotation_half_turn_flips():
    model = tr.rotation_model((0, 1), (0.0, 2 * np.pi))
    out = tr.apply(model, np.array([1.0, 0.0]), tr.EnvironmentCode([np.pi]))
    assert np.allclose(out, [-1.0, 0.0], atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(min_value=0, max_value=2 ** 31 - 1))
def test_rotation_composition_and_norm_preservation(seed):
    rng = np.random.default_rng(seed)
    model = tr.rotation_model((0, 1), (0.0, 2 * np.pi))
    x = rng.standard_normal(3)
    a, b = rng.uniform(0, 2 * np.pi, size=2)
    once = tr.apply(model, tr.apply(model, x, tr.EnvironmentCode([a])),
                    tr.EnvironmentCode([b]))
    combined = tr.apply(model, x, tr.EnvironmentCode([a + b]))
    assert np.allclose(once, combined, atol=1e-12)
    out = tr.apply(model, x, tr.EnvironmentCode([a]))
    assert np.hypot(out[0], out[1]) == pytest.approx(
        np.hypot(x[0], x[1]), abs=1e-12)


def test_rotation_rejects_degenerate_plane_and_bad_dim():
    with pytest.raises(ValueError):
        tr.RotationModel((1, 1))
    model = tr.rotation_model((0, 2), (0.0, 1.0))
    with pytest.raises(DimensionError):
        tr.apply(model, np.array([1.0, 2.0]), tr.EnvironmentCode([0.5]))


def test_degenerate_angle_range_always_identity():
    model = tr.rotation_model((0, 1), (0.0, 0.0))
    rng = np.random.default_rng(0)
    x = np.array([1.0, 2.0])
    assert np.allclose(tr.generate_image(model, x, rng), x)


# -- color resample -----------------------------------------------------------

def test_color_resample_sets_configured_coordinates():
    model = tr.ColorResampleModel(indices=(2,))
    out = tr.apply(model, np.array([0.1, 0.2, 0.0]),
                   tr.EnvironmentCode([1.0]))
    assert np.allclose(out, [0.1, 0.2, 1.0])


def test_color_resample_identity_code_keeps_coordinates():
    model = tr.ColorResampleModel(indices=(1, 2), scale=3.0)
    x = np.array([0.5, 7.0, -2.0])
    assert np.allclose(tr.apply(model, x, model.identity_code()), x)


def test_color_resample_fair_bernoulli_rate():
    # Monte-Carlo oracle: empirical P(bit = 1) within 0.01 of one half
    model = tr.ColorResampleModel(indices=(0, 1))
    codes = model.sample_codes(100_000, np.random.default_rng(0))
    assert abs(codes.mean() - 0.5) <= 0.01


def test_color_resample_onehot_rate_and_structure():
    model = tr.ColorResampleModel(indices=(0, 1), onehot=True)
    codes = model.sample_codes(100_000, np.random.default_rng(1))
    assert np.all(codes.sum(axis=1) == 1.0)
    assert abs(codes[:, 0].mean() - 0.5) <= 0.01


def test_color_resample_checks_indices():
    model = tr.ColorResampleModel(indices=(5,))
    with pytest.raises(DimensionError):
        tr.apply(model, np.zeros(3), tr.EnvironmentCode([1.0]))


# -- brightness / contrast ----------------------------------------------------

def test_brightness_contrast_affine_on_configured_coords():
    model = tr.BrightnessContrastModel(indices=(0, 1))
    x = np.array([1.0, -2.0, 5.0])
    out = tr.apply(model, x, tr.EnvironmentCode([1.5, 0.25]))
    assert np.allclose(out, [1.75, -2.75, 5.0])


def test_brightness_contrast_identity_code():
    model = tr.BrightnessContrastModel(indices=(0,))
    x = np.array([3.0, 4.0])
    assert np.allclose(tr.apply(model, x, model.identity_code()), x)


# -- composite ----------------------------------------------------------------

def test_composite_concatenates_codes_and_applies_in_order():
    model = tr.CompositeModel((
        tr.rotation_model((0, 1), (0.0, 2 * np.pi)),
        tr.BrightnessContrastModel(indices=(0, 1)),
    ))
    assert model.code_dim == 3
    x = np.array([1.0, 0.0])
    code = tr.EnvironmentCode([np.pi / 2, 2.0, 0.5])
    out = tr.apply(model, x, code)
    # quarter turn to (0, 1), then 2*x + 0.5
    assert np.allclose(out, [0.5, 2.5], atol=1e-12)
    assert np.allclose(
        tr.apply(model, x, model.identity_code()), x, atol=1e-12)


# -- sampling helpers ---------------------------------------------------------

def test_apply_checks_code_dimension():
    model = tr.rotation_model((0, 1), (0.0, 1.0))
    with pytest.raises(DimensionError):
        tr.apply(model, np.zeros(2), tr.EnvironmentCode([0.1, 0.2]))


def test_generate_image_reproducible_under_fixed_seed():
    model = tr.rotation_model((0, 1), (0.0, 2 * np.pi))
    x = np.array([1.0, 2.0, 3.0])
    a = tr.generate_image(model, x, np.random.default_rng(42))
    b = tr.generate_image(model, x, np.random.default_rng(42))
    assert np.array_equal(a, b)


def test_generate_batch_uses_fresh_code_per_row():
    model = tr.rotation_model((0, 1), (0.0, 2 * np.pi))
    X = np.tile(np.array([1.0, 0.0]), (50, 1))
    out = tr.generate_batch(model, X, np.random.default_rng(3))
    # identical inputs must land at many distinct angles
    assert len({tuple(np.round(row, 9)) for row in out}) > 40
