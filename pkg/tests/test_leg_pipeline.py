import numpy as np
import pytest

from LegFusion.modules.errors import InsufficientCoverage, NoSamples
from LegFusion.modules.leg_pipeline import LegIncrement, LegOdomSample, assemble_leg_bundle, integrate_leg
from LegFusion.modules.manifold import DIM_STATE, NominalState, Rotation, boxplus, exp_so3, log_so3

from .conftest import random_state


def samples_at(times, v=(1.0, 0.0, 0.0), omega_z=None) -> list[LegOdomSample]:
    return [LegOdomSample(float(t), v, omega_z) for t in times]


# integration

def test_constant_velocity_window():
    inc = integrate_leg(samples_at(np.linspace(0.0, 0.1, 21)), 0.0, 0.1)
    np.testing.assert_allclose(inc.dp_body, [0.1, 0.0, 0.0], atol=1e-12)
    assert inc.valid_fraction == 1.0
    assert inc.n_samples == 21
    assert not inc.extrapolated
    assert inc.dyaw is None

def test_samples_outside_window_are_ignored():
    samples = samples_at([-0.03, -0.01, *np.linspace(0.0, 0.1, 21), 0.12, 0.14])
    inc = integrate_leg(samples, 0.0, 0.1)
    assert inc.n_samples == 21
    np.testing.assert_allclose(inc.dp_body, [0.1, 0.0, 0.0], atol=1e-12)

def test_empty_window():
    with pytest.raises(NoSamples):
        integrate_leg(samples_at([0.5, 0.6]), 0.0, 0.1)
    with pytest.raises(ValueError):
        integrate_leg(samples_at([0.0]), 0.1, 0.1)

def test_every_other_sample_dropped():
    times = np.arange(0.0, 1.0 + 1e-9, 0.01)
    samples = [LegOdomSample(t, (1.0 + 0.5 * np.sin(2 * np.pi * t), 0.0, 0.0)) for t in times]
    inc = integrate_leg(samples, 0.0, 1.0)
    assert inc.dp_body[0] == pytest.approx(1.0, rel=0.02)
    assert inc.valid_fraction == pytest.approx(0.5, abs=0.01)

def test_long_gap_is_rescaled_by_mean_velocity():
    times = np.concatenate([np.arange(0.0, 0.3 + 1e-9, 0.005), np.arange(0.7, 1.0 + 1e-9, 0.005)])
    inc = integrate_leg(samples_at(times), 0.0, 1.0)
    np.testing.assert_allclose(inc.dp_body, [1.0, 0.0, 0.0], atol=1e-9)
    assert inc.valid_fraction == pytest.approx(122 * 0.005)

def test_fill_velocity_extrapolates():
    inc = integrate_leg(samples_at(np.linspace(0.0, 0.05, 11)), 0.0, 0.1, fill_velocity=np.array([2.0, 0.0, 0.0]))
    np.testing.assert_allclose(inc.dp_body, [0.15, 0.0, 0.0], atol=1e-12)
    assert inc.extrapolated
    empty = integrate_leg([], 0.0, 0.1, fill_velocity=np.array([0.5, 0.0, 0.0]))
    np.testing.assert_allclose(empty.dp_body, [0.05, 0.0, 0.0], atol=1e-15)
    assert empty.valid_fraction == 0.0
    assert empty.extrapolated

def test_yaw_increment():
    inc = integrate_leg(samples_at(np.linspace(0.0, 0.1, 21), omega_z=0.5), 0.0, 0.1)
    assert inc.dyaw == pytest.approx(0.05, abs=1e-12)
    mixed = samples_at(np.linspace(0.0, 0.1, 21), omega_z=0.5)
    mixed[3] = LegOdomSample(mixed[3].t, mixed[3].v_body)
    assert integrate_leg(mixed, 0.0, 0.1).dyaw is None

def test_increment_validation():
    with pytest.raises(ValueError):
        LegIncrement(0.0, np.zeros(3), 1.0)
    with pytest.raises(ValueError):
        LegIncrement(0.1, np.zeros(3), 1.5)


# measurement

def test_consistent_pair_has_zero_residual():
    inc = LegIncrement(0.1, [0.1, 0.0, 0.0], 1.0)
    bundle = assemble_leg_bundle(inc, NominalState(t=0.0), NominalState(p=[0.1, 0.0, 0.0], t=0.1), 0.05)
    assert bundle.size == 3
    np.testing.assert_allclose(bundle.r, 0.0, atol=1e-15)

def test_overestimated_translation():
    inc = LegIncrement(0.1, [0.1, 0.0, 0.0], 1.0)
    bundle = assemble_leg_bundle(inc, NominalState(t=0.0), NominalState(p=[0.15, 0.0, 0.0], t=0.1), 0.05)
    np.testing.assert_allclose(bundle.r, [-0.05, 0.0, 0.0], atol=1e-15)

def test_increment_is_in_previous_body_frame():
    prev = NominalState(R=Rotation.from_yaw(0.5 * np.pi), p=[1.0, 1.0, 0.0], t=0.0)
    state = NominalState(R=Rotation.from_yaw(0.5 * np.pi), p=[1.0, 2.0, 0.0], t=0.1)
    bundle = assemble_leg_bundle(LegIncrement(0.1, [1.0, 0.0, 0.0], 1.0), prev, state, 0.05)
    np.testing.assert_allclose(bundle.r, 0.0, atol=1e-12)

def test_noise_scales_with_duration_and_coverage():
    prev, state = NominalState(t=0.0), NominalState(t=0.1)
    full = assemble_leg_bundle(LegIncrement(0.1, np.zeros(3), 1.0), prev, state, 0.05)
    half = assemble_leg_bundle(LegIncrement(0.1, np.zeros(3), 0.5), prev, state, 0.05)
    np.testing.assert_allclose(full.Rn, 0.05**2 * 0.1 * np.eye(3), rtol=1e-12)
    np.testing.assert_allclose(half.Rn, 2 * full.Rn, rtol=1e-12)

def test_coverage_gating():
    prev, state = NominalState(t=0.0), NominalState(t=0.1)
    inc = LegIncrement(0.1, np.zeros(3), 0.3)
    with pytest.raises(InsufficientCoverage):
        assemble_leg_bundle(inc, prev, state, 0.05)
    ungated = assemble_leg_bundle(inc, prev, state, 0.05, coverage_gating=False)
    np.testing.assert_allclose(ungated.Rn, 0.05**2 * 0.1 * np.eye(3), rtol=1e-12)

def test_anchor_must_be_older():
    with pytest.raises(ValueError):
        assemble_leg_bundle(LegIncrement(0.1, np.zeros(3), 1.0), NominalState(t=0.1), NominalState(t=0.1), 0.05)

def test_jacobian_matches_finite_differences(rng):
    prev = random_state(rng, t=0.0)
    state = random_state(rng, t=0.1).replace(R=prev.R * exp_so3(0.3 * rng.standard_normal(3)))
    phi = log_so3(prev.R.inverse() * state.R)
    inc = LegIncrement(0.1, rng.standard_normal(3), 1.0, dyaw=phi[2] + 0.2)
    kwargs = dict(sigma_leg=0.05, use_yaw_rate=True)
    bundle = assemble_leg_bundle(inc, prev, state, **kwargs)
    assert bundle.size == 4
    eps = 1e-7
    H_fd = np.zeros_like(bundle.H)
    for j in range(DIM_STATE):
        dx = np.zeros(DIM_STATE)
        dx[j] = eps
        moved = assemble_leg_bundle(inc, prev, boxplus(state, dx), **kwargs)
        H_fd[:, j] = (bundle.r - moved.r) / eps
    np.testing.assert_allclose(H_fd, bundle.H, atol=1e-6)

def test_translation_invariance(rng):
    prev = random_state(rng, t=0.0)
    state = random_state(rng, t=0.1)
    inc = LegIncrement(0.1, rng.standard_normal(3), 1.0)
    shift = np.array([100.0, -50.0, 3.0])
    a = assemble_leg_bundle(inc, prev, state, 0.05)
    b = assemble_leg_bundle(inc, prev.replace(p=prev.p + shift), state.replace(p=state.p + shift), 0.05)
    np.testing.assert_allclose(a.r, b.r, atol=1e-12)
    np.testing.assert_array_equal(a.H, b.H)

def test_yaw_row_residual():
    inc = LegIncrement(0.1, np.zeros(3), 1.0, dyaw=0.05)
    prev = NominalState(t=0.0)
    state = NominalState(R=Rotation.from_yaw(0.05), t=0.1)
    bundle = assemble_leg_bundle(inc, prev, state, 0.05, use_yaw_rate=True, sigma_leg_yaw=0.1)
    assert bundle.size == 4
    assert bundle.r[3] == pytest.approx(0.0, abs=1e-12)
    assert bundle.Rn[3, 3] == pytest.approx(0.1**2 * 0.1)
    # without a yaw increment the row is left out
    no_yaw = assemble_leg_bundle(LegIncrement(0.1, np.zeros(3), 1.0), prev, state, 0.05, use_yaw_rate=True)
    assert no_yaw.size == 3
