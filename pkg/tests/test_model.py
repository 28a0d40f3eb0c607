import numpy as np
import pytest

from conftest import make_demo
from phasekit.basis import decompose, make_basis, reconstruct
from phasekit.errors import InvalidArgument
from phasekit.model import NOISE_FLOOR, TrajectoryModel, fit_model


def _ramp_demos(n=4, T=60, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        p = np.linspace(0, 1, T)
        vals = np.vstack([np.sin(2 * p + rng.normal(0, 0.1)), p * rng.uniform(0.5, 1.5)])
        out.append(make_demo(vals, duration=rng.uniform(5, 9), roles=("observed", "control")))
    return out


def test_thirty_generated_demos_give_thirty_rows(demos_1mm):
    model = fit_model(demos_1mm, make_basis(demos_1mm[0].dims, 11))
    assert model.W.shape == (30, 9 * 11)
    assert model.n_demos == 30


def test_identical_demos_have_no_weight_spread():
    demo = _ramp_demos(1)[0]
    model = fit_model([demo, demo], make_basis(2, 7))
    assert np.all(model.W.var(axis=0) == 0.0)


def test_phase_velocity_is_reciprocal_duration():
    a = make_demo(np.linspace(0, 1, 11)[None], duration=10.0)
    b = make_demo(np.linspace(0, 2, 21)[None], duration=20.0)
    model = fit_model([a, b], make_basis(1, 4))
    assert np.allclose(model.phase_velocities, [0.1, 0.05])
    assert model.phase_vel_mean == pytest.approx(0.075)
    assert model.phase_vel_var == pytest.approx(0.025**2)


def test_rows_reconstruct_each_demo_with_recorded_residual():
    demos = _ramp_demos()
    lib = make_basis(2, 8)
    model = fit_model(demos, lib)
    for i, d in enumerate(demos):
        rec = reconstruct(model.W[i], lib, d.phases())
        assert np.allclose(np.sqrt(np.mean((rec - d.values) ** 2, axis=1)), model.rmse[i], rtol=1e-10)
        assert np.array_equal(model.W[i], decompose(d, lib).w)


def test_noise_is_pooled_residual_variance():
    demos = _ramp_demos()
    model = fit_model(demos, make_basis(2, 5))
    T = np.array([d.length for d in demos])
    expected = (model.rmse**2 * T[:, None]).sum(axis=0) / T.sum()
    assert np.allclose(model.r_diag, np.maximum(expected, NOISE_FLOOR))


def test_noise_floor_for_perfect_fits():
    demos = [make_demo(np.zeros((1, 40)), duration=2.0), make_demo(np.zeros((1, 40)), duration=3.0)]
    model = fit_model(demos, make_basis(1, 5))
    assert model.r_diag[0] == NOISE_FLOOR


def test_masked_channels_are_carried_but_unusable():
    demos = [d.with_masked(("c1",)) for d in _ramp_demos()]
    model = fit_model(demos, make_basis(2, 5))
    assert model.usable.tolist() == [True, False]
    assert model.r_diag[1] == NOISE_FLOOR
    assert np.all(model.W[:, 5:] == 0.0)


def test_needs_two_demos_with_one_layout():
    demos = _ramp_demos()
    with pytest.raises(InvalidArgument):
        fit_model(demos[:1], make_basis(2, 5))
    other = make_demo(demos[1].values, roles=("observed", "observed"))
    with pytest.raises(InvalidArgument):
        fit_model([demos[0], other], make_basis(2, 5))


def test_serialization_is_deterministic_and_lossless(tmp_path, demos_1mm):
    lib = make_basis(demos_1mm[0].dims, 11)
    a = fit_model(demos_1mm[:5], lib)
    b = fit_model(demos_1mm[:5], lib)
    a.save(tmp_path / "a.json")
    b.save(tmp_path / "b.json")
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    back = TrajectoryModel.load(tmp_path / "a.json")
    assert np.array_equal(back.W, a.W) and np.array_equal(back.r_diag, a.r_diag)
    assert back.labels == a.labels and back.roles == a.roles
    assert list(a.to_dict())[0] == "format_version"


def test_unknown_format_version_is_rejected(demos_1mm):
    d = fit_model(demos_1mm[:3], make_basis(demos_1mm[0].dims, 5)).to_dict()
    d["format_version"] = 99
    with pytest.raises(InvalidArgument):
        TrajectoryModel.from_dict(d)
