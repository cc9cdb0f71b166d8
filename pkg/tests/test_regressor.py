import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from poseadapt import autodiff as ad
from poseadapt import regressor as rg

from oracles import central_diff, max_rel_err, mlp_reference


def test_param_count_matches_layout(tiny_spec):
    dims = tiny_spec.layer_dims
    expected = sum((dims[i] + 1) * dims[i + 1] for i in range(len(dims) - 1))
    assert tiny_spec.param_count == expected
    assert tiny_spec.output_dim == 4 * tiny_spec.n_joints + 2


def test_init_deterministic_per_seed(tiny_spec):
    a = rg.init_weights(tiny_spec, 5)
    c = rg.init_weights(tiny_spec, 5)
    d = rg.init_weights(tiny_spec, 6)
    assert np.array_equal(a.values, c.values)
    assert not np.array_equal(a.values, d.values)


def test_forward_finite_after_init(tiny_spec, tiny_weights):
    out = rg.raw_output(tiny_weights.values, tiny_spec, np.zeros(tiny_spec.input_dim))
    assert out.shape == (tiny_spec.output_dim,)
    assert np.all(np.isfinite(out))


def test_forward_matches_reference(tiny_spec, tiny_weights, rng):
    x = rng.normal(size=tiny_spec.input_dim)
    got = rg.raw_output(tiny_weights.values, tiny_spec, x)
    assert np.allclose(got, mlp_reference(tiny_weights.values, tiny_spec, x), atol=1e-12)


def test_zero_weights_positive_links(tiny_spec):
    w = rg.ModelWeights(tiny_spec, np.zeros(tiny_spec.param_count))
    pred = rg.predict(w, np.zeros(tiny_spec.input_dim))
    assert np.all(pred.raw == 0.0)
    assert np.all(pred.shape.scales == 1.0)
    assert pred.camera.scale == 1.0


def test_predict_deterministic(tiny_weights, rng):
    x = rng.normal(size=tiny_weights.spec.input_dim)
    a = rg.predict(tiny_weights, x)
    c = rg.predict(tiny_weights, x)
    assert np.array_equal(a.raw, c.raw)
    assert np.array_equal(a.pose.rotations, c.pose.rotations)


def test_predict_rejects_bad_dims(tiny_weights):
    with pytest.raises(ValueError):
        rg.predict(tiny_weights, np.zeros(3))
    with pytest.raises(ValueError):
        rg.predict(tiny_weights, np.zeros((2, tiny_weights.spec.input_dim)))


def test_output_gradient_matches_finite_differences(tiny_spec, rng):
    x = rng.normal(size=tiny_spec.input_dim)
    coord = 3

    def obj(t, ctx=None):
        return rg.raw_output(t, tiny_spec, x)[coord]

    phi = rng.uniform(-1, 1, tiny_spec.param_count)
    g = ad.gradient(obj, phi)
    fd, _ = central_diff(lambda p: ad.eval_loss(obj, p), phi)
    assert max_rel_err(g, fd) < 1e-5


def test_teacher_update_boundaries(tiny_spec, rng):
    omega = rg.ModelWeights(tiny_spec, rng.normal(size=tiny_spec.param_count))
    phi = rg.ModelWeights(tiny_spec, rng.normal(size=tiny_spec.param_count))
    assert np.array_equal(rg.teacher_update(omega, phi, 1.0).values, omega.values)
    assert np.array_equal(rg.teacher_update(omega, phi, 0.0).values, phi.values)


def test_teacher_update_midpoint(tiny_spec):
    omega = rg.ModelWeights(tiny_spec, np.full(tiny_spec.param_count, 2.0))
    phi = rg.ModelWeights(tiny_spec, np.zeros(tiny_spec.param_count))
    out = rg.teacher_update(omega, phi, 0.5)
    assert np.allclose(out.values, 1.0)


def test_teacher_update_rejects_bad_delta(tiny_spec, tiny_weights):
    with pytest.raises(ValueError):
        rg.teacher_update(tiny_weights, tiny_weights, 1.5)
    with pytest.raises(ValueError):
        rg.teacher_update(tiny_weights, tiny_weights, -0.1)


@given(st.integers(0, 10_000), st.integers(1, 40))
def test_teacher_hull_property(seed, updates):
    rng = np.random.default_rng(seed)
    spec = rg.RegressorSpec(input_dim=4, hidden=(3,), n_joints=2)
    omega = rg.init_weights(spec, seed)
    lo = omega.values.copy()
    hi = omega.values.copy()
    for _ in range(updates):
        student = rg.ModelWeights(spec, rng.normal(size=spec.param_count))
        lo = np.minimum(lo, student.values)
        hi = np.maximum(hi, student.values)
        omega = rg.teacher_update(omega, student, float(rng.uniform(0, 1)))
        assert np.all(omega.values >= lo - 1e-12)
        assert np.all(omega.values <= hi + 1e-12)


def test_weights_length_validation(tiny_spec):
    with pytest.raises(ValueError):
        rg.ModelWeights(tiny_spec, np.zeros(tiny_spec.param_count - 1))


def test_checkpoint_round_trip(tiny_weights, tmp_path):
    path = tmp_path / "ckpt.bin"
    rg.save_weights(tiny_weights, path)
    back = rg.load_weights(path)
    assert back.spec == tiny_weights.spec
    assert np.array_equal(back.values, tiny_weights.values)


def test_checkpoint_rejects_corruption(tiny_weights, tmp_path):
    path = tmp_path / "ckpt.bin"
    rg.save_weights(tiny_weights, path)
    blob = path.read_bytes()
    path.write_bytes(blob[:-8])  # truncate one float
    with pytest.raises(ValueError):
        rg.load_weights(path)
    path.write_bytes(b"garbage\n" + blob)
    with pytest.raises(ValueError):
        rg.load_weights(path)
