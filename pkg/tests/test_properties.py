"""Property-based checks of the invariants each module promises."""

import dataclasses
import math

import numpy as np
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cadx.boosting import GBTParams, logistic_grad_hess, predict_proba_gbt, train_gbt
from cadx.dataset import LabeledDataset, features_to_csv, read_features_csv
from cadx.evaluation import log_loss, roc_auc
from cadx.hpo import ParamSpace, ParamSpec, TpeConfig, TrialRecord, full_space, sample_random, tpe_suggest
from cadx.svm import platt_probability, rbf_kernel, rbf_kernel_matrix
from cadx.texture import LbpParams, lbp_code, lbp_top_counts, riu2_encode
from cadx.utils import derive_seed, format_float
from cadx.volume import Volume, crop_cube, resample_isotropic
from oracles import pairwise_auc

SETTINGS = settings(max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


# ----------------------------------------------------------------- volume


@SETTINGS
@given(
    arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 5), st.integers(1, 5)), elements=finite),
    st.tuples(*[st.floats(0.3, 3.0)] * 3),
)
def test_resample_stays_within_input_range(data, spacing):
    out = resample_isotropic(Volume(data, spacing))
    assert out.data.min() >= data.min() - 1e-9 and out.data.max() <= data.max() + 1e-9


@SETTINGS
@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 6), st.integers(1, 6)), elements=finite))
def test_resample_idempotent_on_isotropic(data):
    once = resample_isotropic(Volume(data))
    assert np.array_equal(resample_isotropic(once).data, once.data)


@SETTINGS
@given(st.tuples(*[st.integers(-20, 40)] * 3), st.integers(1, 12))
def test_crop_shape(center, side):
    out = crop_cube(Volume(np.zeros((7, 9, 11))), center, side)
    assert out.data.shape == (side,) * 3


# ---------------------------------------------------------------- texture


@SETTINGS
@given(st.lists(st.integers(0, 1), min_size=4, max_size=48), st.integers(0, 47))
def test_riu2_rotation(bits, k):
    k %= len(bits)
    assert riu2_encode(bits[k:] + bits[:k]) == riu2_encode(bits)


@SETTINGS
@given(st.lists(st.integers(0, 1), min_size=4, max_size=48))
def test_riu2_range(bits):
    code = riu2_encode(bits)
    p = len(bits)
    assert 0 <= code <= p + 1
    assert code == p + 1 or code == sum(bits)


@SETTINGS
@given(st.integers(0, 2**32 - 1), finite, st.floats(0.01, 100.0))
def test_lbp_code_affine_invariance(seed, shift, scale):
    plane = np.random.default_rng(seed).random((12, 12))
    params = LbpParams(2, 8)
    assert lbp_code(plane * scale + shift, (6, 6), params) == lbp_code(plane, (6, 6), params)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-500, 500), st.floats(0.1, 10.0))
def test_lbp_top_affine_invariance(seed, shift, scale):
    cube = np.random.default_rng(seed).random((9, 9, 9))
    params = LbpParams(2, 8)
    assert np.array_equal(lbp_top_counts(cube * scale + shift, params), lbp_top_counts(cube, params))


# --------------------------------------------------------------- boosting


@SETTINGS
@given(st.integers(0, 1), st.floats(-10, 10))
def test_hess_matches_finite_difference(label, m):
    step = 1e-5
    g_plus, _ = logistic_grad_hess(label, m + step)
    g_minus, _ = logistic_grad_hess(label, m - step)
    _, h = logistic_grad_hess(label, m)
    assert abs((g_plus - g_minus) / (2 * step) - h) < 1e-6


def _prefix(model, k):
    return dataclasses.replace(model, feature=model.feature[:k], threshold=model.threshold[:k], left=model.left[:k],
                               right=model.right[:k], value=model.value[:k], n_nodes=model.n_nodes[:k])


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_training_loss_non_increasing(seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(30, 3))
    y = (X[:, 0] + rng.normal(scale=0.7, size=30) > 0).astype(float)
    model = train_gbt(X, y, GBTParams(max_depth=3, n_rounds=15, learning_rate=0.3))
    losses = [float(np.mean(log_loss(predict_proba_gbt(_prefix(model, k), X), y))) for k in range(16)]
    assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:]))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.1, 5.0), st.floats(-3.0, 3.0))
def test_gbt_monotone_transform_invariance(seed, scale, shift):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(25, 3))
    y = (X[:, 1] > 0).astype(float)
    y[:2] = [0, 1]
    params = GBTParams(max_depth=3, n_rounds=5)
    a = train_gbt(X, y, params)
    Z = np.exp(scale * X) + shift
    b = train_gbt(Z, y, params)
    assert np.array_equal(a.feature, b.feature)
    assert np.array_equal(predict_proba_gbt(a, X), predict_proba_gbt(b, Z))


# -------------------------------------------------------------------- svm


@SETTINGS
@given(arrays(np.float64, 4, elements=finite), arrays(np.float64, 4, elements=finite), st.floats(1e-4, 10.0))
def test_rbf_symmetric_and_bounded(x, z, g):
    k = rbf_kernel(x, z, g)
    assert k == rbf_kernel(z, x, g)
    assert 0.0 <= k <= 1.0


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(1e-3, 100.0))
def test_kernel_matrix_psd(seed, g):
    A = np.random.default_rng(seed).normal(size=(20, 4))
    assert np.linalg.eigvalsh(rbf_kernel_matrix(A, A, g)).min() >= -1e-8


@SETTINGS
@given(st.floats(-20, 20), st.floats(-20, 20), st.floats(-5, 5), st.floats(-5, 5))
def test_platt_decreasing_in_linear_term(f1, f2, A, B):
    p1, p2 = platt_probability(f1, A, B), platt_probability(f2, A, B)
    z1, z2 = A * f1 + B, A * f2 + B
    if z1 < z2:
        assert p1 >= p2
    assert 0.0 <= p1 <= 1.0


# -------------------------------------------------------------------- hpo


@SETTINGS
@given(st.integers(0, 2**32 - 1), st.sampled_from(["svm", "xgboost"]))
def test_random_points_in_bounds(seed, clf):
    space = full_space(clf)
    assert space.contains(sample_random(space, np.random.default_rng(seed)))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(10, 40), st.floats(0.05, 0.95))
def test_tpe_points_in_bounds(seed, n_hist, q):
    space = full_space("xgboost")
    rng = np.random.default_rng(seed)
    history = []
    for t in range(n_hist):
        p = sample_random(space, rng)
        loss = math.inf if t % 7 == 3 else float(rng.random())
        history.append(TrialRecord(t, p, loss))
    assert space.contains(tpe_suggest(space, history, TpeConfig(quantile_gamma=q), rng))


@SETTINGS
@given(st.floats(1e-6, 1e-1), st.floats(1.0, 1e6), st.integers(0, 2**32 - 1))
def test_log_uniform_in_bounds(low, high, seed):
    space = ParamSpace([ParamSpec.log_uniform("x", low, high)])
    v = sample_random(space, np.random.default_rng(seed))["x"]
    assert low <= v <= high


# ------------------------------------------------------------- evaluation


scored = st.integers(2, 30).flatmap(lambda n: st.tuples(
    arrays(np.float64, n, elements=st.floats(0, 1)),
    arrays(np.int64, n, elements=st.integers(0, 1)),
))


@SETTINGS
@given(scored)
def test_auc_matches_pairwise(data):
    s, y = data
    if len(set(y.tolist())) < 2:
        return
    assert abs(roc_auc(s, y) - pairwise_auc(list(s), list(y))) < 1e-12


@SETTINGS
@given(scored)
def test_auc_complement_and_monotone_invariance(data):
    s, y = data
    if len(set(y.tolist())) < 2:
        return
    a = roc_auc(s, y)
    # cube of the dense rank: strictly increasing and exact in floating point
    dense = np.searchsorted(np.unique(s), s).astype(float)
    assert roc_auc(dense**3 + 7.0, y) == a
    if len(np.unique(s)) == len(s):
        assert abs(a + roc_auc(-s, y) - 1) < 1e-12


@SETTINGS
@given(st.floats(0, 1), st.integers(0, 1))
def test_log_loss_bounded(p, y):
    v = log_loss(p, y)
    # largest value: the clipped 1 - 1e-15 probability scored against the wrong label
    assert 0 <= v <= -math.log(1.0 - (1.0 - 1e-15))


# ------------------------------------------------------------------ utils


@SETTINGS
@given(st.floats(allow_nan=False))
def test_format_float_nine_digits(x):
    back = float(format_float(x))
    assert back == x or abs(back - x) <= 5e-9 * abs(x)


@SETTINGS
@given(st.lists(st.integers(0, 2**40), min_size=1, max_size=4))
def test_derive_seed_is_stable_32bit(keys):
    s = derive_seed(*keys)
    assert s == derive_seed(*keys)
    assert 0 <= s < 2**32


@SETTINGS
@given(arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 4)),
              elements=st.floats(-1e6, 1e6, allow_nan=False)))
def test_features_csv_round_trip(tmp_path_factory, X):
    ids = [f"n{k}" for k in range(len(X))]
    y = [k % 2 for k in range(len(X))]
    path = tmp_path_factory.mktemp("f") / "f.csv"
    path.write_text(features_to_csv(LabeledDataset(X, y, ids)))
    back = read_features_csv(path)
    assert back.ids == tuple(ids) and back.y.tolist() == y
    assert np.allclose(back.X, X, rtol=5e-9, atol=0)
