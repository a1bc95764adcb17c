import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from smelab import attacks, data, fedavg, models
from smelab import autodiff as ad
from smelab.attacks import AttackConfig
from smelab.fedavg import ClientConfig, LocalUpdate

from conftest import make_update

FAST = AttackConfig(iterations=60, seed=1)


@pytest.fixture(scope="module")
def t20():
    spec = models.mlp(input_shape=(1, 8, 8), classes=10, hidden=(32,))
    ds = data.synth_dataset("striped-patterns", 10, seed=100)
    w0 = models.init_weights(spec, 0)
    up = fedavg.client_update(spec, w0, ds, ClientConfig(20, 10, 0.1, seed=0))
    return spec, ds, up


def test_cosine_loss_examples():
    u = np.array([1.0, 0.0])
    assert attacks.cosine_similarity_loss(u, u).item() == pytest.approx(0.0)
    assert attacks.cosine_similarity_loss(u, [0.0, 1.0]).item() == pytest.approx(1.0)
    assert attacks.cosine_similarity_loss(u, [-1.0, 0.0]).item() == pytest.approx(2.0)
    with pytest.raises(attacks.DegenerateGradientError):
        attacks.cosine_similarity_loss(u, [0.0, 0.0])


def test_total_variation_examples():
    assert attacks.total_variation(np.full((2, 1, 3, 3), 0.4)).item() == 0.0
    img = np.array([[[[0.0, 1.0], [0.0, 1.0]]]])
    assert attacks.total_variation(img).item() == 2.0
    assert attacks.total_variation(np.concatenate([img, img])).item() == 2.0


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (2, 1, 4, 4), elements=st.floats(0, 1)), st.floats(0, 10))
def test_tv_positive_homogeneity(img, c):
    a = attacks.total_variation(c * img).item()
    assert a == pytest.approx(c * attacks.total_variation(img).item(), rel=1e-12, abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (5,), elements=st.floats(-3, 3)))
def test_clamp_idempotent(x):
    once = attacks.clamp(x, (0.0, 1.0))
    assert np.array_equal(attacks.clamp(once, (0.0, 1.0)), once)


def test_config_validation():
    for kw in ({"alpha0": 1.5}, {"iterations": 0}, {"tv_lambda": -1.0},
               {"sim_loss": "l1"}, {"pixel_bounds": (1.0, 0.0)}):
        with pytest.raises(ValueError):
            AttackConfig(**kw)


def test_lr_schedule():
    cfg = AttackConfig(iterations=800)
    assert [cfg.lr_scale(k) for k in (0, 299, 300, 500, 700, 799)] == \
        pytest.approx([1, 1, 0.1, 0.01, 0.001, 0.001])
    assert AttackConfig(lr_decay=False).lr_scale(999) == 1.0


def test_adam_first_step_is_lr_times_sign():
    opt = attacks.Adam(0.5)
    assert np.allclose(opt.step(np.zeros(2), np.array([3.0, -0.1])), [-0.5, 0.5], atol=1e-6)


def test_degenerate_update_errors(small_spec, small_data):
    up = make_update(small_spec, small_data, lr=0.0)
    for fn in (attacks.attack_ig, attacks.attack_sme, attacks.attack_sim):
        with pytest.raises(attacks.DegenerateUpdateError):
            fn(small_spec, up, small_data.labels, FAST)


def test_label_count_checked(small_spec, small_data):
    up = make_update(small_spec, small_data)
    with pytest.raises(ValueError):
        attacks.attack_ig(small_spec, up, small_data.labels[:2], FAST)


def test_ig_traces_finite_and_pixels_bounded(t20):
    spec, ds, up = t20
    res = attacks.attack_ig(spec, up, ds.labels, FAST)
    assert np.all(np.isfinite(res.loss_trace)) and len(res.loss_trace) == 60
    assert res.inputs.min() >= 0.0 and res.inputs.max() <= 1.0
    assert res.alpha_trace is None and 0.0 <= res.final_lsim <= 2.0


def test_sme_alpha_stays_in_unit_interval(t20):
    spec, ds, up = t20
    res = attacks.attack_sme(spec, up, ds.labels, AttackConfig(iterations=60, lr_alpha=0.05))
    assert np.all((res.alpha_trace >= 0) & (res.alpha_trace <= 1))
    assert res.final_alpha == res.alpha_trace[-1]


def test_sme_with_frozen_alpha_equals_ig(t20):
    spec, ds, up = t20
    cfg = AttackConfig(iterations=40, lr_alpha=0.0, alpha0=1.0, seed=3)
    sme = attacks.attack_sme(spec, up, ds.labels, cfg)
    ig = attacks.attack_ig(spec, up, ds.labels, cfg)
    assert np.array_equal(sme.inputs, ig.inputs)
    assert np.array_equal(sme.loss_trace, ig.loss_trace)


def test_attack_is_deterministic(t20):
    spec, ds, up = t20
    a = attacks.attack_sme(spec, up, ds.labels, FAST)
    b = attacks.attack_sme(spec, up, ds.labels, FAST)
    assert np.array_equal(a.inputs, b.inputs) and np.array_equal(a.alpha_trace, b.alpha_trace)


def test_alpha_gradient_is_inner_product(t20):
    # d/d alpha of L(alpha w0 + (1 - alpha) wT) equals grad_w L . (w0 - wT)
    spec, ds, up = t20
    x = np.random.default_rng(0).uniform(size=ds.inputs.shape)
    w0, wT = up.w0.values, up.wT.values

    def lossf(alpha):
        g = models.grad_weights(spec, alpha * w0 + (1 - alpha) * wT, x, ds.labels).values
        return attacks.cosine_similarity_loss(up.reversed_update, g).item()

    wn = ad.Node(0.4 * w0 + 0.6 * wT, requires_grad=True)
    g = models.grad_weights(spec, wn, x, ds.labels, create_graph=True)
    gw = ad.grad(attacks.cosine_similarity_loss(up.reversed_update, g), wn)
    fd = (lossf(0.4 + 1e-6) - lossf(0.4 - 1e-6)) / 2e-6
    assert gw @ (w0 - wT) == pytest.approx(fd, rel=1e-5)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_sme_objective_dominates_ig(seed):
    spec = models.mlp(input_shape=(1, 8, 8), classes=10, hidden=(128,))
    ds = data.synth_dataset("striped-patterns", 10, seed=100 + seed)
    up = fedavg.client_update(spec, models.init_weights(spec, seed), ds,
                              ClientConfig(20, 10, 0.1, seed=seed))
    cfg = AttackConfig(iterations=300, seed=seed)
    ig = attacks.attack_ig(spec, up, ds.labels, cfg)
    sme = attacks.attack_sme(spec, up, ds.labels, cfg)
    assert sme.extra["lsim_trace"].min() <= ig.extra["lsim_trace"].min()


def test_loss_trace_is_monotone_when_smoothed(t20):
    spec, ds, up = t20
    for fn in (attacks.attack_ig, attacks.attack_sme):
        trace = fn(spec, up, ds.labels, AttackConfig(iterations=400)).loss_trace
        smooth = np.convolve(trace, np.ones(50) / 50, mode="valid")[100:]
        # bounded wiggle, no divergence, net decrease
        assert np.max(np.diff(smooth)) < 5e-3
        assert smooth[-1] <= smooth[0]


def test_sim_one_step_equals_single_gradient_matching(small_spec, small_data):
    up = make_update(small_spec, small_data, epochs=1, batch_size=6, lr=0.2)
    x = np.random.default_rng(2).uniform(size=small_data.inputs.shape)
    got = attacks.simulation_loss(small_spec, up, x, small_data.labels, up.meta,
                                  "euclidean").item()
    g = models.grad_weights(small_spec, up.w0, x, small_data.labels).values
    assert got == pytest.approx(np.linalg.norm(0.2 * g - up.reversed_update), rel=1e-12)


def test_sim_loss_zero_on_true_data(small_spec, small_data):
    up = make_update(small_spec, small_data, epochs=3, batch_size=2, lr=0.1, seed=7)
    for variant in ("euclidean", "cosine"):
        loss = attacks.simulation_loss(small_spec, up, small_data.inputs, small_data.labels,
                                       up.meta, variant).item()
        assert loss == pytest.approx(0.0, abs=1e-12)


def test_sim_needs_protocol_and_respects_cap(small_spec, small_data):
    up = make_update(small_spec, small_data, epochs=3, batch_size=2)
    bare = LocalUpdate(up.w0, up.wT, up.n)
    with pytest.raises(ValueError, match="epochs"):
        attacks.attack_sim(small_spec, bare, small_data.labels, FAST)
    with pytest.raises(attacks.ResourceLimitError):
        attacks.attack_sim(small_spec, up, small_data.labels, AttackConfig(sim_max_steps=8))
    res = attacks.attack_sim(small_spec, up, small_data.labels,
                             AttackConfig(iterations=20, sim_loss="euclidean"))
    assert res.extra == {"steps": 9, "variant": "euclidean"} and np.isfinite(res.final_lsim)


def test_run_attack_dispatch(small_spec, small_data):
    up = make_update(small_spec, small_data)
    assert attacks.run_attack("ig", small_spec, up, small_data.labels, FAST).method == "ig"
    with pytest.raises(ValueError):
        attacks.run_attack("dlg", small_spec, up, small_data.labels, FAST)


def test_label_recovery_single_sample():
    spec = models.mlp(input_shape=(1, 8, 8), classes=10, hidden=(64,))
    ds = data.synth_dataset("gaussian-blobs", 1, seed=5, labels=[7])
    up = fedavg.client_update(spec, models.init_weights(spec, 5), ds, ClientConfig(1, 1, 0.1))
    assert attacks.recover_labels(spec, up) == [7]
    zero = fedavg.client_update(spec, up.w0, ds, ClientConfig(1, 1, 0.0))
    assert attacks.recover_labels(spec, zero) == []


def test_label_recovery_cannot_flag_every_class():
    # classifier-gradient row sums add up to zero, so at most C - 1 rows are negative
    spec = models.mlp(input_shape=(1, 8, 8), classes=5, hidden=(256,))
    ds = data.synth_dataset("striped-patterns", 10, classes=5, seed=1)
    up = fedavg.client_update(spec, models.init_weights(spec, 1), ds, ClientConfig(1, 10, 0.1))
    rows = up.w0.like(up.reversed_update).unflatten()[spec.classifier]
    assert abs(rows.sum()) < 1e-12
    assert len(attacks.recover_labels(spec, up)) <= 4


def test_expand_labels():
    assert list(attacks.expand_labels([2, 5], 5)) == [2, 5, 2, 5, 2]
    with pytest.raises(ValueError):
        attacks.expand_labels([], 3)
