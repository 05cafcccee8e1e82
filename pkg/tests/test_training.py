import numpy as np
import pytest

from seizure_forge.models import DcnConfig, Ensemble, EnsembleConfig, StudentConfig, build_dcn, build_student
from seizure_forge.msfs import FeatureSubspace, SamplingParams
from seizure_forge.nn import Tensor, finite_diff_gradcheck, softmax_cross_entropy
from seizure_forge.nn.functional import softmax_np
from seizure_forge.training import (
    KdConfig,
    TrainConfig,
    distillation_loss,
    init_weights,
    kl_term,
    lr_at_epoch,
    train_ensemble,
    train_student,
)


def kl_oracle(zs, zt, t):
    ps, pt = softmax_np(zs / t, 1), softmax_np(zt / t, 1)
    return t * t * float(np.mean(np.sum(pt * (np.log(pt) - np.log(ps)), axis=1)))


def test_kd_config_grid():
    with pytest.raises(ValueError):
        KdConfig(alpha=0.3)
    with pytest.raises(ValueError):
        KdConfig(alpha=0, beta=0, gamma=0)
    with pytest.raises(ValueError):
        KdConfig(temperature=0)


def test_plain_ce_reduction(rng):
    zs, zt, y = rng.normal(size=(8, 7)), rng.normal(size=(8, 7)), rng.integers(0, 7, 8)
    a = distillation_loss(Tensor(zs), zt, y, KdConfig(alpha=0, beta=1, gamma=0)).data
    assert abs(a - softmax_cross_entropy(zs, y).data) < 1e-7


def test_kl_zero_for_equal_logits(rng):
    z = rng.normal(size=(6, 7))
    assert abs(float(kl_term(Tensor(z), z, 2.0).data)) < 1e-12


@pytest.mark.parametrize("t", [1.0, 2.0, 5.0])
def test_kl_matches_oracle_and_is_nonnegative(rng, t):
    zs, zt = rng.normal(size=(5, 7)) * 3, rng.normal(size=(5, 7)) * 3
    val = float(kl_term(Tensor(zs), zt, t).data)
    assert val == pytest.approx(kl_oracle(zs, zt, t), rel=1e-9)
    assert val >= 0


def test_alpha_term_is_constant(rng):
    zs, zt, y = rng.normal(size=(4, 7)), rng.normal(size=(4, 7)), rng.integers(0, 7, 4)
    s = Tensor(zs, requires_grad=True)
    distillation_loss(s, zt, y, KdConfig(alpha=1, beta=1, gamma=0)).backward()
    g_with = s.grad.copy()
    s.grad = None
    distillation_loss(s, zt, y, KdConfig(alpha=0, beta=1, gamma=0)).backward()
    assert np.allclose(g_with, s.grad)


def test_distillation_gradient(rng):
    zt, y = rng.normal(size=(4, 7)), rng.integers(0, 7, 4)
    for kd in (KdConfig(), KdConfig(alpha=1, beta=0.5, gamma=1, temperature=3), KdConfig(literal=True)):
        err = finite_diff_gradcheck(lambda z: distillation_loss(z, zt, y, kd), [rng.normal(size=(4, 7))])
        assert err < 1e-4


def test_literal_variant_differs(rng):
    zs, zt = rng.normal(size=(3, 7)), rng.normal(size=(3, 7))
    a = kl_term(Tensor(zs), zt, 2.0).data
    b = kl_term(Tensor(zs), zt, 2.0, literal=True).data
    assert abs(a - b) > 1e-6


def test_shape_mismatch(rng):
    with pytest.raises(ValueError):
        distillation_loss(Tensor(np.zeros((2, 7))), np.zeros((3, 7)), [0, 1], KdConfig())


def test_lr_schedule():
    cfg = TrainConfig(epochs=400)
    assert lr_at_epoch(cfg, 0) == pytest.approx(1e-3)
    assert lr_at_epoch(cfg, 199) == pytest.approx(1e-3)
    assert lr_at_epoch(cfg, 200) == pytest.approx(1e-4)
    assert lr_at_epoch(cfg, 300) == pytest.approx(1e-5)
    with pytest.raises(ValueError):
        lr_at_epoch(cfg, 400)


def test_init_weights_statistics():
    model = init_weights(build_dcn(DcnConfig()), 0.01, seed=3)
    w = np.concatenate([p.data.ravel() for n, p in model.named_parameters() if n.endswith("weight")])
    assert abs(w.std() - 0.01) < 5e-4 and abs(w.mean()) < 1e-4
    assert all(np.all(p.data == 0) for n, p in model.named_parameters() if n.endswith("bias") or n.endswith("shift"))


def _toy_subspaces(rng, n_events=12, per_event=4, size=16, k=3):
    """Three members over the same events; class c has a bright band at row 4c."""
    subs = []
    labels = np.repeat(np.arange(n_events) % k, per_event)
    events = np.repeat(np.arange(n_events), per_event)
    starts = np.tile(np.arange(per_event) * 1.0, n_events)
    for m in range(3):
        x = rng.uniform(0, 60, size=(len(labels), 3, size, size)).astype(np.float32)
        for i, c in enumerate(labels):
            x[i, :, 4 * c:4 * c + 3, :] += 180
        subs.append(FeatureSubspace(SamplingParams(24 * (m + 1), 1.0, 1.0), x, labels, events, starts))
    return subs


def test_initial_loss_is_log_k(rng):
    subs = _toy_subspaces(rng, k=7, n_events=14)
    cfg = EnsembleConfig.small(input_size=(16, 16))
    ens = Ensemble.build(cfg)
    for i, m in enumerate(ens.members):
        init_weights(m, 0.01, seed=i)
    hist = train_ensemble(ens, subs, TrainConfig(epochs=1, batch_size=56, base_lr=1e-12))
    assert abs(hist["loss"][0] - np.log(7)) < 0.1


def test_ensemble_training_learns_and_is_deterministic(rng):
    subs = _toy_subspaces(rng)
    cfg = _small3()

    def run():
        ens = Ensemble.build(cfg)
        for i, m in enumerate(ens.members):
            init_weights(m, 0.01, seed=i)
        hist = train_ensemble(ens, subs, TrainConfig(epochs=12, batch_size=8, seed=4))
        return ens, hist

    ens, hist = run()
    assert hist["loss"][-1] < hist["loss"][0]
    assert hist["accuracy"][-1] > 0.9
    ens2, hist2 = run()
    assert hist == hist2
    for a, b in zip(ens.members, ens2.members):
        sa, sb = a.state_dict(), b.state_dict()
        assert all(np.array_equal(sa[k], sb[k]) for k in sa)


def _small3():
    return EnsembleConfig.small(input_size=(16, 16), num_classes=3)


def test_train_rejects_empty_subspace(rng):
    subs = _toy_subspaces(rng)
    empty = subs[0].subset(np.zeros(len(subs[0]), bool))
    with pytest.raises(ValueError, match="empty"):
        train_ensemble(Ensemble.build(_small3()), [empty, subs[1], subs[2]], TrainConfig(epochs=1))


def test_student_distillation_runs(rng):
    subs = _toy_subspaces(rng)
    student = init_weights(build_student(StudentConfig(input_size=(16, 16), num_classes=3)), 0.01)
    teacher_logits = np.eye(3)[subs[0].labels] * 4.0
    hist = train_student(student, None, subs[0], TrainConfig(epochs=8, batch_size=8), KdConfig(),
                         teacher_logits=teacher_logits)
    assert hist["loss"][-1] < hist["loss"][0]
    with pytest.raises(ValueError):
        train_student(student, None, subs[0], TrainConfig(epochs=1), KdConfig())


def test_recalibrate_batch_norm_gives_population_stats(rng):
    from seizure_forge.nn import BatchNorm2d, Conv2d, Sequential, conv2d
    from seizure_forge.training import recalibrate_batch_norm

    net = Sequential(Conv2d(2, 3, 3), BatchNorm2d(3))
    net.layers[0].weight.data[...] = rng.normal(size=(3, 2, 3, 3))
    x = rng.normal(size=(23, 2, 6, 6)).astype(np.float32)
    recalibrate_batch_norm(net, x, batch_size=5)
    out = conv2d(x.astype(np.float64), net.layers[0].weight.data.astype(np.float64)).data
    bn = net.layers[1]
    assert np.allclose(bn.running_mean, out.mean(axis=(0, 2, 3)), rtol=1e-5, atol=1e-6)
    assert np.allclose(bn.running_var, out.var(axis=(0, 2, 3), ddof=1), rtol=1e-4)
    assert bn.momentum == 0.1 and not net.training
