"""Acceptance suite: one test per criterion, each recording a pass/fail line.

The long-running experiments (criteria 7 to 9) use the small ensemble preset
on 32 x 32 stacks with 30 epochs; see the README for expected runtimes.
"""
import time

import numpy as np
import pytest

from seizure_forge.cli import EXIT_OK, main
from seizure_forge.eeg_io import SEIZURE_TYPES, DatasetManifest, SeizureEvent, load_manifest
from seizure_forge.evaluation import FoldError, patient_wise_folds, seizure_wise_folds
from seizure_forge.models import Ensemble, EnsembleConfig, StudentConfig, build_dcn, predict_logits
from seizure_forge.msfs import load_montages
from seizure_forge.nn import Tensor, finite_diff_gradcheck, softmax_cross_entropy
from seizure_forge.nn.functional import avg_pool2d, batch_norm2d, conv2d, linear, relu
from seizure_forge.pipeline import cross_validate_ensemble, cross_validate_student, draw_member_params, featurize
from seizure_forge.spectrogram import LOG_EPS, assemble_stack, compute_ft_map, compute_s2, fft_1d
from seizure_forge.synthetic import SyntheticSpec, generate_synthetic_dataset
from seizure_forge.training import KdConfig, TrainConfig, distillation_loss, init_weights, kl_term, train_ensemble

SIZE = (32, 32)
EPOCHS = 30
SEEDS = range(5)


def naive_dft(x):
    n = len(x)
    j = np.arange(n)
    # reduce j*k mod n in integers so the twiddles stay exact for large n
    return np.exp(-2j * np.pi * ((j[:, None] * j[None, :]) % n) / n) @ x


@pytest.fixture(scope="module")
def synthetic(synthetic_dir):
    manifest = load_manifest(synthetic_dir)
    return manifest, load_montages(manifest)


def test_criterion_01_fft_oracle(acceptance):
    rng = np.random.default_rng(101)
    worst_fwd = worst_rt = 0.0
    elapsed = 0.0
    for _ in range(200):
        n = int(rng.integers(1, 1025))
        x = rng.normal(size=n) + 1j * rng.normal(size=n)
        t0 = time.perf_counter()
        spec = fft_1d(x)
        back = fft_1d(spec, inverse=True)
        elapsed += time.perf_counter() - t0
        ref = naive_dft(x)
        worst_fwd = max(worst_fwd, np.abs(spec - ref).max() / np.abs(ref).max())
        worst_rt = max(worst_rt, np.abs(back - x).max() / np.abs(x).max())
    ok = worst_fwd < 1e-9 and worst_rt < 1e-9 and elapsed < 10
    acceptance(1, ok, f"max rel err {worst_fwd:.2e}, round trip {worst_rt:.2e}, fft time {elapsed:.2f} s")
    assert ok


def test_criterion_02_gradient_suite(acceptance):
    rng = np.random.default_rng(202)

    def r(*shape):
        return rng.normal(size=shape)

    relu_in = r(4, 9)
    relu_in[np.abs(relu_in) < 0.05] = 0.5  # keep away from the kink
    y = rng.integers(0, 7, 6)
    zt = r(6, 7)
    rm, rv = np.zeros(3), np.ones(3)
    checks = {
        "conv2d": (lambda x, w: conv2d(x, w, 2, 1), [r(2, 3, 7, 7), r(4, 3, 3, 3)]),
        "batch_norm2d": (lambda x, g, b: batch_norm2d(x, g, b, rm.copy(), rv.copy(), True),
                         [r(4, 3, 5, 5), r(3) + 1.5, r(3)]),
        "relu": (relu, [relu_in]),
        "avg_pool2d": (lambda x: avg_pool2d(x, 3, 2, 1), [r(2, 2, 7, 7)]),
        "linear": (linear, [r(5, 6), r(4, 6), r(4)]),
        "softmax_cross_entropy": (lambda z: softmax_cross_entropy(z, y), [r(6, 7)]),
        "distillation_loss": (lambda z: distillation_loss(z, zt, y, KdConfig(0.0, 0.5, 1.0, 2.0)), [r(6, 7)]),
        "distillation_loss all terms": (lambda z: distillation_loss(z, zt, y, KdConfig(1.0, 1.0, 1.0, 4.0)),
                                        [r(6, 7)]),
    }
    t0 = time.perf_counter()
    errors = {name: finite_diff_gradcheck(op, [Tensor(a.astype(np.float64)) for a in args])
              for name, (op, args) in checks.items()}
    elapsed = time.perf_counter() - t0
    worst = max(errors, key=errors.get)
    ok = max(errors.values()) < 1e-4 and elapsed < 60
    acceptance(2, ok, f"worst rel err {errors[worst]:.2e} ({worst}), {len(errors)} checks in {elapsed:.1f} s")
    assert ok


def test_criterion_03_saliency_invariants(acceptance):
    rng = np.random.default_rng(303)
    const_ok = all(np.all(compute_s2(np.full((p, 20), c)) == 0.0)
                   for p, c in [(24, 0.0), (48, -3.7), (64, 11.25), (96, 1e3)])
    min_s2 = min(compute_s2(rng.normal(scale=rng.uniform(0.1, 10), size=(int(rng.integers(3, 97)), 20))).min()
                 for _ in range(1000))
    range_ok, offset_err = True, 0.0
    for _ in range(50):
        maps = [rng.normal(size=(48, 20)) for _ in range(3)]
        out = assemble_stack(*maps, out_size=(40, 40)).stacked
        range_ok &= bool(out.min() >= 0.0 and out.max() <= 255.0)
        c = rng.uniform(-100, 100)
        shifted = assemble_stack(*[m + c for m in maps], out_size=(40, 40)).stacked
        offset_err = max(offset_err, float(np.abs(shifted - out).max()))
    ft_err = 0.0
    for p in (24, 48, 64, 96, 100):
        seg = rng.normal(size=(20, p))
        ref = np.log(np.abs(np.array([naive_dft(ch) for ch in seg])) + LOG_EPS).T
        ft_err = max(ft_err, float(np.abs(compute_ft_map(seg).values - ref).max()))
    ok = const_ok and min_s2 >= 0 and range_ok and offset_err < 1e-3 and ft_err < 1e-6
    acceptance(3, ok, f"S2 const zero {const_ok}, min S2 {min_s2:.3g}, stack in range {range_ok}, "
                      f"offset diff {offset_err:.2e}, FT map err {ft_err:.2e}")
    assert ok


def test_criterion_04_ensemble_identity(acceptance):
    rng = np.random.default_rng(404)
    cfg = EnsembleConfig.small(input_size=(16, 16))
    base = init_weights(build_dcn(cfg.members[0]), 0.3, seed=4)
    clones = [build_dcn(cfg.members[0]) for _ in range(2)]
    for c in clones:
        c.load_state_dict(base.state_dict())
    x = rng.uniform(0, 255, size=(5, 3, 16, 16)).astype(np.float32)
    clone_err = float(np.abs(predict_logits(Ensemble([base] + clones), [x, x, x]) - predict_logits(base, x)).max())

    ens = Ensemble.build(cfg)
    for i, m in enumerate(ens.members):
        init_weights(m, 0.3, seed=10 + i)
    xs = [rng.uniform(0, 255, size=(5, 3, 16, 16)).astype(np.float32) for _ in range(3)]
    ref = predict_logits(ens, xs)
    perm_err = max(float(np.abs(predict_logits(Ensemble([ens.members[p] for p in perm]), [xs[p] for p in perm])
                                - ref).max())
                   for perm in [(0, 2, 1), (1, 0, 2), (2, 0, 1), (2, 1, 0)])
    ok = clone_err < 1e-6 and perm_err < 1e-6
    acceptance(4, ok, f"clone diff {clone_err:.2e}, permutation diff {perm_err:.2e}")
    assert ok


def test_criterion_05_loss_reductions(acceptance, tmp_path):
    rng = np.random.default_rng(505)
    zs, zt, y = rng.normal(size=(16, 7)), rng.normal(size=(16, 7)), rng.integers(0, 7, 16)
    ce_err = abs(float(distillation_loss(Tensor(zs), zt, y, KdConfig(0.0, 1.0, 0.0)).data)
                 - float(softmax_cross_entropy(Tensor(zs), y).data))
    kl = max(abs(float(kl_term(Tensor(z), z, t).data)) for z in (zs, zt) for t in (1.0, 2.0, 4.0))

    # balanced seven-class synthetic batches through the real featurizer
    path, manifest = generate_synthetic_dataset(tmp_path, SyntheticSpec(n_classes=7, n_patients=7,
                                                                        seizures_per_class=2, duration=4.0))
    subs = featurize(manifest, draw_member_params(5), out_size=(16, 16))
    ens = Ensemble.build(EnsembleConfig.small(input_size=(16, 16)))
    for i, m in enumerate(ens.members):
        init_weights(m, 0.01, seed=i)
    hist = train_ensemble(ens, subs, TrainConfig(epochs=1, batch_size=len(subs[0]), base_lr=1e-12))
    initial = hist["loss"][0]
    ok = ce_err < 1e-7 and kl < 1e-12 and abs(initial - np.log(7)) < 0.1
    acceptance(5, ok, f"plain CE diff {ce_err:.1e}, KL(P, P) {kl:.1e}, initial loss {initial:.4f} "
                      f"(ln 7 = {np.log(7):.4f})")
    assert ok


def _random_manifest(rng):
    events = []
    n_classes = int(rng.integers(1, 8))
    for p in range(int(rng.integers(3, 12))):
        for _ in range(int(rng.integers(1, 8))):
            events.append(SeizureEvent(f"P{p}", f"P{p}.edf", SEIZURE_TYPES[int(rng.integers(0, n_classes))], 0, 1))
    return DatasetManifest("random", events)


def test_criterion_06_fold_invariants(acceptance):
    rng = np.random.default_rng(606)
    stratified = disjoint = covered = True
    raised = split = 0
    trial = 0
    # draw until both fold kinds have been checked on 1000 manifests each
    while trial < 1000 or split < 1000:
        man = _random_manifest(rng)
        k = int(rng.integers(2, 6))
        if trial < 1000:
            spec = seizure_wise_folds(man, k, seed=trial)
            covered &= (sorted(np.concatenate([spec.train_test(f)[1] for f in range(k)]).tolist())
                        == list(range(len(man))))
            for c in np.unique(man.labels):
                sizes = np.bincount(spec.assignments[man.labels == c], minlength=k)
                stratified &= bool(sizes.max() - sizes.min() <= 1)
        trial += 1
        if split >= 1000:
            continue
        try:
            pspec = patient_wise_folds(man, k, seed=trial)
        except FoldError as err:
            raised += 1
            assert "data from only" in str(err)
            continue
        split += 1
        patients = np.asarray(man.patients)
        sets = [set(patients[pspec.assignments == f]) for f in range(k)]
        disjoint &= all(not (sets[i] & sets[j]) for i in range(k) for j in range(i + 1, k))
        covered &= sorted(np.concatenate([pspec.train_test(f)[1] for f in range(k)]).tolist()) == list(range(len(man)))
    events = [SeizureEvent(f"P{p}", "x.edf", "FN", 0, 1) for p in range(4)]
    events += [SeizureEvent(f"P{p}", "x.edf", "AB", 0, 1) for p in range(2)]
    with pytest.raises(FoldError) as info:
        patient_wise_folds(DatasetManifest("two", events), k=3)
    documented = "data from only 2 patient" in str(info.value)
    ok = stratified and disjoint and covered and documented
    acceptance(6, ok, f"1000 manifests per fold kind: seizure-wise stratified {stratified}, partitions {covered}, "
                      f"patient-wise disjoint {disjoint} ({raised} more rejected with the too-few-patients error), "
                      f"2-patient error {documented}")
    assert ok


def _ensemble_cv(manifest, montages, seed, frequencies=None, fraction=1.0, batch_size=50):
    params = draw_member_params(seed) if frequencies is None else draw_member_params(seed, frequencies=frequencies)
    subs = featurize(manifest, params, out_size=SIZE, montages=montages)
    folds = patient_wise_folds(manifest, 3, seed)
    cfg = TrainConfig(epochs=EPOCHS, batch_size=batch_size, seed=seed)
    return cross_validate_ensemble(manifest, subs, folds, EnsembleConfig.small(input_size=SIZE), cfg, fraction)


def test_criterion_07_synthetic_end_to_end(acceptance, synthetic):
    manifest, montages = synthetic
    t0 = time.perf_counter()
    result = _ensemble_cv(manifest, montages, seed=0)
    elapsed = time.perf_counter() - t0
    event_f1 = result["mean"]["event"]
    ok = event_f1 >= 0.90 and elapsed <= 600
    acceptance(7, ok, f"event weighted F1 {event_f1:.4f} (window {result['mean']['window']:.4f}), "
                      f"3 patient-wise folds in {elapsed:.0f} s")
    assert ok


def test_criterion_08_msfs_ablation(acceptance, synthetic):
    manifest, montages = synthetic
    msfs, single = [], []
    for seed in SEEDS:
        msfs.append(_ensemble_cv(manifest, montages, seed, fraction=0.2, batch_size=16)["mean"])
        single.append(_ensemble_cv(manifest, montages, seed, frequencies=(64,), fraction=0.2, batch_size=16)["mean"])
    gain = {lvl: float(np.mean([m[lvl] for m in msfs]) - np.mean([s[lvl] for s in single]))
            for lvl in ("event", "window")}
    ok = gain["event"] >= 0.02
    acceptance(8, ok, f"MSFS minus 64 Hz only, mean over 5 seeds: event {gain['event']:+.4f}, "
                      f"window {gain['window']:+.4f} (needs event >= +0.02); "
                      f"per-seed event MSFS {[round(m['event'], 3) for m in msfs]}, "
                      f"64 Hz {[round(s['event'], 3) for s in single]}")
    assert ok


def test_criterion_09_distillation(acceptance, synthetic):
    manifest, montages = synthetic
    kd_scores, plain_scores = [], []
    for seed in SEEDS:
        subs = featurize(manifest, draw_member_params(seed), out_size=SIZE, montages=montages)
        folds = patient_wise_folds(manifest, 3, seed)
        cfg = TrainConfig(epochs=EPOCHS, batch_size=50, seed=seed)
        common = (manifest, subs, folds, EnsembleConfig.small(input_size=SIZE), StudentConfig(input_size=SIZE), cfg)
        kd_scores.append(cross_validate_student(*common, KdConfig(0.0, 0.5, 1.0, 2.0))["mean"])
        plain_scores.append(cross_validate_student(*common, None)["mean"])
    diff = {lvl: float(np.mean([k[lvl] for k in kd_scores]) - np.mean([p[lvl] for p in plain_scores]))
            for lvl in ("event", "window")}
    ok = diff["event"] >= -0.005
    acceptance(9, ok, f"distilled minus plain student, mean over 5 seeds: event {diff['event']:+.4f}, "
                      f"window {diff['window']:+.4f} (needs event >= -0.005); "
                      f"per-seed event KD {[round(k['event'], 3) for k in kd_scores]}, "
                      f"plain {[round(p['event'], 3) for p in plain_scores]}")
    assert ok


def _snapshot(directory):
    return {p.relative_to(directory).as_posix(): p.read_bytes() for p in sorted(directory.rglob("*")) if p.is_file()}


def test_criterion_10_cli_determinism(acceptance, tmp_path):
    syn, cache = tmp_path / "syn", tmp_path / "cache.sesp"
    fast = ["--epochs", "2", "--batch-size", "32", "--model", "small", "--seed", "3"]
    runs = [
        ["synth", "--out", str(syn), "--seizures", "3", "--duration", "5", "--seed", "3"],
        ["featurize", "--manifest", str(syn / "manifest.csv"), "--out", str(cache), "--out-size", "16", "--seed", "3"],
        ["train", "--cache", str(cache), "--out", str(tmp_path / "train"), "--csv"] + fast,
        ["distill", "--cache", str(cache), "--out", str(tmp_path / "distill"), "--teacher",
         str(tmp_path / "train")] + fast,
        ["evaluate", "--cache", str(cache), "--checkpoints", str(tmp_path / "train"), "--out",
         str(tmp_path / "evaluate"), "--seed", "3"],
    ]
    for args in runs:
        assert main(args) == EXIT_OK
    first = _snapshot(tmp_path)
    for args in runs:
        assert main(args) == EXIT_OK
    second = _snapshot(tmp_path)
    differing = sorted(name for name in first if first[name] != second.get(name))
    kinds = {"caches": [n for n in first if n.endswith(".sesp")],
             "checkpoints": [n for n in first if n.endswith(".snck")],
             "metrics": [n for n in first if n.endswith("metrics.json")]}
    ok = not differing and first.keys() == second.keys() and all(kinds.values())
    acceptance(10, ok, f"{len(first)} files compared after repeating 5 runs "
                       f"({len(kinds['caches'])} cache, {len(kinds['checkpoints'])} checkpoints, "
                       f"{len(kinds['metrics'])} metrics JSON); differing: {differing or 'none'}")
    assert ok
