"""Distill a trained ensemble into the compact student.

The same folds are used twice: once for a student trained on labels alone and
once for a student that also matches the ensemble's softened outputs
(beta=0.5, gamma=1, T=2).  Run with ``python demos/distill_student.py [epochs]``.
"""
import sys
import tempfile

from seizure_forge.evaluation import patient_wise_folds
from seizure_forge.models import EnsembleConfig, StudentConfig, build_student, profile
from seizure_forge.pipeline import cross_validate_student, draw_member_params, featurize
from seizure_forge.synthetic import SyntheticSpec, generate_synthetic_dataset
from seizure_forge.training import KdConfig, TrainConfig


def main(epochs: int = 30):
    size = (32, 32)
    with tempfile.TemporaryDirectory() as tmp:
        _, manifest = generate_synthetic_dataset(tmp, SyntheticSpec())
        subspaces = featurize(manifest, draw_member_params(seed=1), out_size=size)
    student_cfg = StudentConfig(input_size=size)
    prof = profile(build_student(student_cfg))
    print(f"student: {prof.params} parameters, {prof.macs / 1e6:.1f} M multiply-accumulates at {size}")

    folds = patient_wise_folds(manifest, k=3, seed=1)
    args = (manifest, subspaces, folds, EnsembleConfig.small(input_size=size), student_cfg,
            TrainConfig(epochs=epochs, batch_size=50, seed=1))
    plain = cross_validate_student(*args, None)
    distilled = cross_validate_student(*args, KdConfig(alpha=0.0, beta=0.5, gamma=1.0, temperature=2.0))
    for name, res in (("plain", plain), ("distilled", distilled)):
        print(f"{name:>9} student: window F1 {res['mean']['window']:.3f}, event F1 {res['mean']['event']:.3f}")


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 30)
