"""Walk through one saliency-encoded spectrogram.

A synthetic 7 Hz seizure is windowed at three sampling rates; for each window
we print where the spectral energy sits in the FT map and how the two
saliency maps reshape it.  Every window is 1 s long, so FT bins are 1 Hz
apart regardless of the rate.  Run with ``python demos/saliency_walkthrough.py``.
"""
import tempfile

import numpy as np

from seizure_forge.eeg_io import load_event_montage
from seizure_forge.msfs import SamplingParams, window_segments
from seizure_forge.spectrogram import compute_ft_map, compute_s1, compute_s2, assemble_stack
from seizure_forge.synthetic import SyntheticSpec, class_frequency, generate_synthetic_dataset


def main():
    with tempfile.TemporaryDirectory() as tmp:
        _, manifest = generate_synthetic_dataset(tmp, SyntheticSpec(n_classes=2, n_patients=2, seizures_per_class=1))
        event = manifest.events[1]
        signal = load_event_montage(event)
    print(f"event {event.seizure_type} from {event.patient_id}: {signal.channels.shape[1]} samples at {signal.rate} Hz, "
          f"class carrier {class_frequency(1):.1f} Hz before the per-patient shift")

    for rate in (24, 48, 96):
        window = window_segments(signal, SamplingParams(rate, 1.0, 1.0))[0]
        ft = compute_ft_map(window, rate)
        s1, s2 = compute_s1(ft), compute_s2(ft)
        half = ft.values.shape[0] // 2
        peak = int(np.argmax(ft.values[1:half].mean(axis=1))) + 1
        stack = assemble_stack(ft, s1, s2, (32, 32)).stacked
        print(f"f={rate:>2} Hz: FT map {ft.values.shape}, mean-channel peak at bin {peak} "
              f"({peak * rate / ft.values.shape[0]:.1f} Hz)")
        print(f"        S1 range [{s1.min():.3g}, {s1.max():.3g}], S2 range [{s2.min():.3g}, {s2.max():.3g}], "
              f"stack {stack.shape} in [{stack.min():.0f}, {stack.max():.0f}]")


if __name__ == "__main__":
    main()
