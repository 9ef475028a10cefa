"""Two Gaussian cell densities on either side of the 8π mass threshold.

Noise and flow are switched off.  The light bump spreads and its peak
settles; the heavy one concentrates until the stepper's norm cap fires.
Run with ``python demos/mass_threshold.py`` (well under a minute on one core).
"""

import math

import numpy as np

from ksns.verify import dichotomy_run

DT = 1e-3

for label, mass, horizon in (("M = 4π", 4 * math.pi, 2.0), ("M = 16π", 16 * math.pi, 1.0)):
    times, linf, event, n4_growth = dichotomy_run(mass, DT, horizon, N=64)
    print(f"{label}: mass / 8π = {mass / (8 * math.pi):.2f}")
    for t in (0.0, 0.1, 0.2, 0.3, 0.4):
        i = int(np.argmin(np.abs(times - t)))
        if abs(times[i] - t) < DT:
            print(f"    t={t:.1f}  max n = {linf[i]:10.4f}")
    if event is None:
        print(f"    no stopping event up to t={times[-1]:.2f}; final max n = {linf[-1]:.4f}")
    else:
        print(f"    {event.kind} at t={event.time:.4f}; ‖n‖_4 grew {n4_growth:.1f}x")
