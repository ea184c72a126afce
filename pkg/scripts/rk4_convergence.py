"""Empirical integrator-order study on the full model.

Simulates a meal + bolus day at several step sizes against a dt = 1/64 min
reference and prints the max-error table with the fitted convergence order.
"""

from __future__ import annotations

import sys

import numpy as np

import glucotwin as gt


def main() -> int:
    params = gt.NOMINAL_ADULT
    kwargs = dict(
        horizon=240.0,
        basal_steps=[(0.0, gt.equilibrium_basal_U_per_h(params))],
        boluses=[(16.0, 4.0)],
        meals=[(16.0, 60.0)],
    )
    ref = gt.simulate_inputs(params, dt=1.0 / 64.0, **kwargs).trace
    dts = [4.0, 2.0, 1.0, 0.5]
    errs = []
    print(f"{'dt (min)':>9}  {'max |error| (mg/dL)':>20}  {'ratio':>7}")
    prev = None
    for dt in dts:
        trace = gt.simulate_inputs(params, dt=dt, **kwargs).trace
        stride = int(round(dt * 64))
        err = float(np.max(np.abs(trace.samples - ref.samples[::stride])))
        ratio = f"{prev / err:7.1f}" if prev else "      -"
        print(f"{dt:9.2f}  {err:20.3e}  {ratio}")
        errs.append(err)
        prev = err
    slope = np.polyfit(np.log(dts), np.log(errs), 1)[0]
    print(f"fitted order: {slope:.2f} (expect ~4 for classical RK4)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
