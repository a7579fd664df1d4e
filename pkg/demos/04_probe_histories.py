"""
Probe histories around the punches
==================================

Four elements sit diagonally outside each punch footprint on the bore.
Their averaged force, speed, von Mises stress and plastic strain show how
the centre ring of punches, which sits in the middle of the coil, is loaded
harder and strains more than the two end rings.
"""

import numpy as np

from emfp.driver import reference_config, run_simulation

res = run_simulation(reference_config(energy_kJ=5.7))
p = res.probes.arrays()
t_us = p["time"] * 1e6

print("site        peak force (N)  peak speed (m/s)  peak vM (MPa)  final eps_p")
for i, name in enumerate(res.probes.names):
    print(f"{name:<10} {p['force'][:, i].max():14.2f} {p['velocity'][:, i].max():17.1f} "
          f"{p['von_mises'][:, i].max() / 1e6:14.1f} {p['eps_p'][-1, i]:12.4f}")

# A coarse time line for one centre site
i = res.probes.names.index("center:0")
for k in np.linspace(0, len(t_us) - 1, 11).astype(int):
    print(f"t = {t_us[k]:5.1f} us  force {p['force'][k, i]:9.2f} N  speed {p['velocity'][k, i]:6.1f} m/s  "
          f"eps_p {p['eps_p'][k, i]:.4f}")

for q in ("force", "eps_p"):
    print(f"{q}: centre {res.probes.group_peak(q, 'center'):.4g} vs end {res.probes.group_peak(q, 'end'):.4g}")
