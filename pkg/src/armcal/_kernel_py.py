"""Pure-numpy integration kernel (fallback backend).

Same contract as the compiled kernel in ``_kernel_cy``: advance a batch of
joint states through ``n_sub`` semi-implicit Euler substeps of a PD-controlled
arm with smoothed Coulomb friction. Arrays are updated in place.
"""

import numpy as np

BACKEND_NAME = "python"


def substep_batch(q, qd, target, f, p, d, inv_inertia, dt, n_sub, eps_v):
    """Advance a batch of states in place.

    q, qd, target : (B, N) float64, C-contiguous
    f, p, d       : (B,) float64, per-row physical parameters
    inv_inertia   : (N,) float64
    dt            : substep duration
    n_sub         : number of substeps
    eps_v         : velocity scale of the tanh friction smoothing
    """
    fc = f[:, None]
    pc = p[:, None]
    dc = d[:, None]
    for _ in range(n_sub):
        tau = pc * (target - q) - dc * qd - fc * np.tanh(qd / eps_v)
        qd += dt * tau * inv_inertia
        q += dt * qd
