# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled integration kernel. Contract mirrors ``_kernel_py``."""

from libc.math cimport tanh

BACKEND_NAME = "compiled"


def substep_batch(double[:, ::1] q, double[:, ::1] qd, double[:, ::1] target,
                  double[::1] f, double[::1] p, double[::1] d,
                  double[::1] inv_inertia, double dt, int n_sub, double eps_v):
    cdef Py_ssize_t B = q.shape[0]
    cdef Py_ssize_t N = q.shape[1]
    cdef Py_ssize_t b, j
    cdef int s
    cdef double tau
    for s in range(n_sub):
        for b in range(B):
            for j in range(N):
                tau = (p[b] * (target[b, j] - q[b, j])
                       - d[b] * qd[b, j]
                       - f[b] * tanh(qd[b, j] / eps_v))
                qd[b, j] = qd[b, j] + dt * tau * inv_inertia[j]
                q[b, j] = q[b, j] + dt * qd[b, j]
