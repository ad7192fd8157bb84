"""Compiled inner loops for exact piecewise propagation."""
import numpy as np
from numba import njit

# Pade(13) coefficients and the matching 1-norm threshold (Higham 2005).
PADE13 = np.array(
    [
        64764752532480000.0, 32382376266240000.0, 7771770303897600.0,
        1187353796428800.0, 129060195264000.0, 10559470521600.0,
        670442572800.0, 33522128640.0, 1323241920.0, 40840800.0,
        960960.0, 16380.0, 182.0, 1.0,
    ]
)
THETA13 = 5.371920351148152


@njit(cache=True)
def _mm_into(a, b, out):
    n = a.shape[0]
    for i in range(n):
        for j in range(n):
            acc = 0.0
            for k in range(n):
                acc += a[i, k] * b[k, j]
            out[i, j] = acc


@njit(cache=True)
def _solve_into(a, b):
    # Gaussian elimination with partial pivoting; overwrites a, result in b
    n = a.shape[0]
    for c in range(n):
        p = c
        best = abs(a[c, c])
        for r in range(c + 1, n):
            if abs(a[r, c]) > best:
                best = abs(a[r, c])
                p = r
        if p != c:
            for j in range(n):
                a[c, j], a[p, j] = a[p, j], a[c, j]
                b[c, j], b[p, j] = b[p, j], b[c, j]
        piv = a[c, c]
        for r in range(c + 1, n):
            f = a[r, c] / piv
            if f != 0.0:
                for j in range(c, n):
                    a[r, j] -= f * a[c, j]
                for j in range(n):
                    b[r, j] -= f * b[c, j]
    for c in range(n - 1, -1, -1):
        for j in range(n):
            s = b[c, j]
            for k in range(c + 1, n):
                s -= a[c, k] * b[k, j]
            b[c, j] = s / a[c, c]


@njit(cache=True)
def workspace(n):
    return np.empty((9, n, n))


@njit(cache=True)
def expm_into(a, out, w):
    """``out = expm(a)`` using the scratch stack ``w`` from ``workspace``."""
    n = a.shape[0]
    norm = 0.0
    for j in range(n):
        col = 0.0
        for i in range(n):
            col += abs(a[i, j])
        if col > norm:
            norm = col
    s = 0
    if norm > THETA13:
        s = int(np.ceil(np.log2(norm / THETA13)))
    scale = 1.0 / 2.0**s
    b = PADE13
    x, x2, x4, x6, p, q, u, v, t = w[0], w[1], w[2], w[3], w[4], w[5], w[6], w[7], w[8]
    for i in range(n):
        for j in range(n):
            x[i, j] = a[i, j] * scale
    _mm_into(x, x, x2)
    _mm_into(x2, x2, x4)
    _mm_into(x4, x2, x6)
    for i in range(n):
        for j in range(n):
            p[i, j] = b[13] * x6[i, j] + b[11] * x4[i, j] + b[9] * x2[i, j]
            q[i, j] = b[12] * x6[i, j] + b[10] * x4[i, j] + b[8] * x2[i, j]
    _mm_into(x6, p, t)
    for i in range(n):
        for j in range(n):
            t[i, j] += b[7] * x6[i, j] + b[5] * x4[i, j] + b[3] * x2[i, j]
        t[i, i] += b[1]
    _mm_into(x, t, u)
    _mm_into(x6, q, v)
    for i in range(n):
        for j in range(n):
            v[i, j] += b[6] * x6[i, j] + b[4] * x4[i, j] + b[2] * x2[i, j]
        v[i, i] += b[0]
    # solve (v - u) r = v + u
    for i in range(n):
        for j in range(n):
            p[i, j] = v[i, j] - u[i, j]
            out[i, j] = v[i, j] + u[i, j]
    _solve_into(p, out)
    for _ in range(s):
        _mm_into(out, out, t)
        out[:, :] = t


@njit(cache=True)
def expm(a):
    out = np.empty_like(a)
    expm_into(a, out, workspace(a.shape[0]))
    return out


@njit(cache=True)
def expm_stack(a):
    out = np.empty_like(a)
    w = workspace(a.shape[1])
    for k in range(a.shape[0]):
        expm_into(a[k], out[k], w)
    return out


@njit(cache=True)
def _segment_into(A, Bv, Bn, d, vj, nj, dt, g, e, w):
    for i in range(3):
        for j in range(3):
            g[i, j] = (A[i, j] + Bv[i, j] * vj + Bn[i, j] * nj) * dt
        g[i, 3] = d[i] * dt
    for j in range(4):
        g[3, j] = 0.0
    expm_into(g, e, w)


@njit(cache=True)
def _segment(A, Bv, Bn, d, vj, nj, dt):
    g = np.empty((4, 4))
    e = np.empty((4, 4))
    _segment_into(A, Bv, Bn, d, vj, nj, dt, g, e, workspace(4))
    return e


@njit(cache=True)
def _step(e, x, y):
    for i in range(3):
        y[i] = e[i, 0] * x[0] + e[i, 1] * x[1] + e[i, 2] * x[2] + e[i, 3]


@njit(cache=True)
def trajectory(x0, v, n, dt, A, Bv, Bn, d):
    steps = v.shape[0]
    out = np.empty((steps + 1, 3))
    g = np.empty((4, 4))
    e = np.empty((4, 4))
    w = workspace(4)
    out[0] = x0
    for j in range(steps):
        _segment_into(A, Bv, Bn, d, v[j], n[j], dt, g, e, w)
        _step(e, out[j], out[j + 1])
    return out


@njit(cache=True)
def endpoints(x0, v, n, dt, A, Bv, Bn, d):
    batch, steps = v.shape
    out = np.empty((batch, 3))
    g = np.empty((4, 4))
    e = np.empty((4, 4))
    w = workspace(4)
    x = np.empty(3)
    shared = x0.shape[0] == 1
    for b in range(batch):
        x[:] = x0[0] if shared else x0[b]
        if steps == 0 or dt == 0.0:
            out[b] = x
            continue
        for j in range(steps):
            _segment_into(A, Bv, Bn, d, v[b, j], n[b, j], dt, g, e, w)
            _step(e, x, out[b])
            x[:] = out[b]
    return out
