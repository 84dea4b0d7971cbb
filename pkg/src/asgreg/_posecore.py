"""Compiled inner loop of the EPnP beta refinement."""

import numpy as np
from numba import njit


@njit(cache=True)
def gauss_newton(beta, S, d2, steps):
    """Fit betas so ``|sum_k beta_k S[p, k]|^2`` matches ``d2[p]`` for every pair p.

    Stops when the squared residual no longer decreases and returns the
    best betas seen.
    """
    P, N = S.shape[0], S.shape[1]
    beta = beta.copy()
    best = beta.copy()
    cost = np.inf
    v = np.empty((P, 3))
    r = np.empty(P)
    J = np.empty((P, N))
    for _ in range(steps + 1):
        c = 0.0
        for p in range(P):
            for a in range(3):
                s = 0.0
                for k in range(N):
                    s += beta[k] * S[p, k, a]
                v[p, a] = s
            r[p] = v[p, 0] ** 2 + v[p, 1] ** 2 + v[p, 2] ** 2 - d2[p]
            c += r[p] * r[p]
        if c >= cost * (1 - 1e-12):
            break
        cost = c
        best[:] = beta
        for p in range(P):
            for k in range(N):
                J[p, k] = 2.0 * (v[p, 0] * S[p, k, 0] + v[p, 1] * S[p, k, 1] + v[p, 2] * S[p, k, 2])
        JtJ = J.T @ J
        g = J.T @ r
        tr = 0.0
        for k in range(N):
            tr += JtJ[k, k]
        for k in range(N):
            JtJ[k, k] += 1e-18 * tr + 1e-300
        beta = beta - np.linalg.solve(JtJ, g)
    return best


@njit(cache=True)
def rigid_fit(A, B):
    """Least-squares R, t with B ~ R A + t."""
    n = A.shape[0]
    ma = np.zeros(3)
    mb = np.zeros(3)
    for i in range(n):
        for c in range(3):
            ma[c] += A[i, c] / n
            mb[c] += B[i, c] / n
    H = np.zeros((3, 3))
    for i in range(n):
        for r in range(3):
            for c in range(3):
                H[r, c] += (A[i, r] - ma[r]) * (B[i, c] - mb[c])
    U, _, Vt = np.linalg.svd(H)
    R = Vt.T @ U.T
    if np.linalg.det(R) < 0:
        D = np.eye(3)
        D[2, 2] = -1.0
        R = Vt.T @ D @ U.T
    return R, mb - R @ ma


@njit(cache=True)
def epnp_core(x, X, Kmat, penalty):
    """EPnP on pixels ``x`` (n, 2) and points ``X`` (n, 3).

    Returns ``(status, R, t)``; status 1 flags coincident or collinear points,
    status 2 that no beta case gave a finite pose.
    """
    n = X.shape[0]
    R_out = np.eye(3)
    t_out = np.zeros(3)
    c0 = np.zeros(3)
    for i in range(n):
        c0 += X[i] / n
    A = X - c0
    w, V = np.linalg.eigh(A.T @ A / n)
    if w[2] <= 0 or w[1] <= 1e-10 * w[2]:
        return 1, R_out, t_out
    k = 2 if w[0] <= 1e-10 * w[2] else 3
    nc = k + 1
    # control points along the principal axes; weights follow from orthogonality
    ctrl = np.empty((nc, 3))
    ctrl[0] = c0
    alpha = np.empty((n, nc))
    for j in range(k):
        s = np.sqrt(w[2 - j])
        ctrl[j + 1] = c0 + s * V[:, 2 - j]
        alpha[:, j + 1] = (A @ V[:, 2 - j]) / s
    for i in range(n):
        alpha[i, 0] = 1.0 - alpha[i, 1:].sum()

    fx, fy, cx, cy, sk = Kmat[0, 0], Kmat[1, 1], Kmat[0, 2], Kmat[1, 2], Kmat[0, 1]
    M = np.zeros((2 * n, 3 * nc))
    for i in range(n):
        v = (x[i, 1] - cy) / fy
        u = (x[i, 0] - cx - sk * v) / fx
        for j in range(nc):
            a = alpha[i, j]
            M[2 * i, 3 * j] = a
            M[2 * i, 3 * j + 2] = -a * u
            M[2 * i + 1, 3 * j + 1] = a
            M[2 * i + 1, 3 * j + 2] = -a * v
    _, evecs = np.linalg.eigh(M.T @ M)

    npairs = nc * (nc - 1) // 2
    pa = np.empty(npairs, np.int64)
    pb = np.empty(npairs, np.int64)
    d2 = np.empty(npairs)
    p = 0
    for a in range(nc):
        for b in range(a + 1, nc):
            pa[p], pb[p] = a, b
            d2[p] = np.sum((ctrl[a] - ctrl[b]) ** 2)
            p += 1

    best_err = np.inf
    found = False
    for N in range(1, 4):
        nu = N * (N + 1) // 2
        if nu > npairs:
            continue
        S = np.empty((npairs, N, 3))
        for p in range(npairs):
            for m in range(N):
                for c in range(3):
                    S[p, m, c] = evecs[3 * pa[p] + c, m] - evecs[3 * pb[p] + c, m]
        L = np.empty((npairs, nu))
        for p in range(npairs):
            col = 0
            for m in range(N):
                for l in range(m, N):
                    g = S[p, m, 0] * S[p, l, 0] + S[p, m, 1] * S[p, l, 1] + S[p, m, 2] * S[p, l, 2]
                    L[p, col] = g if m == l else 2.0 * g
                    col += 1
        sol = np.linalg.lstsq(L, d2)[0]
        beta = np.empty(N)
        beta[0] = np.sqrt(abs(sol[0]))
        for m in range(1, N):
            # diagonal term of beta_m sits at column m * N - m (m - 1) / 2
            beta[m] = np.sqrt(abs(sol[m * N - m * (m - 1) // 2]))
            if sol[m] < 0:
                beta[m] = -beta[m]
        beta = gauss_newton(beta, S, d2, 10)
        Cc = np.zeros((nc, 3))
        for m in range(N):
            for j in range(nc):
                for c in range(3):
                    Cc[j, c] += beta[m] * evecs[3 * j + c, m]
        Xc = alpha @ Cc
        if Xc[:, 2].mean() < 0:
            Xc = -Xc
        R, t = rigid_fit(X, Xc)
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(t))):
            continue
        err = 0.0
        P = Kmat @ np.hstack((R, t.reshape(3, 1)))
        for i in range(n):
            h0 = P[0, 0] * X[i, 0] + P[0, 1] * X[i, 1] + P[0, 2] * X[i, 2] + P[0, 3]
            h1 = P[1, 0] * X[i, 0] + P[1, 1] * X[i, 1] + P[1, 2] * X[i, 2] + P[1, 3]
            h2 = P[2, 0] * X[i, 0] + P[2, 1] * X[i, 1] + P[2, 2] * X[i, 2] + P[2, 3]
            if h2 > 1e-12:
                e = (h0 / h2 - x[i, 0]) ** 2 + (h1 / h2 - x[i, 1]) ** 2
            else:
                e = penalty * penalty
            err += e
        if err < best_err:
            best_err = err
            R_out, t_out = R, t
            found = True
    if not found:
        return 2, R_out, t_out
    return 0, R_out, t_out
