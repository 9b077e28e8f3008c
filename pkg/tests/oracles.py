"""Slow, literal reference implementations used as test oracles.

Everything here works on dense arrays and plain loops, sharing no code with
the package kernels.
"""
import numpy as np


def dense_entries(x):
    """Nonzero ``(d, w, count)`` triples of a dense count matrix, word-major."""
    x = np.asarray(x)
    return [(d, w, float(x[d, w])) for w in range(x.shape[1]) for d in range(x.shape[0]) if x[d, w]]


def stats(entries, mu, D, W, K):
    theta = np.zeros((D, K))
    phi = np.zeros((W, K))
    for (d, w, c), m in zip(entries, mu):
        theta[d] += c * m
        phi[w] += c * m
    return theta, phi


def collapsed_message(i, entries, mu, D, W, K, alpha, beta, prior_phi=None):
    """Message ``i`` recomputed with every other message held fixed."""
    d, w, _ = entries[i]
    th = np.zeros(K)
    ph = np.zeros(K) if prior_phi is None else prior_phi[w].astype(float).copy()
    nk = np.zeros(K) if prior_phi is None else prior_phi.sum(axis=0).astype(float)
    for j, (dj, wj, cj) in enumerate(entries):
        if j == i:
            continue
        if dj == d:
            th += cj * mu[j]
        if wj == w:
            ph += cj * mu[j]
        nk += cj * mu[j]
    p = (th + alpha) * (ph + beta) / (nk + W * beta)
    return p / p.sum()


def sync_sweeps(entries, mu0, D, W, K, alpha, beta, n_sweeps):
    mu = [np.array(m, dtype=float) for m in mu0]
    traj = []
    for _ in range(n_sweeps):
        mu = [collapsed_message(i, entries, mu, D, W, K, alpha, beta) for i in range(len(entries))]
        traj.append([m.copy() for m in mu])
    return traj


def async_sweep(entries, mu, r_wk, order, n_visit, budget, W, K, alpha, beta):
    """One residual-ordered sweep, in place; topics restricted per word."""
    D = max(d for d, _, _ in entries) + 1
    for w in order[:n_visit]:
        if budget >= K:
            subset = list(range(K))
        else:
            ranked = sorted(range(K), key=lambda k: (-r_wk[w, k], k))
            subset = sorted(ranked[:budget])
        for k in subset:
            r_wk[w, k] = 0.0
        for i, (d, ww, c) in enumerate(entries):
            if ww != w:
                continue
            full = collapsed_message(i, entries, mu, D, W, K, alpha, beta)
            # Unnormalized restricted update, rescaled to the subset's old mass.
            th, ph = stats(entries, mu, D, W, K)
            nk = ph.sum(axis=0)
            own = c * mu[i]
            p = (np.maximum(th[d] - own, 0) + alpha) * (np.maximum(ph[w] - own, 0) + beta) / (
                np.maximum(nk - own, 0) + W * beta)
            new = mu[i].copy()
            if len(subset) == K:
                new = full
            else:
                mass = mu[i][subset].sum()
                new[subset] = p[subset] / p[subset].sum() * mass
            r_wk[w] += c * np.abs(new - mu[i])
            mu[i] = new
    return mu


def em_iteration(x, theta, phi, alpha, beta):
    """One E-step then M-step on a dense corpus; returns ``(mu, theta, phi)``."""
    D, W = x.shape
    K = theta.shape[1]
    mu = np.zeros((D, W, K))
    for d in range(D):
        for w in range(W):
            if x[d, w]:
                p = theta[d] * phi[w]
                mu[d, w] = p / p.sum()
    th_hat = np.einsum("dw,dwk->dk", x, mu)
    ph_hat = np.einsum("dw,dwk->wk", x, mu)
    theta = (th_hat + alpha - 1) / (th_hat.sum(1, keepdims=True) + K * (alpha - 1))
    phi = (ph_hat + beta - 1) / (ph_hat.sum(0) + W * (beta - 1))
    return mu, theta, phi


def log_likelihood(x, theta, phi):
    """``sum_{d,w} x log sum_k theta_dk phi_wk`` by explicit loops."""
    total = 0.0
    for d in range(x.shape[0]):
        for w in range(x.shape[1]):
            if x[d, w]:
                total += x[d, w] * np.log(sum(theta[d, k] * phi[w, k] for k in range(theta.shape[1])))
    return total


def fold_in_fixed_point(word_counts, phi_rows, alpha, iters=10000, tol=1e-14):
    """Jacobi iteration ``mu_i ~ (sum_{j != i} x_j mu_j + alpha) phi_i`` to a fixed point."""
    n, K = phi_rows.shape
    mu = phi_rows / phi_rows.sum(1, keepdims=True)
    for _ in range(iters):
        th = (word_counts[:, None] * mu).sum(0)
        new = np.empty_like(mu)
        for i in range(n):
            p = (np.maximum(th - word_counts[i] * mu[i], 0) + alpha) * phi_rows[i]
            new[i] = p / p.sum()
        if np.abs(new - mu).max() < tol:
            mu = new
            break
        mu = new
    return (word_counts[:, None] * mu).sum(0)
