"""Shared fixtures and independent oracles used across the test suite."""

import itertools
import socket

import numpy as np
import pytest


def free_udp_port() -> int:
    sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    sock.bind(("127.0.0.1", 0))
    port = sock.getsockname()[1]
    sock.close()
    return port


@pytest.fixture
def udp_port():
    return free_udp_port()


# ---- independent oracles -------------------------------------------------

def brute_force_ks(a, b) -> float:
    """KS distance by counting F(x) = #{v <= x}/n at every pooled point."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    best = 0.0
    for x in np.concatenate([a, b]):
        fa = np.count_nonzero(a <= x) / len(a)
        fb = np.count_nonzero(b <= x) / len(b)
        best = max(best, abs(fa - fb))
    return best


def enumerate_min_labeling_cost(costs, beta):
    """Minimum of per-point cost + beta per switch over all C^T labelings."""
    T, C = costs.shape
    best = np.inf
    arange = np.arange(T)
    for labels in itertools.product(range(C), repeat=T):
        labels = np.array(labels)
        total = costs[arange, labels].sum() + beta * np.count_nonzero(labels[1:] != labels[:-1])
        if total < best:
            best = total
    return best


def enumerate_min_labeling_cost_fast(costs, beta):
    """Vectorized version of the exhaustive oracle for larger T."""
    T, C = costs.shape
    n = C ** T
    codes = (np.arange(n)[:, None] // (C ** np.arange(T)[::-1]) % C).astype(np.int8)
    point = costs[np.arange(T)[None, :], codes].sum(axis=1)
    switches = np.count_nonzero(codes[:, 1:] != codes[:, :-1], axis=1)
    return float((point + beta * switches).min())


# ---- synthetic graphical-model regimes ------------------------------------

def sparse_precision(n, rng, density=0.3, strength=0.4):
    """Random sparse symmetric positive-definite precision matrix."""
    theta = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            if rng.random() < density:
                theta[i, j] = theta[j, i] = strength * rng.choice([-1.0, 1.0])
    # diagonal dominance keeps it positive definite
    np.fill_diagonal(theta, np.abs(theta).sum(axis=1) + 1.0)
    return theta


def regime_series(n_regimes=3, seconds_each=1000, n_variates=5, seed=7):
    """Concatenated samples from distinct sparse Gaussian graphical models.

    Returns (X, truth) where truth marks the generating regime per second.
    """
    rng = np.random.default_rng(seed)
    chunks, truth = [], []
    for r in range(n_regimes):
        theta = sparse_precision(n_variates, rng)
        cov = np.linalg.inv(theta)
        mean = rng.normal(scale=2.0, size=n_variates) + 3.0 * r
        chunks.append(rng.multivariate_normal(mean, cov, size=seconds_each))
        truth.extend([r] * seconds_each)
    return np.vstack(chunks), np.array(truth)


def permutation_accuracy(truth, labels) -> float:
    """Best label-permutation accuracy via Hungarian assignment."""
    from scipy.optimize import linear_sum_assignment

    k = max(truth.max(), labels.max()) + 1
    confusion = np.zeros((k, k))
    for t, l in zip(truth, labels):
        confusion[t, l] += 1
    rows, cols = linear_sum_assignment(-confusion)
    return confusion[rows, cols].sum() / len(truth)
