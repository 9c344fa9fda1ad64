import math

import numpy as np
import pytest

import oracles


def test_quadrature_spec_validation():
    assert oracles.QuadratureSpec().n_points == 20001
    for bad in (1, 2, 100):
        with pytest.raises(ValueError):
            oracles.QuadratureSpec(n_points=bad)


def test_kl_quadrature_examples():
    assert abs(oracles.kl_quadrature(1, 1, 1, 1)) < 1e-6
    assert oracles.kl_quadrature(1, 2, 1, 1) == pytest.approx(math.log(2) - 0.5, abs=1e-4)
    with pytest.raises(ValueError):
        oracles.kl_quadrature(0.0, 1, 1, 1)


def test_kl_quadrature_nonnegative():
    rng = np.random.default_rng(3)
    for a, b, al, be in rng.uniform(0.6, 4.0, size=(25, 4)):
        assert oracles.kl_quadrature(a, b, al, be) > -1e-6


def test_naive_loss_single_node_and_tau_scaling():
    rng = np.random.default_rng(0)
    assert oracles.naive_grace_loss(rng.standard_normal((1, 4)), rng.standard_normal((1, 4)), 0.3) \
        == pytest.approx(0.0, abs=1e-15)
    assert oracles.naive_grace_loss(np.eye(2), np.eye(2), 1.0) == pytest.approx(0.55144, abs=1e-4)


def test_bfs_matches_floyd_warshall():
    rng = np.random.default_rng(1)
    n = 12
    edges = [(u, v) for u in range(n) for v in range(u + 1, n) if rng.random() < 0.2]
    D = oracles.floyd_warshall(n, edges)
    for s in range(n):
        bfs = oracles.bfs_distances(n, edges, s)
        assert [(-1 if math.isinf(d) else d) for d in D[s]] == bfs
