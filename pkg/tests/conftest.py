"""Shared test oracles.

Two independent references live here so implementation and check never share
code: a brute-force path enumerator for linear-chain scoring, and a central
finite-difference checker for analytic gradients.
"""

import itertools
import math

import numpy as np
import torch


def oracle_path_score(emissions, table, path):
    """Plain-float score of one tag path."""
    em = emissions.detach().numpy()
    trans = table.trans.detach().numpy()
    score = float(table.start[path[0]]) + float(em[0, path[0]])
    for i in range(1, len(path)):
        score += float(trans[path[i - 1], path[i]]) + float(em[i, path[i]])
    return score + float(table.stop[path[-1]])


def oracle_log_partition(emissions, table):
    """Log-sum-exp over every tag path, enumerated exhaustively."""
    n, t = emissions.shape
    scores = [
        oracle_path_score(emissions, table, path)
        for path in itertools.product(range(t), repeat=n)
    ]
    return float(np.logaddexp.reduce(np.array(scores, dtype=np.float64)))


def oracle_best_path(emissions, table):
    """Highest-scoring path; equal scores break toward the lexicographically
    smallest index sequence."""
    n, t = emissions.shape
    best_path = None
    best = -math.inf
    for path in itertools.product(range(t), repeat=n):
        s = oracle_path_score(emissions, table, path)
        if s > best:
            best, best_path = s, path
    return list(best_path)


def assert_grad_matches_fd(loss_fn, params, *, rng, step=1e-5, rel_tol=1e-4, abs_floor=1e-7):
    """Check autograd against central finite differences.

    For every tensor with a defined gradient the analytic directional
    derivative along one random unit direction is compared with the symmetric
    difference quotient of ``loss_fn``. ``loss_fn`` must be a deterministic
    pure function of ``params`` (a name -> leaf-tensor mapping).
    """
    for p in params.values():
        p.requires_grad_(True)
    loss = loss_fn(params)
    grads = torch.autograd.grad(loss, list(params.values()), allow_unused=True)
    checked = 0
    for (name, p), g in zip(params.items(), grads):
        if g is None:
            continue
        direction = torch.from_numpy(rng.standard_normal(tuple(p.shape)))
        direction = direction / torch.linalg.vector_norm(direction).clamp_min(1e-12)
        analytic = float((g * direction).sum())
        with torch.no_grad():
            p.add_(step * direction)
            up = float(loss_fn(params))
            p.sub_(2.0 * step * direction)
            down = float(loss_fn(params))
            p.add_(step * direction)
        numeric = (up - down) / (2.0 * step)
        err = abs(analytic - numeric)
        bound = max(abs_floor, rel_tol * max(abs(analytic), abs(numeric)))
        assert err <= bound, (
            f"gradient mismatch for {name}: analytic {analytic:.10g}, "
            f"numeric {numeric:.10g}, error {err:.3g} > {bound:.3g}"
        )
        checked += 1
    assert checked > 0, "no tensor received a gradient"
    return checked
