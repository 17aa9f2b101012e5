"""Shared test helpers: finite-difference gradient oracle and tiny builders."""

from __future__ import annotations

import numpy as np
import pytest

from cirlab.model import ModelState, init_model


def finite_difference_grads(params: dict[str, np.ndarray], value_fn, step: float = 1e-5):
    """Central finite differences of value_fn() w.r.t. every entry of every param.

    Perturbs the arrays in place and restores them; value_fn must read the
    same arrays each call.
    """
    grads = {}
    for name, arr in params.items():
        g = np.zeros_like(arr)
        flat, gflat = arr.ravel(), g.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = value_fn()
            flat[i] = orig - step
            down = value_fn()
            flat[i] = orig
            gflat[i] = (up - down) / (2.0 * step)
        grads[name] = g
    return grads


def assert_grads_match(analytic, numeric, rtol=1e-4, atol=1e-7, context=""):
    for name in numeric:
        a, n = analytic[name], numeric[name]
        scale = np.maximum(np.abs(a), np.abs(n))
        bad = np.abs(a - n) > atol + rtol * scale
        assert not bad.any(), (
            f"{context}{name}: {bad.sum()} mismatched partials, "
            f"max abs err {np.abs(a - n).max():.3e}"
        )


def tiny_model(rng_seed=0, d_in=4, hidden=(5, 3), n_classes=3, activation="relu") -> ModelState:
    return init_model(d_in, hidden, n_classes, np.random.default_rng(rng_seed), activation)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
