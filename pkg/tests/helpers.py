"""Shared oracles for the test suite."""

import numpy as np

from privtrain import models


def finite_difference_grad(params, x, y, loss, h=1e-5):
    """Central finite differences through the per-sample loss."""
    flat = models.flatten_params(params)
    num = np.zeros_like(flat)
    for i in range(flat.size):
        up = flat.copy()
        up[i] += h
        dn = flat.copy()
        dn[i] -= h
        num[i] = (
            models.per_sample_loss(models.unflatten_params(params, up), x, y, loss)
            - models.per_sample_loss(models.unflatten_params(params, dn), x, y, loss)
        ) / (2 * h)
    return num
