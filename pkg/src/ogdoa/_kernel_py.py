"""Pure-numpy EM step, composed from the public inference operations.

This is the reference implementation the compiled kernel is tested
against. It materializes the full N x N posterior covariance each
iteration, which the compiled kernel avoids.
"""

from __future__ import annotations

import numpy as np

from .arraymodel import perturbed_manifold
from .inference import (
    HyperState,
    beta_quadratic,
    log_evidence,
    posterior_update,
    support_indices,
    update_alpha,
    update_alpha0,
    update_beta,
)


def prepare(dictionary, y_working):
    return dictionary, np.ascontiguousarray(y_working, dtype=complex)


def step(ctx, alpha, alpha0, beta, config):
    dictionary, y_working = ctx
    state = HyperState(alpha=alpha, alpha0=alpha0, beta=beta)
    evidence = log_evidence(y_working, dictionary, state, config)
    phi = perturbed_manifold(dictionary, beta)
    posterior = posterior_update(y_working, phi, state)
    t_eff = y_working.shape[1]
    alpha_new = update_alpha(posterior, config, t_eff)
    alpha0_new = update_alpha0(y_working, phi, posterior, config, t_eff)
    support = support_indices(alpha_new, config.sources)
    qf = beta_quadratic(y_working, dictionary, posterior, support)
    beta_new = update_beta(qf, dictionary.grid.interval, beta)
    return alpha_new, alpha0_new, beta_new, evidence
