"""Numpy implementation of the network forward/backward kernels.

This is the fallback selected when the compiled extension is unavailable
(see `backend`). Both backends share one contract:

  forward_batch(x, weights, biases, laterals) -> acts
    x            (B, n_in) float64, C-contiguous
    weights      weights[m][li] is the (n_out, n_in) matrix of module m, layer li
    biases       biases[m][li] is the matching (n_out,) bias
    laterals     laterals[m][li] is a list of (src, U, bU) triples describing
                 incoming lateral connections that read module src's layer-li
                 activations; empty at li == 0
    acts         acts[m][0] is x for every module; acts[m][li+1] the layer
                 output, tanh on hidden layers and identity on the last

  backward_batch(acts, weights, laterals, active, out_grad) -> (gw, gb, glat)
    Gradients of sum(out_grad * output_active) for the active module's own
    weights/biases and the lateral connections feeding it, summed over the
    batch. Other modules' activations are treated as constants: no gradient
    propagates through lateral sources.
"""

from __future__ import annotations

import numpy as np

NAME = "python"


def forward_batch(x, weights, biases, laterals):
    n_modules = len(weights)
    n_layers = len(weights[0])
    acts = [[x] for _ in range(n_modules)]
    for li in range(n_layers):
        prev = [acts[m][li] for m in range(n_modules)]
        for m in range(n_modules):
            z = prev[m] @ weights[m][li].T + biases[m][li]
            for src, u, ub in laterals[m][li]:
                z += prev[src] @ u.T + ub
            acts[m].append(np.tanh(z) if li < n_layers - 1 else z)
    return acts


def backward_batch(acts, weights, laterals, active, out_grad):
    n_layers = len(weights[active])
    gw = [None] * n_layers
    gb = [None] * n_layers
    glat = [[] for _ in range(n_layers)]
    delta = np.ascontiguousarray(out_grad, dtype=np.float64)
    for li in range(n_layers - 1, -1, -1):
        gw[li] = delta.T @ acts[active][li]
        gb[li] = delta.sum(axis=0)
        for src, _u, _ub in laterals[active][li]:
            glat[li].append((delta.T @ acts[src][li], gb[li].copy()))
        if li > 0:
            h = acts[active][li]
            delta = (delta @ weights[active][li]) * (1.0 - h * h)
    return gw, gb, glat
