"""Density-ratio loss for change estimation between two Markov networks.

The ratio of the two joint densities p/q is modeled as

    r(x; delta) = exp(sum_e <delta_e, psi_e(x)>) / N(delta),

so the change parameters delta are fit directly, without estimating either
network.  Fitting minimizes the negative mean log-ratio over the numerator
sample with the normalizer replaced by its empirical average over the
denominator sample:

    loss(delta) = -(1/n_p) sum_i <delta, Psi_i^p> + log (1/n_q) sum_j exp(<delta, Psi_j^q>).

The log term is a log-mean-exp, computed max-shifted.  Its gradient is a
softmax-weighted feature average minus the numerator feature mean; the
weights w_j are exactly rhat(x_j)/n_q for the fitted ratio.  The curvature
(sample Fisher information of the denominator reweighting) is the weighted
feature second moment minus the outer product of the weighted mean.
"""

from __future__ import annotations

import math

import numpy as np

from .exceptions import SizeCapError
from .features import DeltaParams, FeatureTensor, _check_alignment, check_pair


def _softmax(scores: np.ndarray) -> np.ndarray:
    s = scores - np.max(scores)
    e = np.exp(s)
    return e / e.sum()


def _loss_value(d: np.ndarray, mean_p: np.ndarray, q: np.ndarray) -> float:
    # -<mean_p, d> + logmeanexp(Q d); identical to the per-sample average by
    # linearity, and one dot product instead of an (n_p x E) matvec.
    s = q @ d
    hi = float(np.max(s))
    lme = hi + math.log(float(np.sum(np.exp(s - hi)))) - math.log(s.shape[0])
    return float(-mean_p @ d + lme)


def _loss_and_grad(d: np.ndarray, mean_p: np.ndarray, q: np.ndarray) -> tuple[float, np.ndarray]:
    if not np.any(d):
        # uniform weights at delta = 0; the plain column mean keeps the
        # mean-difference identity exact, which the lambda_max bound needs
        return 0.0, q.mean(axis=0) - mean_p
    s = q @ d
    hi = float(np.max(s))
    e = np.exp(s - hi)
    tot = float(e.sum())
    loss = float(-mean_p @ d + hi + math.log(tot) - math.log(s.shape[0]))
    w = e / tot
    return loss, w @ q - mean_p


def _grad_value(d: np.ndarray, mean_p: np.ndarray, q: np.ndarray) -> np.ndarray:
    if not np.any(d):
        # at delta = 0 the weights are uniform; plain column means keep the
        # mean-difference identity exact
        return q.mean(axis=0) - mean_p
    w = _softmax(q @ d)
    return w @ q - mean_p


def loss(delta: DeltaParams, fp: FeatureTensor, fq: FeatureTensor) -> float:
    """Negative empirical log-ratio objective (without any penalty)."""
    check_pair(fp, fq)
    _check_alignment(delta, fq)
    return _loss_value(delta.values, fp.values.mean(axis=0), fq.values)


def gradient(delta: DeltaParams, fp: FeatureTensor, fq: FeatureTensor) -> np.ndarray:
    """Gradient of :func:`loss` with respect to the flat delta vector.

    Entries follow the edge set's sorted-(u, v) block layout.  At delta = 0
    this is exactly the denominator-minus-numerator feature mean difference.
    """
    check_pair(fp, fq)
    _check_alignment(delta, fq)
    return _grad_value(delta.values, fp.values.mean(axis=0), fq.values)


def hessian(delta: DeltaParams, fq: FeatureTensor, max_dim: int = 4096) -> np.ndarray:
    """Dense Hessian of the log-normalizer term at delta.

    This is the weighted feature covariance under the fitted-ratio weights,
    i.e. the sample Fisher information used by the theory diagnostics.  Only
    the denominator tensor enters; the numerator term of the loss is linear.

    Refuses widths above ``max_dim`` (the result is width x width dense).
    """
    _check_alignment(delta, fq)
    width = fq.width
    if width > max_dim:
        raise SizeCapError(f"hessian is {width}x{width} dense; cap is {max_dim}")
    q = fq.values
    w = _softmax(q @ delta.values)
    wq = q * w[:, None]
    h = q.T @ wq
    mu = w @ q
    h = h - np.outer(mu, mu)
    return (h + h.T) / 2.0
