"""Heavy-tailed temporal track model: multivariate Cauchy over coordinate
series, kernel-built scale matrices, point uncertainty, and the loss stack."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.special import gammaln

SIGMA_FLOOR = 1e-3
BCE_EPS = 1e-7


class NotPositiveDefinite(Exception):
    pass


@dataclass
class TrackDistribution:
    """Location vectors and SPD scale matrices for the x and y series of one track."""

    mu_a: np.ndarray  # (S,)
    mu_b: np.ndarray  # (S,)
    sigma_a: np.ndarray  # (S, S) SPD
    sigma_b: np.ndarray  # (S, S) SPD

    def __post_init__(self):
        for m in (self.sigma_a, self.sigma_b):
            if np.abs(m - m.T).max() > 1e-10:
                raise NotPositiveDefinite("scale matrix not symmetric")

    @property
    def phi(self):
        """Per-frame uncertainty: sum of the two diagonal scale entries."""
        return point_uncertainty(self.sigma_a, self.sigma_b)

    @property
    def location(self):
        """Predicted trajectory (S, 2) implied by the location vectors."""
        return np.stack([self.mu_a, self.mu_b], axis=1)


def build_scale_matrix(features, sigma=SIGMA_FLOOR):
    """Linear-kernel Gram matrix plus a positive diagonal: F F^T + sigma I."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    f = np.atleast_2d(np.asarray(features, dtype=float))
    return f @ f.T + sigma * np.eye(f.shape[0])


def point_uncertainty(sigma_a, sigma_b):
    return np.diag(sigma_a) + np.diag(sigma_b)


def _chol(sigma):
    try:
        return cho_factor(sigma, lower=True)
    except np.linalg.LinAlgError as e:
        raise NotPositiveDefinite(str(e)) from e
    except ValueError as e:
        raise NotPositiveDefinite(str(e)) from e


def cauchy_logpdf(a, mu, sigma):
    """Log density of the multivariate Cauchy with location mu, scale sigma."""
    a = np.asarray(a, dtype=float).reshape(-1)
    mu = np.asarray(mu, dtype=float).reshape(-1)
    s = len(a)
    factor = _chol(sigma)
    logdet = 2.0 * np.sum(np.log(np.diag(factor[0])))
    r = a - mu
    q = float(r @ cho_solve(factor, r))
    return (
        gammaln((1 + s) / 2.0)
        - gammaln(0.5)
        - (s / 2.0) * np.log(np.pi)
        - 0.5 * logdet
        - ((1 + s) / 2.0) * np.log1p(q)
    )


def cauchy_nll_grads(a, mu, sigma):
    """Gradients of -logpdf w.r.t. the location mu and scale sigma."""
    a = np.asarray(a, dtype=float).reshape(-1)
    mu = np.asarray(mu, dtype=float).reshape(-1)
    s = len(a)
    factor = _chol(sigma)
    r = a - mu
    sir = cho_solve(factor, r)
    q = float(r @ sir)
    sigma_inv = cho_solve(factor, np.eye(s))
    d_mu = -(1 + s) * sir / (1.0 + q)
    d_sigma = 0.5 * sigma_inv - ((1 + s) / 2.0) * np.outer(sir, sir) / (1.0 + q)
    return d_mu, d_sigma


def track_nll(x, x_star, sigma_a, sigma_b):
    """Negative log-likelihood of the ground-truth track under the predicted
    per-coordinate Cauchy distributions (x supplies the locations)."""
    x = np.asarray(x, dtype=float)
    x_star = np.asarray(x_star, dtype=float)
    if x.shape != x_star.shape:
        raise ValueError("trajectory shapes disagree")
    return -cauchy_logpdf(x_star[:, 0], x[:, 0], sigma_a) - cauchy_logpdf(
        x_star[:, 1], x[:, 1], sigma_b
    )


def track_nll_grad_x(x, x_star, sigma_a, sigma_b):
    """Analytic gradient of track_nll w.r.t. the predicted trajectory x."""
    ga, _ = cauchy_nll_grads(x_star[:, 0], x[:, 0], sigma_a)
    gb, _ = cauchy_nll_grads(x_star[:, 1], x[:, 1], sigma_b)
    return np.stack([ga, gb], axis=1)


def track_nll_from_features(x, x_star, feats_a, feats_b, sigma=SIGMA_FLOOR):
    """track_nll with scale matrices built from projected features.

    Returns (nll, d_x, d_feats_a, d_feats_b); the feature gradients chain
    through the Gram construction (dL/dF = 2 G F for symmetric G = dL/dSigma).
    """
    sigma_a = build_scale_matrix(feats_a, sigma)
    sigma_b = build_scale_matrix(feats_b, sigma)
    nll = track_nll(x, x_star, sigma_a, sigma_b)
    ga_mu, ga_s = cauchy_nll_grads(x_star[:, 0], x[:, 0], sigma_a)
    gb_mu, gb_s = cauchy_nll_grads(x_star[:, 1], x[:, 1], sigma_b)
    d_x = np.stack([ga_mu, gb_mu], axis=1)
    d_fa = 2.0 * ga_s @ np.atleast_2d(feats_a)
    d_fb = 2.0 * gb_s @ np.atleast_2d(feats_b)
    return nll, d_x, d_fa, d_fb


def main_loss(iterates, x_star, gamma=0.8):
    """Exponentially discounted sum of per-iterate track NLLs.

    iterates: sequence of (x, sigma_a, sigma_b), earliest refinement first.
    """
    if len(iterates) == 0:
        raise ValueError("need at least one iterate")
    big_k = len(iterates)
    total = 0.0
    for k, (x, sa, sb) in enumerate(iterates, start=1):
        total += gamma ** (big_k - k) * track_nll(x, x_star, sa, sb)
    return total


def bce_loss(pred, gt):
    """Mean binary cross entropy, minimizable form."""
    p = np.clip(np.asarray(pred, dtype=float), BCE_EPS, 1.0 - BCE_EPS)
    g = np.asarray(gt, dtype=float)
    return float(np.mean(-((1.0 - g) * np.log(1.0 - p) + g * np.log(p))))


def bce_grad(pred, gt):
    """Gradient of bce_loss w.r.t. pred (zero where pred hit the clamp)."""
    p = np.asarray(pred, dtype=float)
    g = np.asarray(gt, dtype=float)
    inside = (p > BCE_EPS) & (p < 1.0 - BCE_EPS)
    pc = np.clip(p, BCE_EPS, 1.0 - BCE_EPS)
    grad = ((1.0 - g) / (1.0 - pc) - g / pc) / p.size
    return np.where(inside, grad, 0.0)


def total_loss(l_main, l_vis, l_dyn, weights=(1.0, 0.5, 0.5)):
    w1, w2, w3 = weights
    return w1 * l_main + w2 * l_vis + w3 * l_dyn
