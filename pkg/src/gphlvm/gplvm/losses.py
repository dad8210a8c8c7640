"""Objective terms: GP marginal likelihood, latent prior, stress and distortion.

Latents are (N, Q+1) Lorentz points for ``geometry="lorentz"`` and (N, Q)
vectors for ``geometry="euclidean"``. All functions are differentiable
``torch`` expressions.
"""

from __future__ import annotations

import math

import torch

from ..distributions import WrappedNormal
from ..errors import DomainError, NumericalError, ValidationError
from ..manifold import _TINY, _distance

LOG_2PI = math.log(2.0 * math.pi)


def latent_distances(X, geometry: str, Y=None):
    """Pairwise latent distances under the model geometry."""
    Y = X if Y is None else Y
    if geometry == "lorentz":
        return _distance(X[:, None, :], Y[None, :, :])
    sq = ((X[:, None, :] - Y[None, :, :]) ** 2).sum(-1)
    # zero gradient at coincident points instead of NaN
    d = torch.sqrt(torch.clamp(sq, min=_TINY))
    return torch.where(sq > _TINY, d, torch.zeros_like(d))


def log_marginal(Y, K, noise):
    """``sum_d log N(y_d; 0, K + noise_d I)`` with one shared Gram ``K``.

    Parameters
    ----------
    Y : tensor (N, D)
    K : tensor (N, N)
        Latent Gram matrix (already jittered if needed).
    noise : tensor (D,)
        Per-dimension noise variances.
    """
    N, D = Y.shape
    Y = torch.as_tensor(Y, dtype=K.dtype)
    noise = torch.as_tensor(noise, dtype=K.dtype)
    eye = torch.eye(N, dtype=K.dtype)
    A = K[None, :, :] + noise[:, None, None] * eye
    L, info = torch.linalg.cholesky_ex(A)
    if bool((info != 0).any()):
        raise NumericalError("Cholesky of K + noise I failed in the marginal likelihood")
    y = Y.T.unsqueeze(-1)
    alpha = torch.linalg.solve_triangular(L, y, upper=False)
    quad = (alpha**2).sum((-1, -2))
    logdet = 2.0 * torch.log(torch.diagonal(L, dim1=-2, dim2=-1)).sum(-1)
    return (-0.5 * quad - 0.5 * logdet - 0.5 * N * LOG_2PI).sum()


def log_prior(X, geometry: str, alpha: float = 1.0):
    """Sum of latent prior log-densities.

    Wrapped normal ``N_L(mu0, alpha I)`` on the hyperboloid, ``N(0, alpha I)``
    in the Euclidean model.
    """
    if geometry == "lorentz":
        prior = WrappedNormal.isotropic(_origin_like(X), alpha)
        return prior.log_prob(X).sum()
    Q = X.shape[-1]
    return (-0.5 * (X**2).sum(-1) / alpha - 0.5 * Q * (LOG_2PI + math.log(alpha))).sum()


def _origin_like(X):
    o = torch.zeros(X.shape[-1], dtype=X.dtype)
    o[0] = 1.0
    return o


def _upper(n):
    return torch.triu_indices(n, n, offset=1)


def stress_loss(X, graph_dist, geometry: str):
    """``sum_{i<j} (d_G(c_i, c_j) - d(x_i, x_j))^2``.

    ``graph_dist`` is the (N, N) matrix of graph distances between the
    points' classes.
    """
    iu = _upper(X.shape[0])
    d = latent_distances(X, geometry)[iu[0], iu[1]]
    g = torch.as_tensor(graph_dist, dtype=X.dtype)[iu[0], iu[1]]
    return ((g - d) ** 2).sum()


def distortion_loss(X, graph_dist, geometry: str, variant: str = "vanilla", *,
                    lambda1: float = 0.01, lambda2: float = 10.0, eps: float = 0.1):
    """Ratio-based distortion between latent and graph distances.

    ``vanilla``: ``sum_{i<j} (d^2 / (d_G^2 + eps) - 1)^2``; with ``eps = 0``
    it is undefined for same-class pairs and raises DomainError.
    ``modified``: same-class pairs contribute ``lambda1 * d``, the others
    ``lambda2 * (d^2 / d_G^2 - 1)^2``.
    """
    iu = _upper(X.shape[0])
    d = latent_distances(X, geometry)[iu[0], iu[1]]
    g = torch.as_tensor(graph_dist, dtype=X.dtype)[iu[0], iu[1]]
    same = g == 0
    if variant == "vanilla":
        if eps == 0 and bool(same.any()):
            raise DomainError("vanilla distortion is undefined for same-class pairs unless eps > 0")
        return (((d**2) / (g**2 + eps) - 1.0) ** 2).sum()
    if variant == "modified":
        safe_g = torch.where(same, torch.ones_like(g), g)
        ratio_term = ((d**2) / safe_g**2 - 1.0) ** 2
        return torch.where(same, lambda1 * d, lambda2 * ratio_term).sum()
    raise ValidationError(f"unknown distortion variant {variant!r}")


def gamma_log_prior(kappa, shape: float, rate: float):
    """Log-density of ``Gamma(shape, rate)`` at ``kappa``."""
    return (
        shape * math.log(rate) - math.lgamma(shape) + (shape - 1.0) * torch.log(kappa) - rate * kappa
    )
