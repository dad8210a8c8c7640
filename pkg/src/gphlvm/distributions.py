"""Wrapped normal distribution on the Lorentz model.

A sample is a Gaussian draw in the tangent space of the origin, moved to
the mean by parallel transport and pushed onto the hyperboloid with the
exponential map. The covariance is expressed in origin-tangent
coordinates.
"""

from __future__ import annotations

import math

import numpy as np
import torch

from .errors import DimensionError, ValidationError
from .manifold import (
    DTYPE,
    _as_tensor,
    _exp_map,
    _inner,
    _log_map,
    _parallel_transport,
    origin_tangent,
    safe_sqrt,
)


def log_sinhc(r):
    """``log(sinh(r) / r)`` with the series branch near zero."""
    small = r < 1e-3
    rs = torch.where(small, torch.ones_like(r), r)
    big = rs + torch.log1p(-torch.exp(-2.0 * rs)) - math.log(2.0) - torch.log(rs)
    return torch.where(small, r * r / 6.0, big)


class WrappedNormal:
    """Hyperbolic wrapped Gaussian ``N_L(mean, cov)``.

    Parameters
    ----------
    mean : array, shape (..., Q+1)
        Point(s) on the hyperboloid. A leading batch shape describes a
        product of independent distributions.
    cov : array, shape (..., Q, Q), optional
        Symmetric positive-definite covariance in origin-tangent coordinates.
    scale_tril : array, shape (..., Q, Q), optional
        Lower Cholesky factor of the covariance; skips validation and keeps
        gradients (used for variational parameters).
    """

    def __init__(self, mean, cov=None, *, scale_tril=None):
        self.mean = _as_tensor(mean)
        q = self.mean.shape[-1] - 1
        if (cov is None) == (scale_tril is None):
            raise ValidationError("give exactly one of cov or scale_tril")
        if scale_tril is None:
            cov = _as_tensor(cov)
            if cov.shape[-2:] != (q, q):
                raise DimensionError(f"covariance must be {q}x{q}, got {tuple(cov.shape[-2:])}")
            if float(torch.max(torch.abs(cov - cov.transpose(-1, -2)))) > 1e-10:
                raise ValidationError("covariance is not symmetric")
            scale_tril, info = torch.linalg.cholesky_ex(cov)
            if bool(torch.any(info != 0)):
                raise ValidationError("covariance is not positive definite")
        self.scale_tril = _as_tensor(scale_tril)
        self.q = q

    @classmethod
    def isotropic(cls, mean, variance: float):
        mean = _as_tensor(mean)
        q = mean.shape[-1] - 1
        return cls(mean, scale_tril=math.sqrt(variance) * torch.eye(q, dtype=DTYPE))

    @classmethod
    def diagonal(cls, mean, std):
        """Diagonal covariance from per-axis standard deviations (differentiable)."""
        return cls(mean, scale_tril=torch.diag_embed(_as_tensor(std)))

    @property
    def cov(self):
        return self.scale_tril @ self.scale_tril.transpose(-1, -2)

    @property
    def batch_shape(self):
        return self.mean.shape[:-1]

    def _origin(self):
        o = torch.zeros(self.q + 1, dtype=self.mean.dtype)
        o[0] = 1.0
        return o

    def rsample(self, eps):
        """Reparameterized samples from standard-normal noise ``eps`` of shape (..., Q)."""
        eps = _as_tensor(eps)
        v = (self.scale_tril @ eps.unsqueeze(-1)).squeeze(-1)
        o = self._origin()
        u = _parallel_transport(o, self.mean, origin_tangent(v))
        return _exp_map(self.mean.expand_as(u), u)

    def sample(self, n: int, rng: np.random.Generator):
        """``n`` draws, shape (n, *batch_shape, Q+1)."""
        if n < 1:
            raise ValidationError("sample count must be >= 1")
        eps = rng.standard_normal((n, *self.batch_shape, self.q))
        with torch.no_grad():
            return self.rsample(torch.as_tensor(eps))

    def tangent_coords(self, x):
        """Origin-tangent coordinates ``v`` and Lorentz norm of ``log_mean(x)``."""
        x = _as_tensor(x)
        mean = self.mean.expand_as(x)
        u = _log_map(mean, x)
        v = _parallel_transport(mean, self._origin().expand_as(x), u)
        r = safe_sqrt(_inner(u, u))
        return v[..., 1:], r

    def log_prob(self, x):
        v, r = self.tangent_coords(x)
        L = self.scale_tril.expand(*v.shape[:-1], self.q, self.q)
        z = torch.linalg.solve_triangular(L, v.unsqueeze(-1), upper=False).squeeze(-1)
        logdet = torch.log(torch.diagonal(L, dim1=-2, dim2=-1)).sum(-1)
        gauss = -0.5 * self.q * math.log(2.0 * math.pi) - logdet - 0.5 * (z * z).sum(-1)
        return gauss - (self.q - 1) * log_sinhc(r)


def kl_mc_from_eps(q: WrappedNormal, p: WrappedNormal, eps):
    """Differentiable MC estimate of KL(q || p) from fixed noise of shape (K, *batch, Q).

    Returns the per-distribution estimate (mean over the first axis).
    """
    x = q.rsample(eps)
    return (q.log_prob(x) - p.log_prob(x)).mean(0)


def kl_mc(q: WrappedNormal, p: WrappedNormal, k: int, rng: np.random.Generator, return_se: bool = False):
    """Monte-Carlo KL(q || p) from ``k`` samples of ``q``.

    With ``return_se`` the standard error of the estimate is returned too.
    """
    if k < 1:
        raise ValidationError("sample count must be >= 1")
    if q.q != p.q:
        raise DimensionError("q and p live on different hyperboloids")
    with torch.no_grad():
        x = q.sample(k, rng)
        terms = q.log_prob(x) - p.log_prob(x)
    est = terms.mean(0)
    if not return_se:
        return est.numpy() if est.ndim else float(est)
    se = terms.std(0, unbiased=True) / math.sqrt(k) if k > 1 else torch.zeros_like(est)
    if est.ndim:
        return est.numpy(), se.numpy()
    return float(est), float(se)
