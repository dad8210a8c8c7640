"""Riemannian Adam on products of hyperboloids and a Euclidean block.

Hyperbolic parameters are tensors of Lorentz points with shape (N, Q+1);
each row is one manifold factor with its own scalar second moment.
Euclidean parameters follow the standard Adam recursion exactly (same
operation order as ``torch.optim.Adam``), so a run with no hyperbolic
block reproduces plain Adam.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch

from .errors import NumericalError, ValidationError
from .manifold import (
    _as_tensor,
    _exp_map,
    _inner,
    _lift,
    _parallel_transport,
    _project_to_tangent,
    interop,
    tangent_basis,
)


@interop
def riemannian_gradient(x, g):
    """Ambient Euclidean gradient -> Riemannian gradient on the hyperboloid.

    Applies the inverse metric ``J = diag(-1, 1, ..., 1)`` and projects to
    the tangent space at ``x``.
    """
    jg = torch.cat([-g[..., :1], g[..., 1:]], dim=-1)
    return _project_to_tangent(x, jg)


def _rgrad(x, g):
    jg = torch.cat([-g[..., :1], g[..., 1:]], dim=-1)
    return _project_to_tangent(x, jg)


@dataclass
class ProductParam:
    """Named leaf tensors: ``hyperbolic`` rows live on L^Q, ``euclidean`` are free."""

    hyperbolic: dict = field(default_factory=dict)
    euclidean: dict = field(default_factory=dict)

    def __post_init__(self):
        for name, t in {**self.hyperbolic, **self.euclidean}.items():
            if not (isinstance(t, torch.Tensor) and t.is_leaf and t.requires_grad):
                raise ValidationError(f"parameter {name!r} must be a leaf tensor requiring grad")
        overlap = set(self.hyperbolic) & set(self.euclidean)
        if overlap:
            raise ValidationError(f"parameter names used twice: {sorted(overlap)}")

    def tensors(self):
        return list(self.hyperbolic.values()) + list(self.euclidean.values())


class RiemannianAdam:
    """Adam with parallel-transported first moments.

    For each hyperbolic row ``x`` with Riemannian gradient ``g``::

        m <- b1 * tau + (1 - b1) * g
        v <- b2 * v + (1 - b2) * <g, g>_L
        x' = Exp_x(-lr * m_hat / (sqrt(v_hat) + eps))
        tau <- P_{x -> x'}(m)

    Parameters
    ----------
    params : ProductParam
    lr : float
        Step size for the hyperbolic block.
    euclidean_lr : float, optional
        Step size for the Euclidean block (defaults to ``lr``).
    betas, eps
        Adam constants.
    """

    def __init__(self, params: ProductParam, lr: float, euclidean_lr: float | None = None,
                 betas=(0.9, 0.999), eps: float = 1e-8):
        if lr <= 0 or (euclidean_lr is not None and euclidean_lr <= 0):
            raise ValidationError("learning rates must be > 0")
        b1, b2 = betas
        if not (0 <= b1 < 1 and 0 <= b2 < 1):
            raise ValidationError("betas must lie in [0, 1)")
        self.params = params
        self.lr = float(lr)
        self.euclidean_lr = float(lr if euclidean_lr is None else euclidean_lr)
        self.betas = (float(b1), float(b2))
        self.eps = float(eps)
        self.t = 0
        self.m = {k: torch.zeros_like(v) for k, v in {**params.hyperbolic, **params.euclidean}.items()}
        self.v = {k: torch.zeros_like(v) for k, v in params.euclidean.items()}
        self.v.update({k: torch.zeros(v.shape[:-1], dtype=v.dtype) for k, v in params.hyperbolic.items()})

    def zero_grad(self):
        for p in self.params.tensors():
            p.grad = None

    def _check(self):
        for name, p in {**self.params.hyperbolic, **self.params.euclidean}.items():
            if p.grad is None:
                continue
            if not bool(torch.isfinite(p.grad).all()):
                raise NumericalError(f"non-finite gradient for parameter {name!r}; step rejected",
                                     iteration=self.t)

    @torch.no_grad()
    def step(self):
        self._check()
        self.t += 1
        b1, b2 = self.betas
        bc1 = 1.0 - b1**self.t
        bc2 = 1.0 - b2**self.t
        for name, p in self.params.euclidean.items():
            if p.grad is None:
                continue
            g = p.grad
            m, v = self.m[name], self.v[name]
            m.lerp_(g, 1.0 - b1)
            v.mul_(b2).addcmul_(g, g.conj(), value=1.0 - b2)
            denom = (v.sqrt() / math.sqrt(bc2)).add_(self.eps)
            p.addcdiv_(m, denom, value=-self.euclidean_lr / bc1)
        for name, x in self.params.hyperbolic.items():
            if x.grad is None:
                continue
            g = _rgrad(x, x.grad)
            m = b1 * self.m[name] + (1.0 - b1) * g
            v = b2 * self.v[name] + (1.0 - b2) * torch.clamp(_inner(g, g), min=0.0)
            direction = (m / bc1) / (torch.sqrt(v / bc2) + self.eps)[..., None]
            x_new = _lift(_exp_map(x, -self.lr * direction)[..., 1:])
            tau = _project_to_tangent(x_new, _parallel_transport(x, x_new, m))
            x.copy_(x_new)
            self.m[name] = tau
            self.v[name] = v

    def state_dict(self) -> dict:
        return {"t": self.t, "m": {k: v.clone() for k, v in self.m.items()},
                "v": {k: v.clone() for k, v in self.v.items()}}


def check_gradients(fn, params: ProductParam, eps: float = 1e-5) -> dict:
    """Compare autograd gradients of ``fn()`` with central finite differences.

    Hyperbolic rows are perturbed on the manifold along an orthonormal
    tangent basis (``Exp_x(+-eps e_k)``) and compared with the Riemannian
    gradient; Euclidean entries use ordinary central differences. Returns
    the relative error ``|fd - ad| / max(|fd|, |ad|)`` per parameter name.
    """
    for p in params.tensors():
        p.grad = None
    loss = fn()
    loss.backward()
    errors = {}
    with torch.no_grad():
        for name, X in params.hyperbolic.items():
            rg = _rgrad(X, X.grad)
            fd, ad = [], []
            rows = X.reshape(-1, X.shape[-1])
            rg_rows = rg.reshape(-1, X.shape[-1])
            for i in range(rows.shape[0]):
                x0 = rows[i].clone()
                for e in tangent_basis(x0):
                    vals = []
                    for sgn in (1.0, -1.0):
                        rows[i] = _exp_map(x0, sgn * eps * e)
                        vals.append(float(fn()))
                    rows[i] = x0
                    fd.append((vals[0] - vals[1]) / (2.0 * eps))
                    ad.append(float(_inner(rg_rows[i], e)))
            errors[name] = _rel(fd, ad)
        for name, P in params.euclidean.items():
            flat = P.view(-1)
            fd = []
            for i in range(flat.numel()):
                v0 = float(flat[i])
                vals = []
                for sgn in (1.0, -1.0):
                    flat[i] = v0 + sgn * eps
                    vals.append(float(fn()))
                flat[i] = v0
                fd.append((vals[0] - vals[1]) / (2.0 * eps))
            errors[name] = _rel(fd, P.grad.reshape(-1).tolist())
    return errors


def _rel(fd, ad) -> float:
    fd = _as_tensor(fd)
    ad = _as_tensor(ad)
    scale = max(float(torch.linalg.vector_norm(fd)), float(torch.linalg.vector_norm(ad)), 1e-300)
    return float(torch.linalg.vector_norm(fd - ad)) / scale
