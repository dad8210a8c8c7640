"""Covariance functions on Euclidean, hyperbolic and graph domains.

All matrix builders take ambient coordinates (Lorentz points for the
hyperbolic kinds, plain vectors for ``euclidean_se``, integer node indices
for the graph kinds) and return ``torch`` tensors that are differentiable
in the inputs and in tensor-valued hyperparameter overrides.

The L^2 heat kernel has no closed form. It is approximated with the
positive-definite Monte-Carlo feature map

    phi_l(z) = sqrt(w_l s_l tanh(pi s_l)) * exp((2 s_l i + 1) <z, b_l>)

over boundary directions ``b_l``, half-normal frequencies ``s_l`` and
weights ``w_l`` summing to one;
the Gram matrix is the cosine-normalized real part of the feature inner
products, so its diagonal is exactly the variance.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace
from functools import lru_cache

import numpy as np
import torch
from scipy.linalg import eigh_tridiagonal
from scipy.special import ndtri

from ..distributions import log_sinhc
from ..errors import NumericalError, ValidationError, DimensionError
from ..manifold import DTYPE, _as_tensor, _pairwise_distance, _to_poincare
from . import _backend

KINDS = (
    "euclidean_se",
    "hyperbolic_l2_mc",
    "hyperbolic_l3",
    "hyperbolic_matern",
    "graph_se",
    "graph_matern",
)
MATERN_KINDS = ("hyperbolic_matern", "graph_matern")
GRAPH_KINDS = ("graph_se", "graph_matern")
DEFAULT_MC_SAMPLES = 3000
DEFAULT_JITTER = 1e-6
MAX_JITTER = 1e-4


@dataclass(frozen=True)
class KernelSpec:
    """Tagged kernel description.

    Parameters
    ----------
    kind : str
        One of ``KINDS``.
    lengthscale, variance : float
        kappa and sigma^2, both > 0.
    nu : float, optional
        Smoothness, Matern kinds only (defaults to 2.5 there).
    mc_samples, mc_seed : int
        Feature count L and seed of the L^2 feature draw.
    quadrature_nodes : int
        Gauss-Laguerre nodes for the hyperbolic Matern integral.
    """

    kind: str
    lengthscale: float = 1.0
    variance: float = 1.0
    nu: float | None = None
    mc_samples: int = DEFAULT_MC_SAMPLES
    mc_seed: int = 0
    quadrature_nodes: int = 64

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown kernel kind {self.kind!r}; choose from {KINDS}")
        if not (self.lengthscale > 0 and math.isfinite(self.lengthscale)):
            raise ValidationError(f"lengthscale must be > 0, got {self.lengthscale}")
        if not (self.variance > 0 and math.isfinite(self.variance)):
            raise ValidationError(f"variance must be > 0, got {self.variance}")
        if self.kind in MATERN_KINDS:
            if self.nu is None:
                object.__setattr__(self, "nu", 2.5)
            if not self.nu > 0:
                raise ValidationError(f"smoothness nu must be > 0, got {self.nu}")
        elif self.nu is not None:
            raise ValidationError(f"nu only applies to Matern kernels, not {self.kind!r}")
        if int(self.mc_samples) < 1:
            raise ValidationError("mc_samples must be >= 1")
        if int(self.quadrature_nodes) < 1:
            raise ValidationError("quadrature_nodes must be >= 1")

    def replace(self, **changes) -> "KernelSpec":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "KernelSpec":
        unknown = set(doc) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValidationError(f"unknown kernel fields: {sorted(unknown)}")
        return cls(**doc)


@dataclass(frozen=True, eq=False)
class McFeatureSet:
    """Fixed random draws behind the L^2 feature map.

    Frequencies are ``base_freqs * scales / lengthscale`` so that the
    lengthscale stays a smooth parameter while the draws stay fixed.
    ``scales`` is 1 for the heat kernel; for the Matern mixture it holds
    ``sqrt(nu / t)`` at the Gauss-Laguerre node each feature was assigned.
    ``weights`` are the per-feature Monte-Carlo weights (they sum to 1).
    """

    directions: np.ndarray
    base_freqs: np.ndarray
    scales: np.ndarray
    weights: np.ndarray
    seed: int

    @property
    def size(self) -> int:
        return self.base_freqs.shape[0]

    @property
    def normalizer(self) -> float:
        return float(self.weights.sum())

    def frequencies(self, lengthscale):
        return torch.as_tensor(self.base_freqs * self.scales) / lengthscale


def _quadrature(nu: float, n: int):
    """Nodes and normalized weights for int t^(nu-1) e^(-t) f(t) dt.

    Golub-Welsch on the generalized Laguerre recurrence; normalizing the
    weights directly avoids the Gamma(nu) overflow for large ``nu``.
    """
    k = np.arange(n, dtype=float)
    diag = 2.0 * k + nu
    off = np.sqrt((k[1:]) * (k[1:] + nu - 1.0))
    t, vecs = eigh_tridiagonal(diag, off)
    w = vecs[0] ** 2
    return t, w / w.sum()


def _ring_sizes(L: int):
    rings = max(1, int(round(L / math.ceil(math.sqrt(L)))))
    return [len(a) for a in np.array_split(np.arange(L), rings)]


def sample_features(spec: KernelSpec, rng: np.random.Generator | None = None) -> McFeatureSet:
    """Seeded directions and frequencies for the L^2 feature map.

    Frequencies are stratified half-normal draws (unit scale; divided by
    the lengthscale at evaluation). Each frequency gets a ring of about
    sqrt(L) equally spaced directions with a random rotation, so every
    direction is marginally uniform on the circle while the angular
    average over a ring is nearly exact. That makes the estimate depend on
    the pair of points essentially only through their distance.
    """
    if spec.kind not in ("hyperbolic_l2_mc", "hyperbolic_matern"):
        raise ValidationError(f"kernel kind {spec.kind!r} has no Monte-Carlo features")
    rng = np.random.default_rng(spec.mc_seed) if rng is None else rng
    sizes = _ring_sizes(int(spec.mc_samples))
    rings = len(sizes)
    u = (np.arange(rings) + rng.uniform(size=rings)) / rings
    ring_freq = ndtri(0.5 + 0.5 * u)
    ring_scale = np.ones(rings)
    if spec.kind == "hyperbolic_matern":
        t, w = _quadrature(spec.nu, int(spec.quadrature_nodes))
        v = (rng.permutation(rings) + rng.uniform(size=rings)) / rings
        node = np.minimum(np.searchsorted(np.cumsum(w), v), t.shape[0] - 1)
        ring_scale = np.sqrt(spec.nu / t[node])
    angles, freqs, scales, weights = [], [], [], []
    for r, m in enumerate(sizes):
        angles.append(2.0 * math.pi * (np.arange(m) + rng.uniform()) / m)
        freqs.append(np.full(m, ring_freq[r]))
        scales.append(np.full(m, ring_scale[r]))
        weights.append(np.full(m, 1.0 / (rings * m)))
    angle = np.concatenate(angles)
    directions = np.ascontiguousarray(np.stack([np.cos(angle), np.sin(angle)], axis=1))
    return McFeatureSet(
        directions, np.concatenate(freqs), np.concatenate(scales), np.concatenate(weights), int(spec.mc_seed)
    )


@lru_cache(maxsize=32)
def _cached_features(kind, L, seed, nu, nodes):
    return sample_features(KernelSpec(kind, nu=nu, mc_samples=L, mc_seed=seed, quadrature_nodes=nodes))


def features_for(spec: KernelSpec) -> McFeatureSet:
    """Seeded feature set, reused while (kind, L, seed, nu) are unchanged."""
    return _cached_features(spec.kind, int(spec.mc_samples), int(spec.mc_seed), spec.nu, int(spec.quadrature_nodes))


class _McFeatures(torch.autograd.Function):
    @staticmethod
    def forward(ctx, z, s, directions):
        zn = np.ascontiguousarray(z.detach().numpy())
        sn = np.ascontiguousarray(s.detach().numpy())
        re, im = _backend.features(zn, directions, sn)
        ctx.save_for_backward(z, s)
        ctx.directions = directions
        return torch.from_numpy(np.asarray(re)), torch.from_numpy(np.asarray(im))

    @staticmethod
    def backward(ctx, g_re, g_im):
        z, s = ctx.saved_tensors
        gz, gs = _backend.features_vjp(
            np.ascontiguousarray(z.detach().numpy()),
            ctx.directions,
            np.ascontiguousarray(s.detach().numpy()),
            np.ascontiguousarray(g_re.numpy()),
            np.ascontiguousarray(g_im.numpy()),
        )
        return torch.from_numpy(np.asarray(gz)), torch.from_numpy(np.asarray(gs)), None


def mc_feature_matrix(X, features: McFeatureSet, lengthscale):
    """Cosine-normalized real feature matrix, shape (N, 2L), for L^2 points."""
    z = _to_poincare(_as_tensor(X))
    s = features.frequencies(lengthscale)
    re, im = _McFeatures.apply(z, s, features.directions)
    amp = torch.sqrt(torch.as_tensor(features.weights) * s * torch.tanh(math.pi * s))
    phi = torch.cat([re * amp, im * amp], dim=1)
    return phi / torch.linalg.vector_norm(phi, dim=1, keepdim=True)


def _check_q(X, q, kind):
    if X.shape[-1] != q + 1:
        raise DimensionError(f"{kind} needs points of L^{q} (length {q + 1}), got length {X.shape[-1]}")


def _hyp_matern_l3(rho, kappa, spec):
    t, w = _quadrature(spec.nu, int(spec.quadrature_nodes))
    t = torch.as_tensor(t)
    w = torch.as_tensor(w)
    expo = -(rho**2)[..., None] * spec.nu / (2.0 * kappa**2 * t)
    return (w * torch.exp(expo)).sum(-1) * torch.exp(-log_sinhc(rho))


def graph_kernel_matrix(graph, spec: KernelSpec, lengthscale=None, variance=None):
    """Full |V| x |V| graph kernel, scaled so the largest diagonal entry is ``variance``."""
    if spec.kind not in GRAPH_KINDS:
        raise ValidationError(f"{spec.kind!r} is not a graph kernel")
    kappa = torch.as_tensor(spec.lengthscale if lengthscale is None else lengthscale, dtype=DTYPE)
    var = torch.as_tensor(spec.variance if variance is None else variance, dtype=DTYPE)
    lam = torch.as_tensor(graph.eigvals)
    U = torch.as_tensor(graph.eigvecs)
    if spec.kind == "graph_se":
        f = torch.exp(-0.5 * kappa**2 * lam)
    else:
        f = (2.0 * spec.nu / kappa**2 + lam) ** (-spec.nu)
    K = (U * f) @ U.T
    K = 0.5 * (K + K.T)
    return var * K / torch.max(torch.diagonal(K))


def kernel_matrix(spec: KernelSpec, X, Y=None, *, lengthscale=None, variance=None,
                  features: McFeatureSet | None = None, graph=None):
    """Cross-covariance ``k(X_i, Y_j)``.

    ``lengthscale``/``variance`` override the KernelSpec values and may be
    tensors requiring grad. Graph kinds take node indices and need ``graph``.
    """
    kappa = torch.as_tensor(spec.lengthscale if lengthscale is None else lengthscale, dtype=DTYPE)
    var = torch.as_tensor(spec.variance if variance is None else variance, dtype=DTYPE)
    kind = spec.kind
    if kind in GRAPH_KINDS:
        if graph is None:
            raise ValidationError("graph kernels need the taxonomy graph")
        full = graph_kernel_matrix(graph, spec, kappa, var)
        ix = torch.as_tensor(np.asarray(X, dtype=np.int64))
        iy = ix if Y is None else torch.as_tensor(np.asarray(Y, dtype=np.int64))
        return full[ix][:, iy]

    X = _as_tensor(X)
    same = Y is None
    Y = X if same else _as_tensor(Y)
    if X.shape[-1] != Y.shape[-1]:
        raise DimensionError(f"input dimension mismatch: {X.shape[-1]} vs {Y.shape[-1]}")
    if kind == "euclidean_se":
        sq = ((X[:, None, :] - Y[None, :, :]) ** 2).sum(-1)
        return var * torch.exp(-0.5 * sq / kappa**2)
    q = X.shape[-1] - 1
    if kind == "hyperbolic_l3":
        _check_q(X, 3, kind)
        rho = _pairwise_distance(X, Y)
        return var * torch.exp(-log_sinhc(rho) - 0.5 * rho**2 / kappa**2)
    if kind == "hyperbolic_matern" and q == 3:
        return var * _hyp_matern_l3(_pairwise_distance(X, Y), kappa, spec)
    if kind in ("hyperbolic_l2_mc", "hyperbolic_matern"):
        if q != 2:
            raise ValidationError(f"{kind} is implemented for L^2 and L^3 only, got L^{q}")
        feats = features_for(spec) if features is None else features
        px = mc_feature_matrix(X, feats, kappa)
        py = px if same else mc_feature_matrix(Y, feats, kappa)
        return var * (px @ py.T)
    raise ValidationError(f"unsupported kernel kind {kind!r}")  # pragma: no cover


def cholesky_jitter(K, variance, jitter: float = DEFAULT_JITTER):
    """Cholesky of ``K + j * variance * I`` escalating ``j`` tenfold up to 1e-4.

    Returns ``(L, j)``. Raises NumericalError listing the attempted ladder.
    """
    if not 0 <= jitter <= MAX_JITTER:
        raise ValidationError(f"jitter must lie in [0, {MAX_JITTER}]")
    n = K.shape[-1]
    eye = torch.eye(n, dtype=K.dtype)
    var = torch.as_tensor(variance, dtype=K.dtype)
    ladder, j = [], jitter
    while True:
        ladder.append(j)
        L, info = torch.linalg.cholesky_ex(K + j * var * eye)
        if int(info) == 0 and bool(torch.isfinite(L).all()):
            return L, j
        if j >= MAX_JITTER:
            break
        j = min(MAX_JITTER, j * 10.0 if j > 0 else 1e-10)
    raise NumericalError(f"Cholesky failed after jitter ladder {ladder} (relative to variance)")


def gram(spec: KernelSpec, points, jitter: float = DEFAULT_JITTER, *, graph=None, features=None):
    """Symmetric Gram matrix with ``jitter * variance`` on the diagonal.

    The jitter is escalated when needed so the result is always
    Cholesky-factorizable. NumPy in gives NumPy out.
    """
    torch_in = isinstance(points, torch.Tensor)
    K = kernel_matrix(spec, points, graph=graph, features=features)
    K = 0.5 * (K + K.T)
    _, used = cholesky_jitter(K.detach(), spec.variance, jitter)
    K = K + used * spec.variance * torch.eye(K.shape[0], dtype=K.dtype)
    return K if torch_in else K.detach().numpy()


def _scalar(spec, x, y, kind, **kw):
    if spec.kind != kind:
        raise ValidationError(f"spec kind {spec.kind!r} does not match {kind!r}")
    X = _as_tensor(x).reshape(1, -1)
    Y = _as_tensor(y).reshape(1, -1)
    with torch.no_grad():
        return float(kernel_matrix(spec, X, Y, **kw)[0, 0])


def se_euclidean(x, y, spec: KernelSpec) -> float:
    return _scalar(spec, x, y, "euclidean_se")


def heat_l3(x, y, spec: KernelSpec) -> float:
    """``sigma^2 (rho / sinh rho) exp(-rho^2 / (2 kappa^2))`` on L^3."""
    return _scalar(spec, x, y, "hyperbolic_l3")


def heat_l2_mc(x, y, spec: KernelSpec, features: McFeatureSet | None = None) -> float:
    return _scalar(spec, x, y, "hyperbolic_l2_mc", features=features)


def matern_hyperbolic(x, y, spec: KernelSpec, features: McFeatureSet | None = None) -> float:
    """Matern kernel as a Gamma mixture of heat kernels over the squared lengthscale.

    ``k_nu = sigma^2 E_t[k_heat(lengthscale = kappa sqrt(t / nu))]`` with
    ``t ~ Gamma(nu, 1)``, integrated by generalized Gauss-Laguerre
    quadrature (L^3) or by assigning Monte-Carlo features to quadrature
    nodes (L^2).
    """
    return _scalar(spec, x, y, "hyperbolic_matern", features=features)


def graph_kernel(c, c2, graph, spec: KernelSpec) -> float:
    i, j = graph.idx(c), graph.idx(c2)
    with torch.no_grad():
        return float(graph_kernel_matrix(graph, spec)[i, j])


__all__ = [
    "KINDS",
    "KernelSpec",
    "McFeatureSet",
    "BACKEND",
    "sample_features",
    "features_for",
    "mc_feature_matrix",
    "kernel_matrix",
    "graph_kernel_matrix",
    "cholesky_jitter",
    "gram",
    "se_euclidean",
    "heat_l3",
    "heat_l2_mc",
    "matern_hyperbolic",
    "graph_kernel",
]

BACKEND = _backend.BACKEND
