"""Instance builders shared by the gplvm and acceptance suites."""

import math

import numpy as np
import torch

from gphlvm.graphtax import balanced_tree, synthetic_tree
from gphlvm.gplvm import (
    TrainConfig,
    distortion_loss,
    elbo_terms,
    log_marginal,
    log_prior,
    optimal_inducing,
    stress_loss,
    train_map,
)
from gphlvm.gplvm.train import _Problem
from gphlvm.kernels import KernelSpec, kernel_matrix
from gphlvm.manifold import lift
from gphlvm.optim import ProductParam, check_gradients

MAP_ITERS = 200
LOSSES = ("l_map", "stress", "distortion", "modified_distortion", "elbo")
KERNEL_FOR = {("lorentz", 2): "hyperbolic_l2_mc", ("lorentz", 3): "hyperbolic_l3", ("euclidean", 2): "euclidean_se",
              ("euclidean", 3): "euclidean_se"}


def random_latents(rng, n, geometry, q, scale=0.8):
    z = rng.normal(scale=scale, size=(n, q))
    X = lift(z) if geometry == "lorentz" else z
    return torch.as_tensor(np.asarray(X, dtype=np.float64)).clone().requires_grad_(True)


def _latent_block(geometry, **tensors):
    hyp = {k: v for k, v in tensors.items() if geometry == "lorentz" and k in ("X", "mu", "Z")}
    euc = {k: v for k, v in tensors.items() if k not in hyp}
    return ProductParam(hyperbolic=hyp, euclidean=euc)


def gradient_errors(loss, geometry, q, seed, n=6, d=3, m=4):
    """Relative FD-vs-autograd errors of one loss on a random instance."""
    rng = np.random.default_rng(seed)
    spec = KernelSpec(KERNEL_FOR[(geometry, q)], mc_samples=3000, mc_seed=seed)
    graph = balanced_tree(2, 2)
    classes = list(rng.choice(graph.node_ids, size=n))
    idx = graph.indices(classes)
    dG = graph.dist[np.ix_(idx, idx)]
    X = random_latents(rng, n, geometry, q)
    if loss == "stress":
        return check_gradients(lambda: stress_loss(X, dG, geometry), _latent_block(geometry, X=X))
    if loss == "distortion":
        return check_gradients(lambda: distortion_loss(X, dG, geometry, "vanilla", eps=0.1),
                               _latent_block(geometry, X=X))
    if loss == "modified_distortion":
        return check_gradients(lambda: distortion_loss(X, dG, geometry, "modified"), _latent_block(geometry, X=X))
    Y = torch.as_tensor(rng.normal(size=(n, d)))
    log_kappa = torch.tensor(math.log(rng.uniform(0.7, 1.5)), dtype=torch.float64, requires_grad=True)
    log_var = torch.tensor(math.log(rng.uniform(0.5, 2.0)), dtype=torch.float64, requires_grad=True)
    log_noise = torch.as_tensor(np.log(rng.uniform(0.05, 0.3, size=d))).clone().requires_grad_(True)
    hyper = {"log_kappa": log_kappa, "log_var": log_var, "log_noise": log_noise}
    if loss == "l_map":
        def fn():
            K = kernel_matrix(spec, X, lengthscale=torch.exp(log_kappa), variance=torch.exp(log_var))
            K = 0.5 * (K + K.T) + 1e-6 * torch.exp(log_var) * torch.eye(n, dtype=torch.float64)
            return log_marginal(Y, K, torch.exp(log_noise)) + log_prior(X, geometry)

        return check_gradients(fn, _latent_block(geometry, X=X, **hyper))
    if loss == "elbo":
        Z = random_latents(rng, m, geometry, q)
        mv = torch.as_tensor(rng.normal(scale=0.5, size=(d, m))).clone().requires_grad_(True)
        L_off = torch.as_tensor(rng.normal(scale=0.1, size=(d, m, m))).clone().requires_grad_(True)
        L_logdiag = torch.as_tensor(rng.normal(scale=0.1, size=(d, m)) - 0.5).clone().requires_grad_(True)
        log_std = torch.as_tensor(np.log(rng.uniform(0.05, 0.3, size=(n, q)))).clone().requires_grad_(True)
        eps_x = torch.as_tensor(rng.standard_normal((4, n, q)))
        eps_kl = torch.as_tensor(rng.standard_normal((32, n, q)))

        def fn():
            L_v = torch.tril(L_off, diagonal=-1) + torch.diag_embed(torch.exp(L_logdiag))
            return elbo_terms(None, X, torch.exp(log_std), Z, mv, L_v, eps_x, eps_kl, spec=spec,
                              lengthscale=torch.exp(log_kappa), variance=torch.exp(log_var),
                              noise=torch.exp(log_noise), Y=Y, geometry=geometry, prior_alpha=1.0)["elbo"]

        return check_gradients(fn, _latent_block(geometry, X=X, Z=Z, m=mv, L_off=L_off, L_logdiag=L_logdiag,
                                                 log_std=log_std, **hyper))
    raise ValueError(loss)


def small_instance(geometry, seed=0, iterations=100):
    """N=12 instance (3 classes x 4 points) with a short MAP fit."""
    graph, ds = synthetic_tree(1, 2, 4, 8, 0.1, np.random.default_rng(seed))
    cfg = TrainConfig(geometry=geometry, regularizer="stress", gamma=100.0, iterations=iterations, seed=seed)
    model = train_map(ds, graph, cfg)
    P = _Problem(ds, graph, cfg)
    with torch.no_grad():
        P.log_kappa.fill_(math.log(model.kernel.lengthscale))
        P.log_var.fill_(math.log(model.kernel.variance))
        P.log_noise.copy_(torch.log(torch.as_tensor(model.noise)))
    return P, model


def degenerate_terms(P, model, std=1e-10, seed=0, elbo_samples=8, kl_samples=256):
    """ELBO pieces with collapsed q(x), Z = X, M = N and the optimal q(u); plus l_MAP."""
    rng = np.random.default_rng(seed)
    X = torch.as_tensor(model.latents)
    with torch.no_grad():
        l_map = float(P.l_map(X))
        m, L_v = optimal_inducing(model.kernel, X, X, P.Y, model.noise, jitter=P.config.jitter)
        eps_x = torch.as_tensor(rng.standard_normal((elbo_samples, P.N, P.Q)))
        eps_kl = torch.as_tensor(rng.standard_normal((kl_samples, P.N, P.Q)))
        std_t = torch.full((P.N, P.Q), std, dtype=torch.float64)
        terms = {k: float(v) for k, v in elbo_terms(P, X, std_t, X, m, L_v, eps_x, eps_kl).items()}
    return terms, l_map


# -- acceptance reporting ------------------------------------------------------------------

ACCEPTANCE = {}


class criterion:
    """Record one named check of an acceptance criterion as passed or failed."""

    def __init__(self, number, description, check):
        self.entry = ACCEPTANCE.setdefault(number, {"description": description, "checks": []})
        self.check = check

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        self.entry["checks"].append((self.check, exc_type is None))
        return False


def acceptance_lines():
    lines = []
    for n in sorted(ACCEPTANCE):
        e = ACCEPTANCE[n]
        ok = all(passed for _, passed in e["checks"])
        detail = "; ".join(f"{name} {'ok' if passed else 'failed'}" for name, passed in e["checks"])
        lines.append(f"criterion {n:2d} {'PASS' if ok else 'FAIL'}: {e['description']} ({detail})")
    return lines
