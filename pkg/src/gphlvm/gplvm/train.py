"""MAP, back-constrained and sparse variational training loops.

All loops maximize their objective with :class:`~gphlvm.optim.RiemannianAdam`
(latent and inducing points on the hyperboloid, everything else in the
Euclidean block with positives in log space) and are deterministic given
``config.seed``.
"""

from __future__ import annotations

import math
import warnings

import numpy as np
import torch

from ..distributions import WrappedNormal, kl_mc_from_eps
from ..errors import NumericalError, ValidationError
from ..kernels import KernelSpec, cholesky_jitter, kernel_matrix
from ..manifold import DTYPE, _exp_map, _lift, _log_map, _parallel_transport, exp_origin, origin_tangent
from ..optim import ProductParam, RiemannianAdam
from .config import EUCLIDEAN_LR, TrainConfig
from .losses import (
    LOG_2PI,
    distortion_loss,
    gamma_log_prior,
    log_marginal,
    log_prior,
    stress_loss,
)
from .model import BackConstraint, GphlvmModel, VariationalState, back_constrain, bc_kernel, relift


class _Problem:
    """Tensors shared by every training mode."""

    def __init__(self, dataset, graph, config: TrainConfig):
        dataset.check_against(graph)
        self.config = config.resolved()
        self.graph = graph
        self.dataset = dataset
        self.Y = torch.as_tensor(dataset.observations, dtype=DTYPE)
        self.idx = graph.indices(dataset.classes)
        self.dG = torch.as_tensor(graph.dist[np.ix_(self.idx, self.idx)])
        self.N, self.D = self.Y.shape
        if len(set(dataset.classes)) == 1:
            warnings.warn("dataset has a single class; stress only pulls points together", stacklevel=3)
        c = self.config
        self.geometry = c.geometry
        self.Q = c.latent_dim
        self.amb = self.Q + 1 if self.geometry == "lorentz" else self.Q
        self.rng = np.random.default_rng(c.seed)
        kind = c.latent_kernel()
        self.spec = KernelSpec(
            kind,
            nu=(c.nu if c.nu is not None else 2.5) if kind == "hyperbolic_matern" else None,
            mc_samples=c.mc_samples,
            mc_seed=c.mc_seed,
        )
        second = (self.Y**2).mean(0)
        self.log_kappa = torch.zeros((), dtype=DTYPE, requires_grad=True)
        self.log_var = torch.log(second.mean().clamp(min=1e-6)).detach().clone().requires_grad_(True)
        self.log_noise = torch.log(0.1 * second + 1e-6).detach().clone().requires_grad_(True)

    # -- pieces ---------------------------------------------------------------
    def hyper(self):
        return {"log_kappa": self.log_kappa, "log_var": self.log_var, "log_noise": self.log_noise}

    def gram(self, X):
        var = torch.exp(self.log_var)
        K = kernel_matrix(self.spec, X, lengthscale=torch.exp(self.log_kappa), variance=var)
        K = 0.5 * (K + K.T)
        _, j = cholesky_jitter(K.detach(), float(var.detach()), self.config.jitter)
        return K + j * var * torch.eye(X.shape[0], dtype=DTYPE)

    def hyperprior(self):
        gp = self.config.gamma_prior
        if gp is None:
            return torch.zeros((), dtype=DTYPE)
        return gamma_log_prior(torch.exp(self.log_kappa), gp[0], gp[1])

    def l_map(self, X):
        K = self.gram(X)
        return (
            log_marginal(self.Y, K, torch.exp(self.log_noise))
            + log_prior(X, self.geometry, self.config.prior_alpha)
            + self.hyperprior()
        )

    def regularizer(self, X):
        c = self.config
        if c.regularizer in ("stress", "bc_stress"):
            return stress_loss(X, self.dG, self.geometry)
        if c.regularizer == "distortion":
            return distortion_loss(X, self.dG, self.geometry, "vanilla", eps=c.distortion_eps)
        if c.regularizer == "modified_distortion":
            return distortion_loss(X, self.dG, self.geometry, "modified", lambda1=c.lambda1, lambda2=c.lambda2)
        return torch.zeros((), dtype=DTYPE)

    # -- initialization ---------------------------------------------------------
    def random_init(self):
        alpha = self.config.prior_alpha
        if self.geometry == "lorentz":
            o = torch.zeros(self.amb, dtype=DTYPE)
            o[0] = 1.0
            X = WrappedNormal.isotropic(o, alpha).sample(self.N, self.rng)
            return _lift(X[:, 1:])
        return torch.as_tensor(self.rng.normal(scale=math.sqrt(alpha), size=(self.N, self.Q)))

    def tangent_noise(self, X, scale):
        eps = torch.as_tensor(self.rng.normal(scale=scale, size=(self.N, self.Q)))
        if self.geometry == "lorentz":
            o = torch.zeros(self.amb, dtype=DTYPE)
            o[0] = 1.0
            u = _parallel_transport(o.expand_as(X), X, origin_tangent(eps))
            return _lift(_exp_map(X, u)[:, 1:])
        return X + eps

    def init_latents(self):
        """Random prior draw, or a stress minimizer.

        The stress minimizer starts from classical MDS of the graph
        distances, descends Euclidean stress, and (Lorentz model) maps the
        result through the exponential map at the origin before refining on
        the hyperboloid; hyperbolic stress from random starts stalls in poor
        local minima.
        """
        if self.config.init == "random":
            return self.random_init()
        X = torch.as_tensor(_classical_mds(self.dG.numpy(), self.Q))
        X = self._descend_stress(X, "euclidean")
        if self.geometry == "lorentz":
            X = self._descend_stress(_lift(exp_origin(X)[:, 1:]), "lorentz")
        # Stress alone cannot separate points of one class; tiny noise keeps them distinct.
        return self.tangent_noise(X, 1e-4)

    def _descend_stress(self, X0, geometry):
        X = X0.clone().requires_grad_(True)
        opt = RiemannianAdam(_latent_params(X, geometry), lr=self.config.init_lr)
        for _ in range(self.config.init_steps):
            opt.zero_grad()
            stress_loss(X, self.dG, geometry).backward()
            opt.step()
        return X.detach()

    def model(self, X, **extra) -> GphlvmModel:
        return GphlvmModel(
            geometry=self.geometry,
            latent_dim=self.Q,
            latents=relift(X.detach().numpy(), self.geometry),
            kernel=self.spec.replace(
                lengthscale=float(torch.exp(self.log_kappa).detach()), variance=float(torch.exp(self.log_var).detach())
            ),
            noise=torch.exp(self.log_noise).detach().numpy().copy(),
            prior_alpha=self.config.prior_alpha,
            observations=self.dataset.observations.copy(),
            classes=tuple(self.dataset.classes),
            graph=self.graph,
            train_config=self.config,
            jitter=self.config.jitter,
            **extra,
        )


def _classical_mds(D: np.ndarray, q: int) -> np.ndarray:
    n = D.shape[0]
    J = np.eye(n) - 1.0 / n
    B = -0.5 * J @ (D**2) @ J
    w, V = np.linalg.eigh(B)
    order = np.argsort(w)[::-1][:q]
    X = V[:, order] * np.sqrt(np.clip(w[order], 0.0, None))
    # eigenvector signs are arbitrary; fix them for reproducibility
    signs = np.sign(X[np.argmax(np.abs(X), axis=0), np.arange(q)])
    return X * np.where(signs == 0, 1.0, signs)


def _latent_params(X, geometry, extra=None):
    extra = dict(extra or {})
    if geometry == "lorentz":
        return ProductParam(hyperbolic={"X": X}, euclidean=extra)
    return ProductParam(euclidean={"X": X, **extra})


def _snapshot(tensors: dict) -> dict:
    return {k: v.detach().clone().numpy() for k, v in tensors.items()}


def _run(objective, params: ProductParam, config: TrainConfig, record, state_tensors, euclidean_lr=None):
    """Shared ascent loop; returns the history dict."""
    opt = RiemannianAdam(params, lr=config.lr, euclidean_lr=euclidean_lr)
    history = {"iteration": [], "objective": [], "l_map": [], "stress": []}
    last_good = _snapshot(state_tensors)
    for it in range(config.iterations + 1):
        try:
            opt.zero_grad()
            obj, parts = objective()
            if not bool(torch.isfinite(obj)):
                raise NumericalError("objective is not finite")
        except NumericalError as exc:
            raise NumericalError(f"training failed at iteration {it}: {exc}", state=last_good,
                                 iteration=it) from exc
        history["iteration"].append(it)
        history["objective"].append(float(obj.detach()))
        for k, v in record(parts).items():
            history[k].append(v)
        if it == config.iterations:
            break
        last_good = _snapshot(state_tensors)
        (-obj).backward()
        try:
            opt.step()
        except NumericalError as exc:
            raise NumericalError(str(exc), state=last_good, iteration=it) from exc
    return history


def train_map(dataset, graph, config: TrainConfig) -> GphlvmModel:
    """Maximize ``l_MAP - gamma * regularizer`` over latents and hyperparameters."""
    if config.regularizer == "bc_stress":
        raise ValidationError("use train_back_constrained for the bc_stress regularizer")
    if config.mode != "map":
        raise ValidationError("train_map needs mode='map'")
    P = _Problem(dataset, graph, config)
    c = P.config
    X = P.init_latents().clone().requires_grad_(True)
    params = _latent_params(X, P.geometry, P.hyper())

    def objective():
        lm = P.l_map(X)
        st = stress_loss(X, P.dG, P.geometry)
        reg = st if c.regularizer == "stress" else P.regularizer(X)
        return lm - c.gamma * reg, (lm, st)

    def record(parts):
        return {"l_map": float(parts[0].detach()), "stress": float(parts[1].detach())}

    history = _run(objective, params, c, record, {"X": X, **P.hyper()}, EUCLIDEAN_LR)
    return P.model(X, history=history)


def _bc_from(P: _Problem, W):
    c = P.config
    return BackConstraint(
        W=W.detach().numpy().copy(),
        obs_lengthscale=c.bc_obs_lengthscale,
        graph_lengthscale=c.bc_graph_lengthscale,
        nu=c.bc_nu,
        variance=c.bc_variance,
    )


def train_back_constrained(dataset, graph, config: TrainConfig) -> GphlvmModel:
    """MAP training where latents are the back-constraint map of the data.

    ``W`` starts at the least-squares fit of the map to the
    stress-minimizing initialization.
    """
    if config.regularizer != "bc_stress":
        raise ValidationError("train_back_constrained needs regularizer='bc_stress'")
    P = _Problem(dataset, graph, config)
    c = P.config
    X0 = P.init_latents()
    bc0 = _bc_from(P, torch.zeros(P.Q, P.N, dtype=DTYPE))
    Kbc = bc_kernel(P.Y, P.idx, P.Y, P.idx, bc0, graph).detach()
    if P.geometry == "lorentz":
        o = torch.zeros(P.amb, dtype=DTYPE)
        o[0] = 1.0
        target = _log_map(o.expand_as(X0), X0)[:, 1:]
    else:
        target = X0
    sol = torch.linalg.lstsq(Kbc, target, rcond=1e-10, driver="gelsd").solution
    W = sol.T.contiguous().clone().requires_grad_(True)
    params = ProductParam(euclidean={"W": W, **P.hyper()})

    def latents():
        return back_constrain(W, P.Y, P.idx, _bc_from(P, W.detach()), graph, P.geometry)

    def objective():
        X = latents()
        lm = P.l_map(X)
        st = stress_loss(X, P.dG, P.geometry)
        return lm - c.gamma * st, (lm, st)

    def record(parts):
        return {"l_map": float(parts[0].detach()), "stress": float(parts[1].detach())}

    history = _run(objective, params, c, record, {"W": W, **P.hyper()})
    bc = _bc_from(P, W)
    with torch.no_grad():
        X = back_constrain(torch.as_tensor(bc.W), P.Y, P.idx, bc, graph, P.geometry)
    return P.model(X, bc=bc, history=history)


# -- sparse variational ------------------------------------------------------------


class _Variational:
    """Parameters and ELBO of the sparse variational model."""

    def __init__(self, P: _Problem, M: int, mu0):
        self.P = P
        c = P.config
        self.M = M
        self.mu = mu0.detach().clone().requires_grad_(True)
        self.log_std = torch.full((P.N, P.Q), math.log(c.q_init_std), dtype=DTYPE, requires_grad=True)
        pick = np.sort(P.rng.choice(P.N, size=M, replace=False))
        self.Z = mu0.detach()[torch.as_tensor(pick)].clone().requires_grad_(True)
        self.m = torch.zeros(P.D, M, dtype=DTYPE, requires_grad=True)
        self.L_off = torch.zeros(P.D, M, M, dtype=DTYPE, requires_grad=True)
        self.L_logdiag = torch.zeros(P.D, M, dtype=DTYPE, requires_grad=True)

    def params(self) -> ProductParam:
        P = self.P
        free = {"log_std": self.log_std, "m": self.m, "L_off": self.L_off, "L_logdiag": self.L_logdiag,
                **P.hyper()}
        if P.geometry == "lorentz":
            return ProductParam(hyperbolic={"mu": self.mu, "Z": self.Z}, euclidean=free)
        return ProductParam(euclidean={"mu": self.mu, "Z": self.Z, **free})

    def tensors(self) -> dict:
        return {"mu": self.mu, "log_std": self.log_std, "Z": self.Z, "m": self.m, "L_off": self.L_off,
                "L_logdiag": self.L_logdiag, **self.P.hyper()}

    def L_v(self):
        return torch.tril(self.L_off, diagonal=-1) + torch.diag_embed(torch.exp(self.L_logdiag))

    def state(self) -> VariationalState:
        return VariationalState(
            Z=relift(self.Z.detach().numpy(), self.P.geometry),
            q_u_mean=self.m.detach().numpy().copy(),
            q_u_tril=self.L_v().detach().numpy().copy(),
            q_x_mean=relift(self.mu.detach().numpy(), self.P.geometry),
            q_x_std=torch.exp(self.log_std).detach().numpy().copy(),
        )


def elbo_terms(P_or_model, mu, std, Z, m, L_v, eps_x, eps_kl, *, spec=None, lengthscale=None, variance=None,
               noise=None, Y=None, geometry=None, prior_alpha=None, jitter=1e-6) -> dict:
    """Evaluate the sparse-variational bound and its pieces.

    Parameters
    ----------
    mu : tensor (N, A)
        Means of q(x_n) (Lorentz points or vectors).
    std : tensor (N, Q)
        Per-axis standard deviations of q(x_n).
    Z : tensor (M, A)
        Inducing inputs.
    m, L_v : tensors (D, M), (D, M, M)
        Whitened inducing posterior.
    eps_x : tensor (S, N, Q)
        Standard-normal noise for the expected log-likelihood.
    eps_kl : tensor (K, N, Q)
        Standard-normal noise for the latent KL estimate.

    Returns
    -------
    dict
        ``elbo``, ``expected_loglik``, ``kl_u``, ``kl_x``, plus
        ``expected_log_prior`` (E_q log p(x)) and ``entropy`` (of q(x)), so
        that ``kl_x = -entropy - expected_log_prior``.
    """
    if isinstance(P_or_model, _Problem):
        P = P_or_model
        spec, geometry, Y = P.spec, P.geometry, P.Y
        prior_alpha, jitter = P.config.prior_alpha, P.config.jitter
        lengthscale, variance, noise = torch.exp(P.log_kappa), torch.exp(P.log_var), torch.exp(P.log_noise)
    N, D = Y.shape
    S = eps_x.shape[0]
    M = Z.shape[0]
    var = torch.as_tensor(variance, dtype=DTYPE)

    if geometry == "lorentz":
        q = WrappedNormal.diagonal(mu, std)
        o = torch.zeros(mu.shape[-1], dtype=DTYPE)
        o[0] = 1.0
        p = WrappedNormal.isotropic(o, prior_alpha)
        Xs = q.rsample(eps_x)
        xk = q.rsample(eps_kl)
        log_q = q.log_prob(xk)
        log_p = p.log_prob(xk)
        entropy = -log_q.mean(0).sum()
        exp_log_prior = log_p.mean(0).sum()
        kl_x = (log_q - log_p).mean(0).sum()
    else:
        Xs = mu + std * eps_x
        Q = mu.shape[-1]
        entropy = (0.5 * Q * (1.0 + LOG_2PI) + torch.log(std).sum(-1)).sum()
        exp_log_prior = (-0.5 * Q * (LOG_2PI + math.log(prior_alpha))
                         - 0.5 * ((mu**2).sum(-1) + (std**2).sum(-1)) / prior_alpha).sum()
        kl_x = -entropy - exp_log_prior

    Kzz = kernel_matrix(spec, Z, lengthscale=lengthscale, variance=var)
    Kzz = 0.5 * (Kzz + Kzz.T)
    _, j = cholesky_jitter(Kzz.detach(), float(var.detach()), jitter)
    Lz = torch.linalg.cholesky(Kzz + j * var * torch.eye(M, dtype=DTYPE))
    Xflat = Xs.reshape(S * N, -1)
    Kzx = kernel_matrix(spec, Z, Xflat, lengthscale=lengthscale, variance=var)
    A = torch.linalg.solve_triangular(Lz, Kzx, upper=False)  # (M, S*N)
    f_mean = m @ A  # (D, S*N)
    LtA = L_v.transpose(-1, -2) @ A  # (D, M, S*N)
    f_var = var - (A**2).sum(0) + (LtA**2).sum(1)
    y = Y.T.repeat(1, S)  # (D, S*N), sample-major
    noise = torch.as_tensor(noise)
    ll = -0.5 * torch.log(2.0 * math.pi * noise)[:, None] - ((y - f_mean) ** 2 + f_var) / (2.0 * noise[:, None])
    expected_loglik = ll.sum() / S
    kl_u = 0.5 * (
        (L_v**2).sum((-1, -2)) + (m**2).sum(-1) - M
        - 2.0 * torch.log(torch.diagonal(L_v, dim1=-2, dim2=-1).abs()).sum(-1)
    ).sum()
    return {
        "elbo": expected_loglik - kl_u - kl_x,
        "expected_loglik": expected_loglik,
        "kl_u": kl_u,
        "kl_x": kl_x,
        "expected_log_prior": exp_log_prior,
        "entropy": entropy,
    }


def optimal_inducing(spec, Z, X, Y, noise, *, jitter=1e-6):
    """Closed-form optimal whitened q(v_d) for point-mass latents at ``X``.

    Returns ``(m, L_v)`` with shapes (D, M) and (D, M, M).
    """
    Z, X, Y = (torch.as_tensor(a, dtype=DTYPE) for a in (Z, X, Y))
    Kzz = kernel_matrix(spec, Z)
    Kzz = 0.5 * (Kzz + Kzz.T)
    Lz, _ = cholesky_jitter(Kzz, spec.variance, jitter)
    A = torch.linalg.solve_triangular(Lz, kernel_matrix(spec, Z, X), upper=False)
    M = Z.shape[0]
    ms, Ls = [], []
    for d, s2 in enumerate(np.asarray(noise)):
        prec = torch.eye(M, dtype=DTYPE) + (A @ A.T) / float(s2)
        Lp = torch.linalg.cholesky(prec)
        cov = torch.cholesky_inverse(Lp)
        ms.append(cov @ (A @ Y[:, d]) / float(s2))
        Ls.append(torch.linalg.cholesky(0.5 * (cov + cov.T)))
    return torch.stack(ms), torch.stack(Ls)


def train_variational(dataset, graph, config: TrainConfig, M: int | None = None) -> GphlvmModel:
    """Maximize the sparse variational bound (optionally minus ``gamma`` times stress of the means).

    Expectations over q(x) use ``config.elbo_samples`` reparameterized
    draws per point and step; the latent KL uses ``config.kl_samples``.
    """
    if config.mode != "variational":
        config = config.replace(mode="variational")
    if config.regularizer == "bc_stress":
        raise ValidationError("back constraints are only supported with MAP training")
    P = _Problem(dataset, graph, config)
    c = P.config
    M = c.num_inducing if M is None else M
    M = min(P.N, 50) if M is None else int(M)
    if not 1 <= M <= P.N:
        raise ValidationError(f"inducing count must satisfy 1 <= M <= N={P.N}, got {M}")
    V = _Variational(P, M, P.init_latents())

    def objective():
        eps_x = torch.as_tensor(P.rng.standard_normal((c.elbo_samples, P.N, P.Q)))
        eps_kl = torch.as_tensor(P.rng.standard_normal((c.kl_samples, P.N, P.Q)))
        t = elbo_terms(P, V.mu, torch.exp(V.log_std), V.Z, V.m, V.L_v(), eps_x, eps_kl)
        st = stress_loss(V.mu, P.dG, P.geometry)
        reg = P.regularizer(V.mu)
        return t["elbo"] - c.gamma * reg, (t["elbo"], st)

    def record(parts):
        return {"l_map": float(parts[0].detach()), "stress": float(parts[1].detach())}

    history = _run(objective, V.params(), c, record, V.tensors(), EUCLIDEAN_LR)
    history["elbo"] = history.pop("l_map")
    return P.model(V.mu, variational=V.state(), history=history)


def train(dataset, graph, config: TrainConfig) -> GphlvmModel:
    """Dispatch on ``config.mode`` and ``config.regularizer``."""
    if config.mode == "variational":
        return train_variational(dataset, graph, config)
    if config.regularizer == "bc_stress":
        return train_back_constrained(dataset, graph, config)
    return train_map(dataset, graph, config)
