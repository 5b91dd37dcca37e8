"""Gaussian Process Dynamical Models over pose-feature sequences.

A GPDM pairs a GP mapping from a 2-D latent space to the 23-dim pose
descriptor (RBF + white noise) with a GP auto-regressive model on the latents
themselves (RBF + linear + white noise). Latents and kernel hyperparameters are
learned jointly by minimising the negative log posterior.

Observations are centred and divided by one global scale before fitting, so
the hyperparameters live in a unit-variance space; predictions are mapped back.
"""
from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

LATENT_DIM = 2
JITTER = 1e-6
MAGIC = b"GPDM1"

# log-normal hyperprior width (in log units)
HYPER_PRIOR_STD = 2.0

MAP_NAMES = ("variance", "lengthscale", "noise")
DYN_NAMES = ("variance", "lengthscale", "linear", "noise")


class GpdmError(RuntimeError):
    pass


@dataclass
class GpdmConfig:
    max_iter: int = 500
    grad_tol: float = 1e-5
    init_variance: float = 1.0
    init_noise: float = 0.1
    seed: int = 0


def _sqdist(A, B):
    d = A[:, None, :] - B[None, :, :]
    return np.einsum("ijk,ijk->ij", d, d)


def _median_distance(X):
    d = np.sqrt(_sqdist(X, X))
    iu = np.triu_indices(len(X), 1)
    m = float(np.median(d[iu])) if len(iu[0]) else 1.0
    return m if m > 0 else 1.0


def pca_latents(Yc, dim=LATENT_DIM):
    """Top principal-component scores, rescaled to unit overall std."""
    U, S, Vt = np.linalg.svd(Yc, full_matrices=False)
    Z = U[:, :dim] * S[:dim]
    # deterministic sign: largest-magnitude loading positive
    for j in range(Z.shape[1]):
        if Vt[j, np.argmax(np.abs(Vt[j]))] < 0:
            Z[:, j] = -Z[:, j]
    if Z.shape[1] < dim:
        Z = np.hstack([Z, np.zeros((len(Z), dim - Z.shape[1]))])
    sd = Z.std()
    return Z / sd if sd > 0 else Z


def observation_stats(Y):
    mean = Y.mean(axis=0)
    scale = float(np.sqrt(np.mean((Y - mean) ** 2)))
    return mean, (scale if scale > 0 else 1.0)


def _gp_term(K, Z):
    """Negative log marginal likelihood (up to constants) of columns of Z under K.

    Returns (value, dL/dK, dL/dZ, K^-1).
    """
    cf = cho_factor(K, lower=True)
    Kinv = cho_solve(cf, np.eye(len(K)))
    alpha = Kinv @ Z
    m = Z.shape[1]
    logdet = 2.0 * np.sum(np.log(np.diag(cf[0])))
    val = 0.5 * m * logdet + 0.5 * np.sum(Z * alpha)
    G = 0.5 * (m * Kinv - alpha @ alpha.T)
    return val, G, alpha, Kinv


def _rbf_latent_grad(G, Krbf, X, ell2):
    """dL/dX through an RBF kernel on the rows of X, given dL/dK = G."""
    M = G * Krbf
    return -(2.0 / ell2) * (M.sum(axis=1)[:, None] * X - M @ X)


class GpdmObjective:
    """Negative log posterior of a GPDM and its gradient.

    Parameter vector: flattened (T, 2) latents, then log map hyperparameters
    (variance, lengthscale, noise) and log dynamics hyperparameters
    (variance, lengthscale, linear, noise).
    """

    def __init__(self, Ys, prior_mean):
        self.Ys = np.asarray(Ys, float)
        self.T, self.D = self.Ys.shape
        self.prior_mean = np.asarray(prior_mean, float)

    def split(self, theta):
        n = self.T * LATENT_DIM
        X = theta[:n].reshape(self.T, LATENT_DIM)
        return X, theta[n : n + 3], theta[n + 3 : n + 7]

    def __call__(self, theta, grad=True):
        X, lm, ld = self.split(theta)
        sy, ly, ny = np.exp(lm)
        sx, lx, cx, nx = np.exp(ld)

        # latent -> observation GP
        r2 = _sqdist(X, X)
        Ky_rbf = sy * np.exp(-0.5 * r2 / ly**2)
        Ky = Ky_rbf + (ny + JITTER) * np.eye(self.T)
        vy, Gy, _, _ = _gp_term(Ky, self.Ys)

        # latent dynamics GP
        Xin, Xout = X[:-1], X[1:]
        r2d = _sqdist(Xin, Xin)
        Kx_rbf = sx * np.exp(-0.5 * r2d / lx**2)
        Kx_lin = cx * (Xin @ Xin.T)
        Kx = Kx_rbf + Kx_lin + (nx + JITTER) * np.eye(self.T - 1)
        vx, Gx, ax, _ = _gp_term(Kx, Xout)

        logh = np.concatenate([lm, ld])
        dev = (logh - self.prior_mean) / HYPER_PRIOR_STD
        value = vy + vx + 0.5 * float(X[0] @ X[0]) + 0.5 * float(dev @ dev)
        if not grad:
            return value

        dX = _rbf_latent_grad(Gy, Ky_rbf, X, ly**2)
        dX[:-1] += _rbf_latent_grad(Gx, Kx_rbf, Xin, lx**2) + 2.0 * cx * (Gx @ Xin)
        dX[1:] += ax
        dX[0] += X[0]

        dm = np.array([
            np.sum(Gy * Ky_rbf),
            np.sum(Gy * Ky_rbf * r2) / ly**2,
            ny * np.trace(Gy),
        ])
        dd = np.array([
            np.sum(Gx * Kx_rbf),
            np.sum(Gx * Kx_rbf * r2d) / lx**2,
            np.sum(Gx * Kx_lin),
            nx * np.trace(Gx),
        ])
        dh = np.concatenate([dm, dd]) + dev / HYPER_PRIOR_STD
        return value, np.concatenate([dX.ravel(), dh])


@dataclass
class GpdmModel:
    tag: str
    latents: np.ndarray
    observations: np.ndarray
    map_hyper: np.ndarray  # variance, lengthscale, noise (standardised units)
    dyn_hyper: np.ndarray  # variance, lengthscale, linear, noise
    history: list = field(default_factory=list, repr=False, compare=False)

    def __post_init__(self):
        self.latents = np.asarray(self.latents, float)
        self.observations = np.asarray(self.observations, float)
        self.map_hyper = np.asarray(self.map_hyper, float)
        self.dyn_hyper = np.asarray(self.dyn_hyper, float)
        if len(self.latents) < 3:
            raise ValueError("a GPDM needs at least 3 frames")
        if np.any(self.map_hyper <= 0) or np.any(self.dyn_hyper <= 0):
            raise ValueError("hyperparameters must be positive")
        self.obs_mean, self.obs_scale = observation_stats(self.observations)
        Ys = (self.observations - self.obs_mean) / self.obs_scale
        X = self.latents
        self.Ky = self.map_kernel(X, X) + (self.map_hyper[2] + JITTER) * np.eye(len(X))
        self.Ky_inv = cho_solve(cho_factor(self.Ky, lower=True), np.eye(len(X)))
        self.Ky_alpha = self.Ky_inv @ Ys
        Xin, Xout = X[:-1], X[1:]
        self.Kx = self.dyn_kernel(Xin, Xin) + (self.dyn_hyper[3] + JITTER) * np.eye(len(Xin))
        self.Kx_inv = cho_solve(cho_factor(self.Kx, lower=True), np.eye(len(Xin)))
        self.Kx_alpha = self.Kx_inv @ Xout

    @property
    def T(self):
        return len(self.latents)

    @property
    def noise_std(self):
        """Observation noise standard deviation in descriptor units."""
        return float(np.sqrt(self.map_hyper[2]) * self.obs_scale)

    def map_kernel(self, A, B):
        s, ell, _ = self.map_hyper
        return s * np.exp(-0.5 * _sqdist(A, B) / ell**2)

    def dyn_kernel(self, A, B, rbf=True, linear=True):
        s, ell, c, _ = self.dyn_hyper
        K = np.zeros((len(A), len(B)))
        if rbf:
            K += s * np.exp(-0.5 * _sqdist(A, B) / ell**2)
        if linear:
            K += c * (A @ B.T)
        return K

    def predict_observation(self, latent):
        """Posterior mean (N, 23) and per-point predictive variance (N, 23)."""
        L = np.atleast_2d(np.asarray(latent, float))
        ks = self.map_kernel(L, self.latents)
        mean = self.obs_mean + self.obs_scale * (ks @ self.Ky_alpha)
        v = self.map_hyper[0] + self.map_hyper[2] - np.einsum("ij,jk,ik->i", ks, self.Ky_inv, ks)
        var = np.maximum(v, 0.0)[:, None] * self.obs_scale**2 * np.ones((1, self.observations.shape[1]))
        if np.ndim(latent) == 1:
            return mean[0], var[0]
        return mean, var

    def predict_dynamics(self, latent):
        """Posterior mean and variance of the next latent, (N, 2) each."""
        L = np.atleast_2d(np.asarray(latent, float))
        Xin = self.latents[:-1]
        ks = self.dyn_kernel(L, Xin)
        mean = ks @ self.Kx_alpha
        s, _, c, noise = self.dyn_hyper
        prior = s + c * np.einsum("ij,ij->i", L, L) + noise
        v = prior - np.einsum("ij,jk,ik->i", ks, self.Kx_inv, ks)
        var = np.maximum(v, 0.0)[:, None] * np.ones((1, LATENT_DIM))
        if np.ndim(latent) == 1:
            return mean[0], var[0]
        return mean, var

    def linear_trend(self, latent):
        """Dynamics mean contributed by the linear kernel alone."""
        L = np.atleast_2d(np.asarray(latent, float))
        return self.dyn_kernel(L, self.latents[:-1], rbf=False) @ self.Kx_alpha

    def min_eigenvalues(self):
        return float(np.linalg.eigvalsh(self.Ky)[0]), float(np.linalg.eigvalsh(self.Kx)[0])

    def reconstruction_rms(self):
        mean, _ = self.predict_observation(self.latents)
        return float(np.sqrt(np.mean((mean - self.observations) ** 2)))

    def latent_spacing(self):
        steps = np.linalg.norm(np.diff(self.latents, axis=0), axis=1)
        m = float(np.median(steps))
        return m if m > 0 else 1e-3


def initial_parameters(Y, config=None):
    """Starting point of the optimisation and the hyperprior means."""
    cfg = config or GpdmConfig()
    mean, scale = observation_stats(Y)
    Ys = (Y - mean) / scale
    X = pca_latents(Ys)
    ly = _median_distance(X)
    lx = _median_distance(X[:-1])
    hyp = np.log([cfg.init_variance, ly, cfg.init_noise, cfg.init_variance, lx, cfg.init_variance, cfg.init_noise])
    return Ys, np.concatenate([X.ravel(), hyp]), hyp


def train_gpdm(sequence, config=None, tag="") -> GpdmModel:
    """Fit latents and hyperparameters by gradient descent with backtracking.

    Step sizes start from the Barzilai-Borwein estimate and are halved until
    the Armijo condition holds, so accepted steps never increase the objective.
    """
    cfg = config or GpdmConfig()
    Y = np.asarray(sequence, float)
    if Y.ndim != 2 or len(Y) < 3:
        raise ValueError("training sequence must be a (T>=3, D) array")
    if not np.all(np.isfinite(Y)):
        raise ValueError("training sequence contains non-finite values")
    Ys, theta, prior_mean = initial_parameters(Y, cfg)
    obj = GpdmObjective(Ys, prior_mean)

    def evaluate(th):
        try:
            return obj(th)
        except np.linalg.LinAlgError:
            return np.inf, None

    f, g = evaluate(theta)
    if not np.isfinite(f):
        raise GpdmError("objective is not finite at the initial point")
    history = [f]
    step = 1e-3 / max(1.0, np.linalg.norm(g))
    prev_theta = prev_g = None
    for it in range(cfg.max_iter):
        gnorm = np.linalg.norm(g)
        if gnorm < cfg.grad_tol:
            break
        if prev_theta is not None:
            s = theta - prev_theta
            yv = g - prev_g
            sy = float(s @ yv)
            if sy > 0:
                step = float(s @ s) / sy
        t = step
        while True:
            cand = theta - t * g
            fc, gc = evaluate(cand)
            if np.isfinite(fc) and fc <= f - 1e-4 * t * gnorm**2:
                break
            t *= 0.5
            if t < 1e-20:
                break
        if not (np.isfinite(fc) and fc <= f):
            if not np.isfinite(f):
                raise GpdmError(f"non-finite objective at iteration {it}")
            break
        prev_theta, prev_g = theta, g
        theta, f, g = cand, fc, gc
        history.append(f)
        if not np.isfinite(f):
            raise GpdmError(f"non-finite objective at iteration {it}: f={f}, |g|={gnorm}")
        step = t

    X, lm, ld = obj.split(theta)
    model = GpdmModel(tag, X.copy(), Y.copy(), np.exp(lm), np.exp(ld))
    model.history = history
    ey, ex = model.min_eigenvalues()
    if not (ey > 0 and ex > 0):
        raise GpdmError(f"kernel matrix not positive definite (min eigenvalues {ey}, {ex})")
    return model


def gaussian_loglik(means, variances, x):
    v = np.maximum(variances, 1e-300)
    return -0.5 * np.sum((x - means) ** 2 / v + np.log(2 * np.pi * v), axis=-1)


def measurement_loglik(model, latents, measurement):
    means, var = model.predict_observation(np.atleast_2d(latents))
    if hasattr(measurement, "log_likelihood"):
        return measurement.log_likelihood(means)
    return gaussian_loglik(means, var, np.asarray(measurement, float))


def init_latent(bank, measurement, refine=5):
    """Best (model tag, latent) for a measurement across a bank of GPDMs.

    Every training latent is scanned, then a ``refine`` x ``refine`` grid of
    latent-step spacing around the winner. ``measurement`` is either a pose
    descriptor (scored with the Gaussian predictive density) or any object
    with a ``log_likelihood(features)`` method, e.g. joint heatmaps.
    """
    bank = list(bank)
    if not bank:
        raise ValueError("model bank is empty")
    best = (-np.inf, None, None)
    for model in bank:
        ll = measurement_loglik(model, model.latents, measurement)
        i = int(np.argmax(ll))
        if ll[i] > best[0]:
            best = (float(ll[i]), model, model.latents[i])
    _, model, centre = best
    offs = np.linspace(-1.0, 1.0, refine) * model.latent_spacing()
    grid = np.array([centre + (dx, dy) for dy in offs for dx in offs])
    ll = measurement_loglik(model, grid, measurement)
    j = int(np.argmax(ll))
    return model.tag, grid[j].copy()


# -- GPDM1 codec -----------------------------------------------------------------

def dumps_model(model: GpdmModel) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    tag = model.tag.encode("utf-8")
    buf.write(struct.pack("<H", len(tag)))
    buf.write(tag)
    T, D = model.observations.shape
    buf.write(struct.pack("<II", T, D))
    buf.write(np.ascontiguousarray(model.latents, "<f8").tobytes())
    buf.write(np.ascontiguousarray(model.observations, "<f8").tobytes())
    buf.write(np.ascontiguousarray(model.map_hyper, "<f8").tobytes())
    buf.write(np.ascontiguousarray(model.dyn_hyper, "<f8").tobytes())
    return buf.getvalue()


def loads_model(data: bytes) -> GpdmModel:
    buf = io.BytesIO(data)
    if buf.read(len(MAGIC)) != MAGIC:
        raise ValueError("not a GPDM1 file")
    (n,) = struct.unpack("<H", buf.read(2))
    tag = buf.read(n).decode("utf-8")
    T, D = struct.unpack("<II", buf.read(8))

    def arr(count, shape):
        return np.frombuffer(buf.read(8 * count), dtype="<f8").astype(float).reshape(shape)

    latents = arr(T * LATENT_DIM, (T, LATENT_DIM))
    obs = arr(T * D, (T, D))
    mh = arr(3, (3,))
    dh = arr(4, (4,))
    return GpdmModel(tag, latents, obs, mh, dh)


def save_bank(path, models):
    """Concatenated GPDM1 records, each prefixed with its byte length."""
    with open(path, "wb") as fh:
        for m in models:
            blob = dumps_model(m)
            fh.write(struct.pack("<I", len(blob)))
            fh.write(blob)


def load_bank(path):
    models = []
    with open(path, "rb") as fh:
        data = fh.read()
    pos = 0
    while pos < len(data):
        (n,) = struct.unpack_from("<I", data, pos)
        pos += 4
        models.append(loads_model(data[pos : pos + n]))
        pos += n
    return models
