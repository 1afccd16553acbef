"""Design matrices, GMM moment machinery and the pseudo-posterior.

With the identity link each subject contributes the moment
``u_i(beta) = x_i (y_i - x_i' beta)``; the sample moment ``U_n`` and its
covariance ``Sigma_n`` define ``Q_n = U_n' Sigma_n^-1 U_n`` and the
pseudo-log-likelihood ``-Q_n / 2``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

from .data import Dataset
from .errors import DimensionMismatch, InputError, RankDeficient, SingularCovariance
from .survival import PseudoObsVector

RIDGE_LEVELS = (1e-10, 1e-8, 1e-6, 1e-4)
RANK_TOL = 1e-10
DEFAULT_PRIOR_VAR = 10.0

TREATMENT = "arm"
INTERCEPT = "intercept"


@dataclass(frozen=True)
class RegressionSpec:
    """Linear RMST model on pseudo-observations.

    ``interactions`` lists covariate indices that interact with treatment.
    ``encoding="product"`` adds ``arm:E`` columns; ``"stratified"`` replaces
    treatment and the product by per-level treatment effects
    ``arm|E=0`` and ``arm|E=1`` (binary E only, single interaction).
    """

    include_treatment: bool = True
    covariate_indices: tuple[int, ...] = ()
    interactions: tuple[int, ...] = ()
    encoding: Literal["product", "stratified"] = "product"
    link: Literal["identity"] = "identity"

    def __post_init__(self):
        object.__setattr__(self, "covariate_indices", tuple(int(i) for i in self.covariate_indices))
        object.__setattr__(self, "interactions", tuple(int(i) for i in self.interactions))
        if len(set(self.covariate_indices)) != len(self.covariate_indices):
            raise InputError("duplicate covariate indices")
        if len(set(self.interactions)) != len(self.interactions):
            raise InputError("duplicate interaction indices")
        if self.link != "identity":
            raise InputError("only the identity link is supported")
        if self.encoding not in ("product", "stratified"):
            raise InputError(f"unknown encoding {self.encoding!r}")
        if self.interactions and not self.include_treatment:
            raise InputError("interactions require the treatment column")
        if self.encoding == "stratified" and len(self.interactions) != 1:
            raise InputError("stratified encoding needs exactly one interaction")

    @classmethod
    def from_names(cls, data_or_names, covariates: Sequence[str] = (),
                   interactions: Sequence[str] = (), encoding: str = "product",
                   include_treatment: bool = True) -> "RegressionSpec":
        names = list(getattr(data_or_names, "covariate_names", data_or_names))

        def index(name):
            try:
                return names.index(name)
            except ValueError:
                raise InputError(f"unknown covariate {name!r}; have {names}") from None

        cov = [index(c) for c in covariates]
        inter = [index(c) for c in interactions]
        for j in inter:
            if j not in cov:
                cov.append(j)
        return cls(include_treatment, tuple(cov), tuple(inter), encoding)


@dataclass(frozen=True, eq=False)
class DesignMatrix:
    values: np.ndarray
    column_names: tuple[str, ...]

    @property
    def shape(self):
        return self.values.shape

    def column(self, name: str) -> int:
        try:
            return self.column_names.index(name)
        except ValueError:
            raise InputError(f"no column {name!r}; have {list(self.column_names)}") from None


def check_rank(X: np.ndarray) -> None:
    sv = np.linalg.svd(X, compute_uv=False)
    if sv.size == 0 or sv[-1] < RANK_TOL * sv[0] or X.shape[0] < X.shape[1]:
        raise RankDeficient(
            f"design matrix is not of full column rank (singular values {sv[0]:.3g} .. {sv[-1]:.3g})")


def build_design(data: Dataset, spec: RegressionSpec = RegressionSpec()) -> DesignMatrix:
    p = len(data.covariate_names)
    for j in spec.covariate_indices + spec.interactions:
        if not 0 <= j < p:
            raise InputError(f"covariate index {j} out of range for {p} covariates")
    n = data.n
    arm = data.arm.astype(float)
    cols = [np.ones(n)]
    names = [INTERCEPT]
    stratified = spec.encoding == "stratified"
    if spec.include_treatment and not stratified:
        cols.append(arm)
        names.append(TREATMENT)
    for j in spec.covariate_indices:
        cols.append(data.covariates[:, j])
        names.append(data.covariate_names[j])
    for j in spec.interactions:
        z = data.covariates[:, j]
        e_name = data.covariate_names[j]
        if stratified:
            if not np.all(np.isin(z, (0.0, 1.0))):
                raise InputError(f"stratified encoding needs a 0/1 covariate; {e_name!r} is not binary")
            cols += [arm * (z == 0), arm * (z == 1)]
            names += [f"{TREATMENT}|{e_name}=0", f"{TREATMENT}|{e_name}=1"]
        else:
            cols.append(arm * z)
            names.append(f"{TREATMENT}:{e_name}")
    X = np.column_stack(cols).astype(float)
    check_rank(X)
    X.flags.writeable = False
    return DesignMatrix(X, tuple(names))


def _xy(X, y):
    Xv = X.values if isinstance(X, DesignMatrix) else np.asarray(X, dtype=float)
    yv = y.values if isinstance(y, PseudoObsVector) else np.asarray(y, dtype=float)
    if Xv.ndim != 2 or yv.ndim != 1 or Xv.shape[0] != yv.shape[0]:
        raise DimensionMismatch(f"X {Xv.shape} and y {yv.shape} do not conform")
    return Xv, yv


def _beta(beta, q):
    b = np.asarray(beta, dtype=float)
    if b.shape != (q,):
        raise DimensionMismatch(f"beta has shape {b.shape}, expected ({q},)")
    return b


def moments(beta, X, y) -> np.ndarray:
    """Per-subject moment contributions u_i(beta), shape (n, q)."""
    Xv, yv = _xy(X, y)
    b = _beta(beta, Xv.shape[1])
    return Xv * (yv - Xv @ b)[:, None]


def score(beta, X, y) -> np.ndarray:
    return moments(beta, X, y).mean(axis=0)


def moment_covariance(beta, X, y) -> np.ndarray:
    u = moments(beta, X, y)
    n = u.shape[0]
    U = u.mean(axis=0)
    S = u.T @ u / n**2 - np.outer(U, U) / n
    return (S + S.T) / 2


def _chol_with_ridge(S: np.ndarray, ridge: float = 0.0):
    """Cholesky factor of S + r I, escalating r on failure; returns (L, relative ridge)."""
    q = S.shape[-1]
    scale = np.trace(S) / q
    levels = ((ridge,) if ridge > 0 else (0.0,)) + tuple(r for r in RIDGE_LEVELS if r > ridge)
    for eps in levels:
        try:
            return np.linalg.cholesky(S + eps * scale * np.eye(q)), eps
        except np.linalg.LinAlgError:
            continue
    raise SingularCovariance("moment covariance is not positive definite at the largest ridge level")


def objective(beta, X, y, ridge: float = 0.0) -> float:
    """Q_n(beta) = U_n' Sigma_n^-1 U_n via a Cholesky solve."""
    U = score(beta, X, y)
    L, _ = _chol_with_ridge(moment_covariance(beta, X, y), ridge)
    z = np.linalg.solve(L, U)
    return float(z @ z)


def pseudo_log_likelihood(beta, X, y) -> float:
    return -0.5 * objective(beta, X, y)


@dataclass(frozen=True, eq=False)
class GmmState:
    """Parameter vector with an independent normal prior on each coefficient."""

    beta: np.ndarray
    prior_mean: np.ndarray
    prior_var: np.ndarray
    parameter_names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=float).reshape(-1)
        q = beta.size
        pm = np.broadcast_to(np.asarray(self.prior_mean, dtype=float), (q,)).copy()
        pv = np.broadcast_to(np.asarray(self.prior_var, dtype=float), (q,)).copy()
        if np.any(~np.isfinite(pv)) or np.any(pv <= 0):
            raise InputError("prior variances must be positive and finite")
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "prior_mean", pm)
        object.__setattr__(self, "prior_var", pv)
        names = tuple(self.parameter_names) or tuple(f"beta{j}" for j in range(q))
        if len(names) != q:
            raise DimensionMismatch("parameter_names length differs from beta")
        object.__setattr__(self, "parameter_names", names)

    @classmethod
    def default(cls, X: DesignMatrix, prior_sd: float = math.sqrt(DEFAULT_PRIOR_VAR)) -> "GmmState":
        q = X.shape[1]
        return cls(np.zeros(q), np.zeros(q), np.full(q, prior_sd**2), X.column_names)

    @property
    def q(self) -> int:
        return self.beta.size


def log_prior(beta, state: GmmState) -> float:
    b = _beta(beta, state.q)
    return float(-0.5 * np.sum((b - state.prior_mean) ** 2 / state.prior_var))


def log_posterior(beta, state: GmmState, X, y) -> float:
    """Pseudo-log-likelihood plus independent normal log prior, constants dropped."""
    return pseudo_log_likelihood(beta, X, y) + log_prior(beta, state)


def log_posterior_grad(beta, state: GmmState, X, y) -> np.ndarray:
    """Central finite-difference gradient; for optional gradient-based use only."""
    b = np.asarray(beta, dtype=float)
    g = np.empty_like(b)
    for j in range(b.size):
        h = 1e-6 * (1.0 + abs(b[j]))
        up, dn = b.copy(), b.copy()
        up[j] += h
        dn[j] -= h
        g[j] = (log_posterior(up, state, X, y) - log_posterior(dn, state, X, y)) / (2 * h)
    return g


class BatchedPosterior:
    """Vectorized log posterior over a batch of parameter vectors, shape (k, q).

    With the identity link ``r_i^2`` is quadratic in beta, so
    ``(1/n^2) sum_i x_i x_i' r_i^2`` is a quadratic polynomial in beta whose
    coefficient tensors are precomputed once; each evaluation then costs
    O(q^4) regardless of n. Points where the moment covariance cannot be
    factorized even with the largest ridge get ``-inf``.
    ``ridge_activations`` counts evaluations that needed a ridge.
    """

    def __init__(self, state: GmmState, X, y):
        X, y = _xy(X, y)
        self.n, self.q = n, q = X.shape
        if state.q != q:
            raise DimensionMismatch("prior dimension differs from the design")
        self.state = state
        self.ridge_activations = 0
        outer = (X[:, :, None] * X[:, None, :]).reshape(n, q * q)     # x_i x_i'
        self._g = X.T @ y / n
        self._h = X.T @ X / n
        self._a0 = (y**2 @ outer) / n**2
        self._a1 = ((X * y[:, None]).T @ outer) / n**2                 # (q, q*q)
        self._a2 = (outer.T @ outer) / n**2                             # (q*q, q*q)
        self._prior_mean = state.prior_mean
        self._prior_prec = 1.0 / state.prior_var

    def moment_terms(self, B: np.ndarray):
        """Sample moments U (k, q) and their covariance Sigma (k, q, q)."""
        k, q = B.shape
        U = self._g[None, :] - B @ self._h
        bb = (B[:, :, None] * B[:, None, :]).reshape(k, q * q)
        S = (self._a0[None] - 2.0 * B @ self._a1 + bb @ self._a2).reshape(k, q, q)
        S = S - U[:, :, None] * U[:, None, :] / self.n
        return U, (S + S.transpose(0, 2, 1)) / 2

    def objective(self, B: np.ndarray) -> np.ndarray:
        U, S = self.moment_terms(B)
        try:
            z = np.linalg.solve(np.linalg.cholesky(S), U[:, :, None])
            return np.einsum("kij,kij->k", z, z)
        except np.linalg.LinAlgError:
            pass
        Q = np.empty(B.shape[0])
        for k in range(B.shape[0]):
            try:
                Lk, eps = _chol_with_ridge(S[k])
            except SingularCovariance:
                Q[k] = np.inf
                continue
            if eps > 0:
                self.ridge_activations += 1
            zk = np.linalg.solve(Lk, U[k])
            Q[k] = zk @ zk
        return Q

    def __call__(self, B: np.ndarray) -> np.ndarray:
        if B.ndim == 1:
            B = B[None, :]
        dev = B - self._prior_mean
        out = -0.5 * (self.objective(B) + (dev * dev) @ self._prior_prec)
        out[np.isnan(out)] = -np.inf
        return out
