"""Maximum-likelihood engine for all model families.

Families are identified by string tags:

* cross-section: ``poisson``, ``nb1``, ``nb2``
* static panel: ``mvnb``, ``nbbeta`` (suffix ``-star`` folds in the known
  pre-observation years)
* dynamically weighted: ``hf-mvnb``, ``hf-nbb`` (same ``-star`` suffix)
* claim score: ``bms-poisson``, ``bms-nb1``, ``bms-nb2`` at a fixed
  structural triple (psi, s, entry), with the relativity slope delta
  estimated alongside the regression and dispersion parameters

Estimation maximizes the mean per-contract log-likelihood with BFGS and
central-difference gradients (step ``eps^(1/3) * max(1, |theta|)``);
constrained parameters are optimized on transformed scales (log for tau,
kappa, b, delta; log of a - 2; logit for nu, whose upper boundary nu = 1
is reachable in floating point).  Standard errors come from the
numerically differentiated observed information on the natural scale.

``grid_search`` fits every structural triple on an integer lattice and
ranks the fits by log-likelihood; ties break toward the smaller scale.
The likelihood evaluations are fully vectorized over contracts, and
log-gamma ratios with small integer counts are computed as rising
factorials over count masks, which keeps a lattice fit at a few hundred
thousand contracts in the seconds range.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import minimize
from scipy.special import gammaln

from .bms import BmsConfig
from .distributions import DomainError
from .panel import DEFAULT_LAMBDA_BAR

__all__ = [
    "FAMILY_TAGS",
    "FitOptions",
    "FitResult",
    "GridSpec",
    "GridSearchResult",
    "link",
    "fit",
    "grid_search",
]

_GRAD_STEP = float(np.finfo(float).eps) ** (1.0 / 3.0)
_HESS_STEP = float(np.finfo(float).eps) ** 0.25

N_BETA = 9  # intercept + eight binary covariates


def link(covariates, exposure, beta):
    """A-priori mean d * exp(beta_0 + x' beta)."""
    beta = np.asarray(beta, dtype=float)
    x = np.asarray(covariates, dtype=float)
    eta = beta[0] + x @ beta[1:]
    return exposure * np.exp(eta)


# ---------------------------------------------------------------------------
# family registry

_TRANSFORMS = {
    "log": (lambda v: math.log(v), lambda t: math.exp(t)),
    "log_offset2": (lambda v: math.log(v - 2.0), lambda t: 2.0 + math.exp(t)),
    "logit": (
        lambda v: math.log(v / (1.0 - v)) if v < 1.0 else 745.0,
        lambda t: 1.0 / (1.0 + math.exp(-t)),
    ),
}


@dataclass(frozen=True)
class _Extra:
    name: str
    transform: str
    start: float


@dataclass(frozen=True)
class _Family:
    tag: str
    extras: tuple[_Extra, ...]
    starred: bool = False
    bms_base: str | None = None

    @property
    def is_bms(self):
        return self.bms_base is not None

    @property
    def param_names(self):
        return [f"beta_{i}" for i in range(N_BETA)] + [e.name for e in self.extras]

    def reported_param_count(self):
        # structural triple counted as three parameters for scale models
        return N_BETA + len(self.extras) + (3 if self.is_bms else 0)


def _make_families():
    tau = _Extra("tau", "log", 0.5)
    kappa = _Extra("kappa", "log", 0.5)
    a = _Extra("a", "log_offset2", 10.0)
    b = _Extra("b", "log", 0.5)
    nu = _Extra("nu", "logit", 0.95)
    delta = _Extra("delta", "log", 0.1)
    families = [
        _Family("poisson", ()),
        _Family("nb1", (tau,)),
        _Family("nb2", (tau,)),
        _Family("mvnb", (kappa,)),
        _Family("mvnb-star", (kappa,), starred=True),
        _Family("nbbeta", (a, b)),
        _Family("nbbeta-star", (a, b), starred=True),
        _Family("hf-mvnb", (kappa, nu)),
        _Family("hf-mvnb-star", (kappa, nu), starred=True),
        _Family("hf-nbb", (a, b, nu)),
        _Family("hf-nbb-star", (a, b, nu), starred=True),
        _Family("bms-poisson", (delta,), bms_base="poisson"),
        _Family("bms-nb1", (tau, delta), bms_base="nb1"),
        _Family("bms-nb2", (tau, delta), bms_base="nb2"),
    ]
    return {f.tag: f for f in families}


_FAMILIES = _make_families()
FAMILY_TAGS = tuple(_FAMILIES)


@dataclass(frozen=True)
class FitOptions:
    """Optimizer and reporting knobs.

    ``gtol`` applies to the gradient of the mean per-contract
    log-likelihood (the total log-likelihood is too large for a
    finite-difference gradient to resolve 1e-6 at portfolio scale).
    ``bic_obs`` selects the BIC sample size: contracts (default) or
    policyholders.
    """

    gtol: float = 1e-6
    ll_rtol: float = 1e-10
    max_iter: int = 500
    lambda_bar: float = DEFAULT_LAMBDA_BAR
    compute_se: bool = True
    bic_obs: str = "contracts"
    start_params: dict | None = None


@dataclass(frozen=True)
class FitResult:
    """Fitted model: estimates, precision, fit statistics, diagnostics."""

    family: str
    params: dict
    std_errors: dict | None
    loglik: float
    aic: float
    bic: float
    n_params: int
    n_obs: int
    n_policyholders: int
    converged: bool
    structural: dict | None = None
    diagnostics: dict = field(default_factory=dict)

    def params_vector(self):
        return np.array([self.params[name] for name in sorted(self.params)], dtype=float)

    def beta(self):
        return np.array([self.params[f"beta_{i}"] for i in range(N_BETA)])

    def to_dict(self):
        return {
            "schema_version": 1,
            "family": self.family,
            "params": dict(self.params),
            "std_errors": dict(self.std_errors) if self.std_errors is not None else None,
            "loglik": self.loglik,
            "aic": self.aic,
            "bic": self.bic,
            "n_params": self.n_params,
            "n_obs": self.n_obs,
            "n_policyholders": self.n_policyholders,
            "converged": self.converged,
            "structural": dict(self.structural) if self.structural is not None else None,
            "diagnostics": dict(self.diagnostics),
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data):
        if data.get("schema_version") != 1:
            raise DomainError(f"unsupported fit schema {data.get('schema_version')!r}")
        return cls(
            family=data["family"],
            params=data["params"],
            std_errors=data["std_errors"],
            loglik=data["loglik"],
            aic=data["aic"],
            bic=data["bic"],
            n_params=data["n_params"],
            n_obs=data["n_obs"],
            n_policyholders=data["n_policyholders"],
            converged=data["converged"],
            structural=data["structural"],
            diagnostics=data.get("diagnostics", {}),
        )


# ---------------------------------------------------------------------------
# design: dataset unpacked into flat arrays plus cached count structures


class _Design:
    def __init__(self, dataset, lambda_bar):
        if dataset.n_contracts == 0:
            raise DomainError("cannot fit on an empty dataset")
        self.n_contracts = dataset.n_contracts
        self.n_policyholders = dataset.n_policyholders
        self.X = np.hstack(
            [np.ones((dataset.n_contracts, 1)), dataset.covariates.astype(float)]
        )
        self.exposure = dataset.exposure
        self.n = dataset.claims.astype(float)
        self.n_int = dataset.claims
        self.pid = dataset.pid
        self.group_starts = dataset.group_starts
        self.group_sizes = dataset.group_sizes
        self.lambda_bar = lambda_bar

        self.sum_n = float(self.n.sum())
        self.const_logfact = float(gammaln(self.n + 1.0).sum())
        self.max_n = int(self.n_int.max(initial=0))
        # contract indices with count > i, for rising-factorial sums
        self._count_masks = [
            np.flatnonzero(self.n_int > i) for i in range(min(self.max_n, 64))
        ]
        self._count_tallies = np.array([len(m) for m in self._count_masks])
        self.nonzero = self._count_masks[0] if self._count_masks else np.empty(0, np.int64)

        # per-policyholder structures
        self.pid_sum_n = np.bincount(self.pid, weights=self.n, minlength=self.n_policyholders)
        self.prior_years = dataset.prior_years
        self.prior_counts = dataset.prior_counts
        self.prior_claims = dataset.prior_claims_total().astype(float)
        self.experience = dataset.experience_years
        # 1-based position of each contract within its policyholder
        self.position = (
            np.arange(self.n_contracts, dtype=np.int64)
            - np.repeat(self.group_starts, self.group_sizes)
            + 1
        )
        self._level_cache = {}

    # -- primitives ---------------------------------------------------------

    def lam(self, beta):
        eta = self.X @ beta
        np.clip(eta, -700.0, 700.0, out=eta)
        return self.exposure * np.exp(eta)

    def rising(self, shape):
        """sum over contracts of log Gamma(shape + n) - log Gamma(shape)."""
        if self.max_n > 64:
            return float((gammaln(shape + self.n) - gammaln(shape)).sum())
        total = 0.0
        for i, idx in enumerate(self._count_masks):
            total += float(np.log(shape[idx] + i).sum())
        return total

    def rising_scalar(self, shape):
        """Same with a scalar shape: sum_i #(n > i) * log(shape + i)."""
        if self.max_n > 64:
            return float((gammaln(shape + self.n) - gammaln(shape)).sum())
        if not len(self._count_tallies):
            return 0.0
        i = np.arange(len(self._count_tallies), dtype=float)
        return float((self._count_tallies * np.log(shape + i)).sum())

    def sum_n_log(self, values):
        """sum over contracts of n * log(values)."""
        idx = self.nonzero
        return float((self.n[idx] * np.log(values[idx])).sum())

    def group_sum(self, values):
        return np.bincount(self.pid, weights=values, minlength=self.n_policyholders)

    def group_prefix_excl(self, values):
        """Within-policyholder exclusive prefix sums (contract order)."""
        cs = np.cumsum(values)
        excl = cs - values
        return excl - np.repeat(excl[self.group_starts], self.group_sizes)

    def levels(self, psi, s, entry):
        """Per-contract scale level for a structural triple (small LRU cache)."""
        key = (psi, s, entry)
        if key not in self._level_cache:
            if len(self._level_cache) >= 4:
                self._level_cache.pop(next(iter(self._level_cache)))
            config = BmsConfig(psi=psi, s=s, entry=entry, delta=0.0)
            unknown = np.maximum(self.experience - self.prior_years, 0)
            current = np.maximum(entry - unknown, 1).astype(np.int64)
            for year in range(10, 0, -1):  # oldest known year first
                mask = self.prior_years >= year
                if np.any(mask):
                    counts = self.prior_counts[mask, year - 1]
                    raw = current[mask] - (counts == 0) + psi * counts
                    current[mask] = np.clip(raw, 1, s)
            out = np.zeros(self.n_contracts, dtype=np.int64)
            max_t = int(self.group_sizes.max(initial=0))
            for t in range(1, max_t + 1):
                active = np.flatnonzero(self.group_sizes >= t)
                idx = self.group_starts[active] + t - 1
                out[idx] = current[active]
                counts = self.n_int[idx]
                raw = current[active] - (counts == 0) + psi * counts
                current[active] = np.clip(raw, 1, config.s)
            self._level_cache[key] = out
        return self._level_cache[key]


# ---------------------------------------------------------------------------
# per-family log-likelihoods (total over the dataset)


def _ll_poisson_mean(design, mean):
    return design.sum_n_log(mean) - float(mean.sum()) - design.const_logfact


def _ll_nb1_mean(design, mean, tau):
    shape = mean / tau
    return (
        design.rising(shape)
        - math.log1p(tau) * float(shape.sum())
        - math.log1p(1.0 / tau) * design.sum_n
        - design.const_logfact
    )


def _ll_nb2_mean(design, mean, tau):
    r = 1.0 / tau
    log_denom = np.log(r + mean)
    idx = design.nonzero
    return (
        design.rising_scalar(r)
        + design.sum_n_log(mean)
        - float((design.n[idx] * log_denom[idx]).sum())
        + r * (design.n_contracts * math.log(r) - float(log_denom.sum()))
        - design.const_logfact
    )


_MEAN_LL = {"poisson": _ll_poisson_mean, "nb1": _ll_nb1_mean, "nb2": _ll_nb2_mean}


def _ll_cross(design, beta, extras, family):
    mean = design.lam(beta)
    if family.tag == "poisson":
        return _ll_poisson_mean(design, mean)
    return _MEAN_LL[family.tag](design, mean, extras["tau"])


def _prior_terms(design, starred):
    if starred:
        return design.prior_claims, design.prior_years.astype(float)
    zeros = np.zeros(design.n_policyholders)
    return zeros, zeros


def _ll_mvnb(design, beta, extras, family):
    kappa = extras["kappa"]
    lam = design.lam(beta)
    prior_claims, prior_years = _prior_terms(design, family.starred)
    alpha0 = kappa + prior_claims
    gamma0 = kappa + prior_years * design.lambda_bar
    sum_lam = design.group_sum(lam)
    sum_n = design.pid_sum_n
    per_pid = (
        alpha0 * np.log(gamma0)
        - gammaln(alpha0)
        + gammaln(alpha0 + sum_n)
        - (alpha0 + sum_n) * np.log(gamma0 + sum_lam)
    )
    return design.sum_n_log(lam) - design.const_logfact + float(per_pid.sum())


def _ll_nbbeta(design, beta, extras, family):
    a, b = extras["a"], extras["b"]
    lam = design.lam(beta)
    prior_claims, prior_years = _prior_terms(design, family.starred)
    a0 = a + prior_years * design.lambda_bar
    b0 = b + prior_claims
    sum_lam = design.group_sum(lam)
    sum_n = design.pid_sum_n
    per_pid = (
        gammaln(a0 + b0)
        - gammaln(a0)
        - gammaln(b0)
        + gammaln(a0 + sum_lam)
        + gammaln(b0 + sum_n)
        - gammaln(a0 + b0 + sum_lam + sum_n)
    )
    return design.rising(lam) - design.const_logfact + float(per_pid.sum())


def _hf_start(design, base_count, base_mean, nu, starred):
    """Per-policyholder discounted starting state (count side, mean side)."""
    if not starred:
        P = design.n_policyholders
        return np.full(P, base_count), np.full(P, base_mean)
    m = design.prior_years.astype(float)
    powers = nu ** np.arange(1, 11)
    count0 = nu**m * base_count + design.prior_counts @ powers
    year_mask = (np.arange(10)[None, :] < design.prior_years[:, None]).astype(float)
    mean0 = nu**m * base_mean + design.lambda_bar * (year_mask @ powers)
    return count0, mean0


def _hf_states(design, lam, nu, count0, mean0):
    """Per-contract discounted accumulators preceding each contract."""
    pos = design.position.astype(float)
    log_nu = math.log(nu) if nu < 1.0 else 0.0
    up = np.exp((1.0 - pos) * log_nu)  # nu^(1-t), >= 1
    down = np.exp((pos - 1.0) * log_nu)  # nu^(t-1), <= 1
    count_acc = down * (count0[design.pid] + design.group_prefix_excl(up * design.n))
    mean_acc = down * (mean0[design.pid] + design.group_prefix_excl(up * lam))
    return count_acc, mean_acc


def _ll_hf_mvnb(design, beta, extras, family):
    kappa, nu = extras["kappa"], extras["nu"]
    lam = design.lam(beta)
    count0, mean0 = _hf_start(design, kappa, kappa, nu, family.starred)
    alpha, gamma = _hf_states(design, lam, nu, count0, mean0)
    log_denom = np.log(gamma + lam)
    idx = design.nonzero
    return (
        design.rising(alpha)
        + design.sum_n_log(lam)
        - float((design.n[idx] * log_denom[idx]).sum())
        + float((alpha * (np.log(gamma) - log_denom)).sum())
        - design.const_logfact
    )


def _ll_hf_nbb(design, beta, extras, family):
    a, b, nu = extras["a"], extras["b"], extras["nu"]
    lam = design.lam(beta)
    count0, mean0 = _hf_start(design, b, a, nu, family.starred)
    g, A = _hf_states(design, lam, nu, count0, mean0)
    return (
        design.rising(g)  # log G(g+n) - log G(g)
        + design.rising(lam)  # log G(lam+n) - log G(lam)
        - design.rising(A + g + lam)  # -(log G(A+g+lam+n) - log G(A+g+lam))
        + float(
            (gammaln(A + g) + gammaln(A + lam) - gammaln(A) - gammaln(A + g + lam)).sum()
        )
        - design.const_logfact
    )


def _ll_bms(design, beta, extras, family, structural):
    psi, s, entry = structural
    levels = design.levels(psi, s, entry)
    rel = 1.0 + extras["delta"] * (levels - 1)
    mean = design.lam(beta) * rel
    if family.bms_base == "poisson":
        return _ll_poisson_mean(design, mean)
    return _MEAN_LL[family.bms_base](design, mean, extras["tau"])


def _total_loglik(design, family, beta, extras, structural):
    if family.is_bms:
        return _ll_bms(design, beta, extras, family, structural)
    if family.tag in ("poisson", "nb1", "nb2"):
        return _ll_cross(design, beta, extras, family)
    if family.tag.startswith("mvnb"):
        return _ll_mvnb(design, beta, extras, family)
    if family.tag.startswith("nbbeta"):
        return _ll_nbbeta(design, beta, extras, family)
    if family.tag.startswith("hf-mvnb"):
        return _ll_hf_mvnb(design, beta, extras, family)
    if family.tag.startswith("hf-nbb"):
        return _ll_hf_nbb(design, beta, extras, family)
    raise DomainError(f"unknown family {family.tag!r}")


# ---------------------------------------------------------------------------
# numerical derivatives


def central_gradient(f, x, step=_GRAD_STEP):
    h = step * np.maximum(1.0, np.abs(x))
    grad = np.empty_like(x)
    for i in range(len(x)):
        xp = x.copy()
        xm = x.copy()
        xp[i] += h[i]
        xm[i] -= h[i]
        grad[i] = (f(xp) - f(xm)) / (2.0 * h[i])
    return grad


def central_hessian(f, x, step=_HESS_STEP):
    k = len(x)
    h = step * np.maximum(1.0, np.abs(x))
    H = np.empty((k, k))
    f0 = f(x)
    for i in range(k):
        xp = x.copy()
        xm = x.copy()
        xp[i] += h[i]
        xm[i] -= h[i]
        H[i, i] = (f(xp) - 2.0 * f0 + f(xm)) / h[i] ** 2
    for i in range(k):
        for j in range(i + 1, k):
            xpp = x.copy()
            xpm = x.copy()
            xmp = x.copy()
            xmm = x.copy()
            xpp[i] += h[i]
            xpp[j] += h[j]
            xpm[i] += h[i]
            xpm[j] -= h[j]
            xmp[i] -= h[i]
            xmp[j] += h[j]
            xmm[i] -= h[i]
            xmm[j] -= h[j]
            H[i, j] = H[j, i] = (f(xpp) - f(xpm) - f(xmp) + f(xmm)) / (4.0 * h[i] * h[j])
    return H


# ---------------------------------------------------------------------------
# fitting


def _pack_start(family, design, options):
    start = dict(options.start_params or {})
    if f"beta_{0}" not in start and family.tag != "poisson":
        base = fit(
            None,
            "poisson",
            options=replace(options, compute_se=False, start_params=None),
            _design=design,
        )
        for i in range(N_BETA):
            start.setdefault(f"beta_{i}", base.params[f"beta_{i}"])
    beta0 = math.log(max(design.sum_n, 0.5) / float(design.exposure.sum()))
    theta = [start.get(f"beta_{i}", beta0 if i == 0 else 0.0) for i in range(N_BETA)]
    for extra in family.extras:
        fwd, _ = _TRANSFORMS[extra.transform]
        theta.append(fwd(start.get(extra.name, extra.start)))
    return np.array(theta, dtype=float)


def _unpack(family, theta):
    beta = np.asarray(theta[:N_BETA], dtype=float)
    extras = {}
    for extra, t in zip(family.extras, theta[N_BETA:]):
        _, inv = _TRANSFORMS[extra.transform]
        extras[extra.name] = inv(float(t))
    return beta, extras


def _standard_errors(design, family, params, structural):
    """Inverse observed information on the natural scale, or None."""
    names = family.param_names
    x0 = np.array([params[name] for name in names], dtype=float)

    def f_nat(vec):
        beta = vec[:N_BETA]
        extras = dict(zip([e.name for e in family.extras], vec[N_BETA:]))
        try:
            value = _total_loglik(design, family, beta, extras, structural)
        except (DomainError, ValueError, FloatingPointError):
            return math.nan
        return value

    try:
        H = central_hessian(f_nat, x0)
    except (DomainError, ValueError):
        return None, "information matrix evaluation failed"
    if not np.all(np.isfinite(H)):
        return None, "information matrix not finite (parameter at boundary?)"
    try:
        cov = np.linalg.inv(-H)
    except np.linalg.LinAlgError:
        return None, "observed information is singular"
    diag = np.diag(cov)
    if np.any(diag <= 0):
        return None, "observed information is not positive definite"
    return dict(zip(names, np.sqrt(diag))), None


def fit(dataset, family, *, structural=None, options=None, _design=None):
    """Maximize the family's log-likelihood on a panel dataset.

    ``structural`` is the (psi, s, entry) triple, required by scale
    families and rejected otherwise.  Non-convergence is flagged on the
    result, never silently dropped.
    """
    options = options or FitOptions()
    if family not in _FAMILIES:
        raise DomainError(f"unknown family {family!r}")
    fam = _FAMILIES[family]
    if fam.is_bms:
        if structural is None:
            raise DomainError(f"{family} requires a structural (psi, s, entry) triple")
        psi, s, entry = (int(v) for v in structural)
        BmsConfig(psi=psi, s=s, entry=entry, delta=0.0)  # validate
        structural = (psi, s, entry)
    elif structural is not None:
        raise DomainError(f"{family} does not take a structural triple")

    design = _design if _design is not None else _Design(dataset, options.lambda_bar)
    scale = 1.0 / design.n_contracts

    def objective(theta):
        beta, extras = _unpack(fam, theta)
        try:
            value = _total_loglik(design, fam, beta, extras, structural)
        except (DomainError, ValueError, FloatingPointError):
            return math.inf
        if not math.isfinite(value):
            return math.inf
        return -value * scale

    def jac(theta):
        return central_gradient(objective, theta)

    theta0 = _pack_start(fam, design, options)
    result = minimize(
        objective,
        theta0,
        jac=jac,
        method="BFGS",
        options={"gtol": options.gtol, "maxiter": options.max_iter},
    )
    theta_hat = np.asarray(result.x, dtype=float)
    grad_norm = float(np.max(np.abs(jac(theta_hat))))
    converged = bool(grad_norm < options.gtol)

    beta_hat, extras_hat = _unpack(fam, theta_hat)
    loglik = _total_loglik(design, fam, beta_hat, extras_hat, structural)
    params = {f"beta_{i}": float(beta_hat[i]) for i in range(N_BETA)}
    params.update({k: float(v) for k, v in extras_hat.items()})

    k = fam.reported_param_count()
    n_obs = design.n_contracts
    bic_n = design.n_policyholders if options.bic_obs == "policyholders" else n_obs
    aic = 2.0 * k - 2.0 * loglik
    bic = k * math.log(bic_n) - 2.0 * loglik

    std_errors = None
    diagnostics = {
        "iterations": int(result.nit),
        "grad_norm": grad_norm,
        "message": str(result.message),
    }
    if options.compute_se:
        std_errors, se_problem = _standard_errors(design, fam, params, structural)
        if se_problem:
            diagnostics["std_error_problem"] = se_problem

    return FitResult(
        family=family,
        params=params,
        std_errors=std_errors,
        loglik=float(loglik),
        aic=float(aic),
        bic=float(bic),
        n_params=k,
        n_obs=n_obs,
        n_policyholders=design.n_policyholders,
        converged=converged,
        structural=(
            {"psi": structural[0], "s": structural[1], "entry": structural[2]}
            if structural is not None
            else None
        ),
        diagnostics=diagnostics,
    )


# ---------------------------------------------------------------------------
# structural lattice search


@dataclass(frozen=True)
class GridSpec:
    """Integer lattice of structural triples.

    ``psi_values`` / ``entry_values`` of None mean 1..s at each scale
    size.  Explicit values are filtered to those <= s.
    """

    s_values: tuple[int, ...]
    psi_values: tuple[int, ...] | None = None
    entry_values: tuple[int, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "s_values", tuple(int(s) for s in self.s_values))
        if any(s < 2 for s in self.s_values):
            raise DomainError("scale sizes must be >= 2")

    def points(self):
        """Triples (s, psi, entry) in deterministic lattice order."""
        for s in self.s_values:
            psis = self.psi_values if self.psi_values is not None else range(1, s + 1)
            entries = (
                self.entry_values if self.entry_values is not None else range(1, s + 1)
            )
            for psi in psis:
                if not 1 <= psi <= s:
                    continue
                for entry in entries:
                    if not 1 <= entry <= s:
                        continue
                    yield (s, psi, entry)

    @classmethod
    def parse(cls, text):
        """Parse ``"s=2..11,psi=1..s,entry=1..s"`` (any key may be a single int)."""
        values = {"psi": None, "entry": None}
        s_values = None
        for token in text.split(","):
            token = token.strip()
            if not token:
                continue
            if "=" not in token:
                raise DomainError(f"grid token {token!r} is not key=value")
            key, _, spec = token.partition("=")
            key = key.strip()
            spec = spec.strip()
            if key not in ("s", "psi", "entry"):
                raise DomainError(f"unknown grid key {key!r}")
            if spec == "1..s":
                parsed = None
            elif ".." in spec:
                lo, _, hi = spec.partition("..")
                if hi == "s":
                    raise DomainError("only the full range 1..s may use the s bound")
                parsed = tuple(range(int(lo), int(hi) + 1))
            else:
                parsed = (int(spec),)
            if key == "s":
                if parsed is None:
                    raise DomainError("the s range must be explicit")
                s_values = parsed
            else:
                values[key] = parsed
        if s_values is None:
            raise DomainError("grid must specify s")
        return cls(s_values=s_values, psi_values=values["psi"], entry_values=values["entry"])


@dataclass(frozen=True)
class GridSearchResult:
    """Ranked lattice fits plus failures and an identification flag."""

    results: tuple[FitResult, ...]
    failures: tuple[tuple[tuple[int, int, int], str], ...]
    structurally_identified: bool
    loglik_spread: float

    @property
    def best(self):
        return self.results[0] if self.results else None


def _rank_key(result):
    st = result.structural
    return (-result.loglik, st["s"], st["psi"], st["entry"])


_WORKER_STATE = {}


def _grid_worker_init(dataset, family, options):
    _WORKER_STATE["design"] = _Design(dataset, options.lambda_bar)
    _WORKER_STATE["family"] = family
    _WORKER_STATE["options"] = options


def _grid_worker(point):
    s, psi, entry = point
    try:
        result = fit(
            None,
            _WORKER_STATE["family"],
            structural=(psi, s, entry),
            options=_WORKER_STATE["options"],
            _design=_WORKER_STATE["design"],
        )
        return point, result, None
    except Exception as exc:  # lattice-point failures are recorded, not fatal
        return point, None, f"{type(exc).__name__}: {exc}"


def grid_search(
    dataset,
    family,
    grid,
    options=None,
    workers=1,
    identification_threshold=2.0,
    precomputed=None,
):
    """Fit every structural lattice point and rank by log-likelihood.

    Ties break toward smaller s, then psi, then entry.  Standard errors
    are computed for the top-ranked point only (the structural triple
    itself carries none).  ``precomputed`` maps triples ``(s, psi, entry)``
    to finished :class:`FitResult` objects (used by the CLI's resumable
    cache); those points are not refitted.

    When the spread of log-likelihoods across the lattice is below
    ``identification_threshold``, the data carry no structural signal
    (e.g. the true relativity slope is zero) and the result is flagged as
    structurally unidentified.
    """
    options = options or FitOptions()
    if family not in _FAMILIES or not _FAMILIES[family].is_bms:
        raise DomainError(f"grid search requires a scale family, got {family!r}")
    fit_options = replace(options, compute_se=False)
    design = _Design(dataset, options.lambda_bar)
    if "beta_0" not in (fit_options.start_params or {}):
        # the regression start is the same at every lattice point; fit it once
        base = fit(
            None,
            "poisson",
            options=replace(fit_options, start_params=None),
            _design=design,
        )
        start = dict(fit_options.start_params or {})
        start.update({name: base.params[name] for name in base.params})
        fit_options = replace(fit_options, start_params=start)

    points = list(grid.points())
    precomputed = dict(precomputed or {})
    todo = [p for p in points if (p[0], p[1], p[2]) not in precomputed]

    results = [precomputed[p] for p in points if p in precomputed]
    failures = []
    if workers > 1 and len(todo) > 1:
        with ProcessPoolExecutor(
            max_workers=workers,
            initializer=_grid_worker_init,
            initargs=(dataset, family, fit_options),
        ) as pool:
            outcomes = list(pool.map(_grid_worker, todo))
    else:
        _WORKER_STATE.update(design=design, family=family, options=fit_options)
        outcomes = [_grid_worker(p) for p in todo]
        _WORKER_STATE.clear()

    for point, result, error in outcomes:
        if error is not None:
            failures.append(((point[0], point[1], point[2]), error))
        else:
            results.append(result)

    results.sort(key=_rank_key)
    if results and options.compute_se:
        best = results[0]
        st = best.structural
        std_errors, se_problem = _standard_errors(
            design, _FAMILIES[family], best.params, (st["psi"], st["s"], st["entry"])
        )
        diagnostics = dict(best.diagnostics)
        if se_problem:
            diagnostics["std_error_problem"] = se_problem
        results[0] = replace(best, std_errors=std_errors, diagnostics=diagnostics)

    logliks = [r.loglik for r in results]
    spread = (max(logliks) - min(logliks)) if logliks else 0.0
    return GridSearchResult(
        results=tuple(results),
        failures=tuple(failures),
        structurally_identified=spread > identification_threshold,
        loglik_spread=float(spread),
    )
