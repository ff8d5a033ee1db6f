"""Panel portfolio data: container, CSV ingestion, splitting, simulation.

A :class:`PanelDataset` stores one row per insurance contract (exposure,
eight binary covariates, claim count), sorted by policyholder and period,
plus per-policyholder pre-observation information: up to ten known years
of claim counts and the total driving experience in years.

The on-disk format is three UTF-8 comma-separated files:

* contracts: ``policy_id,period,exposure,x1,...,x8,claims``
* history (optional): ``policy_id,prior_year,prior_claims`` with
  ``prior_year = 1`` the year immediately before the first observed
  contract; years must be contiguous from 1
* experience (optional): ``policy_id,experience_years``

The simulator generates synthetic portfolios from any supported model
family with a mandatory seed; identical specs produce identical datasets.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np

from .distributions import DomainError

__all__ = [
    "ContractRecord",
    "PanelDataset",
    "SimulationSpec",
    "DatasetError",
    "CONTRACT_COLUMNS",
    "HISTORY_COLUMNS",
    "EXPERIENCE_COLUMNS",
    "CONTRACT_COUNT_DISTRIBUTION",
    "load_csv",
    "write_csv",
    "split",
    "simulate",
]

N_COVARIATES = 8
MAX_PRIOR_YEARS = 10

CONTRACT_COLUMNS = ["policy_id", "period", "exposure"] + [
    f"x{i}" for i in range(1, N_COVARIATES + 1)
] + ["claims"]
HISTORY_COLUMNS = ["policy_id", "prior_year", "prior_claims"]
EXPERIENCE_COLUMNS = ["policy_id", "experience_years"]

#: observed portfolio shares of 1..5 annual contracts per policyholder
CONTRACT_COUNT_DISTRIBUTION = {1: 0.2142, 2: 0.1773, 3: 0.1166, 4: 0.3257, 5: 0.1662}


class DatasetError(ValueError):
    """Raised on invalid portfolio data; ``errors`` lists row-level issues."""

    def __init__(self, errors):
        if isinstance(errors, str):
            errors = [errors]
        self.errors = list(errors)
        preview = "; ".join(self.errors[:5])
        more = f" (+{len(self.errors) - 5} more)" if len(self.errors) > 5 else ""
        super().__init__(f"{len(self.errors)} dataset error(s): {preview}{more}")


@dataclass(frozen=True)
class ContractRecord:
    """One annual contract of one policyholder."""

    policy_id: str
    period: int
    exposure: float
    covariates: tuple[int, ...]
    claims: int


@dataclass
class PanelDataset:
    """Contracts plus pre-observation history, sorted by (policyholder, period)."""

    policy_ids: np.ndarray        # (P,) str
    pid: np.ndarray               # (C,) ordinal policyholder index per contract
    period: np.ndarray            # (C,)
    exposure: np.ndarray          # (C,) in (0, 1]
    covariates: np.ndarray        # (C, 8) binary
    claims: np.ndarray            # (C,)
    prior_counts: np.ndarray      # (P, 10); column j-1 = count j years pre-entry
    prior_years: np.ndarray       # (P,) known window m_i in [0, 10]
    experience_years: np.ndarray  # (P,) total driving experience u_i
    group_starts: np.ndarray = field(init=False)
    group_sizes: np.ndarray = field(init=False)

    def __post_init__(self):
        self.policy_ids = np.asarray(self.policy_ids, dtype=object)
        self.pid = np.asarray(self.pid, dtype=np.int64)
        self.period = np.asarray(self.period, dtype=np.int64)
        self.exposure = np.asarray(self.exposure, dtype=float)
        self.covariates = np.asarray(self.covariates, dtype=np.int8).reshape(
            len(self.pid), N_COVARIATES
        )
        self.claims = np.asarray(self.claims, dtype=np.int64)
        self.prior_counts = np.asarray(self.prior_counts, dtype=np.int64).reshape(
            len(self.policy_ids), MAX_PRIOR_YEARS
        )
        self.prior_years = np.asarray(self.prior_years, dtype=np.int64)
        self.experience_years = np.asarray(self.experience_years, dtype=np.int64)
        self._index_groups()
        self._validate()

    def _index_groups(self):
        P = len(self.policy_ids)
        sizes = np.bincount(self.pid, minlength=P)
        starts = np.zeros(P, dtype=np.int64)
        np.cumsum(sizes[:-1], out=starts[1:])
        self.group_starts = starts
        self.group_sizes = sizes

    def _validate(self):
        errors = []
        C = len(self.pid)
        for name, arr, length in [
            ("period", self.period, C),
            ("exposure", self.exposure, C),
            ("claims", self.claims, C),
        ]:
            if len(arr) != length:
                errors.append(f"{name} has length {len(arr)}, expected {length}")
        if errors:
            raise DatasetError(errors)
        if C and (np.any(self.exposure <= 0) or np.any(self.exposure > 1)):
            errors.append("exposure must be in (0, 1]")
        if np.any(self.claims < 0):
            errors.append("claims must be non-negative")
        if not np.all(np.isin(self.covariates, (0, 1))):
            errors.append("covariates must be binary")
        if np.any(self.prior_years < 0) or np.any(self.prior_years > MAX_PRIOR_YEARS):
            errors.append(f"prior_years must be in [0, {MAX_PRIOR_YEARS}]")
        if np.any(self.prior_counts < 0):
            errors.append("prior counts must be non-negative")
        if np.any(self.experience_years < 0):
            errors.append("experience years must be non-negative")
        # counts outside the known window must be zero
        mask = np.arange(MAX_PRIOR_YEARS)[None, :] >= self.prior_years[:, None]
        if np.any(self.prior_counts[mask] != 0):
            errors.append("prior counts present beyond the known window")
        # contracts sorted by (pid, period) with consecutive periods
        if C:
            if np.any(np.diff(self.pid) < 0):
                errors.append("contracts must be sorted by policyholder")
            else:
                same = np.diff(self.pid) == 0
                if np.any(np.diff(self.period)[same] != 1):
                    errors.append("periods must be consecutive per policyholder")
        if errors:
            raise DatasetError(errors)

    @property
    def n_policyholders(self):
        return len(self.policy_ids)

    @property
    def n_contracts(self):
        return len(self.pid)

    def prior_claims_total(self):
        """Per-policyholder total of known pre-observation claims."""
        return self.prior_counts.sum(axis=1)

    def mean_frequency(self):
        """Average observed claim count per unit exposure."""
        if self.n_contracts == 0:
            return 0.0
        return float(self.claims.sum() / self.exposure.sum())

    def policy_slice(self, i):
        """Contract slice of policyholder ordinal ``i``."""
        start = self.group_starts[i]
        return slice(start, start + self.group_sizes[i])

    def subset(self, ordinals):
        """New dataset containing only the given policyholder ordinals."""
        ordinals = np.asarray(sorted(int(i) for i in ordinals), dtype=np.int64)
        keep = np.concatenate(
            [np.arange(self.group_starts[i], self.group_starts[i] + self.group_sizes[i])
             for i in ordinals]
        ) if len(ordinals) else np.empty(0, dtype=np.int64)
        remap = {old: new for new, old in enumerate(ordinals)}
        return PanelDataset(
            policy_ids=self.policy_ids[ordinals],
            pid=np.asarray([remap[p] for p in self.pid[keep]], dtype=np.int64),
            period=self.period[keep],
            exposure=self.exposure[keep],
            covariates=self.covariates[keep],
            claims=self.claims[keep],
            prior_counts=self.prior_counts[ordinals],
            prior_years=self.prior_years[ordinals],
            experience_years=self.experience_years[ordinals],
        )

    def equals(self, other):
        return (
            list(self.policy_ids) == list(other.policy_ids)
            and np.array_equal(self.pid, other.pid)
            and np.array_equal(self.period, other.period)
            and np.array_equal(self.exposure, other.exposure)
            and np.array_equal(self.covariates, other.covariates)
            and np.array_equal(self.claims, other.claims)
            and np.array_equal(self.prior_counts, other.prior_counts)
            and np.array_equal(self.prior_years, other.prior_years)
            and np.array_equal(self.experience_years, other.experience_years)
        )


def _parse_int(value, name, line, errors, minimum=None):
    try:
        out = int(value)
    except ValueError:
        errors.append(f"line {line}: {name} {value!r} is not an integer")
        return None
    if minimum is not None and out < minimum:
        errors.append(f"line {line}: {name} must be >= {minimum}, got {out}")
        return None
    return out


def _parse_float(value, name, line, errors):
    try:
        return float(value)
    except ValueError:
        errors.append(f"line {line}: {name} {value!r} is not a number")
        return None


def _read_rows(path, expected_header):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            return None, []
        if header != expected_header:
            raise DatasetError(
                f"{path}: header {header!r} does not match {expected_header!r}"
            )
        return header, [(idx, row) for idx, row in enumerate(reader, start=2)]


def load_csv(contracts_path, history_path=None, experience_path=None):
    """Load and validate a portfolio from CSV files.

    Raises :class:`DatasetError` listing every offending line when rows are
    malformed, duplicated, or inconsistent.  An empty contracts file yields
    an empty dataset with a warning.
    """
    header, rows = _read_rows(contracts_path, CONTRACT_COLUMNS)
    if header is None or not rows:
        warnings.warn(f"{contracts_path}: no contract rows", stacklevel=2)

    errors = []
    seen = {}
    records = []
    for line, row in rows:
        if len(row) != len(CONTRACT_COLUMNS):
            errors.append(f"line {line}: expected {len(CONTRACT_COLUMNS)} fields, got {len(row)}")
            continue
        policy = row[0]
        period = _parse_int(row[1], "period", line, errors)
        exposure = _parse_float(row[2], "exposure", line, errors)
        covs = [_parse_int(v, f"x{i + 1}", line, errors) for i, v in enumerate(row[3:11])]
        claims = _parse_int(row[11], "claims", line, errors, minimum=0)
        if period is None or exposure is None or claims is None or None in covs:
            continue
        if not 0.0 < exposure <= 1.0:
            errors.append(f"line {line}: exposure {exposure} outside (0, 1]")
            continue
        if any(c not in (0, 1) for c in covs):
            errors.append(f"line {line}: covariates must be 0/1")
            continue
        key = (policy, period)
        if key in seen:
            errors.append(
                f"line {line}: duplicate contract {key} (first seen at line {seen[key]})"
            )
            continue
        seen[key] = line
        records.append((policy, period, exposure, covs, claims))

    # policyholders ordered by first appearance
    order = {}
    for policy, *_ in records:
        order.setdefault(policy, len(order))
    records.sort(key=lambda rec: (order[rec[0]], rec[1]))

    pids = np.array([order[rec[0]] for rec in records], dtype=np.int64)
    periods = np.array([rec[1] for rec in records], dtype=np.int64)
    if len(records):
        boundaries = np.flatnonzero(np.diff(pids) == 0)
        bad = boundaries[np.diff(periods)[boundaries] != 1]
        for b in bad:
            errors.append(
                f"policyholder {records[b][0]!r}: periods {records[b][1]} -> "
                f"{records[b + 1][1]} are not consecutive"
            )

    policy_ids = list(order)
    P = len(policy_ids)
    prior_counts = np.zeros((P, MAX_PRIOR_YEARS), dtype=np.int64)
    prior_years = np.zeros(P, dtype=np.int64)
    if history_path is not None:
        _, hrows = _read_rows(history_path, HISTORY_COLUMNS)
        seen_years = {}
        for line, row in hrows:
            if len(row) != 3:
                errors.append(f"history line {line}: expected 3 fields")
                continue
            policy, year_s, count_s = row
            if policy not in order:
                errors.append(f"history line {line}: unknown policy_id {policy!r}")
                continue
            year = _parse_int(year_s, "prior_year", line, errors, minimum=1)
            count = _parse_int(count_s, "prior_claims", line, errors, minimum=0)
            if year is None or count is None:
                continue
            if year > MAX_PRIOR_YEARS:
                errors.append(f"history line {line}: prior_year {year} > {MAX_PRIOR_YEARS}")
                continue
            if (policy, year) in seen_years:
                errors.append(
                    f"history line {line}: duplicate year {year} for {policy!r} "
                    f"(first seen at line {seen_years[(policy, year)]})"
                )
                continue
            seen_years[(policy, year)] = line
            i = order[policy]
            prior_counts[i, year - 1] = count
            prior_years[i] = max(prior_years[i], year)
        # known windows must be contiguous from year 1
        for policy, i in order.items():
            m = prior_years[i]
            missing = [y for y in range(1, m + 1) if (policy, y) not in seen_years]
            if missing:
                errors.append(
                    f"policyholder {policy!r}: history years {missing} missing "
                    f"from window 1..{m}"
                )

    experience = prior_years.copy()
    if experience_path is not None:
        _, erows = _read_rows(experience_path, EXPERIENCE_COLUMNS)
        seen_exp = set()
        for line, row in erows:
            if len(row) != 2:
                errors.append(f"experience line {line}: expected 2 fields")
                continue
            policy, years_s = row
            if policy not in order:
                errors.append(f"experience line {line}: unknown policy_id {policy!r}")
                continue
            if policy in seen_exp:
                errors.append(f"experience line {line}: duplicate policy_id {policy!r}")
                continue
            seen_exp.add(policy)
            years = _parse_int(years_s, "experience_years", line, errors, minimum=0)
            if years is None:
                continue
            experience[order[policy]] = years
        experience = np.maximum(experience, prior_years)

    if errors:
        raise DatasetError(errors)

    return PanelDataset(
        policy_ids=np.array(policy_ids, dtype=object),
        pid=pids,
        period=periods,
        exposure=np.array([rec[2] for rec in records], dtype=float),
        covariates=np.array([rec[3] for rec in records], dtype=np.int8).reshape(
            len(records), N_COVARIATES
        ),
        claims=np.array([rec[4] for rec in records], dtype=np.int64),
        prior_counts=prior_counts,
        prior_years=prior_years,
        experience_years=experience,
    )


def _format_float(x):
    return repr(float(x))


def write_csv(dataset, contracts_path, history_path=None, experience_path=None):
    """Write a dataset in the loader's format (lossless round trip)."""
    with open(contracts_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CONTRACT_COLUMNS)
        for c in range(dataset.n_contracts):
            writer.writerow(
                [dataset.policy_ids[dataset.pid[c]], int(dataset.period[c]),
                 _format_float(dataset.exposure[c])]
                + [int(v) for v in dataset.covariates[c]]
                + [int(dataset.claims[c])]
            )
    if history_path is not None:
        with open(history_path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(HISTORY_COLUMNS)
            for i in range(dataset.n_policyholders):
                for year in range(1, int(dataset.prior_years[i]) + 1):
                    writer.writerow(
                        [dataset.policy_ids[i], year, int(dataset.prior_counts[i, year - 1])]
                    )
    if experience_path is not None:
        with open(experience_path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(EXPERIENCE_COLUMNS)
            for i in range(dataset.n_policyholders):
                writer.writerow([dataset.policy_ids[i], int(dataset.experience_years[i])])


def split(dataset, fraction, seed):
    """Partition policyholders into (fitting, validation) datasets.

    The split is by policyholder, never by contract, and is a
    deterministic function of ``seed``.
    """
    if not 0.0 <= fraction <= 1.0:
        raise DomainError("fraction must be in [0, 1]")
    P = dataset.n_policyholders
    rng = np.random.default_rng(seed)
    perm = rng.permutation(P)
    n_fit = int(round(fraction * P))
    return dataset.subset(perm[:n_fit]), dataset.subset(perm[n_fit:])


@dataclass(frozen=True)
class SimulationSpec:
    """Synthetic-portfolio recipe: generating model, cohort shape, seed.

    ``beta`` must have nine entries (intercept + eight covariates) so the
    simulated files match the CSV schema.  ``structural`` is the
    ``(psi, s, entry)`` triple for scale families.  The seed is mandatory;
    the same spec always yields the same dataset.
    """

    family: str
    beta: tuple[float, ...]
    n_policyholders: int
    seed: int
    tau: float | None = None
    kappa: float | None = None
    a: float | None = None
    b: float | None = None
    nu: float | None = None
    delta: float | None = None
    structural: tuple[int, int, int] | None = None
    contract_distribution: dict | None = None
    covariate_means: tuple[float, ...] = (0.5,) * N_COVARIATES
    exposure: float = 1.0

    def __post_init__(self):
        if len(self.beta) != N_COVARIATES + 1:
            raise DomainError(f"beta must have {N_COVARIATES + 1} entries")
        if len(self.covariate_means) != N_COVARIATES:
            raise DomainError(f"covariate_means must have {N_COVARIATES} entries")
        dist = self.contract_distribution or CONTRACT_COUNT_DISTRIBUTION
        total = sum(dist.values())
        if abs(total - 1.0) > 1e-9:
            raise DomainError(f"contract distribution sums to {total}, not 1")
        if any(k < 1 for k in dist):
            raise DomainError("contract counts must be >= 1")
        if self.seed is None:
            raise DomainError("seed is mandatory")

    @property
    def resolved_distribution(self):
        return dict(self.contract_distribution or CONTRACT_COUNT_DISTRIBUTION)


def _simulate_counts_cross(rng, lam, family, spec):
    if family == "poisson":
        return rng.poisson(lam)
    if family == "nb1":
        return rng.negative_binomial(lam / spec.tau, 1.0 / (1.0 + spec.tau))
    if family == "nb2":
        r = 1.0 / spec.tau
        return rng.negative_binomial(r, r / (r + lam))
    raise DomainError(f"unknown count family {family!r}")


def simulate(spec):
    """Draw a synthetic portfolio; returns ``(dataset, truth)``.

    ``truth`` records the generating parameters and the latent quantities
    (random effects, scale levels) so tests can check recovered values
    against the ground truth.  Simulated policyholders carry no
    pre-observation history.
    """
    rng = np.random.default_rng(spec.seed)
    P = spec.n_policyholders
    dist = spec.resolved_distribution
    lengths = np.array(sorted(dist), dtype=np.int64)
    probs = np.array([dist[int(k)] for k in lengths])
    T = rng.choice(lengths, size=P, p=probs) if P else np.empty(0, dtype=np.int64)

    pid = np.repeat(np.arange(P, dtype=np.int64), T)
    C = int(T.sum())
    # periods 1..T_i per policyholder
    starts = np.zeros(P, dtype=np.int64)
    np.cumsum(T[:-1], out=starts[1:])
    period = np.arange(C, dtype=np.int64) - np.repeat(starts, T) + 1

    means = np.asarray(spec.covariate_means)
    covariates = (rng.random((C, N_COVARIATES)) < means).astype(np.int8)
    beta = np.asarray(spec.beta, dtype=float)
    lam = spec.exposure * np.exp(beta[0] + covariates @ beta[1:])

    truth = {
        "family": spec.family,
        "seed": spec.seed,
        "beta": list(map(float, beta)),
        "n_policyholders": P,
        "n_contracts": C,
    }
    for name in ("tau", "kappa", "a", "b", "nu", "delta"):
        value = getattr(spec, name)
        if value is not None:
            truth[name] = float(value)

    family = spec.family
    if family in ("poisson", "nb1", "nb2"):
        claims = _simulate_counts_cross(rng, lam, family, spec)
    elif family == "mvnb":
        theta = rng.gamma(shape=spec.kappa, scale=1.0 / spec.kappa, size=P)
        claims = rng.poisson(lam * theta[pid])
        truth["theta"] = theta.tolist()
    elif family == "nbbeta":
        p = rng.beta(spec.a, spec.b, size=P)
        claims = rng.negative_binomial(lam, p[pid])
        truth["p"] = p.tolist()
    elif family in ("hf-mvnb", "hf-nbb"):
        claims = np.zeros(C, dtype=np.int64)
        if family == "hf-mvnb":
            alpha = np.full(P, spec.kappa)
            gamma = np.full(P, spec.kappa)
        else:
            alpha = np.full(P, spec.b)  # count accumulator
            gamma = np.full(P, spec.a)  # mean accumulator
        for t in range(1, int(T.max(initial=0)) + 1):
            active = np.flatnonzero(T >= t)
            idx = starts[active] + t - 1
            lam_t = lam[idx]
            if family == "hf-mvnb":
                theta = rng.gamma(shape=alpha[active], scale=1.0 / gamma[active])
                counts = rng.poisson(lam_t * theta)
            else:
                p = rng.beta(gamma[active], alpha[active])
                counts = rng.negative_binomial(lam_t, p)
            claims[idx] = counts
            alpha[active] = spec.nu * (alpha[active] + counts)
            gamma[active] = spec.nu * (gamma[active] + lam_t)
    elif family in ("bms-poisson", "bms-nb1", "bms-nb2"):
        from .bms import BmsConfig  # deferred to avoid cycles

        psi, s, entry = spec.structural
        config = BmsConfig(psi=psi, s=s, entry=entry, delta=spec.delta)
        base = family.split("-", 1)[1]
        claims = np.zeros(C, dtype=np.int64)
        levels = np.zeros(C, dtype=np.int64)
        current = np.full(P, config.entry, dtype=np.int64)
        for t in range(1, int(T.max(initial=0)) + 1):
            active = np.flatnonzero(T >= t)
            idx = starts[active] + t - 1
            rel = 1.0 + config.delta * (current[active] - 1)
            mean = lam[idx] * rel
            counts = _simulate_counts_cross(rng, mean, base, spec)
            claims[idx] = counts
            levels[idx] = current[active]
            raw = current[active] - (counts == 0) + config.psi * counts
            current[active] = np.clip(raw, 1, config.s)
        truth["levels"] = levels.tolist()
        truth["structural"] = {"psi": psi, "s": s, "entry": entry}
    else:
        raise DomainError(f"unknown simulation family {family!r}")

    dataset = PanelDataset(
        policy_ids=np.array([f"P{i:06d}" for i in range(P)], dtype=object),
        pid=pid,
        period=period,
        exposure=np.full(C, spec.exposure),
        covariates=covariates,
        claims=claims,
        prior_counts=np.zeros((P, MAX_PRIOR_YEARS), dtype=np.int64),
        prior_years=np.zeros(P, dtype=np.int64),
        experience_years=np.zeros(P, dtype=np.int64),
    )
    return dataset, truth
