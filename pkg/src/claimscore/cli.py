"""Command-line front end: simulate, fit, grid, evaluate.

Each command reads one declarative JSON config, writes its outputs under
an output directory, and records a manifest (resolved config, config
hash, package version) from which the run can be reproduced exactly:
rerunning any command from its manifest yields byte-identical numeric
outputs.  ``--seed`` and ``--out`` flags, or the ``CLAIMSCORE_SEED`` and
``CLAIMSCORE_OUT`` environment variables, override the config.

Exit codes: 0 success (possibly with warnings), 1 configuration error,
2 I/O error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bms import BmsConfig
from .distributions import DomainError
from .estimate import (
    FAMILY_TAGS,
    FitOptions,
    FitResult,
    GridSpec,
    fit,
    grid_search,
)
from .evaluate import compare, covariance_curve, predict_premiums, score
from .portfolio import (
    DatasetError,
    SimulationSpec,
    load_csv,
    simulate,
    write_csv,
)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_IO = 2
EXIT_NUMERIC = 3


class ConfigError(ValueError):
    pass


def _canonical_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _config_hash(config):
    return hashlib.sha256(_canonical_json(config).encode("utf-8")).hexdigest()


def load_config(path):
    """Read a config file; a manifest is unwrapped to its embedded config."""
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if isinstance(data, dict) and "config" in data and "config_sha256" in data:
        return data["config"]
    return data


def _resolve(config, args):
    config = dict(config)
    env_seed = os.environ.get("CLAIMSCORE_SEED")
    env_out = os.environ.get("CLAIMSCORE_OUT")
    if env_seed is not None:
        config["seed"] = int(env_seed)
    if env_out is not None:
        config["out"] = env_out
    if getattr(args, "seed", None) is not None:
        config["seed"] = args.seed
    if getattr(args, "out", None) is not None:
        config["out"] = args.out
    if getattr(args, "families", None):
        config["families"] = [f.strip() for f in args.families.split(",") if f.strip()]
    if getattr(args, "grid", None):
        config["grid"] = args.grid
    if getattr(args, "workers", None) is not None:
        config["workers"] = args.workers
    if getattr(args, "resume", False):
        config["resume"] = True
    return config


def _out_dir(config):
    out = config.get("out")
    if not out:
        raise ConfigError("config must set an output directory ('out')")
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_text(path, text):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def _write_json(path, obj):
    _write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _write_manifest(out, command, config):
    _write_json(
        out / "manifest.json",
        {
            "schema_version": 1,
            "command": command,
            "config": config,
            "config_sha256": _config_hash(config),
            "package_version": __version__,
        },
    )


def _load_dataset(section):
    if not isinstance(section, dict) or "contracts" not in section:
        raise ConfigError("dataset section must map 'contracts' to a CSV path")
    return load_csv(
        section["contracts"],
        history_path=section.get("history"),
        experience_path=section.get("experience"),
    )


def _simulation_spec(config):
    model = config.get("model")
    portfolio = config.get("portfolio")
    if not isinstance(model, dict) or not isinstance(portfolio, dict):
        raise ConfigError("simulate config needs 'model' and 'portfolio' sections")
    if "seed" not in config:
        raise ConfigError("simulate config needs a seed")
    structural = model.get("structural")
    if structural is not None:
        structural = (structural["psi"], structural["s"], structural["entry"])
    contract_dist = portfolio.get("contract_distribution")
    if contract_dist is not None:
        contract_dist = {int(k): float(v) for k, v in contract_dist.items()}
    kwargs = {}
    if portfolio.get("covariate_means") is not None:
        kwargs["covariate_means"] = tuple(portfolio["covariate_means"])
    try:
        return SimulationSpec(
            family=model.get("family", ""),
            beta=tuple(model["beta"]),
            n_policyholders=int(portfolio["n_policyholders"]),
            seed=int(config["seed"]),
            tau=model.get("tau"),
            kappa=model.get("kappa"),
            a=model.get("a"),
            b=model.get("b"),
            nu=model.get("nu"),
            delta=model.get("delta"),
            structural=structural,
            contract_distribution=contract_dist,
            exposure=float(portfolio.get("exposure", 1.0)),
            **kwargs,
        )
    except (KeyError, DomainError) as exc:
        raise ConfigError(f"invalid simulation config: {exc}") from exc


def cmd_simulate(config):
    out = _out_dir(config)
    spec = _simulation_spec(config)
    dataset, truth = simulate(spec)
    write_csv(
        dataset,
        out / "contracts.csv",
        history_path=out / "history.csv",
        experience_path=out / "experience.csv",
    )
    _write_json(out / "truth.json", truth)
    _write_manifest(out, "simulate", config)
    print(
        f"simulated policyholders={dataset.n_policyholders} "
        f"contracts={dataset.n_contracts} "
        f"mean_frequency={dataset.mean_frequency():.6f}"
    )
    return EXIT_OK


def _fit_options(config):
    optimizer = config.get("optimizer", {})
    kwargs = {}
    for key in ("gtol", "max_iter", "compute_se", "bic_obs"):
        if key in optimizer:
            kwargs[key] = optimizer[key]
    if "lambda_bar" in config:
        kwargs["lambda_bar"] = float(config["lambda_bar"])
    return FitOptions(**kwargs)


def _structural_triple(config):
    st = config.get("structural")
    if st is None:
        return None
    return (int(st["psi"]), int(st["s"]), int(st["entry"]))


def cmd_fit(config):
    families = config.get("families")
    if not families:
        raise ConfigError("fit config needs a non-empty 'families' list")
    unknown = [f for f in families if f not in FAMILY_TAGS]
    if unknown:
        raise ConfigError(f"unknown families: {', '.join(unknown)}")
    out = _out_dir(config)
    dataset = _load_dataset(config.get("dataset"))
    options = _fit_options(config)
    structural = _structural_triple(config)

    results = []
    for family in families:
        st = structural if family.startswith("bms-") else None
        result = fit(dataset, family, structural=st, options=options)
        results.append(result)
        _write_json(out / f"fit_{family}.json", result.to_dict())
        if not result.converged:
            print(f"warning: {family} did not converge "
                  f"(grad_norm={result.diagnostics['grad_norm']:.3e})")
    table = compare(results)
    _write_json(out / "comparison.json", table.to_dict())
    _write_text(out / "comparison.txt", table.to_text())
    _write_manifest(out, "fit", config)
    print(table.to_text(), end="")
    return EXIT_OK


def _dataset_fingerprint(section):
    digest = hashlib.sha256()
    for key in ("contracts", "history", "experience"):
        path = section.get(key)
        if path:
            with open(path, "rb") as fh:
                digest.update(fh.read())
        digest.update(b"|")
    return digest.hexdigest()[:16]


def cmd_grid(config):
    family = config.get("family")
    if family not in FAMILY_TAGS or not family.startswith("bms-"):
        raise ConfigError(f"grid config needs a scale family, got {family!r}")
    if "grid" not in config:
        raise ConfigError("grid config needs a 'grid' specification")
    grid = GridSpec.parse(config["grid"])
    out = _out_dir(config)
    dataset = _load_dataset(config.get("dataset"))
    options = _fit_options(config)
    workers = int(config.get("workers", 1))

    cache_dir = out / "cache" / _dataset_fingerprint(config.get("dataset")) / family
    precomputed = {}
    if config.get("resume"):
        for point in grid.points():
            s, psi, entry = point
            path = cache_dir / f"s{s}_p{psi}_e{entry}.json"
            if path.exists():
                with open(path, encoding="utf-8") as fh:
                    precomputed[point] = FitResult.from_dict(json.load(fh))

    outcome = grid_search(
        dataset,
        family,
        grid,
        options=options,
        workers=workers,
        precomputed=precomputed,
    )
    cache_dir.mkdir(parents=True, exist_ok=True)
    for result in outcome.results:
        st = result.structural
        path = cache_dir / f"s{st['s']}_p{st['psi']}_e{st['entry']}.json"
        if not path.exists():
            _write_json(path, result.to_dict())

    ranked = {
        "schema_version": 1,
        "family": family,
        "results": [r.to_dict() for r in outcome.results],
        "failures": [
            {"point": {"s": p[0], "psi": p[1], "entry": p[2]}, "error": msg}
            for p, msg in outcome.failures
        ],
        "structurally_identified": outcome.structurally_identified,
        "loglik_spread": outcome.loglik_spread,
    }
    _write_json(out / "grid.json", ranked)

    lines = ["family      #par  psi  s    entry  loglik         aic            bic"]
    for r in outcome.results:
        st = r.structural
        lines.append(
            f"{r.family:<11} {r.n_params:<5} {st['psi']:<4} {st['s']:<4} "
            f"{st['entry']:<6} {r.loglik:<14.2f} {r.aic:<14.2f} {r.bic:.2f}"
        )
    _write_text(out / "grid.txt", "\n".join(lines) + "\n")
    _write_manifest(out, "grid", config)
    for line in lines[: min(len(lines), 6)]:
        print(line)
    if outcome.failures:
        print(f"warning: {len(outcome.failures)} lattice point(s) failed")
    if not outcome.structurally_identified:
        print(
            "warning: lattice log-likelihoods are within noise of each other; "
            "the structural triple is not identified"
        )
    return EXIT_OK


def cmd_evaluate(config):
    out = _out_dir(config)
    model_paths = config.get("models")
    if not model_paths:
        raise ConfigError("evaluate config needs a non-empty 'models' list")
    dataset = _load_dataset(config.get("dataset"))
    if dataset.n_contracts == 0:
        raise ConfigError("validation dataset is empty")
    lambda_bar = float(config.get("lambda_bar", 0.065))

    fits = []
    for path in model_paths:
        with open(path, encoding="utf-8") as fh:
            fits.append(FitResult.from_dict(json.load(fh)))

    reports = {}
    for result in fits:
        schedule = predict_premiums(result, dataset, lambda_bar=lambda_bar)
        reports[result.family] = score(schedule)

    table = compare(fits, reports)
    _write_json(
        out / "scores.json",
        {
            "schema_version": 1,
            "reports": {family: rep.to_dict() for family, rep in reports.items()},
            "comparison": table.to_dict(),
        },
    )
    _write_text(out / "scores.txt", table.to_text())

    cov_cfg = config.get("covariance")
    if cov_cfg is not None:
        bms_fits = [f for f in fits if f.family.startswith("bms-")]
        if not bms_fits:
            raise ConfigError("covariance output requires a fitted scale model")
        model = bms_fits[0]
        st = model.structural
        cfg = BmsConfig(
            psi=st["psi"], s=st["s"], entry=st["entry"], delta=model.params["delta"]
        )
        lam = cov_cfg.get("lambda")
        lam = float(lam) if lam is not None else dataset.mean_frequency()
        rows = covariance_curve(
            cfg,
            lam,
            family=model.family.split("-", 1)[1],
            dispersion=model.params.get("tau"),
            max_lag=int(cov_cfg.get("max_lag", 15)),
        )
        with open(out / "covariance.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["level", "lag", "covariance"])
            for level, lag, cov in rows:
                writer.writerow([level, lag, repr(cov)])

    _write_manifest(out, "evaluate", config)
    print(table.to_text(), end="")
    return EXIT_OK


_COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "grid": cmd_grid,
    "evaluate": cmd_evaluate,
}


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="claimscore",
        description="Claim-count modeling on panel insurance data",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON config (or manifest) path")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None)
        p.add_argument("--workers", type=int, default=None)
        if name == "fit":
            p.add_argument("--families", default=None, help="comma-separated family tags")
        if name == "grid":
            p.add_argument("--grid", default=None, help="e.g. s=2..11,psi=1..s,entry=1..s")
            p.add_argument("--resume", action="store_true")
    return parser


def main(argv=None):
    args = _build_parser().parse_args(argv)
    try:
        config = load_config(args.config)
        config = _resolve(config, args)
        return _COMMANDS[args.command](config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DatasetError as exc:
        print(f"dataset error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (DomainError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
