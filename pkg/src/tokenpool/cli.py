"""Command-line front end: config files, load sweeps, CSV output.

A config file describes one server pool plus an experiment protocol.  The
``sweep`` verb evaluates every requested policy on every load point and
writes one CSV row per (policy, load) pair; ``exact``, ``simulate`` and
``verify`` are narrower single-purpose verbs.  Loads are swept by scaling
every type's arrival rate by a common factor relative to the rates in the
file, so the nominal config corresponds to rho = sum(nu) / sum(mu).
"""
from __future__ import annotations

import argparse
import math
import sys
from dataclasses import dataclass, replace

import numpy as np
import yaml

from . import exact, model as model_mod, simulate, verify
from .exact import BalanceTables, StateSpaceTooLarge
from .model import CompatModel, JobClass, JobType, SizeDistribution

EXACT_POLICIES = ("exact-dynamic", "static-best", "static-uniform", "static-custom")
SIM_POLICIES = ("dynamic-fcfs", "dynamic-bf", "randomized")
ALL_POLICIES = EXACT_POLICIES + SIM_POLICIES + ("ideal",)


@dataclass
class ExperimentConfig:
    model: CompatModel
    policies: list[str]
    rho_grid: list[float]
    runs: int = 20
    warmup: int = 100_000
    events: int = 200_000
    seed: int = 0
    out: str | None = None
    assignment: np.ndarray | None = None  # for static-custom, types x classes

    def __post_init__(self):
        for r in self.rho_grid:
            if r <= 0:
                raise ValueError(f"load grid values must be positive, got {r}")
        if self.runs <= 0 or self.warmup < 0 or self.events <= 0:
            raise ValueError("protocol fields must be positive")
        for p in self.policies:
            if p not in ALL_POLICIES:
                raise ValueError(
                    f"unknown policy {p!r}; known: {', '.join(ALL_POLICIES)}"
                )
        if "static-custom" in self.policies and self.assignment is None:
            raise ValueError("policy static-custom needs an assignment matrix")


def _size_from_dict(d) -> SizeDistribution:
    if d is None:
        return SizeDistribution.exponential()
    kind = d.get("kind", "exponential")
    if kind == "exponential":
        return SizeDistribution.exponential(d.get("mean", 1.0))
    if kind == "hyperexponential":
        return SizeDistribution.hyperexponential(
            (b["prob"], b["mean"]) for b in d["branches"]
        )
    raise ValueError(f"unknown size distribution kind {kind!r}")


def _size_to_dict(s: SizeDistribution):
    if s.kind == "exponential":
        return {"kind": "exponential", "mean": s.mean}
    return {
        "kind": "hyperexponential",
        "branches": [{"prob": p, "mean": m} for p, m in s.branches],
    }


def parse_config(doc: dict) -> ExperimentConfig:
    """Build a validated config from a parsed document (0-based indices)."""
    m = CompatModel(
        servers=doc["servers"],
        types=[
            JobType(rate=t["rate"], size=_size_from_dict(t.get("size")))
            for t in doc["types"]
        ],
        classes=[
            JobClass(
                servers=frozenset(c["servers"]),
                types=frozenset(c["types"]),
                tokens=int(c["tokens"]),
            )
            for c in doc["classes"]
        ],
    )
    rep = model_mod.validate(m)
    for w in rep.warnings:
        print(f"warning: {w}", file=sys.stderr)
    if not rep.ok:
        raise ValueError("invalid model: " + "; ".join(rep.errors))
    assignment = doc.get("assignment")
    if assignment is not None:
        assignment = np.asarray(assignment, dtype=float)
    return ExperimentConfig(
        model=m,
        policies=list(doc.get("policies", ["exact-dynamic"])),
        rho_grid=[float(r) for r in doc.get("rho_grid", [m.load])],
        runs=int(doc.get("runs", 20)),
        warmup=int(doc.get("warmup", 100_000)),
        events=int(doc.get("events", 200_000)),
        seed=int(doc.get("seed", 0)),
        out=doc.get("out"),
        assignment=assignment,
    )


def load_config(path: str) -> ExperimentConfig:
    with open(path) as fh:
        try:
            doc = yaml.safe_load(fh)
        except yaml.YAMLError as e:
            mark = getattr(e, "problem_mark", None)
            where = f" at line {mark.line + 1}, column {mark.column + 1}" if mark else ""
            raise ValueError(f"cannot parse {path}{where}: {e}") from e
    if not isinstance(doc, dict):
        raise ValueError(f"cannot parse {path}: expected a mapping at top level")
    return parse_config(doc)


def dump_config(config: ExperimentConfig) -> dict:
    """Document form of a config; load of the dump round-trips."""
    m = config.model
    doc = {
        "servers": list(m.servers),
        "types": [
            {"rate": t.rate, "size": _size_to_dict(t.size)} for t in m.types
        ],
        "classes": [
            {
                "servers": sorted(c.servers),
                "types": sorted(c.types),
                "tokens": c.tokens,
            }
            for c in m.classes
        ],
        "policies": list(config.policies),
        "rho_grid": list(config.rho_grid),
        "runs": config.runs,
        "warmup": config.warmup,
        "events": config.events,
        "seed": config.seed,
    }
    if config.out is not None:
        doc["out"] = config.out
    if config.assignment is not None:
        doc["assignment"] = config.assignment.tolist()
    return doc


@dataclass
class SweepRow:
    policy: str
    rho: float
    beta: float = math.nan
    eta: float = math.nan
    beta_k: np.ndarray | None = None
    psi_s: np.ndarray | None = None
    ci_halfwidth: float | None = None
    runs: int | None = None
    seed: int | None = None
    error: str | None = None


def _scale_for(model: CompatModel, rho: float) -> float:
    return rho / model.load


def _static_matrix(config: ExperimentConfig, policy: str) -> np.ndarray:
    if policy == "static-best":
        return exact.best_static_assignment(config.model)
    if policy == "static-uniform":
        return exact.uniform_static_assignment(config.model)
    return config.assignment


def sweep(config: ExperimentConfig) -> list[SweepRow]:
    """Evaluate every (policy, load) pair; errors become rows, not aborts."""
    rows: list[SweepRow] = []
    m = config.model
    tables: BalanceTables | None = None
    tables_err: str | None = None

    def get_tables():
        nonlocal tables, tables_err
        if tables is None and tables_err is None:
            try:
                tables = exact.build_tables(m)
            except StateSpaceTooLarge as e:
                tables_err = str(e)
        return tables

    for policy in sorted(set(config.policies)):
        if policy in ("static-best", "static-uniform", "static-custom"):
            assignment = _static_matrix(config, policy)
        for j, rho in enumerate(sorted(config.rho_grid)):
            scale = _scale_for(m, rho)
            row = SweepRow(policy=policy, rho=rho)
            try:
                if policy == "ideal":
                    # stability bound on total load, tightened by the
                    # per-type reachable-capacity bounds
                    bounds = exact.per_type_blocking_bounds(m, scale)
                    nu_k = np.array([t.rate for t in m.types])
                    row.beta = max(
                        exact.ideal_blocking(rho),
                        float(nu_k @ bounds / nu_k.sum()),
                    )
                    row.eta = rho * (1.0 - row.beta)
                    row.beta_k = bounds
                elif policy == "exact-dynamic":
                    if get_tables() is None:
                        raise StateSpaceTooLarge(tables_err)
                    rep = exact.performance_report(tables, scale)
                    row.beta, row.eta = rep.beta, rep.eta
                    row.beta_k, row.psi_s = rep.beta_k, rep.psi_s
                elif policy in ("static-best", "static-uniform", "static-custom"):
                    rep = exact.static_report(m, assignment, scale)
                    row.beta, row.eta = rep.beta, rep.eta
                    row.beta_k, row.psi_s = rep.beta_k, rep.psi_s
                else:
                    est = _simulate_policy(config, policy, scale, j)
                    row.beta, row.eta = est.beta, est.eta
                    row.beta_k, row.psi_s = est.beta_k, est.psi_s
                    row.ci_halfwidth = est.beta_halfwidth
                    row.runs, row.seed = est.runs, est.seed
            except (StateSpaceTooLarge, ValueError) as e:
                row.error = str(e)
            rows.append(row)
    return rows


def _simulate_policy(config: ExperimentConfig, policy: str, scale: float, j: int):
    m = config.model
    seed = config.seed + 1000 * SIM_POLICIES.index(policy) + j
    tables = None
    if policy in ("dynamic-bf", "randomized"):
        tables = exact.build_tables(m)

    def one(s):
        if policy == "dynamic-fcfs":
            return simulate.run_dynamic(
                m, config.events, config.warmup, s, alloc="fcfs", nu_scale=scale
            )
        if policy == "dynamic-bf":
            return simulate.run_dynamic(
                m, config.events, config.warmup, s,
                alloc="balanced_fairness", tables=tables, nu_scale=scale,
            )
        return simulate.run_randomized(
            m, tables, config.events, config.warmup, s, nu_scale=scale
        )

    return simulate.replicate(one, config.runs, seed, capacities=m.servers)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float) and math.isnan(v):
        return ""
    return f"{v:.12g}" if isinstance(v, float) else str(v)


def emit_csv(rows: list[SweepRow], fh, n_types: int, n_servers: int) -> None:
    """Write the result table; rows carrying errors go to stderr instead."""
    header = (
        ["policy", "rho", "beta", "eta"]
        + [f"beta_k_{k + 1}" for k in range(n_types)]
        + [f"psi_s_{s + 1}" for s in range(n_servers)]
        + ["ci_halfwidth", "runs", "seed"]
    )
    fh.write(",".join(header) + "\n")
    for row in sorted(rows, key=lambda r: (r.policy, r.rho)):
        if row.error is not None:
            print(f"error: {row.policy} rho={row.rho:g}: {row.error}", file=sys.stderr)
            continue
        beta_k = list(row.beta_k) if row.beta_k is not None else [None] * n_types
        psi_s = list(row.psi_s) if row.psi_s is not None else [None] * n_servers
        cells = (
            [row.policy, _fmt(row.rho), _fmt(row.beta), _fmt(row.eta)]
            + [_fmt(float(v)) if v is not None else "" for v in beta_k]
            + [_fmt(float(v)) if v is not None else "" for v in psi_s]
            + [_fmt(row.ci_halfwidth), _fmt(row.runs), _fmt(row.seed)]
        )
        fh.write(",".join(cells) + "\n")


def _write_rows(rows, config: ExperimentConfig, out: str | None) -> None:
    m = config.model
    if out and out != "-":
        with open(out, "w") as fh:
            emit_csv(rows, fh, m.n_types, m.n_servers)
    else:
        emit_csv(rows, sys.stdout, m.n_types, m.n_servers)


def _apply_overrides(config: ExperimentConfig, args) -> ExperimentConfig:
    updates = {}
    if getattr(args, "rho_grid", None):
        updates["rho_grid"] = [float(v) for v in args.rho_grid.split(",")]
    if getattr(args, "policies", None):
        updates["policies"] = args.policies.split(",")
    for name in ("runs", "warmup", "events", "seed", "out"):
        v = getattr(args, name, None)
        if v is not None:
            updates[name] = v
    return replace(config, **updates) if updates else config


def _cmd_validate(args) -> int:
    try:
        config = load_config(args.config)
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    m = config.model
    rep = model_mod.validate(m)
    sep = "separable" if rep.separable else "not separable"
    print(
        f"ok: {m.n_servers} servers, {m.n_types} types, {m.n_classes} classes, "
        f"{sep}, nominal load {m.load:.6g}"
    )
    return 0


def _cmd_exact(args) -> int:
    config = _apply_overrides(load_config(args.config), args)
    config = replace(config, policies=["exact-dynamic"])
    rows = sweep(config)
    _write_rows(rows, config, config.out)
    return 0 if all(r.error is None for r in rows) else 1


def _cmd_simulate(args) -> int:
    config = _apply_overrides(load_config(args.config), args)
    policies = [p for p in config.policies if p in SIM_POLICIES] or ["dynamic-fcfs"]
    config = replace(config, policies=policies)
    rows = sweep(config)
    _write_rows(rows, config, config.out)
    return 0 if all(r.error is None for r in rows) else 1


def _cmd_verify(args) -> int:
    config = load_config(args.config)
    m = config.model
    try:
        tables = exact.build_tables(m)
    except StateSpaceTooLarge:
        tables = None
    try:
        cert = verify.certify(m, tables)
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    print(f"detailed states: {cert.n_states}")
    print(f"irreducible: {cert.irreducible}")
    if cert.witness is not None:
        print(f"witness (mutually unreachable): {cert.witness[0]} / {cert.witness[1]}")
    else:
        print(f"product-form TV distance: {cert.tv_distance:.3e}")
        if not math.isnan(cert.aggregate_tv):
            print(f"aggregate TV vs recursive tables: {cert.aggregate_tv:.3e}")
        if not math.isnan(cert.rate_identity_error):
            print(f"max rate identity error: {cert.rate_identity_error:.3e}")
    return 0 if cert.ok else 1


def _cmd_sweep(args) -> int:
    config = _apply_overrides(load_config(args.config), args)
    rows = sweep(config)
    _write_rows(rows, config, config.out)
    return 0 if all(r.error is None for r in rows) else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="tokenpool",
        description="Exact analysis and simulation of token-based load balancing",
    )
    sub = parser.add_subparsers(dest="verb", required=True)

    def add(name, fn, doc):
        p = sub.add_parser(name, help=doc)
        p.add_argument("--config", required=True, help="experiment config file (YAML)")
        p.set_defaults(fn=fn)
        return p

    add("validate", _cmd_validate, "check a config file and report model facts")
    for name, fn, doc in (
        ("exact", _cmd_exact, "exact dynamic-policy evaluation over the load grid"),
        ("simulate", _cmd_simulate, "simulated policies over the load grid"),
        ("sweep", _cmd_sweep, "every configured policy over the load grid"),
    ):
        p = add(name, fn, doc)
        p.add_argument("--rho-grid", help="comma-separated loads, overrides config")
        p.add_argument("--policies", help="comma-separated policies, overrides config")
        p.add_argument("--runs", type=int)
        p.add_argument("--warmup", type=int)
        p.add_argument("--events", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output CSV path, '-' for stdout")
    add("verify", _cmd_verify, "brute-force Markov chain certificate")

    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ValueError, OSError, StateSpaceTooLarge) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
