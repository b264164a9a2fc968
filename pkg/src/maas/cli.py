"""Command line entry point: ``maas <command> --config FILE --seed N --out DIR``.

Exit codes: 0 success, 2 configuration error, 3 budget or solver error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from collections.abc import Mapping, Sequence
from dataclasses import asdict, fields
from pathlib import Path
from typing import Any

import numpy as np

from .core import Matching, order_from_dict, supplier_from_dict
from .dqn import (
    BASELINES,
    DqnHyperparams,
    DqnScenario,
    baseline,
    dqn_policy,
    evaluate_policy,
    mean_rejected_rate,
    mean_unaccepted_rate,
    normalized_revenue,
    train_dqn,
)
from .errors import ConfigError, MaasError
from .matching import ProfileQuantifier, build_graph, enumerate_combined, solve_mw
from .neural import load_checkpoint, save_checkpoint
from .sim import (
    SOLVERS,
    CampaignScenario,
    MarketScenario,
    MatchingOptions,
    PeriodRecord,
    RunReport,
    instance_impact,
    provenance,
    realized_ratio,
    run_auction_campaign,
    run_defection_experiment,
    run_matching_instances,
    run_periodic_matching,
    solve_period,
    sweep_knee,
    switching_cost_sweep,
    write_csv,
)
from .stability import audit, compute_metrics, impact_of_stability

log = logging.getLogger("maas")

EXIT_OK, EXIT_CONFIG, EXIT_BUDGET = 0, 2, 3


def load_config(path: str | None) -> dict[str, Any]:
    if path is None:
        return {}
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file {path} not found") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    return doc


def _dump(path: Path, doc: Any) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _seeds(cfg: Mapping[str, Any], seed: int) -> list[int]:
    seeds = cfg.get("seeds")
    if seeds is None:
        return [seed + k for k in range(int(cfg.get("instances", 1)))]
    if not isinstance(seeds, list) or not seeds:
        raise ConfigError("seeds must be a non-empty list")
    return [int(s) for s in seeds]


def _options(cfg: Mapping[str, Any]) -> MatchingOptions:
    doc = dict(cfg.get("options", {}))
    if "switching_costs" in doc:
        doc["switching_costs"] = tuple(float(s) for s in doc["switching_costs"])
    try:
        return MatchingOptions(**doc)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def _solvers(cfg: Mapping[str, Any], default: Sequence[str]) -> list[str]:
    solvers = list(cfg.get("solvers", default))
    bad = [s for s in solvers if s not in SOLVERS]
    if bad:
        raise ConfigError(f"unknown solvers {bad}; choose from {list(SOLVERS)}")
    return solvers


def _matching_doc(m: Matching) -> list[dict[str, Any]]:
    return [{"order": c.order_id, "supplier": c.supplier_id, "price": c.price, "due_period": c.due_period,
             "order_utility": round(c.order_utility, 12), "supplier_utility": round(c.supplier_utility, 12)}
            for c in m.contracts()]


# -- commands -----------------------------------------------------------------------

def cmd_auction(cfg: dict[str, Any], seed: int, out: Path) -> None:
    cs = CampaignScenario.from_dict({"seed": seed, **cfg.get("campaign", {})})
    report = run_auction_campaign(cs, _seeds(cfg, seed))
    report.write(out, "auction", by=("experiment", "value"))


def cmd_match(cfg: dict[str, Any], seed: int, out: Path) -> None:
    """One instance: per-period metrics plus every period's matching."""
    scenario = MarketScenario.from_dict({"seed": seed, **cfg.get("scenario", {})})
    options = _options(cfg)
    report = RunReport("match", provenance=provenance(seed, cfg))
    matchings: dict[str, list[dict[str, Any]]] = {}
    for solver in _solvers(cfg, ["mw", "as", "mwas"]):
        records: list[PeriodRecord] = []
        report.extend(run_periodic_matching(scenario, solver, cfg.get("periods"), seed, options, records=records))
        matchings[solver] = [{"period": r.period, "contracts": _matching_doc(r.matching)} for r in records]
    report.write(out, "match", by=("solver",))
    _dump(out / "matchings.json", {"provenance": report.provenance, "matchings": matchings})


def cmd_audit(cfg: dict[str, Any], seed: int, out: Path) -> None:
    """Audit one fixed instance, or sweep switching costs over scenario instances."""
    costs = [float(s) for s in cfg.get("switching_costs", [round(0.1 * k, 1) for k in range(11)])]
    if "instance" in cfg:
        inst = cfg["instance"]
        try:
            suppliers = [supplier_from_dict(d) for d in inst["suppliers"]]
            orders = [order_from_dict(d) for d in inst["orders"]]
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad instance: {exc}") from exc
        graph = build_graph(orders, suppliers, ProfileQuantifier(int(inst.get("max_contracts", 2))),
                            int(inst.get("period", 0)))
        combined = enumerate_combined(graph, int(cfg.get("budget", 10**6)))
        rows, pairs = [], []
        best = solve_mw(graph).total_utility()
        for solver in _solvers(cfg, ["mw", "as", "mwas"]):
            m = solve_period(graph, solver, combined)
            for s in costs:
                rep = audit(m, graph, combined, s)
                row = {"solver": solver, "s": s, "available_bg": sum(g.available for g in rep.groups)}
                metrics = compute_metrics(m, graph, rep)
                metrics.impact_of_stability = impact_of_stability(m.total_utility(), best)
                row.update(metrics.as_row())
                rows.append(row)
                if s == costs[0]:
                    pairs.extend({"solver": solver, "order": p.contract.order_id, "supplier": p.contract.supplier_id,
                                  "price": p.contract.price, "order_gain": p.order_gain,
                                  "supplier_gain": p.supplier_gain, "available": p.available} for p in rep.pairs)
        out.mkdir(parents=True, exist_ok=True)
        write_csv(out / "audit.csv", rows)
        write_csv(out / "blocking_pairs.csv", pairs)
        _dump(out / "audit.json", {"provenance": provenance(seed, cfg)})
        return
    scenario = MarketScenario.from_dict({"seed": seed, **cfg.get("scenario", {})})
    report = switching_cost_sweep(scenario, _seeds(cfg, seed), costs, cfg.get("solver", "mw"))
    report.write(out, "switching", by=("s",))
    _dump(out / "knee.json", {"bp_knee": sweep_knee(report, "bp_count"), "bg_knee": sweep_knee(report, "bg_count")})


def _hyperparams(cfg: Mapping[str, Any], args: argparse.Namespace) -> DqnHyperparams:
    doc = dict(cfg.get("hyperparams", {}))
    unknown = set(doc) - {f.name for f in fields(DqnHyperparams)}
    if unknown:
        raise ConfigError(f"unknown hyperparameters {sorted(unknown)}")
    if "hidden" in doc:
        doc["hidden"] = tuple(int(w) for w in doc["hidden"])
    if args.episodes is not None:
        doc["episodes"] = args.episodes
    if args.hidden is not None:
        try:
            doc["hidden"] = tuple(int(w) for w in args.hidden.split(","))
        except ValueError as exc:
            raise ConfigError(f"bad --hidden {args.hidden!r}") from exc
    hp = DqnHyperparams(**doc)
    if hp.episodes < 1 or hp.batch_size < 1 or any(w < 1 for w in hp.hidden):
        raise ConfigError("episodes, batch size and widths must be positive")
    return hp


def cmd_train(cfg: dict[str, Any], seed: int, out: Path, args: argparse.Namespace) -> None:
    scenario = DqnScenario.from_dict(cfg.get("scenario", {}))
    hp = _hyperparams(cfg, args)
    net, curve = train_dqn(scenario, hp, seed)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "curve.csv", [asdict(r) for r in curve])
    save_checkpoint(net, out / "checkpoint.bin")
    _dump(out / "manifest.json", {
        "provenance": provenance(seed, cfg),
        "checkpoint": "checkpoint.bin",
        "widths": list(net.widths),
        "scenario": scenario.to_dict(),
        "hyperparams": {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(hp).items()},
    })


def cmd_evaluate(cfg: dict[str, Any], seed: int, out: Path, args: argparse.Namespace) -> None:
    scenario = DqnScenario.from_dict(cfg.get("scenario", {}))
    episodes = int(cfg.get("episodes", 100))
    names = list(cfg.get("baselines", BASELINES))
    bad = [n for n in names if n not in BASELINES]
    if bad:
        raise ConfigError(f"unknown baselines {bad}")
    runs = {}
    ckpt = args.checkpoint or cfg.get("checkpoint")
    if ckpt:
        try:
            net = load_checkpoint(ckpt)
        except FileNotFoundError as exc:
            raise ConfigError(f"checkpoint {ckpt} not found") from exc
        if net.widths[0] != scenario.state_size or net.widths[-1] != scenario.n_actions:
            raise ConfigError("checkpoint does not match the scenario's state and action sizes")
        runs["dqn"] = evaluate_policy(scenario, dqn_policy(net), seed, episodes)
    for name in names:
        runs[name] = baseline(name, scenario, seed, episodes, int(cfg.get("tabular_episodes", 2000)))
    reference = runs["random"] if "random" in runs else baseline("random", scenario, seed, episodes)
    rows = [{"policy": name, "episodes": len(stats),
             "mean_revenue": float(np.mean([s.revenue for s in stats])),
             "normalized_revenue": normalized_revenue(stats, reference),
             "acceptance_rate": float(np.mean([s.acceptance_rate for s in stats])),
             "rejected_value": mean_rejected_rate(stats),
             "unaccepted_value": mean_unaccepted_rate(stats)}
            for name, stats in runs.items()]
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "evaluation.csv", rows)
    _dump(out / "evaluation.json", {"provenance": provenance(seed, cfg), "checkpoint": str(ckpt) if ckpt else None})


def cmd_simulate(cfg: dict[str, Any], seed: int, out: Path) -> None:
    """Several instances per solver with Student-t intervals on the per-instance means."""
    scenario = MarketScenario.from_dict({"seed": seed, **cfg.get("scenario", {})})
    seeds = _seeds({"instances": 5, **cfg}, seed)
    solvers = _solvers(cfg, ["mw", "as", "mwas"])
    report = run_matching_instances(scenario, solvers, seeds, _options(cfg))
    report.provenance = provenance(seed, cfg)
    report.write(out, "simulate", by=("solver",))
    _dump(out / "impact.json", {s: instance_impact(report, s) for s in solvers})


def cmd_defect(cfg: dict[str, Any], seed: int, out: Path) -> None:
    scenario = MarketScenario.from_dict({"seed": seed, **cfg.get("scenario", {})})
    report = RunReport("defect", provenance=provenance(seed, cfg))
    summary = {}
    for access in cfg.get("access", ["complete", "restricted"]):
        r = run_defection_experiment(scenario, access, cfg.get("periods"), seed)
        report.extend(r)
        summary[access] = {"realized_over_mw": realized_ratio(r),
                           "defector_fraction": float(np.mean([row["defector_fraction"] for row in r.rows]))}
    report.write(out, "defect", by=("access",))
    _dump(out / "defect_summary.json", summary)


COMMANDS = {
    "auction": cmd_auction,
    "match": cmd_match,
    "audit": cmd_audit,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "simulate": cmd_simulate,
    "defect": cmd_defect,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="maas", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "train":
            p.add_argument("--episodes", type=int)
            p.add_argument("--hidden", help="comma-separated hidden widths, e.g. 32,16,8")
        if name == "evaluate":
            p.add_argument("--checkpoint")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    out = Path(args.out)
    try:
        cfg = load_config(args.config)
        fn = COMMANDS[args.command]
        if args.command in ("train", "evaluate"):
            fn(cfg, args.seed, out, args)  # type: ignore[call-arg]
        else:
            fn(cfg, args.seed, out)  # type: ignore[call-arg]
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MaasError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    log.info("wrote %s", out)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
