"""Command-line driver: generation, solving, auditing, benchmarks.

Exit codes: 0 success with every audit passing; 2 usage errors including
missing files; 3 an enumeration cap was hit and the written result is
partial; 4 an audit failed.  Rationals cross the process boundary as "p/q"
strings only.  Reports carry deterministic work counters instead of wall
time, so identical (instance, config, seed) runs produce byte-identical
files; the bench table is the one place wall time appears.
"""

import csv
import io
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from fractions import Fraction
from typing import Dict, List, Optional

import click

from .greedy import audit_no_overbid, run_greedy
from .logadaptive import ExecutionTrace, audit_trace, run_log_adaptive
from .merge import run_pseudo_approx
from .metric import (
    FacilityRef,
    MetricInstance,
    ParamSet,
    generate_random_instance,
    generate_stable_instance,
    make_params,
    rat,
    rat_str,
)
from .oracle import (
    EnumerationCapError,
    brute_force_kmedian,
    brute_force_ufl,
    cost,
)
from .stable import SearchCaps, run_main, run_stable

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_PARTIAL = 3
EXIT_AUDIT = 4

ENV_CAP_PREFIX = "KMEDIAN_CAP_"


class RationalParam(click.ParamType):
    """Accepts "p/q", integers, and exact decimal strings."""

    name = "rational"

    def convert(self, value, param, ctx):
        if isinstance(value, Fraction):
            return value
        try:
            return rat(value)
        except (ValueError, ZeroDivisionError, TypeError):
            self.fail(f"{value!r} is not a rational", param, ctx)


RATIONAL = RationalParam()


def canonical_json(doc) -> str:
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def _write(path: Optional[str], text: str):
    if path is None or path == "-":
        click.echo(text, nl=False)
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)


def _load_json(path: str):
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def load_instance(path: str) -> MetricInstance:
    try:
        return MetricInstance.from_json_dict(_load_json(path))
    except (OSError, ValueError, KeyError) as exc:
        raise click.UsageError(f"cannot load instance {path}: {exc}")


def resolve_caps(cap_flags, caps_file: Optional[str]) -> SearchCaps:
    """Merge cap settings; precedence: flags, then file, then environment."""
    doc = SearchCaps().to_dict()
    for key in list(doc):
        env = os.environ.get(ENV_CAP_PREFIX + key.upper())
        if env is not None:
            try:
                doc[key] = int(env)
            except ValueError:
                raise click.UsageError(
                    f"{ENV_CAP_PREFIX + key.upper()} must be an integer, got {env!r}"
                )
    if caps_file:
        try:
            loaded = _load_json(caps_file)
        except (OSError, ValueError) as exc:
            raise click.UsageError(f"cannot load caps file {caps_file}: {exc}")
        unknown = sorted(set(loaded) - set(doc))
        if unknown:
            raise click.UsageError(f"unknown cap names in file: {', '.join(unknown)}")
        doc.update({key: int(value) for key, value in loaded.items()})
    for flag in cap_flags:
        if "=" not in flag:
            raise click.UsageError(f"--cap expects name=value, got {flag!r}")
        name, _, value = flag.partition("=")
        if name not in doc:
            raise click.UsageError(f"unknown cap name: {name}")
        try:
            doc[name] = int(value)
        except ValueError:
            raise click.UsageError(f"cap {name} must be an integer, got {value!r}")
    return SearchCaps.from_dict(doc)


def _ref_doc(ref: FacilityRef) -> Dict:
    return {"base": ref.base, "copy": ref.copy}


def _ref_from_doc(doc: Dict) -> FacilityRef:
    return FacilityRef(base=int(doc["base"]), copy=int(doc["copy"]))


def _params_doc(params: ParamSet) -> Dict:
    return {
        "f": rat_str(params.f),
        "epsilon": rat_str(params.epsilon),
        "eta": rat_str(params.eta),
        "u": {str(cid): rat_str(off) for cid, off in sorted(params.u.items())},
    }


def _params_from_doc(doc: Dict) -> ParamSet:
    return ParamSet(
        f=rat(doc["f"]),
        epsilon=rat(doc["epsilon"]),
        eta=rat(doc["eta"]),
        u={int(cid): rat(off) for cid, off in doc.get("u", {}).items()},
    )


def connection_cost(inst: MetricInstance, centers) -> Fraction:
    return cost(inst, centers)


# ---------------------------------------------------------------------------
# audits shared by solve and verify


def _verdict(name: str, ok: bool, detail: str = "") -> Dict:
    return {"name": name, "pass": bool(ok), "detail": detail}


def audit_greedy_report(inst: MetricInstance, report: Dict) -> List[Dict]:
    verdicts = []
    centers = [int(c) for c in report["solution"]]
    f = rat(report["certificate"]["f"])
    alpha = {int(j): rat(v) for j, v in report["certificate"]["alpha"].items()}
    conn = connection_cost(inst, centers)
    verdicts.append(
        _verdict(
            "cost-recomputation",
            conn == rat(report["cost"]),
            f"recomputed {rat_str(conn)}",
        )
    )
    lhs = sum(alpha.values(), Fraction(0))
    rhs = conn + 2 * f * len(centers)
    verdicts.append(
        _verdict(
            "payment-identity",
            lhs == rhs,
            f"dual total {rat_str(lhs)} vs cost-plus-prices {rat_str(rhs)}",
        )
    )
    ok = True
    worst = ""
    for i in inst.facilities:
        surplus = sum(
            (max(alpha[j] - 2 * inst.d(i, j), Fraction(0)) for j in inst.clients),
            Fraction(0),
        )
        if surplus > 2 * f:
            ok = False
            worst = f"facility {i} collects {rat_str(surplus)} > {rat_str(2 * f)}"
            break
    verdicts.append(_verdict("dual-feasibility", ok, worst or "all facilities within budget"))
    return verdicts


def audit_trace_report(inst: MetricInstance, report: Dict) -> List[Dict]:
    """Replay the embedded trace and recheck counts for walk-style reports."""
    verdicts = []
    params = _params_from_doc(report["certificate"]["params"])
    refs = [_ref_from_doc(doc) for doc in report["solution"]]
    total = cost(inst, refs, params)
    verdicts.append(
        _verdict(
            "cost-recomputation",
            total == rat(report["cost"]),
            f"recomputed {rat_str(total)}",
        )
    )
    trace_doc = report["certificate"].get("trace")
    if trace_doc is not None:
        trace = ExecutionTrace.from_json_dict(trace_doc, params)
        outcome = audit_trace(inst, params, trace)
        verdicts.append(
            _verdict(
                "trace-replay",
                outcome.ok,
                "; ".join(outcome.violations[:3]) or f"{sum(outcome.checks.values())} checks",
            )
        )
        frees = [phase.free_count() for phase in trace.phases]
        verdicts.append(
            _verdict(
                "free-per-phase",
                all(x <= 3 for x in frees),
                f"max {max(frees) if frees else 0} free openings in one phase",
            )
        )
    if report["config"]["algorithm"] == "merge":
        k = int(report["config"]["k"])
        regular = sum(1 for r in refs if r.copy < 0)
        verdicts.append(
            _verdict("regular-count", regular == k, f"{regular} regular centers, want {k}")
        )
    return verdicts


def audit_centers_report(inst: MetricInstance, report: Dict) -> List[Dict]:
    verdicts = []
    centers = [int(c) for c in report["solution"]]
    k = int(report["config"]["k"])
    total = connection_cost(inst, centers)
    verdicts.append(
        _verdict(
            "cost-recomputation",
            total == rat(report["cost"]),
            f"recomputed {rat_str(total)}",
        )
    )
    verdicts.append(
        _verdict("cardinality", len(centers) == k, f"{len(centers)} centers, want {k}")
    )
    verdicts.append(
        _verdict(
            "centers-exist",
            all(c in set(inst.facilities) for c in centers),
            "all ids in facility range" if centers else "empty",
        )
    )
    return verdicts


def audit_report(inst: MetricInstance, report: Dict) -> List[Dict]:
    algorithm = report["config"]["algorithm"]
    if algorithm == "greedy":
        return audit_greedy_report(inst, report)
    if algorithm in ("log-adaptive", "merge"):
        return audit_trace_report(inst, report)
    if algorithm in ("stable", "main"):
        return audit_centers_report(inst, report)
    raise click.UsageError(f"report names unknown algorithm {algorithm!r}")


# ---------------------------------------------------------------------------
# solve


def _config_doc(algorithm, inst, k, f, epsilon, eta, seed, restarts, caps) -> Dict:
    return {
        "algorithm": algorithm,
        "instance": {"label": inst.label, "n": inst.n, "m": inst.m},
        "k": k,
        "f": rat_str(f) if f is not None else None,
        "epsilon": rat_str(epsilon) if epsilon is not None else None,
        "eta": rat_str(eta) if eta is not None else None,
        "seed": seed,
        "restarts": restarts,
        "caps": caps.to_dict(),
    }


def build_report(inst, algorithm, k, f, epsilon, eta, seed, restarts, caps, workers):
    """Run one algorithm and assemble its report; returns (report, partial)."""
    config = _config_doc(algorithm, inst, k, f, epsilon, eta, seed, restarts, caps)
    partial = False
    if algorithm == "greedy":
        outcome = run_greedy(inst, f)
        centers = sorted(ref.base for ref in outcome.S_star)
        report = {
            "config": config,
            "solution": centers,
            "cost": rat_str(connection_cost(inst, centers)),
            "certificate": {
                "f": rat_str(rat(f)),
                "alpha": {str(j): rat_str(v) for j, v in sorted(outcome.alpha_star.items())},
                "open": centers,
            },
            "timing": {"events": len(outcome.events)},
            "guess_log": None,
        }
    elif algorithm == "log-adaptive":
        trace, outcome = run_log_adaptive(inst, f, epsilon, eta)
        params = make_params(f, epsilon, inst.n, eta=eta)
        refs = list(outcome.S_star)
        report = {
            "config": config,
            "solution": [_ref_doc(r) for r in refs],
            "cost": rat_str(cost(inst, refs, params)),
            "certificate": {
                "params": _params_doc(params),
                "alpha": {str(j): rat_str(v) for j, v in sorted(outcome.alpha_star.items())},
                "trace": trace.to_json_dict(),
                "phases": trace.final_phase,
            },
            "timing": {"phases": trace.final_phase, "openings": len(trace.all_refs())},
            "guess_log": None,
        }
    elif algorithm == "merge":
        sol = run_pseudo_approx(inst, k, epsilon, eta)
        refs = list(sol.open_set)
        report = {
            "config": config,
            "solution": [_ref_doc(r) for r in refs],
            "cost": rat_str(sol.cost),
            "certificate": {
                "params": _params_doc(sol.params),
                "alpha": {str(j): rat_str(v) for j, v in sorted(sol.certificate.items())},
                "trace": sol.trace.to_json_dict() if sol.trace is not None else None,
                "regular": sol.k_regular,
                "free": sol.free_count,
            },
            "timing": {
                "phases": sol.trace.final_phase if sol.trace is not None else 0,
                "decisions": len(sol.decision_log),
            },
            "guess_log": list(sol.decision_log) or None,
        }
    elif algorithm in ("stable", "main"):
        runner = run_stable if algorithm == "stable" else run_main
        sol = runner(
            inst, k, epsilon, seed=seed, caps=caps, restarts=restarts, workers=workers
        )
        partial = sol.partial_search
        report = {
            "config": config,
            "solution": list(sol.centers),
            "cost": rat_str(sol.cost),
            "certificate": {"winner": sol.winner, "partial_search": sol.partial_search},
            "timing": {"candidates": sol.evaluated},
            "guess_log": sol.winner,
        }
    else:
        raise click.UsageError(f"unknown algorithm {algorithm!r}")
    return report, partial


# ---------------------------------------------------------------------------
# the command group


@click.group()
def main():
    """Exact-rational toolkit for k-median and facility-location solvers."""


@main.command()
@click.argument("kind", type=click.Choice(["random", "stable"]))
@click.option("--n", type=int, default=None, help="clients (random only)")
@click.option("--m", type=int, default=None, help="facilities (random only)")
@click.option("--k", type=int, default=None, help="planted groups (stable only)")
@click.option("--cluster-size", type=int, default=3, show_default=True)
@click.option("--separation", type=int, default=None, help="gap between groups")
@click.option("--extra-facilities", type=int, default=0, show_default=True)
@click.option("--jitter", is_flag=True, default=False)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--output", "-o", required=True, type=click.Path(dir_okay=False))
def gen(kind, n, m, k, cluster_size, separation, extra_facilities, jitter, seed, output):
    """Write a canonical instance file; deterministic per seed."""
    if kind == "random":
        if n is None or m is None:
            raise click.UsageError("gen random needs --n and --m")
        if n < 1 or m < 1:
            raise click.UsageError("--n and --m must be at least 1")
        inst = generate_random_instance(seed, n, m)
        summary = {"kind": kind, "path": output, "n": inst.n, "m": inst.m}
    else:
        if k is None:
            raise click.UsageError("gen stable needs --k")
        if k < 1 or cluster_size < 1:
            raise click.UsageError("--k and --cluster-size must be at least 1")
        if separation is None:
            separation = 10 * (2 + cluster_size)
        inst, planted = generate_stable_instance(
            seed, k, cluster_size, separation, extra_facilities, jitter
        )
        summary = {
            "kind": kind,
            "path": output,
            "n": inst.n,
            "m": inst.m,
            "k": k,
            "planted": sorted(planted),
        }
        # separation quality: how much dropping one center hurts
        beta = None
        if k >= 2:
            try:
                opt_k = brute_force_kmedian(inst, k).value
                opt_k1 = brute_force_kmedian(inst, k - 1).value
                if opt_k > 0:
                    beta = rat_str(opt_k1 / opt_k - 1)
            except EnumerationCapError:
                beta = None
        summary["beta"] = beta
    _write(output, canonical_json(inst.to_json_dict()))
    click.echo(canonical_json(summary), nl=False)


@main.command()
@click.argument(
    "algorithm", type=click.Choice(["greedy", "log-adaptive", "merge", "stable", "main"])
)
@click.option("--instance", "-i", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--k", type=int, default=None)
@click.option("--f", type=RATIONAL, default=None)
@click.option("--epsilon", type=RATIONAL, default=Fraction(1, 8), show_default="1/8")
@click.option("--eta", type=RATIONAL, default=None)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--restarts", type=int, default=None)
@click.option("--workers", type=int, default=0, show_default=True)
@click.option("--cap", "cap_flags", multiple=True, help="name=value, repeatable")
@click.option("--caps-file", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--output", "-o", type=click.Path(dir_okay=False), default=None)
def solve(
    algorithm,
    instance,
    k,
    f,
    epsilon,
    eta,
    seed,
    restarts,
    workers,
    cap_flags,
    caps_file,
    output,
):
    """Run one algorithm, re-audit its output, write the report."""
    if algorithm in ("merge", "stable", "main") and k is None:
        raise click.UsageError(f"{algorithm} needs --k")
    if algorithm in ("greedy", "log-adaptive") and f is None:
        raise click.UsageError(f"{algorithm} needs --f")
    caps = resolve_caps(cap_flags, caps_file)
    inst = load_instance(instance)
    if k is not None and not (1 <= k <= inst.m):
        raise click.UsageError(f"--k must lie in [1, {inst.m}]")
    try:
        report, partial = build_report(
            inst, algorithm, k, f, epsilon, eta, seed, restarts, caps, workers
        )
    except ValueError as exc:
        raise click.UsageError(str(exc))
    report["audits"] = audit_report(inst, report)
    _write(output, canonical_json(report))
    if not all(v["pass"] for v in report["audits"]):
        sys.exit(EXIT_AUDIT)
    if partial:
        sys.exit(EXIT_PARTIAL)
    sys.exit(EXIT_OK)


@main.command()
@click.option("--instance", "-i", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--report", "-r", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--output", "-o", type=click.Path(dir_okay=False), default=None)
def verify(instance, report, output):
    """Replay every audit for a saved report; exit 4 on any failure."""
    inst = load_instance(instance)
    try:
        doc = _load_json(report)
    except (OSError, ValueError) as exc:
        raise click.UsageError(f"cannot load report {report}: {exc}")
    try:
        verdicts = audit_report(inst, doc)
    except (KeyError, TypeError) as exc:
        raise click.UsageError(f"malformed report: missing {exc}")
    ok = all(v["pass"] for v in verdicts)
    _write(output, canonical_json({"ok": ok, "verdicts": verdicts}))
    sys.exit(EXIT_OK if ok else EXIT_AUDIT)


def _bench_row(path: str, algorithm: str, k, f, epsilon, seed, caps):
    import time as _time

    inst = load_instance(path)
    t0 = _time.perf_counter()
    report, _partial = build_report(
        inst, algorithm, k, f, epsilon, None, seed, None, caps, 0
    )
    wall_ms = (_time.perf_counter() - t0) * 1000.0
    value = rat(report["cost"])
    if algorithm in ("greedy", "log-adaptive"):
        param = f"f={rat_str(rat(f))}"
        opened = len(report["solution"])
        free = sum(1 for r in report["solution"] if isinstance(r, dict) and r["copy"] >= 0)
        phases = report["timing"].get("phases", "")
        try:
            opt = brute_force_ufl(inst, f).value - rat(f) * len(report["solution"])
        except EnumerationCapError:
            opt = None
    else:
        param = f"k={k}"
        opened = len(report["solution"])
        free = report["certificate"].get("free", 0) if algorithm == "merge" else 0
        phases = report["timing"].get("phases", "")
        try:
            opt = brute_force_kmedian(inst, k).value
        except EnumerationCapError:
            opt = None
    ratio = rat_str(value / opt) if opt not in (None, 0) else ""
    return {
        "instance": os.path.basename(path),
        "algorithm": algorithm,
        "param": param,
        "cost": rat_str(value),
        "opt": rat_str(opt) if opt is not None else "",
        "ratio": ratio,
        "centers": opened,
        "free": free,
        "phases": phases,
        "wall_ms": f"{wall_ms:.3f}",
    }


BENCH_COLUMNS = (
    "instance",
    "algorithm",
    "param",
    "cost",
    "opt",
    "ratio",
    "centers",
    "free",
    "phases",
    "wall_ms",
)


@main.command()
@click.argument("instances", nargs=-1, type=click.Path(exists=True, dir_okay=False))
@click.option(
    "--algorithm",
    "-a",
    "algorithms",
    multiple=True,
    type=click.Choice(["greedy", "log-adaptive", "merge", "stable", "main"]),
    default=("merge",),
    show_default=True,
)
@click.option("--k", type=int, default=None)
@click.option("--f", type=RATIONAL, default=None)
@click.option("--epsilon", type=RATIONAL, default=Fraction(1, 8), show_default="1/8")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--workers", type=int, default=0, show_default=True)
@click.option("--format", "fmt", type=click.Choice(["csv", "json"]), default="csv")
@click.option("--cap", "cap_flags", multiple=True)
@click.option("--caps-file", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--output", "-o", type=click.Path(dir_okay=False), default=None)
def bench(instances, algorithms, k, f, epsilon, seed, workers, fmt, cap_flags, caps_file, output):
    """Sweep a corpus x algorithm grid into a table; rows sorted by key."""
    for algorithm in algorithms:
        if algorithm in ("merge", "stable", "main") and k is None:
            raise click.UsageError(f"{algorithm} needs --k")
        if algorithm in ("greedy", "log-adaptive") and f is None:
            raise click.UsageError(f"{algorithm} needs --f")
    caps = resolve_caps(cap_flags, caps_file)
    jobs = sorted(
        (path, algorithm) for path in instances for algorithm in algorithms
    )
    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(
                pool.map(lambda job: _bench_row(job[0], job[1], k, f, epsilon, seed, caps), jobs)
            )
    else:
        rows = [_bench_row(path, algorithm, k, f, epsilon, seed, caps) for path, algorithm in jobs]
    if fmt == "json":
        _write(output, canonical_json(rows))
    else:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=BENCH_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)
        _write(output, buf.getvalue())
    sys.exit(EXIT_OK)


@main.command()
@click.option("--instance", "-i", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--k", type=int, default=None)
@click.option("--f", type=RATIONAL, default=None)
@click.option("--output", "-o", type=click.Path(dir_okay=False), default=None)
def oracle(instance, k, f, output):
    """Exhaustive ground truth for one instance; exit 3 past the cap."""
    if (k is None) == (f is None):
        raise click.UsageError("oracle needs exactly one of --k or --f")
    inst = load_instance(instance)
    try:
        if k is not None:
            if not (1 <= k <= inst.m):
                raise click.UsageError(f"--k must lie in [1, {inst.m}]")
            res = brute_force_kmedian(inst, k)
            doc = {
                "kind": "k-median",
                "k": k,
                "value": rat_str(res.value),
                "witness": sorted(res.witness),
                "enumerated": res.enumerated,
            }
        else:
            res = brute_force_ufl(inst, f)
            doc = {
                "kind": "facility-location",
                "f": rat_str(rat(f)),
                "value": rat_str(res.value),
                "witness": sorted(res.witness),
                "enumerated": res.enumerated,
            }
    except EnumerationCapError as exc:
        _write(output, canonical_json({"error": str(exc)}))
        sys.exit(EXIT_PARTIAL)
    _write(output, canonical_json(doc))
    sys.exit(EXIT_OK)


if __name__ == "__main__":
    main()
