"""Config-driven experiment runner.

A config is a JSON document::

    {
      "kind": "resist-ifo",
      "instance": {"n": 8, "mu": 1.0, "kappa": 101, "gamma": 1.0, "component_dim": 512},
      "solvers": ["gd", "agm", {"name": "sgd", "seeds": [0, 1]}],
      "budget": 800,
      "output_dir": "out"
    }

:func:`parse_config` validates the whole document and reports every problem
at once; :func:`run_experiment` builds the instance, runs each (solver, seed)
pair, writes one CSV trace per run plus ``report.json``, and rolls the
certificates up into a single pass/fail.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import analysis
from .errors import ConfigError
from .oracle import (
    RANDOMIZED_REASON,
    ResistingIFO,
    SingleResistingIFO,
    StaticIFO,
    assert_certificate,
    transcript_replay_check,
)
from .problems import build_hard_instance, rls_problem, sample_sphere_dataset
from .solvers import SOLVERS, Monitor, RunTrace, SolverConfig, run_solver

KINDS = ("hard-static", "resist-single", "resist-ifo", "rls", "bounds-table")
RESISTING_KINDS = ("resist-single", "resist-ifo")
OUTPUT_ENV = "IFOBOUND_OUTPUT_DIR"


@dataclass(frozen=True)
class SolverEntry:
    """One solver in the config; ``seed=None`` for deterministic solvers."""

    name: str
    seed: int | None = None
    budget: int | None = None
    step: float | None = None
    epoch: int | None = None
    k0: float = 0.0
    mu_eff: float | None = None
    L_eff: float | None = None
    record_every: int | None = None
    verify_every: int = 0

    @property
    def deterministic(self) -> bool:
        return SOLVERS[self.name].deterministic


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated experiment settings.

    Defaults: ``n=8, mu=1, kappa=101, gamma=1, component_dim=512, dim=256,
    R=1, noise=0, data_seed=0, loss_scale=0.5, budget=800, seeds=(0,),
    eps=1e-6, delta=0.01, c=C=1, slack=1e-6, workers=1,
    output_dir="ifobound-out"``. For data-driven runs (``rls``, or
    ``bounds-table`` with ``d`` set) ``mu`` defaults to ``1/n``, ``d`` to 50
    and ``L`` comes from the data.
    """

    kind: str
    n: int = 8
    mu: float = 1.0
    L: float | None = 101.0
    gamma: float = 1.0
    component_dim: int = 512
    dim: int = 256
    R: float = 1.0
    d: int | None = None
    noise: float = 0.0
    data_seed: int = 0
    loss_scale: float = 0.5
    solvers: tuple = ()
    budget: int = 800
    seeds: tuple = (0,)
    eps: float = 1e-6
    delta: float = 0.01
    c: float = 1.0
    C: float = 1.0
    slack: float = 1e-6
    record_every: int | None = None
    workers: int = 1
    write_transcripts: bool = False
    output_dir: str = "ifobound-out"

    @property
    def data_driven(self) -> bool:
        return self.kind == "rls" or (self.kind == "bounds-table" and self.d is not None)

    @property
    def kappa(self) -> float | None:
        return None if self.L is None else self.L / self.mu

    def runs(self):
        """``(entry, seed)`` pairs in execution order; randomized solvers expand over seeds."""
        out = []
        for e in self.solvers:
            if e.deterministic:
                out.append(replace(e, seed=None))
            elif e.seed is not None:
                out.append(e)
            else:
                out.extend(replace(e, seed=s) for s in self.seeds)
        return out

    def to_dict(self) -> dict:
        d = asdict(self)
        d["solvers"] = [asdict(e) for e in self.solvers]
        d["seeds"] = list(self.seeds)
        return d


# --------------------------------------------------------------------------
# parsing

_INT, _NUM, _BOOL, _STR = "integer", "number", "boolean", "string"


def _is(kind, v) -> bool:
    if kind == _INT:
        return isinstance(v, int) and not isinstance(v, bool)
    if kind == _NUM:
        return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)
    if kind == _BOOL:
        return isinstance(v, bool)
    return isinstance(v, str)


def _pos(v):
    return v > 0


def _nonneg(v):
    return v >= 0


def _open01(v):
    return 0 < v < 1


# name: (type, predicate, message)
_INSTANCE_FIELDS = {
    "n": (_INT, _pos, "must be >= 1"),
    "mu": (_NUM, _pos, "must be > 0"),
    "L": (_NUM, _pos, "must be > 0"),
    "kappa": (_NUM, lambda v: v >= 1, "must be >= 1"),
    "gamma": (_NUM, _pos, "must be > 0"),
    "component_dim": (_INT, _pos, "must be >= 1"),
    "dim": (_INT, _pos, "must be >= 1"),
    "R": (_NUM, _pos, "must be > 0"),
    "d": (_INT, _pos, "must be >= 1"),
    "noise": (_NUM, _nonneg, "must be >= 0"),
    "data_seed": (_INT, _nonneg, "must be >= 0"),
    "loss_scale": (_NUM, _pos, "must be > 0"),
}

_TOP_FIELDS = {
    "budget": (_INT, _pos, "must be a positive number of IFO calls"),
    "eps": (_NUM, _open01, "must lie in (0, 1)"),
    "delta": (_NUM, _open01, "must lie in (0, 1)"),
    "c": (_NUM, _pos, "must be > 0"),
    "C": (_NUM, _pos, "must be > 0"),
    "slack": (_NUM, lambda v: 0 <= v < 1, "must lie in [0, 1)"),
    "record_every": (_INT, _pos, "must be >= 1"),
    "workers": (_INT, _pos, "must be >= 1"),
    "write_transcripts": (_BOOL, None, ""),
    "output_dir": (_STR, lambda v: bool(v), "must be non-empty"),
}

_SOLVER_FIELDS = {
    "seed": (_INT, _nonneg, "must be >= 0"),
    "budget": (_INT, _pos, "must be a positive number of IFO calls"),
    "step": (_NUM, _pos, "must be > 0"),
    "epoch": (_INT, _pos, "must be >= 1"),
    "k0": (_NUM, _nonneg, "must be >= 0"),
    "mu_eff": (_NUM, _pos, "must be > 0"),
    "L_eff": (_NUM, _pos, "must be > 0"),
    "record_every": (_INT, _pos, "must be >= 1"),
    "verify_every": (_INT, _nonneg, "must be >= 0"),
}


def _fields(doc: dict, spec: dict, prefix: str, errors: list, skip=()) -> dict:
    out = {}
    for key, value in doc.items():
        if key in skip:
            continue
        path = f"{prefix}{key}"
        if key not in spec:
            errors.append(f"{path}: unknown field")
            continue
        kind, pred, msg = spec[key]
        if value is None and key == "record_every":
            out[key] = None
            continue
        if not _is(kind, value):
            errors.append(f"{path}: expected {kind}, got {value!r}")
        elif pred is not None and not pred(value):
            errors.append(f"{path}: {msg}, got {value!r}")
        else:
            out[key] = float(value) if kind == _NUM else value
    return out


def _parse_solvers(raw, errors: list) -> list:
    if not isinstance(raw, list):
        errors.append(f"solvers: expected a list, got {raw!r}")
        return []
    entries = []
    for k, item in enumerate(raw):
        path = f"solvers[{k}]"
        if isinstance(item, str):
            item = {"name": item}
        if not isinstance(item, dict):
            errors.append(f"{path}: expected a solver name or object, got {item!r}")
            continue
        name = item.get("name")
        if not isinstance(name, str):
            errors.append(f"{path}.name: required string")
            continue
        if name not in SOLVERS:
            errors.append(f"{path}.name: unknown solver {name!r}; known: {', '.join(sorted(SOLVERS))}")
            continue
        opts = _fields(item, _SOLVER_FIELDS, f"{path}.", errors, skip=("name", "seeds"))
        seeds = item.get("seeds")
        if seeds is not None:
            if not SOLVERS[name].deterministic and _seed_list(seeds, f"{path}.seeds", errors):
                entries.extend(SolverEntry(name=name, **{**opts, "seed": s}) for s in seeds)
                continue
            if SOLVERS[name].deterministic:
                errors.append(f"{path}.seeds: {name} is deterministic and takes no seeds")
            continue
        entries.append(SolverEntry(name=name, **opts))
    return entries


def _seed_list(seeds, path: str, errors: list) -> bool:
    if not isinstance(seeds, list) or not seeds or not all(_is(_INT, s) and s >= 0 for s in seeds):
        errors.append(f"{path}: expected a non-empty list of non-negative integers, got {seeds!r}")
        return False
    return True


def parse_config(text) -> ExperimentConfig:
    """Validate a JSON document (text or already-decoded dict).

    Raises
    ------
    ConfigError
        Listing every invalid field with its path; no partial config is returned.
    """
    if isinstance(text, (str, bytes)):
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError([f"<document>: not valid JSON ({exc})"]) from None
    else:
        doc = text
    if not isinstance(doc, dict):
        raise ConfigError(["<document>: expected a JSON object"])

    errors: list[str] = []
    kind = doc.get("kind")
    if kind not in KINDS:
        errors.append(f"kind: expected one of {', '.join(KINDS)}, got {kind!r}")
    known = {"kind", "instance", "solvers", "seeds"} | set(_TOP_FIELDS)
    for key in doc:
        if key not in known:
            errors.append(f"{key}: unknown field")

    inst_raw = doc.get("instance", {})
    if not isinstance(inst_raw, dict):
        errors.append(f"instance: expected an object, got {inst_raw!r}")
        inst_raw = {}
    inst = _fields(inst_raw, _INSTANCE_FIELDS, "instance.", errors)
    top = _fields({k: v for k, v in doc.items() if k in _TOP_FIELDS}, _TOP_FIELDS, "", errors)
    solvers = _parse_solvers(doc.get("solvers", []), errors)
    seeds = doc.get("seeds", [0])
    _seed_list(seeds, "seeds", errors)

    data_driven = kind == "rls" or (kind == "bounds-table" and "d" in inst_raw)
    n = inst.get("n", 8)
    if data_driven:
        for key in ("L", "kappa"):
            if key in inst_raw:
                errors.append(f"instance.{key}: determined by the data for this kind; remove it")
        inst.setdefault("mu", 1.0 / n)
        inst.setdefault("d", 50)
        inst["L"] = None
    else:
        mu = inst.get("mu", 1.0)
        if "L" in inst and "kappa" in inst:
            if abs(inst["L"] / mu - inst["kappa"]) > 1e-12 * inst["kappa"]:
                errors.append(f"instance.L, instance.kappa: inconsistent, L/mu = {inst['L'] / mu!r} "
                              f"but kappa = {inst['kappa']!r}")
        elif "kappa" in inst:
            inst["L"] = inst["kappa"] * mu
        L = inst.setdefault("L", 101.0 * mu)
        if kind in ("hard-static", "resist-single", "resist-ifo") and not L > mu:
            errors.append(f"instance.L: need L > mu for the hard instance, got L={L!r}, mu={mu!r}")
    inst.pop("kappa", None)

    if kind == "bounds-table" and solvers:
        errors.append("solvers: bounds-table is analysis-only and runs no solvers")
    if errors:
        raise ConfigError(errors)
    return ExperimentConfig(kind=kind, solvers=tuple(solvers), seeds=tuple(seeds), **inst, **top)


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_text())


# --------------------------------------------------------------------------
# running


class _DeferredMonitor(Monitor):
    """Keeps iterates so errors can be computed once the adversary has committed to ``x*``."""

    def __init__(self):
        super().__init__()
        self.points = []

    def sample(self, k_calls, x):
        self.points.append(np.array(x, dtype=np.float64))
        return super().sample(k_calls, x)

    def resolve(self, samples, x_star, objective, log_lower_bound):
        m = Monitor(x_star, objective, log_lower_bound)
        return [replace(m.sample(s.k_calls, x), wall_ns=s.wall_ns)
                for s, x in zip(samples, self.points)]


def _solver_config(config: ExperimentConfig, entry: SolverEntry) -> SolverConfig:
    return SolverConfig(
        name=entry.name, budget=entry.budget or config.budget, step=entry.step, seed=entry.seed,
        epoch=entry.epoch, mu_eff=entry.mu_eff, L_eff=entry.L_eff, k0=entry.k0,
        record_every=entry.record_every or config.record_every, verify_every=entry.verify_every,
    )


def _dataset(config: ExperimentConfig):
    return sample_sphere_dataset(config.n, config.d, config.R, config.mu, config.noise,
                                 seed=config.data_seed)


def _static_problem(config: ExperimentConfig):
    if config.kind == "hard-static":
        return build_hard_instance(config.n, config.mu, config.L, config.gamma, config.component_dim)
    return rls_problem(_dataset(config), loss_scale=config.loss_scale)


def _bound_fn(kappa: float, n: int):
    def log_lower_bound(K):
        return analysis.lower_bound_curve(1.0, kappa, n, K).log
    return log_lower_bound


def run_one(config: ExperimentConfig, entry: SolverEntry) -> dict:
    """Run a single (solver, seed) pair; returns the summary, CSV rows and certificate."""
    scfg = _solver_config(config, entry)
    cert = None
    if config.kind in RESISTING_KINDS:
        if config.kind == "resist-ifo":
            oracle = ResistingIFO(config.n, config.mu, config.L, config.gamma, config.component_dim,
                                  budget=scfg.budget, keep_vectors=config.write_transcripts)
        else:
            oracle = SingleResistingIFO(config.mu, config.L, config.gamma, config.dim,
                                        keep_vectors=config.write_transcripts)
        mon = _DeferredMonitor()
        trace = run_solver(scfg, oracle, monitor=mon)
        cert = oracle.finalize(trace.x_final, slack=config.slack)
        assert_certificate(cert, entry.deterministic)
        if config.kind == "resist-ifo":
            transcript_replay_check(lambda o: run_solver(scfg, o), cert)
        trace.samples = mon.resolve(trace.samples, cert.x_star, cert.problem.value,
                                    _bound_fn(oracle.L / oracle.mu, oracle.n))
        n, calls = oracle.n, oracle.calls
    else:
        problem = _static_problem(config)
        oracle = StaticIFO(problem, keep_vectors=config.write_transcripts)
        mon = Monitor(problem.x_star, problem.value, _bound_fn(problem.kappa, problem.n))
        trace = run_solver(scfg, oracle, monitor=mon)
        n, calls = problem.n, oracle.calls

    first = trace.first_reaching(config.eps)
    summary = {
        "algo": entry.name, "seed": entry.seed, "deterministic": entry.deterministic,
        "budget": scfg.budget, "calls": calls,
        "final_rel_error": trace.samples[-1].rel_error if trace.samples else None,
        "final_obj": trace.samples[-1].obj if trace.samples else None,
        "calls_to_eps": first, "batches_to_eps": None if first is None else first / n,
        "csv": _csv_name(config.kind, entry),
    }
    out = {"summary": summary, "rows": [RunTrace.CSV_COLUMNS, *trace.csv_rows()]}
    if cert is not None:
        cd = cert.to_dict()
        cd["algo"], cd["seed"], cd["deterministic"] = entry.name, entry.seed, entry.deterministic
        if not entry.deterministic:
            cd["reason"] = RANDOMIZED_REASON
        out["certificate"] = cd
    if config.write_transcripts:
        out["transcript"] = oracle.transcript
    return out


def _run_one_star(args):
    return run_one(*args)


def _csv_name(kind: str, entry: SolverEntry) -> str:
    return f"{kind}_{entry.name}" + ("" if entry.seed is None else f"_seed{entry.seed}") + ".csv"


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    runs: list = field(default_factory=list)
    certificates: list = field(default_factory=list)
    rate_report: dict | None = None
    complexity: dict | None = None
    rollup: dict = field(default_factory=dict)
    output_dir: Path | None = None

    @property
    def passed(self) -> bool:
        return self.rollup.get("status") == "pass"

    def to_dict(self) -> dict:
        return _jsonable({
            "config": self.config.to_dict(), "runs": self.runs,
            "certificates": self.certificates, "rate_report": self.rate_report,
            "complexity": self.complexity, "rollup": self.rollup,
        })


def _jsonable(obj):
    """Replace non-finite floats by strings and numpy scalars by Python ones."""
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if math.isnan(v):
            return None
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def rollup(certificates: list) -> dict:
    """Fail iff a deterministic solver's certificate fails or its replay does not match."""
    failed = []
    for c in certificates:
        if not c["deterministic"]:
            continue
        if c["status"] != "pass":
            failed.append(f"{c['algo']}: bound violated")
        elif c.get("replay_verified") is False:
            failed.append(f"{c['algo']}: transcript replay diverged")
    asserted = sum(c["deterministic"] for c in certificates)
    return {"status": "fail" if failed else "pass", "failed": failed, "asserted": asserted,
            "not_asserted": len(certificates) - asserted}


def _analysis(config: ExperimentConfig):
    if config.data_driven:
        ds = _dataset(config)
        L = ds.smoothness(config.loss_scale)
        mu_f, L_f, kappa_f = analysis.empirical_spectrum(ds, loss_scale=config.loss_scale)
        conc = analysis.concentration_check(config.d, config.n, config.delta, config.c, config.C,
                                            kappa_f)
        table = analysis.regime_table(config.n, config.mu, L, mu_f, L_f, concentration=conc)
        rate = analysis.rate_report(L / config.mu, config.n, 1.0, config.eps)
        complexity = table.to_dict()
        complexity["table"] = table.table()
        return rate.to_dict(), complexity
    n = 1 if config.kind == "resist-single" else config.n
    return analysis.rate_report(config.kappa, n, config.gamma, config.eps).to_dict(), None


def run_experiment(config: ExperimentConfig, output_dir=None, write: bool = True) -> ExperimentReport:
    """Run every solver in ``config`` and assemble the report.

    Output (when ``write``) goes to ``output_dir`` or ``config.output_dir``:
    one CSV trace per run and ``report.json``. Results do not depend on
    ``config.workers``.
    """
    out_dir = Path(output_dir if output_dir is not None else config.output_dir)
    tasks = [(config, e) for e in config.runs()]
    if config.workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(_run_one_star, tasks))
    else:
        results = [run_one(*t) for t in tasks]

    rate, complexity = _analysis(config)
    certs = [r["certificate"] for r in results if "certificate" in r]
    report = ExperimentReport(
        config=config, runs=[r["summary"] for r in results], certificates=certs,
        rate_report=rate, complexity=complexity, rollup=rollup(certs),
        output_dir=out_dir if write else None,
    )
    if write:
        out_dir.mkdir(parents=True, exist_ok=True)
        for r in results:
            with (out_dir / r["summary"]["csv"]).open("w", newline="") as fh:
                csv.writer(fh).writerows(r["rows"])
            if "transcript" in r:
                r["transcript"].to_csv(out_dir / r["summary"]["csv"].replace(".csv", "_transcript.csv"))
        (out_dir / "report.json").write_text(
            json.dumps(report.to_dict(), indent=2, sort_keys=True, allow_nan=False) + "\n")
    return report


def load_report(directory) -> dict:
    return json.loads((Path(directory) / "report.json").read_text())
