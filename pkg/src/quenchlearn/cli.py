"""Config-driven command line interface.

Subcommands: ``simulate`` (write a shot dataset), ``learn`` (reconstruct a
generator), ``curve`` (learning curve over nested shot budgets),
``bootstrap`` (error bars on the reconstruction), ``sweep-beta``
(regularization spectrum sweep).  All take a JSON config; artifacts embed
the config hash, so re-running an unchanged config reproduces identical
files.  ``learn``/``curve``/``bootstrap`` reuse a dataset file previously
written by ``simulate`` into the same output directory when its config
hash matches, and simulate in memory otherwise.

Exit codes: 0 success, 1 invalid config, 2 solver non-convergence
(artifacts are still written, flagged).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from .constraints import (
    Ansatz,
    DatasetSource,
    DissipatorAnsatz,
    EMPTY_DISSIPATOR,
    ExactSource,
    build_additional,
    build_ehrenfest,
    build_energy,
    required_primitives,
)
from .experiment import (
    ProductState,
    QuenchDataset,
    group_bases,
    random_bases,
    simulate_dataset,
)
from .dynamics import TimeGrid
from .models import (
    ModelSpec,
    ansatz_library,
    dissipator_library,
    ising_model,
    probe_set,
    subsystem_ansatz,
    subsystem_model,
    subsystem_parametrization,
    true_coefficients,
    true_rate_vector,
    xy_model,
    xy_parametrization,
)
from .pauli import Operator
from .solver import (
    Parametrization,
    SolverConfig,
    solve_ehrenfest,
    solve_energy,
    solve_regularized,
    solve_with_additional,
)
from .stats import (
    BootstrapPlan,
    bootstrap,
    export_curve_csv,
    learning_curve,
    log_budgets,
)
from . import report

CONFIG_SCHEMA = 1


class ConfigError(ValueError):
    """Invalid or missing configuration field."""


def _require(cfg: dict, key: str, context: str = "config"):
    if key not in cfg:
        raise ConfigError(f"missing field {context}.{key}")
    return cfg[key]


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(
        json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    ).hexdigest()[:16]


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if cfg.get("schema") != CONFIG_SCHEMA:
        raise ConfigError("unsupported or missing field schema")
    return cfg


class Pipeline:
    """Everything derived from one validated config + seed."""

    def __init__(self, cfg: dict, seed=None):
        self.cfg = cfg
        self.hash = config_hash(cfg)
        self.seed = cfg.get("seed", 0) if seed is None else seed
        self.spec = self._build_model(_require(cfg, "model"))
        n = self.spec.n_sites
        proto = _require(cfg, "protocol")
        g = _require(proto, "grid", "protocol")
        self.grid = TimeGrid(_require(g, "total_time", "protocol.grid"),
                             _require(g, "n_steps", "protocol.grid"))
        self.states = self._build_states(_require(proto, "states", "protocol"), n)
        self.shots = int(_require(proto, "shots", "protocol"))
        self.windows = self._build_windows(proto.get("windows"))
        self.method = _require(cfg, "method")
        if self.method not in ("energy", "ehrenfest"):
            raise ConfigError("field method must be 'energy' or 'ehrenfest'")
        self.ansatz = self._build_ansatz(_require(cfg, "ansatz"), n)
        self.diss = self._build_dissipator(cfg.get("dissipator"), n)
        self.probes = self._build_ops(cfg.get("probes"), n)
        self.observables = self._build_ops(cfg.get("observables"), n)
        if self.method == "ehrenfest" and not self.observables:
            raise ConfigError("field observables required for method ehrenfest")
        self.parametrization = self._build_parametrization(
            cfg.get("parametrization"), n)
        self.solver_cfg = self._build_solver(cfg.get("solver", {}))
        self.bases = self._build_bases(proto.get("bases", "auto"), n)
        self.time_indices = proto.get("time_indices")

    # -- component builders ----------------------------------------------

    def _build_model(self, m: dict) -> ModelSpec:
        kind = _require(m, "type", "model")
        n = int(_require(m, "n", "model"))
        opts = {k: v for k, v in m.items() if k not in ("type", "n")}
        try:
            if kind == "ising":
                return ising_model(n, **opts)
            if kind == "xy":
                return xy_model(n, **opts)
            if kind == "subsystem":
                return subsystem_model(n, **opts)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid model options: {exc}") from exc
        raise ConfigError(f"unknown model.type {kind!r}")

    def _build_states(self, s: dict, n: int) -> list[ProductState]:
        kind = _require(s, "kind", "protocol.states")
        if kind == "haar":
            count = int(_require(s, "count", "protocol.states"))
            return [ProductState.haar_random(n, (self.seed, "state", i))
                    for i in range(count)]
        if kind == "all_up":
            return [ProductState.all_up(n)]
        raise ConfigError(f"unknown protocol.states.kind {kind!r}")

    def _build_windows(self, w) -> list[int] | None:
        if w is None:
            return None
        if isinstance(w, dict):
            every = int(_require(w, "every", "protocol.windows"))
            start = int(w.get("start", every))
            if every <= 0 or every % 2 or start % 2:
                raise ConfigError("protocol.windows.every/start must be positive even")
            return list(range(start, self.grid.n_steps + 1, every))
        if isinstance(w, list):
            return [int(x) for x in w]
        raise ConfigError("protocol.windows must be a list or {'every': k}")

    def _build_ansatz(self, name, n: int) -> Ansatz:
        if isinstance(name, dict):
            nb = int(_require(name, "n_blocks", "ansatz"))
            bs = int(_require(name, "block_size", "ansatz"))
            return subsystem_ansatz(nb, bs)
        try:
            return ansatz_library(name, n)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def _build_dissipator(self, name, n: int) -> DissipatorAnsatz:
        if name is None:
            return EMPTY_DISSIPATOR
        try:
            if isinstance(name, dict):
                return dissipator_library(_require(name, "name", "dissipator"), n,
                                          name.get("max_distance"))
            return dissipator_library(name, n)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def _build_ops(self, value, n: int) -> list[Operator]:
        if value is None:
            return []
        if isinstance(value, str):
            try:
                return probe_set(value, n)
            except ValueError as exc:
                raise ConfigError(str(exc)) from exc
        return [Operator.from_label(label) for label in value]

    def _build_parametrization(self, p, n: int) -> Parametrization | None:
        if p is None:
            return None
        kind = _require(p, "type", "parametrization")
        bounds = tuple(p.get("alpha_bounds", (0.0, 3.0)))
        if kind == "xy":
            positions = self.spec.params.get("positions")
            return xy_parametrization(
                n, bounds, None if positions is None else np.array(positions))
        if kind == "subsystem":
            return subsystem_parametrization(
                int(_require(p, "n_blocks", "parametrization")),
                int(_require(p, "block_size", "parametrization")), bounds)
        raise ConfigError(f"unknown parametrization.type {kind!r}")

    def _build_solver(self, s: dict) -> SolverConfig:
        try:
            return SolverConfig(
                xi=float(s.get("xi", 0.0)),
                beta=float(s.get("beta", 0.0)),
                d_max=np.asarray(s["d_max"], dtype=float) if "d_max" in s
                else 10.0 * max(list(self.spec.true_rates.values()) or [0.1]),
                direct_budget=s.get("direct_budget"),
                polish_budget=int(s.get("polish_budget", 400)),
                recheck=bool(s.get("recheck", True)),
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid solver options: {exc}") from exc

    def _build_bases(self, value, n: int) -> list[str]:
        if value == "auto":
            prims = required_primitives(self.ansatz, self.diss,
                                        self.observables, self.probes)
            return group_bases(prims)
        if isinstance(value, dict):
            count = int(_require(value, "random", "protocol.bases"))
            return random_bases(count, n, (self.seed, "bases"))
        if isinstance(value, list):
            for b in value:
                if len(b) != n or any(c not in "XYZ" for c in b):
                    raise ConfigError(f"invalid entry in protocol.bases: {b!r}")
            return list(value)
        raise ConfigError("protocol.bases must be 'auto', a list, or {'random': k}")

    # -- pipeline stages --------------------------------------------------

    def simulate(self) -> QuenchDataset:
        return simulate_dataset(self.spec.model, self.states, self.bases,
                                self.grid, self.shots, (self.seed, "shots"),
                                self.time_indices)

    def dataset(self, out: Path | None) -> QuenchDataset:
        """Load a hash-matching dataset from out/dataset.json, else simulate."""
        if out is not None:
            path = Path(out) / "dataset.json"
            if path.exists():
                payload = json.loads(path.read_text())
                if payload.get("config_hash") == self.hash:
                    return QuenchDataset.from_json(json.dumps(payload["dataset"]))
        return self.simulate()

    def source(self, out: Path | None, oracle: bool):
        if oracle:
            return ExactSource(self.spec.model, self.states, self.grid)
        return DatasetSource(self.dataset(out))

    def build_system(self, source):
        if self.method == "ehrenfest":
            sys = build_ehrenfest(source, self.ansatz, self.diss, self.observables)
            if self.probes:
                sys = sys.with_additional(
                    *build_additional(source, self.ansatz, self.diss, self.probes))
            return sys
        sys = build_energy(source, self.ansatz, self.diss,
                           window_indices=self.windows)
        if self.probes:
            sys = sys.with_additional(
                *build_additional(source, self.ansatz, self.diss, self.probes))
        return sys

    def solve(self, sys):
        if self.method == "ehrenfest":
            return solve_ehrenfest(sys, self.solver_cfg)
        if self.solver_cfg.beta > 0 and self.parametrization is not None:
            return solve_regularized(sys, self.parametrization.matrix(),
                                     self.solver_cfg)
        if self.probes and self.solver_cfg.xi > 0:
            return solve_with_additional(sys, self.solver_cfg, self.parametrization)
        return solve_energy(sys, self.solver_cfg, self.parametrization)

    def run_learning(self, source):
        return self.solve(self.build_system(source))

    def truth(self) -> tuple[np.ndarray, np.ndarray]:
        return (true_coefficients(self.spec, self.ansatz),
                true_rate_vector(self.spec, self.diss))


# -- subcommands ----------------------------------------------------------


def cmd_simulate(pipe: Pipeline, out: Path, args) -> int:
    ds = pipe.simulate()
    payload = {"config_hash": pipe.hash, "dataset": json.loads(ds.to_json())}
    (out / "dataset.json").write_text(json.dumps(payload))
    print(f"dataset.json written ({ds.n_runs} runs, {len(ds.settings)} settings)")
    return 0


def cmd_learn(pipe: Pipeline, out: Path, args) -> int:
    source = pipe.source(out, args.oracle)
    result = pipe.run_learning(source)
    c_true, d_true = pipe.truth()
    diagnostics = {}
    if c_true.size == result.c_rec.size:
        from .stats import relative_error, sin_theta

        diagnostics["sin_theta"] = sin_theta(result.c_rec, c_true)
        if result.scale is not None or pipe.method == "ehrenfest":
            diagnostics["delta_c"] = relative_error(result.c_rec, c_true)
    payload = json.loads(result.to_json(config={"hash": pipe.hash, **pipe.cfg}))
    payload["diagnostics"] = diagnostics
    (out / "result.json").write_text(json.dumps(payload, indent=2))
    print(f"result.json written (ratio {result.ratio:.3e}, "
          f"converged {result.converged})")
    return 0 if result.converged else 2


def cmd_curve(pipe: Pipeline, out: Path, args) -> int:
    curve_cfg = _require(pipe.cfg, "curve")
    if "budgets" in curve_cfg:
        budgets = [int(b) for b in curve_cfg["budgets"]]
    else:
        budgets = log_budgets(int(_require(curve_cfg, "lo", "curve")),
                              int(_require(curve_cfg, "hi", "curve")),
                              int(curve_cfg.get("per_decade", 8)))
    pipe.shots = max(budgets)
    ds = pipe.dataset(out)
    c_true, _ = pipe.truth()
    plan = (BootstrapPlan(int(curve_cfg["bootstrap"]), (pipe.seed, "boot"))
            if curve_cfg.get("bootstrap") else None)
    exact = (ExactSource(pipe.spec.model, pipe.states, pipe.grid)
             if curve_cfg.get("asymptote", True) else None)
    curve = learning_curve(
        ds, pipe.build_system, pipe.solve, budgets,
        label=str(pipe.cfg.get("ansatz")),
        c_true=c_true if c_true.size == pipe.ansatz.n_parameters else None,
        exact_source=exact, bootstrap_plan=plan)
    csv_path = out / "curve.csv"
    export_curve_csv(curve, csv_path)
    _prepend_hash(csv_path, pipe.hash)
    report.plot_learning_curves([curve], out / "curve.png",
                                title=pipe.cfg.get("name", ""))
    print(f"curve.csv and curve.png written ({len(curve.points)} points)")
    return 0


def cmd_bootstrap(pipe: Pipeline, out: Path, args) -> int:
    boot_cfg = pipe.cfg.get("bootstrap", {})
    plan = BootstrapPlan(int(boot_cfg.get("n_resamples", 40)),
                         (pipe.seed, "boot"))
    source = DatasetSource(pipe.dataset(out))
    result = pipe.run_learning(source)
    names = result.family_names + result.rate_names
    statistic = lambda s: np.concatenate([
        (r := pipe.run_learning(s)).c_rec, r.d_rec])
    boot = bootstrap(source, statistic, plan, workers=args.workers)
    values = np.concatenate([result.c_rec, result.d_rec])
    lines = [f"# config_hash={pipe.hash}", "name,value,std,lower,upper"]
    for i, name in enumerate(names):
        lines.append(f"{name},{float(values[i])!r},{float(boot.std[i])!r},"
                     f"{float(boot.lower[i])!r},{float(boot.upper[i])!r}")
    (out / "bootstrap.csv").write_text("\n".join(lines) + "\n")
    c_true, d_true = pipe.truth()
    truth = np.concatenate([c_true, d_true]) if c_true.size == result.c_rec.size \
        else None
    report.plot_bootstrap_table(names, values, boot.std, truth,
                                out / "bootstrap.png",
                                title=pipe.cfg.get("name", ""))
    print(f"bootstrap.csv and bootstrap.png written ({plan.n_resamples} resamples)")
    return 0 if result.converged else 2


def cmd_sweep_beta(pipe: Pipeline, out: Path, args) -> int:
    sweep = _require(pipe.cfg, "beta_sweep")
    if isinstance(sweep, list):
        betas = [float(b) for b in sweep]
    else:
        betas = list(np.geomspace(float(_require(sweep, "lo", "beta_sweep")),
                                  float(_require(sweep, "hi", "beta_sweep")),
                                  int(sweep.get("points", 13))))
    if pipe.parametrization is None:
        raise ConfigError("sweep-beta requires a parametrization")
    source = pipe.source(out, args.oracle)
    sys = pipe.build_system(source)
    g = pipe.parametrization.matrix(
        [pipe.cfg.get("parametrization", {}).get("alpha", 1.5)]
        if pipe.parametrization.n_alpha else ())
    spectra, lambda_cs = [], []
    converged = True
    for beta in betas:
        cfg_b = SolverConfig(
            xi=pipe.solver_cfg.xi, beta=float(beta), d_max=pipe.solver_cfg.d_max,
            direct_budget=pipe.solver_cfg.direct_budget,
            polish_budget=pipe.solver_cfg.polish_budget,
            recheck=pipe.solver_cfg.recheck)
        res = solve_regularized(sys, g, cfg_b)
        spectra.append(res.spectrum)
        lambda_cs.append(res.lambda_c)
        converged = converged and res.converged
    spectra = np.array(spectra)
    header = ",".join(f"lambda_{j + 1}" for j in range(spectra.shape[1]))
    lines = [f"# config_hash={pipe.hash}", f"beta,{header},lambda_c"]
    for beta, spec_row, lc in zip(betas, spectra, lambda_cs):
        row = ",".join(repr(float(v)) for v in spec_row)
        lines.append(f"{float(beta)!r},{row},{float(lc)!r}")
    (out / "beta_sweep.csv").write_text("\n".join(lines) + "\n")
    report.plot_beta_sweep(np.array(betas), spectra, np.array(lambda_cs),
                           out / "beta_sweep.png", title=pipe.cfg.get("name", ""))
    print(f"beta_sweep.csv and beta_sweep.png written ({len(betas)} points)")
    return 0 if converged else 2


def _prepend_hash(path: Path, h: str) -> None:
    path.write_text(f"# config_hash={h}\n" + path.read_text())


COMMANDS = {
    "simulate": cmd_simulate,
    "learn": cmd_learn,
    "curve": cmd_curve,
    "bootstrap": cmd_bootstrap,
    "sweep-beta": cmd_sweep_beta,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="quenchlearn",
        description="Simulate weakly dissipative quench experiments and "
                    "learn the Hamiltonian and Liouvillian from them.")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, help="JSON config file")
    parser.add_argument("--out", default=".", help="output directory")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the config seed")
    parser.add_argument("--workers", type=int, default=None,
                        help="worker threads for bootstrap resamples")
    parser.add_argument("--oracle", action="store_true",
                        help="use exact expectations instead of shots")
    args = parser.parse_args(argv)
    if args.workers is None:
        import os

        args.workers = os.cpu_count() or 1
    try:
        cfg = load_config(args.config)
        pipe = Pipeline(cfg, args.seed)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](pipe, out, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
