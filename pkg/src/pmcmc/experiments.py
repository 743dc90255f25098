"""Experiment configuration, run manifests and the batch study commands.

Config files are INI.  The ``[experiment]`` section holds shared settings and
each ``[algorithm:<tag>]`` section adds one algorithm, where ``<tag>`` is
``variant[:kernel]`` (e.g. ``mcmc-fa-apf:ar``, ``ehmm:rw``, ``idealized-mh``)::

    [experiment]
    d = 2, 10, 25
    T = 10
    replications = 200
    seed = 1

    [algorithm:pf]
    N = 1000

    [algorithm:mcmc-fa-apf:ar]
    N = 1000
    sweeps = 1

Every output file is a function of the config and the master seed only; the
manifest additionally records wall-clock times.
"""

from __future__ import annotations

import configparser
import hashlib
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .diagnostics import kde, mean_acf, write_acf, write_ess, write_kde
from .ehmm import POOL_KERNELS
from .mcmc_filters import PROPOSALS, KernelSpec
from .model import THETA_NAMES, ModelDims, Theta, kalman_loglik, simulate
from .samplers import SamplerConfig, run_chain
from .validation import estimate, lag_acf
from .variants import ALL_ALGORITHMS, EHMM, VARIANTS

COMMANDS = ("simulate", "loglik-variance", "pmmh", "pg-states", "pg-params")
IDEALIZED = ("idealized-mh", "idealized-gibbs")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class AlgorithmSpec:
    """One algorithm of a study: a filter variant (or idealized sampler) plus its kernel settings."""

    tag: str
    variant: str
    kernel: str | None = None
    N: int | None = None
    sweeps: int = 1
    index_mode: str | None = None

    @classmethod
    def parse(cls, tag: str, options: dict | None = None) -> "AlgorithmSpec":
        options = dict(options or {})
        variant, _, kernel = tag.partition(":")
        kernel = kernel or None
        if variant in IDEALIZED:
            if kernel:
                raise ConfigError(f"{variant} takes no kernel")
        elif variant in VARIANTS:
            if kernel is not None and (not VARIANTS[variant].mcmc or kernel not in PROPOSALS):
                raise ConfigError(f"kernel {kernel!r} not valid for {variant}")
            if VARIANTS[variant].mcmc and kernel is None:
                kernel = "rw"
        elif variant == EHMM:
            kernel = kernel or "independence"
            if kernel not in POOL_KERNELS:
                raise ConfigError(f"pool kernel must be one of {POOL_KERNELS}")
        else:
            raise ConfigError(f"unknown algorithm {variant!r}; expected one of {ALL_ALGORITHMS + IDEALIZED}")
        try:
            spec = cls(
                tag=tag,
                variant=variant,
                kernel=kernel,
                N=int(options.pop("n")) if "n" in options else None,
                sweeps=int(options.pop("sweeps", 1)),
                index_mode=options.pop("index_mode", None),
            )
        except ValueError as e:
            raise ConfigError(f"[algorithm:{tag}]: {e}") from None
        if options:
            raise ConfigError(f"[algorithm:{tag}]: unknown keys {sorted(options)}")
        if spec.N is not None and spec.N < 1:
            raise ConfigError(f"[algorithm:{tag}]: N must be positive")
        if spec.sweeps < 1:
            raise ConfigError(f"[algorithm:{tag}]: sweeps must be positive")
        if spec.index_mode not in (None, "bs", "as"):
            raise ConfigError(f"[algorithm:{tag}]: index_mode must be bs or as")
        return spec

    @property
    def slug(self) -> str:
        return self.tag.replace(":", "_")

    def particles(self, default: int) -> int:
        return self.N if self.N is not None else default

    def kernel_spec(self) -> KernelSpec:
        return KernelSpec(self.kernel if self.kernel in PROPOSALS else "rw", sweeps=self.sweeps)


# study settings clipped to desk scale
DEFAULTS = {
    "simulate": dict(d=(2,), T=10, replications=1, algorithms=()),
    "loglik-variance": dict(d=(2, 5, 10, 25), T=10, replications=200, algorithms=("pf", "fa-apf", "mcmc-pf", "mcmc-fa-apf", "ehmm")),
    "pmmh": dict(d=(25,), T=10, replications=4, iterations=10_000, N=1000,
                 algorithms=("pf", "fa-apf", "mcmc-pf:rw", "mcmc-pf:ar", "mcmc-fa-apf:rw", "mcmc-fa-apf:ar")),
    "pg-states": dict(d=(25,), T=10, replications=3, iterations=10_000, N=100, theta_moves=0,
                      algorithms=("pf", "fa-apf", "mcmc-pf:rw", "mcmc-pf:ar", "mcmc-fa-apf:rw", "mcmc-fa-apf:ar")),
    "pg-params": dict(d=(25,), T=10, replications=2, iterations=10_000, N=100, theta_moves=100,
                      algorithms=("pf", "fa-apf", "mcmc-pf:rw", "mcmc-pf:ar", "mcmc-fa-apf:rw", "mcmc-fa-apf:ar", "idealized-gibbs")),
}

# O(N^2) methods get fewer particles by default in the variance study
EHMM_DEFAULT_N = 100


@dataclass
class ExperimentConfig:
    command: str
    d: tuple = (2,)
    T: int = 10
    theta: Theta = field(default_factory=Theta.true_values)
    replications: int = 1
    seed: int = 1
    output: str = "results"
    iterations: int = 1000
    burn_in: float = 0.1
    N: int = 1000
    theta_moves: int = 100
    rw_scale: float | None = None
    index_mode: str = "as"
    max_lag: int = 100
    kde_points: int = 200
    algorithms: tuple = ()

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}; expected one of {COMMANDS}")
        self.d = tuple(int(v) for v in self.d)
        if not self.d or min(self.d) < 1 or self.T < 1:
            raise ConfigError("d and T must be positive")
        if self.replications < 1 or self.iterations < 1 or self.N < 1:
            raise ConfigError("replications, iterations and N must be positive")
        if not 0 <= self.burn_in < 1:
            raise ConfigError("burn_in must lie in [0, 1)")
        if self.index_mode not in ("bs", "as"):
            raise ConfigError("index_mode must be bs or as")
        if self.command in ("pmmh", "pg-states", "pg-params") and len(self.d) != 1:
            raise ConfigError(f"{self.command} runs one state dimension at a time")
        if self.max_lag < 1 or self.kde_points < 2:
            raise ConfigError("max_lag and kde_points must be positive")
        specs = []
        for a in self.algorithms:
            spec = a if isinstance(a, AlgorithmSpec) else AlgorithmSpec.parse(a)
            if self.command == "loglik-variance" and spec.variant in IDEALIZED:
                raise ConfigError("idealized samplers have no likelihood estimate to study")
            if self.command == "pmmh" and spec.variant == "idealized-gibbs":
                raise ConfigError("pmmh studies take idealized-mh, not idealized-gibbs")
            if self.command.startswith("pg") and spec.variant == "idealized-mh":
                raise ConfigError("Gibbs studies take idealized-gibbs, not idealized-mh")
            specs.append(spec)
        if len({s.tag for s in specs}) != len(specs):
            raise ConfigError("duplicate algorithm tags")
        self.algorithms = tuple(specs)

    @classmethod
    def default(cls, command: str, **overrides) -> "ExperimentConfig":
        if command not in DEFAULTS:
            raise ConfigError(f"unknown command {command!r}; expected one of {COMMANDS}")
        kw = dict(DEFAULTS[command])
        kw.update({k: v for k, v in overrides.items() if v is not None})
        return cls(command=command, **kw)

    @classmethod
    def from_file(cls, path, command: str, **overrides) -> "ExperimentConfig":
        parser = configparser.ConfigParser()
        try:
            if not parser.read(path):
                raise ConfigError(f"cannot read config file {path}")
        except configparser.Error as e:
            raise ConfigError(str(e)) from None
        kw = {}
        if parser.has_section("experiment"):
            kw = _parse_experiment(dict(parser["experiment"]))
        algs = [AlgorithmSpec.parse(s.split(":", 1)[1], dict(parser[s])) for s in parser.sections() if s.startswith("algorithm:")]
        unknown = [s for s in parser.sections() if s != "experiment" and not s.startswith("algorithm:")]
        if unknown:
            raise ConfigError(f"unknown sections {unknown}")
        if algs:
            kw["algorithms"] = tuple(algs)
        kw.update({k: v for k, v in overrides.items() if v is not None})
        return cls.default(command, **kw)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["theta"] = dict(zip(THETA_NAMES, self.theta.to_array().tolist()))
        out["algorithms"] = [asdict(a) for a in self.algorithms]
        out["d"] = list(self.d)
        return out

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()

    def check(self):
        """Build every per-algorithm sampler config so invalid combinations fail before any run."""
        for spec in self.algorithms:
            if self.command in ("pmmh", "pg-states", "pg-params"):
                cfg = self.sampler_config(spec, 0)
                if cfg.algorithm == "pg" and cfg.N < 2:
                    raise ConfigError(f"{spec.tag}: particle Gibbs needs N >= 2")

    def sampler_config(self, spec: AlgorithmSpec, seed: int) -> SamplerConfig:
        if spec.variant in IDEALIZED:
            algorithm = spec.variant
        else:
            algorithm = "pmmh" if self.command == "pmmh" else "pg"
        return SamplerConfig(
            algorithm=algorithm,
            variant=spec.variant if spec.variant in ALL_ALGORITHMS else "pf",
            N=spec.particles(self.N),
            iterations=self.iterations,
            burn_in=self.burn_in,
            theta_moves=self.theta_moves,
            rw_scale=self.rw_scale,
            kernel=spec.kernel_spec(),
            index_mode=spec.index_mode or self.index_mode,
            ehmm_kernel=spec.kernel if spec.variant == EHMM else "independence",
            seed=seed,
        )


_INT_KEYS = ("t", "replications", "seed", "iterations", "n", "theta_moves", "max_lag", "kde_points")
_FLOAT_KEYS = ("burn_in", "rw_scale")


def _parse_experiment(raw: dict) -> dict:
    kw = {}
    try:
        for key, value in raw.items():
            if key == "d":
                kw["d"] = tuple(int(v) for v in value.split(","))
            elif key == "theta":
                kw["theta"] = Theta.from_array([float(v) for v in value.split(",")])
            elif key in _INT_KEYS:
                kw[{"t": "T", "n": "N"}.get(key, key)] = int(value)
            elif key in _FLOAT_KEYS:
                kw[key] = float(value)
            elif key in ("output", "index_mode"):
                kw[key] = value.strip()
            else:
                raise ConfigError(f"[experiment]: unknown key {key!r}")
    except ValueError as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(f"[experiment]: {e}") from None
    return kw


def derive_seed(master: int, *key: int) -> int:
    """Deterministic per-run seed from the master seed and a run key."""
    return int(np.random.SeedSequence(master, spawn_key=tuple(key)).generate_state(1)[0])


# -- manifest ---------------------------------------------------------------------


@dataclass
class RunManifest:
    """Written before any result file and completed afterwards; ``status`` exposes partial runs."""

    command: str
    config: dict
    config_hash: str
    version: str
    seeds: dict = field(default_factory=dict)
    seconds: dict = field(default_factory=dict)
    status: str = "running"

    def write(self, out: Path) -> Path:
        path = out / "manifest.json"
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")
        return path


def _prepare(config: ExperimentConfig, out) -> tuple[Path, RunManifest]:
    out = Path(out or config.output)
    try:
        out.mkdir(parents=True, exist_ok=True)
        manifest = RunManifest(config.command, config.to_dict(), config.digest(), __version__)
        manifest.write(out)
    except OSError as e:
        raise ConfigError(f"cannot write to output directory {out}: {e}") from None
    return out, manifest


def _map(fn, tasks, workers: int):
    """Ordered map, in-process for one worker."""
    if workers <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks))


def _write_json(path: Path, obj) -> Path:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    return path


def _write_rows(path: Path, header, rows) -> Path:
    with path.open("w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(v if isinstance(v, str) else str(v) if isinstance(v, (int, np.integer)) else repr(float(v)) for v in row) + "\n")
    return path


# -- commands ---------------------------------------------------------------------


def cmd_simulate(config: ExperimentConfig, out=None, workers: int = 1) -> Path:
    out, manifest = _prepare(config, out)
    for d in config.d:
        start = time.perf_counter()
        data = simulate(config.theta, ModelDims(d=d, T=config.T), config.seed)
        data.to_csv(out / f"data_d{d}.csv")
        manifest.seeds[f"d{d}"] = config.seed
        manifest.seconds[f"d{d}"] = time.perf_counter() - start
    manifest.status = "complete"
    manifest.write(out)
    return out


def _variance_task(args):
    config, k, d = args
    spec = config.algorithms[k]
    dims = ModelDims(d=d, T=config.T)
    N = spec.particles(EHMM_DEFAULT_N if spec.variant == EHMM else config.N)
    rows, seeds, seconds = [], [], []
    for r in range(config.replications):
        start = time.perf_counter()
        y = simulate(config.theta, dims, config.seed, (d, r)).y
        seed = derive_seed(config.seed, 1, k, d, r)
        ll = estimate(spec.variant, config.theta, dims, y, N, np.random.default_rng(seed), spec.kernel)
        exact = kalman_loglik(config.theta, dims, y)
        rows.append((d, r + 1, spec.tag, N, ll, exact, ll - exact))
        seeds.append(seed)
        seconds.append(time.perf_counter() - start)
    return rows, seeds, seconds


def cmd_loglik_variance(config: ExperimentConfig, out=None, workers: int = 1) -> Path:
    """Relative log-likelihood estimates with a fresh data set per run; ``rel = loglik - kalman_loglik``."""
    out, manifest = _prepare(config, out)
    tasks = [(config, k, d) for d in config.d for k in range(len(config.algorithms))]
    results = _map(_variance_task, tasks, workers)
    rows, summary = [], []
    for (_, k, d), (r, seeds, secs) in zip(tasks, results):
        tag = config.algorithms[k].tag
        rows += r
        rel = np.array([row[-1] for row in r])
        var = float(np.var(rel, ddof=1)) if len(rel) > 1 else float("nan")
        summary.append((tag, d, r[0][3], len(rel), float(rel.mean()), var))
        manifest.seeds[f"{tag}/d{d}"] = seeds
        manifest.seconds[f"{tag}/d{d}"] = secs
    _write_rows(out / "loglik_variance.csv", ["d", "run", "algorithm", "N", "loglik", "kalman_loglik", "rel"], rows)
    _write_rows(out / "variance_summary.csv", ["algorithm", "d", "N", "runs", "mean_rel", "var_rel"], summary)
    _write_json(out / "summary.json", {f"{s[0]}/d{s[1]}": {"N": s[2], "runs": s[3], "mean_rel": s[4], "var_rel": s[5]} for s in summary})
    manifest.status = "complete"
    manifest.write(out)
    return out


def _chain_task(args):
    config, k, r = args
    spec = config.algorithms[k]
    seed = derive_seed(config.seed, 2, k, r)
    dims = ModelDims(d=config.d[0], T=config.T)
    y = simulate(config.theta, dims, config.seed).y
    start = time.perf_counter()
    trace = run_chain(config.sampler_config(spec, seed), dims, y, theta0=config.theta)
    return trace, seed, time.perf_counter() - start


def _kde_file(path, samples, points):
    lo, hi = float(np.min(samples)), float(np.max(samples))
    pad = 0.1 * (hi - lo) if hi > lo else 1.0
    grid = np.linspace(lo - pad, hi + pad, points)
    return write_kde(path, grid, kde(samples, grid))


def _acf_file(path, runs, max_lag):
    """ACF averaged over runs; a run that never moves counts as fully correlated."""
    lag = min(max_lag, min(len(r) for r in runs) - 1)
    per_run = [np.ones(lag + 1) if np.all(r == r[0]) else mean_acf([r], lag) for r in runs]
    return write_acf(path, np.mean(per_run, axis=0))


def _chain_study(config: ExperimentConfig, out, workers: int, params: bool) -> Path:
    out, manifest = _prepare(config, out)
    tasks = [(config, k, r) for k in range(len(config.algorithms)) for r in range(config.replications)]
    results = _map(_chain_task, tasks, workers)
    summary = {}
    for k, spec in enumerate(config.algorithms):
        mine = [(r, res) for (_, kk, r), res in zip(tasks, results) if kk == k]
        traces = [res[0] for _, res in mine]
        manifest.seeds[spec.tag] = [res[1] for _, res in mine]
        manifest.seconds[spec.tag] = [res[2] for _, res in mine]
        for r, tr in enumerate(traces):
            tr.to_csv(out / f"trace_{spec.slug}_run{r + 1}.csv")
        post = [tr.post_burn_in() for tr in traces]
        info = {"acceptance": float(np.mean([tr.acceptance_rate() for tr in traces]))}
        if params:
            pooled = np.concatenate(post)
            info["mean"] = dict(zip(THETA_NAMES, pooled.mean(axis=0).tolist()))
            info["sd"] = dict(zip(THETA_NAMES, pooled.std(axis=0, ddof=1).tolist()))
            for j, name in enumerate(THETA_NAMES):
                _acf_file(out / f"acf_{spec.slug}_{name}.csv", [p[:, j] for p in post], config.max_lag)
            _kde_file(out / f"kde_{spec.slug}_a0.csv", pooled[:, 0], config.kde_points)
        if config.command != "pmmh":
            x1 = [tr.first_state[tr.n_burn:] for tr in traces]
            for r, tr in enumerate(traces):
                _write_rows(out / f"state_{spec.slug}_run{r + 1}.csv", ["iter", "x"], ((m + 1, v) for m, v in enumerate(tr.first_state)))
            _acf_file(out / f"acf_{spec.slug}_x1.csv", x1, config.max_lag)
            _kde_file(out / f"kde_{spec.slug}_x1.csv", np.concatenate(x1), config.kde_points)
            info["lag10_acf_x1"] = float(np.mean([lag_acf(v, 10) for v in x1])) if min(len(v) for v in x1) > 10 else None
            ess = [tr.mean_ess() for tr in traces]
            if ess[0] is not None:
                write_ess(out / f"ess_{spec.slug}.csv", np.mean(ess, axis=0))
                rates = np.mean([tr.move_rates() for tr in traces], axis=0)
                _write_rows(out / f"acceptance_{spec.slug}.csv", ["t", "acceptance"], ((t + 1, v) for t, v in enumerate(rates)))
                info["mean_ess"] = np.mean(ess, axis=0).tolist()
                info["move_acceptance"] = rates.tolist()
        summary[spec.tag] = info
    _write_json(out / "summary.json", summary)
    manifest.status = "complete"
    manifest.write(out)
    return out


def cmd_pmmh(config: ExperimentConfig, out=None, workers: int = 1) -> Path:
    """Parameter traces, run-averaged ACFs and KDEs of ``a0`` for MH samplers."""
    return _chain_study(config, out, workers, params=True)


def cmd_pg_states(config: ExperimentConfig, out=None, workers: int = 1) -> Path:
    """Gibbs samplers with theta held at its configured value: state traces, ESS and move acceptance per step."""
    return _chain_study(replace(config, theta_moves=0), out, workers, params=False)


def cmd_pg_params(config: ExperimentConfig, out=None, workers: int = 1) -> Path:
    """Gibbs samplers with theta updates: state and parameter outputs."""
    return _chain_study(config, out, workers, params=True)


RUNNERS = {
    "simulate": cmd_simulate,
    "loglik-variance": cmd_loglik_variance,
    "pmmh": cmd_pmmh,
    "pg-states": cmd_pg_states,
    "pg-params": cmd_pg_params,
}
