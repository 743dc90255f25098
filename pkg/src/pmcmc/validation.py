"""Oracle-based validation suites.

Each suite returns a :class:`SuiteResult` with a pass flag, a one-line
summary and per-check details.  Sizes are arguments so the same code runs at
full acceptance scale (tests/test_acceptance.py) and at a quick desk scale
(``pmcmc validate``).
"""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .conditional import (
    RetainedPath,
    ancestor_probabilities,
    backward_sample,
    conditional_filter,
    generic_index_log_weights,
    refresh_path,
)
from .diagnostics import acf, batch_means_se
from .ehmm import (
    conditional_pool_log_density,
    discrete_mh_kernel,
    discretize_stationary,
    ehmm_gibbs_step,
    ehmm_loglik,
    generate_pool,
    hmm_forward,
    path_log_density,
    reversal_kernel,
    sample_path,
)
from .filters import apf, bootstrap_pf, faapf
from .mcmc_filters import KernelSpec, mcmc_apf, mcmc_faapf, mcmc_pf
from .model import THETA_NAMES, LinearGaussianSSM, ModelDims, Theta, kalman, kalman_loglik, simulate
from .resampling import make_rng, multinomial_resample, normalize
from .samplers import SamplerConfig, run_chain
from .variants import ALL_ALGORITHMS, EHMM, VARIANTS, get_variant

TRUE = Theta.true_values()


@dataclass
class SuiteResult:
    name: str
    passed: bool
    summary: str
    details: list = field(default_factory=list)
    seconds: float = 0.0

    def line(self) -> str:
        return f"{self.name}: {'PASS' if self.passed else 'FAIL'} ({self.seconds:.1f}s) {self.summary}"


def _timed(fn):
    def wrapper(*args, **kwargs):
        start = time.perf_counter()
        res = fn(*args, **kwargs)
        res.seconds = time.perf_counter() - start
        return res

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


def estimate(algorithm: str, theta: Theta, dims: ModelDims, y, N: int, rng, kernel: str | None = None) -> float:
    """One log-likelihood estimate from any registered algorithm (``kernel`` selects the MH/pool kernel)."""
    if algorithm == EHMM:
        return ehmm_loglik(theta, dims, y, N, rng, kernel or "independence").loglik
    v = get_variant(algorithm)
    spec = KernelSpec(kernel or "rw") if v.mcmc else None
    system, _ = v.run(LinearGaussianSSM(theta, dims), y, N, rng, spec)
    return system.loglik


# -- 1. unbiasedness --------------------------------------------------------------


@_timed
def unbiasedness_suite(reps: int = 10_000, Ns=(10, 100), d: int = 1, T: int = 5, seed: int = 2024, n_se: float = 3.0) -> SuiteResult:
    """Mean of ``exp(log p^ - log p)`` within ``n_se`` standard errors of one, for every algorithm."""
    dims = ModelDims(d=d, T=T)
    y = simulate(TRUE, dims, seed).y
    exact = kalman_loglik(TRUE, dims, y)
    details, ok = [], True
    for k, alg in enumerate(ALL_ALGORITHMS):
        for N in Ns:
            ll = np.array([estimate(alg, TRUE, dims, y, N, make_rng(seed, 1, k, N, r)) for r in range(reps)])
            ratio = np.exp(ll - exact)
            mean, se = ratio.mean(), ratio.std(ddof=1) / math.sqrt(reps)
            good = abs(mean - 1) <= n_se * se
            ok &= good
            details.append(f"{alg} N={N}: {mean:.4f} +- {se:.4f} {'ok' if good else 'FAIL'}")
    return SuiteResult("unbiasedness", ok, f"{len(details)} estimator/N pairs within {n_se:g} SE", details)


# -- 2. enumeration ---------------------------------------------------------------


def _generic_backward_law(system, family):
    T, N = system.T, system.N
    wT = normalize(system.logw[-1])[0]
    law = {}
    for b in itertools.product(range(N), repeat=T):
        pr = wT[b[-1]]
        for t in range(T - 2, -1, -1):
            future = system.x[np.arange(t + 1, T), list(b[t + 1:])]
            pr *= normalize(generic_index_log_weights(system, family, t, future))[0][b[t]]
        law[b] = pr
    return law


def _empirical(draws):
    keys, counts = np.unique(draws, axis=0, return_counts=True)
    return {tuple(int(v) for v in k): c / len(draws) for k, c in zip(keys, counts)}


@_timed
def enumeration_suite(draws: int = 1_000_000, seed: int = 7, tol_prob: float = 0.005, tol_exact: float = 1e-10) -> SuiteResult:
    """Embedded-HMM forward sum, backward/ancestor laws and generic-vs-specialised index weights."""
    details, ok = [], True
    dims = ModelDims(d=1, T=3)
    y = simulate(TRUE, dims, seed).y
    model = LinearGaussianSSM(TRUE, dims)

    # embedded HMM forward recursion against the N^T path sum
    for kernel in ("independence", "rw"):
        pool = generate_pool(TRUE, dims, 3, make_rng(seed, 1), kernel)
        lp = np.array([path_log_density(pool, TRUE, y, b) for b in itertools.product(range(3), repeat=3)])
        exact = np.logaddexp.reduce(lp) - 3 * math.log(3)
        rel = abs(hmm_forward(pool, TRUE, y).loglik - exact) / abs(exact)
        good = rel < tol_exact
        ok &= good
        details.append(f"ehmm forward ({kernel}) rel err {rel:.2e}")
        cache = hmm_forward(pool, TRUE, y)
        law = dict(zip(itertools.product(range(3), repeat=3), np.exp(lp - np.logaddexp.reduce(lp))))
        emp = _empirical(sample_path(cache, make_rng(seed, 2), size=draws))
        err = max(abs(emp.get(b, 0.0) - p) for b, p in law.items())
        good = err < tol_prob
        ok &= good
        details.append(f"ehmm path law ({kernel}) max err {err:.4f}")

    # particle backward / ancestor laws against lineage-based enumeration
    spec = KernelSpec("rw")
    for k, name in enumerate(VARIANTS):
        for N in (2, 3):
            v = get_variant(name)
            system, _ = v.run(model, y, N, make_rng(seed, 3, k, N), spec)
            fam = v.family(model, y)
            law = _generic_backward_law(system, fam)
            emp = _empirical(backward_sample(system, model, make_rng(seed, 4, k, N), size=draws))
            err_bs = max(abs(emp.get(b, 0.0) - p) for b, p in law.items())
            future = simulate(TRUE, dims, seed + 1 + N).x_true
            err_as, err_w = 0.0, 0.0
            for t in (1, 2):
                exact = normalize(generic_index_log_weights(system, fam, t - 1, future[t:]))[0]
                spec_p = ancestor_probabilities(system, t, future[t], model)
                err_w = max(err_w, float(np.max(np.abs(spec_p - exact))))
                a = multinomial_resample(spec_p, draws, make_rng(seed, 5, k, N, t))
                err_as = max(err_as, float(np.max(np.abs(np.bincount(a, minlength=N) / draws - exact))))
            good = err_bs < tol_prob and err_as < tol_prob and err_w < tol_exact
            ok &= good
            details.append(f"{name} N={N}: BS {err_bs:.4f}, AS {err_as:.4f}, weights {err_w:.1e}")
    return SuiteResult("enumeration", ok, "forward sums, BS/AS laws and index weights match enumeration", details)


# -- 3. invariance ----------------------------------------------------------------


def _moment_check(out, mean, var, n_se):
    reps = out.shape[0]
    z_mean = np.abs(out.mean(axis=0) - mean) / np.sqrt(var / reps)
    # standard error of the sample variance from the sample fourth moment
    c = out - out.mean(axis=0)
    se_var = np.sqrt(np.maximum(np.mean(c**4, axis=0) - np.var(out, axis=0) ** 2, 0.0) / reps)
    z_var = np.abs(out.var(axis=0, ddof=1) - var) / se_var
    return bool(np.all(z_mean < n_se) and np.all(z_var < n_se)), float(z_mean.max()), float(z_var.max())


@_timed
def invariance_suite(reps: int = 10_000, N: int = 5, seed: int = 11, n_se: float = 4.0, kernel: str = "rw") -> SuiteResult:
    """One conditional sweep from an exact smoother draw keeps per-time posterior mean and variance."""
    dims = ModelDims(d=1, T=3)
    y = simulate(TRUE, dims, seed).y
    k = kalman(TRUE, dims, y)
    mean, var = k.smoother_means[:, 0], k.smoother_covs[:, 0, 0]
    model = LinearGaussianSSM(TRUE, dims)
    spec = KernelSpec(kernel)
    details, ok = [], True
    configs = [(name, mode) for name in VARIANTS for mode in ("bs", "as")] + [(EHMM, "independence"), (EHMM, "rw")]
    for c, (name, mode) in enumerate(configs):
        starts = k.sample_paths(make_rng(seed, 1, c), reps)
        out = np.empty((reps, dims.T))
        for r in range(reps):
            rng = make_rng(seed, 2, c, r)
            if name == EHMM:
                out[r] = ehmm_gibbs_step(starts[r], TRUE, dims, y, N, rng, mode)[:, 0]
                continue
            b = rng.integers(0, N, size=dims.T)
            system, _ = conditional_filter(name, RetainedPath(starts[r], b), TRUE, dims, y, N, rng, spec=spec, index_mode=mode)
            out[r] = system.path(refresh_path(system, model, rng, mode))[:, 0]
        good, zm, zv = _moment_check(out, mean, var, n_se)
        ok &= good
        details.append(f"{name} {mode}: max |z| mean {zm:.2f}, var {zv:.2f} {'ok' if good else 'FAIL'}")
    return SuiteResult("invariance", ok, f"{len(configs)} sweeps preserve smoother moments within {n_se:g} SE", details)


# -- 4. posterior agreement -------------------------------------------------------


def chain_moments(samples, n_batches: int = 50):
    """Posterior mean and sd per coordinate with batch-means standard errors."""
    samples = np.asarray(samples)
    mean = samples.mean(axis=0)
    sd = samples.std(axis=0, ddof=1)
    se_mean = np.array([batch_means_se(samples[:, k], n_batches) for k in range(samples.shape[1])])
    se_var = np.array([batch_means_se((samples[:, k] - mean[k]) ** 2, n_batches) for k in range(samples.shape[1])])
    return mean, sd, se_mean, se_var / (2 * sd)


def compare_moments(a, b, n_se: float = 4.0):
    """``(ok, max_z)`` for agreement of two chains' means and sds."""
    ma, sa, sema, sesa = a
    mb, sb, semb, sesb = b
    z_mean = np.abs(ma - mb) / np.hypot(sema, semb)
    z_sd = np.abs(sa - sb) / np.hypot(sesa, sesb)
    z = max(float(z_mean.max()), float(z_sd.max()))
    return z < n_se, z


POSTERIOR_PG_MODES = {"pf": "bs", "fa-apf": "as", "apf": "bs", "mcmc-pf": "as", "mcmc-fa-apf": "bs", "mcmc-apf": "as"}


@_timed
def posterior_suite(
    iterations: int = 200_000,
    N: int = 100,
    rw_sd: float = 0.15,
    seed: int = 5,
    n_se: float = 4.0,
    reference_factor: int = 5,
    theta_moves: int = 100,
    algorithms=None,
) -> SuiteResult:
    """PMMH with every estimator and PG with every conditional filter against the exact-likelihood chains.

    ``iterations`` counts post-burn-in draws; a further 10% is discarded as burn-in.
    """
    dims = ModelDims(d=1, T=5)
    y = simulate(TRUE, dims, seed).y
    n_burn = iterations // 10
    total = iterations + n_burn
    burn = n_burn / total

    def moments(cfg):
        return chain_moments(run_chain(cfg, dims, y).post_burn_in())

    common = dict(rw_scale=rw_sd**2, burn_in=burn, seed=seed, theta_moves=theta_moves)
    ref_mh = moments(SamplerConfig(algorithm="idealized-mh", iterations=reference_factor * total, **common))
    ref_gibbs = moments(SamplerConfig(algorithm="idealized-gibbs", iterations=total, **{**common, "seed": seed + 1}))
    details, ok = [], True
    good, z = compare_moments(ref_mh, ref_gibbs, n_se)
    ok &= good
    details.append(f"idealized MH vs Gibbs: max |z| {z:.2f}")
    algorithms = algorithms or [("pmmh", a) for a in ALL_ALGORITHMS] + [("pg", a) for a in ALL_ALGORITHMS]
    for c, (alg, variant) in enumerate(algorithms):
        mode = POSTERIOR_PG_MODES.get(variant, "bs")
        cfg = SamplerConfig(algorithm=alg, variant=variant, N=N, iterations=total, index_mode=mode, **{**common, "seed": seed + 10 + c})
        m = moments(cfg)
        good, z = compare_moments(m, ref_mh if alg == "pmmh" else ref_gibbs, n_se)
        ok &= good
        tag = f"{alg} {variant}" + (f" ({mode})" if alg == "pg" and variant != EHMM else "")
        means = ", ".join(f"{n}={v:.3f}" for n, v in zip(THETA_NAMES, m[0]))
        details.append(f"{tag}: max |z| {z:.2f} [{means}] {'ok' if good else 'FAIL'}")
    return SuiteResult("posterior", ok, f"{len(algorithms)} chains agree with exact-likelihood chains within {n_se:g} SE", details)


# -- 5. reductions ----------------------------------------------------------------


@_timed
def reduction_suite(seeds=range(20), dims: ModelDims | None = None, N: int = 16) -> SuiteResult:
    """Bitwise reductions under shared random streams and FA-APF vs optimal APF."""
    dims = dims or ModelDims(d=3, T=6)
    details, ok = [], True
    counts = dict(transition=0, mcmc=0, adapted=0)
    max_fa = 0.0
    for s in seeds:
        y = simulate(TRUE, dims, s).y
        a = bootstrap_pf(TRUE, dims, y, N, make_rng(s))
        b = apf(TRUE, dims, y, N, make_rng(s), family="transition")
        same = np.array_equal(a.x, b.x) and np.array_equal(a.logw, b.logw) and a.loglik == b.loglik
        counts["transition"] += same
        for iid, mc in ((bootstrap_pf, mcmc_pf), (faapf, mcmc_faapf), (apf, mcmc_apf)):
            u = iid(TRUE, dims, y, N, make_rng(s, 1))
            v, _ = mc(TRUE, dims, y, N, KernelSpec("independence"), make_rng(s, 1))
            counts["mcmc"] += np.array_equal(u.x, v.x) and np.array_equal(u.logw, v.logw) and u.loglik == v.loglik
        f = faapf(TRUE, dims, y, N, make_rng(s, 2))
        g = apf(TRUE, dims, y, N, make_rng(s, 2), family="adapted")
        rel = abs(f.loglik - g.loglik) / abs(f.loglik)
        max_fa = max(max_fa, rel)
        counts["adapted"] += rel < 1e-10
    n = len(list(seeds))
    ok = counts["transition"] == n and counts["mcmc"] == 3 * n and counts["adapted"] == n
    details += [
        f"APF(q=f, p~=1) == bootstrap: {counts['transition']}/{n}",
        f"MCMC filters with independence proposals == i.i.d.: {counts['mcmc']}/{3 * n}",
        f"FA-APF vs optimal APF: max rel err {max_fa:.1e}",
    ]
    return SuiteResult("reductions", ok, "bitwise reductions and FA/optimal-APF agreement", details)


# -- 6. qualitative orderings -----------------------------------------------------


VARIANCE_STUDY = {"pf": (1000, None), "fa-apf": (1000, None), "mcmc-pf": (1000, "rw"), "mcmc-fa-apf": (1000, "rw"), EHMM: (100, "independence")}


def relative_logliks(algorithm, d, runs, N, seed, T=10, kernel=None) -> np.ndarray:
    """``log p^ - log p`` per run with a fresh data set per run."""
    rel = np.empty(runs)
    dims = ModelDims(d=d, T=T)
    k = ALL_ALGORITHMS.index(algorithm)
    for r in range(runs):
        y = simulate(TRUE, dims, seed, (d, r)).y
        rel[r] = estimate(algorithm, TRUE, dims, y, N, make_rng(seed, 1, d, r, k), kernel) - kalman_loglik(TRUE, dims, y)
    return rel


def loglik_variance(algorithm, d, runs, N, seed, T=10, kernel=None) -> float:
    return float(np.var(relative_logliks(algorithm, d, runs, N, seed, T, kernel), ddof=1))


def variance_table(runs: int = 200, seed: int = 3, dims=(2, 10, 25), study=None) -> dict:
    """``{algorithm: {d: variance}}`` over the likelihood-variance study."""
    study = study or VARIANCE_STUDY
    return {a: {d: loglik_variance(a, d, runs, N, seed, kernel=k) for d in dims} for a, (N, k) in study.items()}


def check_adapted_beats_bootstrap(table, dims=(2, 10)):
    ok, lines = True, []
    for d in dims:
        good = table["fa-apf"][d] < table["pf"][d]
        ok &= good
        lines.append(f"(a) d={d}: var FA-APF {table['fa-apf'][d]:.3g} < PF {table['pf'][d]:.3g} {'ok' if good else 'FAIL'}")
    return ok, lines


def check_ehmm_grows_fastest(table):
    """Largest absolute increase of the log-likelihood variance between the smallest and largest d."""
    some = next(iter(table.values()))
    lo, hi = min(some), max(some)
    growth = {a: v[hi] - v[lo] for a, v in table.items()}
    ok = max(growth, key=growth.get) == EHMM
    parts = ", ".join(f"{a} +{g:.3g} (x{table[a][hi] / table[a][lo]:.3g})" for a, g in growth.items())
    return ok, [f"(b) variance growth d={lo}->{hi}: {parts} {'ok' if ok else 'FAIL'}"]


def lag_acf(series, lag):
    """ACF at ``lag``; a chain that never moves counts as fully correlated."""
    s = np.asarray(series)
    if np.all(s == s[0]):
        return 1.0
    return float(acf(s, lag)[lag])


def conditional_comparison(d: int = 25, N: int = 100, iterations: int = 1000, chains: int = 2, lag: int = 10, seed: int = 3):
    """Mean ESS per step and lag-``lag`` ACF of ``x_1[0]`` for the conditional PF and MCMC-FA-APF (theta fixed, AS)."""
    dims = ModelDims(d=d, T=10)
    y = simulate(TRUE, dims, seed).y
    res = {}
    for name, kern in (("pf", "rw"), ("mcmc-fa-apf", "ar")):
        ess, acfs = [], []
        for c in range(chains):
            cfg = SamplerConfig(algorithm="pg", variant=name, N=N, iterations=iterations, burn_in=0.1, theta_moves=0,
                                index_mode="as", kernel=KernelSpec(kern), seed=seed)
            tr = run_chain(cfg, dims, y, chain=c)
            ess.append(tr.mean_ess())
            acfs.append(lag_acf(tr.first_state[tr.n_burn:], lag))
        res[name] = (np.mean(ess, axis=0), float(np.mean(acfs)))
    return res


def check_conditional_comparison(res, lag: int = 10):
    e_pf, a_pf = res["pf"]
    e_mc, a_mc = res["mcmc-fa-apf"]
    good_e = bool(np.all(e_mc > e_pf))
    good_a = a_mc < a_pf
    return good_e and good_a, [
        f"(c) mean ESS per t: MCMC-FA-APF min {e_mc.min():.1f} vs PF max {e_pf.max():.1f} {'ok' if good_e else 'FAIL'}",
        f"(c) lag-{lag} ACF of x_1[0]: MCMC-FA-APF {a_mc:.3f} < PF {a_pf:.3f} {'ok' if good_a else 'FAIL'}",
    ]


@_timed
def qualitative_suite(runs: int = 200, seed: int = 3, dims_ab=(2, 10, 25), study=None, d_c: int = 25, N_c: int = 100,
                      iterations_c: int = 1000, chains_c: int = 2, lag: int = 10) -> SuiteResult:
    """(a) FA-APF beats bootstrap in log-lik variance; (b) original EHMM variance grows fastest in d;
    (c) conditional MCMC-FA-APF beats the conditional bootstrap PF on ESS and state ACF."""
    table = variance_table(runs, seed, dims_ab, study)
    ok_a, la = check_adapted_beats_bootstrap(table, [d for d in (2, 10) if d in dims_ab])
    ok_b, lb = check_ehmm_grows_fastest(table)
    ok_c, lc = check_conditional_comparison(conditional_comparison(d_c, N_c, iterations_c, chains_c, lag, seed), lag)
    return SuiteResult("qualitative", ok_a and ok_b and ok_c, "variance, dimension-scaling and conditional-filter orderings", la + lb + lc)


# -- 7. reversal identity ---------------------------------------------------------


@_timed
def reversal_suite(n_grid: int = 31, n_paths: int = 200, length: int = 8, seed: int = 1, tol: float = 1e-10) -> SuiteResult:
    """Conditional pool log-density does not depend on the pivot for rho-invariant kernels."""
    _, log_rho = discretize_stationary(TRUE, n_grid)
    rng = make_rng(seed)
    kernels = {f"mh-jump{j}": discrete_mh_kernel(log_rho, j) for j in (1, 2, 4)}
    kernels["independence"] = np.tile(log_rho, (n_grid, 1))
    details, ok = [], True
    for name, log_R in kernels.items():
        worst = 0.0
        for _ in range(n_paths):
            s = [int(rng.integers(0, n_grid))]
            R = np.exp(log_R)
            for _ in range(length - 1):
                s.append(int(rng.choice(n_grid, p=R[s[-1]] / R[s[-1]].sum())))
            vals = [conditional_pool_log_density(s, k, log_rho, log_R, log_R) for k in range(length)]
            worst = max(worst, max(vals) - min(vals))
        good = worst < tol
        ok &= good
        details.append(f"{name}: max pivot spread {worst:.1e}")
    # a rho-invariant but non-reversible kernel needs its true reversal
    R = np.exp(kernels["mh-jump1"]) @ np.exp(kernels["mh-jump4"])
    with np.errstate(divide="ignore"):
        log_R = np.log(R)
    log_Rt = reversal_kernel(log_rho, log_R)
    worst, naive = 0.0, 0.0
    for _ in range(n_paths):
        s = list(rng.integers(0, n_grid, size=length))
        s = [int(v) for v in np.clip(np.cumsum([s[0]] + list(rng.integers(-3, 4, size=length - 1))), 0, n_grid - 1)]
        vals = [conditional_pool_log_density(s, k, log_rho, log_R, log_Rt) for k in range(length)]
        bad = [conditional_pool_log_density(s, k, log_rho, log_R, log_R) for k in range(length)]
        worst = max(worst, max(vals) - min(vals))
        naive = max(naive, max(bad) - min(bad))
    good = worst < tol and naive > 1e-6
    ok &= good
    details.append(f"non-reversible with true reversal: spread {worst:.1e}; using R itself: {naive:.2e}")
    return SuiteResult("reversal", ok, f"pivot invariance to {tol:g}", details)


# -- registry ---------------------------------------------------------------------

QUICK = {
    "unbiasedness": dict(reps=1000),
    "enumeration": dict(draws=200_000, tol_prob=0.01),
    "invariance": dict(reps=1000),
    "posterior": dict(iterations=10_000, N=30, reference_factor=5,
                      algorithms=[("pmmh", "pf"), ("pmmh", "fa-apf"), ("pg", "mcmc-fa-apf"), ("pg", EHMM)]),
    "reductions": dict(seeds=range(5)),
    "qualitative": dict(runs=50, dims_ab=(2, 10), d_c=10, iterations_c=300, chains_c=1,
                        study={a: (max(N // 5, 20), k) for a, (N, k) in VARIANCE_STUDY.items()}),
    "reversal": dict(n_paths=50),
}

SUITES = {
    "unbiasedness": unbiasedness_suite,
    "enumeration": enumeration_suite,
    "invariance": invariance_suite,
    "posterior": posterior_suite,
    "reductions": reduction_suite,
    "qualitative": qualitative_suite,
    "reversal": reversal_suite,
}


# oracle suites; the qualitative orderings are run on request
DEFAULT_SUITES = ("unbiasedness", "enumeration", "invariance", "posterior", "reductions", "reversal")


def run_suites(names=None, full: bool = False, log=print) -> list[SuiteResult]:
    results = []
    for name in names or DEFAULT_SUITES:
        if name not in SUITES:
            raise ValueError(f"unknown suite {name!r}; expected one of {tuple(SUITES)}")
        kwargs = {} if full else QUICK.get(name, {})
        res = SUITES[name](**kwargs)
        results.append(res)
        if log:
            log(res.line())
            for line in res.details:
                log(f"    {line}")
    return results
