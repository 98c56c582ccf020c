"""Dispatch a configured experiment to the estimators and collect per-step summaries."""
from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .. import __version__
from ..core import Gaussian, NumericalError, RngStream, sample_gaussian, weighted_sq_norm
from ..ensemble import empirical_moments, enkf_filter, exkf_filter
from ..inversion import EkiState, TemperingSchedule, eki_run, smc_sample
from ..kalman import LinearModel, kalman_filter, kalman_smoother
from ..mcmc import mh_step, pcn_step, random_walk, run_chain
from ..models import CONTRACTIVE_GAIN, OdeForwardModel, make_benchmark, simulate
from ..particle import particle_filter
from ..variational import (
    gain_3dvar,
    gaussian_fit_klpq,
    map_estimate,
    run_3dvar,
    strong_4dvar_minimize,
    w4dvar_minimize,
)
from .config import ConfigError, ExperimentConfig, config_to_dict
from .report import RunReport, read_series_csv, vector_columns

FILTER_METHODS = ("kf", "exkf", "enkf", "bpf", "opf", "gopf", "3dvar")
DEFAULT_GAINS = {"contractive-3dvar": CONTRACTIVE_GAIN}


@dataclass(frozen=True)
class Dataset:
    """Observations plus, when simulated, the truth that produced them."""

    data: np.ndarray
    truth: np.ndarray | None


def build_model(cfg: ExperimentConfig):
    if cfg.linear is not None:
        lin = cfg.linear
        try:
            return LinearModel(M=lin["M"], H=lin["H"], Sigma=lin["Sigma"], Gamma=lin["Gamma"],
                               init=Gaussian(lin["m0"], lin["C0"]))
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"model.linear: {exc}") from None
    return make_benchmark(cfg.model, **cfg.model_params)


def _static_problem(cfg: ExperimentConfig, ode: OdeForwardModel):
    p = cfg.params
    prior = Gaussian(np.zeros(ode.dim_u), p.prior_var * np.eye(ode.dim_u))
    problem = ode.inverse_problem(prior, p.noise_sd**2 * np.eye(ode.dim_x))
    return prior, problem


def load_dataset(cfg: ExperimentConfig, model) -> Dataset:
    if cfg.data is not None:
        return Dataset(read_series_csv(cfg.data, "y"), None)
    if isinstance(model, OdeForwardModel):
        prior, problem = _static_problem(cfg, model)
        stream = RngStream(cfg.seed, "data")
        u_true = sample_gaussian(prior, stream.at(phase="truth"), 1)[0]
        noise = problem.noise_cov.chol @ stream.at(phase="noise").particle_normals(1, model.dim_x)[0]
        return Dataset((model.forward(u_true) + noise)[None, :], u_true[None, :])
    run = simulate(model, cfg.J, RngStream(cfg.seed, "data"))
    return Dataset(run.data, run.truth)


def _error(mean, truth, j):
    if truth is None:
        return float("nan")
    return float(np.linalg.norm(np.asarray(mean) - truth[j]))


def filter_means(cfg: ExperimentConfig, model, data, method: str | None = None, seed=None):
    """Filtered means (J x d) plus per-step extras for the sequential methods."""
    method = method or cfg.method
    p = cfg.params
    rng = RngStream(cfg.seed if seed is None else seed, "method")
    if method == "kf":
        tr = kalman_filter(model, data)
        return tr.means, {"cov_trace": [float(np.trace(c)) for c in tr.covs]}
    if method == "exkf":
        posts = exkf_filter(model, data)
        return np.array([g.mean for g in posts]), {"cov_trace": [float(np.trace(g.cov.array)) for g in posts]}
    if method == "enkf":
        ens = enkf_filter(model, data, p.N, rng, s=p.s)
        moms = [empirical_moments(X) for X in ens]
        return np.array([m.mean for m in moms]), {"cov_trace": [float(np.trace(m.cov)) for m in moms]}
    if method in ("bpf", "opf", "gopf"):
        tr = particle_filter(model, data, p.N, rng, method)
        return np.array(tr.means), {"cov_trace": [float(np.trace(c)) for c in tr.covs], "ess": tr.ess}
    if method == "3dvar":
        if p.gain is not None:
            K = p.gain * model.H.T
        elif cfg.model in DEFAULT_GAINS and cfg.linear is None:
            K = DEFAULT_GAINS[cfg.model] * model.H.T
        else:
            K = gain_3dvar(p.c_hat * np.eye(model.dim_state), model.H, model.Gamma)[0]
        return run_3dvar(model, K, data), {}
    raise ConfigError(f"method: {method!r} does not produce filtered means")


def _run_filter(cfg, model, ds, report):
    means, extra = filter_means(cfg, model, ds.data)
    oracle = None
    if cfg.method in ("enkf", "bpf", "opf", "gopf") and isinstance(model, LinearModel):
        oracle = kalman_filter(model, ds.data).means
    for j, m in enumerate(means, start=1):
        row = {"step": j, **vector_columns("mean", m)}
        if "cov_trace" in extra:
            row["cov_trace"] = extra["cov_trace"][j - 1]
        if "ess" in extra:
            row["ess"] = extra["ess"][j - 1]
        if cfg.method in ("enkf", "bpf", "opf", "gopf"):
            row["kf_gap"] = float("nan") if oracle is None else float(np.linalg.norm(m - oracle[j - 1]))
        row["error"] = _error(m, ds.truth, j)
        report.add_row(**row)
    if ds.truth is not None:
        err = np.linalg.norm(means - ds.truth[1:], axis=1)
        report.summary["rmse"] = float(np.sqrt(np.mean(err**2)))


def _run_trajectory(cfg, model, ds, report):
    p = cfg.params
    if cfg.method == "ks":
        traj, _ = kalman_smoother(model, ds.data)
    elif cfg.method == "4dvar":
        _, traj, f = strong_4dvar_minimize(model, ds.data, tol=p.tol, max_iter=p.max_iter)
        report.summary["objective"] = float(f)
    else:
        traj, f, g = w4dvar_minimize(model, ds.data, tol=p.tol, max_iter=p.max_iter)
        report.summary["objective"] = float(f)
        report.summary["grad_norm"] = float(g)
    for j, v in enumerate(traj):
        report.add_row(step=j, **vector_columns("mean", v), error=_error(v, ds.truth, j))


def _chain_rows(samples, accepted, segments, report):
    n = samples.shape[0]
    bounds = np.linspace(0, n, min(segments, n) + 1).astype(int)
    for i in range(len(bounds) - 1):
        a, b = bounds[i], bounds[i + 1]
        report.add_row(segment=i + 1, **vector_columns("mean", samples[a:b].mean(axis=0)),
                       acceptance=float(np.mean(accepted[a:b])))


def _run_static(cfg, model, ds, report):
    p = cfg.params
    prior, problem = _static_problem(cfg, model)
    y = ds.data[0]
    rng = RngStream(cfg.seed, "method")
    if cfg.method in ("mh", "pcn"):
        if cfg.method == "mh":
            log_post = lambda u: float(problem.log_prior(u)) - problem.misfit(u, y)
            proposal = random_walk(p.scale**2)
            step = lambda u, g: mh_step(u, log_post, proposal, g)
        else:
            log_g = lambda u: -problem.misfit(u, y)
            step = lambda u, g: pcn_step(u, prior.cov, p.beta, log_g, rng=g)
        flags = []

        def tracked(u, g):
            u, acc = step(u, g)
            flags.append(acc)
            return u, acc

        samples, rate = run_chain(prior.mean, tracked, p.steps, rng.generator())
        _chain_rows(samples, np.array(flags, dtype=float), p.segments, report)
        report.summary["acceptance"] = rate
        report.summary["posterior_mean"] = samples[p.steps // 2:].mean(axis=0)
    elif cfg.method == "eki":
        U0 = sample_gaussian(prior, rng.at(phase="eki-init"), p.N)
        tr = eki_run(EkiState(U0), problem.forward, problem.noise_cov, y, p.steps, p.perturb,
                     rng.at(phase="eki"))
        for s, m in zip(tr.states, tr.misfits):
            report.add_row(step=s.step, **vector_columns("mean", s.mean),
                           misfit_mean=float(m.mean()),
                           spread=float(np.trace(empirical_moments(s.members).cov)))
    elif cfg.method == "smc":
        beta = 0.3 if p.beta is None else p.beta
        diag = []
        ens = smc_sample(problem, y, TemperingSchedule(cfg.J), p.N, p.mutation_steps, beta, rng, diag)
        for d in diag:
            report.add_row(temperature=d["temperature"], ess=d["ess"], acceptance=d["acceptance"])
        report.summary["posterior_mean"] = ens.mean()
        report.summary["posterior_cov_trace"] = float(np.trace(np.atleast_2d(ens.cov())))
    elif cfg.method == "map":
        u, f = map_estimate(problem, y, prior.mean, p.tol, p.max_iter)
        report.add_row(step=0, **vector_columns("u", u), objective=float(f))
    else:  # gauss-fit
        lam = 1.0 / p.prior_var
        loss = lambda U: 0.5 * weighted_sq_norm(problem.noise_cov, y - model.forward_batch(U))
        g = gaussian_fit_klpq(loss, lam, model.dim_u, n_starts=p.lam_starts, seed=cfg.seed)
        report.add_row(step=0, **vector_columns("mean", g.mean),
                       **vector_columns("var", np.diag(g.cov.array)))
    if ds.truth is not None:
        report.summary["truth"] = ds.truth[0]


def run_experiment(cfg: ExperimentConfig, dataset: Dataset | None = None) -> RunReport:
    t0 = time.perf_counter()
    model = build_model(cfg)
    ds = load_dataset(cfg, model) if dataset is None else dataset
    report = RunReport(config=config_to_dict(cfg), version=__version__)
    try:
        if cfg.method in FILTER_METHODS:
            _run_filter(cfg, model, ds, report)
        elif cfg.method in ("ks", "4dvar", "w4dvar"):
            _run_trajectory(cfg, model, ds, report)
        else:
            _run_static(cfg, model, ds, report)
    except NumericalError as exc:
        raise type(exc)(f"{cfg.method}: {exc}") from exc
    report.summary = {k: _as_list(v) for k, v in report.summary.items()}
    report.wall_time = time.perf_counter() - t0
    return report


def _as_list(v):
    return np.asarray(v).tolist() if isinstance(v, np.ndarray) else v


def compare(cfg: ExperimentConfig, methods) -> RunReport:
    """Run several filters on shared data; gaps are taken against the first method."""
    methods = list(methods)
    if len(methods) < 2:
        raise ConfigError("methods: compare needs at least two methods")
    for m in methods:
        if m not in FILTER_METHODS:
            raise ConfigError(f"methods: {m!r} is not a filter; choose from {FILTER_METHODS}")
    model = build_model(cfg)
    ds = load_dataset(cfg, model)
    report = RunReport(config={**config_to_dict(cfg), "methods": methods}, version=__version__)
    t0 = time.perf_counter()
    results = [filter_means(cfg, model, ds.data, m)[0] for m in methods]
    ref = results[0]
    for j in range(ref.shape[0]):
        row = {"step": j + 1}
        for m, means in zip(methods, results):
            row.update(vector_columns(f"{m}_mean", means[j]))
        for m, means in zip(methods[1:], results[1:]):
            row[f"gap_{m}"] = float(np.linalg.norm(means[j] - ref[j]))
        report.add_row(**row)
    for m, means in zip(methods[1:], results[1:]):
        report.summary[f"rms_gap_{m}"] = float(np.sqrt(np.mean(np.sum((means - ref) ** 2, axis=1))))
    report.wall_time = time.perf_counter() - t0
    return report


def bench(cfg: ExperimentConfig, Ns, n_seeds: int = 20, threads: int = 1) -> RunReport:
    """RMS gap of a sampling filter to the Kalman filter as N grows, with a log-log slope fit."""
    if cfg.method not in ("enkf", "bpf", "opf", "gopf"):
        raise ConfigError(f"method: bench needs a sampling filter, got {cfg.method!r}")
    model = build_model(cfg)
    if not isinstance(model, LinearModel):
        raise ConfigError("model: bench needs a linear-Gaussian model for the Kalman reference")
    ds = load_dataset(cfg, model)
    ref = kalman_filter(model, ds.data).means
    cells = [(N, s) for N in Ns for s in range(n_seeds)]

    def cell(args):
        N, s = args
        c = replace(cfg, params=replace(cfg.params, N=int(N)))
        means = filter_means(c, model, ds.data, seed=cfg.seed * 1_000_003 + s)[0]
        return float(np.mean(np.sum((means - ref) ** 2, axis=1)))

    t0 = time.perf_counter()
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        msq = list(pool.map(cell, cells))
    report = RunReport(config={**config_to_dict(cfg), "Ns": list(Ns), "n_seeds": n_seeds},
                       version=__version__)
    rms = []
    for i, N in enumerate(Ns):
        r = float(np.sqrt(np.mean(msq[i * n_seeds:(i + 1) * n_seeds])))
        rms.append(r)
        report.add_row(N=int(N), rms_gap=r)
    if len(Ns) >= 2:
        report.summary["slope"] = float(np.polyfit(np.log(Ns), np.log(rms), 1)[0])
    report.wall_time = time.perf_counter() - t0
    return report
