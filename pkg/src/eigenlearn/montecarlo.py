"""Monte Carlo harness: repeated exact kernel regression over random training sets.

Every (n, trial) pair gets its own RNG stream seeded from
``(seed, n, trial)``, so results do not depend on trial order or on the
number of worker threads.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import theory
from .domain import build_circle, build_hypercube, sample_hypersphere
from .kernel import KernelSpec
from .regression import (
    DatasetDraw,
    SingularSystemError,
    d_mse,
    empirical_msg,
    fit_coefficients,
    krr_predict,
    sphere_msg,
)
from .spectrum import circle_spectrum, hypercube_spectrum, sphere_spectrum, sphere_target

QUANTITIES = ("learnability", "mse", "mse_ots", "learnability_ots", "msg", "conservation")
MAX_FAILURE_FRACTION = 0.10
CSV_FIELDS = ("experiment", "target", "n", "quantity", "mean", "std", "stderr", "trials", "theory")


class ExperimentAborted(RuntimeError):
    pass


@dataclass(frozen=True)
class TargetSpec:
    """A target function.

    On discrete domains use ``level`` (first mode of that level, or
    ``member``-th) or ``index`` (eigentable row) or explicit ``coefficients``.
    On the sphere only ``level`` is meaningful.  ``noise`` is the label noise
    variance.
    """

    name: str
    level: int | None = None
    member: int = 0
    index: int | None = None
    coefficients: tuple | None = None
    noise: float = 0.0

    @classmethod
    def parse(cls, text: str) -> "TargetSpec":
        """Parse ``k=2``, ``k=2:noise=0.5``, ``i=17`` or ``v=0.5,0,0.5``."""
        parts = text.split(":")
        kwargs: dict = {}
        for part in parts:
            key, _, val = part.partition("=")
            key = key.strip()
            if key == "k":
                kwargs["level"] = int(val)
            elif key == "member":
                kwargs["member"] = int(val)
            elif key == "i":
                kwargs["index"] = int(val)
            elif key == "v":
                kwargs["coefficients"] = tuple(float(x) for x in val.split(","))
            elif key == "noise":
                kwargs["noise"] = float(val)
            else:
                raise ValueError(f"bad target descriptor {text!r}")
        return cls(name=text, **kwargs)


@dataclass(frozen=True)
class ExperimentConfig:
    domain: str
    size: int
    kernel: KernelSpec
    targets: tuple
    n_grid: tuple
    ridge: float = 0.0
    trials: int = 100
    seed: int = 0
    track: tuple = ("learnability", "mse")
    k_max: int = 70
    test_size: int = 2000
    msg_points: int = 200
    cov_modes: int = 0
    workers: int = 1
    experiment: str = "experiment"
    tail_as_ridge: bool = True

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trial count must be >= 1")
        if self.domain not in ("circle", "hypercube", "sphere"):
            raise ValueError(f"unknown domain {self.domain!r}")
        unknown = set(self.track) - set(QUANTITIES)
        if unknown:
            raise ValueError(f"unknown tracked quantities {sorted(unknown)}")
        if self.domain != "sphere":
            M = self.size if self.domain == "circle" else 2**self.size
            bad = [n for n in self.n_grid if not 0 <= n <= M]
            if bad:
                raise ValueError(f"n-grid entries {bad} outside [0, {M}]")


@dataclass
class AggregateStats:
    """Per-(target, n, quantity) statistics plus optional predictor covariances."""

    experiment: str
    rows: list = field(default_factory=list)
    covariances: dict = field(default_factory=dict)
    failures: dict = field(default_factory=dict)

    def get(self, target: str, n: int, quantity: str) -> dict:
        for r in self.rows:
            if r["target"] == target and r["n"] == n and r["quantity"] == quantity:
                return r
        raise KeyError((target, n, quantity))

    def write_csv(self, path_or_file, theory_values: dict | None = None):
        write_long_csv(path_or_file, self.rows, theory_values)


def sample_dataset(M: int, n: int, seed=None) -> DatasetDraw:
    """Uniformly random n-subset of range(M) (without replacement)."""
    if not 0 <= n <= M:
        raise ValueError(f"cannot draw n = {n} points from M = {M}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return DatasetDraw(np.sort(rng.choice(M, size=n, replace=False)), seed=None)


def add_target_noise(v_clean, noise_var: float, M: int, seed=None) -> np.ndarray:
    """Fixed noisy perturbation of a target: coefficients gain i.i.d. N(0, noise/M)."""
    if noise_var < 0:
        raise ValueError("noise variance must be non-negative")
    v = np.array(v_clean, dtype=float)
    if noise_var == 0:
        return v
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return v + rng.normal(0.0, math.sqrt(noise_var / M), size=v.shape)


def trial_rng(seed: int, n: int, trial: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, n, trial]))


def summarize(values) -> dict:
    x = np.asarray(values, dtype=float)
    T = len(x)
    std = float(x.std(ddof=1)) if T > 1 else 0.0
    return {"mean": float(x.mean()), "std": std, "stderr": std / math.sqrt(T), "trials": T}


class Experiment:
    """Set-up shared by every trial of one configuration (read-only once built)."""

    def __init__(self, config: ExperimentConfig):
        self.config = config

    @cached_property
    def domain(self):
        c = self.config
        if c.domain == "circle":
            return build_circle(c.size)
        if c.domain == "hypercube":
            return build_hypercube(c.size)
        return None

    @cached_property
    def levels(self):
        c = self.config
        if c.domain == "circle":
            return circle_spectrum(c.kernel, c.size)
        if c.domain == "hypercube":
            return hypercube_spectrum(c.kernel, c.size)
        return sphere_spectrum(c.kernel, c.size, c.k_max)

    @cached_property
    def mode_eigenvalues(self) -> np.ndarray:
        """Eigenvalues aligned with eigentable rows (discrete domains)."""
        table = dict(zip(self.levels.levels.tolist(), self.levels.eigenvalues.tolist()))
        return np.array([table[m.k] for m in self.domain.modes])

    @cached_property
    def top_modes(self) -> np.ndarray:
        return np.argsort(-self.mode_eigenvalues, kind="stable")[: self.config.cov_modes]

    def target_vector(self, t: TargetSpec) -> np.ndarray:
        M = self.domain.M
        if t.coefficients is not None:
            v = np.zeros(M)
            v[: len(t.coefficients)] = t.coefficients
            return v
        if t.index is not None:
            row = t.index
        elif t.level is not None:
            row = self.domain.level_modes(t.level)[t.member]
        else:
            raise ValueError(f"target {t.name!r} names no mode")
        return np.eye(M)[row]

    @cached_property
    def clean_targets(self) -> np.ndarray:
        if not self.config.targets:
            return np.zeros((self.domain.M, 0))
        return np.column_stack([self.target_vector(t) for t in self.config.targets])

    @cached_property
    def sphere_axes(self) -> list:
        rng = np.random.default_rng(np.random.SeedSequence([self.config.seed, 2**31 - 1]))
        D = self.config.size + 1
        axes = []
        for _ in self.config.targets:
            a = rng.standard_normal(D)
            axes.append(a / np.linalg.norm(a))
        return axes

    # -- trials ---------------------------------------------------------

    def run_trial(self, n: int, trial: int) -> dict:
        rng = trial_rng(self.config.seed, n, trial)
        if self.config.domain == "sphere":
            return self._sphere_trial(n, rng)
        return self._discrete_trial(n, rng)

    def _discrete_trial(self, n, rng) -> dict:
        c, dom = self.config, self.domain
        draw = sample_dataset(dom.M, n, rng)
        V = self.clean_targets.copy()
        for j, t in enumerate(c.targets):
            if t.noise:
                V[:, j] = add_target_noise(V[:, j], t.noise, dom.M, rng)
        want_diag = "conservation" in c.track
        out = fit_coefficients(dom.eigentable, self.mode_eigenvalues, draw.indices, V, c.ridge, diagonal=want_diag)
        Vhat, diag = out if want_diag else (out, None)
        res: dict = {}
        ots_ok = n < dom.M
        for j, t in enumerate(c.targets):
            # noisy targets are scored against the clean function plus
            # independent test noise, so memorized label noise earns no credit
            v, vh = self.clean_targets[:, j], Vhat[:, j]
            norm2 = float(v @ v) + t.noise
            if "learnability" in c.track:
                res[(t.name, "learnability")] = float(v @ vh) / norm2
            if "mse" in c.track:
                res[(t.name, "mse")] = d_mse(v, vh) + t.noise
            if ots_ok and ("mse_ots" in c.track or "learnability_ots" in c.track):
                f, fh = dom.eigentable.T @ v, dom.eigentable.T @ vh
                mask = np.ones(dom.M, dtype=bool)
                mask[draw.indices] = False
                if "mse_ots" in c.track:
                    res[(t.name, "mse_ots")] = float(((f - fh)[mask] ** 2).mean()) + t.noise
                if "learnability_ots" in c.track:
                    res[(t.name, "learnability_ots")] = float((f * fh)[mask].mean()) / norm2
            if "msg" in c.track and c.domain == "circle":
                res[(t.name, "msg")] = empirical_msg(dom.eigentable.T @ vh)
            if c.cov_modes:
                res[(t.name, "vhat")] = vh[self.top_modes]
        if want_diag:
            res[("all", "conservation")] = float(diag.sum())
        return res

    def _sphere_trial(self, n, rng) -> dict:
        c = self.config
        d = c.size
        train = sample_hypersphere(d, max(n, 1), rng).points[:n]
        test = sample_hypersphere(d, c.test_size, rng).points
        res: dict = {}
        Y = np.column_stack([sphere_target(t.level, d, a, train) for t, a in zip(c.targets, self.sphere_axes)])
        for j, t in enumerate(c.targets):
            if t.noise:
                Y[:, j] += rng.normal(0.0, math.sqrt(t.noise), size=n)
        F = np.column_stack([sphere_target(t.level, d, a, test) for t, a in zip(c.targets, self.sphere_axes)])
        if n == 0:
            Fh = np.zeros_like(F)
        else:
            Fh = krr_predict(c.kernel, train, Y, c.ridge, test)
        for j, t in enumerate(c.targets):
            f, fh = F[:, j], Fh[:, j]
            norm2 = 1.0 + t.noise
            if "learnability" in c.track or "learnability_ots" in c.track:
                val = float((f * fh).mean()) / norm2
                for q in ("learnability", "learnability_ots"):
                    if q in c.track:
                        res[(t.name, q)] = val
            if "mse" in c.track or "mse_ots" in c.track:
                val = float(((f - fh) ** 2).mean()) + t.noise
                for q in ("mse", "mse_ots"):
                    if q in c.track:
                        res[(t.name, q)] = val
            if "msg" in c.track:
                pts = test[: c.msg_points]
                if n == 0:
                    res[(t.name, "msg")] = 0.0
                else:
                    res[(t.name, "msg")] = sphere_msg(
                        lambda P, j=j: krr_predict(c.kernel, train, Y[:, j], c.ridge, P), pts
                    )
        return res


def _safe_trial(exp: Experiment, n: int, trial: int):
    try:
        return exp.run_trial(n, trial)
    except SingularSystemError as exc:
        return exc


def run_experiment(config: ExperimentConfig) -> AggregateStats:
    """Run every (n, trial) of ``config`` and aggregate in trial-index order."""
    exp = Experiment(config)
    if config.domain != "sphere":
        exp.mode_eigenvalues  # build shared state before threads start
    else:
        exp.sphere_axes
    stats = AggregateStats(config.experiment)
    for n in config.n_grid:
        jobs = range(config.trials)
        if config.workers > 1:
            with ThreadPoolExecutor(config.workers) as pool:
                results = list(pool.map(lambda tr: _safe_trial(exp, n, tr), jobs))
        else:
            results = [_safe_trial(exp, n, tr) for tr in jobs]
        good = [r for r in results if not isinstance(r, Exception)]
        failed = len(results) - len(good)
        if failed:
            stats.failures[n] = failed
        if failed > MAX_FAILURE_FRACTION * config.trials:
            raise ExperimentAborted(f"{failed}/{config.trials} trials failed at n = {n}: {results[0]}")
        keys = [k for k in good[0] if k[1] != "vhat"]
        for key in keys:
            row = {"experiment": config.experiment, "target": key[0], "n": n, "quantity": key[1]}
            row.update(summarize([r[key] for r in good]))
            stats.rows.append(row)
        for key in [k for k in good[0] if k[1] == "vhat"]:
            X = np.array([r[key] for r in good])
            stats.covariances[(key[0], n)] = covariance_with_errors(X)
    return stats


def covariance_with_errors(X: np.ndarray) -> dict:
    """Sample mean, covariance and per-entry standard errors of the covariance."""
    T = X.shape[0]
    mean = X.mean(axis=0)
    Z = X - mean
    prods = Z[:, :, None] * Z[:, None, :]
    cov = prods.sum(axis=0) / max(T - 1, 1)
    stderr = prods.std(axis=0, ddof=1) / math.sqrt(T) if T > 1 else np.zeros_like(cov)
    return {"mean": mean, "cov": cov, "stderr": stderr, "trials": T}


# -- theory for the same configuration -----------------------------------


def predict_for_config(config: ExperimentConfig, exp: Experiment | None = None) -> dict:
    """Theory values keyed by ``(target, n, quantity)`` for every tracked quantity."""
    exp = exp or Experiment(config)
    out: dict = {}
    ridge = config.ridge
    if config.domain == "sphere":
        levels = exp.levels
        lam, mult = levels.eigenvalues, levels.multiplicities
        G = theory.gradient_gram("sphere", levels.levels, ambient_dim=config.size + 1)
        if config.tail_as_ridge:
            ridge += sphere_tail_mass(config.kernel, levels)
    else:
        lam, mult = exp.mode_eigenvalues, None
        G = theory.gradient_gram("circle", exp.domain.levels) if config.domain == "circle" else None
    for n in config.n_grid:
        cons = theory.solve_C(lam, n, ridge, mult)
        for t in config.targets:
            if config.domain == "sphere":
                v = np.zeros(len(lam))
                v[t.level] = 1.0
            else:
                v = exp.target_vector(t)
            L_target = theory.predict_learnability(v, cons.L)
            E = theory.predict_mse(v, cons.L, n, cons.sum_L2, t.noise)
            norm2 = float(v @ v)
            L_obs = norm2 / (norm2 + t.noise) * L_target
            vals = {"learnability": L_obs, "mse": E}
            if config.domain == "sphere":
                vals["learnability_ots"], vals["mse_ots"] = L_obs, E
            elif n < exp.domain.M:
                vals["learnability_ots"], vals["mse_ots"] = theory.ots_correct(L_obs, E, n, exp.domain.M)
            if G is not None and n > 0 and math.isfinite(E):
                var = theory.predict_vhat_covariance(cons.L, E, n)
                vals["msg"] = theory.predict_msg(cons.L * v, var, G, mult)
            elif G is not None and n == 0:
                vals["msg"] = 0.0
            for q in config.track:
                if q in vals:
                    out[(t.name, n, q)] = vals[q]
        if "conservation" in config.track:
            out[("all", n, "conservation")] = float(n if config.ridge == 0 else (mult_sum(cons)))
    return out


def sphere_tail_mass(spec: KernelSpec, levels) -> float:
    """Kernel trace not captured by the truncated levels, ``kappa(1) - sum m_k lambda_k``.

    Modes far below C respond linearly, so their combined weight behaves like
    an extra ridge of this size.
    """
    captured = float((levels.eigenvalues * levels.multiplicities).sum())
    return max(float(spec.profile(1.0)) - captured, 0.0)


def mult_sum(cons: theory.TheoryConstants) -> float:
    return float((cons.multiplicities * cons.L).sum())


def write_long_csv(path_or_file, rows, theory_values: dict | None = None):
    own = isinstance(path_or_file, str) or hasattr(path_or_file, "__fspath__")
    fh = open(path_or_file, "w", newline="") if own else path_or_file
    try:
        w = csv.DictWriter(fh, fieldnames=CSV_FIELDS)
        w.writeheader()
        for r in rows:
            out = {k: r.get(k, "") for k in CSV_FIELDS}
            if theory_values is not None:
                tv = theory_values.get((r["target"], r["n"], r["quantity"]))
                out["theory"] = "" if tv is None else repr(float(tv))
            for k in ("mean", "std", "stderr"):
                if isinstance(out[k], float):
                    out[k] = repr(out[k])
            w.writerow(out)
    finally:
        if own:
            fh.close()


def read_long_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        r["n"] = int(r["n"])
        for k in ("mean", "std", "stderr", "theory"):
            r[k] = float(r[k]) if r.get(k) not in (None, "") else None
        if r.get("trials") not in (None, ""):
            r["trials"] = int(r["trials"])
    return rows
