"""Tabular data ingestion, the empirical-spectrum pipeline and config files."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import theory
from .kernel import KernelSpec, kernel_matrix
from .montecarlo import CSV_FIELDS, summarize, trial_rng
from .regression import SingularSystemError, solve_kernel_system
from .spectrum import empirical_spectrum

DEFAULT_MAX_ROWS = 4000
NORMALIZATIONS = ("none", "standardize", "unit-norm")


class DataFormatError(ValueError):
    """Malformed input file; ``line`` is 1-based."""

    def __init__(self, path, line, message):
        super().__init__(f"{path}:{line}: {message}")
        self.path = path
        self.line = line


@dataclass(frozen=True)
class TabularDataset:
    features: np.ndarray
    labels: np.ndarray
    source: str = ""
    normalization: dict = field(default_factory=lambda: {"kind": "none"})

    def __post_init__(self):
        X = np.asarray(self.features, dtype=float)
        y = np.asarray(self.labels, dtype=float)
        if X.ndim != 2 or y.shape != (X.shape[0],):
            raise ValueError(f"features {X.shape} and labels {y.shape} do not line up")
        if X.shape[0] < 2:
            raise ValueError("a dataset needs at least 2 rows")
        if not (np.isfinite(X).all() and np.isfinite(y).all()):
            raise ValueError("dataset contains NaN or Inf")
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)

    @property
    def N(self) -> int:
        return self.features.shape[0]


def _sniff_delimiter(line: str):
    return "," if "," in line else None


def load_tabular(path, label_column="last", normalization: str = "none", delimiter=None) -> TabularDataset:
    """Read a comma- or whitespace-delimited numeric table.

    Blank lines and lines starting with ``#`` are skipped.  ``label_column``
    is ``"last"`` or a 0-based column index.  Errors name the offending line.
    """
    if normalization not in NORMALIZATIONS:
        raise ValueError(f"unknown normalization {normalization!r}; expected one of {NORMALIZATIONS}")
    rows, width = [], None
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            delim = delimiter if delimiter is not None else _sniff_delimiter(line)
            cells = [c.strip() for c in line.split(delim)]
            if width is None:
                width = len(cells)
                if width < 2:
                    raise DataFormatError(path, lineno, "need at least one feature column and one label column")
            elif len(cells) != width:
                raise DataFormatError(path, lineno, f"ragged row: {len(cells)} cells, expected {width}")
            try:
                vals = [float(c) for c in cells]
            except ValueError:
                bad = next(c for c in cells if not _is_float(c))
                raise DataFormatError(path, lineno, f"non-numeric cell {bad!r}") from None
            if not all(math.isfinite(v) for v in vals):
                raise DataFormatError(path, lineno, "NaN or Inf cell")
            rows.append(vals)
    if not rows:
        raise DataFormatError(path, 1, "empty file")
    data = np.array(rows)
    col = width - 1 if label_column == "last" else int(label_column)
    if not 0 <= col < width:
        raise ValueError(f"label column {label_column!r} outside 0..{width - 1}")
    y = data[:, col]
    X = np.delete(data, col, axis=1)
    X, record = normalize_features(X, normalization)
    return TabularDataset(X, y, str(path), record)


def _is_float(s: str) -> bool:
    try:
        float(s)
        return True
    except ValueError:
        return False


def normalize_features(X: np.ndarray, kind: str):
    """Apply a normalization and return ``(X, record)``."""
    if kind == "none":
        return X, {"kind": "none"}
    if kind == "standardize":
        mu, sd = X.mean(axis=0), X.std(axis=0)
        sd = np.where(sd > 0, sd, 1.0)
        return (X - mu) / sd, {"kind": "standardize", "mean": mu.tolist(), "std": sd.tolist()}
    if kind == "unit-norm":
        norms = np.linalg.norm(X, axis=1, keepdims=True)
        if np.any(norms == 0):
            raise ValueError("unit-norm normalization of a zero row")
        return X / norms, {"kind": "unit-norm"}
    raise ValueError(f"unknown normalization {kind!r}")


def write_tabular(path, dataset: TabularDataset, precision: int = 17):
    """Write features then label, comma-separated, ``precision`` significant digits."""
    with open(path, "w") as fh:
        for x, y in zip(dataset.features, dataset.labels):
            fh.write(",".join(f"{v:.{precision}g}" for v in (*x, y)) + "\n")


def synthetic_power_law(N: int = 2000, D: int = 20, alpha: float = 1.5, seed=0) -> TabularDataset:
    """Gaussian features with covariance ``diag(j^-alpha)`` and ``+-1`` labels from a random halfspace.

    Rows are normalized to unit norm.
    """
    rng = np.random.default_rng(seed)
    scales = np.arange(1, D + 1, dtype=float) ** (-alpha / 2.0)
    X = rng.standard_normal((N, D)) * scales
    w = rng.standard_normal(D)
    y = np.where(X @ w >= 0, 1.0, -1.0)
    X, record = normalize_features(X, "unit-norm")
    return TabularDataset(X, y, f"synthetic:power-law(alpha={alpha})", record)


@dataclass
class PipelineResult:
    """Theory and Monte Carlo learnability/MSE per n on a tabular dataset."""

    n_grid: list
    empirical: dict  # quantity -> list of summary dicts
    corrected: dict  # quantity -> list of floats
    naive: dict
    N: int
    failures: dict = field(default_factory=dict)

    def abs_errors(self, quantity: str = "learnability"):
        emp = np.array([s["mean"] for s in self.empirical[quantity]])
        return np.abs(emp - np.array(self.corrected[quantity])), np.abs(emp - np.array(self.naive[quantity]))

    def rows(self, experiment: str = "empirical") -> list[dict]:
        out = []
        for q in ("learnability", "mse"):
            for i, n in enumerate(self.n_grid):
                s = self.empirical[q][i]
                for name, th in ((q, self.corrected[q][i]), (q + "_naive", self.naive[q][i])):
                    out.append({"experiment": experiment, "target": "labels", "n": n, "quantity": name, **s, "theory": th})
        return out

    def write_csv(self, path_or_file, experiment: str = "empirical"):
        own = not hasattr(path_or_file, "write")
        fh = open(path_or_file, "w", newline="") if own else path_or_file
        try:
            w = csv.DictWriter(fh, fieldnames=CSV_FIELDS)
            w.writeheader()
            for r in self.rows(experiment):
                w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
        finally:
            if own:
                fh.close()


def empirical_pipeline(
    dataset: TabularDataset,
    spec: KernelSpec,
    n_grid,
    ridge: float = 0.0,
    trials: int = 30,
    seed: int = 0,
    max_rows: int = DEFAULT_MAX_ROWS,
) -> PipelineResult:
    """Compare off-training-set theory with kernel regression on a finite dataset.

    The Gram matrix over all (at most ``max_rows``, taken in file order) rows
    gives the empirical spectrum and label coefficients.  Each trial trains
    on a random n-subset and is scored on the complement; theory is
    corrected with ``M := N``.
    """
    X, y = dataset.features[:max_rows], dataset.labels[:max_rows]
    N = len(y)
    n_grid = [int(n) for n in n_grid]
    if any(n >= N for n in n_grid):
        raise ValueError(f"off-training-set quantities need n < N = {N}")
    if any(n < 1 for n in n_grid):
        raise ValueError("n-grid entries must be >= 1")
    K = kernel_matrix(spec, X, X)
    K = 0.5 * (K + K.T)
    if spec.jitter:
        K[np.diag_indices_from(K)] += spec.jitter
    spectrum = empirical_spectrum(K, y)
    lam, v = spectrum.eigenvalues, spectrum.coefficients
    norm2 = float(y @ y) / N

    empirical = {"learnability": [], "mse": []}
    corrected = {"learnability": [], "mse": []}
    naive = {"learnability": [], "mse": []}
    failures = {}
    pos = lam > 0
    for n in n_grid:
        cons = theory.solve_C(lam[pos], n, ridge)
        L_naive = theory.predict_learnability(v[pos], cons.L) * float(v[pos] @ v[pos]) / float(v @ v)
        E_naive = theory.predict_mse(v[pos], cons.L, n, cons.sum_L2) + float(v[~pos] @ v[~pos]) * n / max(cons.mse_denominator, 1e-300)
        L_ots, E_ots = theory.ots_correct(L_naive, E_naive, n, N)
        naive["learnability"].append(L_naive)
        naive["mse"].append(E_naive)
        corrected["learnability"].append(L_ots)
        corrected["mse"].append(E_ots)

        lrn, mse, failed = [], [], 0
        for t in range(trials):
            rng = trial_rng(seed, n, t)
            idx = rng.choice(N, size=n, replace=False)
            mask = np.ones(N, dtype=bool)
            mask[idx] = False
            try:
                alpha = solve_kernel_system(K[np.ix_(idx, idx)], ridge, y[idx])
            except SingularSystemError:
                failed += 1
                continue
            fh = K[np.ix_(mask, idx)] @ alpha
            yc = y[mask]
            lrn.append(float(yc @ fh) / len(yc) / norm2)
            mse.append(float(((yc - fh) ** 2).mean()))
        if failed:
            failures[n] = failed
        if failed > 0.1 * trials:
            raise RuntimeError(f"{failed}/{trials} trials failed at n = {n}")
        empirical["learnability"].append(summarize(lrn))
        empirical["mse"].append(summarize(mse))
    return PipelineResult(n_grid, empirical, corrected, naive, N, failures)


# -- experiment config files --------------------------------------------


def load_config(path) -> dict:
    """Read a YAML (or JSON) experiment file into a flat dict of option names."""
    text = Path(path).read_text()
    data = yaml.safe_load(io.StringIO(text)) or {}
    if not isinstance(data, dict):
        raise ValueError(f"{path}: top level must be a mapping")
    return {str(k).replace("-", "_"): v for k, v in data.items()}


def merge_config(file_values: dict, flag_values: dict, defaults: dict) -> dict:
    """Flags override file values, which override defaults.

    ``flag_values`` holds only flags the user actually gave.
    """
    unknown = set(file_values) - set(defaults)
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    merged = dict(defaults)
    merged.update(file_values)
    merged.update(flag_values)
    return merged
