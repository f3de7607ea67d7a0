"""Kernel-regularized FIR estimation from slow-rate output measurements.

The regularized cost ``||y_l - Phi theta||^2 + gamma * theta' K^{-1} theta``
has minimizer ``theta = K Phi' (Phi K Phi' + gamma I)^{-1} y_l``.  The M x M
matrix being inverted is positive definite for any ``gamma > 0`` and any
positive semidefinite ``K``, so a model of any order ``1 <= P <= N`` exists
and is unique -- including ``P >= M``, where the unregularized least-squares
problem has no unique answer.  Estimation always goes through this dual form:
``K`` itself is never inverted, so rank-deficient kernels (e.g. resonant-pole
priors) are fine.

Hyperparameters are scored by the Gaussian-evidence objective
``y' (Phi K Phi' + gamma I)^{-1} y + log det(Phi K Phi' + gamma I)`` and tuned
with a budgeted, derivative-free coordinate search that never returns a worse
objective than its starting point.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np
import scipy.linalg

from .errors import InvalidStartError, NumericalError, OracleInapplicableError
from .kernels import KernelSpec, KernelSum, ResonantPole, build_kernel_matrix
from .kernels import _kernel_values
from .regressor import RegressorMatrix
from .signals import FastSignal, FirModel, SlowSignal

__all__ = [
    "RegularizedProblem",
    "HyperparameterVector",
    "FitReport",
    "regularized_fir",
    "primal_check",
    "marginal_likelihood",
    "optimize_hyperparameters",
    "apply_hyperparameters",
    "default_bounds",
    "goodness_of_fit",
    "predict_fast_output",
    "save_model",
    "load_model",
]


@dataclass(frozen=True)
class RegularizedProblem:
    """One regularized estimation instance: data, prior, and weight ``gamma > 0``."""

    phi: RegressorMatrix
    y_l: SlowSignal
    kernel: KernelSpec
    gamma: float

    def __post_init__(self):
        if not (np.isfinite(self.gamma) and self.gamma > 0):
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if len(self.y_l) != self.phi.output_length:
            raise ValueError(
                f"output has {len(self.y_l)} samples but the regressor expects "
                f"{self.phi.output_length}"
            )
        if self.y_l.factor != self.phi.factor:
            raise ValueError(
                f"output downsampling factor {self.y_l.factor} does not match "
                f"the regressor's {self.phi.factor}"
            )


def _resonant_gram_vectors(term: ResonantPole, order: int) -> tuple[np.ndarray, np.ndarray]:
    """Generators of the rank-2 form ``k(i,j) = v1_i v1_j + v2_i v2_j``."""
    i = np.arange(order, dtype=float)
    envelope = term.decay ** (i / 2.0)
    return (
        term.sigma1 * envelope * np.cos(term.frequency * i),
        term.sigma2 * envelope * np.sin(term.frequency * i),
    )


def _term_gram(phi: np.ndarray, term: KernelSpec) -> np.ndarray:
    """``Phi K_term Phi'`` for one kernel term.

    Resonant-pole terms use their rank-2 Gram form, which costs O(M*P)
    instead of a dense P x P product; hyperparameter search depends on this.
    """
    order = phi.shape[1]
    if isinstance(term, ResonantPole):
        v1, v2 = _resonant_gram_vectors(term, order)
        w1, w2 = phi @ v1, phi @ v2
        return np.outer(w1, w1) + np.outer(w2, w2)
    return phi @ (_kernel_values(term, order) @ phi.T)


def _output_gram(phi: np.ndarray, spec: KernelSpec) -> np.ndarray:
    """``Phi K Phi'`` accumulated over the terms of ``spec`` in order."""
    terms = spec.terms if isinstance(spec, KernelSum) else (spec,)
    gram = _term_gram(phi, terms[0]).copy()
    for term in terms[1:]:
        gram += _term_gram(phi, term)
    return gram


def _shifted_cholesky(gram: np.ndarray, gamma: float):
    """Cholesky factor of ``gram + gamma I`` with failure diagnostics."""
    shifted = gram.copy()
    shifted[np.diag_indices_from(shifted)] += gamma
    try:
        # inputs are products of validated finite data; skipping the finite
        # scan matters because hyperparameter search factorizes thousands of
        # these, and LAPACK reports non-finite matrices as not PD anyway
        factor = scipy.linalg.cho_factor(shifted.copy(), lower=True, check_finite=False, overwrite_a=True)
    except scipy.linalg.LinAlgError as exc:
        raise NumericalError(
            f"Cholesky factorization of the {shifted.shape[0]}x{shifted.shape[0]} "
            f"regularized Gram matrix failed: {exc}",
            diagnostics={
                "gamma": gamma,
                "condition_estimate": float(np.linalg.cond(shifted)),
                "max_entry": float(np.max(np.abs(shifted))),
            },
        ) from exc
    return shifted, factor


def regularized_fir(problem: RegularizedProblem) -> FirModel:
    """Solve ``theta = K Phi' (Phi K Phi' + gamma I)^{-1} y_l``.

    Defined for every order ``P`` in ``[1, N]`` and any input, including
    ``P >= M`` and zero-order-hold excitations.  The inner solve uses a
    Cholesky factorization plus iterative refinement so the linear-system
    residual stays near machine precision even for tiny ``gamma``.
    """
    phi = problem.phi.entries
    y = problem.y_l.samples
    kernel_matrix = build_kernel_matrix(problem.kernel, problem.phi.order).entries
    shifted, factor = _shifted_cholesky(phi @ (kernel_matrix @ phi.T), problem.gamma)
    z = scipy.linalg.cho_solve(factor, y)
    # refinement recovers accuracy lost to the O(1/gamma) conditioning
    y_norm = float(np.linalg.norm(y))
    for _ in range(3):
        residual = y - shifted @ z
        if np.linalg.norm(residual) <= 1e-13 * y_norm:
            break
        z = z + scipy.linalg.cho_solve(factor, residual)
    theta = kernel_matrix @ (phi.T @ z)
    return FirModel(theta=theta, period=problem.y_l.fast_period)


def primal_check(problem: RegularizedProblem) -> FirModel:
    """Independent primal-form solve ``(Phi'Phi + gamma K^{-1}) theta = Phi' y_l``.

    Requires a strictly positive definite kernel matrix; intended as a test
    oracle for :func:`regularized_fir`, not for production use.
    """
    phi = problem.phi.entries
    kernel_matrix = build_kernel_matrix(problem.kernel, problem.phi.order).entries
    try:
        k_factor = scipy.linalg.cho_factor(kernel_matrix, lower=True)
    except scipy.linalg.LinAlgError as exc:
        raise OracleInapplicableError(
            "primal form needs a strictly positive definite kernel matrix"
        ) from exc
    k_inv = scipy.linalg.cho_solve(k_factor, np.eye(problem.phi.order))
    normal = phi.T @ phi + problem.gamma * k_inv
    theta = scipy.linalg.solve(normal, phi.T @ problem.y_l.samples, assume_a="sym")
    return FirModel(theta=theta, period=problem.y_l.fast_period)


def marginal_likelihood(
    phi: RegressorMatrix,
    y_l: SlowSignal,
    kernel: KernelSpec,
    gamma: float,
) -> float:
    """Evidence objective ``y'(Phi K Phi' + gamma I)^{-1} y + log det(Phi K Phi' + gamma I)``.

    Lower is better.  A single Cholesky factorization provides both terms: the
    quadratic form via a triangular solve and the log-determinant as twice the
    sum of the log-diagonal.  The ``gamma I`` shift is included inside the
    log-determinant so the objective stays finite for rank-deficient kernels.
    """
    if not (np.isfinite(gamma) and gamma > 0):
        raise ValueError(f"gamma must be positive, got {gamma}")
    return _evidence_from_gram(_output_gram(phi.entries, kernel), y_l.samples, gamma)


def _evidence_from_gram(gram: np.ndarray, y: np.ndarray, gamma: float) -> float:
    _, factor = _shifted_cholesky(gram, gamma)
    lower = np.tril(factor[0])
    w = scipy.linalg.solve_triangular(lower, y, lower=True)
    return float(w @ w + 2.0 * np.sum(np.log(np.diag(lower))))


@dataclass(frozen=True)
class HyperparameterVector:
    """Named hyperparameter values with per-entry closed search intervals.

    Keys address kernel fields by path (``"decay"``, ``"terms.1.frequency"``,
    ...) plus the optional ``"gamma"``.  Every value must lie inside its
    bounds, and bounds must stay inside the kernel's own parameter ranges.
    """

    values: Mapping[str, float]
    bounds: Mapping[str, tuple[float, float]]

    def __post_init__(self):
        values = dict(self.values)
        bounds = {k: (float(lo), float(hi)) for k, (lo, hi) in dict(self.bounds).items()}
        if set(values) != set(bounds):
            raise ValueError(
                f"values and bounds must name the same parameters, "
                f"got {sorted(values)} vs {sorted(bounds)}"
            )
        for name, value in values.items():
            lo, hi = bounds[name]
            if not (lo <= value <= hi):
                raise ValueError(f"{name}={value} is outside its bounds [{lo}, {hi}]")
            if not lo < hi:
                raise ValueError(f"{name} has an empty interval [{lo}, {hi}]")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "bounds", bounds)


def apply_hyperparameters(spec: KernelSpec, values: Mapping[str, float]) -> KernelSpec:
    """Return ``spec`` with the named fields replaced.

    Paths are plain field names, or ``terms.<index>.<field>`` inside a
    :class:`~beyondnyq.kernels.KernelSum`.  ``"gamma"`` is not a kernel field
    and is rejected here; callers strip it first.
    """
    direct: dict[str, float] = {}
    nested: dict[int, dict[str, float]] = {}
    for path, value in values.items():
        parts = path.split(".")
        if len(parts) == 1:
            direct[path] = float(value)
        elif len(parts) == 3 and parts[0] == "terms":
            nested.setdefault(int(parts[1]), {})[parts[2]] = float(value)
        else:
            raise ValueError(f"malformed hyperparameter path {path!r}")
    if nested and not isinstance(spec, KernelSum):
        raise ValueError("terms.<i>.<field> paths need a kernel sum")
    if isinstance(spec, KernelSum):
        if direct:
            raise ValueError(f"a kernel sum has no direct fields, got {sorted(direct)}")
        terms = list(spec.terms)
        for index, fields in nested.items():
            if not 0 <= index < len(terms):
                raise ValueError(f"term index {index} out of range for {len(terms)} terms")
            terms[index] = replace(terms[index], **fields)
        return KernelSum(terms=tuple(terms))
    return replace(spec, **direct)


def default_bounds(name: str, value: float, omega_max: float = 2.0 * math.pi) -> tuple[float, float]:
    """Reasonable search interval around an initial hyperparameter value.

    The regularization weight gets a wide absolute range (it must absorb any
    mismatch between the kernel's scale and the data's); other scale-type
    parameters get two decades each way; decay values in (0, 1) move between
    double and one sixteenth of the initial rate (priors that die too fast
    are far more harmful than slow ones); frequencies get a +/-30% window
    clipped to ``[0, omega_max)``.
    """
    field = name.rsplit(".", 1)[-1]
    if field == "gamma":
        return (1e-9, 1e3)
    if field in ("scale", "sigma1", "sigma2"):
        return (value * 1e-2, value * 1e2)
    if field in ("decay", "correlation"):
        return (value**2, min(value**0.0625, 1.0 - 1e-9))
    if field == "frequency":
        return (0.7 * value, min(1.3 * value, 0.999 * omega_max))
    raise ValueError(f"no default bounds rule for hyperparameter {name!r}")


_LOG_SPACE_FIELDS = ("gamma", "scale", "sigma1", "sigma2")
_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def _to_search_space(name: str, x: float) -> float:
    return math.log(x) if name.rsplit(".", 1)[-1] in _LOG_SPACE_FIELDS else x


def _from_search_space(name: str, t: float) -> float:
    return math.exp(t) if name.rsplit(".", 1)[-1] in _LOG_SPACE_FIELDS else t


def optimize_hyperparameters(
    phi: RegressorMatrix,
    y_l: SlowSignal,
    template: KernelSpec,
    eta0: HyperparameterVector,
    *,
    gamma: float,
    budget: int,
    on_evaluation: Callable[[dict[str, float], float], None] | None = None,
) -> HyperparameterVector:
    """Budgeted coordinate-wise golden-section search on the evidence objective.

    Scale-type parameters (``gamma``, ``scale``) are searched in log-space, the
    rest in their bounded linear space.  Candidates are accepted only when they
    improve the objective, so the result is never worse than ``eta0``; with
    ``budget=1`` the start point is returned unchanged.  The sweep order is
    fixed (sorted parameter names), making the search deterministic.

    ``gamma`` is tuned only if present in ``eta0``; otherwise the fixed value
    passed as ``gamma`` is used throughout.  ``on_evaluation`` observes every
    objective evaluation (for trace files).
    """
    if budget < 1:
        raise ValueError(f"budget must be >= 1, got {budget}")

    # cache Phi K_term Phi' per term spec: coordinate probes change one term
    # at a time, so most pieces are reused across objective evaluations
    piece_cache: dict[KernelSpec, np.ndarray] = {}

    def objective(vals: dict[str, float]) -> float:
        g = vals.get("gamma", gamma)
        spec = apply_hyperparameters(template, {k: v for k, v in vals.items() if k != "gamma"})
        terms = spec.terms if isinstance(spec, KernelSum) else (spec,)
        gram = None
        for term in terms:
            piece = piece_cache.get(term)
            if piece is None:
                piece = _term_gram(phi.entries, term)
                piece_cache[term] = piece
            gram = piece.copy() if gram is None else gram + piece
        value = _evidence_from_gram(gram, y_l.samples, g)
        if on_evaluation is not None:
            on_evaluation(dict(vals), value)
        return value

    names = sorted(eta0.values)
    # fail fast on bounds that violate kernel parameter ranges
    for name in names:
        if name == "gamma":
            continue
        for endpoint in eta0.bounds[name]:
            apply_hyperparameters(template, {name: endpoint})

    best = dict(eta0.values)
    best_value = objective(best)
    evaluations = 1
    if not math.isfinite(best_value):
        raise InvalidStartError(f"objective is {best_value} at the initial hyperparameters")

    golden_steps = 6
    while evaluations < budget:
        improved = False
        for name in names:
            if evaluations >= budget:
                break
            lo, hi = eta0.bounds[name]
            a = _to_search_space(name, lo)
            b = _to_search_space(name, hi)
            # resonance frequencies carve narrow evidence dips, so they get a
            # dense scan; probing them is cheap through the rank-2 Gram form
            grid_points = 25 if name.rsplit(".", 1)[-1] == "frequency" else 7
            coord_best_x = best[name]
            coord_best_f = best_value

            def probe(t: float) -> float:
                nonlocal evaluations, coord_best_x, coord_best_f
                x = min(max(_from_search_space(name, t), lo), hi)
                f = objective({**best, name: x})
                evaluations += 1
                if f < coord_best_f:
                    coord_best_x, coord_best_f = x, f
                return f

            # coarse uniform scan first: the objective can be multimodal in a
            # coordinate (resonance frequencies especially), and pure
            # golden-section would slide into whichever basin touches the start
            grid = [a + (b - a) * k / (grid_points - 1) for k in range(grid_points)]
            values = []
            for t in grid:
                if evaluations >= budget:
                    break
                values.append(probe(t))
            if values:
                pick = int(np.argmin(values))
                ga = grid[max(pick - 1, 0)]
                gb = grid[min(pick + 1, len(values) - 1)]
                x1 = gb - _GOLDEN * (gb - ga)
                x2 = ga + _GOLDEN * (gb - ga)
                f1 = probe(x1) if evaluations < budget else math.inf
                f2 = probe(x2) if evaluations < budget else math.inf
                steps = 0
                while evaluations < budget and steps < golden_steps:
                    if f1 > f2:
                        ga, x1, f1 = x1, x2, f2
                        x2 = ga + _GOLDEN * (gb - ga)
                        f2 = probe(x2)
                    else:
                        gb, x2, f2 = x2, x1, f1
                        x1 = gb - _GOLDEN * (gb - ga)
                        f1 = probe(x1)
                    steps += 1
            if coord_best_f < best_value - 1e-9 * abs(best_value):
                best[name] = coord_best_x
                best_value = coord_best_f
                improved = True
            elif coord_best_f < best_value:
                best[name] = coord_best_x
                best_value = coord_best_f
        if not improved:
            break

    if on_evaluation is not None:
        # terminal trace entry: the accepted point and its objective
        on_evaluation(dict(best), best_value)
    return HyperparameterVector(values=best, bounds=eta0.bounds)


@dataclass(frozen=True)
class FitReport:
    """Summary of one fitted model against reference data."""

    model: FirModel
    gof: float
    rmse: float
    marginal_likelihood: float

    def __post_init__(self):
        if self.gof > 100.0:
            raise ValueError(f"goodness of fit cannot exceed 100, got {self.gof}")


def _as_samples(x) -> np.ndarray:
    if isinstance(x, (FastSignal, SlowSignal)):
        return x.samples
    return np.asarray(x, dtype=float)


def goodness_of_fit(y_true, y_pred) -> float:
    """``100 * (1 - sum((y - yhat)^2) / sum((y - mean(y))^2))``, at most 100."""
    true = _as_samples(y_true)
    pred = _as_samples(y_pred)
    if true.size != pred.size:
        raise ValueError(f"signals must have equal length, got {true.size} and {pred.size}")
    if true.size < 2:
        raise ValueError("need at least 2 samples")
    spread = float(np.sum((true - np.mean(true)) ** 2))
    if spread == 0.0:
        raise ValueError("reference signal is constant; goodness of fit is undefined")
    return 100.0 * (1.0 - float(np.sum((true - pred) ** 2)) / spread)


def predict_fast_output(model: FirModel, u: FastSignal) -> FastSignal:
    """Causal convolution of ``u`` with the FIR coefficients, zero initial state."""
    samples = np.convolve(u.samples, model.theta)[: len(u)]
    return FastSignal(samples=samples, period=u.period)


def save_model(model: FirModel, path: str | Path) -> None:
    """Write the model JSON ``{"period_s": ..., "theta": [...]}``."""
    payload = {"period_s": model.period, "theta": [float(v) for v in model.theta]}
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def load_model(path: str | Path) -> FirModel:
    try:
        payload = json.loads(Path(path).read_text())
        return FirModel(theta=np.asarray(payload["theta"], dtype=float), period=float(payload["period_s"]))
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise ValueError(f"{path}: not a valid model file ({exc})") from exc
