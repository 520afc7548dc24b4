"""Parametric diffusion test problems and checks of their coefficient hypotheses."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .mesh import SimplexMesh, l_shape_mesh, unit_square_mesh

COOKIE_WEIGHTS = (1.0, 0.8, 0.4, 0.2, 0.1, 0.05, 0.02, 0.01)
_LO = (0.1, 0.4, 0.7)


def _box(i: int, j: int):
    """Axis-aligned 0.2 x 0.2 box in column ``i``, row ``j`` (half-open)."""
    return (_LO[i], _LO[i] + 0.2, _LO[j], _LO[j] + 0.2)


# A1..A8 in reading order from the bottom row, skipping the centre box F
COOKIE_BOXES = tuple(_box(i, j) for j in range(3) for i in range(3) if (i, j) != (1, 1))
FORCING_BOX = _box(1, 1)


def indicator(box, x: np.ndarray) -> np.ndarray:
    x0, x1, y0, y1 = box
    return ((x[:, 0] >= x0) & (x[:, 0] < x1) & (x[:, 1] >= y0) & (x[:, 1] < y1)).astype(float)


@dataclass
class ParametricProblem:
    """Diffusion problem ``-div(a(x, y) grad u) = f`` on ``D``, ``y in [-1, 1]^M``.

    ``coefficient(x, y)`` takes an ``(n, 2)`` array of points and one
    parameter vector. Affine problems set ``affine_terms = (a0, [a_1, ...])``;
    log-affine ones set ``log_affine_terms`` for ``log a``.
    """

    name: str
    M: int
    coefficient: Callable[[np.ndarray, np.ndarray], np.ndarray]
    forcing: Callable[[np.ndarray], np.ndarray]
    initial_mesh: Callable[[], SimplexMesh]
    a_min: float
    a_max: float
    contains: Callable[[np.ndarray], np.ndarray]
    bounding_box: tuple = (0.0, 1.0, 0.0, 1.0)
    affine_terms: Optional[tuple] = None
    log_affine_terms: Optional[tuple] = None
    amplitudes: Optional[np.ndarray] = None
    special_points: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))

    def sample(self, y) -> Callable[[np.ndarray], np.ndarray]:
        """Coefficient at the parameter point ``y`` as a function of ``x``."""
        y = np.asarray(y, dtype=float)
        if y.shape != (self.M,):
            raise ValueError(f"parameter point must have shape ({self.M},), got {y.shape}")
        return lambda x: self.coefficient(x, y)


def cookie_problem(M: int = 8) -> ParametricProblem:
    """Affine coefficient ``1.1 + sum_m w_m chi_{A_m}(x) y_m`` on the unit square.

    The forcing is ``100`` on the centre box and zero elsewhere. ``M`` may
    truncate the eight inclusions.
    """
    if not 1 <= M <= 8:
        raise ValueError("the cookie problem has between 1 and 8 parameters")
    weights = np.array(COOKIE_WEIGHTS[:M])
    boxes = COOKIE_BOXES[:M]

    def chis(x):
        return np.stack([indicator(b, x) for b in boxes], axis=1)

    def coefficient(x, y):
        x = np.asarray(x, dtype=float)
        return 1.1 + chis(x) @ (weights * np.asarray(y, dtype=float))

    def forcing(x):
        return 100.0 * indicator(FORCING_BOX, np.asarray(x, dtype=float))

    a0 = lambda x: np.full(len(x), 1.1)  # noqa: E731
    terms = [(lambda x, b=b, w=w: w * indicator(b, x)) for b, w in zip(boxes, weights)]
    corners = np.array([[x, y] for b in COOKIE_BOXES + (FORCING_BOX,)
                        for x in b[:2] for y in b[2:]])
    return ParametricProblem(
        name="cookie", M=M, coefficient=coefficient, forcing=forcing,
        initial_mesh=lambda: unit_square_mesh(8),
        a_min=1.1 - float(weights.max()), a_max=1.1 + float(weights.max()),
        contains=lambda x: np.all((x > 0) & (x < 1), axis=1),
        affine_terms=(a0, terms), special_points=corners,
    )


def fourier_modes(m: int) -> tuple[int, int]:
    """Wave numbers ``(beta_1, beta_2)`` of mode ``m >= 1`` (ordered by total order)."""
    k = math.floor(-0.5 + math.sqrt(0.25 + 2 * m))
    b1 = m - k * (k + 1) // 2
    return b1, k - b1


def fourier_amplitudes(M: int, alpha1: float = 0.498, alpha_bar: float = 0.547) -> np.ndarray:
    amps = np.array([alpha_bar / m for m in range(1, M + 1)])
    amps[0] = alpha1
    return amps


def fourier_exp_problem(M: int = 4, n_per_unit: int = 4) -> ParametricProblem:
    """``a = exp(1 + sum_m alpha_m cos(2 pi b1 x1) cos(2 pi b2 x2) y_m)``, ``f = 1``.

    Posed on the L-shaped domain ``(-1, 1)^2 \\ (-1, 0]^2``; the initial mesh
    has ``2 n_per_unit^2`` right triangles per unit square.
    """
    if M < 1:
        raise ValueError("M must be positive")
    amps = fourier_amplitudes(M)
    modes = np.array([fourier_modes(m) for m in range(1, M + 1)], dtype=float)

    def h_terms(x):
        x = np.asarray(x, dtype=float)
        return (np.cos(2 * np.pi * x[:, :1] * modes[:, 0]) * np.cos(2 * np.pi * x[:, 1:2] * modes[:, 1])) * amps

    def coefficient(x, y):
        return np.exp(1.0 + h_terms(x) @ np.asarray(y, dtype=float))

    h0 = lambda x: np.ones(len(x))  # noqa: E731
    terms = [(lambda x, m=m: h_terms(x)[:, m]) for m in range(M)]
    total = float(amps.sum())

    def contains(x):
        inside = np.all((x > -1) & (x < 1), axis=1)
        return inside & ~((x[:, 0] <= 0) & (x[:, 1] <= 0))

    return ParametricProblem(
        name="fourier", M=M, coefficient=coefficient, forcing=lambda x: np.ones(len(x)),
        initial_mesh=lambda: l_shape_mesh(n_per_unit),
        a_min=math.exp(1.0 - total), a_max=math.exp(1.0 + total), contains=contains,
        bounding_box=(-1.0, 1.0, -1.0, 1.0), log_affine_terms=(h0, terms), amplitudes=amps,
    )


PROBLEMS = {"cookie": cookie_problem, "fourier": fourier_exp_problem}


def get_problem(name: str, M: int | None = None) -> ParametricProblem:
    try:
        factory = PROBLEMS[name]
    except KeyError:
        raise ValueError(f"unknown problem {name!r}; choose from {sorted(PROBLEMS)}") from None
    return factory() if M is None else factory(M)


def sample_points(problem: ParametricProblem, n: int = 400) -> np.ndarray:
    """Dense ``n x n`` grid over the bounding box, restricted to the domain."""
    x0, x1, y0, y1 = problem.bounding_box
    xs = np.linspace(x0, x1, n + 2)[1:-1]
    ys = np.linspace(y0, y1, n + 2)[1:-1]
    X, Y = np.meshgrid(xs, ys)
    pts = np.column_stack([X.ravel(), Y.ravel()])
    return pts[problem.contains(pts)]


@dataclass
class EllipticityReport:
    r: float
    satisfied: bool
    n_points: int


def check_uniform_ellipticity(problem_or_terms, n: int = 400, points: np.ndarray | None = None) -> EllipticityReport:
    """Estimate ``r = inf_x (a_0(x) - sum_m |a_m(x)|)`` for an affine coefficient.

    Accepts a :class:`ParametricProblem` with ``affine_terms`` or a pair
    ``(a0, [a_1, ...])`` of callables. The infimum is taken over a dense grid
    plus any problem-specific corner points; the hypothesis holds when
    ``r > 0``.
    """
    if isinstance(problem_or_terms, ParametricProblem):
        if problem_or_terms.affine_terms is None:
            raise ValueError(f"problem {problem_or_terms.name!r} is not affine")
        a0, terms = problem_or_terms.affine_terms
        if points is None:
            pts = sample_points(problem_or_terms, n)
            extra = problem_or_terms.special_points
            points = np.vstack([pts, extra[problem_or_terms.contains(extra)]]) if len(extra) else pts
    else:
        a0, terms = problem_or_terms
        if points is None:
            xs = np.linspace(0.0, 1.0, n + 2)[1:-1]
            X, Y = np.meshgrid(xs, xs)
            points = np.column_stack([X.ravel(), Y.ravel()])
    slack = np.asarray(a0(points), dtype=float) - sum(np.abs(np.asarray(t(points), dtype=float)) for t in terms)
    r = float(np.min(slack))
    return EllipticityReport(r=r, satisfied=r > 0, n_points=len(points))


@dataclass
class DerivativeBoundReport:
    delta: np.ndarray
    passed: bool
    checked: int
    violations: list


def check_fourier_derivative_bound(problem_or_amplitudes, k_max: int = 6) -> DerivativeBoundReport:
    """Check ``prod alpha_m^k_m <= prod (2 delta_m)^-k_m k_m!`` for ``1 <= |k|_1 <= k_max``.

    The bound factorises over ``m``, so the largest admissible
    ``delta_m = min_{1 <= k <= k_max} (k!)^(1/k) / (2 alpha_m)``. The check
    passes when every ``delta_m > 1`` and the inequality holds for all
    tested multi-indices.
    """
    amps = problem_or_amplitudes
    if isinstance(amps, ParametricProblem):
        if amps.amplitudes is None:
            raise ValueError("problem has no Fourier amplitudes")
        amps = amps.amplitudes
    amps = np.asarray(amps, dtype=float)
    M = len(amps)
    ks = np.arange(1, k_max + 1)
    fact_root = np.array([math.factorial(k) ** (1.0 / k) for k in ks])
    delta = np.array([fact_root.min() / (2 * a) for a in amps])
    violations = []
    checked = 0
    for k in itertools.product(range(k_max + 1), repeat=M):
        total = sum(k)
        if total == 0 or total > k_max:
            continue
        checked += 1
        lhs = math.prod(a ** km for a, km in zip(amps, k))
        rhs = math.prod((2 * d) ** (-km) * math.factorial(km) for d, km in zip(delta, k))
        if lhs > rhs * (1 + 1e-12):
            violations.append(k)
    return DerivativeBoundReport(delta=delta, passed=bool(np.all(delta > 1) and not violations),
                                 checked=checked, violations=violations)


def parameter_samples(M: int, n: int, seed: int = 0) -> np.ndarray:
    return np.random.default_rng(seed).uniform(-1.0, 1.0, size=(n, M))


__all__: Sequence[str] = [
    "ParametricProblem", "cookie_problem", "fourier_exp_problem", "get_problem",
    "check_uniform_ellipticity", "check_fourier_derivative_bound", "fourier_modes",
]
