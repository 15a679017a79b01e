"""Monotone polynomial calibration of range measurements.

The sensing model maps a measured range D to a certified upper bound
phi(D) on the true distance, with phi increasing on its fitted domain.
Fitting minimizes the total over-bound sum(phi(D_k^u) - d_k) subject to
phi(D_k^l) >= d_k per sample; monotonicity of phi is enforced through a
Markov-Lukacs decomposition of phi' with two PSD Gram matrices, which
turns the fit into a small SDP.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .solvers import (AffineMatrixMap, MaxDetProblem, SolverError,
                      DEFAULT_SDP_GAP, solve_maxdet)

MONOTONE_GRID = 1000
MONOTONE_SLACK = 1e-8
BOUND_SLACK = 1e-7


class CalibrationError(Exception):
    """Raised on invalid calibration data or a failed fit."""


@dataclass(frozen=True)
class CalibrationSample:
    """One calibration point: true distance and its measurement interval."""

    d_true: float
    d_low: float
    d_high: float

    def __post_init__(self):
        if not (self.d_true > 0 and self.d_low > 0 and self.d_high > 0):
            raise CalibrationError("calibration sample values must be positive")
        if self.d_low > self.d_high:
            raise CalibrationError("sample lower bound exceeds upper bound")


@dataclass(frozen=True)
class CalibrationDataset:
    samples: tuple

    def __init__(self, samples):
        object.__setattr__(self, "samples", tuple(samples))

    def __len__(self):
        return len(self.samples)

    @property
    def domain_low(self) -> float:
        if not self.samples:
            raise CalibrationError("empty dataset has no domain")
        return min(s.d_low for s in self.samples)

    @property
    def domain_high(self) -> float:
        if not self.samples:
            raise CalibrationError("empty dataset has no domain")
        return max(s.d_high for s in self.samples)

    def merged(self, other: "CalibrationDataset") -> "CalibrationDataset":
        return CalibrationDataset(self.samples + other.samples)

    def arrays(self):
        d = np.array([s.d_true for s in self.samples])
        lo = np.array([s.d_low for s in self.samples])
        hi = np.array([s.d_high for s in self.samples])
        return d, lo, hi


@dataclass(frozen=True)
class CalibrationPolynomial:
    """Increasing polynomial bound with its valid domain."""

    coefficients: tuple
    domain: tuple

    def __init__(self, coefficients, domain):
        coefficients = tuple(float(c) for c in coefficients)
        if len(coefficients) < 2:
            raise CalibrationError("polynomial degree must be at least 1")
        lo, hi = float(domain[0]), float(domain[1])
        if not lo < hi:
            raise CalibrationError("polynomial domain is degenerate")
        object.__setattr__(self, "coefficients", coefficients)
        object.__setattr__(self, "domain", (lo, hi))

    @property
    def degree(self) -> int:
        return len(self.coefficients) - 1

    def __call__(self, x):
        """Horner evaluation (valid anywhere; the domain is advisory)."""
        x = np.asarray(x, dtype=float)
        out = np.full(x.shape, self.coefficients[-1])
        for c in self.coefficients[-2::-1]:
            out = out * x + c
        return out if out.shape else float(out)

    def derivative(self, x):
        x = np.asarray(x, dtype=float)
        coeffs = [i * c for i, c in enumerate(self.coefficients)][1:]
        out = np.full(x.shape, coeffs[-1])
        for c in coeffs[-2::-1]:
            out = out * x + c
        return out if out.shape else float(out)

    def in_domain(self, x):
        x = np.asarray(x, dtype=float)
        ok = (x >= self.domain[0]) & (x <= self.domain[1])
        return ok if ok.shape else bool(ok)

    def monotone_witness(self) -> float:
        """min of phi' over the domain grid; >= -1e-8 for a valid fit."""
        grid = np.linspace(self.domain[0], self.domain[1], MONOTONE_GRID)
        return float(self.derivative(grid).min())

    def validate(self):
        grid = np.linspace(self.domain[0], self.domain[1], MONOTONE_GRID)
        if self.derivative(grid).min() < -MONOTONE_SLACK:
            raise CalibrationError("fitted polynomial fails the monotone witness")
        if self(grid).min() <= 0.0:
            raise CalibrationError("fitted polynomial is not positive on its domain")
        return self


def identity_polynomial(domain=(1e-6, 1e6)) -> CalibrationPolynomial:
    """phi(x) = x; the noise-free sensing model."""
    return CalibrationPolynomial((0.0, 1.0), domain)


class PhiEval(NamedTuple):
    radius: float
    out_of_domain: bool


def eval_phi(poly: CalibrationPolynomial, D) -> PhiEval:
    """Evaluate the bound at measurement D.

    Out-of-domain measurements still get a (extrapolated) value; the flag
    signals the recalibration policy rather than an error.
    """
    value = poly(D)
    inside = poly.in_domain(D)
    if np.ndim(value) == 0:
        return PhiEval(float(value), not inside)
    return PhiEval(value, ~inside)


def _svec_indices(dim):
    return [(i, j) for i in range(dim) for j in range(i, dim)]


def svec_dim(dim: int) -> int:
    return dim * (dim + 1) // 2


def gram_from_svec(values, dim):
    """Symmetric matrix from its stacked upper triangle (row-major)."""
    M = np.zeros((dim, dim))
    for v, (i, j) in zip(values, _svec_indices(dim)):
        M[i, j] = v
        M[j, i] = v
    return M


def gram_poly_coeffs(S) -> np.ndarray:
    """Coefficients (ascending) of [x]^T S [x] for the monomial basis [x]."""
    S = np.asarray(S, dtype=float)
    k = S.shape[0]
    out = np.zeros(2 * k - 1)
    for i in range(k):
        for j in range(k):
            out[i + j] += S[i, j]
    return out


@dataclass(frozen=True)
class CoefficientSystem:
    """Linear system tying polynomial coefficients a_1..a_n to Gram entries.

    Row i-1 states  i * a_i = s_rows[i-1] @ svec(S) + t_rows[i-1] @ svec(T),
    i.e. the x^(i-1) coefficient of the decomposition of phi'.  For even
    polynomial degree the decomposition is (x - lo) s(x) + (hi - x) t(x);
    for odd degree it is s(x) + (x - lo)(hi - x) t(x).
    """

    degree: int
    domain: tuple
    s_dim: int
    t_dim: int
    s_rows: np.ndarray
    t_rows: np.ndarray
    even_derivative: bool

    def coefficients_from_grams(self, S, T=None):
        """Solve the system for (a_1..a_n) given PSD Gram matrices."""
        svec_s = np.array([S[i, j] for i, j in _svec_indices(self.s_dim)])
        rhs = self.s_rows @ svec_s
        if self.t_dim:
            svec_t = np.array([T[i, j] for i, j in _svec_indices(self.t_dim)])
            rhs = rhs + self.t_rows @ svec_t
        return rhs / np.arange(1, self.degree + 1)

    def derivative_coeffs(self, S, T=None):
        """Coefficients (ascending) of the decomposed phi'."""
        a = self.coefficients_from_grams(S, T)
        return a * np.arange(1, self.degree + 1)


def build_coefficient_constraints(degree: int, d_low: float, d_high: float) -> CoefficientSystem:
    """Derive the coefficient-matching equalities for the monotone fit.

    The system is expanded symbolically from the decomposition of phi'
    (degree n-1): basis-probing each Gram entry yields its contribution to
    every power of x.
    """
    if degree < 1:
        raise CalibrationError("degree must be at least 1")
    nder = degree - 1
    even = nder % 2 == 0
    if even:
        s_dim = nder // 2 + 1
        t_dim = max(nder // 2, 0) if nder >= 2 else 0
    else:
        s_dim = (nder + 1) // 2
        t_dim = s_dim

    lin_lo = np.array([-d_low, 1.0])            # (x - lo)
    lin_hi = np.array([d_high, -1.0])           # (hi - x)
    quad = np.convolve(lin_lo, lin_hi)          # (x - lo)(hi - x)

    def probe(dim, weight_poly):
        cols = []
        for (i, j) in _svec_indices(dim):
            S = np.zeros((dim, dim))
            S[i, j] = S[j, i] = 1.0
            contrib = np.convolve(gram_poly_coeffs(S), weight_poly)
            padded = np.zeros(degree)
            padded[:min(contrib.size, degree)] = contrib[:degree]
            if contrib[degree:].size and np.abs(contrib[degree:]).max() > 0:
                raise CalibrationError("decomposition exceeds derivative degree")
            cols.append(padded)
        return np.array(cols).T if cols else np.zeros((degree, 0))

    if even:
        s_rows = probe(s_dim, np.array([1.0]))
        t_rows = probe(t_dim, quad) if t_dim else np.zeros((degree, 0))
    else:
        s_rows = probe(s_dim, lin_lo)
        t_rows = probe(t_dim, lin_hi)
    return CoefficientSystem(degree, (float(d_low), float(d_high)),
                             s_dim, t_dim, s_rows, t_rows, even)


def _gram_block(nvars, offset, dim):
    """AffineMatrixMap selecting a Gram matrix from the variable vector."""
    coeff = np.zeros((nvars, dim, dim))
    for k, (i, j) in enumerate(_svec_indices(dim)):
        coeff[offset + k, i, j] = 1.0
        coeff[offset + k, j, i] = 1.0
    return AffineMatrixMap(np.zeros((dim, dim)), coeff)


def fit_objective(poly: CalibrationPolynomial, data: CalibrationDataset) -> float:
    """sum_k (phi(D_k^u) - d_k): the total over-bound of a fitted phi."""
    d, _, hi = data.arrays()
    return float(np.sum(poly(hi) - d))


def fit_phi(data: CalibrationDataset, degree: int = 4,
            tol: float = DEFAULT_SDP_GAP) -> CalibrationPolynomial:
    """Fit the tightest increasing polynomial bound to interval range data.

    Internally the domain is rescaled to O(1) (coefficients of a quartic on
    [4, 18] span five orders of magnitude otherwise); the returned
    polynomial is expressed in raw units.
    """
    if degree < 1:
        raise CalibrationError("degree must be at least 1")
    if len(data) == 0:
        raise CalibrationError("cannot fit an empty dataset")
    lo_raw, hi_raw = data.domain_low, data.domain_high
    if not lo_raw < hi_raw:
        raise CalibrationError("degenerate dataset: all measurements equal")

    u = hi_raw
    d, dlo, dhi = (a / u for a in data.arrays())
    sys_ = build_coefficient_constraints(degree, lo_raw / u, hi_raw / u)
    s_sv, t_sv = svec_dim(sys_.s_dim), svec_dim(sys_.t_dim)
    n = degree
    nvars = 1 + n + s_sv + t_sv
    K = d.size

    # equalities: i*a_i - s_row.svec(S) - t_row.svec(T) = 0
    A_eq = np.zeros((n, nvars))
    for i in range(1, n + 1):
        A_eq[i - 1, i] = i
        A_eq[i - 1, 1 + n:1 + n + s_sv] = -sys_.s_rows[i - 1]
        if t_sv:
            A_eq[i - 1, 1 + n + s_sv:] = -sys_.t_rows[i - 1]
    b_eq = np.zeros(n)

    powers_lo = np.vander(dlo, n + 1, increasing=True)   # (K, n+1)
    powers_hi = np.vander(dhi, n + 1, increasing=True)
    C = np.zeros((K, nvars))
    C[:, :n + 1] = -powers_lo
    d_ineq = -d

    clin = np.zeros(nvars)
    clin[:n + 1] = -powers_hi.sum(axis=0)

    blocks = [_gram_block(nvars, 1 + n, sys_.s_dim)]
    if t_sv:
        blocks.append(_gram_block(nvars, 1 + n + s_sv, sys_.t_dim))

    problem = MaxDetProblem(nvars=nvars, lmi_blocks=blocks,
                            A_eq=A_eq, b_eq=b_eq, C_ineq=C, d_ineq=d_ineq,
                            linear_objective=clin)

    # strictly feasible start: S = T = I, a0 large enough for strict slack
    x0 = np.zeros(nvars)
    S0 = np.eye(sys_.s_dim)
    T0 = np.eye(sys_.t_dim) if t_sv else None
    a_tail = sys_.coefficients_from_grams(S0, T0)
    x0[1:n + 1] = a_tail
    x0[0] = float((d - powers_lo[:, 1:] @ a_tail).max()) + 1.0
    for k, (i, j) in enumerate(_svec_indices(sys_.s_dim)):
        x0[1 + n + k] = 1.0 if i == j else 0.0
    for k, (i, j) in enumerate(_svec_indices(sys_.t_dim) if t_sv else []):
        x0[1 + n + s_sv + k] = 1.0 if i == j else 0.0

    status, x = solve_maxdet(problem, tol=tol, x0=x0)
    if status.kind != "optimal":
        raise SolverError(f"calibration fit failed: {status.kind}")

    coeffs = [x[i] * u ** (1 - i) for i in range(n + 1)]
    poly = CalibrationPolynomial(coeffs, (lo_raw, hi_raw)).validate()
    d_raw, lo_arr, _ = data.arrays()
    slack = poly(lo_arr) - d_raw
    if slack.min() < -BOUND_SLACK:
        raise SolverError("calibration fit violates the upper-bound property")
    return poly


def recalibrate(current: CalibrationPolynomial, fresh: CalibrationDataset,
                degree: int | None = None, history: CalibrationDataset | None = None,
                tol: float = DEFAULT_SDP_GAP) -> CalibrationPolynomial:
    """Refit on retained history plus fresh samples; empty fresh is a no-op.

    The new domain covers every fresh measurement, so evaluations that were
    previously out of domain become in-domain.
    """
    if len(fresh) == 0:
        return current
    combined = history.merged(fresh) if history is not None else fresh
    return fit_phi(combined, current.degree if degree is None else degree, tol)
