"""Problem definition for quadratic differential pencils with interior jumps.

A problem instance describes the equation

    y'' + (rho^2 + rho * p(x) + q(x)) * y = 0,   0 < x < T,

together with quasi-periodic boundary conditions

    y(0) = alpha * y(T),
    y'(0) - (i * rho * h' + h) * y(0) = beta * y'(T),

and jump conditions at interior breakpoints b_1 < ... < b_{N-1}:

    y(b_j + 0)  = gamma_j * y(b_j - 0),
    y'(b_j + 0) = gamma_j^{-1} * y'(b_j - 0) + (i * rho * eta'_j + eta_j) * y(b_j - 0).

Potentials are stored per subinterval (b_{j-1}, b_j) in local coordinates,
either as polynomial coefficients or as samples at Chebyshev nodes.  This
module owns validation of the standing nondegeneracy assumptions, the derived
coefficient pack (jump transmission means xi_j^{+/-}, boundary weights
z0^{+/-}, the phase integral calE(x) = (1/2) * int_0^x p, and its mean), and
the JSON problem-file format.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial import chebyshev as npcheb
from numpy.polynomial import polynomial as nppoly

__all__ = [
    "PotentialSpec",
    "IntervalPotentials",
    "JumpData",
    "PencilProblem",
    "DerivedCoefficients",
    "ProblemValidationError",
    "validate_problem",
    "derive_coefficients",
    "problem_to_json",
    "problem_from_json",
    "dump_problem",
    "load_problem",
    "complex_to_json",
    "complex_from_json",
]

# Near-zero floor used when flagging degenerate derived quantities.  The
# standing assumptions demand exact nonvanishing; numerically we also flag
# values so close to zero that downstream divisions would be meaningless.
_DEGENERACY_FLOOR = 1e-12


# ---------------------------------------------------------------------------
# complex scalar serialization
# ---------------------------------------------------------------------------

def complex_to_json(z: complex) -> list[str]:
    """Serialize a complex scalar as an [re, im] pair of decimal strings.

    ``repr`` of a float is the shortest decimal string that round-trips the
    binary value, so emitted files re-ingest bit-exactly.
    """
    z = complex(z)
    return [repr(z.real), repr(z.imag)]


def complex_from_json(value) -> complex:
    """Parse a complex scalar from JSON.

    Accepts an [re, im] pair whose entries are numbers or decimal strings,
    or a bare real number.
    """
    if isinstance(value, (int, float)):
        return complex(float(value), 0.0)
    if isinstance(value, (list, tuple)) and len(value) == 2:
        re, im = (float(v) for v in value)
        return complex(re, im)
    raise ValueError(f"cannot parse complex scalar from {value!r}")


def _real_from_json(value) -> float:
    if isinstance(value, (str, int, float)):
        return float(value)
    raise ValueError(f"cannot parse real scalar from {value!r}")


# ---------------------------------------------------------------------------
# potentials
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PotentialSpec:
    """One coefficient function on one subinterval, in local coordinates.

    Parameters
    ----------
    kind : str
        Either ``"polynomial"`` (coefficients c_0..c_d of
        p(t) = sum c_k t^k with t in [0, L], t measured from the left
        endpoint of the subinterval) or ``"chebyshev-samples"`` (values at
        first-kind Chebyshev nodes of the subinterval, ordered by increasing
        position; the interpolating polynomial of matching degree is used).
    coefficients : tuple of complex
        Polynomial coefficients or node samples.  The canonical zero
        potential is the single entry (0,); empty lists are flagged by
        validation.
    support : int or None
        Optional subinterval index annotation.  The authoritative placement
        is positional (the entry's index in the problem's interval list);
        this field is carried through serialization untouched.
    """

    kind: str
    coefficients: tuple[complex, ...]
    support: int | None = None

    def __init__(self, kind: str, coefficients: Sequence[complex] = (0.0,),
                 support: int | None = None):
        object.__setattr__(self, "kind", str(kind))
        object.__setattr__(
            self, "coefficients", tuple(complex(c) for c in coefficients)
        )
        object.__setattr__(self, "support", support)

    @classmethod
    def zero(cls) -> "PotentialSpec":
        return cls("polynomial", (0.0,))

    @classmethod
    def polynomial(cls, coefficients: Sequence[complex]) -> "PotentialSpec":
        return cls("polynomial", coefficients)

    @property
    def is_zero(self) -> bool:
        return all(c == 0 for c in self.coefficients)

    @staticmethod
    def chebyshev_nodes(count: int, length: float) -> np.ndarray:
        """Positions of the first-kind Chebyshev nodes on [0, length].

        Returned in increasing order; ``coefficients`` of a
        ``chebyshev-samples`` spec are the function values at these points.
        """
        if count < 1:
            return np.zeros(0)
        k = np.arange(count)
        std = -np.cos((2 * k + 1) * np.pi / (2 * count))  # increasing in (-1, 1)
        return (std + 1.0) * (length / 2.0)

    def _series(self, length: float):
        """Underlying numpy.polynomial series on domain [0, length]."""
        if not self.coefficients:
            return nppoly.Polynomial([0.0], domain=[0.0, length], window=[0.0, length])
        if self.kind == "polynomial":
            # coefficients act on the local coordinate directly: window equals
            # domain so that no affine rescaling is applied
            return nppoly.Polynomial(
                np.asarray(self.coefficients),
                domain=[0.0, length],
                window=[0.0, length],
            )
        if self.kind == "chebyshev-samples":
            samples = np.asarray(self.coefficients)
            count = samples.size
            k = np.arange(count)
            std = -np.cos((2 * k + 1) * np.pi / (2 * count))
            coef = npcheb.chebfit(std, samples, deg=count - 1)
            return npcheb.Chebyshev(coef, domain=[0.0, length], window=[-1.0, 1.0])
        raise ValueError(f"unknown potential kind {self.kind!r}")

    def as_callable(self, length: float) -> Callable[[np.ndarray], np.ndarray]:
        """Evaluator t -> value for t in [0, length] (vectorized)."""
        series = self._series(length)
        return lambda t: series(np.asarray(t))

    def antiderivative(self, length: float) -> Callable[[np.ndarray], np.ndarray]:
        """Evaluator for F(t) = int_0^t of this potential, F(0) = 0."""
        prim = self._series(length).integ(lbnd=0.0)
        return lambda t: prim(np.asarray(t))

    def to_json(self) -> dict:
        data = {
            "kind": self.kind,
            "coefficients": [complex_to_json(c) for c in self.coefficients],
        }
        if self.support is not None:
            data["support"] = self.support
        return data

    @classmethod
    def from_json(cls, data) -> "PotentialSpec":
        if data is None:
            return cls.zero()
        return cls(
            kind=data.get("kind", "polynomial"),
            coefficients=[complex_from_json(c) for c in data.get("coefficients", [0.0])],
            support=data.get("support"),
        )


@dataclass(frozen=True)
class IntervalPotentials:
    """The pair (p, q) on one subinterval."""

    p: PotentialSpec = field(default_factory=PotentialSpec.zero)
    q: PotentialSpec = field(default_factory=PotentialSpec.zero)

    def to_json(self) -> dict:
        return {"p": self.p.to_json(), "q": self.q.to_json()}

    @classmethod
    def from_json(cls, data) -> "IntervalPotentials":
        data = data or {}
        return cls(
            p=PotentialSpec.from_json(data.get("p")),
            q=PotentialSpec.from_json(data.get("q")),
        )


@dataclass(frozen=True)
class JumpData:
    """Jump parameters (gamma_j, eta'_j, eta_j) at one breakpoint."""

    gamma: complex
    eta_prime: complex = 0.0
    eta: complex = 0.0

    def __post_init__(self):
        object.__setattr__(self, "gamma", complex(self.gamma))
        object.__setattr__(self, "eta_prime", complex(self.eta_prime))
        object.__setattr__(self, "eta", complex(self.eta))

    def to_json(self) -> dict:
        return {
            "gamma": complex_to_json(self.gamma),
            "eta_prime": complex_to_json(self.eta_prime),
            "eta": complex_to_json(self.eta),
        }

    @classmethod
    def from_json(cls, data) -> "JumpData":
        return cls(
            gamma=complex_from_json(data["gamma"]),
            eta_prime=complex_from_json(data.get("eta_prime", 0.0)),
            eta=complex_from_json(data.get("eta", 0.0)),
        )


# ---------------------------------------------------------------------------
# problem
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PencilProblem:
    """Full problem instance.

    Construction performs only shape coercion; value-level checks live in
    :func:`validate_problem` so that malformed instances can still be built,
    inspected, and reported on.
    """

    T: float                                   # interval length
    breakpoints: tuple[float, ...]             # interior jump locations b_1..b_{N-1}
    intervals: tuple[IntervalPotentials, ...]  # potentials per subinterval, N entries
    h_prime: complex                           # rho-linear boundary slope offset
    h: complex                                 # constant boundary slope offset
    alpha: complex                             # quasi-period weight on y(T)
    beta: complex                              # quasi-period weight on y'(T)
    jumps: tuple[JumpData, ...]                # jump data per breakpoint

    def __init__(
        self,
        T: float,
        intervals: Sequence[IntervalPotentials] | None = None,
        breakpoints: Sequence[float] = (),
        h_prime: complex = 0.0,
        h: complex = 0.0,
        alpha: complex = 1.0,
        beta: complex = 1.0,
        jumps: Sequence[JumpData] = (),
    ):
        object.__setattr__(self, "T", float(T))
        object.__setattr__(self, "breakpoints", tuple(float(b) for b in breakpoints))
        if intervals is None:
            intervals = [IntervalPotentials() for _ in range(len(self.breakpoints) + 1)]
        object.__setattr__(self, "intervals", tuple(intervals))
        object.__setattr__(self, "h_prime", complex(h_prime))
        object.__setattr__(self, "h", complex(h))
        object.__setattr__(self, "alpha", complex(alpha))
        object.__setattr__(self, "beta", complex(beta))
        object.__setattr__(self, "jumps", tuple(jumps))

    # -- geometry ------------------------------------------------------------

    @property
    def n_intervals(self) -> int:
        return len(self.intervals)

    @property
    def bounds(self) -> np.ndarray:
        """Subinterval endpoints b_0 = 0 < b_1 < ... < b_N = T."""
        return np.array([0.0, *self.breakpoints, self.T])

    @property
    def lengths(self) -> np.ndarray:
        """Subinterval lengths T_k = b_k - b_{k-1}."""
        return np.diff(self.bounds)

    # -- serialization ---------------------------------------------------------

    def to_json(self) -> dict:
        return {
            "T": self.T,
            "breakpoints": list(self.breakpoints),
            "intervals": [iv.to_json() for iv in self.intervals],
            "h_prime": complex_to_json(self.h_prime),
            "h": complex_to_json(self.h),
            "alpha": complex_to_json(self.alpha),
            "beta": complex_to_json(self.beta),
            "jumps": [j.to_json() for j in self.jumps],
        }

    @classmethod
    def from_json(cls, data: dict) -> "PencilProblem":
        return cls(
            T=_real_from_json(data["T"]),
            breakpoints=[_real_from_json(b) for b in data.get("breakpoints", [])],
            intervals=[
                IntervalPotentials.from_json(iv) for iv in data.get("intervals", [])
            ]
            or None,
            h_prime=complex_from_json(data.get("h_prime", 0.0)),
            h=complex_from_json(data.get("h", 0.0)),
            alpha=complex_from_json(data.get("alpha", 1.0)),
            beta=complex_from_json(data.get("beta", 1.0)),
            jumps=[JumpData.from_json(j) for j in data.get("jumps", [])],
        )


def problem_to_json(problem: PencilProblem) -> dict:
    return problem.to_json()


def problem_from_json(data: dict) -> PencilProblem:
    return PencilProblem.from_json(data)


def dump_problem(problem: PencilProblem, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(problem.to_json(), fh, indent=2)
        fh.write("\n")


def load_problem(path) -> PencilProblem:
    with open(path, "r", encoding="utf-8") as fh:
        return PencilProblem.from_json(json.load(fh))


# ---------------------------------------------------------------------------
# validation and derived coefficients
# ---------------------------------------------------------------------------

class ProblemValidationError(ValueError):
    """Raised when derived coefficients are requested for an invalid problem."""

    def __init__(self, report: list[str]):
        self.report = list(report)
        super().__init__("; ".join(self.report))


def _xi_pair(jump: JumpData) -> tuple[complex, complex]:
    """Transmission means xi^{+/-} = (gamma + 1/gamma)/2 -/+ eta'/2."""
    mean = (jump.gamma + 1.0 / jump.gamma) / 2.0
    return mean - jump.eta_prime / 2.0, mean + jump.eta_prime / 2.0


def validate_problem(problem: PencilProblem) -> list[str]:
    """Check the standing nondegeneracy assumptions and structural sanity.

    Returns a report: a list of human-readable violation strings, empty when
    the problem is admissible.  Violations are report entries, not
    exceptions, so callers can surface all of them at once.
    """
    report: list[str] = []

    if not np.isfinite(problem.T) or problem.T <= 0:
        report.append(f"T must be positive and finite, got {problem.T}")

    bp = problem.breakpoints
    for j, b in enumerate(bp):
        if not np.isfinite(b):
            report.append(f"breakpoint[{j}] is not finite: {b}")
        elif not (0.0 < b < problem.T):
            # endpoints are excluded: a jump at 0 or T has no interior trace
            report.append(
                f"breakpoint[{j}] = {b} must lie strictly inside (0, {problem.T})"
            )
    if any(b2 <= b1 for b1, b2 in zip(bp, bp[1:])):
        report.append(f"breakpoints must be strictly increasing, got {list(bp)}")

    if len(problem.intervals) != len(bp) + 1:
        report.append(
            f"expected {len(bp) + 1} interval potential entries, "
            f"got {len(problem.intervals)}"
        )
    if len(problem.jumps) != len(bp):
        report.append(f"expected {len(bp)} jump entries, got {len(problem.jumps)}")

    for k, iv in enumerate(problem.intervals):
        for name, spec in (("p", iv.p), ("q", iv.q)):
            if spec.kind not in ("polynomial", "chebyshev-samples"):
                report.append(f"interval[{k}].{name}: unknown kind {spec.kind!r}")
            if not spec.coefficients:
                report.append(
                    f"interval[{k}].{name}: coefficient list must be non-empty "
                    f"(use [0] for the zero potential)"
                )
            if any(not np.isfinite(c.real) or not np.isfinite(c.imag)
                   for c in spec.coefficients):
                report.append(f"interval[{k}].{name}: non-finite coefficient")

    if abs(problem.alpha) <= _DEGENERACY_FLOOR:
        report.append(f"alpha must be nonzero, got {problem.alpha}")
    if abs(problem.beta) <= _DEGENERACY_FLOOR:
        report.append(f"beta must be nonzero, got {problem.beta}")

    for j, jump in enumerate(problem.jumps):
        if abs(jump.gamma) <= _DEGENERACY_FLOOR:
            report.append(f"jump[{j}].gamma must be nonzero, got {jump.gamma}")
            continue
        scale = 1.0 + abs(jump.gamma) + abs(jump.eta_prime)
        xi_p, xi_m = _xi_pair(jump)
        if abs(xi_p) <= _DEGENERACY_FLOOR * scale:
            report.append(
                f"jump[{j}]: xi^+ = (gamma + 1/gamma)/2 - eta'/2 degenerates to {xi_p}"
            )
        if abs(xi_m) <= _DEGENERACY_FLOOR * scale:
            report.append(
                f"jump[{j}]: xi^- = (gamma + 1/gamma)/2 + eta'/2 degenerates to {xi_m}"
            )

    scale = 1.0 + abs(problem.alpha) * (1.0 + abs(problem.h_prime)) + abs(problem.beta)
    z0_p = problem.alpha * (1.0 - problem.h_prime) + problem.beta
    z0_m = problem.alpha * (1.0 + problem.h_prime) + problem.beta
    if abs(z0_p) <= _DEGENERACY_FLOOR * scale:
        report.append(f"z0^+ = alpha*(1 - h') + beta degenerates to {z0_p}")
    if abs(z0_m) <= _DEGENERACY_FLOOR * scale:
        report.append(f"z0^- = alpha*(1 + h') + beta degenerates to {z0_m}")

    return report


@dataclass(frozen=True)
class DerivedCoefficients:
    """Coefficient pack computed once per validated problem.

    Attributes
    ----------
    lengths : ndarray
        Subinterval lengths T_k.
    xi_plus, xi_minus : ndarray of complex
        Transmission means xi_j^{+/-} per breakpoint.
    xi_partial_plus, xi_partial_minus : ndarray of complex
        Cumulative products xi_1^{+/-} * ... * xi_j^{+/-}; entry j-1 covers
        the first j breakpoints.  Empty for jump-free problems.
    xi_product_plus, xi_product_minus : complex
        Full ordered products over all breakpoints (1 when jump-free).
    z0_plus, z0_minus : complex
        Boundary weights alpha*(1 -/+ h') + beta.
    calE : callable
        Phase integral calE(x) = (1/2) * int_0^x p, vectorized over x.
    omega_mean : complex
        calE(T) / T.
    """

    lengths: np.ndarray
    xi_plus: np.ndarray
    xi_minus: np.ndarray
    xi_partial_plus: np.ndarray
    xi_partial_minus: np.ndarray
    xi_product_plus: complex
    xi_product_minus: complex
    z0_plus: complex
    z0_minus: complex
    calE: Callable[[np.ndarray], np.ndarray]
    omega_mean: complex


def derive_coefficients(problem: PencilProblem) -> DerivedCoefficients:
    """Compute the derived coefficient pack for a validated problem.

    Raises
    ------
    ProblemValidationError
        If :func:`validate_problem` reports violations.
    """
    report = validate_problem(problem)
    if report:
        raise ProblemValidationError(report)

    xi_p = np.array([_xi_pair(j)[0] for j in problem.jumps], dtype=complex)
    xi_m = np.array([_xi_pair(j)[1] for j in problem.jumps], dtype=complex)

    bounds = problem.bounds
    lengths = problem.lengths

    # piecewise antiderivative of p with continuous accumulation
    prims = [
        iv.p.antiderivative(float(L)) for iv, L in zip(problem.intervals, lengths)
    ]
    full = np.array([prims[k](lengths[k]) for k in range(len(prims))], dtype=complex)
    offsets = np.concatenate(([0.0 + 0.0j], np.cumsum(full)[:-1]))

    def calE(x):
        x_arr = np.asarray(x, dtype=float)
        flat = np.atleast_1d(x_arr).ravel()
        out = np.empty(flat.shape, dtype=complex)
        # right-closed cells so x == b_k lands in cell k-1; clip to valid range
        idx = np.clip(np.searchsorted(bounds, flat, side="left") - 1, 0,
                      len(lengths) - 1)
        for k in np.unique(idx):
            sel = idx == k
            out[sel] = offsets[k] + prims[k](flat[sel] - bounds[k])
        out = out / 2.0
        if x_arr.ndim == 0:
            return complex(out[0])
        return out.reshape(x_arr.shape)

    return DerivedCoefficients(
        lengths=lengths,
        xi_plus=xi_p,
        xi_minus=xi_m,
        xi_partial_plus=np.cumprod(xi_p) if xi_p.size else xi_p,
        xi_partial_minus=np.cumprod(xi_m) if xi_m.size else xi_m,
        xi_product_plus=complex(np.prod(xi_p)) if xi_p.size else 1.0 + 0.0j,
        xi_product_minus=complex(np.prod(xi_m)) if xi_m.size else 1.0 + 0.0j,
        z0_plus=problem.alpha * (1.0 - problem.h_prime) + problem.beta,
        z0_minus=problem.alpha * (1.0 + problem.h_prime) + problem.beta,
        calE=calE,
        omega_mean=complex(calE(problem.T)) / problem.T,
    )
