"""Characteristic-function bundle: a, d, d1 as entire-function handles.

d(rho) = S(T, rho) and d1(rho) = C(T, rho) are the endpoint traces of the
fundamental solutions; a(rho) = alpha phi(T) + beta S'(T) - (1 + alpha beta)
with phi = C + (i rho h' + h) S.  The shifted function
D(rho) = a(rho) + (1 + alpha beta) and the off-diagonal combination
Q(rho) = alpha phi(T) - beta S'(T) satisfy

    Q^2 = D^2 - 4 alpha beta (1 + phi'(T) S(T))

because phi S' - phi' S is the (constant, unit) Wronskian of phi and S.

Handles are immutable closures over an immutable problem, vectorized over
rho, and memoized on exact complex keys so contour quadratures that revisit
nodes pay nothing.  rho-derivatives up to order 2 come from propagator jets;
higher orders from trapezoid contour integration, which is spectrally
accurate on circles and doubles as an independent check of the jets.

NOTE on the shifted function: D is defined as a + (1 + alpha beta), i.e.
D = alpha phi(T) + beta S'(T).  Defining it as d + (1 + alpha beta) instead
would make D constant at eigenvalues and break the Q identity; do not "fix"
this back.
"""

from __future__ import annotations

import enum
import json
import logging
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from math import factorial
from typing import Callable, Sequence

import numpy as np

from .model import PencilProblem, DerivedCoefficients, derive_coefficients
from .propagator import (DEFAULT_ATOL, DEFAULT_RTOL, _propagate_batch,
                         decaying_frame, endpoint_data)

__all__ = [
    "Provenance",
    "CharFnHandle",
    "CharFnBundle",
    "ContourConvergenceWarning",
    "build_bundle",
    "sampled_bundle",
    "sampled_handle_from_json",
    "eval_a",
    "eval_d",
    "eval_d1",
    "eval_D",
    "eval_Q",
    "eval_Q_squared",
    "derivative_at",
    "shifted_handle",
    "forward_Q_handle",
    "check_asymptotics",
    "AsymptoticReport",
    "emit_grid_csv",
]

logger = logging.getLogger(__name__)


class Provenance(enum.Enum):
    FORWARD = "forward-model"
    SAMPLED = "sampled-data"


class ContourConvergenceWarning(UserWarning):
    """Contour derivative did not stabilize under node doubling."""


# ---------------------------------------------------------------------------
# shared endpoint cache
# ---------------------------------------------------------------------------

class _EndpointCache:
    """Memoized C, C', S, S' at x = T, keyed by exact complex rho.

    Two stores: plain values and jet stacks (levels 0..2).  A jet query
    backfills the plain store.  Handles built over the same cache share
    every integration.
    """

    def __init__(self, problem: PencilProblem, rtol: float, atol: float):
        self.problem = problem
        self.rtol = rtol
        self.atol = atol
        self._plain: dict[complex, tuple] = {}
        self._jets: dict[complex, tuple] = {}

    def _fill(self, missing: list[complex], jets: bool) -> None:
        if not missing:
            return
        ed = endpoint_data(self.problem, np.array(missing, dtype=complex),
                           jet_order=2 if jets else 0,
                           rtol=self.rtol, atol=self.atol)
        for i, r in enumerate(missing):
            if jets:
                self._jets[r] = (ed.C[:, i].copy(), ed.Cp[:, i].copy(),
                                 ed.S[:, i].copy(), ed.Sp[:, i].copy())
                self._plain[r] = (complex(ed.C[0, i]), complex(ed.Cp[0, i]),
                                  complex(ed.S[0, i]), complex(ed.Sp[0, i]))
            else:
                self._plain[r] = (complex(ed.C[0, i]), complex(ed.Cp[0, i]),
                                  complex(ed.S[0, i]), complex(ed.Sp[0, i]))

    def frames(self, rho: np.ndarray) -> tuple[np.ndarray, ...]:
        """Plain endpoint values (C, Cp, S, Sp), each shaped like rho."""
        keys = [complex(r) for r in np.atleast_1d(rho)]
        self._fill([r for r in dict.fromkeys(keys) if r not in self._plain],
                   jets=False)
        rows = [self._plain[r] for r in keys]
        arr = np.array(rows, dtype=complex)
        return arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3]

    def jet_frames(self, rho: complex) -> tuple[np.ndarray, ...]:
        """Jet stacks (C, Cp, S, Sp) at one rho, each of shape (3,)."""
        key = complex(rho)
        if key not in self._jets:
            self._fill([key], jets=True)
        return self._jets[key]

    def jet_frames_batch(self, rho: np.ndarray) -> tuple[np.ndarray, ...]:
        """Jet stacks for an array of rho, each of shape (3, B)."""
        keys = [complex(r) for r in np.atleast_1d(rho)]
        self._fill([r for r in dict.fromkeys(keys) if r not in self._jets],
                   jets=True)
        cols = [self._jets[r] for r in keys]
        C = np.stack([c[0] for c in cols], axis=1)
        Cp = np.stack([c[1] for c in cols], axis=1)
        S = np.stack([c[2] for c in cols], axis=1)
        Sp = np.stack([c[3] for c in cols], axis=1)
        return C, Cp, S, Sp


# ---------------------------------------------------------------------------
# handles
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CharFnHandle:
    """One entire function of rho: vectorized values plus optional jets.

    ``jet_fn(rho, order)`` returns the exact rho-derivative for
    order <= 2 when the handle is forward-built; higher orders go through
    :func:`derivative_at`.  ``jets_batch_fn`` is the vectorized variant
    used by contour quadratures.
    """

    name: str
    provenance: Provenance
    values_fn: Callable[[np.ndarray], np.ndarray]
    jet_fn: Callable[[complex, int], complex] | None = None
    jets_batch_fn: Callable[[np.ndarray, int], np.ndarray] | None = None

    def values(self, rho) -> np.ndarray:
        return self.values_fn(np.atleast_1d(np.asarray(rho, dtype=complex)))

    def __call__(self, rho):
        arr = np.asarray(rho, dtype=complex)
        vals = self.values_fn(np.atleast_1d(arr))
        return complex(vals[0]) if arr.ndim == 0 else vals.reshape(arr.shape)

    @property
    def max_jet_order(self) -> int:
        if self.jet_fn is None:
            return 0
        # sampled fits differentiate to any order; forward jets stop at 2
        return 10 if self.provenance is Provenance.SAMPLED else 2

    def jets(self, rho, order: int) -> np.ndarray:
        """Vectorized order-th derivative (order 0 = values)."""
        arr = np.atleast_1d(np.asarray(rho, dtype=complex))
        if order == 0:
            return self.values_fn(arr)
        if self.jets_batch_fn is not None and order <= self.max_jet_order:
            return self.jets_batch_fn(arr, order)
        if self.jet_fn is not None and order <= self.max_jet_order:
            return np.array([self.jet_fn(complex(r), order) for r in arr])
        return np.array([derivative_at(self, complex(r), order) for r in arr])

    def derivative(self, center: complex, order: int = 1,
                   radius: float = 0.25) -> complex:
        """rho-derivative at a point; jets when available, else contour."""
        if order == 0:
            return self(center)
        if self.jet_fn is not None and order <= self.max_jet_order:
            return self.jet_fn(complex(center), order)
        return derivative_at(self, center, order, radius)


def shifted_handle(handle: CharFnHandle, constant: complex,
                   name: str) -> CharFnHandle:
    """Handle for f + c; derivatives pass through (the constant drops)."""
    c = complex(constant)
    return CharFnHandle(
        name=name,
        provenance=handle.provenance,
        values_fn=lambda rho: handle.values_fn(rho) + c,
        jet_fn=handle.jet_fn,
        jets_batch_fn=handle.jets_batch_fn,
    )


# ---------------------------------------------------------------------------
# contour derivative service
# ---------------------------------------------------------------------------

_CONTOUR_START = 64
_CONTOUR_MAX = 4096
# relative shift (floored at scale 1) that counts as converged
_CONTOUR_FLAG = 1e-9
_CONTOUR_STOP = 1e-13


def derivative_at(handle, center: complex, order: int,
                  radius: float = 0.25) -> complex:
    """k-th derivative via trapezoid quadrature on a circle.

        f^(k)(c) = k! / (2 pi i) * contour integral of f(z)/(z-c)^{k+1}

    discretized as k!/(N r^k) * sum_j f(c + r e^{i th_j}) e^{-i k th_j}.
    The trapezoid rule is spectrally accurate for periodic integrands, so
    64 nodes usually saturate; nodes are doubled until the result shifts by
    no more than 1e-13 relative to max(1, |result|).  If the shift is still
    above 1e-9 on that scale when the node budget runs out, a
    ContourConvergenceWarning is raised (the value is still returned).

    The radius must be positive and must clear every other zero or
    singularity of the handle; callers who know the zero layout should pass
    min(0.25, half the distance to the nearest distinct zero).
    """
    if radius <= 0:
        raise ValueError(f"contour radius must be positive, got {radius}")
    center = complex(center)
    order = int(order)
    if order < 0:
        raise ValueError("derivative order must be nonnegative")
    values_fn = handle.values_fn if hasattr(handle, "values_fn") else None

    def sample(n):
        theta = 2.0 * np.pi * np.arange(n) / n
        nodes = center + radius * np.exp(1j * theta)
        if values_fn is not None:
            f = values_fn(nodes)
        else:
            f = np.array([handle(z) for z in nodes], dtype=complex)
        return (factorial(order) / (n * radius ** order)) * np.sum(
            f * np.exp(-1j * order * theta)
        )

    n = _CONTOUR_START
    prev = sample(n)
    shift_rel = np.inf
    while n < _CONTOUR_MAX:
        n *= 2
        cur = sample(n)
        shift_rel = abs(cur - prev) / max(1.0, abs(cur))
        prev = cur
        if shift_rel <= _CONTOUR_STOP:
            return complex(prev)
    if shift_rel > _CONTOUR_FLAG:
        warnings.warn(
            f"contour derivative of {getattr(handle, 'name', '?')} at "
            f"{center:.6g} (order {order}, radius {radius:.3g}) shifted "
            f"{shift_rel:.2e} on the last node doubling",
            ContourConvergenceWarning,
            stacklevel=2,
        )
    return complex(prev)


# ---------------------------------------------------------------------------
# bundle
# ---------------------------------------------------------------------------

class CharFnBundle:
    """Handles for a, d, d1 plus the derivative service.

    Forward-model bundles close over the problem and share one endpoint
    cache; sampled-data bundles wrap local polynomial fits.  A zero
    registry, installed once the spectrum window is known, drives the
    default contour radius min(0.25, half distance to the nearest distinct
    zero).
    """

    def __init__(self, a: CharFnHandle, d: CharFnHandle, d1: CharFnHandle,
                 provenance: Provenance, alpha: complex, beta: complex,
                 problem: PencilProblem | None = None,
                 h: complex | None = None, h_prime: complex | None = None):
        self.a = a
        self.d = d
        self.d1 = d1
        self.provenance = provenance
        self.alpha = complex(alpha)
        self.beta = complex(beta)
        self.problem = problem
        self.h = h
        self.h_prime = h_prime
        self.zero_registry: tuple[complex, ...] = ()
        self.window = None  # SpectrumWindow, set by the window builder

    def handle(self, name: str) -> CharFnHandle:
        try:
            return {"a": self.a, "d": self.d, "d1": self.d1}[name]
        except KeyError:
            raise ValueError(f"no handle named {name!r}") from None

    def install_zeros(self, zeros: Sequence[complex]) -> None:
        self.zero_registry = tuple(complex(z) for z in zeros)

    def default_radius(self, center: complex) -> float:
        """min(0.25, half distance to the nearest distinct registered zero)."""
        center = complex(center)
        best = 0.25
        for z in self.zero_registry:
            gap = abs(z - center)
            if gap > 1e-9:
                best = min(best, 0.5 * gap)
        return best

    def derivative(self, handle: CharFnHandle | str, center: complex,
                   order: int, radius: float | None = None) -> complex:
        """Derivative service with the registry-aware default radius."""
        h = self.handle(handle) if isinstance(handle, str) else handle
        r = self.default_radius(center) if radius is None else radius
        return h.derivative(center, order, radius=r)

    def D_handle(self) -> CharFnHandle:
        return shifted_handle(self.a, 1.0 + self.alpha * self.beta, "D")


def build_bundle(problem: PencilProblem, rtol: float = DEFAULT_RTOL,
                 atol: float = DEFAULT_ATOL) -> CharFnBundle:
    """Forward-model bundle for a validated problem."""
    cache = _EndpointCache(problem, rtol, atol)
    alpha, beta = problem.alpha, problem.beta
    hp, h = problem.h_prime, problem.h

    def d_values(rho):
        _, _, S, _ = cache.frames(rho)
        return S

    def d1_values(rho):
        C, _, _, _ = cache.frames(rho)
        return C

    def a_values(rho):
        C, _, S, Sp = cache.frames(rho)
        phi = C + (1j * rho * hp + h) * S
        return alpha * phi + beta * Sp - (1.0 + alpha * beta)

    def d_jets(rho, order):
        _, _, S, _ = cache.jet_frames_batch(rho)
        return S[order]

    def d1_jets(rho, order):
        C, _, _, _ = cache.jet_frames_batch(rho)
        return C[order]

    def a_jets(rho, order):
        C, _, S, Sp = cache.jet_frames_batch(rho)
        c = 1j * rho * hp + h
        if order == 1:
            phi_dot = C[1] + 1j * hp * S[0] + c * S[1]
            return alpha * phi_dot + beta * Sp[1]
        phi_ddot = C[2] + 2j * hp * S[1] + c * S[2]
        return alpha * phi_ddot + beta * Sp[2]

    def mk(name, vf, jbf):
        return CharFnHandle(
            name=name, provenance=Provenance.FORWARD, values_fn=vf,
            jet_fn=lambda r, k: complex(jbf(np.array([complex(r)]), k)[0]),
            jets_batch_fn=jbf)

    bundle = CharFnBundle(
        a=mk("a", a_values, a_jets),
        d=mk("d", d_values, d_jets),
        d1=mk("d1", d1_values, d1_jets),
        provenance=Provenance.FORWARD,
        alpha=alpha, beta=beta, problem=problem, h=h, h_prime=hp,
    )
    bundle._cache = cache
    return bundle


def forward_Q_handle(problem: PencilProblem, rtol: float = DEFAULT_RTOL,
                     atol: float = DEFAULT_ATOL,
                     cache: _EndpointCache | None = None) -> CharFnHandle:
    """Handle for Q(rho) = alpha phi(T) - beta S'(T), the direct route."""
    if cache is None:
        cache = _EndpointCache(problem, rtol, atol)
    alpha, beta = problem.alpha, problem.beta
    hp, h = problem.h_prime, problem.h

    def q_values(rho):
        C, _, S, Sp = cache.frames(rho)
        phi = C + (1j * rho * hp + h) * S
        return alpha * phi - beta * Sp

    def q_jets(rho, order):
        C, _, S, Sp = cache.jet_frames_batch(rho)
        c = 1j * rho * hp + h
        if order == 1:
            phi_dot = C[1] + 1j * hp * S[0] + c * S[1]
            return alpha * phi_dot - beta * Sp[1]
        phi_ddot = C[2] + 2j * hp * S[1] + c * S[2]
        return alpha * phi_ddot - beta * Sp[2]

    return CharFnHandle(
        name="Q", provenance=Provenance.FORWARD, values_fn=q_values,
        jet_fn=lambda r, k: complex(q_jets(np.array([complex(r)]), k)[0]),
        jets_batch_fn=q_jets)


# ---------------------------------------------------------------------------
# sampled-data handles (data-mode bundles)
# ---------------------------------------------------------------------------

_FIT_DEGREE = 10
_FIT_POINTS = 3 * (_FIT_DEGREE + 1)


class _LocalFit:
    """Local degree-10 polynomial fits over the nearest sample cloud.

    Accuracy contract: exact for polynomial data of degree <= 10; for
    analytic data the error is that of a truncated Taylor series over the
    covering disk of the nearest samples, so the sample grid must resolve
    the function's scale of variation.  Forward-model bundles, not this
    path, are the acceptance route.
    """

    def __init__(self, points: np.ndarray, values: np.ndarray):
        if points.size < _FIT_DEGREE + 1:
            raise ValueError(
                f"need at least {_FIT_DEGREE + 1} samples, got {points.size}")
        self.points = points
        self.values = values
        self._fits: dict[complex, tuple[complex, np.ndarray]] = {}

    def _fit_near(self, center: complex) -> tuple[complex, np.ndarray]:
        # fit key: nearest sample, so each cloud is fitted once
        order = np.argsort(np.abs(self.points - center))
        key = complex(self.points[order[0]])
        hit = self._fits.get(key)
        if hit is not None:
            return hit
        sel = order[:min(_FIT_POINTS, self.points.size)]
        pts = self.points[sel]
        mid = complex(pts.mean())
        scale = max(float(np.abs(pts - mid).max()), 1e-12)
        z = (pts - mid) / scale
        V = np.vander(z, _FIT_DEGREE + 1, increasing=True)
        coef, *_ = np.linalg.lstsq(V, self.values[sel], rcond=None)
        # rescale to coefficients in (rho - mid)
        coef = coef / scale ** np.arange(_FIT_DEGREE + 1)
        self._fits[key] = (mid, coef)
        return mid, coef

    def values_at(self, rho: np.ndarray) -> np.ndarray:
        out = np.empty(rho.shape, dtype=complex)
        for i, r in enumerate(rho):
            mid, coef = self._fit_near(complex(r))
            out[i] = np.polynomial.polynomial.polyval(complex(r) - mid, coef)
        return out

    def derivative(self, center: complex, order: int) -> complex:
        mid, coef = self._fit_near(complex(center))
        dcoef = np.polynomial.polynomial.polyder(coef, order)
        return complex(np.polynomial.polynomial.polyval(
            complex(center) - mid, dcoef))


def sampled_handle_from_json(payload: dict, name: str | None = None) -> CharFnHandle:
    """Handle from a sample file ``{"function": name, "samples": [...]}``.

    Each sample is ``{"rho": [re, im], "value": [re, im]}``.
    """
    fn_name = name or payload.get("function", "f")
    pts = np.array([s["rho"][0] + 1j * s["rho"][1] for s in payload["samples"]],
                   dtype=complex)
    vals = np.array([s["value"][0] + 1j * s["value"][1]
                     for s in payload["samples"]], dtype=complex)
    fit = _LocalFit(pts, vals)
    return CharFnHandle(
        name=fn_name,
        provenance=Provenance.SAMPLED,
        values_fn=fit.values_at,
        jet_fn=fit.derivative,  # differentiated local fit
        jets_batch_fn=lambda rho, k: np.array(
            [fit.derivative(complex(r), k) for r in rho], dtype=complex),
    )


def sampled_bundle(a_handle: CharFnHandle, d_handle: CharFnHandle,
                   alpha: complex, beta: complex,
                   d1_handle: CharFnHandle | None = None,
                   h: complex | None = None,
                   h_prime: complex | None = None) -> CharFnBundle:
    """Data-mode bundle from sampled handles; d1 is optional (the inverse
    algorithm reconstructs the d1 values it needs from a and Omega)."""
    if d1_handle is None:
        def _missing(rho):
            raise ValueError("sampled bundle carries no d1 samples")
        d1_handle = CharFnHandle(name="d1", provenance=Provenance.SAMPLED,
                                 values_fn=_missing)
    return CharFnBundle(a=a_handle, d=d_handle, d1=d1_handle,
                        provenance=Provenance.SAMPLED, alpha=alpha, beta=beta,
                        h=h, h_prime=h_prime)


# ---------------------------------------------------------------------------
# point evaluators
# ---------------------------------------------------------------------------

def _frames_at(problem: PencilProblem, rho: complex,
               rtol: float = DEFAULT_RTOL, atol: float = DEFAULT_ATOL):
    ed = endpoint_data(problem, np.array([complex(rho)]), jet_order=0,
                       rtol=rtol, atol=atol)
    return (complex(ed.C[0, 0]), complex(ed.Cp[0, 0]),
            complex(ed.S[0, 0]), complex(ed.Sp[0, 0]))


def eval_d(problem: PencilProblem, rho: complex,
           rtol: float = DEFAULT_RTOL, atol: float = DEFAULT_ATOL) -> complex:
    """d(rho) = S(T, rho)."""
    _, _, S, _ = _frames_at(problem, rho, rtol, atol)
    return S


def eval_d1(problem: PencilProblem, rho: complex,
            rtol: float = DEFAULT_RTOL, atol: float = DEFAULT_ATOL) -> complex:
    """d1(rho) = C(T, rho)."""
    C, _, _, _ = _frames_at(problem, rho, rtol, atol)
    return C


def eval_a(problem: PencilProblem, rho: complex,
           rtol: float = DEFAULT_RTOL, atol: float = DEFAULT_ATOL) -> complex:
    """a(rho) = alpha phi(T) + beta S'(T) - (1 + alpha beta)."""
    C, _, S, Sp = _frames_at(problem, rho, rtol, atol)
    phi = C + (1j * rho * problem.h_prime + problem.h) * S
    return problem.alpha * phi + problem.beta * Sp \
        - (1.0 + problem.alpha * problem.beta)


def eval_D(bundle: CharFnBundle, alpha: complex, beta: complex,
           rho: complex) -> complex:
    """D(rho) = a(rho) + (1 + alpha beta) = alpha phi(T) + beta S'(T)."""
    return bundle.a(rho) + (1.0 + complex(alpha) * complex(beta))


def eval_Q(problem: PencilProblem, rho: complex,
           rtol: float = DEFAULT_RTOL, atol: float = DEFAULT_ATOL) -> complex:
    """Q(rho) = alpha phi(T) - beta S'(T), computed directly from frames."""
    C, _, S, Sp = _frames_at(problem, rho, rtol, atol)
    phi = C + (1j * rho * problem.h_prime + problem.h) * S
    return problem.alpha * phi - problem.beta * Sp


def eval_Q_squared(bundle_or_problem, rho: complex,
                   rtol: float = DEFAULT_RTOL,
                   atol: float = DEFAULT_ATOL) -> complex:
    """Q^2(rho) = D^2(rho) - 4 alpha beta (1 + phi'(T) S(T)).

    For a problem (or forward-model bundle) the right side is assembled
    from propagated frames.  For a sampled-data bundle the phi'S product
    is reconstructed from the handles via the unit Wronskian, which needs
    h and h' attached and d(rho) != 0; at registered zeros of d the term
    vanishes and the reduced form D^2 - 4 alpha beta is used.
    """
    if isinstance(bundle_or_problem, PencilProblem):
        problem = bundle_or_problem
        C, Cp, S, Sp = _frames_at(problem, rho, rtol, atol)
        c = 1j * rho * problem.h_prime + problem.h
        phi = C + c * S
        phi_p = Cp + c * Sp
        D = problem.alpha * phi + problem.beta * Sp
        ab = problem.alpha * problem.beta
        return D * D - 4.0 * ab * (1.0 + phi_p * S)

    bundle = bundle_or_problem
    if bundle.provenance is Provenance.FORWARD and bundle.problem is not None:
        return eval_Q_squared(bundle.problem, rho, rtol, atol)

    ab = bundle.alpha * bundle.beta
    D = eval_D(bundle, bundle.alpha, bundle.beta, rho)
    for z in bundle.zero_registry:
        if abs(complex(rho) - z) <= 1e-9 * (1.0 + abs(z)):
            return D * D - 4.0 * ab
    if bundle.h is None or bundle.h_prime is None:
        raise ValueError(
            "sampled-data bundle cannot evaluate Q^2 off the zero set of d "
            "without h and h' attached (phi'S is otherwise undetermined)")
    d = bundle.d(rho)
    if abs(d) < 1e-13:
        return D * D - 4.0 * ab
    d1 = bundle.d1(rho)
    c = 1j * complex(rho) * bundle.h_prime + bundle.h
    phi = d1 + c * d
    Sp = (D - bundle.alpha * phi) / bundle.beta
    Cp = (d1 * Sp - 1.0) / d  # unit Wronskian C Sp - Cp S = 1
    phi_p = Cp + c * Sp
    return D * D - 4.0 * ab * (1.0 + phi_p * d)


# ---------------------------------------------------------------------------
# asymptotics diagnostics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AsymptoticProfile:
    """Leading large-|rho| forms in one half-plane sector.

    In the upper sector (sign +1 below is the "upper" convention) the
    leading forms at interior x in subinterval j (partial transmission
    product P_j = xi_1 ... xi_j, P_0 = 1) are

        C(x)   ~ (P_j / 2)              exp(-i (rho x + E(x)))
        S(x)   ~ -(P_j / (2 i rho))     exp(-i (rho x + E(x)))
        Phi(x) ~ (1 / P_j)              exp(+i (rho x + E(x)))
        a      ~ (z0 / 2) P_{N-1}       exp(-i (rho + omega) T)
        d      ~ -(P_{N-1} / (2 i rho)) exp(-i (rho + omega) T)

    with x-derivatives scaling by (-+ i rho) per order; the lower sector
    flips every sign in the exponents and uses the minus-branch xi, z0.
    """

    half_plane: str
    sector_delta: float
    sign: int  # +1 upper, -1 lower
    partials: np.ndarray  # P_0..P_{N-1} for the branch
    z0: complex
    omega: complex
    calE: Callable
    T: float

    def _exp_interior(self, x, rho):
        return np.exp(-1j * self.sign * (rho * x + self.calE(x)))

    def partial_at(self, x: float) -> complex:
        # subinterval index of x selects the transmission partial product
        idx = int(np.searchsorted(self._bounds, x, side="left")) - 1
        idx = min(max(idx, 0), len(self.partials) - 1)
        return complex(self.partials[idx])

    def leading(self, which: str, rho, x: float | None = None,
                nu: int = 0):
        """Leading form of C, S, Phi, a, or d; x defaults to T for a, d."""
        rho = np.asarray(rho, dtype=complex)
        s = self.sign
        if which == "a":
            return (self.z0 / 2.0) * self.partials[-1] * np.exp(
                -1j * s * (rho + self.omega) * self.T)
        if which == "d":
            return -s * (self.partials[-1] / (2j * rho)) * np.exp(
                -1j * s * (rho + self.omega) * self.T)
        if x is None:
            raise ValueError("interior profiles need an x")
        P = self.partial_at(x)
        ex = self._exp_interior(x, rho)
        if which == "C":
            return (P / 2.0) * (-1j * s * rho) ** nu * ex
        if which == "S":
            return -s * (P / (2j * rho)) * (-1j * s * rho) ** nu * ex
        if which == "Phi":
            return (1.0 / P) * (1j * s * rho) ** nu / ex
        raise ValueError(f"unknown profile {which!r}")


def _make_profile(problem: PencilProblem, der: DerivedCoefficients,
                  half_plane: str, delta: float) -> AsymptoticProfile:
    if half_plane not in ("upper", "lower"):
        raise ValueError("half_plane must be 'upper' or 'lower'")
    upper = half_plane == "upper"
    partial = der.xi_partial_plus if upper else der.xi_partial_minus
    partials = np.concatenate(([1.0 + 0.0j], np.asarray(partial,
                                                        dtype=complex)))
    prof = AsymptoticProfile(
        half_plane=half_plane,
        sector_delta=float(delta),
        sign=1 if upper else -1,
        partials=partials,
        z0=der.z0_plus if upper else der.z0_minus,
        omega=der.omega_mean,
        calE=der.calE,
        T=problem.T,
    )
    object.__setattr__(prof, "_bounds", np.asarray(problem.bounds))
    return prof


@dataclass
class AsymptoticReport:
    """Per-ray deviations and log-log decay slopes, plus bound constants."""

    half_plane: str
    delta: float
    rays: list[dict]
    slopes: dict[str, float]          # pooled per-function fit
    bound_constants: dict[str, float]  # fitted C for bounds on S, C, Phi
    profile: AsymptoticProfile

    def to_json(self) -> dict:
        return {
            "half_plane": self.half_plane,
            "delta": self.delta,
            "rays": self.rays,
            "slopes": self.slopes,
            "bound_constants": self.bound_constants,
        }


def _fit_slope(mags, devs):
    mags = np.asarray(mags, dtype=float)
    devs = np.asarray(devs, dtype=float)
    keep = devs > 0
    if keep.sum() < 2:
        return float("nan")
    return float(np.polyfit(np.log(mags[keep]), np.log(devs[keep]), 1)[0])


def check_asymptotics(problem: PencilProblem, half_plane: str = "upper",
                      delta: float = 0.3,
                      ray_samples: Sequence[float] | int = (6, 9, 14, 21, 32, 48),
                      rtol: float = DEFAULT_RTOL,
                      atol: float = DEFAULT_ATOL) -> AsymptoticReport:
    """Compare forward values against leading asymptotic forms on sector rays.

    Three rays (both sector edges and the mid-ray) are sampled at the given
    magnitudes.  For a and d the relative deviation |forward/leading - 1| is
    recorded per sample together with a pooled log-log decay slope; the
    interior profiles C, S, Phi are checked at subinterval midpoints, and
    the growth bounds on S, C (x-derivative orders 0 and 1) and Phi are
    reported as fitted constants (sup of the bound-scaled magnitudes).

    Problems with p = q = 0 and no jumps have identically vanishing 1/rho
    corrections, so their deviations hit integrator noise and the slope fit
    is meaningless (and reported as seen); the decay-slope acceptance check
    uses a problem with p != 0.
    """
    if not (0 < delta < np.pi / 2):
        raise ValueError("delta must lie in (0, pi/2)")
    if isinstance(ray_samples, int):
        mags = tuple(6.0 * 1.5 ** k for k in range(ray_samples))
    else:
        mags = tuple(float(m) for m in ray_samples)
    der = derive_coefficients(problem)
    prof = _make_profile(problem, der, half_plane, delta)
    base = 0.0 if half_plane == "upper" else np.pi
    args = [base + delta, base + np.pi / 2, base + np.pi - delta]

    mid_x = [0.5 * (problem.bounds[k] + problem.bounds[k + 1])
             for k in range(problem.n_intervals)]

    rays = []
    pooled: dict[str, list] = {"a": [], "d": []}
    bound_sup = {"S0": 0.0, "S1": 0.0, "C0": 0.0, "C1": 0.0,
                 "Phi0": 0.0, "Phi1": 0.0, "M": 0.0}
    for arg in args:
        rho = np.array([m * np.exp(1j * arg) for m in mags], dtype=complex)
        ed = endpoint_data(problem, rho, jet_order=0, rtol=rtol, atol=atol)
        c = 1j * rho * problem.h_prime + problem.h
        phi_T = ed.C[0] + c * ed.S[0]
        a_vals = problem.alpha * phi_T + problem.beta * ed.Sp[0] \
            - (1.0 + problem.alpha * problem.beta)
        d_vals = ed.S[0]
        dev_a = np.abs(a_vals / prof.leading("a", rho) - 1.0)
        dev_d = np.abs(d_vals / prof.leading("d", rho) - 1.0)
        pooled["a"].append(dev_a)
        pooled["d"].append(dev_d)

        # interior profiles at subinterval midpoints, largest magnitude only
        # (one propagation per x; enough to exercise the partial products)
        r_big = rho[-1]
        interior = {}
        M_big = -ed.C[0, -1] / ed.S[0, -1]
        tau = abs(r_big.imag)
        bound_sup["M"] = max(bound_sup["M"], abs(M_big) / abs(r_big))
        # Phi through backward transport: the forward combination C + M S
        # cancels to rubbish once exp(2|tau|x) swamps the integrator floor
        psi0 = decaying_frame(problem, r_big, x_stop=0.0, rtol=rtol, atol=atol)
        for x in mid_x:
            Y = _propagate_batch(problem, ["C", "S"], np.array([r_big]), 0,
                                 rtol, atol, x_stop=float(x))
            Cx, Cpx = complex(Y[0, 0, 0, 0]), complex(Y[0, 0, 1, 0])
            Sx, Spx = complex(Y[1, 0, 0, 0]), complex(Y[1, 0, 1, 0])
            psi = decaying_frame(problem, r_big, x_stop=float(x),
                                 rtol=rtol, atol=atol)
            Phix = psi.value / psi0.value
            Phipx = psi.slope / psi0.value
            interior[f"x={x:.4g}"] = {
                "C": abs(Cx / prof.leading("C", r_big, x=x) - 1.0),
                "S": abs(Sx / prof.leading("S", r_big, x=x) - 1.0),
                "Phi": abs(Phix / prof.leading("Phi", r_big, x=x) - 1.0),
            }
            ex = np.exp(tau * x)
            bound_sup["S0"] = max(bound_sup["S0"], abs(Sx) * abs(r_big) / ex)
            bound_sup["S1"] = max(bound_sup["S1"], abs(Spx) / ex)
            bound_sup["C0"] = max(bound_sup["C0"], abs(Cx) / ex)
            bound_sup["C1"] = max(bound_sup["C1"], abs(Cpx) / (abs(r_big) * ex))
            bound_sup["Phi0"] = max(bound_sup["Phi0"], abs(Phix) * ex)
            bound_sup["Phi1"] = max(bound_sup["Phi1"],
                                    abs(Phipx) * ex / abs(r_big))
        rays.append({
            "arg": float(arg),
            "magnitudes": list(mags),
            "deviation_a": [float(v) for v in dev_a],
            "deviation_d": [float(v) for v in dev_d],
            "slope_a": _fit_slope(mags, dev_a),
            "slope_d": _fit_slope(mags, dev_d),
            "interior_deviations": interior,
        })

    slopes = {
        name: _fit_slope(np.tile(mags, len(args)), np.concatenate(vals))
        for name, vals in pooled.items()
    }
    return AsymptoticReport(
        half_plane=half_plane, delta=float(delta), rays=rays,
        slopes=slopes, bound_constants=bound_sup, profile=prof,
    )


# ---------------------------------------------------------------------------
# CSV grid emission
# ---------------------------------------------------------------------------

def _grid_values(problem_json: str, rho_list: list[complex]):
    from .model import problem_from_json
    problem = problem_from_json(json.loads(problem_json))
    bundle = build_bundle(problem)
    rho = np.array(rho_list, dtype=complex)
    return bundle.d.values(rho), bundle.d1.values(rho), bundle.a.values(rho)


def emit_grid_csv(problem: PencilProblem, path, re_range, im_range,
                  nx: int, ny: int, jobs: int = 1) -> None:
    """Write a CSV grid of d, d1, a over a rho rectangle.

    Header: re_rho,im_rho,re_d,im_d,re_d1,im_d1,re_a,im_a.  Values carry 17
    significant digits.  jobs > 1 distributes row blocks over processes.
    """
    res = np.linspace(re_range[0], re_range[1], nx)
    ims = np.linspace(im_range[0], im_range[1], ny)
    grid = [complex(r, i) for i in ims for r in res]
    pj = json.dumps(problem.to_json())
    if jobs > 1:
        blocks = [grid[i::jobs] for i in range(jobs)]
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            parts = list(ex.map(_grid_values, [pj] * jobs, blocks))
        d = np.empty(len(grid), complex)
        d1 = np.empty(len(grid), complex)
        a = np.empty(len(grid), complex)
        for i, (dv, d1v, av) in enumerate(parts):
            d[i::jobs], d1[i::jobs], a[i::jobs] = dv, d1v, av
    else:
        d, d1, a = _grid_values(pj, grid)
    fmt = "{:.17g}"
    with open(path, "w") as fh:
        fh.write("re_rho,im_rho,re_d,im_d,re_d1,im_d1,re_a,im_a\n")
        for i, z in enumerate(grid):
            row = [z.real, z.imag, d[i].real, d[i].imag,
                   d1[i].real, d1[i].imag, a[i].real, a[i].imag]
            fh.write(",".join(fmt.format(v) for v in row) + "\n")
