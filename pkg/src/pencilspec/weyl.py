"""Weyl function, Weyl sequence, and the omega classification.

The Weyl function M(rho) = -d1(rho)/d(rho) is meromorphic with poles at
the eigenvalues.  Its principal-part coefficients, one per window index,
form the Weyl sequence {M_n}; together with the eigenvalues they are the
spectral data that the inverse direction consumes.  The omega
classification reads the sign structure of Q at each eigenvalue group
and decides for which multiple groups the d1-jets must be carried as
extra data (I0) and for which they are recoverable (I1).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .charfn import (CharFnBundle, build_bundle, derivative_at, eval_a,
                     eval_Q)
from .model import PencilProblem, complex_from_json, complex_to_json
from .propagator import decaying_endpoints
from .rootfinder import SpectrumWindow

logger = logging.getLogger(__name__)

__all__ = [
    "WeylData", "OmegaSequence", "WeylPoleError",
    "MultiplicityMisdetectionError", "eval_weyl", "weyl_residues",
    "residues_via_contour", "extract_omega", "descending_recurrence",
    "spectral_data_to_json", "spectral_data_from_json",
]


class WeylPoleError(Exception):
    """M blows up: the evaluation point or contour sits on an eigenvalue."""


class MultiplicityMisdetectionError(Exception):
    """The leading d-jet vanishes, so the stored multiplicity is wrong."""


# ---------------------------------------------------------------------------
# point evaluation
# ---------------------------------------------------------------------------

def _pole_guard(rho, num, den):
    # |M| <= C|rho| away from the spectrum, so a 1e12 blow-up is a pole
    bad = (np.abs(den) * 1e12 <= np.abs(num)) | (den == 0)
    if np.any(bad):
        k = int(np.argmax(bad))
        raise WeylPoleError(
            f"M(rho) blows up at rho = {complex(np.ravel(rho)[k]):.9g}; "
            f"an eigenvalue sits at or next to the evaluation point")


def eval_weyl(problem, rho):
    """Weyl function M(rho) = -d1(rho)/d(rho), batched over rho.

    Accepts a PencilProblem or a CharFnBundle.  The problem route goes
    through the backward-integrated solution vanishing at T, whose
    logarithmic slope at 0 equals M identically but stays well scaled
    off the real axis where the forward frames grow exponentially.
    """
    z = np.atleast_1d(np.asarray(rho, dtype=complex))
    if isinstance(problem, CharFnBundle):
        if problem.d1 is None:
            raise ValueError("bundle lacks a d1 handle")
        num = problem.d1.values(z)
        den = problem.d.values(z)
        _pole_guard(z, num, den)
        out = -num / den
    else:
        psi0, psip0 = decaying_endpoints(problem, z)
        _pole_guard(z, psip0[0], psi0[0])
        out = psip0[0] / psi0[0]
    if np.asarray(rho).ndim == 0:
        return complex(out[0])
    return out


# ---------------------------------------------------------------------------
# Weyl sequence
# ---------------------------------------------------------------------------

@dataclass
class WeylData:
    """Weyl sequence over a spectrum window.

    entries maps every window index n to M_n.  For each group leader n
    the principal-part coefficients (M_{n+nu}, nu = 0..m-1) are kept in
    principal[n], together with the auxiliary jets that produced them:
    d_jets[n][nu]  = d^{(nu+m)}(nu_n)/(nu+m)!  and
    d1_jets[n][nu] = d1^{(nu)}(nu_n)/nu!.
    diagnostics holds, per leader, both value sets whenever the
    recurrence and the contour cross-check disagree beyond 1e-7.
    """

    entries: dict[int, complex]
    principal: dict[int, list[complex]]
    d_jets: dict[int, list[complex]]
    d1_jets: dict[int, list[complex]]
    diagnostics: dict[int, dict] = field(default_factory=dict)


def _circle_max_abs(handle, center: complex, radius: float) -> float:
    z = center + radius * np.exp(2j * np.pi * np.arange(128) / 128)
    return float(np.max(np.abs(handle.values(z))))


def descending_recurrence(d1j: list[complex], dj: list[complex]):
    """Principal-part coefficients from the jets of -d1 = M*d.

    d1j[nu] = d1^{(nu)}(nu_n)/nu!, dj[nu] = d^{(nu+m)}(nu_n)/(nu+m)!.
    Solves top-down: the tau^nu coefficient of M*d couples M_{n+m-1-nu}
    with already-known higher coefficients only.
    """
    m = len(dj)
    coeffs: list[complex] = [0j] * m
    for nu in range(m):
        acc = d1j[nu]
        for k in range(nu):
            acc += coeffs[m - 1 - k] * dj[nu - k]
        coeffs[m - 1 - nu] = -acc / dj[0]
    return coeffs


def weyl_residues(bundle: CharFnBundle, window: SpectrumWindow) -> WeylData:
    """Principal-part coefficients at every eigenvalue group.

    Simple zeros use M_n = -d1(nu_n)/d'(nu_n); multiple zeros solve the
    triangular system -d1 = M*d jet by jet, descending from the top
    coefficient M_{n+m-1} = -d1(nu_n)/d_jets[0].  Every group is
    cross-checked against the contour route and disagreements beyond
    1e-7 are recorded rather than resolved.
    """
    if bundle.d1 is None:
        raise ValueError("bundle lacks a d1 handle")
    entries: dict[int, complex] = {}
    principal: dict[int, list[complex]] = {}
    d_jets: dict[int, list[complex]] = {}
    d1_jets: dict[int, list[complex]] = {}
    diagnostics: dict[int, dict] = {}

    for n in window.I:
        e = window.entries[n]
        nu_n, m = e.nu, e.m
        r = bundle.default_radius(nu_n)
        dj = [derivative_at(bundle.d, nu_n, m + k, radius=r)
              / math.factorial(m + k) for k in range(m)]
        d1j = [derivative_at(bundle.d1, nu_n, k, radius=r)
               / math.factorial(k) for k in range(m)]
        # Cauchy scale of d_{0n}: an exact-order-m zero keeps the leading
        # jet comparable to max|d| on the circle over r^m
        scale = _circle_max_abs(bundle.d, nu_n, r) / r ** m
        if abs(dj[0]) <= 1e-8 * max(scale, 1e-280):
            raise MultiplicityMisdetectionError(
                f"leading d-jet at nu_{n} = {nu_n:.9g} is "
                f"{abs(dj[0]):.2e} against circle scale {scale:.2e}; the "
                f"zero order exceeds the stored multiplicity {m}")
        coeffs = descending_recurrence(d1j, dj)
        principal[n] = coeffs
        d_jets[n] = dj
        d1_jets[n] = d1j
        for v in range(m):
            entries[n + v] = coeffs[v]

        try:
            cont = residues_via_contour(bundle, n, window=window, radius=r)
        except WeylPoleError as exc:
            diagnostics[n] = {"recurrence": coeffs, "contour": None,
                              "note": str(exc)}
            continue
        delta = max(abs(a - b) / (1.0 + abs(a))
                    for a, b in zip(coeffs, cont))
        if delta > 1e-7:
            diagnostics[n] = {"recurrence": coeffs, "contour": cont,
                              "delta": delta}
            logger.warning(
                "Weyl coefficients at n=%d disagree between recurrence and "
                "contour by %.3e", n, delta)

    return WeylData(entries=entries, principal=principal, d_jets=d_jets,
                    d1_jets=d1_jets, diagnostics=diagnostics)


def residues_via_contour(bundle: CharFnBundle, n: int,
                         window: SpectrumWindow | None = None,
                         radius: float | None = None) -> list[complex]:
    """Principal-part coefficients of M at group leader n by quadrature.

    M_{n+nu} = (1/2 pi i) * contour integral of M(rho) (rho-nu_n)^nu
    on a circle separating nu_n from the rest of the spectrum.  Runs
    independently of the jet recurrence so the two can be compared.
    """
    win = window if window is not None else getattr(bundle, "window", None)
    if win is None:
        raise ValueError("no spectrum window attached to the bundle; "
                         "pass window=")
    if bundle.d1 is None:
        raise ValueError("bundle lacks a d1 handle")
    e = win.entries[n]
    if e.leader != n:
        raise ValueError(f"index {n} is not a group leader (leader is "
                         f"{e.leader})")
    nu_n, m = e.nu, e.m
    r = radius if radius is not None else bundle.default_radius(nu_n)

    prev = None
    N = 64
    while N <= 8192:
        tau = r * np.exp(2j * np.pi * np.arange(N) / N)
        z = nu_n + tau
        dv = bundle.d.values(z)
        adv = np.abs(dv)
        if np.min(adv) < 1e-6 * np.median(adv):
            raise WeylPoleError(
                f"contour of radius {r:.3g} around {nu_n:.9g} touches "
                f"another eigenvalue")
        Mv = -bundle.d1.values(z) / dv
        # dz = i tau dtheta turns each coefficient into a plain mean
        out = [complex(np.mean(Mv * tau ** (v + 1))) for v in range(m)]
        if prev is not None:
            shift = max(abs(a - b) / max(1.0, abs(a))
                        for a, b in zip(out, prev))
            if shift < 1e-12:
                return out
        prev = out
        N *= 2
    return prev


# ---------------------------------------------------------------------------
# omega classification
# ---------------------------------------------------------------------------

@dataclass
class OmegaSequence:
    """Sign classification of Q over the window plus the extra d1-jets.

    omega_n: per leader, 0 / +1 / -1 from Q(nu_n).
    omega_n0: d1(nu_n) per leader, kept for verification.
    omega_n_nu: per leader in I0, the raw derivatives d1^{(nu)}(nu_n)
    for nu = 1..m-1 (these cannot be reconstructed from Q when Q
    vanishes at the group, so they ride along as data).
    reports collects threshold-band ambiguities instead of silently
    picking a side.
    """

    omega_n: dict[int, int]
    omega_n0: dict[int, complex]
    omega_n_nu: dict[int, list[complex]]
    I0: list[int]
    I1: list[int]
    reports: list[str] = field(default_factory=list)


def _classify_q(q: complex, d_val: complex):
    """(omega, report-or-None) for one eigenvalue group."""
    thr = 1e-9 * (1.0 + abs(d_val))
    aq = abs(q)
    if aq <= thr:
        report = None
        if aq > 1e-3 * thr:
            report = (f"|Q| = {aq:.3e} within a decade below the zero "
                      f"threshold {thr:.3e}; omega = 0 is a judgment call")
        return 0, report
    # roundoff in Im Q must not flip the branch at arg 0 or pi: a value
    # within 1e-10 relative of the real axis is read as exactly real,
    # so arg(positive real) = 0 -> +1 and arg(negative real) = pi -> -1
    z = complex(q)
    if abs(z.imag) <= 1e-10 * aq:
        z = complex(z.real, 0.0)
    ang = math.atan2(z.imag, z.real)
    if ang < 0.0:
        ang += 2.0 * math.pi
    omega = 1 if ang < math.pi else -1
    report = None
    if aq <= 1e3 * thr:
        report = (f"|Q| = {aq:.3e} within three decades above the zero "
                  f"threshold {thr:.3e}; omega = {omega:+d} is a judgment "
                  f"call")
    return omega, report


def extract_omega(problem, window: SpectrumWindow) -> OmegaSequence:
    """Classify Q at every group leader and collect the extra d1-jets.

    Accepts a PencilProblem or a forward CharFnBundle (one that still
    knows its problem).  Installs I0/I1 into the window.
    """
    if isinstance(problem, CharFnBundle):
        bundle = problem
        if bundle.problem is None:
            raise ValueError("omega extraction needs the forward model; "
                             "this bundle carries sampled data only")
        prob = bundle.problem
    else:
        prob = problem
        bundle = build_bundle(prob)

    leaders = list(window.I)
    omega_n: dict[int, int] = {}
    omega_n0: dict[int, complex] = {}
    omega_n_nu: dict[int, list[complex]] = {}
    reports: list[str] = []
    one_ab = 1.0 + prob.alpha * prob.beta

    if leaders:
        d1_vals = bundle.d1.values(
            np.array([window.entries[n].nu for n in leaders]))
    for i, n in enumerate(leaders):
        nu_n = window.entries[n].nu
        q = eval_Q(prob, nu_n)
        d_big = eval_a(prob, nu_n) + one_ab
        omega, report = _classify_q(complex(q), complex(d_big))
        omega_n[n] = omega
        omega_n0[n] = complex(d1_vals[i])
        if report is not None:
            reports.append(f"n = {n} at nu = {nu_n:.9g}: " + report)

    I0 = [n for n in window.I_prime if omega_n[n] == 0]
    I1 = [n for n in window.I_prime if omega_n[n] != 0]
    for n in I0:
        e = window.entries[n]
        r = bundle.default_radius(e.nu)
        omega_n_nu[n] = [derivative_at(bundle.d1, e.nu, v, radius=r)
                         for v in range(1, e.m)]
    window.I0 = I0
    window.I1 = I1
    for msg in reports:
        logger.warning("omega classification: %s", msg)
    return OmegaSequence(omega_n=omega_n, omega_n0=omega_n0,
                         omega_n_nu=omega_n_nu, I0=I0, I1=I1,
                         reports=reports)


# ---------------------------------------------------------------------------
# spectral-data file
# ---------------------------------------------------------------------------

def spectral_data_to_json(window: SpectrumWindow, weyl: WeylData,
                          omega: OmegaSequence | None = None) -> dict:
    """Serializable spectral data {nu_n, M_n} plus the omega sequence."""
    entries = []
    for n in window.indices():
        e = window.entries[n]
        entries.append({
            "n": n,
            "nu": complex_to_json(e.nu),
            "m": e.m,
            "M": complex_to_json(weyl.entries[n]),
        })
    payload: dict = {"entries": entries}
    if omega is not None:
        payload["omega"] = [
            {
                "n": n,
                "omega_n": omega.omega_n[n],
                "omega_n_nu": [complex_to_json(v)
                               for v in omega.omega_n_nu.get(n, [])],
                "omega_n0": complex_to_json(omega.omega_n0[n]),
            }
            for n in sorted(omega.omega_n, key=lambda k: (k < 0, abs(k)))
        ]
    if weyl.diagnostics:
        payload["diagnostics"] = {
            str(n): {
                "recurrence": [complex_to_json(v) for v in d["recurrence"]],
                "contour": ([complex_to_json(v) for v in d["contour"]]
                            if d.get("contour") is not None else None),
                "delta": d.get("delta"),
                "note": d.get("note"),
            }
            for n, d in weyl.diagnostics.items()
        }
    return payload


def spectral_data_from_json(payload: dict):
    """Inverse of spectral_data_to_json.

    Returns (entries, omega) where entries is a list of dicts with keys
    n, nu, m, M (complex restored) and omega maps n to a dict with keys
    omega_n, omega_n_nu, omega_n0; omega is {} when absent.
    """
    entries = [
        {"n": int(e["n"]), "nu": complex_from_json(e["nu"]),
         "m": int(e["m"]), "M": complex_from_json(e["M"])}
        for e in payload["entries"]
    ]
    omega: dict[int, dict] = {}
    for o in payload.get("omega", []):
        omega[int(o["n"])] = {
            "omega_n": int(o["omega_n"]),
            "omega_n_nu": [complex_from_json(v)
                           for v in o.get("omega_n_nu", [])],
            "omega_n0": (complex_from_json(o["omega_n0"])
                         if o.get("omega_n0") is not None else None),
        }
    return entries, omega
