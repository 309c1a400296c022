"""Zero location for entire characteristic functions on rectangles.

Counting uses the argument principle.  The public counter integrates f'/f
by composite trapezoid along the rectangle boundary (f' from jets), with
node doubling until the winding stabilizes; the bulk search inside
locate_zeros tracks the continuous argument of f along adaptively refined
boundary nodes, which is the same integral evaluated as a phase sum and
needs no derivative.  The two agree wherever both converge and the
certification stage cross-checks them.

Isolation is by adaptive quadrisection.  Split lines are chosen to avoid
low |f| (a zero sitting on a cell edge would poison both children), and a
chosen line is shared exactly by the children, so counts over a partition
always sum to the parent count.  Clusters are resolved by Delves-Lyness
moments on circles: s_k = (1/2 pi i) contour-int rho^k f'/f d rho gives the
centroid s_1/s_0 and the spread |s_2/s_0 - (s_1/s_0)^2|.

Numbering follows the sign-of-real-part convention: zeros with Re >= 0 get
indices +1, +2, ... moving outward, Re < 0 get -1, -2, ... outward, each
side ordered lexicographically by (|Re|, Im).  A zero of multiplicity m
occupies m consecutive indices of its side.  The convention is a
deterministic refinement of the constraint nu_n != nu_k for nk < 0;
cross-implementation comparisons should compare zero multisets, not index
assignments.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from math import comb

import numpy as np

from .charfn import CharFnBundle, CharFnHandle, build_bundle
from .model import PencilProblem

__all__ = [
    "Rectangle",
    "BoundaryProximityError",
    "RootfinderError",
    "UnresolvedCellWarning",
    "ZeroList",
    "count_zeros",
    "locate_zeros",
    "SpectrumWindow",
    "SpectrumEntry",
    "build_window",
    "MAX_MULTIPLICITY",
    "MAX_DEPTH",
]

logger = logging.getLogger(__name__)

MAX_DEPTH = 40
MAX_MULTIPLICITY = 4
_NUDGE_FRACTION = 1e-3  # of window size, per design note
_PHASE_SPLIT_LIMIT = 26  # adaptive bisections per boundary segment


class RootfinderError(RuntimeError):
    pass


class BoundaryProximityError(RootfinderError):
    """Winding quadrature cannot separate a zero from the contour.

    Carries the offending rectangle and the unrounded winding value (nan
    when the phase tracker hit its refinement limit instead).
    """

    def __init__(self, message, rect, raw_value=float("nan")):
        super().__init__(message)
        self.rect = rect
        self.raw_value = raw_value


class UnresolvedCellWarning(UserWarning):
    """A cell could not be resolved within the refinement budget."""


@dataclass(frozen=True)
class Rectangle:
    re_lo: float
    re_hi: float
    im_lo: float
    im_hi: float

    def __post_init__(self):
        if not (self.re_lo < self.re_hi and self.im_lo < self.im_hi):
            raise ValueError(f"degenerate rectangle {self}")

    @property
    def center(self) -> complex:
        return complex(0.5 * (self.re_lo + self.re_hi),
                       0.5 * (self.im_lo + self.im_hi))

    @property
    def size(self) -> float:
        return max(self.re_hi - self.re_lo, self.im_hi - self.im_lo)

    @property
    def corners(self) -> list[complex]:
        return [complex(self.re_lo, self.im_lo), complex(self.re_hi, self.im_lo),
                complex(self.re_hi, self.im_hi), complex(self.re_lo, self.im_hi)]

    def contains(self, z: complex, pad: float = 0.0) -> bool:
        return (self.re_lo - pad <= z.real <= self.re_hi + pad
                and self.im_lo - pad <= z.imag <= self.im_hi + pad)

    def split_at(self, re_mid: float, im_mid: float) -> list["Rectangle"]:
        return [
            Rectangle(self.re_lo, re_mid, self.im_lo, im_mid),
            Rectangle(re_mid, self.re_hi, self.im_lo, im_mid),
            Rectangle(self.re_lo, re_mid, im_mid, self.im_hi),
            Rectangle(re_mid, self.re_hi, im_mid, self.im_hi),
        ]

    def to_json(self):
        return [self.re_lo, self.re_hi, self.im_lo, self.im_hi]


def _boundary_nodes(rect: Rectangle, per_side: int) -> np.ndarray:
    """Counterclockwise boundary nodes, per_side per edge, closed."""
    c = rect.corners
    segs = []
    for k in range(4):
        t = np.arange(per_side) / per_side
        segs.append(c[k] + t * (c[(k + 1) % 4] - c[k]))
    return np.concatenate(segs + [np.array([c[0]])])


# ---------------------------------------------------------------------------
# public counter: f'/f trapezoid
# ---------------------------------------------------------------------------

def count_zeros(handle: CharFnHandle, rectangle: Rectangle,
                per_side: int = 64, max_per_side: int = 2048) -> int:
    """Argument-principle count of zeros (with multiplicity) inside.

    Composite trapezoid of (1/2 pi i) f'/f along the boundary, nodes per
    side doubled until two consecutive levels agree to 0.02.  Raises
    BoundaryProximityError if the stabilized unrounded winding sits more
    than 0.1 from an integer, which indicates a zero on or hugging the
    contour: perturb the rectangle and retry.
    """
    prev = None
    n = per_side
    while True:
        nodes = _boundary_nodes(rectangle, n)
        f = handle.values(nodes)
        if np.any(f == 0):
            raise BoundaryProximityError(
                f"zero of {handle.name} lies on the contour of {rectangle}",
                rectangle)
        fp = handle.jets(nodes, 1)
        g = fp / f
        dz = np.diff(nodes)
        # a single node contribution far beyond any honest winding means a
        # node landed (numerically) on a zero: the quadrature is garbage
        # and no amount of doubling repairs it
        peak = np.max(np.abs(g[:-1] * dz)) / (2.0 * np.pi)
        if peak > 1e3:
            raise BoundaryProximityError(
                f"f'/f spikes to {peak:.2e} windings on one segment of "
                f"{rectangle}; a zero of {handle.name} sits on the contour",
                rectangle)
        raw = float(np.real(np.sum(0.5 * (g[:-1] + g[1:]) * dz) / (2j * np.pi)))
        if prev is not None and abs(raw - prev) < 0.02:
            break
        prev = raw
        if n >= max_per_side:
            break
        n *= 2
    nearest = round(raw)
    if abs(raw - nearest) > 0.1:
        raise BoundaryProximityError(
            f"winding {raw:.4f} on {rectangle} is no integer; a zero of "
            f"{handle.name} is on or near the boundary", rectangle, raw)
    return int(nearest)


# ---------------------------------------------------------------------------
# internal counter: adaptive phase tracking (values only)
# ---------------------------------------------------------------------------

def _phase_count(handle: CharFnHandle, rect: Rectangle,
                 per_side: int = 16) -> int:
    """Winding via continuous-argument tracking along the boundary.

    Segments whose phase step exceeds pi/2 are bisected; once every step is
    small the summed steps equal 2 pi times the zero count exactly (up to
    roundoff), so no rounding tolerance is needed.  A zero cluster hugging
    an edge can hide a full 2 pi swing between two nodes (the principal
    branch aliases it to a small step), so after the steps converge every
    segment is bisected once more; any swing the midpoints reveal sends
    the loop back to refining.  Persistent refinement or vanishing |f|
    means a zero (numerically) on the contour.
    """
    nodes = list(_boundary_nodes(rect, per_side))
    vals = list(handle.values(np.array(nodes)))
    floor = 1e-300
    if np.any(np.abs(np.array(vals)) < floor):
        raise BoundaryProximityError(
            f"|{handle.name}| vanishes on the contour of {rect}", rect)
    guard = 0
    validated = False

    def _insert(positions):
        nonlocal nodes, vals
        mids = np.array([0.5 * (nodes[k] + nodes[k + 1]) for k in positions])
        mid_vals = handle.values(mids)
        if np.any(np.abs(mid_vals) < floor):
            raise BoundaryProximityError(
                f"|{handle.name}| underflow on the contour of {rect}", rect)
        for j in range(len(positions) - 1, -1, -1):
            nodes.insert(positions[j] + 1, complex(mids[j]))
            vals.insert(positions[j] + 1, complex(mid_vals[j]))

    while True:
        bad = [k for k in range(len(nodes) - 1)
               if abs(np.angle(vals[k + 1] / vals[k])) > 0.5 * np.pi]
        if not bad and validated:
            break
        guard += 1
        if guard > _PHASE_SPLIT_LIMIT:
            where = nodes[bad[0]] if bad else rect.center
            raise BoundaryProximityError(
                f"phase tracking on {rect} kept refining; zero of "
                f"{handle.name} sits on the contour near "
                f"{where:.6g}", rect)
        if bad:
            validated = False
            _insert(bad)
        else:
            # convergence validation: bisect everything once
            _insert(list(range(len(nodes) - 1)))
            validated = True
    v = np.array(vals)
    steps = np.angle(v[1:] / v[:-1])
    total = float(steps.sum() / (2.0 * np.pi))
    n = round(total)
    if abs(total - n) > 0.1:
        raise BoundaryProximityError(
            f"phase total {total:.4f} on {rect} is no integer", rect, total)
    return int(n)


# ---------------------------------------------------------------------------
# cluster moments on circles
# ---------------------------------------------------------------------------

def _circle_moments(handle: CharFnHandle, center: complex, radius: float,
                    orders=(0, 1, 2), nodes: int = 128):
    """Delves-Lyness moments s_k = (1/2 pi i) int rho^k f'/f d rho.

    Centered moments (powers of z - center) are accumulated and shifted
    afterward, keeping the quadrature well scaled far from the origin.
    """
    theta = 2.0 * np.pi * np.arange(nodes) / nodes
    z = center + radius * np.exp(1j * theta)
    f = handle.values(z)
    fp = handle.jets(z, 1)
    dz = 1j * radius * np.exp(1j * theta)  # dz/dtheta
    base = (fp / f) * dz * (2.0 * np.pi / nodes) / (2j * np.pi)
    w = z - center
    c = {k: complex(np.sum((w ** k) * base)) for k in range(max(orders) + 1)}
    return {
        k: sum(comb(k, j) * (center ** (k - j)) * c[j] for j in range(k + 1))
        for k in orders
    }


# ---------------------------------------------------------------------------
# zero location
# ---------------------------------------------------------------------------

class ZeroList(list):
    """list of (nu, m) pairs; carries unresolved cells, never drops them."""

    def __init__(self, *args):
        super().__init__(*args)
        self.unresolved: list[dict] = []


def _choose_split(handle: CharFnHandle, rect: Rectangle, nudge: float,
                  attempt: int = 0):
    """Split lines chosen to stay far from the zero set.

    A line passing within a fraction of the node spacing of an
    even-multiplicity cluster hides a full 2*pi swing between boundary
    nodes, so both children miscount by compensating amounts and the sum
    check cannot see it.  Candidate lines therefore sit well off the
    midline (8% to 24% of the cell) and the pair with the largest
    bottleneck min |f| wins; at >= 8% clearance the per-segment phase
    step stays below pi/2 for multiplicities up to the cap, which makes
    the principal-branch count exact.  attempt > 0 walks down the
    ranking (used after a child count failed).
    """
    offs = np.array([-0.24, -0.16, -0.08, 0.08, 0.16, 0.24])
    re_lines = rect.center.real + offs * (rect.re_hi - rect.re_lo)
    im_lines = rect.center.imag + offs * (rect.im_hi - rect.im_lo)
    t_im = np.linspace(rect.im_lo, rect.im_hi, 33)
    t_re = np.linspace(rect.re_lo, rect.re_hi, 33)
    probes = np.concatenate([
        (re_lines[:, None] + 1j * t_im[None, :]).ravel(),
        (t_re[None, :] + 1j * im_lines[:, None]).ravel()])
    av = np.abs(handle.values(probes)).reshape(12, 33)
    score_v = av[:6].min(axis=1)
    score_h = av[6:].min(axis=1)
    floor = 1e-3 * max(np.median(av), 1e-280)

    combos = sorted(
        ((i, j) for i in range(6) for j in range(6)),
        key=lambda ij: (min(score_v[ij[0]], score_h[ij[1]]),
                        score_v[ij[0]] * score_h[ij[1]]),
        reverse=True)
    good = [ij for ij in combos if min(score_v[ij[0]], score_h[ij[1]]) > floor]
    i, j = (good or combos)[min(attempt, len(good or combos) - 1)]
    return re_lines[i], im_lines[j]


def _refine_cluster(handle: CharFnHandle, center: complex, radius: float,
                    m: int):
    """Iterated moment centroid on a circle around the cluster."""
    c = center
    for _ in range(3):
        mom = _circle_moments(handle, c, radius, orders=(0, 1, 2))
        n0 = mom[0].real
        if abs(n0 - m) > 0.2:
            break
        c_new = mom[1] / mom[0]
        spread = abs(mom[2] / mom[0] - (mom[1] / mom[0]) ** 2)
        c = c_new
        radius = max(4.0 * np.sqrt(spread), radius * 0.25)
    return c


def _newton_polish(handle: CharFnHandle, z0: complex, m: int, tol: float,
                   cap_radius: float):
    """Newton (Schroeder scaling m for multiple zeros) with step caps."""
    z = complex(z0)
    for _ in range(60):
        f = handle(z)
        fp = handle.derivative(z, 1)
        if fp == 0:
            break
        step = m * f / fp
        if abs(step) > 0.5 * cap_radius:
            step *= 0.5 * cap_radius / abs(step)
        z -= step
        if abs(step) <= 1e-15 * max(1.0, abs(z)):
            break
    return z


def locate_zeros(handle: CharFnHandle, rectangle: Rectangle,
                 tol: float = 1e-11,
                 coarse_handle: CharFnHandle | None = None) -> ZeroList:
    """All zeros of the handle inside the rectangle, with multiplicities.

    Adaptive quadrisection isolates zero clusters, circle moments place
    them, Newton (Schroeder for m > 1) polishes, and the result is
    certified: for m = 1, |f(nu)| <= tol * max(1, |f'(nu)|); for m > 1 the
    contour derivatives through order m - 1 vanish on the cluster scale
    and the count on a tight circle re-confirms m.

    Counting and isolation only need a few digits of f, so they run on
    ``coarse_handle`` when one is supplied (build_window passes a loose-
    tolerance twin of the forward handle); placement and certification
    always use the precise handle.  Cells are processed breadth-first and
    each round's boundary nodes are evaluated in one batch before the
    per-cell phase tracking touches them.

    Cells that cannot be resolved (depth > 40, multiplicity above 4, or
    persistent boundary trouble) are attached to the returned list's
    ``unresolved`` attribute and announced with UnresolvedCellWarning;
    they are never silently dropped.
    """
    coarse = coarse_handle or handle
    out = ZeroList()
    total = _phase_count(coarse, rectangle)
    if total == 0:
        return out
    cluster_scale = max(rectangle.size, 1.0)
    spread_cap = (1e-4 * cluster_scale) ** 2
    # clusters certified once but visible from several cells (a noise-split
    # multiple zero straddling an earlier split line); cells contribute
    # their counts and the totals must close
    shared: list[dict] = []

    def _register_shared(nu, m, contrib, rect):
        for entry in shared:
            if abs(entry["nu"] - nu) <= 1e-6 * max(1.0, abs(nu)):
                if entry["m"] != m:
                    out.unresolved.append({
                        "rect": rect, "count": contrib,
                        "reason": f"cluster at {nu:.9g} certified with "
                                  f"inconsistent multiplicities "
                                  f"{entry['m']} vs {m}"})
                    return
                entry["contrib"] += contrib
                return
        shared.append({"nu": nu, "m": m, "contrib": contrib, "rect": rect})

    current = [(rectangle, total, 0)]
    while current:
        # prewarm: one batched evaluation covering every cell of the round
        warm = np.concatenate([_boundary_nodes(r, 16) for r, _, _ in current])
        coarse.values(warm)
        next_round = []
        for rect, n, depth in current:
            if depth > MAX_DEPTH:
                out.unresolved.append({"rect": rect, "count": n,
                                       "reason": "max refinement depth"})
                continue
            # cluster probe: a cell whose zeros all sit in one tight
            # cluster can stop splitting regardless of n
            if rect.size < 0.5:
                c0 = rect.center
                r0 = 0.75 * rect.size
                mom = _circle_moments(coarse, c0, r0)
                k = round(mom[0].real)
                if abs(mom[0].real - k) < 0.05 and abs(mom[0].imag) < 0.05 \
                        and k >= n:
                    centroid = mom[1] / mom[0]
                    spread = abs(mom[2] / mom[0] - centroid ** 2)
                    if k == n and spread < spread_cap \
                            and rect.contains(centroid, pad=0.1 * rect.size):
                        nu, m, ok, info = _certify(handle, centroid, n, tol,
                                                   cluster_radius=r0)
                        if ok:
                            out.append((nu, m))
                        else:
                            out.unresolved.append(
                                {"rect": rect, "count": n, "reason": info})
                        continue
                    if k > n and spread < spread_cap:
                        # the covering circle spilled into neighbors and
                        # caught one tight cluster split across cells:
                        # recount on a cluster-tight circle and certify
                        # once, sharing the certificate between the cells
                        r2 = max(8.0 * np.sqrt(spread), 1e-7 * cluster_scale)
                        mom2 = _circle_moments(coarse, centroid, r2)
                        k2 = round(mom2[0].real)
                        if abs(mom2[0].real - k2) < 0.05 and k2 == k:
                            nu, m, ok, info = _certify(
                                handle, mom2[1] / mom2[0], k, tol,
                                cluster_radius=r2)
                            if ok:
                                _register_shared(nu, m, n, rect)
                            else:
                                out.unresolved.append({
                                    "rect": rect, "count": n,
                                    "reason": info})
                            continue
            if rect.size < 2e-8:
                # cannot separate further in double precision
                out.unresolved.append({"rect": rect, "count": n,
                                       "reason": "cluster below resolution"})
                continue
            for attempt in range(6):
                re_mid, im_mid = _choose_split(coarse, rect, _NUDGE_FRACTION,
                                               attempt)
                children = rect.split_at(re_mid, im_mid)
                try:
                    counts = [_phase_count(coarse, ch) for ch in children]
                except BoundaryProximityError:
                    continue
                if sum(counts) != n:
                    continue  # a zero slipped through an edge; re-nudge
                for ch, cn in zip(children, counts):
                    if cn > 0:
                        next_round.append((ch, cn, depth + 1))
                break
            else:
                if coarse is not handle:
                    # splitting failed inside the coarse noise basin;
                    # the precise handle sees a much smaller basin, so
                    # give the cluster probe one shot with it
                    mom = _circle_moments(handle, rect.center,
                                          0.75 * rect.size)
                    k = round(mom[0].real)
                    if abs(mom[0].real - k) < 0.05 \
                            and abs(mom[0].imag) < 0.05 and k >= n:
                        centroid = mom[1] / mom[0]
                        spread = abs(mom[2] / mom[0] - centroid ** 2)
                        if spread < spread_cap:
                            nu, m, ok, info = _certify(
                                handle, centroid, k, tol,
                                cluster_radius=0.75 * rect.size)
                            if ok:
                                if k == n:
                                    out.append((nu, m))
                                else:
                                    _register_shared(nu, m, n, rect)
                                continue
                out.unresolved.append({"rect": rect, "count": n,
                                       "reason": "no admissible split line"})
        current = next_round

    for entry in shared:
        if entry["contrib"] == entry["m"]:
            out.append((entry["nu"], entry["m"]))
        else:
            out.unresolved.append({
                "rect": entry["rect"], "count": entry["contrib"],
                "reason": f"cluster at {entry['nu']:.9g} (m={entry['m']}) "
                          f"collected contributions {entry['contrib']}"})
    if out.unresolved:
        warnings.warn(
            f"{len(out.unresolved)} cell(s) unresolved in {rectangle}; "
            "see ZeroList.unresolved", UnresolvedCellWarning, stacklevel=2)
    out.sort(key=lambda zm: (zm[0].real, zm[0].imag))
    return out


def _certify(handle: CharFnHandle, centroid: complex, m: int, tol: float,
             cluster_radius: float):
    """Polish and certify one cluster; returns (nu, m, ok, info)."""
    if m > MAX_MULTIPLICITY:
        return centroid, m, False, f"multiplicity {m} above cap {MAX_MULTIPLICITY}"
    if m == 1:
        nu = _newton_polish(handle, centroid, 1, tol, cluster_radius)
        fp = handle.derivative(nu, 1)
        res = abs(handle(nu))
        if res <= tol * max(1.0, abs(fp)):
            return nu, 1, True, ""
        return nu, 1, False, f"residual {res:.2e} above tol scale"
    # multiple zero: moment centroid is the accurate location (polishing a
    # noise-split cluster would land on one satellite); re-center and check
    nu = _refine_cluster(handle, centroid, cluster_radius, m)
    r = max(1e3 * abs(nu - centroid), 1e-4 * max(1.0, abs(nu)), 1e-6)
    recount = _circle_moments(handle, nu, r, orders=(0,))
    if abs(recount[0] - m) > 0.1:
        return nu, m, False, (
            f"re-count {recount[0]:.3f} on certification circle != {m}")
    from .charfn import derivative_at
    scale = max(abs(derivative_at(handle, nu, m, r)), 1e-12)
    for k in range(1, m):
        dk = derivative_at(handle, nu, k, r)
        if abs(dk) > 1e-5 * scale * r ** (m - k):
            return nu, m, False, (
                f"order-{k} derivative {abs(dk):.2e} too large for an "
                f"m={m} zero")
    return nu, m, True, ""


# ---------------------------------------------------------------------------
# spectrum window and numbering
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SpectrumEntry:
    n: int
    nu: complex
    m: int
    leader: int

    def to_json(self):
        return {"n": self.n, "nu": [self.nu.real, self.nu.imag], "m": self.m,
                "leader": self.leader}


@dataclass
class SpectrumWindow:
    """Indexed eigenvalue window with the repetition convention applied.

    entries are keyed by n over Lambda = Z\\{0} restricted to the window;
    a zero of multiplicity m occupies m consecutive indices of its side
    and every member points at its block leader.  I holds the leaders,
    I_prime the leaders of multiple blocks; I0/I1 stay None until the
    omega classification installs them.
    """

    rect: Rectangle
    entries: dict[int, SpectrumEntry]
    I: list[int]
    I_prime: list[int]
    I0: list[int] | None = None
    I1: list[int] | None = None
    ambiguities: list[str] = field(default_factory=list)
    unresolved: list[dict] = field(default_factory=list)

    def indices(self) -> list[int]:
        neg = sorted((n for n in self.entries if n < 0), reverse=True)
        pos = sorted(n for n in self.entries if n > 0)
        return neg + pos

    def entry(self, n: int) -> SpectrumEntry:
        return self.entries[n]

    def nu(self, n: int) -> complex:
        return self.entries[n].nu

    def multiplicity(self, n: int) -> int:
        return self.entries[n].m

    def block(self, n: int) -> list[int]:
        """Indices of the multiplicity block led by n."""
        e = self.entries[n]
        step = 1 if n > 0 else 1  # blocks run toward increasing index
        return [n + k * step for k in range(e.m)]

    def zero_multiset(self):
        """Sorted (nu, m) pairs, one per distinct zero."""
        pairs = [(self.entries[n].nu, self.entries[n].m) for n in self.I]
        return sorted(pairs, key=lambda zm: (zm[0].real, zm[0].imag))

    def to_json(self) -> dict:
        return {
            "window": self.rect.to_json(),
            "eigenvalues": [self.entries[n].to_json()
                            for n in self.indices()],
            "index_sets": {
                "I": self.I,
                "I_prime": self.I_prime,
                "I0": self.I0,
                "I1": self.I1,
            },
            "ambiguities": self.ambiguities,
            "unresolved": [
                {"rect": u["rect"].to_json(), "count": u["count"],
                 "reason": u["reason"]} for u in self.unresolved
            ],
        }


def _number_side(zeros: list[tuple[complex, int]], sign: int,
                 entries: dict[int, SpectrumEntry], I: list[int],
                 I_prime: list[int]) -> None:
    """Assign indices for one side; zeros come ordered outward from 0.

    Positive side: leader at the innermost index of each block, indices
    increase outward.  Negative side: the block occupies consecutive
    increasing indices ending at its innermost (least negative) member, so
    the leader is the outermost index; both follow from the single rule
    n in I  iff  nu_{n-1} != nu_n within the side.
    """
    if sign > 0:
        idx = 1
        for nu, m in zeros:
            leader = idx
            for k in range(m):
                entries[idx + k] = SpectrumEntry(n=idx + k, nu=nu, m=m,
                                                 leader=leader)
            I.append(leader)
            if m > 1:
                I_prime.append(leader)
            idx += m
    else:
        idx = -1
        for nu, m in zeros:
            leader = idx - (m - 1)
            for k in range(m):
                entries[leader + k] = SpectrumEntry(n=leader + k, nu=nu, m=m,
                                                    leader=leader)
            I.append(leader)
            if m > 1:
                I_prime.append(leader)
            idx -= m


def build_window(problem_or_bundle, R: float, H: float,
                 tol: float = 1e-11) -> SpectrumWindow:
    """Locate all zeros of d in [-R, R] x [-H, H] and index them.

    The outer boundary is expanded by up to three nudges of 1e-3 * size
    when a zero sits on it (the expansion can only add zeros, never lose
    one from the requested window).  Zeros are certified, numbered by the
    sign-of-real-part convention, and wrapped in a SpectrumWindow with I
    and I_prime computed; I0/I1 await the omega classification.
    """
    if isinstance(problem_or_bundle, PencilProblem):
        bundle = build_bundle(problem_or_bundle)
    else:
        bundle = problem_or_bundle
    handle = bundle.d if isinstance(bundle, CharFnBundle) else bundle
    coarse = handle
    if isinstance(bundle, CharFnBundle) and bundle.problem is not None:
        # counting and isolation need few digits; a loose twin is ~5x faster
        coarse = build_bundle(bundle.problem, rtol=1e-7, atol=1e-9).d
    if R <= 0 or H <= 0:
        raise ValueError("window half-sizes R, H must be positive")

    rect = Rectangle(-R, R, -H, H)
    grow = _NUDGE_FRACTION * rect.size
    zeros = None
    for _ in range(4):
        try:
            zeros = locate_zeros(handle, rect, tol, coarse_handle=coarse)
            break
        except BoundaryProximityError:
            rect = Rectangle(rect.re_lo - grow, rect.re_hi + grow,
                             rect.im_lo - grow, rect.im_hi + grow)
    if zeros is None:
        raise BoundaryProximityError(
            "could not move the window boundary off the zero set", rect)

    total = sum(m for _, m in zeros)
    counted = _phase_count(coarse, rect)
    if counted != total:
        raise RootfinderError(
            f"located multiplicity total {total} disagrees with boundary "
            f"count {counted} on {rect}")

    # side split; Re >= 0 goes to the positive indices
    scale = max(1.0, rect.size)
    pos = sorted([zm for zm in zeros if zm[0].real >= 0],
                 key=lambda zm: (zm[0].real, zm[0].imag))
    neg = sorted([zm for zm in zeros if zm[0].real < 0],
                 key=lambda zm: (-zm[0].real, zm[0].imag))

    ambiguities = []
    axis_band = 1e-8 * scale
    near_axis = [zm for zm in zeros if abs(zm[0].real) <= axis_band]
    for i, (z1, m1) in enumerate(near_axis):
        if m1 > 1:
            # certification merges a mirror pair tighter than its noise
            # scale into one multiple zero, so a multiple on the axis may
            # really be two zeros owed to opposite sides
            ambiguities.append(
                f"zero {z1:.12g} (multiplicity {m1}) lies on the imaginary "
                f"axis within {axis_band:.1e}; side assignment (hence "
                f"numbering) is convention-dependent")
        for z2, m2 in near_axis[i + 1:]:
            if abs(z1.imag - z2.imag) <= axis_band:
                ambiguities.append(
                    f"zeros {z1:.12g} and {z2:.12g} straddle the imaginary "
                    f"axis within {axis_band:.1e}; side assignment (hence "
                    f"numbering) is convention-dependent")

    entries: dict[int, SpectrumEntry] = {}
    I: list[int] = []
    I_prime: list[int] = []
    _number_side(pos, +1, entries, I, I_prime)
    _number_side(neg, -1, entries, I, I_prime)
    I.sort()
    I_prime.sort()

    window = SpectrumWindow(rect=rect, entries=entries, I=I,
                            I_prime=I_prime, ambiguities=ambiguities,
                            unresolved=list(zeros.unresolved))
    for msg in ambiguities:
        logger.warning("numbering ambiguity: %s", msg)
    if isinstance(bundle, CharFnBundle):
        bundle.install_zeros([zm[0] for zm in zeros])
        bundle.window = window
    return window
