"""Weyl sequence extraction against closed forms and synthetic poles."""

import cmath
import math

import numpy as np
import pytest

import pencilspec.weyl as wy
from pencilspec.charfn import (CharFnBundle, CharFnHandle, Provenance,
                               build_bundle)
from pencilspec.model import (IntervalPotentials, JumpData, PencilProblem,
                              PotentialSpec)
from pencilspec.rootfinder import (Rectangle, SpectrumEntry, SpectrumWindow,
                                   build_window)

from _oracles import jump_M

FREE = PencilProblem(T=math.pi, breakpoints=(), h_prime=0.0, h=0.0,
                     alpha=1.0, beta=1.0,
                     intervals=(IntervalPotentials(p=PotentialSpec.zero(),
                                                   q=PotentialSpec.zero()),),
                     jumps=())

F1 = PencilProblem(T=math.pi, breakpoints=(), h_prime=0.0, h=0.0,
                   alpha=2.0, beta=1.0,
                   intervals=(IntervalPotentials(p=PotentialSpec.zero(),
                                                 q=PotentialSpec.zero()),),
                   jumps=())

J1 = PencilProblem(T=math.pi, breakpoints=(math.pi / 2,), h_prime=0.0, h=0.0,
                   alpha=1.0, beta=1.0,
                   intervals=(IntervalPotentials(p=PotentialSpec.zero(),
                                                 q=PotentialSpec.zero()),) * 2,
                   jumps=(JumpData(gamma=2.0),))

CONST_P = PencilProblem(
    T=math.pi, breakpoints=(), h_prime=0.0, h=0.0, alpha=1.0, beta=1.0,
    intervals=(IntervalPotentials(p=PotentialSpec.polynomial([0.4]),
                                  q=PotentialSpec.zero()),),
    jumps=())

GENERIC = PencilProblem(
    T=math.pi, breakpoints=(1.1,), h_prime=0.2, h=1j, alpha=2.0, beta=1.0,
    intervals=(
        IntervalPotentials(p=PotentialSpec.polynomial([0.3, -0.1]),
                           q=PotentialSpec.polynomial([0.2])),
        IntervalPotentials(p=PotentialSpec.polynomial([-0.2, 0.05]),
                           q=PotentialSpec.polynomial([0.1]))),
    jumps=(JumpData(gamma=2.0 + 0.3j, eta_prime=0.1, eta=0.05j),))


def synth_bundle(d_fn, d1_fn):
    """Bundle around explicit callables; the a handle is never used here."""
    dh = CharFnHandle("d", Provenance.SAMPLED, d_fn)
    d1h = CharFnHandle("d1", Provenance.SAMPLED, d1_fn)
    ah = CharFnHandle("a", Provenance.SAMPLED, d_fn)
    return CharFnBundle(ah, dh, d1h, Provenance.SAMPLED, 1.0, 1.0)


def one_block_window(nu, m):
    entries = {k: SpectrumEntry(n=k, nu=nu, m=m, leader=1)
               for k in range(1, m + 1)}
    return SpectrumWindow(rect=Rectangle(nu.real - 1, nu.real + 1,
                                         nu.imag - 1, nu.imag + 1),
                          entries=entries, I=[1],
                          I_prime=[1] if m > 1 else [])


class TestEvalWeyl:
    def test_free_half_integer(self):
        assert wy.eval_weyl(FREE, 0.5) == pytest.approx(0.0, abs=1e-11)

    def test_free_quarter(self):
        # -cos(pi/4) / (sin(pi/4) * 4) = -1/4
        assert wy.eval_weyl(FREE, 0.25) == pytest.approx(-0.25, abs=1e-11)

    def test_jump_value_and_two_point_oracle(self):
        got = wy.eval_weyl(J1, 0.5)
        assert got == pytest.approx(-0.3, abs=1e-10)
        assert got == pytest.approx(jump_M(0.5), abs=1e-10)

    def test_bundle_route_matches_problem_route(self):
        b = build_bundle(GENERIC)
        pts = np.array([0.7 + 0.2j, -1.3 + 0.5j, 2.2 - 0.4j])
        via_bundle = wy.eval_weyl(b, pts)
        via_problem = wy.eval_weyl(GENERIC, pts)
        assert np.max(np.abs(via_bundle - via_problem)) < 1e-8

    def test_pole_signal(self):
        with pytest.raises(wy.WeylPoleError):
            wy.eval_weyl(FREE, 1.0)

    def test_scalar_in_scalar_out(self):
        out = wy.eval_weyl(FREE, 0.25)
        assert isinstance(out, complex)
        batch = wy.eval_weyl(FREE, np.array([0.25, 0.5]))
        assert batch.shape == (2,)
        assert batch[0] == pytest.approx(out, abs=1e-12)

    def test_linear_growth_bound(self):
        # |M| <= C|rho| off the real axis; free M = -rho cot(pi rho)
        line = np.linspace(-12.0, 12.0, 49) + 0.4j
        vals = wy.eval_weyl(FREE, line)
        assert np.max(np.abs(vals) / np.abs(line)) < 5.0


class TestWeylResidues:
    def test_free_weyl_sequence(self):
        b = build_bundle(FREE)
        win = build_window(b, R=4.6, H=1.0)
        data = wy.weyl_residues(b, win)
        for n in win.indices():
            expect = -n / math.pi
            assert abs(data.entries[n] - expect) < 1e-8 * abs(expect)
        assert not data.diagnostics

    def test_alpha_beta_leave_sequence_alone(self):
        b = build_bundle(F1)
        win = build_window(b, R=2.6, H=1.0)
        data = wy.weyl_residues(b, win)
        for n in win.indices():
            assert data.entries[n] == pytest.approx(-n / math.pi, rel=1e-8)

    def test_top_coefficient_identity(self):
        b = build_bundle(FREE)
        win = build_window(b, R=2.5, H=1.0)
        data = wy.weyl_residues(b, win)
        for n in win.I:
            m = win.entries[n].m
            top = -data.d1_jets[n][0] / data.d_jets[n][0]
            assert data.principal[n][m - 1] == pytest.approx(top, rel=1e-12)

    def test_constant_p_simple_zeros_match_contour(self):
        b = build_bundle(CONST_P)
        win = build_window(b, R=3.4, H=1.2)
        data = wy.weyl_residues(b, win)
        assert not data.diagnostics
        for n in win.I:
            cont = wy.residues_via_contour(b, n)
            assert abs(data.principal[n][0] - cont[0]) < 1e-8 * (
                1 + abs(cont[0]))

    def test_synthetic_double_pole(self):
        g = lambda z: np.exp(z / 3.0) + 1.0
        d1 = lambda z: np.sin(z) + 2.0
        b = synth_bundle(lambda z: (z - 2.0) ** 2 * g(z), d1)
        win = one_block_window(2.0 + 0j, 2)
        data = wy.weyl_residues(b, win)
        g2 = cmath.exp(2.0 / 3.0) + 1.0
        gp2 = cmath.exp(2.0 / 3.0) / 3.0
        A = (cmath.sin(2.0) + 2.0) / g2
        B = (cmath.cos(2.0) * g2 - (cmath.sin(2.0) + 2.0) * gp2) / g2 ** 2
        assert data.principal[1][0] == pytest.approx(-B, rel=1e-9)
        assert data.principal[1][1] == pytest.approx(-A, rel=1e-9)
        assert data.entries[1] == data.principal[1][0]
        assert data.entries[2] == data.principal[1][1]

    def test_removable_point_gives_zero_coefficients(self):
        g = lambda z: np.exp(z / 3.0) + 1.0
        h = lambda z: np.cos(z / 2.0) + 2.0
        b = synth_bundle(lambda z: (z - 2.0) ** 2 * g(z),
                         lambda z: (z - 2.0) ** 2 * h(z))
        win = one_block_window(2.0 + 0j, 2)
        data = wy.weyl_residues(b, win)
        assert abs(data.principal[1][0]) < 1e-9
        assert abs(data.principal[1][1]) < 1e-9

    def test_multiplicity_misdetection(self):
        b = synth_bundle(lambda z: (z - 2.0) ** 2 * (np.exp(z / 3.0) + 1.0),
                         lambda z: np.sin(z) + 2.0)
        win = one_block_window(2.0 + 0j, 1)  # lies about the order
        with pytest.raises(wy.MultiplicityMisdetectionError):
            wy.weyl_residues(b, win)

    def test_partial_fraction_regular_part_bounded(self):
        b = build_bundle(FREE)
        win = build_window(b, R=2.5, H=1.0)
        data = wy.weyl_residues(b, win)
        nu1 = win.nu(1)

        def regular_part(radius):
            z = nu1 + radius * np.exp(2j * np.pi * np.arange(64) / 64)
            M = -b.d1.values(z) / b.d.values(z)
            for v, c in enumerate(data.principal[1]):
                M = M - c / (z - nu1) ** (v + 1)
            return np.max(np.abs(M))

        outer = regular_part(0.2)
        inner = regular_part(0.02)
        assert inner <= 10.0 * outer


class TestResiduesViaContour:
    def test_free_first_residue(self):
        b = build_bundle(FREE)
        win = build_window(b, R=2.5, H=1.0)
        out = wy.residues_via_contour(b, 1)
        assert out[0] == pytest.approx(-1.0 / math.pi, abs=1e-8)

    def test_window_rides_on_bundle(self):
        b = build_bundle(FREE)
        build_window(b, R=2.5, H=1.0)
        assert b.window is not None
        out = wy.residues_via_contour(b, -1, radius=0.2)
        assert out[0] == pytest.approx(1.0 / math.pi, abs=1e-8)

    def test_missing_window_rejected(self):
        b = synth_bundle(lambda z: z - 1.0, lambda z: z * 0 + 1.0)
        with pytest.raises(ValueError, match="window"):
            wy.residues_via_contour(b, 1)

    def test_non_leader_rejected(self):
        b = synth_bundle(lambda z: (z - 2.0) ** 2, lambda z: z * 0 + 1.0)
        win = one_block_window(2.0 + 0j, 2)
        with pytest.raises(ValueError, match="leader"):
            wy.residues_via_contour(b, 2, window=win)

    def test_contour_through_other_pole(self):
        b = build_bundle(FREE)
        win = build_window(b, R=2.5, H=1.0)
        with pytest.raises(wy.WeylPoleError):
            wy.residues_via_contour(b, 1, window=win, radius=1.0)


class TestExtractOmega:
    def test_symmetric_case_all_zero(self):
        b = build_bundle(FREE)
        win = build_window(b, R=3.5, H=1.0)
        om = wy.extract_omega(FREE, win)
        assert set(om.omega_n.values()) == {0}
        assert om.I0 == [] and om.I1 == []
        assert win.I0 == [] and win.I1 == []
        assert om.reports == []

    def test_sign_alternation(self):
        # Q(nu_n) = cos(n pi) = (-1)^n: arg 0 for even, pi for odd
        b = build_bundle(F1)
        win = build_window(b, R=4.6, H=1.0)
        om = wy.extract_omega(b, win)
        for n in win.I:
            expect = 1 if n % 2 == 0 else -1
            assert om.omega_n[n] == expect, n

    def test_omega_n0_matches_half_sum(self):
        b = build_bundle(F1)
        win = build_window(b, R=3.6, H=1.0)
        om = wy.extract_omega(F1, win)
        for n in win.I:
            # d1(nu_n) = (D + Q)/(2 alpha) = (3 + 1)(-1)^n / 4
            assert om.omega_n0[n] == pytest.approx((-1.0) ** n, abs=1e-9)

    def test_sampled_bundle_rejected(self):
        b = synth_bundle(lambda z: z - 1.0, lambda z: z * 0 + 1.0)
        win = one_block_window(1.0 + 0j, 1)
        with pytest.raises(ValueError, match="forward"):
            wy.extract_omega(b, win)

    def test_classification_thresholds(self):
        thr = 1e-9 * 2.0  # |D| = 1
        assert wy._classify_q(0.0, 1.0) == (0, None)
        omega, report = wy._classify_q(0.5 * thr, 1.0)
        assert omega == 0 and report is not None
        omega, report = wy._classify_q(1e-5 * thr, 1.0)
        assert omega == 0 and report is None
        omega, report = wy._classify_q(10.0 * thr, 1.0)
        assert omega == 1 and report is not None
        omega, report = wy._classify_q(1e6 * thr, 1.0)
        assert omega == 1 and report is None
        assert wy._classify_q(-1.0, 1.0)[0] == -1  # arg = pi
        assert wy._classify_q(cmath.exp(0.999j * cmath.pi), 1.0)[0] == 1
        assert wy._classify_q(cmath.exp(1.001j * cmath.pi), 1.0)[0] == -1
        assert wy._classify_q(-1e-2j, 1.0)[0] == -1
        # roundoff-level imaginary parts snap onto the real axis
        assert wy._classify_q(1.0 - 1e-13j, 1.0)[0] == 1
        assert wy._classify_q(-1.0 + 1e-13j, 1.0)[0] == -1

    def test_identically_zero_q_never_signed(self):
        # alpha = beta, h = h' = 0, no jumps: Q vanishes identically, so
        # every classification must return 0 regardless of rounding noise
        for alpha in (1.0, 2.0, 0.7):
            prob = PencilProblem(
                T=math.pi, breakpoints=(), h_prime=0.0, h=0.0,
                alpha=alpha, beta=alpha,
                intervals=(IntervalPotentials(
                    p=PotentialSpec.polynomial([0.2]),
                    q=PotentialSpec.polynomial([0.1])),),
                jumps=())
            b = build_bundle(prob)
            win = build_window(b, R=2.6, H=1.2)
            om = wy.extract_omega(b, win)
            assert all(v == 0 for v in om.omega_n.values())


class TestPhiIdentity:
    def test_phi_s_bracket_is_one(self):
        from pencilspec.propagator import propagate
        for rho in (0.37 + 0.21j, 1.9 - 0.4j):
            M = wy.eval_weyl(GENERIC, rho)
            for x in (GENERIC.T, 0.7 * GENERIC.T):
                C = propagate(GENERIC, "C", rho, x_stop=x)
                S = propagate(GENERIC, "S", rho, x_stop=x)
                phi_v = C.value + M * S.value
                phi_s = C.slope + M * S.slope
                bracket = phi_v * S.slope - phi_s * S.value
                assert bracket == pytest.approx(1.0, abs=1e-9)


class TestSpectralDataJson:
    def test_round_trip(self):
        b = build_bundle(F1)
        win = build_window(b, R=2.6, H=1.0)
        data = wy.weyl_residues(b, win)
        om = wy.extract_omega(b, win)
        payload = wy.spectral_data_to_json(win, data, om)
        assert set(payload) >= {"entries", "omega"}
        entry = payload["entries"][0]
        assert set(entry) == {"n", "nu", "m", "M"}
        entries, omega = wy.spectral_data_from_json(payload)
        by_n = {e["n"]: e for e in entries}
        for n in win.indices():
            assert by_n[n]["nu"] == pytest.approx(win.nu(n))
            assert by_n[n]["M"] == pytest.approx(data.entries[n])
            assert by_n[n]["m"] == win.multiplicity(n)
        for n in win.I:
            assert omega[n]["omega_n"] == om.omega_n[n]
            assert omega[n]["omega_n0"] == pytest.approx(om.omega_n0[n])

    def test_diagnostics_serialized_when_present(self):
        b = build_bundle(FREE)
        win = build_window(b, R=1.5, H=1.0)
        data = wy.weyl_residues(b, win)
        data.diagnostics[1] = {"recurrence": [1 + 0j], "contour": [1 + 1e-6j],
                               "delta": 1e-6}
        payload = wy.spectral_data_to_json(win, data)
        assert payload["diagnostics"]["1"]["delta"] == 1e-6
        # complex values serialize as decimal-string pairs (bit-exact)
        assert payload["diagnostics"]["1"]["contour"] == [["1.0", "1e-06"]]
