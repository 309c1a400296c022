"""Propagator: local integration, jump maps, composition, jets."""

import cmath
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import _oracles as orc
from pencilspec import propagator as prop
from pencilspec.model import (
    IntervalPotentials,
    JumpData,
    PencilProblem,
    PotentialSpec,
)

FREE = PencilProblem(
    T=math.pi, breakpoints=(), h_prime=0.0, h=0.0, alpha=1.0, beta=1.0,
    intervals=(IntervalPotentials(),), jumps=())

J1 = PencilProblem(
    T=math.pi, breakpoints=(math.pi / 2,), h_prime=0.0, h=0.0,
    alpha=1.0, beta=1.0,
    intervals=(IntervalPotentials(), IntervalPotentials()),
    jumps=(JumpData(gamma=2.0, eta_prime=0.0, eta=0.0),))

GENERIC = PencilProblem(
    T=math.pi, breakpoints=(1.1,), h_prime=0.2, h=1j, alpha=2.0, beta=1.0,
    intervals=(
        IntervalPotentials(p=PotentialSpec.polynomial([0.3, -0.1]),
                           q=PotentialSpec.polynomial([0.2])),
        IntervalPotentials(p=PotentialSpec.polynomial([-0.2, 0.05]),
                           q=PotentialSpec.polynomial([0.1]))),
    jumps=(JumpData(gamma=2.0 + 0.3j, eta_prime=0.1, eta=0.05j),))


class TestIntegrateLocal:
    def test_free_sine_frame(self):
        init = prop.SolutionFrame(x=0.0, value=0.0, slope=1.0)
        out = prop.integrate_local(FREE, 0, 1.0, init)
        assert out.x == pytest.approx(math.pi)
        assert out.value == pytest.approx(0.0, abs=1e-11)
        assert out.slope == pytest.approx(-1.0, abs=1e-11)

    def test_free_cosine_frame_half_interval(self):
        half = PencilProblem(
            T=math.pi / 2, breakpoints=(), h_prime=0.0, h=0.0,
            alpha=1.0, beta=1.0, intervals=(IntervalPotentials(),), jumps=())
        init = prop.SolutionFrame(x=0.0, value=1.0, slope=0.0)
        out = prop.integrate_local(half, 0, 2.0, init)
        assert out.value == pytest.approx(-1.0, abs=1e-11)
        assert out.slope == pytest.approx(0.0, abs=1e-10)

    def test_constant_p_against_rk4_oracle(self):
        prob = PencilProblem(
            T=1.0, breakpoints=(), h_prime=0.0, h=0.0, alpha=1.0, beta=1.0,
            intervals=(IntervalPotentials(
                p=PotentialSpec.polynomial([1.0])),),
            jumps=())
        init = prop.SolutionFrame(x=0.0, value=0.0, slope=1.0)
        out = prop.integrate_local(prob, 0, 1.0, init)
        v, s, _ = orc.rk4_frame(prob, 1.0, "S")
        assert abs(out.value - v) < 1e-10
        assert abs(out.slope - s) < 1e-10

    def test_init_position_mismatch_rejected(self):
        init = prop.SolutionFrame(x=0.3, value=0.0, slope=1.0)
        with pytest.raises(ValueError):
            prop.integrate_local(FREE, 0, 1.0, init)

    def test_jet_order_cap(self):
        init = prop.SolutionFrame(x=0.0, value=0.0, slope=1.0)
        with pytest.raises(ValueError):
            prop.integrate_local(FREE, 0, 1.0, init, jet_order=3)

    def test_integration_failure_carries_position(self, monkeypatch):
        class FakeSol:
            success = False
            t = np.array([0.25])
            message = "step size underflow"

        monkeypatch.setattr(prop, "solve_ivp", lambda *a, **k: FakeSol())
        init = prop.SolutionFrame(x=0.0, value=0.0, slope=1.0)
        with pytest.raises(prop.IntegrationFailure) as exc:
            prop.integrate_local(FREE, 0, 1.0, init)
        assert exc.value.x == pytest.approx(0.25)


class TestApplyJump:
    def test_pure_scaling(self):
        frame = prop.SolutionFrame(x=1.0, value=1.0, slope=0.0)
        tr = prop.JumpTransfer.from_jump(JumpData(gamma=2.0), rho=1.0)
        out = prop.apply_jump(frame, tr)
        assert (out.value, out.slope) == (2.0, 0.0)

    def test_slope_kick(self):
        frame = prop.SolutionFrame(x=1.0, value=1.0, slope=1.0)
        tr = prop.JumpTransfer.from_jump(
            JumpData(gamma=1.0, eta_prime=0.0, eta=3.0), rho=1.0)
        out = prop.apply_jump(frame, tr)
        assert (out.value, out.slope) == (1.0, 4.0)

    def test_rho_dependent_kick(self):
        # gamma=2, eta'=1, eta=0 at rho=i: slope becomes i*i*1 = -1
        frame = prop.SolutionFrame(x=1.0, value=1.0, slope=0.0)
        tr = prop.JumpTransfer.from_jump(
            JumpData(gamma=2.0, eta_prime=1.0, eta=0.0), rho=1j)
        out = prop.apply_jump(frame, tr)
        assert out.value == pytest.approx(2.0)
        assert out.slope == pytest.approx(-1.0)

    def test_transfer_matrix_unimodular(self):
        tr = prop.JumpTransfer.from_jump(
            JumpData(gamma=1.7 - 0.4j, eta_prime=0.3, eta=1j), rho=2.0 + 1j)
        m = tr.as_matrix()
        det = m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
        assert det == pytest.approx(1.0)

    def test_first_jet_gains_eta_prime_term(self):
        # d/drho of the slope rule adds i*eta' * value_0
        frame = prop.SolutionFrame(
            x=1.0, value=1.0, slope=0.0, rho_jet=((0.0, 0.0),))
        tr = prop.JumpTransfer.from_jump(
            JumpData(gamma=1.0, eta_prime=2.0, eta=0.0), rho=0.5)
        out = prop.apply_jump(frame, tr)
        assert out.rho_jet[0][1] == pytest.approx(2j)

    def test_jump_against_mollified_oracle(self):
        # a steep eta-style barrier q = eta/eps on [b, b+eps] approaches the
        # gamma=1 Dirac jump as eps -> 0 (slope picks up eta * y)
        rho = 1.3
        eta = 0.8
        frames = []
        for eps in (1e-3, 1e-4):
            prob = PencilProblem(
                T=1.0 + eps, breakpoints=(1.0,), h_prime=0.0, h=0.0,
                alpha=1.0, beta=1.0,
                intervals=(
                    IntervalPotentials(),
                    IntervalPotentials(q=PotentialSpec.polynomial(
                        [eta / eps]))),
                jumps=(JumpData(gamma=1.0),))
            frames.append(prop.propagate(prob, "S", rho))
        exact_left = prop.SolutionFrame(
            x=1.0, value=cmath.sin(rho) / rho, slope=cmath.cos(rho))
        tr = prop.JumpTransfer.from_jump(
            JumpData(gamma=1.0, eta_prime=0.0, eta=-eta), rho=rho)
        jumped = prop.apply_jump(exact_left, tr)
        # mollified slope converges linearly in eps to the jump-map slope
        err = [abs(f.slope - jumped.slope) for f in frames]
        assert err[1] < 0.2 * err[0]
        assert err[1] < 5e-4


class TestPropagate:
    def test_free_S_at_two(self):
        out = prop.propagate(FREE, "S", 2.0)
        assert out.value == pytest.approx(0.0, abs=1e-11)
        assert out.slope == pytest.approx(1.0)

    def test_jump_fixture_closed_form(self):
        out = prop.propagate(J1, "S", 0.5)
        assert out.value == pytest.approx(2.5)

    def test_phi_with_constant_h(self):
        prob = PencilProblem(
            T=math.pi, breakpoints=(), h_prime=0.0, h=2.0,
            alpha=1.0, beta=1.0, intervals=(IntervalPotentials(),), jumps=())
        out = prop.propagate(prob, "phi", 1.0)
        assert out.value == pytest.approx(-1.0, abs=1e-11)

    def test_x_stop_on_breakpoint_returns_left_limit(self):
        left = prop.propagate(J1, "S", 1.3, x_stop=math.pi / 2)
        assert left.value == pytest.approx(cmath.sin(1.3 * math.pi / 2) / 1.3)
        assert left.slope == pytest.approx(cmath.cos(1.3 * math.pi / 2))

    def test_generic_against_rk4_oracle(self):
        rho = 1.3 + 0.8j
        for which in ("S", "C", "phi"):
            v, s, jets = orc.rk4_frame(GENERIC, rho, which, jet_order=2)
            fr = prop.propagate(GENERIC, which, rho, jet_order=2)
            scale = max(1.0, abs(v), abs(s))
            assert abs(fr.value - v) / scale < 1e-8
            assert abs(fr.slope - s) / scale < 1e-8
            for k in range(2):
                jscale = max(1.0, abs(jets[k][0]), abs(jets[k][1]))
                assert abs(fr.rho_jet[k][0] - jets[k][0]) / jscale < 1e-7
                assert abs(fr.rho_jet[k][1] - jets[k][1]) / jscale < 1e-7

    def test_first_jet_matches_finite_differences(self):
        rng = np.random.default_rng(7)
        for _ in range(3):
            rho = complex(rng.uniform(-3, 3), rng.uniform(-1, 1))
            step = 1e-5
            fr = prop.propagate(GENERIC, "S", rho, jet_order=1)
            plus = prop.propagate(GENERIC, "S", rho + step)
            minus = prop.propagate(GENERIC, "S", rho - step)
            fd_val = (plus.value - minus.value) / (2 * step)
            fd_slope = (plus.slope - minus.slope) / (2 * step)
            assert abs(fr.rho_jet[0][0] - fd_val) <= 1e-6 * max(1, abs(fd_val))
            assert abs(fr.rho_jet[0][1] - fd_slope) \
                <= 1e-6 * max(1, abs(fd_slope))

    def test_real_axis_continuity(self):
        # entire in rho: approaching a real point from both half-planes agrees
        rho0 = 1.7
        eps = 1e-7
        up = prop.propagate(GENERIC, "S", rho0 + 1j * eps)
        down = prop.propagate(GENERIC, "S", rho0 - 1j * eps)
        assert abs(up.value - down.value) < 1e-6
        assert abs(up.slope - down.slope) < 1e-6

    def test_wronskian_large_rho_both_half_planes(self):
        rng = np.random.default_rng(11)
        rho = rng.uniform(-50, 50, 100) + 1j * rng.uniform(-3, 3, 100)
        data = prop.endpoint_data(GENERIC, rho)
        wr = data.C[0] * data.Sp[0] - data.Cp[0] * data.S[0]
        scale = np.maximum(
            1.0, np.abs(data.C[0] * data.Sp[0]) + np.abs(data.Cp[0] * data.S[0]))
        assert np.max(np.abs(wr - 1.0) / scale) < 1e-9


class TestLemma1Compose:
    def test_identity_transfer_is_fundamental_product(self):
        rho = 1.1
        left = prop.propagate(J1, "S", rho, x_stop=math.pi / 2)
        # local frames of the second subinterval
        ic = prop.SolutionFrame(x=math.pi / 2, value=1.0, slope=0.0)
        isv = prop.SolutionFrame(x=math.pi / 2, value=0.0, slope=1.0)
        lc = prop.integrate_local(J1, 1, rho, ic)
        ls = prop.integrate_local(J1, 1, rho, isv)
        tr = prop.JumpTransfer.from_jump(JumpData(gamma=1.0), rho=rho)
        out = prop.lemma1_compose(left, lc, ls, tr)
        direct = left.value * lc.value + left.slope * ls.value
        assert out.value == pytest.approx(direct)

    def test_jump_fixture_hand_value(self):
        # at rho=1: S(b1-0)=sin(pi/2)=1, S'(b1-0)=cos(pi/2)=0;
        # composed S(T) = 2*1*cos(pi/2) = 0
        rho = 1.0
        left = prop.propagate(J1, "S", rho, x_stop=math.pi / 2)
        ic = prop.SolutionFrame(x=math.pi / 2, value=1.0, slope=0.0)
        isv = prop.SolutionFrame(x=math.pi / 2, value=0.0, slope=1.0)
        lc = prop.integrate_local(J1, 1, rho, ic)
        ls = prop.integrate_local(J1, 1, rho, isv)
        tr = prop.JumpTransfer.from_jump(J1.jumps[0], rho=rho)
        out = prop.lemma1_compose(left, lc, ls, tr)
        assert out.value == pytest.approx(0.0, abs=1e-10)

    def test_matches_propagate_with_jets(self):
        rho = 0.9 - 0.6j
        left = prop.propagate(GENERIC, "S", rho, jet_order=2, x_stop=1.1)
        ic = prop.SolutionFrame(x=1.1, value=1.0, slope=0.0)
        isv = prop.SolutionFrame(x=1.1, value=0.0, slope=1.0)
        lc = prop.integrate_local(GENERIC, 1, rho, ic, jet_order=2)
        ls = prop.integrate_local(GENERIC, 1, rho, isv, jet_order=2)
        tr = prop.JumpTransfer.from_jump(GENERIC.jumps[0], rho=rho)
        out = prop.lemma1_compose(left, lc, ls, tr)
        full = prop.propagate(GENERIC, "S", rho, jet_order=2)
        assert abs(out.value - full.value) < 1e-9
        assert abs(out.slope - full.slope) < 1e-9
        for k in range(2):
            assert abs(out.rho_jet[k][0] - full.rho_jet[k][0]) < 1e-8
            assert abs(out.rho_jet[k][1] - full.rho_jet[k][1]) < 1e-8


class TestBackwardRoute:
    def test_decaying_frame_matches_forward_phi_small_tau(self):
        rho = 1.2 + 0.4j
        psi0 = prop.decaying_frame(GENERIC, rho, x_stop=0.0)
        M_back = psi0.slope / psi0.value
        d = prop.propagate(GENERIC, "S", rho)
        d1 = prop.propagate(GENERIC, "C", rho)
        M_fwd = -d1.value / d.value
        assert abs(M_back - M_fwd) < 1e-10

    def test_backward_phi_stable_at_large_imag(self):
        # forward C + M S cancels catastrophically here; backward stays O(1)
        rho = 3.0 + 25.0j
        psi = prop.decaying_frame(FREE, rho, x_stop=math.pi / 2)
        psi0 = prop.decaying_frame(FREE, rho, x_stop=0.0)
        phi_mid = psi.value / psi0.value
        exact = cmath.exp(1j * rho * math.pi / 2)  # Phi = e^{i rho x}, free
        assert abs(phi_mid - exact) < 1e-9 * abs(exact)

    def test_batched_endpoints_match_scalar(self):
        rho = np.array([0.8 + 0.2j, 2.0 - 1.0j])
        v, s = prop.decaying_endpoints(GENERIC, rho)
        for i, r in enumerate(rho):
            fr = prop.decaying_frame(GENERIC, complex(r), x_stop=0.0)
            assert abs(v[0, i] - fr.value) < 1e-9 * max(1, abs(fr.value))
            assert abs(s[0, i] - fr.slope) < 1e-9 * max(1, abs(fr.slope))


@settings(max_examples=12, deadline=None)
@given(
    re=st.floats(-8.0, 8.0),
    im=st.floats(-2.0, 2.0),
    gamma_re=st.floats(0.4, 2.5),
    gamma_im=st.floats(-0.5, 0.5),
)
def test_wronskian_property(re, im, gamma_re, gamma_im):
    """<C, S> = 1 survives arbitrary jumps and complex rho."""
    prob = PencilProblem(
        T=2.0, breakpoints=(0.7,), h_prime=0.0, h=0.0, alpha=1.0, beta=1.0,
        intervals=(
            IntervalPotentials(p=PotentialSpec.polynomial([0.2])),
            IntervalPotentials(q=PotentialSpec.polynomial([0.1, 0.3]))),
        jumps=(JumpData(gamma=complex(gamma_re, gamma_im),
                        eta_prime=0.25, eta=0.1),))
    rho = complex(re, im)
    c = prop.propagate(prob, "C", rho)
    s = prop.propagate(prob, "S", rho)
    wr = c.value * s.slope - c.slope * s.value
    scale = max(1.0, abs(c.value * s.slope) + abs(c.slope * s.value))
    assert abs(wr - 1.0) / scale < 1e-9
