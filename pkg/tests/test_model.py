"""Problem model: validation, derived coefficients, serialization."""

import json
import math

import numpy as np
import pytest

from pencilspec.model import (
    IntervalPotentials,
    JumpData,
    PencilProblem,
    PotentialSpec,
    ProblemValidationError,
    complex_from_json,
    complex_to_json,
    derive_coefficients,
    problem_from_json,
    problem_to_json,
    validate_problem,
)


def make_problem(**kw):
    base = dict(
        T=math.pi, breakpoints=(), h_prime=0.0, h=0.0, alpha=1.0, beta=1.0,
        intervals=(IntervalPotentials(),), jumps=())
    base.update(kw)
    return PencilProblem(**base)


class TestValidation:
    def test_free_problem_is_clean(self):
        assert validate_problem(make_problem()) == []

    def test_z0_plus_degeneracy_flagged(self):
        # alpha*(1 - h') + beta = 1 - 1 = 0
        report = validate_problem(make_problem(beta=-1.0))
        assert any("z0^+" in line for line in report)

    def test_xi_plus_degeneracy_flagged(self):
        # (2 + 0.5)/2 - 2.5/2 = 0
        prob = make_problem(
            breakpoints=(1.0,),
            intervals=(IntervalPotentials(), IntervalPotentials()),
            jumps=(JumpData(gamma=2.0, eta_prime=2.5, eta=0.0),))
        report = validate_problem(prob)
        assert any("xi^+" in line for line in report)

    def test_zero_gamma_flagged(self):
        prob = make_problem(
            breakpoints=(1.0,),
            intervals=(IntervalPotentials(), IntervalPotentials()),
            jumps=(JumpData(gamma=0.0, eta_prime=0.0, eta=0.0),))
        assert any("gamma" in line for line in validate_problem(prob))

    def test_breakpoint_on_endpoint_rejected(self):
        prob = make_problem(
            breakpoints=(math.pi,),
            intervals=(IntervalPotentials(), IntervalPotentials()),
            jumps=(JumpData(gamma=2.0, eta_prime=0.0, eta=0.0),))
        assert any("strictly inside" in line for line in validate_problem(prob))

    def test_breakpoints_must_increase(self):
        prob = make_problem(
            breakpoints=(1.5, 1.0),
            intervals=(IntervalPotentials(),) * 3,
            jumps=(JumpData(gamma=2.0), JumpData(gamma=3.0)))
        assert any("increasing" in line for line in validate_problem(prob))

    def test_interval_count_mismatch(self):
        prob = make_problem(
            breakpoints=(1.0,), intervals=(IntervalPotentials(),),
            jumps=(JumpData(gamma=2.0),))
        assert any("interval" in line for line in validate_problem(prob))

    def test_multiple_violations_reported_together(self):
        report = validate_problem(make_problem(alpha=0.0, T=-1.0))
        assert len(report) >= 2


class TestDerivedCoefficients:
    def test_xi_for_gamma_two(self):
        prob = make_problem(
            breakpoints=(1.0,),
            intervals=(IntervalPotentials(), IntervalPotentials()),
            jumps=(JumpData(gamma=2.0, eta_prime=0.0, eta=0.0),))
        der = derive_coefficients(prob)
        assert der.xi_plus[0] == pytest.approx(1.25)
        assert der.xi_minus[0] == pytest.approx(1.25)
        assert der.xi_product_plus == pytest.approx(1.25)

    def test_z0_values(self):
        der = derive_coefficients(make_problem(alpha=2.0, beta=1.0))
        assert der.z0_plus == pytest.approx(3.0)
        assert der.z0_minus == pytest.approx(3.0)

    def test_zero_p_gives_zero_phase(self):
        der = derive_coefficients(make_problem())
        assert der.omega_mean == 0
        x = np.linspace(0.0, math.pi, 7)
        assert np.allclose(der.calE(x), 0.0)

    def test_constant_p_phase_integral(self):
        prob = make_problem(
            intervals=(IntervalPotentials(
                p=PotentialSpec.polynomial([0.4])),))
        der = derive_coefficients(prob)
        # E(x) = 0.2 x, omega = E(T)/T = 0.2
        assert der.calE(1.0) == pytest.approx(0.2)
        assert der.omega_mean == pytest.approx(0.2)

    def test_piecewise_phase_is_continuous_across_jump(self):
        prob = make_problem(
            breakpoints=(1.0,),
            intervals=(
                IntervalPotentials(p=PotentialSpec.polynomial([1.0])),
                IntervalPotentials(p=PotentialSpec.polynomial([0.0, 2.0]))),
            jumps=(JumpData(gamma=2.0),))
        der = derive_coefficients(prob)
        eps = 1e-9
        left = der.calE(1.0 - eps)
        right = der.calE(1.0 + eps)
        assert abs(left - right) < 1e-7
        # int_0^1 1 dt = 1; plus int over [1, x] of 2(t-1)
        assert der.calE(2.0) == pytest.approx(0.5 * (1.0 + 1.0))

    def test_cumulative_partial_products(self):
        prob = make_problem(
            breakpoints=(1.0, 2.0),
            intervals=(IntervalPotentials(),) * 3,
            jumps=(JumpData(gamma=2.0, eta_prime=0.5),
                   JumpData(gamma=1.0 + 1.0j)))
        der = derive_coefficients(prob)
        assert der.xi_partial_plus[1] == pytest.approx(
            der.xi_plus[0] * der.xi_plus[1])
        assert der.xi_product_minus == pytest.approx(
            der.xi_minus[0] * der.xi_minus[1])

    def test_rejects_invalid_problem(self):
        with pytest.raises(ProblemValidationError) as exc:
            derive_coefficients(make_problem(beta=-1.0))
        assert any("z0^+" in line for line in exc.value.report)


class TestPotentialSpec:
    def test_polynomial_local_coordinates(self):
        spec = PotentialSpec.polynomial([1.0, 2.0, 3.0])
        f = spec.as_callable(2.0)
        t = 0.7
        assert f(t) == pytest.approx(1.0 + 2.0 * t + 3.0 * t * t)

    def test_chebyshev_samples_reproduce_polynomial(self):
        L = 1.5
        nodes = PotentialSpec.chebyshev_nodes(5, L)
        target = lambda t: 0.3 - 0.2 * t + 0.05 * t ** 3
        spec = PotentialSpec("chebyshev-samples", [target(t) for t in nodes])
        f = spec.as_callable(L)
        ts = np.linspace(0.0, L, 11)
        assert np.allclose(f(ts), target(ts), atol=1e-12)

    def test_antiderivative_starts_at_zero(self):
        spec = PotentialSpec.polynomial([2.0, 1.0])
        F = spec.antiderivative(3.0)
        assert F(0.0) == pytest.approx(0.0)
        assert F(2.0) == pytest.approx(2.0 * 2.0 + 0.5 * 4.0)

    def test_empty_coefficients_flagged_by_validation(self):
        prob = make_problem(
            intervals=(IntervalPotentials(
                p=PotentialSpec("polynomial", ())),))
        assert any("non-empty" in line for line in validate_problem(prob))


class TestSerialization:
    def test_complex_json_round_trip_bit_exact(self):
        for z in (1.0 + 2.0j, -0.1 + 0.30000000000000004j, 2.5e-17 - 1e300j):
            assert complex_from_json(complex_to_json(z)) == z

    def test_problem_round_trip(self):
        prob = make_problem(
            T=math.pi, breakpoints=(0.9, 2.2),
            h_prime=0.2, h=1j, alpha=2.0, beta=1.0,
            intervals=(
                IntervalPotentials(p=PotentialSpec.polynomial([0.3, -0.1]),
                                   q=PotentialSpec.polynomial([0.2])),
                IntervalPotentials(q=PotentialSpec(
                    "chebyshev-samples", [0.1, 0.2, 0.15])),
                IntervalPotentials()),
            jumps=(JumpData(gamma=2.0 + 0.3j, eta_prime=0.1, eta=0.05j),
                   JumpData(gamma=0.5, eta_prime=-0.2, eta=0.0)))
        data = problem_to_json(prob)
        # must survive an actual JSON text round trip, not just dict copying
        back = problem_from_json(json.loads(json.dumps(data)))
        assert back.T == prob.T
        assert back.breakpoints == prob.breakpoints
        assert back.h_prime == prob.h_prime and back.h == prob.h
        assert back.alpha == prob.alpha and back.beta == prob.beta
        for iv0, iv1 in zip(prob.intervals, back.intervals):
            assert iv0.p.kind == iv1.p.kind
            assert iv0.p.coefficients == iv1.p.coefficients
            assert iv0.q.coefficients == iv1.q.coefficients
        for j0, j1 in zip(prob.jumps, back.jumps):
            assert (j0.gamma, j0.eta_prime, j0.eta) == \
                (j1.gamma, j1.eta_prime, j1.eta)

    def test_complex_fields_serialize_as_pairs(self):
        data = problem_to_json(make_problem(h=1j))
        assert isinstance(data["h"], list) and len(data["h"]) == 2
