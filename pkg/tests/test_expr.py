import math
import pickle

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mpcckit.expr import (EvalDomainError, ExprError, ExprParseError,
                          ExprNode, VectorFunction, abs_, cos, evaluate, exp,
                          from_nested, hessian_lagrangian, jacobian, log,
                          max2, min2, num, par, powi, sin, sqrt, to_nested,
                          var)
from oracles import fd_hessian_of_gradient, fd_jacobian

RNG = np.random.default_rng(int(__import__("os").environ.get("MPCCKIT_SEED", "0")))


def vf(exprs, n, n_p=0):
    return VectorFunction(exprs, n, n_p)


class TestEval:
    def test_square(self):
        f = vf([powi(var(0), 2)], 1)
        assert evaluate(f, [3.0]) == pytest.approx([9.0])

    def test_bilinear_with_parameter(self):
        f = vf([var(0) * var(1) - par(0)], 2, 1)
        assert evaluate(f, [2.0, 3.0], [1.0]) == pytest.approx([5.0])

    def test_three_four_five(self):
        f = vf([sqrt(powi(var(0), 2) + powi(var(1), 2) + powi(par(0), 2))], 2, 1)
        assert evaluate(f, [3.0, 4.0], [0.0]) == pytest.approx([5.0])

    def test_deterministic_bitwise(self):
        f = vf([sin(var(0)) * exp(var(1)) / (1.0 + powi(var(0), 3))], 2)
        x = [0.3141, -1.718]
        a = evaluate(f, x)
        b = evaluate(f, x)
        assert a[0] == b[0]

    def test_dimension_mismatch(self):
        f = vf([var(0)], 1)
        with pytest.raises(ExprError):
            evaluate(f, [1.0, 2.0])

    def test_undeclared_variable_rejected(self):
        with pytest.raises(ExprError):
            vf([var(2)], 2)

    def test_division_by_zero_identifies_node(self):
        f = vf([var(0) / var(1)], 2)
        with pytest.raises(EvalDomainError) as err:
            evaluate(f, [1.0, 0.0])
        assert err.value.node.kind == "div"

    def test_log_nonpositive(self):
        f = vf([log(var(0))], 1)
        with pytest.raises(EvalDomainError):
            evaluate(f, [0.0])
        with pytest.raises(EvalDomainError):
            evaluate(f, [-1.0])

    def test_sqrt_negative(self):
        f = vf([sqrt(var(0))], 1)
        with pytest.raises(EvalDomainError):
            evaluate(f, [-1e-9])


class TestJacobian:
    def test_square(self):
        f = vf([powi(var(0), 2)], 1)
        np.testing.assert_allclose(jacobian(f, [3.0]), [[6.0]])

    def test_product(self):
        f = vf([var(0) * var(1)], 2)
        np.testing.assert_allclose(jacobian(f, [2.0, 3.0]), [[3.0, 2.0]])

    def test_random_polynomial_matches_fd(self):
        x0, x1, x2 = var(0), var(1), var(2)
        f = vf([
            powi(x0, 3) * x1 - 2.0 * powi(x1, 2) / (1.5 + powi(x2, 2)),
            x0 * x1 * x2 + powi(x0 - x1, 4),
        ], 3)
        for _ in range(20):
            x = RNG.uniform(-2.0, 2.0, 3)
            J = jacobian(f, x)
            Jfd = fd_jacobian(f, x)
            assert np.max(np.abs(J - Jfd)) <= 1e-6 * (1.0 + np.max(np.abs(Jfd)))

    def test_every_kind_matches_fd_away_from_kinks(self):
        # one vector function exercising each differentiable kind
        x0, x1 = var(0), var(1)
        outs = [
            x0 + x1, x0 - x1, x0 * x1, x0 / (2.0 + abs_(x1)),
            -x0, powi(x0, 3), sqrt(4.0 + powi(x0, 2)), sin(x0), cos(x1),
            exp(0.3 * x0), log(3.0 + x0), abs_(x0), min2(x0, x1), max2(x0, x1),
        ]
        f = vf(outs, 2)
        count = 0
        while count < 100:
            x = RNG.uniform(-2.0, 2.0, 2)
            # keep away from the abs/min/max kinks
            if abs(x[0]) < 1e-3 or abs(x[0] - x[1]) < 1e-3:
                continue
            count += 1
            J = jacobian(f, x)
            Jfd = fd_jacobian(f, x)
            denom = 1.0 + np.abs(Jfd)
            assert np.max(np.abs(J - Jfd) / denom) <= 1e-6

    def test_kink_conventions(self):
        f = vf([abs_(var(0)), min2(var(0), num(0.0)), max2(var(0), num(0.0)),
                sqrt(var(0))], 1)
        J = jacobian(f, [0.0])
        # abs' = 0 at 0; ties break toward the first argument; sqrt' = 0 at 0
        assert J[0, 0] == 0.0
        assert J[1, 0] == 1.0
        assert J[2, 0] == 1.0
        assert J[3, 0] == 0.0


class TestHessian:
    def test_square(self):
        f = vf([powi(var(0), 2)], 1)
        H = hessian_lagrangian(f, None, [3.0])
        np.testing.assert_allclose(H, [[2.0]])

    def test_bilinear(self):
        f = vf([var(0) * var(1)], 2)
        H = hessian_lagrangian(f, None, [1.0, 1.0])
        np.testing.assert_allclose(H, [[0.0, 1.0], [1.0, 0.0]])

    def test_random_graph_matches_fd_of_gradient(self):
        x0, x1, x2 = var(0), var(1), var(2)
        f = vf([sin(x0 * x1) + exp(0.5 * x2) * powi(x0, 2)], 3)
        c = vf([x0 * x1 * x2, powi(x1, 3) - x2 / (2.0 + powi(x0, 2))], 3)
        for _ in range(10):
            x = RNG.uniform(-1.5, 1.5, 3)
            lam = RNG.uniform(-2.0, 2.0, 2)
            H = hessian_lagrangian(f, c, x, None, 0.7, lam)
            Hfd = fd_hessian_of_gradient(f, c, x, None, 0.7, lam)
            assert np.max(np.abs(H - Hfd)) <= 1e-5 * (1.0 + np.max(np.abs(Hfd)))

    def test_exact_symmetry(self):
        x = RNG.uniform(-1.0, 1.0, 3)
        f = vf([exp(var(0) * var(1)) + powi(var(2), 3) * var(0)], 3)
        H = hessian_lagrangian(f, None, x)
        for i in range(3):
            for j in range(3):
                assert H[i, j] == H[j, i]

    def test_structurally_absent_variable_column_zero(self):
        f = vf([powi(var(0), 2)], 3)
        H = hessian_lagrangian(f, None, [1.0, 2.0, 3.0])
        assert np.all(H[1:, :] == 0.0)
        assert np.all(H[:, 1:] == 0.0)


class TestAddChainPermutation:
    @given(st.permutations(range(5)))
    @settings(max_examples=20, deadline=None)
    def test_add_chain_reassociation(self, perm):
        terms = [powi(var(i), 2) for i in range(5)]
        x = np.array([0.37, -1.2, 2.25, 0.5, -0.125])
        left = terms[0]
        for t in terms[1:]:
            left = left + t
        shuffled = terms[perm[0]]
        for i in perm[1:]:
            shuffled = shuffled + terms[i]
        a = evaluate(vf([left], 5), x)[0]
        b = evaluate(vf([shuffled], 5), x)[0]
        assert abs(a - b) <= 1e-15 * max(1.0, abs(a))

    def test_identical_association_bit_for_bit(self):
        terms = [var(i) * var((i + 1) % 4) for i in range(4)]
        e1 = ((terms[0] + terms[1]) + terms[2]) + terms[3]
        e2 = ((terms[0] + terms[1]) + terms[2]) + terms[3]
        x = [0.1, 0.7, -0.3, 2.0]
        assert evaluate(vf([e1], 4), x)[0] == evaluate(vf([e2], 4), x)[0]


class TestSerialization:
    def test_example_form(self):
        e = var(0) * var(1)
        assert to_nested(e) == ["mul", ["var", 0], ["var", 1]]

    def test_round_trip(self):
        e = sin(var(0)) + exp(par(0)) * powi(var(1), 3) - abs_(min2(var(0), num(0.5)))
        back = from_nested(to_nested(e))
        f1 = vf([e], 2, 1)
        f2 = vf([back], 2, 1)
        for _ in range(20):
            x = RNG.uniform(-2, 2, 2)
            p = RNG.uniform(-1, 1, 1)
            assert evaluate(f1, x, p)[0] == evaluate(f2, x, p)[0]

    def test_parse_error_carries_path(self):
        with pytest.raises(ExprParseError) as err:
            from_nested(["mul", ["var", 0], ["frob", 1]], path="g[2]")
        assert "g[2].mul[1]" in str(err.value)

    def test_bad_powi(self):
        with pytest.raises(ExprParseError):
            from_nested(["powi", ["var", 0], -1])

    def test_pickle_round_trip(self):
        f = vf([sin(var(0)) * par(0)], 1, 1)
        f2 = pickle.loads(pickle.dumps(f))
        assert evaluate(f2, [0.3], [2.0])[0] == evaluate(f, [0.3], [2.0])[0]


class TestNodeValidation:
    def test_arity(self):
        with pytest.raises(ExprError):
            ExprNode("add", (num(1.0),))
        with pytest.raises(ExprError):
            ExprNode("neg", (num(1.0), num(2.0)))

    def test_powi_negative_exponent(self):
        with pytest.raises(ExprError):
            powi(var(0), -2)

    def test_immutability(self):
        e = var(0)
        with pytest.raises(AttributeError):
            e.kind = "par"

    def test_constant_folding(self):
        e = num(2.0) * num(3.0) + num(1.0)
        assert e.kind == "num"
        assert e.payload == 7.0
