import math

import numpy as np
import pytest

from mcnoma_isac.conic import (
    ConicProgram,
    LinExpr,
    PsdConstraint,
    hermitian_to_real_embedding,
    real_embedding_to_hermitian,
    smat,
    solve,
    svec,
    svec_coefficients,
)


def random_hermitian(rng, n):
    A = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return 0.5 * (A + A.conj().T)


def test_embedding_spectrum_doubling():
    """Every eigenvalue of H appears exactly twice in the real embedding."""
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(50):
        n = int(rng.integers(2, 7))
        H = random_hermitian(rng, n)
        eig_h = np.sort(np.linalg.eigvalsh(H))
        eig_e = np.sort(np.linalg.eigvalsh(hermitian_to_real_embedding(H)))
        doubled = np.sort(np.repeat(eig_h, 2))
        worst = max(worst, float(np.max(np.abs(eig_e - doubled))))
    assert worst <= 1e-10


def test_embedding_round_trip_and_trace_identity():
    rng = np.random.default_rng(1)
    for _ in range(20):
        n = int(rng.integers(2, 6))
        A, B = random_hermitian(rng, n), random_hermitian(rng, n)
        assert np.allclose(real_embedding_to_hermitian(hermitian_to_real_embedding(A)), A)
        lhs = float(np.real(np.trace(A @ B)))
        rhs = 0.5 * float(
            np.trace(hermitian_to_real_embedding(A) @ hermitian_to_real_embedding(B))
        )
        assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-12)
    with pytest.raises(ValueError):
        hermitian_to_real_embedding(np.array([[0.0, 1.0], [0.0, 0.0]]))


def test_svec_round_trip_and_inner_product():
    rng = np.random.default_rng(2)
    for _ in range(20):
        n = int(rng.integers(1, 7))
        X = rng.standard_normal((n, n))
        X = X + X.T
        C = rng.standard_normal((n, n))
        assert np.allclose(smat(svec(X), n), X)
        # svec preserves the symmetric inner product
        assert np.dot(svec(X), svec(X)) == pytest.approx(float(np.sum(X * X)))
        assert np.dot(svec_coefficients(C), svec(X)) == pytest.approx(
            float(np.sum(0.5 * (C + C.T) * X))
        )


def test_linexpr_value_and_arithmetic():
    e = LinExpr(2.0)
    e.add_block("X", np.eye(2))
    e.add_var("v", np.array([1.0, -1.0]))
    e2 = e.scaled(3.0)
    assign = {"X": np.array([[1.0, 0.5], [0.5, 2.0]]), "v": np.array([4.0, 1.0])}
    assert e.value(assign) == pytest.approx(2.0 + 3.0 + 3.0)
    assert e2.value(assign) == pytest.approx(3 * (2.0 + 3.0 + 3.0))
    e3 = LinExpr().add_expr(e).add_expr(e, scale=-1.0)
    assert e3.value(assign) == pytest.approx(0.0)


def test_program_validation():
    prog = ConicProgram()
    prog.add_psd_block("X", 2)
    with pytest.raises(ValueError):
        prog.add_psd_block("X", 3)
    prog.add_linear(LinExpr().add_block("Y", np.eye(2)), "<=", 1.0)
    with pytest.raises(ValueError):
        prog.validate()


def test_solve_small_sdp():
    """min Tr(X) s.t. X PSD, X_00 >= 1, X_11 >= 2 has optimum 3 (diagonal)."""
    prog = ConicProgram()
    prog.add_psd_block("X", 2)
    e00 = np.zeros((2, 2)); e00[0, 0] = 1.0
    e11 = np.zeros((2, 2)); e11[1, 1] = 1.0
    prog.add_linear(LinExpr().add_block("X", e00), ">=", 1.0)
    prog.add_linear(LinExpr().add_block("X", e11), ">=", 2.0)
    prog.objective = LinExpr().add_block("X", np.eye(2), -1.0)  # maximize -Tr
    res = solve(prog)
    assert res.status == "optimal"
    assert res.objective == pytest.approx(-3.0, abs=1e-6)
    X = res.assignments["X"]
    assert np.linalg.eigvalsh(X).min() >= -1e-7


def test_solve_soc_program():
    """max x + y s.t. ||(x, y)|| <= 1 -> sqrt(2)."""
    prog = ConicProgram()
    prog.add_free_var("v", 2)
    t = LinExpr(1.0)
    xs = [
        LinExpr().add_var_entry("v", 2, 0, 1.0),
        LinExpr().add_var_entry("v", 2, 1, 1.0),
    ]
    prog.add_soc(t, xs)
    prog.objective = (
        LinExpr().add_var_entry("v", 2, 0, 1.0).add_var_entry("v", 2, 1, 1.0)
    )
    res = solve(prog)
    assert res.status == "optimal"
    assert res.objective == pytest.approx(math.sqrt(2.0), abs=1e-7)


def test_solve_exponential_cone():
    """max ell s.t. exp(ell) <= constant gives ell = log(constant)."""
    for c in (1.0, 2.5, 10.0):
        prog = ConicProgram()
        prog.add_free_var("ell", 1)
        prog.add_exp(
            LinExpr().add_var_entry("ell", 1, 0, 1.0),
            LinExpr(1.0),
            LinExpr(c),
        )
        prog.objective = LinExpr().add_var_entry("ell", 1, 0, 1.0)
        res = solve(prog)
        assert res.status == "optimal"
        assert res.objective == pytest.approx(math.log(c), abs=1e-7)


def test_solve_mixed_psd_exp():
    """Couple a PSD trace with an exponential-cone epigraph through one row."""
    prog = ConicProgram()
    prog.add_psd_block("X", 2)
    prog.add_free_var("ell", 1)
    tr = LinExpr().add_block("X", np.eye(2))
    prog.add_linear(tr, "<=", 4.0)
    # exp(ell) <= Tr(X)  so  ell <= log(4) at the optimum
    prog.add_exp(LinExpr().add_var_entry("ell", 1, 0, 1.0), LinExpr(1.0), tr.scaled(1.0))
    prog.objective = LinExpr().add_var_entry("ell", 1, 0, 1.0)
    res = solve(prog)
    assert res.status == "optimal"
    assert res.objective == pytest.approx(math.log(4.0), abs=1e-6)


def test_solve_infeasible_detected():
    prog = ConicProgram()
    prog.add_free_var("v", 1)
    prog.add_linear(LinExpr().add_var_entry("v", 1, 0, 1.0), "<=", 0.0)
    prog.add_linear(LinExpr().add_var_entry("v", 1, 0, 1.0), ">=", 1.0)
    prog.objective = LinExpr().add_var_entry("v", 1, 0, 1.0)
    res = solve(prog)
    assert res.status == "infeasible"


def test_psd_constraint_big_m_style():
    """X <= s * I with Tr(X) maximized and s <= 0.5 pins Tr(X) at 1 for 2x2."""
    prog = ConicProgram()
    prog.add_psd_block("X", 2)
    prog.add_free_var("s", 1)
    prog.add_linear(LinExpr().add_var_entry("s", 1, 0, 1.0), "<=", 0.5)
    prog.add_psd_constraint(
        PsdConstraint(
            side=2,
            const=np.zeros((2, 2)),
            block_terms=[("X", -1.0)],
            var_terms=[("s", 0, np.eye(2))],
        )
    )
    prog.objective = LinExpr().add_block("X", np.eye(2))
    res = solve(prog)
    assert res.status == "optimal"
    assert res.objective == pytest.approx(1.0, abs=1e-6)
