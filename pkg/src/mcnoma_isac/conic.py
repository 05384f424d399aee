"""Solver-agnostic conic intermediate representation and the solver adapter.

A program holds real symmetric PSD variable blocks (complex Hermitian data is
carried through the standard real embedding), free real variables, linear
constraints, second-order cones, affine PSD constraints, and a linear
objective (maximization sense).  The adapter lowers the IR to Clarabel's
`b - A x in K` form; no other module imports the solver.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

SQRT2 = math.sqrt(2.0)


# ---------------------------------------------------------------------------
# complex <-> real embedding


def hermitian_to_real_embedding(H: np.ndarray) -> np.ndarray:
    """E(H) = [[Re H, -Im H], [Im H, Re H]]; PSD iff H is, spectrum doubled.

    For Hermitian A, B: Tr(A B) = 0.5 * Tr(E(A) E(B)) -- the 1/2 factor is
    applied wherever embedded coefficients are generated.
    """
    H = np.asarray(H)
    scale = max(1.0, np.abs(H).max())
    if np.abs(H - H.conj().T).max() > 1e-10 * scale:
        raise ValueError("matrix is not Hermitian")
    re, im = H.real, H.imag
    return np.block([[re, -im], [im, re]])


def real_embedding_to_hermitian(X: np.ndarray) -> np.ndarray:
    """Inverse of the embedding, averaging over the symplectic symmetry."""
    m = X.shape[0]
    if m % 2:
        raise ValueError("embedded matrix must have even side")
    n = m // 2
    re = 0.5 * (X[:n, :n] + X[n:, n:])
    im = 0.5 * (X[n:, :n] - X[:n, n:])
    H = re + 1j * im
    return 0.5 * (H + H.conj().T)


# ---------------------------------------------------------------------------
# linear expressions over named variables


class LinExpr:
    """Affine functional: sum over PSD blocks of Tr(C_b X_b) + c^T v + const.

    Coefficients on PSD blocks are full symmetric matrices C (meaning
    sum_ij C_ij X_ij); coefficients on free variables are flat vectors.
    """

    __slots__ = ("block_coeffs", "var_coeffs", "const")

    def __init__(self, const: float = 0.0):
        self.block_coeffs: dict[str, np.ndarray] = {}
        self.var_coeffs: dict[str, np.ndarray] = {}
        self.const = float(const)

    def add_block(self, name: str, C: np.ndarray, scale: float = 1.0) -> "LinExpr":
        C = np.asarray(C, dtype=float) * scale
        if name in self.block_coeffs:
            self.block_coeffs[name] = self.block_coeffs[name] + C
        else:
            self.block_coeffs[name] = C
        return self

    def add_herm_trace(self, name: str, A: np.ndarray, scale: float = 1.0) -> "LinExpr":
        """Adds scale * Tr(A H) for Hermitian data A on embedded block `name`."""
        return self.add_block(name, hermitian_to_real_embedding(A), 0.5 * scale)

    def add_var(self, name: str, coeffs: np.ndarray) -> "LinExpr":
        coeffs = np.atleast_1d(np.asarray(coeffs, dtype=float))
        if name in self.var_coeffs:
            self.var_coeffs[name] = self.var_coeffs[name] + coeffs
        else:
            self.var_coeffs[name] = coeffs.copy()
        return self

    def add_var_entry(self, name: str, size: int, index: int, coeff: float) -> "LinExpr":
        vec = np.zeros(size)
        vec[index] = coeff
        return self.add_var(name, vec)

    def add_expr(self, other: "LinExpr", scale: float = 1.0) -> "LinExpr":
        for name, C in other.block_coeffs.items():
            self.add_block(name, C, scale)
        for name, c in other.var_coeffs.items():
            self.add_var(name, c * scale)
        self.const += scale * other.const
        return self

    def scaled(self, f: float) -> "LinExpr":
        out = LinExpr(self.const * f)
        for name, C in self.block_coeffs.items():
            out.block_coeffs[name] = C * f
        for name, c in self.var_coeffs.items():
            out.var_coeffs[name] = c * f
        return out

    def max_abs_coeff(self) -> float:
        vals = [abs(self.const)]
        vals += [np.abs(C).max() for C in self.block_coeffs.values() if C.size]
        vals += [np.abs(c).max() for c in self.var_coeffs.values() if c.size]
        return max(vals) if vals else 0.0

    def value(self, assignment: dict[str, np.ndarray]) -> float:
        """Evaluate against block matrices / variable vectors (for testing/audit)."""
        total = self.const
        for name, C in self.block_coeffs.items():
            total += float(np.sum(C * assignment[name]))
        for name, c in self.var_coeffs.items():
            total += float(np.dot(c, np.atleast_1d(assignment[name])))
        return total


@dataclass
class LinearConstraint:
    expr: LinExpr
    sense: str          # "<=", ">=", "=="
    rhs: float
    tag: str = ""


@dataclass
class SocConstraint:
    """||x_exprs||_2 <= t_expr."""

    t_expr: LinExpr
    x_exprs: list[LinExpr]
    tag: str = ""


@dataclass
class ExpConstraint:
    """(x, y, z) in the exponential cone: y * exp(x / y) <= z, y > 0."""

    x_expr: LinExpr
    y_expr: LinExpr
    z_expr: LinExpr
    tag: str = ""


@dataclass
class PsdConstraint:
    """const + sum coeff_b * Block_b + sum v_i * M_i  is PSD."""

    side: int
    const: np.ndarray
    block_terms: list[tuple[str, float]] = field(default_factory=list)
    var_terms: list[tuple[str, int, np.ndarray]] = field(default_factory=list)
    tag: str = ""


@dataclass
class ConicProgram:
    psd_blocks: list[tuple[str, int]] = field(default_factory=list)
    free_vars: list[tuple[str, int]] = field(default_factory=list)
    linear_constraints: list[LinearConstraint] = field(default_factory=list)
    soc_constraints: list[SocConstraint] = field(default_factory=list)
    exp_constraints: list[ExpConstraint] = field(default_factory=list)
    psd_constraints: list[PsdConstraint] = field(default_factory=list)
    objective: LinExpr = field(default_factory=LinExpr)

    def add_psd_block(self, name: str, side: int) -> None:
        if any(n == name for n, _ in self.psd_blocks) or any(
            n == name for n, _ in self.free_vars
        ):
            raise ValueError(f"variable '{name}' declared twice")
        self.psd_blocks.append((name, side))

    def add_free_var(self, name: str, size: int) -> None:
        if any(n == name for n, _ in self.psd_blocks) or any(
            n == name for n, _ in self.free_vars
        ):
            raise ValueError(f"variable '{name}' declared twice")
        self.free_vars.append((name, size))

    def add_linear(self, expr: LinExpr, sense: str, rhs: float, tag: str = "") -> None:
        if sense not in ("<=", ">=", "=="):
            raise ValueError("bad sense")
        self.linear_constraints.append(LinearConstraint(expr, sense, rhs, tag))

    def add_soc(self, t_expr: LinExpr, x_exprs: list[LinExpr], tag: str = "") -> None:
        self.soc_constraints.append(SocConstraint(t_expr, x_exprs, tag))

    def add_exp(
        self, x_expr: LinExpr, y_expr: LinExpr, z_expr: LinExpr, tag: str = ""
    ) -> None:
        self.exp_constraints.append(ExpConstraint(x_expr, y_expr, z_expr, tag))

    def add_psd_constraint(self, con: PsdConstraint) -> None:
        self.psd_constraints.append(con)

    # -- bookkeeping ------------------------------------------------------

    def _sides(self) -> dict[str, int]:
        return dict(self.psd_blocks)

    def _sizes(self) -> dict[str, int]:
        return dict(self.free_vars)

    def validate(self) -> None:
        sides, sizes = self._sides(), self._sizes()

        def check_expr(e: LinExpr, where: str):
            for name, C in e.block_coeffs.items():
                if name not in sides:
                    raise ValueError(f"{where}: unknown block '{name}'")
                if C.shape != (sides[name], sides[name]):
                    raise ValueError(f"{where}: bad coefficient shape for '{name}'")
            for name, c in e.var_coeffs.items():
                if name not in sizes:
                    raise ValueError(f"{where}: unknown variable '{name}'")
                if c.shape != (sizes[name],):
                    raise ValueError(f"{where}: bad coefficient size for '{name}'")

        for i, lc in enumerate(self.linear_constraints):
            check_expr(lc.expr, f"linear[{i}] {lc.tag}")
        for i, sc in enumerate(self.soc_constraints):
            check_expr(sc.t_expr, f"soc[{i}] {sc.tag}")
            for x in sc.x_exprs:
                check_expr(x, f"soc[{i}] {sc.tag}")
        for i, ec in enumerate(self.exp_constraints):
            for e in (ec.x_expr, ec.y_expr, ec.z_expr):
                check_expr(e, f"exp[{i}] {ec.tag}")
        for i, pc in enumerate(self.psd_constraints):
            if pc.const.shape != (pc.side, pc.side):
                raise ValueError(f"psd[{i}] {pc.tag}: bad const shape")
            for name, _ in pc.block_terms:
                if sides.get(name) != pc.side:
                    raise ValueError(f"psd[{i}] {pc.tag}: block '{name}' mismatch")
            for name, idx, M in pc.var_terms:
                if name not in sizes or not (0 <= idx < sizes[name]):
                    raise ValueError(f"psd[{i}] {pc.tag}: bad var term '{name}'")
                if M.shape != (pc.side, pc.side):
                    raise ValueError(f"psd[{i}] {pc.tag}: bad var matrix shape")
        check_expr(self.objective, "objective")

    def manifest(self) -> dict:
        """Structural summary (used by the golden assembly test)."""
        return {
            "psd_blocks": sorted((n, s) for n, s in self.psd_blocks),
            "free_scalars": int(sum(s for _, s in self.free_vars)),
            "free_vars": sorted((n, s) for n, s in self.free_vars),
            "num_linear": len(self.linear_constraints),
            "num_soc": len(self.soc_constraints),
            "num_exp": len(self.exp_constraints),
            "num_psd_constraints": len(self.psd_constraints),
            "linear_tags": sorted(lc.tag for lc in self.linear_constraints),
            "soc_tags": sorted(sc.tag for sc in self.soc_constraints),
            "exp_tags": sorted(ec.tag for ec in self.exp_constraints),
            "psd_tags": sorted(pc.tag for pc in self.psd_constraints),
        }


@dataclass
class SolveResult:
    status: str                      # optimal | infeasible | unbounded | numerical-trouble
    objective: float
    assignments: dict[str, np.ndarray]
    stats: dict


# ---------------------------------------------------------------------------
# svec helpers (upper triangle, column-major, off-diagonals scaled by sqrt2)


def _svec_dim(n: int) -> int:
    return n * (n + 1) // 2


def svec(M: np.ndarray) -> np.ndarray:
    n = M.shape[0]
    out = np.empty(_svec_dim(n))
    t = 0
    for j in range(n):
        for i in range(j + 1):
            out[t] = M[i, j] if i == j else SQRT2 * 0.5 * (M[i, j] + M[j, i])
            t += 1
    return out


def svec_coefficients(C: np.ndarray) -> np.ndarray:
    """Row vector a with a . svec(X) = sum_ij C_ij X_ij for symmetric X."""
    n = C.shape[0]
    out = np.empty(_svec_dim(n))
    t = 0
    for j in range(n):
        for i in range(j + 1):
            out[t] = C[i, i] if i == j else (C[i, j] + C[j, i]) / SQRT2
            t += 1
    return out


def smat(x: np.ndarray, n: int) -> np.ndarray:
    M = np.empty((n, n))
    t = 0
    for j in range(n):
        for i in range(j + 1):
            if i == j:
                M[i, j] = x[t]
            else:
                M[i, j] = M[j, i] = x[t] / SQRT2
            t += 1
    return M


# ---------------------------------------------------------------------------
# Clarabel adapter


def solve(
    program: ConicProgram,
    *,
    verbose: bool = False,
    tol: float = 1e-8,
    max_iter: int = 200,
) -> SolveResult:
    """Lower the IR to Clarabel cones and solve; failures never raise."""
    import clarabel

    program.validate()
    sides, sizes = program._sides(), program._sizes()

    # variable layout: free scalars first, then svec coordinates per block
    offsets: dict[str, int] = {}
    pos = 0
    for name, size in program.free_vars:
        offsets[name] = pos
        pos += size
    for name, side in program.psd_blocks:
        offsets[name] = pos
        pos += _svec_dim(side)
    nvar = pos

    def expr_row(e: LinExpr) -> tuple[np.ndarray, np.ndarray, float]:
        idx_parts, val_parts = [], []
        for name, c in e.var_coeffs.items():
            nz = np.nonzero(c)[0]
            idx_parts.append(offsets[name] + nz)
            val_parts.append(c[nz])
        for name, C in e.block_coeffs.items():
            a = svec_coefficients(C)
            nz = np.nonzero(a)[0]
            idx_parts.append(offsets[name] + nz)
            val_parts.append(a[nz])
        if idx_parts:
            return np.concatenate(idx_parts), np.concatenate(val_parts), e.const
        return np.empty(0, dtype=int), np.empty(0), e.const

    rows_i, cols_i, vals, b_parts, cones = [], [], [], [], []
    nrow = 0

    def push_row(idx, val, b_val):
        nonlocal nrow
        rows_i.append(np.full(len(idx), nrow))
        cols_i.append(idx)
        vals.append(val)
        b_parts.append(b_val)
        nrow += 1

    # equalities -> ZeroCone
    eqs = [lc for lc in program.linear_constraints if lc.sense == "=="]
    for lc in eqs:
        idx, val, const = expr_row(lc.expr)
        push_row(idx, val, lc.rhs - const)
    if eqs:
        cones.append(clarabel.ZeroConeT(len(eqs)))

    # inequalities -> NonnegativeCone (b - Ax >= 0)
    ineqs = [lc for lc in program.linear_constraints if lc.sense != "=="]
    for lc in ineqs:
        idx, val, const = expr_row(lc.expr)
        if lc.sense == "<=":
            push_row(idx, val, lc.rhs - const)
        else:
            push_row(idx, -val, const - lc.rhs)
    if ineqs:
        cones.append(clarabel.NonnegativeConeT(len(ineqs)))

    # second-order cones
    for sc in program.soc_constraints:
        idx, val, const = expr_row(sc.t_expr)
        push_row(idx, -val, const)
        for x in sc.x_exprs:
            idx, val, const = expr_row(x)
            push_row(idx, -val, const)
        cones.append(clarabel.SecondOrderConeT(1 + len(sc.x_exprs)))

    # exponential cones: s = (x, y, z) with y exp(x/y) <= z
    for ec in program.exp_constraints:
        for e in (ec.x_expr, ec.y_expr, ec.z_expr):
            idx, val, const = expr_row(e)
            push_row(idx, -val, const)
        cones.append(clarabel.ExponentialConeT())

    # affine PSD constraints
    for pc in program.psd_constraints:
        dim = _svec_dim(pc.side)
        base = nrow
        bvec = svec(pc.const)
        cols_acc = [np.empty(0, dtype=int)] * 0
        row_entries: list[list] = [[] for _ in range(dim)]
        for name, coeff in pc.block_terms:
            off = offsets[name]
            for t in range(dim):
                row_entries[t].append((off + t, -coeff))
        for name, vidx, M in pc.var_terms:
            col = offsets[name] + vidx
            sm = svec(M)
            nz = np.nonzero(sm)[0]
            for t in nz:
                row_entries[t].append((col, -sm[t]))
        for t in range(dim):
            if row_entries[t]:
                idx = np.array([c for c, _ in row_entries[t]], dtype=int)
                val = np.array([v for _, v in row_entries[t]])
            else:
                idx, val = np.empty(0, dtype=int), np.empty(0)
            push_row(idx, val, bvec[t])
        assert nrow == base + dim
        cones.append(clarabel.PSDTriangleConeT(pc.side))

    # PSD block membership: svec coords themselves in the triangle cone
    for name, side in program.psd_blocks:
        dim = _svec_dim(side)
        off = offsets[name]
        for t in range(dim):
            push_row(np.array([off + t]), np.array([-1.0]), 0.0)
        cones.append(clarabel.PSDTriangleConeT(side))

    A = sparse.csc_matrix(
        (
            np.concatenate(vals) if vals else np.empty(0),
            (
                np.concatenate(rows_i) if rows_i else np.empty(0, dtype=int),
                np.concatenate(cols_i) if cols_i else np.empty(0, dtype=int),
            ),
        ),
        shape=(nrow, nvar),
    )
    b = np.array(b_parts)

    # objective: maximize f.x + c  ->  minimize -f.x
    fidx, fval, fconst = expr_row(program.objective)
    q = np.zeros(nvar)
    q[fidx] = -fval
    P = sparse.csc_matrix((nvar, nvar))

    settings = clarabel.DefaultSettings()
    settings.verbose = verbose
    settings.max_iter = max_iter
    settings.tol_gap_abs = tol
    settings.tol_gap_rel = tol
    settings.tol_feas = tol

    try:
        solver = clarabel.DefaultSolver(P, q, A, b, cones, settings)
        sol = solver.solve()
    except BaseException as exc:  # solver failure surfaces as a status
        return SolveResult(
            status="numerical-trouble",
            objective=math.nan,
            assignments={},
            stats={"error": repr(exc)},
        )

    status_name = str(sol.status)
    mapping = {
        "Solved": "optimal",
        "AlmostSolved": "optimal",
        "PrimalInfeasible": "infeasible",
        "AlmostPrimalInfeasible": "infeasible",
        "DualInfeasible": "unbounded",
        "AlmostDualInfeasible": "unbounded",
    }
    status = mapping.get(status_name, "numerical-trouble")

    assignments: dict[str, np.ndarray] = {}
    if status == "optimal":
        x = np.asarray(sol.x)
        for name, size in program.free_vars:
            assignments[name] = x[offsets[name] : offsets[name] + size].copy()
        for name, side in program.psd_blocks:
            coords = x[offsets[name] : offsets[name] + _svec_dim(side)]
            assignments[name] = smat(coords, side)
    objective = fconst - float(sol.obj_val) if status == "optimal" else math.nan

    return SolveResult(
        status=status,
        objective=objective,
        assignments=assignments,
        stats={
            "solver_status": status_name,
            "iterations": int(sol.iterations),
            "solve_time": float(sol.solve_time),
            "almost": status_name.startswith("Almost"),
        },
    )


# ---------------------------------------------------------------------------
# text dump (triplet interchange format)


def dump_program(program: ConicProgram, path) -> None:
    """Write the program in a plain triplet format.

    Lines:
      var psd|free <name> <side|size>
      obj const <value> / obj <name> <i> <j> <value>   (j = -1 for free vars)
      lin <index> <sense> <rhs> <tag>
      lincoef <index> <name> <i> <j> <value>
      soc <index> <num_x> <tag> ; soccoef <index> <row> <name> <i> <j> <value>
        (row 0 is the cone's t entry, rows 1.. are the x entries;
         name '<const>' carries the affine constant)
      psd <index> <side> <tag> ; psdcoef <index> <name|_const> <i> <j> <value>
    """
    program.validate()
    lines = ["# mcnoma-isac conic program dump v1"]
    for name, side in program.psd_blocks:
        lines.append(f"var psd {name} {side}")
    for name, size in program.free_vars:
        lines.append(f"var free {name} {size}")

    def expr_lines(prefix: str, e: LinExpr):
        out = []
        if e.const != 0.0:
            out.append(f"{prefix} <const> 0 -1 {e.const!r}")
        for name, c in sorted(e.var_coeffs.items()):
            for i in np.nonzero(c)[0]:
                out.append(f"{prefix} {name} {i} -1 {c[i]!r}")
        for name, C in sorted(e.block_coeffs.items()):
            nz = np.argwhere(C != 0.0)
            for i, j in nz:
                out.append(f"{prefix} {name} {i} {j} {C[i, j]!r}")
        return out

    lines += expr_lines("obj", program.objective)
    for ci, lc in enumerate(program.linear_constraints):
        lines.append(f"lin {ci} {lc.sense} {lc.rhs!r} {lc.tag}")
        lines += expr_lines(f"lincoef {ci}", lc.expr)
    for ci, sc in enumerate(program.soc_constraints):
        lines.append(f"soc {ci} {len(sc.x_exprs)} {sc.tag}")
        lines += expr_lines(f"soccoef {ci} 0", sc.t_expr)
        for r, x in enumerate(sc.x_exprs, start=1):
            lines += expr_lines(f"soccoef {ci} {r}", x)
    for ci, ec in enumerate(program.exp_constraints):
        lines.append(f"exp {ci} {ec.tag}")
        for r, e in enumerate((ec.x_expr, ec.y_expr, ec.z_expr)):
            lines += expr_lines(f"expcoef {ci} {r}", e)
    for ci, pc in enumerate(program.psd_constraints):
        lines.append(f"psd {ci} {pc.side} {pc.tag}")
        nz = np.argwhere(pc.const != 0.0)
        for i, j in nz:
            lines.append(f"psdcoef {ci} _const {i} {j} {pc.const[i, j]!r}")
        for name, coeff in pc.block_terms:
            lines.append(f"psdcoef {ci} {name} -1 -1 {coeff!r}")
        for name, vidx, M in pc.var_terms:
            for i, j in np.argwhere(M != 0.0):
                lines.append(f"psdcoef {ci} {name}[{vidx}] {i} {j} {M[i, j]!r}")
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")
