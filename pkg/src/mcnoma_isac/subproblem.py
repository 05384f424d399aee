"""Per-iteration convex subproblem: assembly, solution extraction, recovery.

Each outer iteration solves one SDP in the lifted matrices (W, Wbar, V), the
relaxed schedule s, the min-rate epigraph t, per-pair signal-amplitude
variables u (u^2 <= eta via a second-order cone), and the stacked real
sensing vectors z.  Channel coefficients are rescaled internally so signal
powers sit near unity for the interior-point solver; the rescaling is a pure
change of variables and is undone on extraction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import conic
from .conic import ConicProgram, LinExpr, PsdConstraint
from .metrics import LN2, BeamSolution, stronger_users, _gram_trace, _quad
from .fpcore import (
    AuxState,
    crb_quadratic_linearization,
    crb_threshold,
)
from .scenario import ChannelRealization
from .uncertainty import ErrorSampleSet


class RankOneRecoveryError(RuntimeError):
    """No feasible rank-one candidate found during randomization."""


@dataclass
class AssembleOptions:
    an_mode: str = "full"              # full | none | nullspace
    schedule_fixed: bool = False
    fixed_schedule: np.ndarray | None = None
    null_bases: list | None = None     # per-subcarrier (V, r) orthonormal bases
    crb_mode: str | None = None        # None -> config.crb_mode
    big_m_full: bool = False           # carry explicit W blocks + full sandwich
    enforce_rate_min: bool = True      # drop hard C4 rows (max-min phase)


@dataclass
class AssembleContext:
    options: AssembleOptions
    cs2: float                         # channel power rescale factor
    num_subcarriers: int
    num_users: int
    bs_antennas: int
    schedule: np.ndarray | None        # fixed binary schedule, if any
    wbar_names: dict = field(default_factory=dict)   # (n, k) -> block name
    crb_mode: str = "sca-linearized"


def _herm_outer(h: np.ndarray) -> np.ndarray:
    return np.outer(h, h.conj())


def _z_coeff(b: np.ndarray) -> np.ndarray:
    """Real coefficient vector c with c . [Re z; Im z] = 2*Re(b^H z)."""
    return np.concatenate([2.0 * b.real, 2.0 * b.imag])


def assemble(
    sol_prev: BeamSolution,
    aux: AuxState,
    realization: ChannelRealization,
    samples: ErrorSampleSet,
    config,
    options: AssembleOptions | None = None,
) -> tuple[ConicProgram, AssembleContext]:
    """Build the convex inner approximation around `sol_prev` with aux `aux`."""
    options = options or AssembleOptions()
    N, K, V = realization.num_subcarriers, realization.num_users, realization.bs_antennas
    P = config.bs_power_max
    n_samp = len(samples)
    crb_mode = options.crb_mode or config.crb_mode
    if options.an_mode == "nullspace" and options.null_bases is None:
        raise ValueError("nullspace AN mode requires null_bases")
    if options.schedule_fixed and options.fixed_schedule is None:
        raise ValueError("schedule_fixed requires fixed_schedule")

    cs2 = 1.0 / float(np.mean(np.abs(realization.h_user) ** 2))
    cs = math.sqrt(cs2)
    noise_u = cs2 * config.noise_user
    noise_e = cs2 * config.noise_eve

    sched = options.fixed_schedule
    if sched is not None:
        sched = np.asarray(sched, dtype=float)

    def pair_active(n, k):
        return sched is None or sched[n, k] > 0.5

    prog = ConicProgram()
    ctx = AssembleContext(
        options=options, cs2=cs2, num_subcarriers=N, num_users=K,
        bs_antennas=V, schedule=sched, crb_mode=crb_mode,
    )

    # ---- variables -------------------------------------------------------
    for n in range(N):
        for k in range(K):
            if not pair_active(n, k):
                continue
            prog.add_psd_block(f"Wb_{n}_{k}", 2 * V)
            ctx.wbar_names[(n, k)] = f"Wb_{n}_{k}"
            if not options.schedule_fixed and options.big_m_full:
                prog.add_psd_block(f"W_{n}_{k}", 2 * V)
    if options.an_mode == "full":
        for n in range(N):
            prog.add_psd_block(f"V_{n}", 2 * V)
    if not options.schedule_fixed:
        prog.add_free_var("s", N * K)
    prog.add_free_var("t", 1)
    prog.add_free_var("u", N * K)
    for n in range(N):
        prog.add_free_var(f"z_{n}", 2 * V)
    prog.add_free_var("zp", 1)
    if options.an_mode == "nullspace":
        for n in range(N):
            prog.add_free_var(f"d_{n}", options.null_bases[n].shape[1])
    if crb_mode == "penalty":
        prog.add_free_var("tau", 1)

    # scaled user channel grams
    Hs = np.empty((N, K), dtype=object)
    for n in range(N):
        for k in range(K):
            Hs[n, k] = cs2 * _herm_outer(realization.h_user[n, k])

    def an_trace_expr(expr: LinExpr, n: int, A_scaled: np.ndarray, scale: float = 1.0):
        """Adds scale * Tr(A V_n) for the active AN parameterization."""
        if options.an_mode == "full":
            expr.add_herm_trace(f"V_{n}", A_scaled, scale)
        elif options.an_mode == "nullspace":
            Qb = options.null_bases[n]
            coeffs = np.array([_quad(q, A_scaled) for q in Qb.T]) * scale
            expr.add_var(f"d_{n}", coeffs)
        # "none": nothing

    def eta_expr(n, k) -> LinExpr:
        e = LinExpr()
        if (n, k) in ctx.wbar_names:
            e.add_herm_trace(ctx.wbar_names[(n, k)], Hs[n, k])
        return e

    # ---- schedule box / cluster-size rows -------------------------------
    if not options.schedule_fixed:
        for n in range(N):
            for k in range(K):
                i = n * K + k
                prog.add_linear(LinExpr().add_var_entry("s", N * K, i, 1.0), ">=", 0.0, "C1a-lo")
                prog.add_linear(LinExpr().add_var_entry("s", N * K, i, 1.0), "<=", 1.0, "C1a-hi")
        for n in range(N):
            row = LinExpr()
            for k in range(K):
                row.add_var_entry("s", N * K, n * K + k, 1.0)
            prog.add_linear(row.scaled(1.0), ">=", 2.0, "C2-lo")
            prog.add_linear(row, "<=", float(config.max_cluster_size), "C2-hi")

    # ---- power budget ----------------------------------------------------
    eye = np.eye(V)
    used_power = LinExpr()
    for (n, k), name in ctx.wbar_names.items():
        used_power.add_herm_trace(name, eye)
    for n in range(N):
        an_trace_expr(used_power, n, eye)
    total_power = used_power.scaled(1.0).add_var_entry("zp", 1, 0, 1.0)
    prog.add_linear(total_power, "<=", P, "C3")

    # ---- u cones: u_{n,k}^2 <= scaled eta --------------------------------
    for n in range(N):
        for k in range(K):
            i = n * K + k
            u_i = LinExpr().add_var_entry("u", N * K, i, 1.0)
            prog.add_linear(u_i, ">=", 0.0, "u-nonneg")
            eta = eta_expr(n, k)
            prog.add_soc(
                eta.scaled(1.0).add_expr(LinExpr(1.0)),
                [u_i.scaled(2.0), eta.scaled(1.0).add_expr(LinExpr(-1.0))],
                tag=f"u-cone-{n}-{k}",
            )

    # ---- surrogate user rates: epigraph + worst-case minimum -------------
    # jamming power per (sample, n, k), in scaled units
    jam = np.empty((n_samp, N, K))
    for idx in range(n_samp):
        for n in range(N):
            for k in range(K):
                h_eu = samples.h_eu(realization, idx, n, k)
                jam[idx, n, k] = cs2 * config.eve_power * float(np.vdot(h_eu, h_eu).real)

    def rate_expr(k: int, idx: int) -> LinExpr:
        """Concave-in-variables surrogate of user k's total rate, sample idx."""
        e = LinExpr()
        for n in range(N):
            a = aux.alpha[idx, n, k]
            x = aux.x_aux[idx, n, k] / cs  # scaled-domain quadratic-transform aux
            e.add_expr(LinExpr(math.log1p(a) - a))
            e.add_var_entry("u", N * K, n * K + k, 2.0 * x * math.sqrt(1.0 + a))
            total = eta_expr(n, k)
            for j in stronger_users(realization, n, k):
                if (n, j) in ctx.wbar_names:
                    total.add_herm_trace(ctx.wbar_names[(n, j)], Hs[n, k])
            an_trace_expr(total, n, Hs[n, k])
            total.add_expr(LinExpr(jam[idx, n, k] + noise_u))
            e.add_expr(total, -x * x)
        return e.scaled(1.0 / LN2)

    t_var = LinExpr().add_var_entry("t", 1, 0, 1.0)
    for k in range(K):
        for idx in range(n_samp):
            r = rate_expr(k, idx)
            prog.add_linear(t_var.scaled(1.0).add_expr(r, -1.0), "<=", 0.0, f"epigraph-{k}-{idx}")
            if options.enforce_rate_min:
                # redundant whenever the optimized epigraph exceeds rate_min,
                # but lets the solver certify infeasibility early
                prog.add_linear(r, ">=", config.rate_min, f"C4-{k}-{idx}")

    # ---- leakage upper bounds, per user and per sample --------------------
    # log2(1 + xi_n/xi_d) = log2(xi_n + xi_d) - log2(xi_d).  The first term is
    # concave in the affine received powers, so its tangent at sol_prev is a
    # global upper bound; the second is kept exact through an exponential cone
    # on an epigraph variable ell <= log2(xi_d).  The restriction is therefore
    # valid everywhere and tight at the previous iterate, which preserves both
    # feasibility of every iterate and monotonicity of the outer loop.
    # ell_{n,idx} <= log2(xi_d / xi_d_prev); normalizing by the anchor value
    # keeps the exponential-cone point near (0, 1, 1) for the solver.
    prog.add_free_var("ell", N * n_samp)
    xi_d_prevs = np.empty((n_samp, N))
    for idx in range(n_samp):
        for n in range(N):
            H_be = samples.H_be(realization, idx, n)
            G = cs2 * (H_be @ H_be.conj().T)
            xi_d_prev = cs2 * _gram_trace(H_be, sol_prev.V_an[n]) + noise_e
            xi_d_prevs[idx, n] = xi_d_prev
            xi_d_e = LinExpr(noise_e)
            an_trace_expr(xi_d_e, n, G)
            ell = LinExpr().add_var_entry("ell", N * n_samp, idx * N + n, 1.0)
            prog.add_exp(
                ell.scaled(LN2),
                LinExpr(1.0),
                xi_d_e.scaled(1.0 / xi_d_prev),
                f"C5-logden-{n}-{idx}",
            )
    for k in range(K):
        thr = config.enforced_leakage_threshold(k)
        for idx in range(n_samp):
            row = LinExpr()
            for n in range(N):
                H_be = samples.H_be(realization, idx, n)
                G = cs2 * (H_be @ H_be.conj().T)
                xi_n_prev = max(0.0, cs2 * _gram_trace(H_be, sol_prev.Wbar[n, k]))
                xi_d_prev = cs2 * _gram_trace(H_be, sol_prev.V_an[n]) + noise_e
                xt_prev = xi_n_prev + xi_d_prev
                xt_e = LinExpr(noise_e)
                if (n, k) in ctx.wbar_names:
                    xt_e.add_herm_trace(ctx.wbar_names[(n, k)], G)
                an_trace_expr(xt_e, n, G)
                # tangent of log2 at xt_prev; ell is log2 of the normalized
                # denominator, so add back log2(xi_d_prev)
                row.add_expr(LinExpr(math.log2(xt_prev) - 1.0 / LN2))
                row.add_expr(xt_e, 1.0 / (xt_prev * LN2))
                row.add_var_entry("ell", N * n_samp, idx * N + n, -1.0)
                row.add_expr(LinExpr(-math.log2(xi_d_prevs[idx, n])))
            prog.add_linear(row, "<=", thr, f"C5-{k}-{idx}")

    # ---- sensing-power constraint ----------------------------------------
    c_thr = crb_threshold(config)
    resid_rows = []
    for idx in range(n_samp):
        from .metrics import sensing_gain_matrix

        Q_list = [
            sensing_gain_matrix(realization, config, n, samples.samples[idx].dH_be[n])
            for n in range(N)
        ]
        lin = crb_quadratic_linearization(sol_prev.z_sense, Q_list)
        row = LinExpr()
        for n, (const, b) in enumerate(lin):
            row.add_var(f"z_{n}", _z_coeff(b))
            row.add_expr(LinExpr(-const))
        if crb_mode == "penalty":
            resid_rows.append(row)
        else:
            scale = max(c_thr, row.max_abs_coeff())
            prog.add_linear(row.scaled(1.0 / scale), ">=", c_thr / scale, f"C6-{idx}")

    if crb_mode == "penalty":
        tau = LinExpr().add_var_entry("tau", 1, 0, 1.0)
        prog.add_linear(tau, ">=", 0.0, "tau-nonneg")
        for idx, row in enumerate(resid_rows):
            # relative residual r = (c + chi - bound)/c; tau >= r^2
            r = LinExpr((c_thr + aux.chi_c) / c_thr).add_expr(row, -1.0 / c_thr)
            prog.add_soc(
                tau.scaled(1.0).add_expr(LinExpr(1.0)),
                [r.scaled(2.0), tau.scaled(1.0).add_expr(LinExpr(-1.0))],
                tag=f"C6-penalty-{idx}",
            )

    # ---- sensing power: zp >= sum ||z_n||^2 (epigraph cone); the epigraph
    # joins the C3 budget above and is capped by the communication power (C12)
    z_coords = []
    for n in range(N):
        for i in range(2 * V):
            z_coords.append(LinExpr().add_var_entry(f"z_{n}", 2 * V, i, 2.0))
    zp = LinExpr().add_var_entry("zp", 1, 0, 1.0)
    prog.add_soc(
        zp.scaled(1.0).add_expr(LinExpr(1.0)),
        z_coords + [zp.scaled(1.0).add_expr(LinExpr(-1.0))],
        tag="C12-pow",
    )
    prog.add_linear(zp.scaled(1.0).add_expr(used_power, -1.0), "<=", 0.0, "C12")

    # ---- big-M coupling of schedule and beams ------------------------------
    # C7a (Wbar <= s*P*I) plus Wbar >= 0 is the exact projection of the full
    # sandwich 0 <= Wbar <= W <= Wbar + (1-s)*P*I onto the variables the rest
    # of the program references; W can always be reconstituted as Wbar/s.  The
    # full sandwich with explicit W blocks is kept behind `big_m_full` for
    # cross-checking and costs roughly 2.5x more PSD cones.
    if not options.schedule_fixed:
        eyeE = np.eye(2 * V)
        zero = np.zeros((2 * V, 2 * V))
        for n in range(N):
            for k in range(K):
                i = n * K + k
                prog.add_psd_constraint(PsdConstraint(
                    side=2 * V, const=zero,
                    block_terms=[(f"Wb_{n}_{k}", -1.0)],
                    var_terms=[("s", i, P * eyeE)],
                    tag=f"C7a-{n}-{k}",
                ))
                if not options.big_m_full:
                    continue
                prog.add_psd_constraint(PsdConstraint(
                    side=2 * V, const=zero,
                    block_terms=[(f"W_{n}_{k}", 1.0), (f"Wb_{n}_{k}", -1.0)],
                    tag=f"C7b-{n}-{k}",
                ))
                prog.add_psd_constraint(PsdConstraint(
                    side=2 * V, const=P * eyeE,
                    block_terms=[(f"Wb_{n}_{k}", 1.0), (f"W_{n}_{k}", -1.0)],
                    var_terms=[("s", i, -P * eyeE)],
                    tag=f"C7c-{n}-{k}",
                ))

    # ---- nullspace AN loadings are nonnegative ----------------------------
    if options.an_mode == "nullspace":
        for n in range(N):
            r = options.null_bases[n].shape[1]
            for i in range(r):
                prog.add_linear(
                    LinExpr().add_var_entry(f"d_{n}", r, i, 1.0), ">=", 0.0, f"d-nonneg-{n}-{i}"
                )

    # ---- objective ---------------------------------------------------------
    obj = LinExpr().add_var_entry("t", 1, 0, 1.0)
    if not options.schedule_fixed:
        s_prev = np.clip(sol_prev.s.reshape(-1), 0.0, 1.0)
        # convex majorizer of rho * sum(s - s^2), tangent at s_prev
        obj.add_var("s", -aux.rho * (1.0 - 2.0 * s_prev))
        obj.add_expr(LinExpr(-aux.rho * float(np.sum(s_prev**2))))
    if crb_mode == "penalty":
        obj.add_var_entry("tau", 1, 0, -aux.rho_c)
    prog.objective = obj

    return prog, ctx


def _clip_psd(H: np.ndarray) -> np.ndarray:
    w, U = np.linalg.eigh(0.5 * (H + H.conj().T))
    w = np.clip(w, 0.0, None)
    return (U * w) @ U.conj().T


def extract_solution(
    result: conic.SolveResult, ctx: AssembleContext, config
) -> BeamSolution:
    """Turn a solver assignment back into physical-domain matrices."""
    N, K, V = ctx.num_subcarriers, ctx.num_users, ctx.bs_antennas
    opt = ctx.options
    a = result.assignments

    if ctx.schedule is not None:
        s = ctx.schedule.copy()
    else:
        s = np.clip(a["s"].reshape(N, K), 0.0, 1.0)

    Wbar = np.zeros((N, K, V, V), dtype=complex)
    W = np.zeros((N, K, V, V), dtype=complex)
    for (n, k), name in ctx.wbar_names.items():
        Wbar[n, k] = _clip_psd(conic.real_embedding_to_hermitian(a[name]))
        if opt.schedule_fixed:
            W[n, k] = Wbar[n, k]
        elif opt.big_m_full:
            W[n, k] = _clip_psd(conic.real_embedding_to_hermitian(a[f"W_{n}_{k}"]))
        else:
            W[n, k] = Wbar[n, k] / max(s[n, k], 1e-9) if s[n, k] > 1e-6 else Wbar[n, k]

    V_an = np.zeros((N, V, V), dtype=complex)
    for n in range(N):
        if opt.an_mode == "full":
            V_an[n] = _clip_psd(conic.real_embedding_to_hermitian(a[f"V_{n}"]))
        elif opt.an_mode == "nullspace":
            Qb = opt.null_bases[n]
            d = np.clip(a[f"d_{n}"], 0.0, None)
            V_an[n] = (Qb * d) @ Qb.conj().T

    z = np.zeros((N, V), dtype=complex)
    for n in range(N):
        zr = a[f"z_{n}"]
        z[n] = zr[:V] + 1j * zr[V:]

    return BeamSolution(s=s, W=W, Wbar=Wbar, V_an=V_an, z_sense=z)


# ---------------------------------------------------------------------------
# rounding and rank-one recovery


def round_schedule(s: np.ndarray, config) -> tuple[np.ndarray, bool]:
    """Round a relaxed schedule to binary and repair cluster sizes.

    Returns (binary schedule, ok).  ok is False when a repaired entry moved
    by more than 0.4, i.e. the relaxation was far from binary.
    """
    s = np.asarray(s, dtype=float)
    N, K = s.shape
    out = (s >= 0.5).astype(float)
    kmax = config.max_cluster_size

    for n in range(N):
        on = int(out[n].sum())
        if on < 2:
            for k in np.argsort(-s[n]):
                if out[n, k] == 0.0:
                    out[n, k] = 1.0
                    on += 1
                    if on >= 2:
                        break
        elif on > kmax:
            for k in np.argsort(s[n]):
                if out[n, k] == 1.0:
                    out[n, k] = 0.0
                    on -= 1
                    if on <= kmax:
                        break

    if config.rate_min > 0.0:
        for k in range(K):
            if out[:, k].sum() > 0:
                continue
            order = np.argsort(-s[:, k])
            placed = False
            for n in order:
                if out[n].sum() < kmax:
                    out[n, k] = 1.0
                    placed = True
                    break
            if not placed:
                # swap out the weakest entry of the fullest cluster
                n = int(order[0])
                j = int(np.argmin(np.where(out[n] > 0, s[n], np.inf)))
                out[n, j] = 0.0
                out[n, k] = 1.0

    ok = bool(np.max(np.abs(out - s)) <= 0.4)
    return out, ok


def recover_rank_one(
    M: np.ndarray,
    quality_threshold: float = 0.99,
    n_candidates: int = 100,
    rng: np.random.Generator | None = None,
    scorer=None,
) -> tuple[np.ndarray, float]:
    """Extract a beamforming vector w with w w^H ~ M from a PSD matrix.

    Returns (w, quality) where quality = lambda_max / trace.  If the
    principal eigenpair does not meet `quality_threshold`, Gaussian
    randomization draws `n_candidates` power-preserving candidates; `scorer`
    (candidate -> (feasible, score) or None) selects among them.  Raises
    RankOneRecoveryError when a scorer is given and no candidate is feasible.
    """
    M = 0.5 * (M + M.conj().T)
    tr = float(np.trace(M).real)
    if tr <= 1e-15:
        return np.zeros(M.shape[0], dtype=complex), 1.0

    w_eig, U = np.linalg.eigh(M)
    lam = float(w_eig[-1])
    v = U[:, -1]
    quality = lam / tr
    principal = math.sqrt(max(lam, 0.0)) * v
    # deterministic phase: first significant entry real positive
    idx = int(np.argmax(np.abs(principal)))
    if np.abs(principal[idx]) > 0:
        principal = principal * np.exp(-1j * np.angle(principal[idx]))

    if quality >= quality_threshold and scorer is None:
        return principal, quality

    rng = rng or np.random.default_rng(0)
    root = (U * np.sqrt(np.clip(w_eig, 0.0, None))) @ U.conj().T
    candidates = [principal]
    for _ in range(n_candidates):
        g = root @ (
            rng.standard_normal(M.shape[0]) + 1j * rng.standard_normal(M.shape[0])
        ) / math.sqrt(2.0)
        nrm = np.linalg.norm(g)
        if nrm > 0:
            candidates.append(g * math.sqrt(tr) / nrm)

    if scorer is None:
        # keep the transmit power and pick the best-aligned candidate
        best = max(candidates, key=lambda g: float(np.real(g.conj() @ M @ g)))
        return best, quality

    best, best_score = None, -math.inf
    for g in candidates:
        verdict = scorer(g)
        if verdict is None:
            continue
        feasible, score = verdict
        if feasible and score > best_score:
            best, best_score = g, score
    if best is None:
        raise RankOneRecoveryError(
            f"no feasible rank-one candidate (quality {quality:.3f}, trace {tr:.3e})"
        )
    return best, quality
