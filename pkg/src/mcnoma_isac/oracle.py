"""Independent checks: numerical maximizers for the auxiliary updates,
original-constraint audits, finite-difference CRB verification, and a
brute-force search benchmark for tiny instances.

Nothing here reuses the closed forms or surrogates under test; audits
evaluate the original rate/leakage/sensing expressions directly.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.optimize import minimize_scalar

from .metrics import (
    BeamSolution,
    crb_theta,
    leakage_rate,
    min_user_rate,
    sensing_quadratic_forms,
    user_rate,
)
from .scenario import ChannelRealization, steering_vector, steering_vector_derivative
from .uncertainty import ErrorSampleSet

_BRENT_OPTS = {"xatol": 1e-12, "maxiter": 500}


def _argmax(f, lo: float, hi: float) -> float:
    res = minimize_scalar(lambda v: -f(v), bounds=(lo, hi), method="bounded",
                          options=_BRENT_OPTS)
    return float(res.x)


def verify_aux_optimality(
    num_instances: int = 50, seed: int = 0, tolerance: float = 1e-6
) -> dict:
    """Check the closed-form auxiliary updates against a bounded 1-D search.

    For random positive (signal, other-power) pairs the rate transform
    f(a) = log1p(a) - a + (1+a)*sig/total must peak at a* = sig/other, and
    g(x) = 2x*sqrt((1+a*)*sig) - x^2*total at x* = sqrt((1+a*)*sig)/total,
    with f(a*) = log1p(sig/other) (tightness).  The same functional forms
    cover the leakage-side auxiliaries, exercised on separate draws.
    """
    rng = np.random.default_rng(seed)
    report = {
        "max_alpha_dev": 0.0,
        "max_x_dev": 0.0,
        "max_gamma_dev": 0.0,
        "max_zq_dev": 0.0,
        "max_tightness_gap": 0.0,
        "num_instances": num_instances,
    }

    def check_pair(sig, other, key_ratio, key_amp):
        total = sig + other
        a_closed = sig / other

        def f(a):
            return math.log1p(a) - a + (1.0 + a) * sig / total

        a_num = _argmax(f, 0.0, 10.0 * (1.0 + a_closed))
        dev_a = abs(a_num - a_closed) / (1.0 + a_closed)
        report[key_ratio] = max(report[key_ratio], dev_a)

        x_closed = math.sqrt((1.0 + a_closed) * sig) / total

        def g(x):
            return 2.0 * x * math.sqrt((1.0 + a_closed) * sig) - x * x * total

        x_num = _argmax(g, 0.0, 10.0 * x_closed)
        dev_x = abs(x_num - x_closed) / (1.0 + x_closed)
        report[key_amp] = max(report[key_amp], dev_x)

        gap = abs(f(a_closed) - math.log1p(sig / other))
        report["max_tightness_gap"] = max(report["max_tightness_gap"], gap)

    for _ in range(num_instances):
        check_pair(
            rng.lognormal(0.0, 2.0), rng.lognormal(0.0, 2.0), "max_alpha_dev", "max_x_dev"
        )
        check_pair(
            rng.lognormal(-1.0, 2.0), rng.lognormal(0.0, 2.0), "max_gamma_dev", "max_zq_dev"
        )

    report["passed"] = bool(
        max(
            report["max_alpha_dev"],
            report["max_x_dev"],
            report["max_gamma_dev"],
            report["max_zq_dev"],
            report["max_tightness_gap"],
        )
        <= tolerance
    )
    return report


# ---------------------------------------------------------------------------
# original-constraint audit


def worst_case_user_rate(
    sol: BeamSolution, realization, config, samples: ErrorSampleSet, k: int
) -> float:
    return min(
        user_rate(sol, realization, config, k, samples.samples[i].dh_eu)
        for i in range(len(samples))
    )


def worst_case_leakage(
    sol: BeamSolution, realization, config, samples: ErrorSampleSet, k: int
) -> float:
    return max(
        leakage_rate(sol, realization, config, k, samples.samples[i].dH_be)
        for i in range(len(samples))
    )


def audit_constraints(
    sol: BeamSolution,
    realization: ChannelRealization,
    config,
    samples: ErrorSampleSet,
    tol: float = 1e-5,
    rate_slack: float | None = None,
) -> dict:
    """Evaluate every original constraint of the design problem on `sol`.

    Rate/leakage constraints are checked at every error sample in `samples`;
    margins are signed ("feasible by" when positive).  `rate_slack` loosens
    only the rate and leakage checks (audits at fresh, never-enforced samples
    tolerate a small spill); structural constraints always use `tol`.
    """
    rate_slack = tol if rate_slack is None else rate_slack
    K, N = realization.num_users, realization.num_subcarriers
    P = config.bs_power_max
    report: dict = {}

    binarity = float(np.max(np.abs(sol.s - np.round(sol.s))))
    report["c1_binary"] = {"margin": tol - binarity, "pass": binarity <= tol,
                           "binarity": binarity}

    sums = sol.s.sum(axis=1)
    c2_ok = bool(np.all(sums >= 2 - tol) and np.all(sums <= config.max_cluster_size + tol))
    report["c2_cluster"] = {
        "margin": float(min((sums - 2).min(), (config.max_cluster_size - sums).min())),
        "pass": c2_ok,
    }

    tot = sol.total_power()
    report["c3_power"] = {"margin": (P - tot) / P, "pass": tot <= P * (1 + tol),
                          "total_power": tot}

    rates = [worst_case_user_rate(sol, realization, config, samples, k) for k in range(K)]
    report["c4_rate"] = {
        "margin": float(min(rates) - config.rate_min),
        "pass": bool(min(rates) >= config.rate_min - rate_slack),
        "worst_rates": rates,
    }

    leaks = [worst_case_leakage(sol, realization, config, samples, k) for k in range(K)]
    lk_margins = [config.leakage_threshold_of_user(k) - leaks[k] for k in range(K)]
    report["c5_leakage"] = {
        "margin": float(min(lk_margins)),
        "pass": bool(min(lk_margins) >= -rate_slack),
        "worst_leakage": leaks,
    }

    crb_worst = max(
        crb_theta(sol.z_sense, realization, config, samples.samples[i].dH_be)
        for i in range(len(samples))
    )
    report["c6_crb"] = {
        "margin": float((config.crb_limit - crb_worst) / config.crb_limit)
        if math.isfinite(crb_worst) else -math.inf,
        "pass": bool(crb_worst <= config.crb_limit * (1 + tol)),
        "worst_crb": crb_worst,
    }

    z_pow = float(np.sum(np.abs(sol.z_sense) ** 2))
    report["c12_sense_power"] = {
        "margin": (tot - z_pow) / P,
        "pass": z_pow <= tot + P * tol,
        "sense_power": z_pow,
    }

    report["min_rate"] = float(min(rates))
    report["max_leakage_excess"] = float(-min(lk_margins))
    report["passed"] = all(
        report[key]["pass"]
        for key in ("c1_binary", "c2_cluster", "c3_power", "c4_rate", "c5_leakage",
                    "c6_crb", "c12_sense_power")
    )
    return report


# ---------------------------------------------------------------------------
# finite-difference CRB check


def crb_finite_difference(
    signals: np.ndarray,
    realization: ChannelRealization,
    config,
    delta: float = 1e-6,
) -> dict:
    """Compare the analytic target-channel derivative against central FD.

    Rebuilds h_bt(theta) from the stored geometry, forms the derivative by
    central differences, recomputes the CRB and reports relative errors.
    """
    V = realization.bs_antennas
    theta = realization.theta_target
    amp = math.sqrt(
        float(np.sum(np.abs(realization.h_bt[0]) ** 2)) / V
    )  # per-element amplitude sqrt(path loss)

    def h_of(th):
        return amp * steering_vector(th, V)

    hd_fd = (h_of(theta + delta) - h_of(theta - delta)) / (2.0 * delta)
    hd_an = amp * steering_vector_derivative(theta, V)
    deriv_err = float(
        np.linalg.norm(hd_fd - hd_an) / max(np.linalg.norm(hd_an), 1e-30)
    )

    crb_an = crb_theta(signals, realization, config)

    pert = ChannelRealization(
        h_user=realization.h_user,
        H_be_hat=realization.H_be_hat,
        eps_be=realization.eps_be,
        h_eu_hat=realization.h_eu_hat,
        eps_eu=realization.eps_eu,
        h_bt=realization.h_bt,
        h_bt_dot=np.tile(hd_fd, (realization.num_subcarriers, 1)),
        theta_target=theta,
        user_angles=realization.user_angles,
        user_distances_m=realization.user_distances_m,
        target_distance_m=realization.target_distance_m,
        eve_angle=realization.eve_angle,
        eve_distance_m=realization.eve_distance_m,
    )
    crb_fd = crb_theta(signals, pert, config)
    crb_err = abs(crb_fd - crb_an) / max(abs(crb_an), 1e-30)
    return {
        "derivative_rel_error": deriv_err,
        "crb_rel_error": float(crb_err),
        "crb_analytic": crb_an,
        "crb_fd": crb_fd,
    }


# ---------------------------------------------------------------------------
# brute-force benchmark for tiny instances


def _feasible_schedules(config) -> list[np.ndarray]:
    """All binary schedules with valid cluster sizes (and full user coverage
    when a positive minimum rate makes coverage mandatory)."""
    from itertools import combinations, product

    N, K = config.num_subcarriers, config.num_users
    per_n = []
    for _ in range(N):
        opts = []
        for size in range(2, config.max_cluster_size + 1):
            opts.extend(combinations(range(K), size))
        per_n.append(opts)
    out = []
    for combo in product(*per_n):
        s = np.zeros((N, K))
        for n, users in enumerate(combo):
            s[n, list(users)] = 1.0
        if config.rate_min > 0 and np.any(s.sum(axis=0) == 0):
            continue
        out.append(s)
    return out


def exhaustive_small_instance(
    realization: ChannelRealization,
    config,
    samples: ErrorSampleSet,
    num_draws: int = 100_000,
    seed: int = 0,
) -> dict:
    """Randomized brute-force benchmark: best feasible max-min rate found.

    Enumerates every feasible schedule; for each, draws `num_draws` random
    rank-one beam sets with Dirichlet power splits (including an AN share),
    checks the original constraints at the provided error samples, and keeps
    the best worst-case minimum rate.  Sensing uses the full-power principal
    direction of the worst-case sensing gain, shared by all candidates.

    Intended for tiny dimensions only; cost is O(schedules * draws).
    """
    rng = np.random.default_rng(seed)
    N, K, V = realization.num_subcarriers, realization.num_users, realization.bs_antennas
    P = config.bs_power_max
    S = len(samples)

    # best sensing vector available to any design: principal direction of the
    # per-subcarrier gain at full power, split to maximize the worst sample
    from .metrics import sensing_gain_matrix

    Q = np.array([
        [sensing_gain_matrix(realization, config, n, samples.samples[i].dH_be[n])
         for n in range(N)]
        for i in range(S)
    ])  # (S, N, V, V)
    z_best = np.zeros((N, V), dtype=complex)
    for n in range(N):
        w_eig, U = np.linalg.eigh(Q[:, n].mean(axis=0))
        z_best[n] = U[:, -1]
    # grid over per-subcarrier power split
    best_split, best_val = None, -1.0
    for frac in np.linspace(0.0, 1.0, 21):
        shares = np.array([frac, 1 - frac]) if N == 2 else np.full(N, 1.0 / N)
        zs = z_best * np.sqrt(P * shares)[:, None]
        val = min(
            float(np.sum(sensing_quadratic_forms(zs, realization, config,
                                                 samples.samples[i].dH_be)))
            for i in range(S)
        )
        if val > best_val:
            best_val, best_split = val, shares
        if N != 2:
            break
    z_sense = z_best * np.sqrt(P * best_split)[:, None]
    crb_ok = all(
        crb_theta(z_sense, realization, config, samples.samples[i].dH_be)
        <= config.crb_limit
        for i in range(S)
    )

    best = {"min_rate": -math.inf, "schedule": None, "solution": None,
            "crb_feasible": bool(crb_ok), "num_draws": num_draws}
    if not crb_ok:
        return best

    h = realization.h_user
    hn2 = np.sum(np.abs(h) ** 2, axis=2)                       # (N, K)
    jam = np.empty((S, N, K))
    for i in range(S):
        for n in range(N):
            for k in range(K):
                h_eu = samples.h_eu(realization, i, n, k)
                jam[i, n, k] = config.eve_power * float(np.vdot(h_eu, h_eu).real)
    H_all = np.array([
        [samples.H_be(realization, i, n) for n in range(N)] for i in range(S)
    ])                                                          # (S, N, V, M)
    HF2 = np.sum(np.abs(H_all) ** 2, axis=(2, 3))               # (S, N)
    thr = np.array([config.leakage_threshold_of_user(k) for k in range(K)])
    from .metrics import stronger_users as _stronger

    batch = 2000
    for s in _feasible_schedules(config):
        pairs = [(n, k) for n in range(N) for k in range(K) if s[n, k] > 0]
        npair = len(pairs)
        pn = np.array([p[0] for p in pairs])
        pk = np.array([p[1] for p in pairs])
        pidx = {p: i for i, p in enumerate(pairs)}
        mui_sources = [
            [pidx[(n, j)] for j in _stronger(realization, n, k) if (n, j) in pidx]
            for (n, k) in pairs
        ]
        done = 0
        while done < num_draws:
            b = min(batch, num_draws - done)
            done += b
            g = rng.standard_normal((b, npair, V)) + 1j * rng.standard_normal((b, npair, V))
            g /= np.linalg.norm(g, axis=2, keepdims=True)
            split = rng.dirichlet(np.ones(npair + N), size=b) * P
            w = g * np.sqrt(split[:, :npair])[:, :, None]       # (b, npair, V)

            # |h_{pn[p],k}^H w_p|^2 for every candidate user k on the pair's
            # subcarrier: (b, npair, K)
            x2 = np.abs(np.einsum("bpv,pkv->bpk", w, h[pn].conj())) ** 2
            sig = x2[:, np.arange(npair), pk]                    # (b, npair)
            mui = np.zeros((b, npair))
            for p, src in enumerate(mui_sources):
                for q in src:
                    mui[:, p] += x2[:, q, pk[p]]
            an_user = split[:, npair:][:, pn] / V * hn2[pn, pk]  # (b, npair)
            den = (mui + an_user + config.noise_user)[:, None, :] + jam[:, pn, pk][None]
            pair_rate = np.log2(1.0 + sig[:, None, :] / den)     # (b, S, npair)
            rate = np.zeros((b, S, K))
            for p in range(npair):
                rate[:, :, pk[p]] += pair_rate[:, :, p]
            val = rate.min(axis=1)                               # worst sample, (b, K)
            if config.rate_min > 0:
                val = np.where(s.sum(axis=0) > 0, val, 0.0)
            val = val.min(axis=1)                                # (b,)

            # leakage per pair and sample: (S, b, npair)
            proj = np.einsum("bpv,spvm->sbpm", w, H_all[:, pn].conj())
            xi_n = np.sum(np.abs(proj) ** 2, axis=3)
            xi_d = (split[:, npair:][:, pn] / V)[None] * HF2[:, pn][:, None, :] \
                + config.noise_eve
            pair_leak = np.log2(1.0 + xi_n / xi_d)
            leak = np.zeros((S, b, K))
            for p in range(npair):
                leak[:, :, pk[p]] += pair_leak[:, :, p]
            leak_ok = np.all(leak.max(axis=0) <= thr[None, :] + 1e-12, axis=1)

            feas = leak_ok & (val >= config.rate_min)
            if not np.any(feas):
                continue
            val = np.where(feas, val, -math.inf)
            i = int(np.argmax(val))
            if val[i] <= best["min_rate"]:
                continue
            sol = BeamSolution.zeros(N, K, V)
            sol.s = s.copy()
            for p, (n, k) in enumerate(pairs):
                sol.W[n, k] = np.outer(w[i, p], w[i, p].conj())
                sol.Wbar[n, k] = sol.W[n, k]
            for n in range(N):
                sol.V_an[n] = split[i, npair + n] / V * np.eye(V)
            sol.z_sense = z_sense.copy()
            best["min_rate"] = float(val[i])
            best["schedule"] = s.copy()
            best["solution"] = sol
    return best
