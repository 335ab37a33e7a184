"""Oracle and property checks runnable outside the test suite.

Each check pits an implementation path against an independent route to the
same number: exhaustive enumeration, brute-force scans, Monte-Carlo
simulation of the full transceiver chain, or finite differences.  The CLI
``verify`` subcommand runs them all and reports one pass/fail line each;
the test suite asserts on the same results at the same tolerances.
"""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass

import numpy as np

from . import signal_chain as sc
from .analysis import empirical_aircomp_mse
from .channel import InterferenceProfile, activation_probability, draw_channels, transmit_round
from .depth_control import (GsiEstimate, SirConfig, adaptive_depth, beta_adaptive,
                            beta_fixed, estimate_gsi, fixed_depth)
from .tasks import LogisticL2, MlpSmall, Quadratic


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0


def _result(name, passed, detail, t0) -> CheckResult:
    return CheckResult(name=name, passed=bool(passed), detail=detail,
                       seconds=time.perf_counter() - t0)


def check_activation_probability(seed: int = 0, draws: int = 100_000,
                                 g_th: float = 0.2,
                                 tol: float = 0.01) -> CheckResult:
    """Empirical active fraction vs exp(-g_th) within ±tol."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(101,)))
    chan = draw_channels(draws, g_th, p0=1.0, rng=rng)
    frac = chan.active_count / draws
    expected = activation_probability(g_th)
    return _result("activation_probability", abs(frac - expected) <= tol,
                   f"empirical {frac:.4f} vs exp(-{g_th}) = {expected:.4f} "
                   f"(tol ±{tol})", t0)


def check_despread_variance(seed: int = 0, outputs: int = 100_000,
                            gains=(1, 2, 8, 32), p_i: float = 1.0,
                            rel_tol: float = 0.05) -> CheckResult:
    """De-spread interference variance equals P_I/G for each gain."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(102,)))
    details = []
    ok = True
    for g in gains:
        pn = sc.generate_pn(outputs, g, rng)
        frame = math.sqrt(p_i) * (rng.standard_normal(outputs * g)
                                  + 1j * rng.standard_normal(outputs * g))
        out = sc.despread(frame, pn)
        var = float(np.var(out))
        expected = p_i / g
        ok &= abs(var - expected) <= rel_tol * expected
        details.append(f"G={g}: {var:.5f} vs {expected:.5f}")
    return _result("despread_interference_variance", ok,
                   "; ".join(details) + f" (tol {rel_tol:.0%})", t0)


def check_compression_identity(seed: int = 0, max_dim: int = 8,
                               tol: float = 1e-12) -> CheckResult:
    """Exhaustive mean of ||x - zero_pad(prune(x))||² over all masks.

    For every (D, S) with D <= max_dim the mean over all C(D, S) masks must
    equal (1 - S/D)·||x||² exactly (up to float roundoff).
    """
    t0 = time.perf_counter()
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(103,)))
    worst = 0.0
    for d in range(1, max_dim + 1):
        x = rng.standard_normal(d)
        norm_sq = float(x @ x)
        for s in range(1, d + 1):
            total = 0.0
            count = 0
            for combo in itertools.combinations(range(d), s):
                mask = sc.PruningMask(indices=np.asarray(combo), source_dim=d)
                recon = sc.zero_pad(sc.prune(x, mask), mask)
                total += float(np.sum((x - recon) ** 2))
                count += 1
            expected = (1.0 - s / d) * norm_sq
            err = abs(total / count - expected) / max(norm_sq, 1e-30)
            worst = max(worst, err)
    return _result("random_compression_identity", worst <= tol,
                   f"worst relative deviation {worst:.3e} over all (D<= {max_dim}, S) "
                   f"(tol {tol:g})", t0)


def check_depth_optimizer_oracles(seed: int = 0, draws: int = 1000) -> CheckResult:
    """Closed-form/clipped depth decisions vs brute-force argmin, zero mismatches."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(104,)))
    mism_fixed = 0
    for _ in range(draws):
        cfg = SirConfig(
            p0=10.0 ** rng.uniform(-3.5, 1.5), p_i=1.0,
            k=int(rng.integers(1, 51)), xi_a=float(rng.uniform(0.05, 1.0)),
            d=int(rng.integers(2, 2049)))
        depths = np.arange(1, cfg.d + 1)
        oracle = int(depths[np.argmin(beta_fixed(depths, cfg))])
        if fixed_depth(cfg).g != oracle:
            mism_fixed += 1
    mism_adaptive = 0
    for _ in range(draws):
        cfg = SirConfig(
            p0=10.0 ** rng.uniform(-3.5, 1.5), p_i=1.0,
            k=int(rng.integers(1, 51)), xi_a=float(rng.uniform(0.05, 1.0)),
            d=int(rng.integers(2, 1025)))
        gsi = GsiEstimate(alpha_sq=float(10 ** rng.uniform(-3, 3)),
                          v_sq=float(10 ** rng.uniform(-4, 2)),
                          mean=0.0, per_device=())
        active = int(rng.integers(1, cfg.k + 1))
        depths = np.arange(1, cfg.d + 1)
        oracle = int(depths[np.argmin(beta_adaptive(depths, gsi, active, cfg))])
        if adaptive_depth(gsi, active, cfg).g != oracle:
            mism_adaptive += 1
    ok = mism_fixed == 0 and mism_adaptive == 0
    return _result("depth_optimizer_oracles", ok,
                   f"fixed mismatches {mism_fixed}/{draws}, "
                   f"adaptive mismatches {mism_adaptive}/{draws}", t0)


def check_lossless_chain(seed: int = 0, rel_tol: float = 1e-10) -> CheckResult:
    """Zero interference + all devices active: receiver equals the ideal average."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(105,)))
    dim, k = 48, 6
    grads = rng.standard_normal((k, dim)) * 2.0 + 0.3
    gsi = estimate_gsi(list(grads))
    params = sc.NormalizationParams(mean=gsi.mean, std=math.sqrt(gsi.v_sq))
    mask = sc.generate_mask(dim, 1, rng)  # gamma = 1: keep everything
    pn = sc.generate_pn(mask.size, 1, rng)
    chan = draw_channels(k, 0.0, p0=0.25, rng=rng)  # g_th = 0: all active
    chips = np.stack([sc.device_chips(g, mask, params, pn) for g in grads])
    frame = transmit_round(chips, chan, InterferenceProfile(0.0), rng)
    y_prime = sc.receiver_output(frame, mask, params, pn, k, 0.25)
    ideal = grads.mean(axis=0)
    err = float(np.linalg.norm(y_prime - ideal) / np.linalg.norm(ideal))
    return _result("lossless_chain", err <= rel_tol,
                   f"relative error {err:.3e} (tol {rel_tol:g})", t0)


def check_moment_bounds(seed: int = 0, draws: int = 200_000) -> CheckResult:
    """E[1/|K|] <= 2/(K·ξ) and E[1/|K|²] <= 6/(K·ξ)² given |K| >= 1."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(106,)))
    details = []
    ok = True
    for k in (5, 10, 20):
        for xi in (0.5, 0.82):
            counts = rng.binomial(k, xi, size=draws)
            counts = counts[counts >= 1]
            m1 = float(np.mean(1.0 / counts))
            m2 = float(np.mean(1.0 / counts.astype(np.float64) ** 2))
            b1, b2 = 2.0 / (k * xi), 6.0 / (k * xi) ** 2
            ok &= (m1 <= b1) and (m2 <= b2)
            details.append(f"K={k},ξ={xi}: {m1:.4f}<={b1:.4f}, {m2:.5f}<={b2:.5f}")
    return _result("binomial_moment_bounds", ok, "; ".join(details), t0)


def check_gradient_finite_differences(seed: int = 0, points: int = 100,
                                      rel_tol: float = 1e-5) -> CheckResult:
    """Analytic gradients vs central differences of the loss, per task."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(107,)))
    tasks = [
        ("logistic_l2", LogisticL2(dim=12, l2=0.05), True),
        ("mlp_small", MlpSmall(in_features=6, hidden=5, l2=0.01), True),
        ("quadratic", Quadratic(dim=9, curvature=1.3), False),
    ]
    details = []
    ok = True
    for name, task, classify in tasks:
        n = 24
        dim = task.dim
        if classify:
            feat = getattr(task, "in_features", dim)
            X = rng.standard_normal((n, feat))
            y = rng.integers(0, 2, n).astype(np.float64)
        else:
            X = rng.standard_normal((n, dim))
            y = np.zeros(n)
        worst = 0.0
        for _ in range(points):
            w = rng.standard_normal(dim) * 0.7
            v = rng.standard_normal(dim)
            v /= np.linalg.norm(v)
            h = 1e-5
            fd = (task.loss(w + h * v, X, y) - task.loss(w - h * v, X, y)) / (2 * h)
            an = float(task.gradient(w, X, y) @ v)
            worst = max(worst, abs(fd - an) / max(abs(an), abs(fd), 1e-8))
        ok &= worst <= rel_tol
        details.append(f"{name}: worst rel err {worst:.2e}")
    return _result("gradient_finite_differences", ok,
                   "; ".join(details) + f" (tol {rel_tol:g})", t0)


def check_mse_decomposition(seed: int = 0, trials: int = 10_000,
                            rel_tol: float = 0.03) -> CheckResult:
    """Empirical chain error vs closed-form decomposition and its ablations.

    At D=128, K=10, G_th=0.2, SIR -23 dB, for G in {1, 4, 16, 64}: the
    full empirical error matches the two-term closed form within rel_tol,
    the interference-free run matches the pruning term, and the
    full-mask run matches the interference term.
    """
    t0 = time.perf_counter()
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(108,)))
    dim, k, g_th, p_i = 128, 10, 0.2, 1.0
    p0 = p_i * 10.0 ** (-23.0 / 10.0)
    cfg = SirConfig(p0=p0, p_i=p_i, k=k, xi_a=activation_probability(g_th), d=dim)
    grads = rng.standard_normal((k, dim)) + 0.1
    details = []
    ok = True

    def rel(a, b):
        if b == 0.0:
            return abs(a)
        return abs(a - b) / abs(b)

    for g in (1, 4, 16, 64):
        full = empirical_aircomp_mse(grads, g, g_th, p0, p_i, trials, rng)
        closed = full.closed_form(cfg)
        err_total = rel(full.mse, closed.total)
        ok &= err_total <= rel_tol

        no_intf = empirical_aircomp_mse(grads, g, g_th, p0, 0.0, trials, rng)
        err_prune = rel(no_intf.mse,
                        no_intf.closed_form(cfg).pruning_term)
        ok &= err_prune <= rel_tol if g > 1 else no_intf.mse <= 1e-12

        full_mask = empirical_aircomp_mse(grads, g, g_th, p0, p_i, trials, rng,
                                          gamma=1.0)
        err_intf = rel(full_mask.mse,
                       full_mask.closed_form(cfg).interference_term)
        ok &= err_intf <= rel_tol
        details.append(f"G={g}: total {err_total:.1%}, "
                       f"pruning {err_prune if g > 1 else 0:.1%}, "
                       f"interference {err_intf:.1%}")
    return _result("mse_decomposition", ok,
                   "; ".join(details) + f" (tol {rel_tol:.0%})", t0)


ALL_CHECKS = (
    check_activation_probability,
    check_despread_variance,
    check_compression_identity,
    check_depth_optimizer_oracles,
    check_lossless_chain,
    check_moment_bounds,
    check_gradient_finite_differences,
    check_mse_decomposition,
)


def run_all(seed: int = 0) -> list[CheckResult]:
    return [check(seed=seed) for check in ALL_CHECKS]
