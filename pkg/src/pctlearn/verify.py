"""Statistical and algebraic verification of the engine's core guarantees.

Each check is an independent experiment with an explicit tolerance:

* unbiasedness        mean single-sample label vs. the true percentile
* variance reduction  pool-averaged labels shrink variance by the pool size
* soft-label algebra  per-reference loss == collapsed soft-label loss
* minimizer location  grid search puts the BCE optimum at the soft label
* value-weighted opt  a trained free scalar lands on the partial
                      expectation ratio given by numeric integration
* reservoir           chi-square test of uniform pool inclusion
* gradients           analytic backward vs. central finite differences

``run_all`` powers the command-line ``verify`` subcommand; the acceptance
tests call the same functions with their documented budgets.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import quad
from scipy.stats import chi2

from .labels import multi_sample_label, single_sample_label, value_weighted_label
from .losses import mbce_per_term, soft_bce, vwbce
from .model import DualHeadModel
from .state import PoolEntry, UserState, reservoir_update


@dataclass(frozen=True)
class SuiteResult:
    claim: str
    passed: bool
    measured: str
    tolerance: str
    seconds: float


def _result(claim, passed, measured, tolerance, started) -> SuiteResult:
    return SuiteResult(claim, bool(passed), measured, tolerance,
                       time.perf_counter() - started)


# ------------------------------------------------------------- unbiasedness


def _strict_indicator(y: float, reference: float) -> bool:
    return y > reference


def check_unbiasedness(
    draws: int = 10_000,
    n_users: int = 20,
    probes_per_user: int = 5,
    seed: int = 101,
    indicator: Callable[[float, float], bool] | None = None,
    min_pass_fraction: float = 0.95,
) -> SuiteResult:
    """Mean single-sample indicator vs. the true strict CDF, cell by cell.

    Cells are (user, probe magnitude) pairs: lognormal users probed at their
    own quantiles, plus discrete-valued users probed at their atoms, where
    tie handling actually matters. Every cell must land within 3 binomial
    standard deviations of the truth; the suite passes when at least
    ``min_pass_fraction`` of cells do.
    """
    started = time.perf_counter()
    if indicator is None:
        indicator = _strict_indicator
    rng = np.random.default_rng(seed)
    cells_total = 0
    cells_passed = 0
    worst = 0.0

    # lognormal users: mu, sigma drawn once, probes at their own quantiles
    quantile_probes = np.array([0.1, 0.3, 0.5, 0.7, 0.9])[:probes_per_user]
    for _ in range(n_users):
        mu = rng.uniform(0.2, 3.0)
        sigma = rng.uniform(0.6, 1.4)
        from scipy.stats import norm

        probes = np.exp(mu + sigma * norm.ppf(quantile_probes))
        references = np.exp(mu + sigma * rng.standard_normal(draws))
        for probe, true_p in zip(probes, quantile_probes):
            hits = np.fromiter(
                (indicator(float(probe), float(r)) for r in references),
                dtype=bool, count=draws,
            ).mean()
            sd = np.sqrt(max(true_p * (1 - true_p), 1e-12) / draws)
            dev = abs(hits - true_p)
            worst = max(worst, dev / sd if sd > 0 else np.inf)
            cells_total += 1
            cells_passed += dev <= 3 * sd

    # discrete users with atoms at 1, 3, 5: the strict CDF just below each
    # atom excludes the atom's own mass, so ties-as-above would fail here
    atoms = np.array([1.0, 3.0, 5.0])
    for _ in range(3):
        references = rng.choice(atoms, size=draws)
        for probe, true_p in [(1.0, 0.0), (3.0, 1 / 3), (5.0, 2 / 3),
                              (0.5, 0.0), (6.0, 1.0)]:
            hits = np.fromiter(
                (indicator(float(probe), float(r)) for r in references),
                dtype=bool, count=draws,
            ).mean()
            sd = np.sqrt(max(true_p * (1 - true_p), 1e-12) / draws)
            dev = abs(hits - true_p)
            tol = 3 * sd if true_p not in (0.0, 1.0) else 0.0
            cells_total += 1
            cells_passed += dev <= tol
    fraction = cells_passed / cells_total
    return _result(
        "single-sample labels are unbiased percentile estimates",
        fraction >= min_pass_fraction,
        f"{cells_passed}/{cells_total} cells within 3 binomial sd",
        f">= {min_pass_fraction:.0%} of cells",
        started,
    )


def check_label_unbiasedness_vs_oracle(
    oracle, draws: int = 10_000, probes=(0.1, 0.3, 0.5, 0.7, 0.9), seed: int = 7,
    min_pass_fraction: float = 0.95,
) -> SuiteResult:
    """Same unbiasedness check, but scored against a percentile oracle's
    empirical CDF instead of closed-form quantiles.

    ``single_sample_label`` is exercised directly: each draw builds a fresh
    one-entry pool so its variance is exactly binomial.
    """
    started = time.perf_counter()
    rng = np.random.default_rng(seed)
    cells_total = 0
    cells_passed = 0
    for user_id in oracle.users():
        probe_values = oracle.quantile_grid(user_id, np.asarray(probes))
        sample = oracle._samples[user_id]
        for probe in probe_values:
            true_p = oracle.true_percentile(user_id, float(probe))
            refs = rng.choice(sample, size=draws)
            hits = 0
            for r in refs:
                hits += single_sample_label(
                    float(probe), [PoolEntry(float(r), 0.0)], rng
                ).value
            mean = hits / draws
            sd = np.sqrt(max(true_p * (1 - true_p), 1e-12) / draws)
            cells_total += 1
            cells_passed += abs(mean - true_p) <= 3 * sd
    fraction = cells_passed / cells_total if cells_total else 0.0
    return _result(
        "single-sample labels match the oracle CDF",
        fraction >= min_pass_fraction,
        f"{cells_passed}/{cells_total} cells within 3 binomial sd",
        f">= {min_pass_fraction:.0%} of cells",
        started,
    )


# -------------------------------------------------------- variance reduction


def check_variance_reduction(
    replications: int = 10_000,
    pool_sizes: Sequence[int] = (5, 10, 50),
    seed: int = 23,
    band: float = 0.2,
) -> SuiteResult:
    """Var(pool-averaged label) / Var(single label) ~ 1/N at true p = 0.5.

    References are uniform on (0, 1) and the probe sits at 0.5, so the
    single-sample label is a fair coin. The measured ratio must stay within
    ``band`` of 1/N for every pool size.
    """
    started = time.perf_counter()
    rng = np.random.default_rng(seed)
    singles = np.empty(replications)
    for i in range(replications):
        pool = [PoolEntry(float(rng.random()), 0.0)]
        singles[i] = single_sample_label(0.5, pool, rng).value
    var_single = singles.var()
    measured = []
    ok = True
    for n in pool_sizes:
        values = np.empty(replications)
        for i in range(replications):
            pool = [PoolEntry(float(v), 0.0) for v in rng.random(n)]
            values[i] = multi_sample_label(0.5, pool).value
        ratio = values.var() / var_single
        measured.append(f"N={n}: {ratio:.5f}")
        ok &= (1 - band) / n <= ratio <= (1 + band) / n
    return _result(
        "pool averaging reduces label variance by the pool size",
        ok,
        "; ".join(measured),
        f"within [{1 - band:.1f}/N, {1 + band:.1f}/N]",
        started,
    )


# ------------------------------------------------------- soft-label algebra


def check_soft_label_linearity(
    cases: int = 100_000, seed: int = 31, tol: float = 1e-12
) -> SuiteResult:
    """Per-reference mean BCE == BCE against the averaged soft label.

    Checked for both the unweighted and the value-weighted forms over
    randomized probabilities, pool sizes, and magnitudes.
    """
    started = time.perf_counter()
    rng = np.random.default_rng(seed)
    worst_multi = 0.0
    worst_vw = 0.0
    for _ in range(cases):
        p_hat = float(rng.uniform(1e-6, 1 - 1e-6))
        n = int(rng.integers(1, 31))
        indicators = rng.integers(0, 2, size=n).astype(float)
        lhs = mbce_per_term(p_hat, indicators)
        rhs = soft_bce(p_hat, float(indicators.mean()))
        worst_multi = max(worst_multi, abs(lhs.loss - rhs.loss))

        magnitudes = rng.uniform(0.0, 10.0, size=n)
        y = float(rng.uniform(0.0, 12.0))
        pool = [PoolEntry(float(m), 0.0) for m in magnitudes]
        lhs_vw = vwbce(p_hat, pool, y)
        rhs_vw = soft_bce(p_hat, value_weighted_label(y, pool).value)
        worst_vw = max(worst_vw, abs(lhs_vw.loss - rhs_vw.loss))
    ok = worst_multi < tol and worst_vw < tol
    return _result(
        "per-reference losses collapse exactly to soft-label losses",
        ok,
        f"max |diff| multi={worst_multi:.2e}, value-weighted={worst_vw:.2e}",
        f"< {tol:g}",
        started,
    )


def check_bce_minimizer(
    n_targets: int = 100, step: float = 1e-4, seed: int = 37
) -> SuiteResult:
    """Grid search over p_hat puts the soft-BCE minimum at the soft label."""
    started = time.perf_counter()
    rng = np.random.default_rng(seed)
    grid = np.arange(step, 1.0, step)
    worst = 0.0
    for _ in range(n_targets):
        p_bar = float(rng.uniform(0.01, 0.99))
        losses = np.array([soft_bce(float(p), p_bar).loss for p in grid])
        best = grid[int(np.argmin(losses))]
        worst = max(worst, abs(best - p_bar))
    return _result(
        "soft-BCE has its unique minimum at the soft label",
        worst <= step + 1e-12,
        f"max |argmin - label| = {worst:.2e}",
        f"<= one grid step ({step:g})",
        started,
    )


# ---------------------------------------------------- value-weighted optimum


def partial_expectation_ratio(
    y: float, density: Callable[[float], float], upper: float
) -> float:
    """Numeric-integration oracle: share of total expected magnitude carried
    by values below y."""
    num, _ = quad(lambda t: t * density(t), 0.0, y)
    den, _ = quad(lambda t: t * density(t), 0.0, upper)
    return num / den


def check_value_weighted_optimum(
    probes: Sequence[float] = (0.2, 0.5, 0.6, 0.9),
    pool_size: int = 50,
    steps: int = 16_000,
    averaged_tail: int = 4_000,
    learning_rate: float = 0.25,
    tol: float = 0.02,
    seed: int = 41,
) -> SuiteResult:
    """A single free scalar trained on the value-weighted loss against
    uniform(0, 1) pools converges to the partial expectation ratio.

    The scalar is parameterized through a logit so plain gradient descent
    stays inside (0, 1); the tail average of its trajectory is compared to
    the quadrature oracle (which gives y*y for the uniform density).
    """
    started = time.perf_counter()
    rng = np.random.default_rng(seed)
    measured = []
    ok = True
    for y in probes:
        target = partial_expectation_ratio(float(y), lambda t: 1.0, 1.0)
        theta = 0.0
        tail = []
        for step_idx in range(steps):
            p_hat = 1.0 / (1.0 + np.exp(-theta))
            pool = [PoolEntry(float(v), 0.0) for v in rng.random(pool_size)]
            out = vwbce(float(p_hat), pool, float(y))
            theta -= learning_rate * out.d_loss_d_phat * p_hat * (1.0 - p_hat)
            if step_idx >= steps - averaged_tail:
                tail.append(p_hat)
        fitted = float(np.mean(tail))
        measured.append(f"y={y}: fitted {fitted:.4f} vs oracle {target:.4f}")
        ok &= abs(fitted - target) <= tol
    return _result(
        "value-weighted optimum is the partial expectation ratio",
        ok,
        "; ".join(measured),
        f"|fitted - oracle| <= {tol}",
        started,
    )


# ------------------------------------------------------ reservoir uniformity


def check_reservoir_uniformity(
    replications: int = 10_000,
    stream_length: int = 1_000,
    capacity: int = 50,
    significance: float = 0.001,
    seed: int = 43,
) -> SuiteResult:
    """Chi-square goodness of fit of pool inclusion counts against uniform.

    Each replication streams ``stream_length`` distinct items through one
    user's pool under a fresh seed; afterwards every item should have been
    retained with equal probability capacity/stream_length.
    """
    started = time.perf_counter()
    counts = np.zeros(stream_length)
    for rep in range(replications):
        rng = np.random.default_rng(np.random.SeedSequence([seed, rep]))
        state = UserState(capacity=capacity)
        for i in range(stream_length):
            reservoir_update(state, PoolEntry(float(i), 0.0), rng)
        for entry in state.pool:
            counts[int(entry.magnitude)] += 1
    expected = replications * capacity / stream_length
    statistic = float(((counts - expected) ** 2 / expected).sum())
    critical = float(chi2.ppf(1.0 - significance, df=stream_length - 1))
    return _result(
        "reservoir pools hold uniform samples of the stream",
        statistic < critical,
        f"chi-square {statistic:.1f} over {stream_length - 1} df",
        f"< {critical:.1f} (significance {significance})",
        started,
    )


# ------------------------------------------------------------------ gradients


def check_gradient_correctness(
    n_triples: int = 100,
    fd_step: float = 1e-5,
    tol: float = 1e-4,
    seed: int = 47,
) -> SuiteResult:
    """Analytic backward vs. central finite differences, every parameter.

    The probed objective is the linear functional d_yhat * y_hat(theta) +
    d_phat * p_hat(theta), whose exact parameter gradient is what backward
    reports for those upstreams.
    """
    started = time.perf_counter()
    rng = np.random.default_rng(seed)
    worst = 0.0
    for t in range(n_triples):
        feature_dim = int(rng.integers(3, 9))
        hidden = (int(rng.integers(4, 9)),)
        model = DualHeadModel(feature_dim, hidden, seed=int(rng.integers(0, 2**31)))
        for param in model.params.values():
            param += 0.5 * rng.standard_normal(param.shape)
        x = rng.standard_normal(feature_dim)
        d_yhat = float(rng.standard_normal())
        d_phat = float(rng.standard_normal())
        analytic = model.backward(x, d_yhat, d_phat)

        def objective() -> float:
            y_hat, p_hat = model.forward(x)
            return d_yhat * y_hat + d_phat * p_hat

        for name, param in model.params.items():
            flat = param.reshape(-1)
            numeric = np.empty_like(flat)
            for idx in range(flat.size):
                keep = flat[idx]
                flat[idx] = keep + fd_step
                up = objective()
                flat[idx] = keep - fd_step
                down = objective()
                flat[idx] = keep
                numeric[idx] = (up - down) / (2 * fd_step)
            a = analytic[name].reshape(-1)
            denom = np.maximum(np.maximum(np.abs(a), np.abs(numeric)), 1e-7)
            worst = max(worst, float(np.max(np.abs(a - numeric) / denom)))
    return _result(
        "analytic gradients match central finite differences",
        worst < tol,
        f"max relative error {worst:.2e} over {n_triples} random models",
        f"< {tol:g}",
        started,
    )


def check_gating_isolation(n_steps: int = 50, seed: int = 53) -> SuiteResult:
    """Steps with zero percentile upstream leave the percentile head
    bit-identical, byte for byte."""
    started = time.perf_counter()
    rng = np.random.default_rng(seed)
    model = DualHeadModel(6, (8,), seed=seed)
    before = {
        "pct_w": model.params["pct_w"].tobytes(),
        "pct_b": model.params["pct_b"].tobytes(),
    }
    for _ in range(n_steps):
        x = rng.standard_normal(6)
        grads = model.backward(x, float(rng.standard_normal()), 0.0)
        model.sgd_step(grads, 0.05)
    identical = (
        model.params["pct_w"].tobytes() == before["pct_w"]
        and model.params["pct_b"].tobytes() == before["pct_b"]
    )
    return _result(
        "gated-off steps leave the percentile head bit-identical",
        identical,
        "byte-compared after "
        f"{n_steps} regression-only steps: {'unchanged' if identical else 'CHANGED'}",
        "exact",
        started,
    )


def run_all(quick: bool = False, seed: int = 0) -> list[SuiteResult]:
    """Run every verification suite.

    Quick mode cuts the trial counts roughly tenfold; statistical
    tolerances that are expressed in standard deviations widen with the
    smaller samples automatically, and the fixed bands are relaxed.
    """
    scale = 10 if quick else 1
    results = [
        check_unbiasedness(draws=10_000 // scale, seed=101 + seed),
        check_variance_reduction(
            replications=10_000 // scale,
            seed=23 + seed,
            band=0.35 if quick else 0.2,
        ),
        check_soft_label_linearity(cases=100_000 // scale, seed=31 + seed),
        check_bce_minimizer(n_targets=100 // scale, seed=37 + seed),
        check_value_weighted_optimum(
            steps=16_000 // scale,
            averaged_tail=4_000 // scale,
            tol=0.05 if quick else 0.02,
            seed=41 + seed,
        ),
        check_reservoir_uniformity(replications=10_000 // scale, seed=43 + seed),
        check_gradient_correctness(n_triples=100 // scale, seed=47 + seed),
        check_gating_isolation(seed=53 + seed),
    ]
    return results
