import logging
from multiprocessing import Pool

import numpy

from config import (
    C_R,
    C_S,
    LEARNING_RATE_DIFFUSION,
    VERIFY_BOUND_TOLERANCE,
    VERIFY_GAMMA,
    VERIFY_MASS_SHIFTS,
    VERIFY_MDP_INSTANCES,
    VERIFY_MDP_MAX_ACTIONS,
    VERIFY_MDP_MAX_STATES,
    VERIFY_PERTURBATION_PAIRS,
)

from .bisim import (
    check_metric_axioms,
    diameter_bound,
    exact_bisim,
    policy_evaluation,
    uniform_policy,
    value_gap_violation,
    verify_contraction,
    verify_model_error_bound,
    verify_value_bound,
)
from .diffusion import NoiseSchedule, ScoreNet, denoise, fit_score_net, forward_sample, invert_delta, make_schedule
from .envs import perturb_mdp, random_finite_mdp
from .errors import HypothesisError, VerificationError
from .models import DiagGaussian, FiniteMDP, NoiseSurrogate, SuiteReport, VerifySuite, Violation
from .tensor import Tensor
from .transport import w1_dual_check, w2_diag_gaussian, wp_discrete, wp_empirical_1d

logger = logging.getLogger("cadiff.verification")

Check = tuple[str, float, str]

ORDERS = (1.0, 2.0)
METRIC_TOLERANCE = 1e-9
AXIOM_TOLERANCE = 1e-7
GAUSSIAN_SAMPLES = 100_000
GAUSSIAN_RELATIVE_TOLERANCE = 0.02
ROUND_TRIP_TOLERANCE = 1e-10
ASYNCHRONY_TOLERANCE = 1e-8

MIXTURE_CENTERS = (-2.0, 2.0)
MIXTURE_STD = 0.05
MIXTURE_SAMPLES = 4096
MIXTURE_STEPS = 5000
MIXTURE_DELTA = 2


class OracleNoise:
    """
    Noise predictor that knows the clean signal: eps = (x^k - sqrt(ab_k) x0) / sqrt(1 - ab_k).
    """

    def __init__(self, x0: numpy.ndarray, sched: NoiseSchedule):
        self.x0 = numpy.atleast_2d(x0)
        self.sched = sched

    def predict_noise(self, x_k, y, cond_mask, k) -> Tensor:
        x_k = x_k.data if isinstance(x_k, Tensor) else numpy.asarray(x_k)
        alpha_bar = self.sched.alpha_bar[numpy.asarray(k)].reshape(-1, 1)
        return Tensor((x_k - numpy.sqrt(alpha_bar) * self.x0) / numpy.sqrt(1.0 - alpha_bar))


def _random_mdp(seed: int, gamma: float = VERIFY_GAMMA) -> FiniteMDP:
    rng = numpy.random.default_rng(seed)
    n_states = int(rng.integers(2, VERIFY_MDP_MAX_STATES + 1))
    n_actions = int(rng.integers(1, VERIFY_MDP_MAX_ACTIONS + 1))
    return random_finite_mdp(rng, n_states, n_actions, gamma)


def wasserstein_checks(seed: int) -> list[Check]:
    """
    Order monotonicity, the diameter bound between W1 and W2, and dual <= primal
    on random point clouds in the plane.
    """
    rng = numpy.random.default_rng(seed)
    n = int(rng.integers(2, 7))
    points = rng.normal(size=(n, 2))
    cost = numpy.linalg.norm(points[:, None, :] - points[None, :, :], axis=2)
    mu, nu = rng.dirichlet(numpy.ones(n)), rng.dirichlet(numpy.ones(n))
    w1, w2, w3 = (wp_discrete(mu, nu, cost, p) for p in (1.0, 2.0, 3.0))
    diameter = float(cost.max())
    anchors = rng.normal(size=n)
    potential = numpy.min(anchors[None, :] + cost, axis=1)
    dual = w1_dual_check(mu, nu, cost, potential)
    return [
        ("w2 >= w1", w2 - w1 + METRIC_TOLERANCE, f"w1={w1:.6g} w2={w2:.6g}"),
        ("w3 >= w2", w3 - w2 + METRIC_TOLERANCE, f"w2={w2:.6g} w3={w3:.6g}"),
        ("w2 <= diam^(1/2) w1^(1/2)", numpy.sqrt(diameter * w1) - w2 + METRIC_TOLERANCE, f"diam={diameter:.6g}"),
        ("dual <= primal", w1 - dual + METRIC_TOLERANCE, f"dual={dual:.6g} w1={w1:.6g}"),
    ]


def gaussian_closed_form_check(seed: int) -> Check:
    """
    Closed-form W2 of N(0, 1) and N(0, 3^2) against the sorted empirical coupling.
    """
    rng = numpy.random.default_rng(seed)
    exact = w2_diag_gaussian(
        DiagGaussian(mean=numpy.zeros(1), std=numpy.ones(1)), DiagGaussian(mean=numpy.zeros(1), std=numpy.full(1, 3.0))
    )
    empirical = wp_empirical_1d(rng.normal(0.0, 1.0, GAUSSIAN_SAMPLES), rng.normal(0.0, 3.0, GAUSSIAN_SAMPLES), p=2.0)
    relative = abs(empirical - exact) / exact
    return ("gaussian closed form", GAUSSIAN_RELATIVE_TOLERANCE - relative, f"exact={exact:.6g} empirical={empirical:.6g}")


def bisim_checks(seed: int, C_r: float = C_R, C_s: float = C_S) -> list[Check]:
    """
    Diameter bound, contraction rate, pseudo-metric axioms, uniqueness from a
    second start and monotonicity in C_s, for p in {1, 2}.
    """
    mdp = _random_mdp(seed)
    checks: list[Check] = []
    for p in ORDERS:
        metric = exact_bisim(mdp, C_r, C_s, p)
        bound = diameter_bound(mdp, C_r, C_s)
        checks.append((f"diameter p={p:g}", bound + METRIC_TOLERANCE - float(metric.d.max()), f"bound={bound:.6g}"))

        contraction = verify_contraction(mdp, C_r, C_s, p)
        checks.append(
            (f"contraction p={p:g}", C_r + C_s + METRIC_TOLERANCE - contraction.observed_rate,
             f"rate={contraction.observed_rate:.6g}")
        )

        axioms = check_metric_axioms(metric.d)
        checks.append((f"metric axioms p={p:g}", AXIOM_TOLERANCE - max(axioms.values()), str(axioms)))

        start = numpy.full_like(metric.d, bound)
        numpy.fill_diagonal(start, 0.0)
        other = exact_bisim(mdp, C_r, C_s, p, d0=start)
        gap = float(numpy.max(numpy.abs(other.d - metric.d)))
        rate = C_r + C_s
        allowance = (metric.residual + other.residual) / (1.0 - rate) + METRIC_TOLERANCE
        checks.append((f"uniqueness p={p:g}", allowance - gap, f"gap={gap:.3e}"))

        larger = min(C_s + 0.05, 0.99 - C_r)
        if larger > C_s:
            grown = exact_bisim(mdp, C_r, larger, p)
            checks.append((f"monotone in C_s p={p:g}", float(grown.d.max() - metric.d.max()) + METRIC_TOLERANCE,
                           f"C_s={C_s} -> {larger}"))
    return checks


def theorem1_checks(seed: int, C_r: float = C_R, C_s: float = C_S) -> tuple[list[Check], float]:
    """
    Value bound C_r |V_i - V_j| <= d(i, j) for p in {1, 2}. Also returns the
    uniform-random-policy violation, which is reported but not asserted.
    """
    mdp = _random_mdp(seed)
    checks = []
    for p in ORDERS:
        report = verify_value_bound(mdp, C_r, C_s, p)
        checks.append((f"value bound p={p:g}", VERIFY_BOUND_TOLERANCE - report.max_violation,
                       f"violation={report.max_violation:.3e}"))
    d = exact_bisim(mdp, C_r, C_s, 1.0).d
    policy_violation = value_gap_violation(policy_evaluation(mdp, uniform_policy(mdp)), d, C_r)
    return checks, policy_violation


def corollary1_checks(seed: int, C_r: float = C_R, C_s: float = C_S) -> list[Check]:
    mdp = _random_mdp(seed)
    rng = numpy.random.default_rng([seed, 1])
    shift = VERIFY_MASS_SHIFTS[seed % len(VERIFY_MASS_SHIFTS)]
    variant = (seed // len(VERIFY_MASS_SHIFTS)) % 3
    mdp_hat = perturb_mdp(mdp, rng, shift, transitions=variant != 1, rewards=variant != 0)
    report = verify_model_error_bound(mdp, mdp_hat, C_r, C_s)
    return [
        ("model error bound", report.bound + VERIFY_BOUND_TOLERANCE - report.sup_gap,
         f"gap={report.sup_gap:.3e} e_phi={report.e_phi:.3e} e_theta={report.e_theta:.3e} shift={shift}")
    ]


def diffusion_checks(seed: int) -> list[Check]:
    """
    Exact round trip through invert_delta and the oracle-network reverse
    chain for delta in {1, 2, 3}.
    """
    rng = numpy.random.default_rng(seed)
    checks = []
    for delta in (1, 2, 3):
        sched = make_schedule(500, 1e-4, 2e-2, 1, delta)
        x0 = rng.normal(size=(8, 3))
        x_delta = forward_sample(x0, delta, rng.normal(size=x0.shape), sched)
        eps = (x_delta - numpy.sqrt(sched.alpha_bar[delta]) * x0) / numpy.sqrt(1.0 - sched.alpha_bar[delta])
        round_trip = float(numpy.max(numpy.abs(invert_delta(x_delta, eps, sched) - x0)))
        checks.append((f"round trip delta={delta}", ROUND_TRIP_TOLERANCE - round_trip, f"error={round_trip:.3e}"))
        recovered = denoise(x_delta, None, OracleNoise(x0, sched), sched)
        chain = float(numpy.max(numpy.abs(recovered - x0)))
        checks.append((f"oracle chain delta={delta}", ASYNCHRONY_TOLERANCE - chain, f"error={chain:.3e}"))
    return checks


def sample_mixture(rng: numpy.random.Generator, n: int) -> numpy.ndarray:
    centers = numpy.array(MIXTURE_CENTERS)[rng.integers(0, len(MIXTURE_CENTERS), size=n)]
    return (centers + MIXTURE_STD * rng.standard_normal(n)).reshape(-1, 1)


def mixture_schedule() -> NoiseSchedule:
    return make_schedule(20, 0.02, 0.5, 1, MIXTURE_DELTA)


def mixture_denoising_check(seed: int, steps: int = MIXTURE_STEPS) -> tuple[float, float]:
    """
    Trains a score network on delta-noised samples of a two-component mixture
    and returns (W1 of the noisy inputs, W1 of the denoised outputs), both
    measured against fresh clean samples.
    """
    rng = numpy.random.default_rng(seed)
    sched = mixture_schedule()
    clean = sample_mixture(rng, 16 * MIXTURE_SAMPLES)
    noisy = forward_sample(clean, sched.delta, rng.standard_normal(clean.shape), sched)
    net = ScoreNet("mixture", 1, 0, sched.K, rng)
    fit_score_net(net, noisy, None, sched, rng, steps, 256, lr=3.0 * LEARNING_RATE_DIFFUSION,
                  surrogate=NoiseSurrogate.MODEL)

    truth = sample_mixture(rng, MIXTURE_SAMPLES)
    test_clean = sample_mixture(rng, MIXTURE_SAMPLES)
    test_noisy = forward_sample(test_clean, sched.delta, rng.standard_normal(test_clean.shape), sched)
    denoised = denoise(test_noisy, None, net, sched)
    return wp_empirical_1d(test_noisy, truth), wp_empirical_1d(denoised, truth)


def _run_checks(suite: VerifySuite, seed: int) -> tuple[list[Check], float]:
    if suite == VerifySuite.WASSERSTEIN:
        return wasserstein_checks(seed), 0.0
    if suite == VerifySuite.BISIM:
        return bisim_checks(seed), 0.0
    if suite == VerifySuite.THEOREM1:
        return theorem1_checks(seed)
    if suite == VerifySuite.COROLLARY1:
        return corollary1_checks(seed), 0.0
    return diffusion_checks(seed), 0.0


def _suite_size(suite: VerifySuite) -> int:
    if suite == VerifySuite.COROLLARY1:
        return VERIFY_PERTURBATION_PAIRS
    if suite == VerifySuite.DIFFUSION:
        return 5
    return VERIFY_MDP_INSTANCES


def _collect(suite: VerifySuite, seeds: list[int], results: list[tuple[list[Check], float]]) -> SuiteReport:
    violations = []
    min_slack = numpy.inf
    for seed, (checks, _) in zip(seeds, results):
        for name, slack, detail in checks:
            min_slack = min(min_slack, slack)
            if slack < 0.0:
                violations.append(Violation(check=name, seed=seed, slack=slack, detail=detail))
    return SuiteReport(
        suite=suite,
        passed=not violations,
        instances=len(seeds),
        min_slack=float(min_slack) if seeds else 0.0,
        violations=violations,
    )


def run_suite(suite: VerifySuite, jobs: int = 1, instances: int | None = None, base_seed: int = 0,
              full: bool = False) -> SuiteReport:
    """
    Runs one randomized oracle suite over seeded instances; instances are
    spread over `jobs` processes and merged in seed order.
    """
    if instances is not None and instances < 1:
        raise VerificationError(f"suite {suite.value} needs at least one instance, got {instances}")
    seeds = [base_seed + index for index in range(instances or _suite_size(suite))]
    arguments = [(suite, seed) for seed in seeds]
    if jobs > 1:
        with Pool(processes=jobs) as pool:
            results = pool.starmap(_run_checks, arguments)
    else:
        results = [_run_checks(*argument) for argument in arguments]

    report = _collect(suite, seeds, results)
    if suite == VerifySuite.WASSERSTEIN:
        name, slack, detail = gaussian_closed_form_check(base_seed)
        report.notes["gaussian_relative_slack"] = slack
        if slack < 0.0:
            report.violations.append(Violation(check=name, seed=base_seed, slack=slack, detail=detail))
    if suite == VerifySuite.THEOREM1:
        report.notes["uniform_policy_max_violation"] = max(violation for _, violation in results)
    if suite == VerifySuite.DIFFUSION and full:
        noisy, denoised = mixture_denoising_check(base_seed)
        report.notes["mixture_w1_noisy"] = noisy
        report.notes["mixture_w1_denoised"] = denoised
        slack = 0.5 * noisy - denoised
        if slack < 0.0:
            report.violations.append(
                Violation(check="mixture denoising", seed=base_seed, slack=slack, detail=f"{denoised:.4g} vs {noisy:.4g}")
            )
    report.passed = not report.violations
    report.min_slack = min([report.min_slack] + [violation.slack for violation in report.violations])
    logger.info(
        "suite %s: %s over %d instances (min slack %.3e)",
        suite.value, "passed" if report.passed else "FAILED", report.instances, report.min_slack,
    )
    return report


def verify_mdp(mdp: FiniteMDP, C_r: float = C_R, C_s: float = C_S) -> list[SuiteReport]:
    """
    Bisimulation and value-bound checks on a single user-supplied MDP.
    """
    checks: list[Check] = []
    for p in ORDERS:
        metric = exact_bisim(mdp, C_r, C_s, p)
        bound = diameter_bound(mdp, C_r, C_s)
        checks.append((f"diameter p={p:g}", bound + METRIC_TOLERANCE - float(metric.d.max()), f"bound={bound:.6g}"))
        axioms = check_metric_axioms(metric.d)
        checks.append((f"metric axioms p={p:g}", AXIOM_TOLERANCE - max(axioms.values()), str(axioms)))
        rate = verify_contraction(mdp, C_r, C_s, p).observed_rate
        checks.append((f"contraction p={p:g}", C_r + C_s + METRIC_TOLERANCE - rate, f"rate={rate:.6g}"))
    reports = [_collect(VerifySuite.BISIM, [0], [(checks, 0.0)])]

    try:
        value_checks = [
            (f"value bound p={p:g}", VERIFY_BOUND_TOLERANCE - verify_value_bound(mdp, C_r, C_s, p).max_violation, "")
            for p in ORDERS
        ]
        reports.append(_collect(VerifySuite.THEOREM1, [0], [(value_checks, 0.0)]))
    except HypothesisError as e:
        logger.warning("skipping value bound: %s", e)
    return reports
