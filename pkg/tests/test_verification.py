import numpy
import pytest

from cadiff import verification
from cadiff.models import VerifySuite
from cadiff.verification import run_suite, verify_mdp


@pytest.mark.parametrize(
    "suite, instances",
    [
        (VerifySuite.WASSERSTEIN, 10),
        (VerifySuite.BISIM, 3),
        (VerifySuite.THEOREM1, 5),
        (VerifySuite.COROLLARY1, 6),
        (VerifySuite.DIFFUSION, 2),
    ],
)
def test_suites_pass_on_small_samples(suite, instances):
    report = run_suite(suite, instances=instances)
    assert report.passed, report.violations
    assert report.instances == instances
    assert report.min_slack >= 0.0


def test_theorem1_reports_random_policy_gap():
    report = run_suite(VerifySuite.THEOREM1, instances=3)
    assert "uniform_policy_max_violation" in report.notes


def test_parallel_run_matches_serial():
    serial = run_suite(VerifySuite.COROLLARY1, jobs=1, instances=4)
    parallel = run_suite(VerifySuite.COROLLARY1, jobs=2, instances=4)
    assert serial == parallel


def test_violations_carry_the_instance_seed(monkeypatch):
    def failing_checks(seed):
        return [("always fails", -1.0 if seed == 12 else 1.0, "forced")]

    monkeypatch.setattr(verification, "wasserstein_checks", failing_checks)
    report = run_suite(VerifySuite.WASSERSTEIN, instances=3, base_seed=10)
    assert not report.passed
    assert [v.seed for v in report.violations] == [12]
    assert report.min_slack == -1.0


def test_user_mdp_checks(two_state_mdp):
    reports = verify_mdp(two_state_mdp)
    assert [r.suite for r in reports] == [VerifySuite.BISIM, VerifySuite.THEOREM1]
    assert all(r.passed for r in reports)


def test_user_mdp_outside_value_bound_hypothesis(two_state_mdp):
    reports = verify_mdp(two_state_mdp, C_r=0.4, C_s=0.2)
    assert [r.suite for r in reports] == [VerifySuite.BISIM]


def test_oracle_noise_inverts_forward_sample(rng):
    sched = verification.mixture_schedule()
    x0 = verification.sample_mixture(rng, 16)
    assert x0.shape == (16, 1)
    centers = numpy.abs(x0).reshape(-1)
    assert numpy.all(numpy.abs(centers - 2.0) < 0.5)
    oracle = verification.OracleNoise(x0, sched)
    eps = rng.standard_normal(x0.shape)
    x_k = numpy.sqrt(sched.alpha_bar[5]) * x0 + numpy.sqrt(1.0 - sched.alpha_bar[5]) * eps
    numpy.testing.assert_allclose(oracle.predict_noise(x_k, None, numpy.zeros(16), numpy.full(16, 5)).data, eps)


@pytest.mark.slow
@pytest.mark.parametrize("suite", list(VerifySuite))
def test_full_suites(suite):
    assert run_suite(suite, jobs=2).passed
