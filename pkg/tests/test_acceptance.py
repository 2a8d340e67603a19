"""Acceptance suite: one test per numbered criterion, each printing a PASS/FAIL line.

Experiments run once per session at their default (full) scale on the
fixed default seed; the reproducibility criterion reruns every command
from its embedded config at the reduced scale of configs/small.cfg.
"""
import json
import math
import os
from pathlib import Path

import numpy as np
import pytest

from enkf1d.cli import main
from enkf1d.experiments.suite import EXPERIMENTS, run_experiment
from enkf1d.model import new_model
from enkf1d.riccati import (
    RiccatiCoeffs,
    coeffs_from_model,
    d_phi_n,
    d_phi_n_product,
    phi,
    phi_iterated,
    phi_n_closed_form,
)

pytestmark = pytest.mark.slow

ROOT = Path(__file__).resolve().parents[1]
SMALL_CFG = ROOT / "configs" / "small.cfg"
WORKERS = max(1, min(4, os.cpu_count() or 1))
REPORT: dict[int, str] = {}
_CACHE: dict = {}


def record(number: int, title: str, ok: bool, detail: str) -> None:
    line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
    REPORT[number] = line
    print(line)


def experiment(name):
    if name not in _CACHE:
        _CACHE[name] = run_experiment(name, workers=WORKERS)
    return _CACHE[name]


def verdicts(name, *checks):
    res = experiment(name)
    chosen = [v for v in res.verdicts if any(v.check == c or v.check.startswith(c + "_") for c in checks)]
    assert chosen, f"no verdicts {checks} in {name}"
    return all(v.passed for v in chosen), "; ".join(f"{v.check}: {v.detail}" for v in chosen)


def random_coeffs(rng, count):
    out = []
    while len(out) < count:
        a, b, c, d = rng.uniform(0.05, 5.0, 4)
        if a * d - b * c > 1e-3:
            out.append(RiccatiCoeffs(a, b, c, d))
    return out


def random_models(rng, count):
    sign = lambda: rng.choice([-1.0, 1.0])
    return [new_model(*(sign() * rng.uniform(0.2, 3.0) for _ in range(4))) for _ in range(count)]


def test_criterion_01_closed_form_riccati():
    rng = np.random.default_rng(101)
    worst = 0.0
    for coeffs in random_coeffs(rng, 200):
        p = rng.uniform(0, 100)
        for n in rng.integers(0, 501, 5):
            a, b = phi_n_closed_form(coeffs, p, int(n)), phi_iterated(coeffs, p, int(n))
            worst = max(worst, abs(a - b) / abs(b))
    ok = worst <= 1e-10
    record(1, "closed-form vs iterated Riccati", ok, f"max relative gap {worst:.2e} (tol 1e-10)")
    assert ok


def test_criterion_02_fixed_point():
    unit = coeffs_from_model(new_model(1, 1, 1, 1)).fixed_point
    gap_unit = abs(unit - (1 + math.sqrt(5)) / 2)
    worst = 0.0
    for m in random_models(np.random.default_rng(102), 200):
        c = coeffs_from_model(m)
        r = c.fixed_point
        worst = max(worst, abs(phi(c, r) - r))
    ok = gap_unit <= 1e-12 and worst <= 1e-12
    record(2, "fixed point", ok, f"unit gap {gap_unit:.1e}, max |phi(r)-r| {worst:.1e} (tol 1e-12)")
    assert ok


def test_criterion_03_derivative_identity():
    rng = np.random.default_rng(103)
    worst_prod = worst_fd = 0.0
    h = 1e-6
    for coeffs in random_coeffs(rng, 100):
        p = rng.uniform(0.5, 10)
        n = int(rng.integers(0, 30))
        d = d_phi_n(coeffs, p, n)
        worst_prod = max(worst_prod, abs(d - d_phi_n_product(coeffs, p, n)) / abs(d))
        fd = (phi_n_closed_form(coeffs, p + h, n) - phi_n_closed_form(coeffs, p - h, n)) / (2 * h)
        worst_fd = max(worst_fd, abs(d - fd))
    ok = worst_prod <= 1e-10 and worst_fd <= 1e-6
    record(3, "derivative identity", ok,
           f"closed vs product {worst_prod:.1e} (tol 1e-10), vs finite differences {worst_fd:.1e} (tol 1e-6)")
    assert ok


def test_criterion_04_equality_in_law():
    ok, detail = verdicts("equality-in-law", "equality_in_law")
    record(4, "equality in law of the three variance representations", ok, detail)
    assert ok


def test_criterion_05_chisq_conditional_means():
    ok, detail = verdicts("equality-in-law", "conditional_means")
    record(5, "chi-square chain conditional means", ok, detail)
    assert ok


def test_criterion_06_uniform_error_rate():
    ok, detail = verdicts("uniform-error", "slope_rmse_p", "slope_rmse_m", "time_uniform_p", "time_uniform_m")
    record(6, "uniform error rate", ok, detail)
    assert ok


def test_criterion_07_bias():
    ok, detail = verdicts("bias", "bias_sign_p", "bias_rate")
    record(7, "bias sign and rate", ok, detail)
    assert ok


def test_criterion_08_unstable_signal():
    ok, detail = verdicts("decay", "decay_negative", "tracking_error_bounded")
    record(8, "unstable-signal stability", ok, detail)
    assert ok


def test_criterion_09_ergodicity():
    ok, detail = verdicts("ergodicity", "merge_p", "merge_pair")
    record(9, "ergodicity", ok, detail)
    assert ok


def test_criterion_10_clt():
    ok, detail = verdicts("clt", "ks_p", "variance_Q1")
    record(10, "fluctuation limit", ok, detail)
    assert ok


def test_criterion_11_inverse_moments():
    ok, detail = verdicts("inverse-moments", "moment_bounds", "central_anchor")
    record(11, "inverse chi-square moment bounds", ok, detail)
    assert ok


def test_criterion_12_feynman_kac():
    ok, detail = verdicts("fk-identity", "change_of_measure", "decay_bound_random")
    record(12, "Feynman-Kac identity", ok, detail)
    assert ok


def test_criterion_13_cf_envelope():
    ok, detail = verdicts("clt", "cf_envelope")
    record(13, "characteristic function envelope", ok, detail)
    assert ok


def _strip_metadata(path):
    data = json.loads(path.read_text())
    data.pop("metadata", None)
    return data


def test_criterion_14_reproducibility(tmp_path):
    problems = []
    for name in EXPERIMENTS:
        first, second = tmp_path / "first", tmp_path / "second"
        main(["experiment", name, "--config", str(SMALL_CFG), "--workers", "1", "--output-dir", str(first)])
        main(["experiment", name, "--config", str(first / f"{name}.csv"), "--workers", str(max(2, WORKERS)),
              "--output-dir", str(second)])
        if (first / f"{name}.csv").read_bytes() != (second / f"{name}.csv").read_bytes():
            problems.append(f"{name} csv")
        if _strip_metadata(first / f"{name}.json") != _strip_metadata(second / f"{name}.json"):
            problems.append(f"{name} json")
    sim_a, sim_b = tmp_path / "sim_a", tmp_path / "sim_b"
    assert main(["simulate", "--seed", "7", "--output-dir", str(sim_a)]) == 0
    assert main(["simulate", "--config", str(sim_a / "simulate.csv"), "--output-dir", str(sim_b)]) == 0
    if (sim_a / "simulate.csv").read_bytes() != (sim_b / "simulate.csv").read_bytes():
        problems.append("simulate csv")
    ok = not problems
    record(14, "reproducibility", ok,
           f"{len(EXPERIMENTS)} experiments and simulate rerun from embedded config with workers 1 vs "
           f"{max(2, WORKERS)}: " + ("identical" if ok else "differences in " + ", ".join(problems)))
    assert ok
