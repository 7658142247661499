"""Acceptance criteria at their stated tolerances, on the default configuration.

Each test appends one PASS/FAIL line to the terminal summary. The full module
takes roughly half an hour on one core.
"""
import json
import time
from pathlib import Path

import pytest

from divfbp.cli import main
from divfbp.config import build_config
from divfbp.params import CaseTag
from divfbp.pipeline import assemble_case, dividend_rows, params_of, pde_mc_rows, solve_case
from divfbp.verify import (boundary_limits, creation_check, full_info_agreement, hjb_check, structural_check,
                           tail_oracle)

from conftest import ACCEPTANCE_LINES

pytestmark = pytest.mark.slow

CFG = build_config()
CASE_NAMES = list(CFG["verify"]["cases"])
_case_results: dict[str, dict[int, bool]] = {name: {} for name in CASE_NAMES}


def report(number, passed, summary):
    line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {summary}"
    ACCEPTANCE_LINES.append(line)
    print(line)


@pytest.fixture(scope="module")
def runs():
    out = {}
    for name, block in CFG["verify"]["cases"].items():
        start = time.perf_counter()
        run = solve_case(params_of(block), CFG, keep_coarse=True)
        run.timings["solve"] = time.perf_counter() - start
        assemble_case(run, CFG)
        out[name] = run
    return out


def per_case(number, runs, check, describe):
    verdicts = {}
    parts = []
    for name, run in runs.items():
        res = check(run)
        verdicts[name] = bool(res["pass"])
        _case_results[name][number] = verdicts[name]
        parts.append(f"{name}: {describe(res)}")
    passed = all(verdicts.values())
    report(number, passed, "; ".join(parts))
    return passed, verdicts


def test_criterion_01_full_information_agreement():
    res = full_info_agreement(CFG)
    d = res["details"]
    est, gaps = d["estimates"], d["pair_gaps"]
    passed = res["pass"] and res["runtime"] <= 60
    report(1, passed, f"ode {est['ode']:.6f} psor {est['psor']:.6f} mc {est['mc']:.6f} (se {d['mc_std_error']:.4f}); "
                      f"max gap {max(gaps.values()):.2e} vs tol {d['tolerance']:.2e}; {res['runtime']:.0f}s")
    assert res["pass"], gaps
    assert res["runtime"] <= 60


def test_criterion_02_boundary_limits(runs):
    def check(run):
        res = boundary_limits(run)
        res["pass"] = res["pass"] and run.timings["solve"] <= 300
        res["seconds"] = run.timings["solve"]
        return res

    passed, verdicts = per_case(2, runs, check, lambda r: f"d_low/hx {r['d_low'] / r['hx']:.2f}, "
                                                          f"|d_high-a*|/hx {abs(r['d_high'] - r['a_star']) / r['hx']:.2f}, "
                                                          f"{r['seconds']:.0f}s")
    assert passed, verdicts


def test_criterion_03_pde_against_monte_carlo(runs):
    def check(run):
        start = time.perf_counter()
        rows = pde_mc_rows(run, CFG)
        secs = time.perf_counter() - start
        worst = max(rows, key=lambda r: r["gap"] / r["budget"])
        return {"pass": all(r["pass"] for r in rows) and secs <= 600, "worst": worst, "seconds": secs}

    passed, verdicts = per_case(3, runs, check, lambda r: f"worst gap {r['worst']['gap']:.4f} / budget "
                                                          f"{r['worst']['budget']:.4f}, {r['seconds']:.0f}s")
    assert passed, verdicts


def test_criterion_04_dividend_strategy_matches_v(runs):
    def check(run):
        start = time.perf_counter()
        rows = dividend_rows(run, CFG)
        secs = time.perf_counter() - start
        worst = max(rows, key=lambda r: r["error"] / max(r["budget"], 1e-300))
        return {"pass": all(r["pass"] for r in rows) and secs <= 600, "worst": worst, "seconds": secs}

    passed, verdicts = per_case(4, runs, check, lambda r: f"worst error {r['worst']['error']:.4f} / budget "
                                                          f"{r['worst']['budget']:.4f}, {r['seconds']:.0f}s")
    assert passed, verdicts


def test_criterion_05_complementarity_and_hjb(runs):
    passed, verdicts = per_case(5, runs, lambda run: hjb_check(run, CFG), lambda r: (
        f"complementarity {r['complementarity_residual']:.1e}, closed-form pass "
        f"{r['report']['closed_form_pass_fraction']:.4f}, continuation "
        f"{r['report']['continuation_residual']['max']:.3f}/{r['report']['budget']['continuation']:.3f}"))
    assert passed, verdicts


def test_criterion_06_creation_condition(runs):
    passed, verdicts = per_case(6, runs, lambda run: creation_check(run, CFG),
                                lambda r: f"ratio {r['ratio']:.2f}")
    assert passed, verdicts


def test_criterion_07_structural_invariants(runs):
    def describe(r):
        s = r["surface"]
        return (f"convex min {s['phi_convex_min']:.1e}, b-a* {s['b_max_minus_a_star_cells']:.2f} cells, "
                f"six-way {sum(r['six_way_mismatches'].values())}")

    passed, verdicts = per_case(7, runs, structural_check, describe)
    assert passed, verdicts


def test_criterion_08_tail_law():
    res, _ = tail_oracle(CFG)
    d = res["details"]
    report(8, res["pass"], f"sup deviation {d['max_deviation']:.4f} vs {d['tolerance']}")
    assert res["pass"]


def test_criterion_09_verify_is_deterministic(tmp_path):
    smoke = Path(__file__).parents[1] / "configs" / "smoke.json"
    codes = [main(["verify", "-c", str(smoke), "-o", str(tmp_path / n)]) for n in ("a", "b")]
    a, b = tmp_path / "a" / "verify", tmp_path / "b" / "verify"
    man_a = json.loads((a / "manifest.json").read_text())
    man_b = json.loads((b / "manifest.json").read_text())
    csv_same = all((a / f).read_bytes() == (b / f).read_bytes() for f in man_a["files"] if f.endswith(".csv"))
    passed = man_a == man_b and csv_same and codes[0] == codes[1]
    report(9, passed, f"{len(man_a['files'])} artifacts, manifests equal: {man_a == man_b}")
    assert passed


def test_criterion_10_case_coverage(runs):
    tags = {name: run.tag for name, run in runs.items()}
    sums = {name: run.params.drift_sum for name, run in runs.items()}
    covered = (CaseTag.CASE_II in tags.values() and any(s == 0 for s in sums.values())
               and any(s > 0 for s in sums.values()))
    complete = all(set(v) == {2, 3, 4, 5, 6, 7} for v in _case_results.values())
    passed = covered and complete and all(all(v.values()) for v in _case_results.values())
    failing = {n: sorted(k for k, ok in v.items() if not ok) for n, v in _case_results.items()}
    report(10, passed, f"tags {sorted(t.value for t in tags.values())}, failing criteria per case {failing}")
    assert passed
