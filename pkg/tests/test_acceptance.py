"""Acceptance criteria, one test per criterion, each at its stated tolerance.

The terminal summary lists one PASS/FAIL line per criterion.  The
long-horizon criteria take several minutes each on one core.
"""

import json
import math
import subprocess
import sys
import time

import numpy as np
import pytest

from hybridcover._parallel import pmap
from hybridcover.agent import EventKind
from hybridcover.config import SimConfig, load_config
from hybridcover.coverage import MissionSpace, coverage_value, evaluate_field
from hybridcover.gradcheck import check_gradient
from hybridcover.optimizer import AscentConfig, optimize
from hybridcover.simulation import run_simulation

SPACE = MissionSpace()


def fd_gradient(pos, ds, i, h=1e-4):
    g = np.zeros(2)
    for a in range(2):
        p1, p2 = pos.copy(), pos.copy()
        p1[i, a] += h
        p2[i, a] -= h
        g[a] = (coverage_value(p1, SPACE, ds) - coverage_value(p2, SPACE, ds)) / (2 * h)
    return g


def fd_own_block(pos, ds, i, h=1e-3):
    out = np.zeros((2, 2))
    for b in range(2):
        p1, p2 = pos.copy(), pos.copy()
        p1[i, b] += h
        p2[i, b] -= h
        g1 = evaluate_field(p1, SPACE, ds, hessian=False).gradient[i]
        g2 = evaluate_field(p2, SPACE, ds, hessian=False).gradient[i]
        out[:, b] = (g1 - g2) / (2 * h)
    return out


@pytest.mark.criterion("C1", "single interior disc H = pi delta^2 / 2 within 0.5%, < 1 s")
def test_criterion_1_analytic_coverage(detail):
    code = ("import math, time\n"
            "t = time.perf_counter()\n"
            "from hybridcover.coverage import MissionSpace, coverage_value\n"
            "s = MissionSpace()\n"
            "g = coverage_value([(30.0, 25.0)], s, [22.0], method='grid')\n"
            "p = coverage_value([(30.0, 25.0)], s, [22.0])\n"
            "print(g, p, time.perf_counter() - t)\n")
    out = subprocess.run([sys.executable, "-c", code], capture_output=True, text=True,
                         check=True).stdout.split()
    grid, polar, elapsed = map(float, out)
    exact = math.pi * 22 ** 2 / 2
    detail.append(f"grid rel err {abs(grid - exact) / exact:.2e}, polar rel err "
                  f"{abs(polar - exact) / exact:.2e}, cold process {elapsed:.2f} s")
    assert exact == pytest.approx(760.265, abs=1e-3)
    assert abs(grid - exact) / exact <= 5e-3
    assert abs(polar - exact) / exact <= 5e-3
    assert elapsed < 1.0


@pytest.mark.criterion("C2", "coverage gradient vs finite differences, 100 configs, <= 1e-3")
def test_criterion_2_gradient_oracle(detail):
    rng = np.random.default_rng(20240601)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(1, 4))
        pos = np.column_stack([rng.uniform(3, 57, n), rng.uniform(3, 47, n)])
        ds = rng.uniform(8, 25, n)
        grad = evaluate_field(pos, SPACE, ds, hessian=False).gradient
        for i in range(n):
            fd = fd_gradient(pos, ds, i)
            # relative to the gradient scale, floored at 1 (H is O(10^3))
            worst = max(worst, np.abs(grad[i] - fd).max() / max(np.abs(fd).max(), 1.0))
    elapsed = time.perf_counter() - start
    detail.append(f"max rel err {worst:.2e}, {elapsed:.1f} s")
    assert worst <= 1e-3
    assert elapsed < 60


@pytest.mark.criterion("C3", "own second-derivative blocks vs differences, 50 configs, <= 1e-2")
def test_criterion_3_second_derivative_oracle(detail):
    rng = np.random.default_rng(20240602)
    worst = 0.0
    for _ in range(50):
        n = int(rng.integers(1, 4))
        pos = np.column_stack([rng.uniform(0, 60, n), rng.uniform(0, 50, n)])
        ds = rng.uniform(8, 25, n)
        hess = evaluate_field(pos, SPACE, ds).hessian
        for i in range(n):
            ref = fd_own_block(pos, ds, i)
            worst = max(worst, np.abs(hess[i][:, i, :] - ref).max()
                        / max(np.abs(ref).max(), 1e-2))
    detail.append(f"max rel err {worst:.2e}")
    assert worst <= 1e-2


def small_ipa_configs(seed=20240603):
    rng = np.random.default_rng(seed)
    k = 0
    while True:
        n = k % 3 + 1
        k += 1
        pos = tuple((float(x), float(y)) for x, y in rng.uniform(2, 30, (n, 2)))
        soc = tuple(float(5e-4 * math.hypot(*p) + rng.uniform(0.03, 0.2)) for p in pos)
        yield SimConfig(initial_positions=pos, initial_soc=soc,
                        delta=tuple(float(d) for d in rng.uniform(10, 25, n)),
                        theta=tuple(float(t) for t in rng.uniform(0.4, 0.95, n)),
                        horizon=float(rng.choice([200.0, 300.0, 400.0])), dt=0.05,
                        policy=str(rng.choice(["frfs", "sdf"])))


@pytest.mark.criterion("C4", "IPA gradient vs finite differences, >= 20 configs, < 10 min")
def test_criterion_4_ipa_correctness(detail):
    start = time.perf_counter()
    stable, failures, skipped = [], [], 0
    layout = check_gradient(load_config("paper_s6").replace(horizon=600.0), delta=1e-3)
    reports = [layout]
    gen = small_ipa_configs()
    for _ in range(60):
        if len(stable) >= 21:
            break
        reports.append(check_gradient(next(gen), delta=1e-3))
        rep = reports[-1]
        if not rep.signature_stable or not np.any(rep.fd != 0):
            skipped += 1
            continue
        stable.append(rep)
    if layout.signature_stable:
        stable.insert(0, layout)
    for rep in stable:
        if not rep.passed:
            failures.append(rep.format())
    elapsed = time.perf_counter() - start
    worst = max(float(np.max(np.where(r.within, r.rel_error, np.inf))) for r in stable)
    detail.append(f"{len(stable)} stable configs (four-agent layout T=600 "
                  f"{'included' if layout.signature_stable else 'unstable'}), {skipped} skipped, "
                  f"{len(failures)} failing, worst rel err {worst:.2e}, {elapsed:.0f} s")
    assert not failures, "\n\n".join(failures)
    assert len(stable) >= 20
    assert elapsed < 600


def random_feasible_config(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 5))
    v = float(rng.uniform(2, 6))
    alpha = float(rng.uniform(5e-5, 2e-4))
    beta = float(n * alpha * v ** 2 * rng.uniform(1.0, 3.0))
    pos = tuple((float(rng.uniform(0, 60)), float(rng.uniform(0, 50))) for _ in range(n))
    soc = tuple(min(1.0, float(v * alpha * math.hypot(*p) + rng.uniform(0.005, 0.4)))
                for p in pos)
    return SimConfig(initial_positions=pos, initial_soc=soc,
                     delta=tuple(float(d) for d in rng.uniform(8, 25, n)),
                     theta=tuple(float(t) for t in rng.uniform(0.2, 1.0, n)),
                     v_max=v, alpha=alpha, beta=beta, horizon=300.0, dt=0.1,
                     policy=str(rng.choice(["frfs", "sdf"])),
                     mode23_sensing=bool(rng.integers(0, 2)), ipa="off", seed=int(seed))


def _feasibility_run(seed):
    cfg = random_feasible_config(seed)
    try:
        rec = run_simulation(cfg)
    except Exception as exc:  # reported, counted as a violation
        return {"seed": seed, "error": repr(exc)}
    q = rec.states[:, :, 2]
    dist = np.hypot(rec.states[:, :, 0], rec.states[:, :, 1])
    low = q < 1e-6
    away = rec.states[:, :, 3] < 3  # modes 1 and 2
    margin = q[away] - cfg.v_max * cfg.alpha * dist[away]
    return {"seed": seed, "error": None, "q_min": float(q.min()),
            "far": float(dist[low].max()) if low.any() else 0.0,
            "margin": float(margin.min()) if margin.size else 0.0,
            "intervals": occupancy_from_events(rec)}


def occupancy_from_events(rec):
    """[arrival, finish) intervals rebuilt from the event log."""
    open_at, intervals = {}, []
    for e in rec.events:
        if e.kind is EventKind.GUARD23:
            open_at[e.agent] = e.time
        elif e.kind is EventKind.GUARD31:
            intervals.append((open_at.pop(e.agent), e.time))
    intervals += [(t, rec.horizon) for t in open_at.values()]
    return sorted(intervals)


def overlaps(intervals):
    return [(a, b) for a, b in zip(intervals, intervals[1:]) if b[0] < a[1] - 1e-9]


@pytest.fixture(scope="module")
def feasibility_runs():
    return pmap(_feasibility_run, range(200))


@pytest.mark.criterion("C5", "200 random feasible runs: q >= -1e-6, q < 1e-6 only at station")
def test_criterion_5_feasibility_invariant(feasibility_runs, detail):
    errors = [(r["seed"], r["error"]) for r in feasibility_runs if r["error"]]
    ok = [r for r in feasibility_runs if not r["error"]]
    q_min = min(r["q_min"] for r in ok)
    far = max(ok, key=lambda r: r["far"])
    n_far = sum(r["far"] >= 1e-3 for r in ok)
    detail.append(f"{len(ok)} runs, min q {q_min:.3e}, max distance at q<1e-6 {far['far']:.2e} "
                  f"(seed {far['seed']}), {n_far} runs beyond 1e-3, {len(errors)} errors")
    assert not errors, errors[:5]
    assert q_min >= -1e-6
    assert far["far"] < 1e-3


@pytest.mark.criterion("C5-model", "supplementary: away from the station q >= v alpha |s| always")
def test_criterion_5_supplementary_return_reserve(feasibility_runs, detail):
    ok = [r for r in feasibility_runs if not r["error"]]
    worst = min(ok, key=lambda r: r["margin"])
    detail.append(f"min of q - v alpha |s| over modes 1-2: {worst['margin']:.2e} "
                  f"(seed {worst['seed']})")
    assert worst["margin"] >= -1e-9


@pytest.mark.criterion("C6", "charging occupancy intervals pairwise disjoint in every run")
def test_criterion_6_mutual_exclusion(feasibility_runs, detail):
    ok = [r for r in feasibility_runs if not r["error"]]
    bad = [(r["seed"], overlaps(r["intervals"])) for r in ok if overlaps(r["intervals"])]
    n_iv = sum(len(r["intervals"]) for r in ok)
    layouts = [run_simulation(load_config("paper_s6").replace(horizon=1500.0, policy=p, ipa="off"))
             for p in ("frfs", "sdf")]
    for rec in layouts:
        iv = occupancy_from_events(rec)
        n_iv += len(iv)
        if overlaps(iv):
            bad.append((rec.config.policy.value, overlaps(iv)))
        direct = sorted((a, f) for _, a, f in rec.charging_intervals)
        assert not overlaps(direct)
    detail.append(f"{len(ok) + 2} runs, {n_iv} intervals, {len(bad)} overlaps")
    assert not bad, bad[:5]


def _ascent(job):
    policy, horizon = job
    cfg = load_config("paper_s6").replace(horizon=horizon, policy=policy)
    start = time.perf_counter()
    records = optimize(cfg, AscentConfig(theta0=0.5, max_iters=50))
    return policy, [r.to_dict() for r in records], time.perf_counter() - start


@pytest.mark.criterion("C7", "shared-theta ascent from 0.5 at T=1000 reaches theta >= 0.99")
def test_criterion_7_full_charge_optimality(detail):
    start = time.perf_counter()
    results = pmap(_ascent, [("frfs", 1000.0), ("sdf", 1000.0)])
    elapsed = time.perf_counter() - start
    for policy, recs, secs in results:
        final = recs[-1]
        detail.append(f"{policy}: {len(recs)} iters, final theta {final['theta'][0]:.4f}, "
                      f"J {recs[0]['J']:.2f} -> {final['J']:.2f}, "
                      f"max theta visited {max(r['theta'][0] for r in recs):.4f}, {secs:.0f} s")
    detail.append(f"total {elapsed:.0f} s")
    for policy, recs, _ in results:
        assert min(recs[-1]["theta"]) >= 0.99, f"{policy} stopped at {recs[-1]['theta']}"
    assert elapsed < 900


@pytest.mark.criterion("C7-full", "supplementary: same ascent at the full horizon T=5400")
def test_criterion_7_supplementary_full_horizon(detail):
    results = pmap(_ascent, [("frfs", 5400.0), ("sdf", 5400.0)])
    for policy, recs, secs in results:
        detail.append(f"{policy}: {len(recs)} iters, theta "
                      + " -> ".join(f"{r['theta'][0]:.3f}" for r in recs)
                      + f", J {recs[0]['J']:.2f} -> {recs[-1]['J']:.2f}, {secs:.0f} s")
    for policy, recs, _ in results:
        assert min(recs[-1]["theta"]) >= 0.99
        assert recs[-1]["J"] >= recs[0]["J"] - 1e-6


@pytest.fixture(scope="module")
def full_runs():
    def job(policy):
        return run_simulation(load_config("paper_s6").replace(policy=policy, ipa="off"))
    return {p: job(p) for p in ("frfs", "sdf")}


REFERENCE_J = {"frfs": 186407.0, "sdf": 186095.0}


@pytest.mark.criterion("C8-band", "T=5400, theta=1: J_total within 2% of the reported values")
def test_criterion_8_magnitude_band(full_runs, detail):
    for p, rec in full_runs.items():
        detail.append(f"{p}: J_total {rec.J_total:.1f} (J_mean {rec.J_mean:.2f}) vs "
                      f"{REFERENCE_J[p]:.0f}, rel dev {abs(rec.J_total - REFERENCE_J[p]) / REFERENCE_J[p]:.3g}")
    for p, rec in full_runs.items():
        assert abs(rec.J_total - REFERENCE_J[p]) / REFERENCE_J[p] <= 0.02


@pytest.mark.criterion("C8-gap", "T=5400, theta=1: FRFS vs SDF relative gap <= 1%")
def test_criterion_8_policy_gap(full_runs, detail):
    jf, js = full_runs["frfs"].J_total, full_runs["sdf"].J_total
    gap = abs(jf - js) / jf
    detail.append(f"J_frfs {jf:.2f}, J_sdf {js:.2f}, gap {gap:.2e}")
    assert gap <= 0.01


@pytest.mark.criterion("C9", "two simulate runs on paper_s6 give byte-identical output")
def test_criterion_9_determinism(tmp_path, detail):
    digests = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        subprocess.run([sys.executable, "-m", "hybridcover.cli", "simulate", "--config",
                        "paper_s6", "--out", str(out)], check=True, capture_output=True)
        digests.append({f.name: f.read_bytes() for f in sorted(out.iterdir())})
    a, b = digests
    summary = json.loads(a["summary.json"])
    detail.append(f"{len(a)} files, {len(a['trajectory.csv']) / 1e6:.1f} MB trajectory, "
                  f"{summary['event_count']} events")
    assert sorted(a) == ["events.csv", "summary.json", "trajectory.csv"]
    assert a == b
