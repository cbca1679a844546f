"""End-to-end acceptance gate.

Each test prints one PASS/FAIL line. The pipeline runs are shared across
tests through module-scoped fixtures, so the whole file takes about seven
minutes on one core.
"""

import subprocess
import sys
import time
from pathlib import Path

import pytest

from sinorestore.cli import cmd_pipeline
from sinorestore.config import load_config

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"
SEEDS = (0, 1, 2)

pytestmark = pytest.mark.slow


def report(capsys, criterion, ok, detail):
    with capsys.disabled():
        print(f"\n[acceptance] criterion {criterion}: {'PASS' if ok else 'FAIL'} ({detail})")


def run_pipeline(noise, seed, out):
    cfg = load_config(CONFIGS / f"{noise}-noise.json", out=out, seed=seed)
    start = time.perf_counter()
    rows = {r["image_label"]: r for r in cmd_pipeline(cfg)}
    return rows, time.perf_counter() - start


@pytest.fixture(scope="module")
def high_noise(tmp_path_factory):
    root = tmp_path_factory.mktemp("high")
    return {seed: run_pipeline("high", seed, root / str(seed)) for seed in SEEDS}, root


@pytest.fixture(scope="module")
def low_noise(tmp_path_factory):
    root = tmp_path_factory.mktemp("low")
    return {seed: run_pipeline("low", seed, root / str(seed)) for seed in SEEDS}


def test_criterion_1_trend_reproduction(high_noise, capsys):
    runs, _ = high_noise
    parts, ok = [], True
    for seed, (rows, _) in runs.items():
        p, h = rows["x_proposed"], rows["x_half"]
        ratio = p["rmse"] / h["rmse"]
        ok &= ratio <= 0.9 and p["ssim"] > h["ssim"]
        parts.append(f"seed {seed}: rmse {p['rmse']:.4f}/{h['rmse']:.4f}={ratio:.3f}, ssim {p['ssim']:.3f}>{h['ssim']:.3f}")
    total = sum(t for _, t in runs.values())
    ok &= total < 300
    report(capsys, 1, ok, "; ".join(parts) + f"; 3 runs in {total:.0f} s")
    assert ok


def test_criterion_2_low_noise_parity(low_noise, capsys):
    ratios = {seed: rows["x_proposed"]["rmse"] / rows["x_full"]["rmse"] for seed, (rows, _) in low_noise.items()}
    ok = all(r <= 1.10 for r in ratios.values())
    report(capsys, 2, ok, ", ".join(f"seed {s}: proposed/full={r:.3f}" for s, r in ratios.items()) + " (limit 1.10)")
    assert ok


def test_criterion_3_high_noise_crossover(high_noise, capsys):
    runs, _ = high_noise
    ratios = {seed: rows["x_proposed"]["rmse"] / rows["x_full"]["rmse"] for seed, (rows, _) in runs.items()}
    ok = all(r <= 1.05 for r in ratios.values())
    report(capsys, 3, ok, ", ".join(f"seed {s}: proposed/full={r:.3f}" for s, r in ratios.items()) + " (limit 1.05)")
    assert ok


def run_suite(files, budget):
    start = time.perf_counter()
    proc = subprocess.run(
        [sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider", *(str(ROOT / "tests" / f) for f in files)],
        cwd=ROOT, capture_output=True, text=True,
    )
    elapsed = time.perf_counter() - start
    summary = proc.stdout.strip().splitlines()[-1] if proc.stdout.strip() else proc.stderr.strip()[-200:]
    return proc.returncode == 0 and elapsed < budget, f"{summary}; {elapsed:.1f} s of {budget} s", proc.stdout


@pytest.mark.parametrize("criterion, files, budget", [
    (4, ("test_operators.py", "test_solver.py"), 60),
    (5, ("test_blockmatch.py",), 120),
    (6, ("test_simulator.py", "test_metrics.py"), 120),
])
def test_component_suites(criterion, files, budget, capsys):
    ok, detail, output = run_suite(files, budget)
    report(capsys, criterion, ok, detail)
    assert ok, output


def test_criterion_7_determinism(high_noise, capsys):
    _, root = high_noise
    first = root / "0"
    second = root / "0-again"
    run_pipeline("high", 0, second)
    names = sorted(p.name for p in first.iterdir() if p.suffix in (".raw", ".csv"))
    differing = [n for n in names if (first / n).read_bytes() != (second / n).read_bytes()]
    missing = sorted(p.name for p in second.iterdir() if p.suffix in (".raw", ".csv")) != names
    ok = not differing and not missing and len(names) > 0
    report(capsys, 7, ok, f"{len(names)} .raw/.csv files compared, {len(differing)} differ")
    assert ok
