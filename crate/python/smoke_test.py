"""Smoke test for the tracegeo Python bindings.

Builds the extension module with cargo, imports it from a temporary
directory and checks a few values against scipy plus one tiny pipeline run.

    python3 python/smoke_test.py
"""

import importlib
import json
import math
import os
import shutil
import subprocess
import sys
import tempfile

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def build(tmp):
    subprocess.run(
        ["cargo", "build", "--release", "-p", "tracegeo-py", "--features", "extension-module"],
        cwd=ROOT,
        check=True,
    )
    target = os.environ.get("CARGO_TARGET_DIR", os.path.join(ROOT, "target"))
    lib = os.path.join(target, "release", "libtracegeo_py.so")
    if not os.path.exists(lib):
        lib = os.path.join(target, "release", "libtracegeo_py.dylib")
    shutil.copy(lib, os.path.join(tmp, "tracegeo_py.so"))
    sys.path.insert(0, tmp)
    return importlib.import_module("tracegeo_py")


def check_stats(tg):
    from scipy import stats

    x, y = [1.2, 3.4, 0.5, 2.2, 5.1], [0.1, 0.7, 1.9, 0.3]
    u, p = tg.mann_whitney(x, y)
    ref = stats.mannwhitneyu(x, y, alternative="two-sided", method="exact")
    assert u == ref.statistic, (u, ref.statistic)
    assert abs(p - ref.pvalue) < 1e-12, (p, ref.pvalue)
    assert abs(tg.rank_biserial(x, y) - (2 * u / 20 - 1)) < 1e-15

    groups = [[1.0, 2.5, 3.1, 7.0], [0.2, 0.4, 5.5], [9.0, 8.1, 6.6, 7.7]]
    h, _ = tg.kruskal_wallis(groups)
    assert abs(h - stats.kruskal(*groups).statistic) < 1e-12

    holm = tg.holm_correct([0.01, 0.04, 0.03], 0.05)
    assert [round(a, 12) for a, _ in holm] == [0.03, 0.06, 0.06]
    assert [s for _, s in holm] == [True, False, False]


def check_metrics(tg):
    assert abs(tg.entropy([0.3] * 10) - 1.0) < 1e-15
    s = [0.9, 0.1, -0.2, 0.0]
    w = [math.exp(v) for v in s]
    z = sum(w)
    h = -sum(v / z * math.log(v / z) for v in w) / math.log(4)
    assert abs(tg.entropy(s) - h) < 1e-14
    assert tg.max_sim(s) == 0.9
    assert [tg.adapted_k(d) for d in (16, 32, 128)] == [10, 16, 40]
    assert [(b[1], b[2]) for b in tg.default_bands()][0] == (1, 16)


def check_pipeline(tg, tmp):
    spec = {"hidden_dim": 32, "n_calibration_prompts": 12, "tokens_per_prompt": 8,
            "n_prompts_per_condition": 6, "n_seeds": 2}
    prefix = os.path.join(tmp, "tiny")
    rows = tg.synth(prefix, 5, json.dumps(spec))
    assert rows == (12 + 2 * 3 * 6) * 8, rows
    cfg = {"whitening": {"n_components": 16}, "clustering": {"k": 6}, "seeds": [1, 2],
           "stats": {"n_perm": 100, "n_boot": 100},
           "spectral": {"bands": [{"name": "low", "pc_lo": 1, "pc_hi": 8}, {"name": "high", "pc_lo": 9, "pc_hi": 32}]}}
    out = os.path.join(tmp, "res")
    text = tg.pipeline(prefix, out, json.dumps(cfg))
    assert "== full ==" in text and "low (1-8)" in text, text
    assert os.path.exists(os.path.join(out, "report_table.csv"))


def main():
    tmp = tempfile.mkdtemp(prefix="tracegeo-smoke-")
    try:
        tg = build(tmp)
        check_stats(tg)
        check_metrics(tg)
        check_pipeline(tg, tmp)
    finally:
        shutil.rmtree(tmp, ignore_errors=True)
    print("python smoke test passed")


if __name__ == "__main__":
    main()
