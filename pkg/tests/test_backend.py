import os
import subprocess
import sys

import numpy as np

from qbwnn import backend

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def _backend_in_subprocess(env_value):
    env = dict(os.environ)
    if env_value is None:
        env.pop("QBWNN_PURE_PYTHON", None)
    else:
        env["QBWNN_PURE_PYTHON"] = env_value
    out = subprocess.run([sys.executable, "-c", "from qbwnn import backend; print(backend.BACKEND)"],
                         capture_output=True, text=True, env=env, check=True)
    return out.stdout.strip()


def test_env_forces_fallback():
    assert _backend_in_subprocess("1") == "python"
    expected = "cython" if "cython" in backend.available() else "python"
    assert _backend_in_subprocess(None) == expected
    assert _backend_in_subprocess("0") == expected


def test_benchmark_smoke():
    sys.path.insert(0, os.path.join(ROOT, "benchmarks"))
    try:
        import bench_kernels
    finally:
        sys.path.pop(0)
    rows = bench_kernels.run([4096], repeat=1)
    assert {r["backend"] for r in rows} == set(backend.available())
    assert all(r["identical"] and r["seconds"] > 0 for r in rows)


def test_fallback_output_shape_and_values():
    theta = np.linspace(-1, 1, 1001)
    out = np.empty_like(theta)
    backend.get("python").quantize_pm1(theta, 7, 0, out)
    assert set(np.unique(out)) <= {-1.0, 1.0}
    assert out[0] == -1.0 and out[-1] == 1.0
