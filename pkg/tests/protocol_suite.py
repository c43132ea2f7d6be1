"""Reusable conformance checks for line-JSON oracle children.

Any child implementation (the bundled python stub, the node bridge) must pass
``run_protocol_conformance`` against its launch command.
"""
from __future__ import annotations

import json
import subprocess

import numpy as np

from noiserank.metrics import validate_probability_vector
from noiserank.oracle import ExternalOracle


def check_id_echo_and_simplex(command, shape=(4, 4, 1), queries=5, timeout=20.0):
    """Queries through the client enforce id echo, ordering and validity."""
    rng = np.random.Generator(np.random.PCG64(5))
    with ExternalOracle(command, timeout=timeout) as oracle:
        for _ in range(queries):
            pixels = rng.uniform(0, 1, size=shape)
            probs = oracle.predict(pixels)
            assert abs(float(probs.values.sum()) - 1.0) <= 1e-6
            assert probs.values.min() >= 0.0


def check_error_line_recovery(command, shape=(2, 2, 1), timeout=20.0):
    """Raw protocol: malformed and undersized requests get error responses,
    the process keeps serving, and end of input exits cleanly."""
    proc = subprocess.Popen(
        list(command), stdin=subprocess.PIPE, stdout=subprocess.PIPE, text=True, bufsize=1
    )
    try:
        def ask(line: str) -> dict:
            proc.stdin.write(line + "\n")
            proc.stdin.flush()
            answer = proc.stdout.readline()
            assert answer, "child closed stdout prematurely"
            return json.loads(answer)

        bad = ask("this is not json")
        assert "error" in bad
        assert bad.get("id", -1) == -1

        h, w, c = shape
        wrong = ask(json.dumps({"id": 7, "shape": [h, w, c], "pixels": [0.0] * (h * w * c - 1)}))
        assert wrong.get("id") == 7
        assert "error" in wrong

        good = ask(json.dumps({"id": 8, "shape": [h, w, c], "pixels": [0.5] * (h * w * c)}))
        assert good.get("id") == 8
        validate_probability_vector(good["probs"])

        proc.stdin.close()
        assert proc.wait(timeout=timeout) == 0
    finally:
        if proc.poll() is None:
            proc.kill()
            proc.wait()


def run_protocol_conformance(command, shape=(4, 4, 1), timeout=20.0):
    check_id_echo_and_simplex(command, shape=shape, timeout=timeout)
    check_error_line_recovery(command, shape=shape, timeout=timeout)
