"""Fixture-recording runner: pytest under branch coverage, one JSON object on stdout.

Usage: record_runner.py TEST_FILE PROJECT_ROOT TIMEOUT_S
"""
import hashlib
import json
import os
import subprocess
import sys
import tempfile
import time


def main():
    test_file, root, timeout_s = os.path.abspath(sys.argv[1]), os.path.abspath(sys.argv[2]), float(sys.argv[3])
    started = time.monotonic()
    with tempfile.TemporaryDirectory() as tmp:
        data = os.path.join(tmp, ".coverage")
        report = os.path.join(tmp, "coverage.json")
        test_dir = os.path.dirname(os.path.abspath(test_file))
        env = dict(os.environ, COVERAGE_FILE=data, PYTHONDONTWRITEBYTECODE="1")
        cmd = [
            sys.executable, "-m", "coverage", "run", "--branch", "--source", root,
            "--omit", os.path.join(test_dir, "*"),
            "-m", "pytest", "-q", "--tb=short", "-p", "no:cacheprovider", "--rootdir", root, test_file,
        ]
        try:
            proc = subprocess.run(cmd, cwd=root, env=env, capture_output=True, text=True, timeout=timeout_s)
        except subprocess.TimeoutExpired:
            print(json.dumps({"status": "timeout", "error_report": "timed out", "coverage": None, "duration_s": timeout_s}))
            return
        status = {0: "pass", 1: "fail"}.get(proc.returncode, "error")
        coverage = None
        if os.path.exists(data):
            subprocess.run([sys.executable, "-m", "coverage", "json", "-q", "-o", report], cwd=root, env=env, check=True)
            with open(report) as fh:
                files = json.load(fh)["files"]
            coverage = {"files": {}}
            for path, entry in sorted(files.items()):
                rel = os.path.relpath(os.path.join(root, path), root)
                with open(os.path.join(root, rel), "rb") as src:
                    digest = hashlib.sha256(src.read()).hexdigest()
                coverage["files"][rel] = {
                    "executed_lines": entry["executed_lines"],
                    "missing_lines": entry["missing_lines"],
                    "executed_branches": entry.get("executed_branches", []),
                    "missing_branches": entry.get("missing_branches", []),
                    "content_hash": digest,
                }
        report_text = "" if status == "pass" else (proc.stdout + proc.stderr).replace(root + os.sep, "")
        print(json.dumps({
            "status": status,
            "error_report": report_text,
            "coverage": coverage,
            "duration_s": round(time.monotonic() - started, 3),
        }))


if __name__ == "__main__":
    main()
