"""Command line entry points, run as real subprocesses."""

import json
import socket
import subprocess
import sys
import time
import urllib.request

from oracles import recount_bookings, scan_log_seqs


def run_cli(*args):
    return subprocess.run(
        [sys.executable, "-m", "remotelab", *args], capture_output=True, text=True
    )


def test_seed_builds_the_demo_dataset(tmp_path):
    data_dir = tmp_path / "demo"
    result = run_cli("seed", "--data-dir", str(data_dir))
    assert result.returncode == 0, result.stderr
    assert "42 students, 20 groups, 3 setups" in result.stdout

    seqs = scan_log_seqs(str(data_dir / "events.log"))
    assert seqs == list(range(1, len(seqs) + 1))
    rec = recount_bookings(str(data_dir / "events.log"))
    assert rec["active_count"] == 0  # demo seeds slots, users book later


def test_seed_twice_refuses_overlapping_slots(tmp_path):
    data_dir = tmp_path / "demo"
    assert run_cli("seed", "--data-dir", str(data_dir)).returncode == 0
    second = run_cli("seed", "--data-dir", str(data_dir))
    assert second.returncode != 0


def test_config_file_is_honored(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"data_dir": str(tmp_path / "via-config"), "fsync": False}))
    assert run_cli("seed", "--config", str(cfg)).returncode == 0
    assert (tmp_path / "via-config" / "events.log").exists()


def test_unknown_config_key_rejected(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"no_such_knob": 1}))
    result = run_cli("seed", "--config", str(cfg), "--data-dir", str(tmp_path / "d"))
    assert result.returncode != 0


def free_port():
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def test_serve_answers_health_checks(tmp_path):
    data_dir = tmp_path / "served"
    assert run_cli("seed", "--data-dir", str(data_dir)).returncode == 0
    port = free_port()
    proc = subprocess.Popen(
        [sys.executable, "-m", "remotelab", "serve",
         "--data-dir", str(data_dir), "--port", str(port)],
        stdout=subprocess.DEVNULL, stderr=subprocess.DEVNULL,
    )
    try:
        deadline = time.monotonic() + 15.0
        body = None
        while time.monotonic() < deadline:
            try:
                with urllib.request.urlopen(
                    f"http://127.0.0.1:{port}/api/health", timeout=1.0
                ) as resp:
                    body = json.loads(resp.read())
                break
            except OSError:
                time.sleep(0.1)
        assert body is not None, "gateway never came up"
        assert body["ok"] is True
        assert body["seq"] > 100  # seeded log replayed on boot

        login = urllib.request.Request(
            f"http://127.0.0.1:{port}/api/auth/login",
            data=json.dumps({"display_name": "student01", "secret": "student01"}).encode(),
            headers={"Content-Type": "application/json"},
        )
        with urllib.request.urlopen(login, timeout=5.0) as resp:
            assert json.loads(resp.read())["role"] == "student"
    finally:
        proc.terminate()
        proc.wait(timeout=10.0)
