"""Process-level behavior of the ``refagent`` entry point."""

import json
import subprocess
import sys

from agent_testkit import message, one_loop_design

AGENT = [sys.executable, "-m", "refagent"]


def run_agent(lines, *flags):
    return subprocess.run(
        AGENT + list(flags),
        input="".join(line + "\n" for line in lines),
        capture_output=True,
        text=True,
        timeout=60,
    )


class TestProcess:
    def test_session_round_trip(self):
        lines = [json.dumps(message(one_loop_design()))] * 3
        proc = run_agent(lines, "--seed", "3", "--max-rounds", "2")
        assert proc.returncode == 0
        replies = [json.loads(line) for line in proc.stdout.splitlines()]
        assert len(replies) == 3
        assert set(replies[0]) == {"transforms"}
        assert set(replies[1]) == {"transforms"}
        assert replies[2] == {"done": True}

    def test_same_seed_same_bytes(self):
        lines = [json.dumps(message(one_loop_design()))] * 4
        first = run_agent(lines, "--seed", "9")
        second = run_agent(lines, "--seed", "9")
        assert first.returncode == second.returncode == 0
        assert first.stdout == second.stdout

    def test_malformed_input_exits_nonzero_with_error_reply(self):
        proc = run_agent(["this is not json"])
        assert proc.returncode == 2
        reply = json.loads(proc.stdout.splitlines()[0])
        assert "invalid JSON" in reply["error"]

    def test_incomplete_message_exits_nonzero(self):
        proc = run_agent([json.dumps({"design": {}, "metrics": {}})])
        assert proc.returncode == 2
        reply = json.loads(proc.stdout.splitlines()[0])
        assert "budget" in reply["error"]

    def test_eof_is_a_clean_exit(self):
        proc = run_agent([])
        assert proc.returncode == 0
        assert proc.stdout == ""

    def test_negative_max_rounds_rejected(self):
        proc = run_agent([], "--max-rounds", "-1")
        assert proc.returncode == 2
        assert "max-rounds" in proc.stderr

    def test_unknown_flag_rejected(self):
        proc = run_agent([], "--frobnicate")
        assert proc.returncode != 0
