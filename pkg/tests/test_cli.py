import io
import json
import subprocess
import sys
from contextlib import redirect_stderr, redirect_stdout

import pytest

from lambdalab.cli import main


def run(argv):
    out, err = io.StringIO(), io.StringIO()
    with redirect_stdout(out), redirect_stderr(err):
        try:
            status = main(argv)
        except SystemExit as exc:  # argparse usage errors
            status = exc.code
    return status, out.getvalue(), err.getvalue()


def lines(text):
    return [json.loads(line) for line in text.splitlines() if line.strip()]


def test_simulate_echo_answers_the_request():
    status, out, _ = run(["simulate", "--model", "echo", "--seed", "3"])
    assert status == 0
    steps = lines(out)
    assert steps[0]["label"] == "start(echo,1,1)"
    assert steps[-1]["label"] == "stop(1,1)"


def test_seed_environment_variable_overrides_flag(monkeypatch):
    argv = ["simulate", "--model", "bank-tx", "--die-budget", "2"]
    monkeypatch.setenv("LLAB_SEED", "5")
    from_env = run(argv + ["--seed", "99"])[1]
    monkeypatch.delenv("LLAB_SEED")
    assert from_env == run(argv + ["--seed", "5"])[1]


def test_bad_seed_environment_variable_is_a_usage_error(monkeypatch):
    monkeypatch.setenv("LLAB_SEED", "many")
    status, _, err = run(["simulate", "--model", "echo"])
    assert status == 1
    assert "LLAB_SEED" in err


def test_script_file_reproduces_double_cold_start(tmp_path):
    script = tmp_path / "script.json"
    script.write_text(json.dumps(["Req", "Cold", "Cold"]))
    status, out, _ = run(["simulate", "--model", "echo", "--scheduler", "script", "--script", str(script)])
    # the script ends with an open request, so the run is reported as stuck
    assert status == 2
    assert [s["rule"] for s in lines(out)] == ["Req", "Cold", "Cold"]


def test_script_that_names_a_disabled_rule_is_rejected(tmp_path):
    script = tmp_path / "script.json"
    script.write_text(json.dumps(["Resp"]))
    status, _, err = run(["simulate", "--model", "echo", "--scheduler", "script", "--script", str(script)])
    assert status == 1
    assert "step 1" in err


def test_workload_file_drives_the_run(tmp_path):
    workload = tmp_path / "work.json"
    workload.write_text(json.dumps([
        {"function": "counter", "payload": 0},
        {"function": "counter", "payload": 0, "earliest_step": 3},
    ]))
    status, out, _ = run(["simulate", "--model", "counter", "--workload", str(workload), "--seed", "1"])
    assert status == 0
    labels = [s["label"] for s in lines(out)]
    assert sum(label.startswith("start(") for label in labels) == 2
    assert sum(label.startswith("stop(") for label in labels) == 2


def test_naive_semantics_simulation():
    status, out, _ = run(["simulate", "--model", "echo", "--semantics", "naive"])
    assert status == 0
    assert {s["semantics"] for s in lines(out)} == {"naive"}


def test_exhaustive_traces_are_numbered():
    status, out, _ = run(["simulate", "--model", "echo", "--scheduler", "exhaustive", "--depth", "6"])
    assert status == 0
    assert {s["trace"] for s in lines(out)} >= {0, 1}


def test_running_out_of_steps_is_reported_as_stuck_in_text():
    status, out, _ = run(["simulate", "--model", "echo", "--max-steps", "1", "--format", "text"])
    assert status == 2
    assert "stuck" in out


@pytest.mark.parametrize("argv", [
    ["simulate", "--model", "nope"],
    ["simulate", "--model", "echo", "--scheduler", "script", "--script", "/nonexistent/script.json"],
    ["check-safety", "--model", "counter", "--relation", "nope"],
    ["compile", "--input", "/nonexistent/program.spl"],
    ["run-spl", "--program", "split-deposit", "--payload", "{not json"],
    ["frobnicate"],
    [],
], ids=["model", "script", "relation", "input", "payload", "command", "empty"])
def test_malformed_invocations_exit_with_usage_status(argv):
    assert run(argv)[0] == 1


def test_malformed_workload_is_a_usage_error(tmp_path):
    workload = tmp_path / "work.json"
    workload.write_text(json.dumps([{"payload": 1}]))
    assert run(["simulate", "--model", "echo", "--workload", str(workload)])[0] == 1


def test_safety_report_for_equality_on_counter():
    status, out, _ = run(["check-safety", "--model", "counter", "--relation", "equality"])
    assert status == 3
    report = json.loads(out)
    assert not report["passed"]
    assert [c["passed"] for c in report["clauses"]] == [True, True, True, False]


def test_safety_relation_that_holds():
    status, out, _ = run(["check-safety", "--model", "echo", "--relation", "equality"])
    assert status == 0
    assert json.loads(out)["passed"]


def test_bisim_counterexample_for_counter():
    status, out, _ = run(["check-bisim", "--model", "counter", "--depth", "8"])
    assert status == 3
    verdict = json.loads(out)
    assert verdict["counterexample"]["naive_script"]


def test_bisim_holds_for_echo():
    status, out, _ = run(["check-bisim", "--model", "echo"])
    assert status == 0
    assert json.loads(out)["outcome"] == "bisimilar-up-to-depth"


def test_extended_bisim_separates_bank_from_no_write_mutant():
    assert run(["check-ext-bisim", "--model", "bank-tx"])[0] == 0
    assert run(["check-ext-bisim", "--model", "bank-tx-no-write"])[0] == 3


def test_tiny_node_limit_reports_incomplete_search():
    status, out, _ = run(["check-bisim", "--model", "echo", "--node-limit", "10"])
    assert status == 2
    report = json.loads(out)
    assert report["outcome"] == "budget-exceeded"
    assert report["partial"]["complete"] is False
    assert report["partial"]["outcome"] == "inconclusive"


def test_idempotence_exit_statuses():
    assert run(["check-idempotence", "--model", "bank-tx"])[0] == 0
    status, out, _ = run(["check-idempotence", "--model", "bank-tx-early-return"])
    assert status == 3
    assert not json.loads(out)["passed"]


def test_idempotence_needs_a_transactional_model():
    assert run(["check-idempotence", "--model", "echo"])[0] == 1


def test_compile_emits_both_forms():
    _, opt, _ = run(["compile", "--input", "three-calls"])
    _, core, _ = run(["compile", "--input", "three-calls", "--emit", "core"])
    assert "ad: in[0].d" in json.loads(opt)["program"]
    assert json.loads(core)["program"] != json.loads(opt)["program"]


def test_compile_reports_syntax_errors(tmp_path):
    source = tmp_path / "bad.spl"
    source.write_text("x <- invoke f(in);\nret y;")
    status, _, err = run(["compile", "--input", str(source)])
    assert status == 1
    assert "unbound variable 'y'" in err


def test_run_spl_split_deposit():
    status, out, _ = run(["run-spl", "--program", "split-deposit", "--payload",
                          '{"amount":250,"tId1":"a","tId2":"b"}', "--store", "{}", "--show-store"])
    assert status == 0
    result, store = lines(out)
    assert store["acct:checking"] == 150
    assert store["acct:savings"] == 100


def test_run_spl_error_response_exits_with_three():
    status, out, _ = run(["run-spl", "--program", "split-deposit", "--payload", '{"amount":250}'])
    assert status == 3
    assert lines(out)[0] == {"error": "transform"}


def test_run_spl_reads_payload_from_file(tmp_path):
    payload = tmp_path / "payload.json"
    payload.write_text('{"amount":50,"tId1":"a"}')
    status, out, _ = run(["run-spl", "--program", "split-deposit", "--payload", f"@{payload}",
                          "--store", "{}", "--show-store"])
    assert status == 0
    assert lines(out)[1]["acct:checking"] == 50


def test_classify_trace_on_conforming_model():
    status, out, _ = run(["classify-trace", "--model", "bank-tx", "--requests", "2", "--scheduler", "exhaustive"])
    assert status == 0
    assert lines(out)


def test_classify_trace_flags_write_before_transaction():
    status, out, _ = run(["classify-trace", "--model", "bank-tx-write-before-tx", "--scheduler", "exhaustive"])
    assert status == 3
    assert any(entry["class"] == "NonConforming" for entry in lines(out))


def test_module_entry_point_in_text_format():
    done = subprocess.run([sys.executable, "-m", "lambdalab.cli", "check-safety", "--model", "echo",
                           "--relation", "equality", "--format", "text"], capture_output=True, text=True)
    assert done.returncode == 0
    assert done.stdout
