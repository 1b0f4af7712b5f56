import json
import threading
from pathlib import Path

import pytest

from helpers import (
    FailingModel,
    action_reply,
    changed_paths,
    final_reply,
    make_config,
    record_reply,
    task_reply,
    tree_snapshot,
    wait_until,
    write_call,
)
from openloop.config import load_config
from openloop.errors import ConfigError
from openloop.gateway import ChatGateway, ScriptedModel
from openloop.memory import MemoryStore, RunRecord, make_run_id
from openloop.orchestrator import (
    ExitSummary,
    Mailbox,
    Orchestrator,
    build_model,
    load_scripted,
    render_preview,
    workspace_listing,
)
from openloop.promptkit import CURIOSITY_CLAUSE, Message


def _run_script(task: str, outcome: str = "done", artifact: str | None = None) -> list[str]:
    """Replies for one run: task, one optional write, final, record."""
    replies = [task_reply(task)]
    if artifact is not None:
        replies.append(action_reply(write_call(artifact, outcome)))
    replies.append(final_reply(outcome))
    replies.append(record_reply(task, "write_file" if artifact else "none", outcome))
    return replies


def _transcript_messages(config, run_id: str) -> list[Message]:
    path = Path(config.runs_dir) / f"{run_id}.jsonl"
    return [
        Message.from_dict(json.loads(line))
        for line in path.read_text(encoding="utf-8").splitlines()
    ]


# ---- single and multi run ---------------------------------------------------


def test_single_run_end_to_end(tmp_path):
    config = make_config(
        tmp_path,
        replies=_run_script("write a greeting", outcome="saved", artifact="result.txt"),
        loop={"max_runs": 1},
    )
    orch = Orchestrator(config)
    summary = orch.run_loop()
    assert summary == ExitSummary(runs_attempted=1, runs_completed=1, errors=0)

    ws = Path(config.workspace_root)
    assert (ws / "result.txt").read_text() == "saved"
    store = MemoryStore(config.memory.path)
    assert len(store.records) == 1
    record = store.records[0]
    assert record.run_id == make_run_id(1)
    assert record.kind == "run"
    assert record.task == "write a greeting"
    assert record.artifacts == ("result.txt",)

    messages = _transcript_messages(config, make_run_id(1))
    assert messages[0].role == "system"
    assert CURIOSITY_CLAUSE in messages[0].content

    events = orch.bus.snapshot()
    assert [e.seq for e in events] == list(range(1, len(events) + 1))
    kinds = [e.kind for e in events]
    for needed in ("run_started", "task_generated", "observation", "run_completed", "loop_finished"):
        assert needed in kinds
    assert kinds.index("run_started") < kinds.index("task_generated")
    assert kinds.index("task_generated") < kinds.index("run_completed")
    assert kinds[-1] == "loop_finished"
    completed = next(e for e in events if e.kind == "run_completed")
    assert completed.payload["status"] == "final_answer"
    assert completed.payload["record"]["artifacts"] == ["result.txt"]


def test_second_run_sees_first_in_digest(tmp_path):
    config = make_config(
        tmp_path,
        replies=_run_script("alpha task", outcome="alpha done")
        + _run_script("beta task", outcome="beta done"),
        loop={"max_runs": 2},
    )
    orch = Orchestrator(config)
    summary = orch.run_loop()
    assert summary.runs_completed == 2
    first = _transcript_messages(config, make_run_id(1))[0]
    assert "(no prior runs)" in first.content
    second = _transcript_messages(config, make_run_id(2))[0]
    assert "- [run] task=alpha task outcome=alpha done" in second.content
    assert "(no prior runs)" not in second.content


def test_run_ids_continue_from_memory(tmp_path):
    config = make_config(
        tmp_path, replies=_run_script("later work"), loop={"max_runs": 1}
    )
    seed = MemoryStore(config.memory.path)
    seed.append_record(
        RunRecord(
            run_id=make_run_id(7), kind="run", task="early work",
            action_summary="", outcome="done", ts="2026-01-01T00:00:00Z",
        )
    )
    orch = Orchestrator(config)
    orch.run_loop()
    records = MemoryStore(config.memory.path).records
    assert records[-1].run_id == make_run_id(8)


def test_batch_mode_queries_bound_runs(tmp_path):
    config = make_config(
        tmp_path,
        replies=_run_script("polish the essay") + _run_script("file the report"),
        queries=["polish the essay", "file the report"],
    )
    orch = Orchestrator(config)
    summary = orch.run_loop()
    assert summary.runs_attempted == 2
    assert [r.origin for r in orch.reports] == ["user_given", "user_given"]
    messages = _transcript_messages(config, make_run_id(1))
    assert any(m.step_tag == "user_input" and m.content == "polish the essay" for m in messages)


def test_runs_override_beats_config(tmp_path):
    config = make_config(
        tmp_path,
        replies=_run_script("solo"),
        loop={"max_runs": 5},
    )
    orch = Orchestrator(config)
    summary = orch.run_loop(runs=1)
    assert summary.runs_attempted == 1


def test_interactive_eof_stops_loop(tmp_path):
    config = make_config(tmp_path, replies=_run_script("never used"))

    def provider(index):
        raise EOFError

    orch = Orchestrator(config, input_provider=provider)
    summary = orch.run_loop()
    assert summary == ExitSummary(0, 0, 0)
    assert orch.bus.snapshot()[-1].kind == "loop_finished"


# ---- duplicates ---------------------------------------------------------


def _seed_calculator(config):
    store = MemoryStore(config.memory.path)
    store.append_record(
        RunRecord(
            run_id=make_run_id(1), kind="run", task="build a calculator",
            action_summary="", outcome="done", ts="2026-01-01T00:00:00Z",
        )
    )


def test_duplicate_warn_marks_and_proceeds(tmp_path):
    config = make_config(
        tmp_path,
        replies=_run_script("build a calculator"),
        loop={"max_runs": 1, "duplicate_policy": "warn"},
    )
    _seed_calculator(config)
    orch = Orchestrator(config)
    summary = orch.run_loop()
    assert summary.runs_completed == 1
    report = orch.reports[0]
    assert report.duplicate_of == make_run_id(1)
    event = next(e for e in orch.bus.snapshot() if e.kind == "task_generated")
    assert event.payload["duplicate_of"] == make_run_id(1)


def test_duplicate_regenerate_once(tmp_path):
    replies = [
        task_reply("build a calculator"),
        task_reply("inspect the logs"),
        final_reply("inspected"),
        record_reply("inspect the logs", "none", "inspected"),
    ]
    config = make_config(
        tmp_path,
        replies=replies,
        loop={"max_runs": 1, "duplicate_policy": "regenerate_once"},
    )
    _seed_calculator(config)
    orch = Orchestrator(config)
    orch.run_loop()
    report = orch.reports[0]
    assert report.task_text == "inspect the logs"
    assert report.duplicate_of is None
    messages = _transcript_messages(config, make_run_id(2))
    notice = 'You already did: "build a calculator". Generate a different task.'
    assert any(m.content == notice for m in messages)


def test_duplicate_regenerate_still_duplicate(tmp_path):
    replies = [
        task_reply("build a calculator"),
        task_reply("build a calculator again"),
        final_reply("done"),
        record_reply("build a calculator again", "none", "done"),
    ]
    config = make_config(
        tmp_path,
        replies=replies,
        loop={"max_runs": 1, "duplicate_policy": "regenerate_once", "dedup_threshold": 0.5},
    )
    _seed_calculator(config)
    orch = Orchestrator(config)
    orch.run_loop()
    report = orch.reports[0]
    assert report.task_text == "build a calculator again"
    assert report.duplicate_of == make_run_id(1)


def test_duplicate_allow_skips_check(tmp_path):
    config = make_config(
        tmp_path,
        replies=_run_script("build a calculator"),
        loop={"max_runs": 1, "duplicate_policy": "allow"},
    )
    _seed_calculator(config)
    orch = Orchestrator(config)
    orch.run_loop()
    assert orch.reports[0].duplicate_of is None


# ---- feedback --------------------------------------------------------------


def test_feedback_delivered_once(tmp_path):
    config = make_config(
        tmp_path,
        replies=_run_script("first") + _run_script("second"),
        loop={"max_runs": 2},
    )
    orch = Orchestrator(config)
    orch.submit_feedback("prefer shorter tasks")
    summary = orch.run_loop()
    assert summary.runs_completed == 2

    first = _transcript_messages(config, make_run_id(1))
    feedback_first = [m for m in first if m.step_tag == "feedback"]
    assert [m.content for m in feedback_first] == ["prefer shorter tasks"]
    second = _transcript_messages(config, make_run_id(2))
    assert all(m.step_tag != "feedback" for m in second)

    records = MemoryStore(config.memory.path).records
    feedback_records = [r for r in records if r.kind == "feedback"]
    assert len(feedback_records) == 1
    assert feedback_records[0].run_id == make_run_id(1)
    assert feedback_records[0].outcome == "prefer shorter tasks"
    assert orch.mailbox.pending_count() == 0


def test_feedback_survives_restart(tmp_path):
    config = make_config(tmp_path, replies=_run_script("after restart"), loop={"max_runs": 1})
    first_process = Orchestrator(config)
    first_process.submit_feedback("focus on tests")
    # Process one dies without running; process two picks the item up.
    second_process = Orchestrator(config)
    assert second_process.mailbox.pending_count() == 1
    second_process.run_loop()
    messages = _transcript_messages(config, make_run_id(1))
    assert any(m.step_tag == "feedback" and m.content == "focus on tests" for m in messages)
    # The digest any later process renders contains the feedback record.
    digest_text = MemoryStore(config.memory.path).digest()
    assert "- [feedback] task= outcome=focus on tests" in digest_text
    # And the journaled take marker stops redelivery in process three.
    third_process = Orchestrator(config)
    assert third_process.mailbox.pending_count() == 0


def test_feedback_store_disabled(tmp_path):
    config = make_config(
        tmp_path,
        replies=_run_script("quiet run"),
        loop={"max_runs": 1},
        memory={"store_feedback": False},
    )
    orch = Orchestrator(config)
    orch.submit_feedback("transient note")
    orch.run_loop()
    messages = _transcript_messages(config, make_run_id(1))
    assert any(m.step_tag == "feedback" for m in messages)
    assert all(r.kind != "feedback" for r in MemoryStore(config.memory.path).records)


def test_feedback_validation_and_event(tmp_path):
    config = make_config(tmp_path, replies=_run_script("x"))
    orch = Orchestrator(config)
    with pytest.raises(ValueError):
        orch.submit_feedback("   ")
    orch.submit_feedback("  trimmed  ")
    event = orch.bus.snapshot()[-1]
    assert event.kind == "feedback_received"
    assert event.payload == {"text": "trimmed"}


def test_mailbox_replay(tmp_path):
    path = tmp_path / "mailbox.jsonl"
    box = Mailbox(path)
    box.put("one")
    box.put("two")
    assert box.pending_count() == 2
    # A fresh instance sees both; taking journals the delivery.
    replayed = Mailbox(path)
    assert replayed.pending_count() == 2
    items = replayed.take_all("r0001-5480")
    assert [i.text for i in items] == ["one", "two"]
    assert [i.consumed_in_run for i in items] == ["r0001-5480", "r0001-5480"]
    assert Mailbox(path).pending_count() == 0
    assert replayed.take_all("r0002-67b1") == []


def test_mailbox_ignores_garbage_lines(tmp_path):
    path = tmp_path / "mailbox.jsonl"
    box = Mailbox(path)
    box.put("keep me")
    with open(path, "a", encoding="utf-8") as fh:
        fh.write("not json\n")
        fh.write('{"op": "unknown"}\n')
    assert Mailbox(path).pending_count() == 1


# ---- control ------------------------------------------------------------


def test_control_step_resume_stop(tmp_path):
    config = make_config(
        tmp_path,
        replies=_run_script("one") + _run_script("two") + _run_script("three"),
        loop={"max_runs": 3, "start_paused": True},
    )
    orch = Orchestrator(config)
    assert orch.state == "paused"
    thread = threading.Thread(target=orch.run_loop)
    thread.start()
    try:
        assert wait_until(
            lambda: any(e.kind == "awaiting_input" for e in orch.bus.snapshot())
        )
        assert len(orch.reports) == 0

        orch.control("step")
        assert wait_until(lambda: len(orch.reports) == 1)
        assert orch.state == "paused"
        assert wait_until(
            lambda: sum(e.kind == "awaiting_input" for e in orch.bus.snapshot()) == 2
        )

        orch.control("resume")
        assert wait_until(lambda: len(orch.reports) == 3)
    finally:
        orch.control("stop")
        thread.join(timeout=5)
    assert not thread.is_alive()
    assert [r.status for r in orch.reports] == ["final_answer"] * 3


def test_control_stop_before_any_run(tmp_path):
    config = make_config(
        tmp_path, replies=_run_script("never"), loop={"start_paused": True}
    )
    orch = Orchestrator(config)
    thread = threading.Thread(target=orch.run_loop)
    thread.start()
    assert wait_until(lambda: any(e.kind == "awaiting_input" for e in orch.bus.snapshot()))
    orch.control("stop")
    thread.join(timeout=5)
    assert not thread.is_alive()
    assert len(orch.reports) == 0
    assert orch.bus.snapshot()[-1].kind == "loop_finished"


def test_control_validation(tmp_path):
    config = make_config(tmp_path, replies=_run_script("x"))
    orch = Orchestrator(config)
    with pytest.raises(ValueError):
        orch.control("dance")
    assert orch.control("pause") == "paused"
    assert orch.control("resume") == "running"
    assert orch.control("stop") == "stopped"
    with pytest.raises(ValueError):
        orch.control("resume")
    assert orch.control("stop") == "stopped"
    changes = [e.payload for e in orch.bus.snapshot() if e.kind == "state_changed"]
    assert changes[0] == {"state": "paused", "command": "pause"}


def test_status_shape(tmp_path):
    config = make_config(tmp_path, replies=_run_script("task here"), loop={"max_runs": 1})
    orch = Orchestrator(config)
    before = orch.status()
    assert before == {
        "state": "running",
        "current_run_id": None,
        "runs_attempted": 0,
        "pending_feedback": 0,
        "memory_records": 0,
    }
    orch.run_loop()
    after = orch.status()
    assert after["runs_attempted"] == 1
    assert after["memory_records"] == 1
    assert after["current_run_id"] is None


# ---- fault handling ---------------------------------------------------------


def test_transport_fault_mid_batch_keeps_loop_alive(tmp_path):
    replies = _run_script("first task", outcome="one") + _run_script(
        "third task", outcome="three"
    )
    config = make_config(tmp_path, replies=replies, loop={"max_runs": 3})
    model = FailingModel(build_model(config), fail_on_call=4)
    orch = Orchestrator(config, model=model)
    summary = orch.run_loop()
    assert summary == ExitSummary(runs_attempted=3, runs_completed=2, errors=1)

    records = MemoryStore(config.memory.path).records
    assert [r.run_id for r in records] == [make_run_id(1), make_run_id(3)]
    failed = orch.reports[1]
    assert failed.run_id == make_run_id(2)
    assert failed.error is not None
    assert "TransportError" in failed.error
    errors = [e for e in orch.bus.snapshot() if e.kind == "error"]
    assert len(errors) == 1
    assert errors[0].run_id == make_run_id(2)
    assert "TransportError" in errors[0].payload["error"]


def test_abort_mid_episode_still_records(tmp_path):
    replies = [task_reply("doomed"), final_reply("never reached")]
    config = make_config(tmp_path, replies=replies, loop={"max_runs": 1})
    model = FailingModel(build_model(config), fail_on_call=2)
    orch = Orchestrator(config, model=model)
    summary = orch.run_loop()
    assert summary == ExitSummary(runs_attempted=1, runs_completed=0, errors=1)
    report = orch.reports[0]
    assert report.status == "aborted"
    assert report.steps_used == 0
    records = MemoryStore(config.memory.path).records
    assert len(records) == 1
    assert records[0].outcome == "aborted"
    assert records[0].artifacts == ()


def test_task_generation_failure_is_error_event(tmp_path):
    config = make_config(
        tmp_path, replies=["prose only", "still prose"], loop={"max_runs": 1}
    )
    orch = Orchestrator(config)
    summary = orch.run_loop()
    assert summary.errors == 1
    event = next(e for e in orch.bus.snapshot() if e.kind == "error")
    assert event.payload["error"].startswith("TaskGenerationFailed")
    # The partial transcript still lands in runs/ for inspection.
    messages = _transcript_messages(config, make_run_id(1))
    assert messages[0].role == "system"


# ---- confinement and preview -------------------------------------------------


def test_session_confined_to_workspace(tmp_path):
    config = make_config(
        tmp_path,
        replies=_run_script("careful", artifact="notes/result.txt")
        + _run_script("tidy", artifact="more.txt"),
        loop={"max_runs": 2},
    )
    before = tree_snapshot(tmp_path)
    Orchestrator(config).run_loop()
    after = tree_snapshot(tmp_path)
    changed = changed_paths(before, after)
    assert changed, "expected the session to write inside the workspace"
    assert all(p == "ws" or p.startswith("ws/") for p in changed), changed


def test_render_preview_reads_nothing_writes_nothing(tmp_path):
    config = make_config(tmp_path, replies=_run_script("x"))
    before = tree_snapshot(tmp_path)
    text = render_preview(config)
    assert CURIOSITY_CLAUSE in text
    assert "(no prior runs)" in text
    assert "(empty)" in text
    assert "{{" not in text
    assert tree_snapshot(tmp_path) == before


def test_render_preview_reflects_memory(tmp_path):
    config = make_config(tmp_path, replies=_run_script("remembered"), loop={"max_runs": 1})
    Orchestrator(config).run_loop()
    text = render_preview(config)
    assert "task=remembered" in text


def test_workspace_listing_variants(tmp_path):
    assert workspace_listing(tmp_path / "ghost") == "(empty)"
    empty = tmp_path / "empty"
    empty.mkdir()
    assert workspace_listing(empty) == "(empty)"
    (empty / "a.txt").write_text("xyz")
    assert workspace_listing(empty) == "a.txt file 3"
    big = tmp_path / "big"
    big.mkdir()
    for i in range(100):
        (big / f"file-{i:03d}.txt").write_text("x")
    text = workspace_listing(big, cap=100)
    assert text.endswith("\n...")
    assert len(text) <= 104


# ---- model loading ------------------------------------------------------


def test_load_scripted_forms(tmp_path):
    path = tmp_path / "script.json"
    path.write_text(
        json.dumps(["plain", {"reply": "picky", "contains": "needle"}]), encoding="utf-8"
    )
    model = load_scripted(path)
    assert len(model.entries) == 2
    assert model.entries[0].contains is None
    assert model.entries[1].contains == "needle"


@pytest.mark.parametrize(
    "payload",
    ["[]", "{}", "[42]", '[{"contains": "x"}]', "not json"],
)
def test_load_scripted_rejects(tmp_path, payload):
    path = tmp_path / "script.json"
    path.write_text(payload, encoding="utf-8")
    with pytest.raises(ConfigError):
        load_scripted(path)


def test_load_scripted_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_scripted(tmp_path / "ghost.json")


def test_build_model_scripted_and_http(tmp_path, monkeypatch):
    config = make_config(tmp_path, replies=["hello"])
    assert isinstance(build_model(config), ScriptedModel)
    monkeypatch.setenv("OPENLOOP_API_KEY", "sk-123")
    http_config = make_config(
        tmp_path, model={"endpoint": "http://127.0.0.1:9", "name": "m2"}
    )
    gateway = build_model(http_config)
    assert isinstance(gateway, ChatGateway)
    assert gateway.endpoint == "http://127.0.0.1:9"
    assert gateway.params.model_name == "m2"
    assert gateway.api_key == "sk-123"


def test_exit_summary_as_dict():
    assert ExitSummary(3, 2, 1).as_dict() == {
        "runs_attempted": 3,
        "runs_completed": 2,
        "errors": 1,
    }


def test_orchestrator_with_loaded_config_file(tmp_path):
    script = tmp_path / "replies.json"
    script.write_text(json.dumps(_run_script("from file")), encoding="utf-8")
    cfg_path = tmp_path / "run.json"
    cfg_path.write_text(
        json.dumps(
            {
                "model": {"endpoint": "scripted:replies.json"},
                "workspace_root": "ws",
                "loop": {"max_runs": 1},
            }
        ),
        encoding="utf-8",
    )
    config = load_config(cfg_path)
    summary = Orchestrator(config).run_loop()
    assert summary.runs_completed == 1
