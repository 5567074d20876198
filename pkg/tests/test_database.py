import logging

import pytest

import database


@pytest.fixture
def db(tmp_path):
    database.set_db_path(tmp_path)
    return tmp_path / "runs.db"


def _rows(query):
    conn = database.get_db()
    try:
        return conn.execute(query).fetchall()
    finally:
        conn.close()


def test_logs_newest_first(db):
    database.add_log("first")
    database.add_log("second", level="ERROR")
    rows = database.get_logs()
    assert [r["message"] for r in rows] == ["second", "first"]
    assert rows[0]["level"] == "ERROR"
    assert [r["message"] for r in database.get_logs(1)] == ["second"]
    assert db.exists()


def test_run_bookkeeping(db, tmp_path):
    run_id = database.start_run("infield", tmp_path)
    (row,) = _rows("SELECT * FROM runs")
    assert row["status"] == "running"
    assert row["finished_at"] is None
    database.finish_run(run_id, "ok")
    (row,) = _rows("SELECT * FROM runs")
    assert row["run_id"] == run_id
    assert row["status"] == "ok"
    assert row["command"] == "infield"
    assert row["finished_at"] is not None


def test_handler_mirrors_warnings(db):
    log = logging.getLogger("rotorsuite.test")
    log.setLevel(logging.DEBUG)
    handler = database.DatabaseLogHandler()
    log.addHandler(handler)
    try:
        log.info("not stored")
        log.warning("sampler bound exceeded")
    finally:
        log.removeHandler(handler)
    rows = database.get_logs()
    assert [r["message"] for r in rows] == ["sampler bound exceeded"]
    assert rows[0]["level"] == "WARNING"
