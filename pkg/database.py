import logging
import os
import sqlite3
from datetime import datetime, timezone

# Set per run by ``set_db_path``; runs.db lives in the output directory.
DB_PATH = os.path.join(os.getcwd(), "runs.db")


def set_db_path(out_dir):
    """Point the run store at ``out_dir/runs.db`` and make sure it exists."""
    global DB_PATH
    os.makedirs(out_dir, exist_ok=True)
    DB_PATH = os.path.join(out_dir, "runs.db")
    init_db()
    return DB_PATH


def get_db(timeout=30.0):
    """Return a SQLite connection with a longer timeout.

    Worker threads may log concurrently, so WAL mode is enabled.
    """
    conn = sqlite3.connect(DB_PATH, timeout=timeout)
    conn.row_factory = sqlite3.Row
    conn.execute("PRAGMA journal_mode=WAL")
    return conn


def init_db():
    conn = get_db()
    c = conn.cursor()
    c.execute(
        "CREATE TABLE IF NOT EXISTS app_log (logged_at TEXT, level TEXT, message TEXT)"
    )
    c.execute(
        "CREATE TABLE IF NOT EXISTS runs ("
        "run_id INTEGER PRIMARY KEY AUTOINCREMENT, "
        "command TEXT, "
        "started_at TEXT, "
        "finished_at TEXT, "
        "status TEXT, "
        "out_dir TEXT"
        ")"
    )
    conn.commit()
    conn.close()


def add_log(message, level="INFO"):
    conn = get_db()
    conn.execute(
        "INSERT INTO app_log(logged_at, level, message) VALUES (?, ?, ?)",
        (datetime.now(timezone.utc).isoformat(), level, message),
    )
    conn.commit()
    conn.close()


def get_logs(limit=100):
    conn = get_db()
    rows = conn.execute(
        "SELECT logged_at, level, message FROM app_log "
        "ORDER BY logged_at DESC, rowid DESC LIMIT ?",
        (limit,),
    ).fetchall()
    conn.close()
    return rows


def start_run(command, out_dir):
    conn = get_db()
    cur = conn.execute(
        "INSERT INTO runs(command, started_at, status, out_dir) VALUES (?, ?, ?, ?)",
        (command, datetime.now(timezone.utc).isoformat(), "running", str(out_dir)),
    )
    run_id = cur.lastrowid
    conn.commit()
    conn.close()
    return run_id


def finish_run(run_id, status):
    conn = get_db()
    conn.execute(
        "UPDATE runs SET finished_at=?, status=? WHERE run_id=?",
        (datetime.now(timezone.utc).isoformat(), status, run_id),
    )
    conn.commit()
    conn.close()


class DatabaseLogHandler(logging.Handler):
    """Mirror WARNING-and-above records into ``app_log``."""

    def __init__(self, level=logging.WARNING):
        super().__init__(level)

    def emit(self, record):
        try:
            add_log(self.format(record), level=record.levelname)
        except Exception:
            self.handleError(record)
