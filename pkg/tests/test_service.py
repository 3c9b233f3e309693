"""Submission pipeline: validation, context pick, env attach, quick lane."""

import io

import pytest

from conftest import sky_catalog

from casbatch import engine, service
from casbatch.admindb import AdminDb
from casbatch.errors import (
    EngineError,
    InvalidSubmission,
    MissingInto,
    NotOwner,
    ScreenRejected,
    TableExists,
    UnknownContext,
    UnknownQueue,
)
from casbatch.model import JobKind, JobState, ServerTarget
from casbatch.mydb import MyDbManager


@pytest.fixture
def admin(tmp_path):
    return AdminDb(str(tmp_path / "admin.db"))


@pytest.fixture
def env(tmp_path, admin):
    locator = str(tmp_path / "t1")
    admin.register_target(
        ServerTarget(None, "t1", locator, ("dr1",), max_concurrent=2)
    )
    sky_catalog(engine.context_path(locator, "dr1"), "galaxy", n=500)
    user = admin.create_user("pw")
    mgr = MyDbManager(admin)
    return admin, mgr, user.ws_id


POINTS_CSV = "id,ra,dec\n1,10.0,-5.0\n2,11.5,3.25\n3,12,0\n"


# ------------------------------------------------------------ submission

def test_submit_stamps_destination_and_context(env):
    admin, mgr, ws = env
    job = service.submit_job(
        admin, mgr, ws,
        "SELECT TOP 10 obj_id INTO MyDB.bright FROM galaxy WHERE r < 15",
        "long",
    )
    assert job.state is JobState.READY
    assert job.job_kind is JobKind.QUERY
    assert job.dest_mydb == "mydb_%06d" % ws
    assert job.dest_table == "bright"
    assert job.context == "dr1"
    assert "INTO" not in job.rewritten_text.upper()
    assert job.route is None


def test_submit_provisions_mydb_on_first_use(env):
    admin, mgr, ws = env
    assert admin.get_user(ws).mydb_name is None
    service.submit_job(
        admin, mgr, ws, "SELECT obj_id INTO MyDB.o FROM galaxy", "long"
    )
    assert admin.get_user(ws).mydb_name == "mydb_%06d" % ws


def test_submit_to_sync_queue_is_rejected(env):
    admin, mgr, ws = env
    with pytest.raises(InvalidSubmission, match="quick"):
        service.submit_job(
            admin, mgr, ws, "SELECT obj_id INTO MyDB.o FROM galaxy", "quick"
        )


def test_submit_unknown_queue(env):
    admin, mgr, ws = env
    with pytest.raises(UnknownQueue):
        service.submit_job(
            admin, mgr, ws, "SELECT obj_id INTO MyDB.o FROM galaxy", "nope"
        )


def test_submit_requires_into(env):
    admin, mgr, ws = env
    with pytest.raises(MissingInto):
        service.submit_job(admin, mgr, ws, "SELECT obj_id FROM galaxy", "long")


def test_submit_screens_before_queueing(env):
    admin, mgr, ws = env
    with pytest.raises(ScreenRejected):
        service.submit_job(admin, mgr, ws, "DROP TABLE galaxy", "long")
    assert admin.list_jobs(ws) == []


def test_submit_rejects_existing_destination(env):
    admin, mgr, ws = env
    mgr.import_table(ws, io.StringIO(POINTS_CSV), "csv", "pts")
    with pytest.raises(TableExists):
        service.submit_job(
            admin, mgr, ws, "SELECT obj_id INTO MyDB.pts FROM galaxy", "long"
        )


def test_submit_unknown_explicit_context(env):
    admin, mgr, ws = env
    with pytest.raises(UnknownContext):
        service.submit_job(
            admin, mgr, ws, "SELECT obj_id INTO MyDB.o FROM galaxy",
            "long", context="dr9",
        )


def test_submit_qualified_reference_picks_that_context(tmp_path, admin):
    # Two contexts on separate targets; the query names one explicitly.
    for name, ctx in (("t1", "aaa"), ("t2", "dr1")):
        locator = str(tmp_path / name)
        admin.register_target(ServerTarget(None, name, locator, (ctx,)))
        sky_catalog(engine.context_path(locator, ctx), "galaxy", n=10)
    ws = admin.create_user("pw").ws_id
    mgr = MyDbManager(admin)
    job = service.submit_job(
        admin, mgr, ws, "SELECT obj_id INTO MyDB.o FROM dr1.galaxy", "long"
    )
    assert job.context == "dr1"
    assert job.target_id == admin.target_for_context("dr1").target_id


def test_prepare_defaults_to_first_known_context(env):
    admin, mgr, ws = env
    prepared = service.prepare_query(
        admin, mgr, ws, "SELECT 1", require_dest=False
    )
    assert prepared.context == "dr1"
    assert prepared.dest is None


def test_prepare_mydb_only_query_targets_own_mydb(env):
    admin, mgr, ws = env
    mgr.import_table(ws, io.StringIO(POINTS_CSV), "csv", "pts")
    prepared = service.prepare_query(
        admin, mgr, ws, "SELECT * FROM mydb.pts", require_dest=False
    )
    assert prepared.context == "mydb"
    assert prepared.target_id == admin.get_user(ws).mydb_target


# ------------------------------------------------------------- resubmit

def test_resubmit_clones_query_and_queue(env):
    admin, mgr, ws = env
    job = service.submit_job(
        admin, mgr, ws, "SELECT obj_id INTO MyDB.o FROM galaxy", "long"
    )
    clone = service.resubmit_job(admin, mgr, ws, job.job_id)
    assert clone.job_id != job.job_id
    assert clone.query_text == job.query_text
    assert clone.queue_id == job.queue_id
    assert clone.state is JobState.READY


def test_resubmit_revalidates_destination(env):
    admin, mgr, ws = env
    job = service.submit_job(
        admin, mgr, ws, "SELECT obj_id INTO MyDB.o FROM galaxy", "long"
    )
    mgr.import_table(ws, io.StringIO(POINTS_CSV), "csv", "o")
    with pytest.raises(TableExists):
        service.resubmit_job(admin, mgr, ws, job.job_id)


def test_resubmit_requires_ownership(env):
    admin, mgr, ws = env
    other = admin.create_user("pw2").ws_id
    job = service.submit_job(
        admin, mgr, ws, "SELECT obj_id INTO MyDB.o FROM galaxy", "long"
    )
    with pytest.raises(NotOwner):
        service.resubmit_job(admin, mgr, other, job.job_id)


# ------------------------------------------------------------ quick lane

def test_quick_returns_rows_and_records_job(env):
    admin, mgr, ws = env
    job, rows = service.run_quick(
        admin, mgr, ws, "SELECT count(*) FROM galaxy"
    )
    assert rows.rows == [(500,)]
    assert not rows.truncated
    got = admin.get_job(job.job_id)
    assert got.state is JobState.FINISHED
    assert got.route == "quick"
    assert got.rows_out == 1
    stats = admin.list_stats()
    assert len(stats) == 1 and stats[0][0] == job.job_id


def test_quick_top_clause_limits_rows(env):
    admin, mgr, ws = env
    _, rows = service.run_quick(
        admin, mgr, ws, "SELECT TOP 7 obj_id FROM galaxy ORDER BY obj_id"
    )
    assert [r[0] for r in rows.rows] == [1, 2, 3, 4, 5, 6, 7]


def test_quick_rejects_into(env):
    admin, mgr, ws = env
    with pytest.raises(InvalidSubmission, match="asynchronous"):
        service.run_quick(
            admin, mgr, ws, "SELECT obj_id INTO MyDB.o FROM galaxy"
        )


def test_quick_failure_lands_failed_with_message(env):
    admin, mgr, ws = env
    with pytest.raises(EngineError):
        service.run_quick(admin, mgr, ws, "SELECT * FROM no_such_table")
    jobs = admin.list_jobs(ws)
    assert len(jobs) == 1
    assert jobs[0].state is JobState.FAILED
    assert "no_such_table" in jobs[0].error_msg


def test_quick_scratch_dml_persists(env):
    admin, mgr, ws = env
    mgr.import_table(ws, io.StringIO(POINTS_CSV), "csv", "pts")
    job, rows = service.run_quick(
        admin, mgr, ws,
        "INSERT INTO mydb.pts (id, ra, dec) VALUES (9, 1.0, 2.0)",
    )
    assert rows.rows == []
    assert admin.get_job(job.job_id).state is JobState.FINISHED
    assert mgr.table_info(ws, "pts").row_count == 4


def test_quick_cannot_write_catalog(env):
    admin, mgr, ws = env
    with pytest.raises(EngineError, match="readonly|attempt to write"):
        service.run_quick(
            admin, mgr, ws, "DELETE FROM galaxy WHERE obj_id = 1"
        )
    # catalog untouched
    _, rows = service.run_quick(
        admin, mgr, ws, "SELECT count(*) FROM galaxy"
    )
    assert rows.rows == [(500,)]


def test_quick_reads_published_table_through_group_alias(env):
    admin, mgr, ws = env
    owner = admin.create_user("pw2").ws_id
    mgr.import_table(owner, io.StringIO(POINTS_CSV), "csv", "pts")
    group = admin.create_group("collab", owner)
    admin.add_member(group.group_id, ws)
    mgr.publish(owner, "pts", "collab")

    _, rows = service.run_quick(
        admin, mgr, ws, "SELECT id FROM GROUP.collab.pts ORDER BY id"
    )
    assert [r[0] for r in rows.rows] == [1, 2, 3]


def test_quick_cannot_write_another_users_published_table(env):
    admin, mgr, ws = env
    owner = admin.create_user("pw2").ws_id
    mgr.import_table(owner, io.StringIO(POINTS_CSV), "csv", "pts")
    group = admin.create_group("collab", owner)
    admin.add_member(group.group_id, ws)
    mgr.publish(owner, "pts", "collab")

    with pytest.raises(EngineError, match="readonly|attempt to write"):
        service.run_quick(admin, mgr, ws, "DELETE FROM GROUP.collab.pts")
    assert mgr.table_info(owner, "pts").row_count == 3


# ------------------------------------------------------- query environment

def test_env_unqualified_names_resolve_into_primary_context(env):
    admin, mgr, ws = env
    user = admin.get_user(ws)
    conn = service.open_query_env(admin, mgr, user, "", ("dr1",), "dr1")
    try:
        n = conn.execute("SELECT count(*) FROM galaxy").fetchone()[0]
        assert n == 500
    finally:
        conn.close()


def test_env_for_job_reattaches_referenced_contexts(env):
    admin, mgr, ws = env
    job = service.submit_job(
        admin, mgr, ws,
        "SELECT g.obj_id INTO MyDB.o FROM dr1.galaxy AS g WHERE g.r < 15",
        "long",
    )
    conn = service.open_env_for_job(admin, mgr, job)
    try:
        n = conn.execute("SELECT count(*) FROM dr1.galaxy").fetchone()[0]
        assert n == 500
        with pytest.raises(Exception, match="readonly|attempt to write"):
            conn.execute("DELETE FROM dr1.galaxy")
    finally:
        conn.close()
