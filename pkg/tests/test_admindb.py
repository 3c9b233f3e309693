import pytest

from casbatch.admindb import AdminDb, check_password, hash_password
from casbatch.errors import (
    AlreadyTerminal,
    DuplicateAlias,
    DuplicateContext,
    NotMember,
    NotOwner,
    UnknownContext,
    UnknownJob,
    UnknownQueue,
    UnknownUser,
    UnreachableLocator,
)
from casbatch.model import (
    JobEvent,
    JobKind,
    JobState,
    QueueMode,
    QueueSpec,
    ServerTarget,
)


@pytest.fixture
def admin(tmp_path):
    return AdminDb(str(tmp_path / "admin.db"))


def target(tmp_path, name="srv1", contexts=("dr1",), **kw):
    return ServerTarget(None, name, str(tmp_path / name), tuple(contexts), **kw)


def test_password_hash_round_trip():
    stored = hash_password("hunter2")
    assert check_password("hunter2", stored)
    assert not check_password("hunter3", stored)
    assert not check_password("hunter2", "garbage")


def test_user_round_trip(admin):
    u = admin.create_user("pw", email="a@b.c", notify=True)
    got = admin.get_user(u.ws_id)
    assert got.email == "a@b.c"
    assert got.notify is True
    assert admin.verify_password(u.ws_id, "pw")
    assert not admin.verify_password(u.ws_id, "wrong")
    assert not admin.verify_password(99999, "pw")
    with pytest.raises(UnknownUser):
        admin.get_user(99999)


def test_ws_ids_are_opaque_and_increasing(admin):
    ids = [admin.create_user("pw").ws_id for _ in range(3)]
    assert ids == sorted(ids)
    assert len(set(ids)) == 3


def test_target_round_trip(admin, tmp_path):
    tid = admin.register_target(target(tmp_path, contexts=("dr1", "dr2")))
    got = admin.get_target(tid)
    assert got.context_names == ("dr1", "dr2")
    assert got.max_concurrent == 2
    assert admin.target_for_context("dr1").target_id == tid
    assert admin.known_contexts() == ["dr1", "dr2"]
    with pytest.raises(UnknownContext):
        admin.target_for_context("nope")


def test_context_names_unique_across_targets(admin, tmp_path):
    admin.register_target(target(tmp_path, "srv1", ("dr1",)))
    with pytest.raises(DuplicateContext):
        admin.register_target(target(tmp_path, "srv2", ("DR1",)))
    tid2 = admin.register_target(target(tmp_path, "srv2", ("dr2",)))
    with pytest.raises(DuplicateContext):
        admin.add_context(tid2, "dr1")
    admin.add_context(tid2, "dr3")
    admin.add_context(tid2, "dr3")  # same target: no-op
    assert "dr3" in admin.get_target(tid2).context_names


def test_unreachable_locator_rejected(admin, tmp_path):
    blocker = tmp_path / "occupied"
    blocker.write_text("not a directory")
    bad = ServerTarget(None, "srv", str(blocker), ("drx",))
    with pytest.raises(UnreachableLocator):
        admin.register_target(bad)


def test_default_queues_seeded(admin):
    quick = admin.get_queue("quick")
    long_q = admin.get_queue("long")
    assert quick.mode is QueueMode.SYNC
    assert quick.quantum_s == 60.0
    assert quick.max_rows == 100_000
    assert long_q.mode is QueueMode.ASYNC
    assert long_q.quantum_s == 500 * 60.0
    assert admin.sync_queue().queue_id == "quick"
    assert admin.default_async_queue().queue_id == "long"
    with pytest.raises(UnknownQueue):
        admin.get_queue("warp")


def test_queue_policy_enforced(admin):
    with pytest.raises(ValueError):
        admin.add_queue(QueueSpec("quick2", 10.0, QueueMode.SYNC))
    with pytest.raises(ValueError):
        admin.add_queue(QueueSpec("short", 30.0, QueueMode.ASYNC))
    admin.add_queue(QueueSpec("longer", 100_000.0, QueueMode.ASYNC))
    assert {q.queue_id for q in admin.list_queues()} == {"quick", "long", "longer"}


def test_group_membership_and_publishing(admin):
    owner = admin.create_user("pw")
    member = admin.create_user("pw")
    outsider = admin.create_user("pw")
    g = admin.create_group("lensing", owner.ws_id)
    assert owner.ws_id in g.member_ws_ids
    admin.add_member(g.group_id, member.ws_id)

    with pytest.raises(NotMember):
        admin.publish_table(g.group_id, outsider.ws_id, "cat", "mydb_000002", "t")

    pub = admin.publish_table(g.group_id, member.ws_id, "cat", "mydb_000002", "t")
    assert pub.alias == "cat"
    with pytest.raises(DuplicateAlias):
        admin.publish_table(g.group_id, owner.ws_id, "CAT", "mydb_000001", "u")

    pubs = admin.published_for_groups([g.group_id])
    assert [(p.alias, p.mydb_name, p.table_name) for p in pubs] == [("cat", "mydb_000002", "t")]
    assert admin.publications_for_table("MYDB_000002", "T") == [g.group_id]
    assert admin.unpublish_table("mydb_000002", "t") == 1
    assert admin.published_for_groups([g.group_id]) == []


def test_groups_for_user(admin):
    a = admin.create_user("pw")
    b = admin.create_user("pw")
    g1 = admin.create_group("g1", a.ws_id)
    admin.create_group("g2", b.ws_id)
    assert [g.name for g in admin.groups_for_user(a.ws_id)] == ["g1"]
    admin.add_member(g1.group_id, b.ws_id)
    assert {g.name for g in admin.groups_for_user(b.ws_id)} == {"g1", "g2"}


def test_default_screen_rules_present(admin):
    rules = admin.list_rules()
    assert len(rules) >= 4
    rid = admin.add_rule(r"\btruncate\b", "no truncate")
    assert any(r.rule_id == rid for r in admin.list_rules())
    with pytest.raises(Exception):
        admin.add_rule(r"(unbalanced", "bad pattern")


def test_job_round_trip_with_params(admin):
    u = admin.create_user("pw")
    job = admin.create_job(
        user_id=u.ws_id, queue_id="long", target_id=None, job_kind=JobKind.EXPORT,
        params={"table": "t", "format": "csv"}, route="direct", context="dr1",
    )
    got = admin.get_job(job.job_id)
    assert got.params == {"table": "t", "format": "csv"}
    assert got.route == "direct"
    assert got.context == "dr1"
    assert got.state is JobState.READY
    with pytest.raises(UnknownJob):
        admin.get_job(404_404)


def test_list_jobs_filters_and_order(admin):
    u = admin.create_user("pw")
    other = admin.create_user("pw")
    j1 = admin.create_job(user_id=u.ws_id, queue_id="long", target_id=None,
                          job_kind=JobKind.QUERY, now=1_000)
    j2 = admin.create_job(user_id=u.ws_id, queue_id="long", target_id=None,
                          job_kind=JobKind.EXPORT, now=2_000)
    admin.create_job(user_id=other.ws_id, queue_id="long", target_id=None,
                     job_kind=JobKind.QUERY, now=3_000)
    admin.transition_job(j1.job_id, JobEvent.START, 2_500)

    jobs = admin.list_jobs(u.ws_id)
    assert [j.job_id for j in jobs] == [j2.job_id, j1.job_id]  # newest first
    assert [j.job_id for j in admin.list_jobs(u.ws_id, kind=JobKind.EXPORT)] == [j2.job_id]
    assert [j.job_id for j in admin.list_jobs(u.ws_id, state=JobState.STARTED)] == [j1.job_id]
    assert [j.job_id for j in admin.list_jobs(u.ws_id, since=1_500)] == [j2.job_id]
    assert [j.job_id for j in admin.list_jobs(u.ws_id, until=1_500)] == [j1.job_id]
    with pytest.raises(UnknownUser):
        admin.list_jobs(31337)


def test_transition_job_persists_lifecycle(admin):
    u = admin.create_user("pw")
    job = admin.create_job(user_id=u.ws_id, queue_id="long", target_id=None,
                           job_kind=JobKind.QUERY)
    started = admin.transition_job(job.job_id, JobEvent.START)
    assert started.state is JobState.STARTED
    done = admin.transition_job(job.job_id, JobEvent.COMPLETE, rows_out=5)
    assert done.state is JobState.FINISHED
    assert done.rows_out == 5
    persisted = admin.get_job(job.job_id)
    assert persisted.state is JobState.FINISHED
    assert persisted.t_submitted <= persisted.t_started <= persisted.t_finished


def test_rows_out_updates_are_monotonic(admin):
    u = admin.create_user("pw")
    job = admin.create_job(user_id=u.ws_id, queue_id="long", target_id=None,
                           job_kind=JobKind.QUERY)
    admin.set_rows_out(job.job_id, 10)
    admin.set_rows_out(job.job_id, 5)
    assert admin.get_job(job.job_id).rows_out == 10
    admin.set_rows_out(job.job_id, 20)
    assert admin.get_job(job.job_id).rows_out == 20


def test_request_cancel_semantics(admin):
    u = admin.create_user("pw")
    stranger = admin.create_user("pw")

    ready = admin.create_job(user_id=u.ws_id, queue_id="long", target_id=None,
                             job_kind=JobKind.QUERY)
    with pytest.raises(NotOwner):
        admin.request_cancel(ready.job_id, stranger.ws_id)
    assert admin.request_cancel(ready.job_id, u.ws_id).state is JobState.CANCELED
    # canceling a canceled job acknowledges without error
    assert admin.request_cancel(ready.job_id, u.ws_id).state is JobState.CANCELED

    running = admin.create_job(user_id=u.ws_id, queue_id="long", target_id=None,
                               job_kind=JobKind.QUERY)
    admin.transition_job(running.job_id, JobEvent.START)
    flagged = admin.request_cancel(running.job_id, u.ws_id)
    assert flagged.state is JobState.STARTED
    assert flagged.cancel_requested is True
    assert [j.job_id for j in admin.cancel_requested_jobs()] == [running.job_id]

    admin.transition_job(running.job_id, JobEvent.COMPLETE)
    with pytest.raises(AlreadyTerminal):
        admin.request_cancel(running.job_id, u.ws_id)


def test_dispatch_queries_and_counts(admin, tmp_path):
    tid = admin.register_target(target(tmp_path))
    u = admin.create_user("pw")
    jobs = [
        admin.create_job(user_id=u.ws_id, queue_id="long", target_id=tid,
                         job_kind=JobKind.QUERY, now=1_000 + i)
        for i in range(3)
    ]
    ready = admin.ready_jobs(target_id=tid, kind=JobKind.QUERY)
    assert [j.job_id for j in ready] == [j.job_id for j in jobs]  # oldest first
    admin.transition_job(jobs[0].job_id, JobEvent.START)
    assert admin.running_count(tid) == 1
    assert len(admin.started_jobs()) == 1
    assert len(admin.ready_jobs(target_id=tid, kind=JobKind.QUERY, limit=1)) == 1


def test_stats_window(admin):
    admin.record_stat(1, 1.5, 100, 0.9, t_finished=1_000)
    admin.record_stat(2, 2.5, 200, 1.9, t_finished=2_000)
    assert len(admin.list_stats()) == 2
    assert [s[0] for s in admin.list_stats(since=1_500)] == [2]
    assert [s[0] for s in admin.list_stats(until=1_500)] == [1]


def test_download_tokens_and_purge(admin):
    token = admin.create_download(7, "/tmp/out.csv", now=1_000)
    rec = admin.get_download(token)
    assert rec is not None and not rec.purged
    assert admin.get_download("no-such-token") is None

    assert [d.token for d in admin.expired_downloads(cutoff=2_000)] == [token]
    assert admin.expired_downloads(cutoff=500) == []
    admin.mark_purged(token, now=3_000)
    purged = admin.get_download(token)
    assert purged is not None and purged.purged  # row survives for 410 answers
    assert admin.expired_downloads(cutoff=5_000) == []


def test_state_shared_across_connections(admin, tmp_path):
    u = admin.create_user("pw")
    job = admin.create_job(user_id=u.ws_id, queue_id="long", target_id=None,
                           job_kind=JobKind.QUERY)
    second = AdminDb(str(tmp_path / "admin.db"))
    assert second.get_job(job.job_id).state is JobState.READY
    second.transition_job(job.job_id, JobEvent.START)
    assert admin.get_job(job.job_id).state is JobState.STARTED
