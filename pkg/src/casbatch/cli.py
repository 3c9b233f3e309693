"""Command-line surface: the `casbatch` client plus server, catalog, and
stats entry points.

The client is a thin HTTP wrapper: every subcommand maps onto one API
route, prints TSV (or raw JSON with --json), and exits 0 on success, 1 on
an API or network error, 2 on a usage error.  The password comes only
from CASBATCH_PASSWORD; it is never accepted on argv and never printed.
"""

import csv
import dataclasses
import json
import logging
import os
import signal
import sys
import threading
import time

import click
import httpx

from . import datagen, formats, metrics, sharedscan
from .admindb import AdminDb
from .errors import CasBatchError
from .model import ServerTarget
from .mydb import MyDbManager

DEFAULT_URL = "http://127.0.0.1:8765"
POLL_CAP_S = 3.0


@dataclasses.dataclass
class CliConfig:
    url: str
    ws_id: int
    password: str = dataclasses.field(repr=False)
    context: str | None = None
    queue: str = "long"

    def auth(self) -> httpx.BasicAuth:
        return httpx.BasicAuth(str(self.ws_id), self.password)


def _config(ctx: click.Context) -> CliConfig:
    url = ctx.obj["url"]
    ws_id = ctx.obj["wsid"]
    if ws_id is None:
        raise click.UsageError("no account id: pass --wsid or set CASBATCH_WSID")
    password = os.environ.get("CASBATCH_PASSWORD")
    if not password:
        raise click.UsageError("set CASBATCH_PASSWORD in the environment")
    return CliConfig(
        url=url.rstrip("/"),
        ws_id=ws_id,
        password=password,
        context=os.environ.get("CASBATCH_CONTEXT"),
        queue=os.environ.get("CASBATCH_QUEUE", "long"),
    )


def _call(cfg: CliConfig, method: str, path: str, **kw) -> httpx.Response:
    try:
        r = httpx.request(method, cfg.url + path, auth=cfg.auth(),
                          timeout=kw.pop("timeout", 90.0), **kw)
    except httpx.HTTPError as exc:
        raise click.ClickException(f"request failed: {exc}") from exc
    if r.status_code >= 400:
        try:
            detail = r.json().get("detail", r.text)
        except ValueError:
            detail = r.text
        raise click.ClickException(f"{r.status_code}: {detail}")
    return r


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (list, dict)):
        return json.dumps(value, separators=(",", ":"))
    return str(value)


def _emit_record(record: dict, as_json: bool) -> None:
    if as_json:
        click.echo(json.dumps(record, indent=2))
        return
    click.echo("field\tvalue")
    for key, value in record.items():
        click.echo(f"{key}\t{_cell(value)}")


def _emit_rows(rows: list, as_json: bool) -> None:
    if as_json:
        click.echo(json.dumps(rows, indent=2))
        return
    if not rows:
        return
    keys = list(rows[0].keys())
    click.echo("\t".join(keys))
    for row in rows:
        click.echo("\t".join(_cell(row.get(k)) for k in keys))


json_flag = click.option("--json", "as_json", is_flag=True,
                         help="emit raw JSON instead of TSV")


# ------------------------------------------------------------------ client

@click.group()
@click.option("--url", envvar="CASBATCH_URL", default=DEFAULT_URL,
              show_default=True, help="service base URL")
@click.option("--wsid", envvar="CASBATCH_WSID", type=int, default=None,
              help="account id")
@click.pass_context
def main(ctx, url, wsid):
    """Client for the batch query service."""
    ctx.obj = {"url": url, "wsid": wsid}


@main.command()
@click.option("-q", "--query", required=True, help="SQL text")
@click.option("--queue", default=None, help="queue id [default: long]")
@click.option("--context", default=None, help="database context")
@json_flag
@click.pass_context
def submit(ctx, query, queue, context, as_json):
    """Submit an asynchronous query; prints the new job id."""
    cfg = _config(ctx)
    body = {"query": query, "queue": queue or cfg.queue,
            "context": context or cfg.context}
    r = _call(cfg, "POST", "/v1/jobs", json=body)
    if as_json:
        click.echo(json.dumps(r.json(), indent=2))
    else:
        click.echo(r.json()["job_id"])


@main.command()
@click.argument("job_id", type=int)
@json_flag
@click.pass_context
def status(ctx, job_id, as_json):
    """Show one job's full record."""
    cfg = _config(ctx)
    _emit_record(_call(cfg, "GET", f"/v1/jobs/{job_id}").json(), as_json)


@main.command()
@click.option("--state", default=None, help="filter by job state")
@click.option("--kind", default=None, help="filter by job kind")
@json_flag
@click.pass_context
def jobs(ctx, state, kind, as_json):
    """List this account's jobs, newest first."""
    cfg = _config(ctx)
    params = {}
    if state:
        params["state"] = state
    if kind:
        params["kind"] = kind
    _emit_rows(_call(cfg, "GET", "/v1/jobs", params=params).json(), as_json)


@main.command()
@click.argument("job_id", type=int)
@json_flag
@click.pass_context
def cancel(ctx, job_id, as_json):
    """Request cancellation of a job."""
    cfg = _config(ctx)
    _emit_record(_call(cfg, "POST", f"/v1/jobs/{job_id}/cancel").json(),
                 as_json)


@main.command()
@click.argument("job_id", type=int)
@json_flag
@click.pass_context
def resubmit(ctx, job_id, as_json):
    """Clone a past job as a fresh submission; prints the new job id."""
    cfg = _config(ctx)
    r = _call(cfg, "POST", f"/v1/jobs/{job_id}/resubmit")
    if as_json:
        click.echo(json.dumps(r.json(), indent=2))
    else:
        click.echo(r.json()["job_id"])


@main.command()
@click.option("-q", "--query", required=True, help="SQL text")
@click.option("--context", default=None, help="database context")
@json_flag
@click.pass_context
def quick(ctx, query, context, as_json):
    """Run a short query synchronously and stream the rows to stdout."""
    cfg = _config(ctx)
    headers = {"Accept": "application/json"} if as_json else {}
    r = _call(cfg, "POST", "/v1/quick",
              json={"query": query, "context": context or cfg.context},
              headers=headers)
    if r.headers.get("X-Truncated") == "true":
        click.echo("warning: result truncated by the queue row cap", err=True)
    click.echo(r.text, nl=False)
    if not r.text.endswith("\n"):
        click.echo()


@main.command()
@click.argument("file", type=click.Path(exists=True, dir_okay=False))
@click.option("--table", required=True, help="destination table name")
@click.option("--format", "fmt", default="csv", show_default=True,
              type=click.Choice(sorted(formats.PARSERS)))
@json_flag
@click.pass_context
def upload(ctx, file, table, fmt, as_json):
    """Load a local file into a new scratch-database table."""
    cfg = _config(ctx)
    with open(file, "rb") as fh:
        r = _call(cfg, "POST", "/v1/mydb/import",
                  data={"table": table, "format": fmt},
                  files={"file": (os.path.basename(file), fh,
                                  "application/octet-stream")})
    _emit_record(r.json(), as_json)


@main.command()
@click.argument("table")
@click.option("--format", "fmt", default="csv", show_default=True,
              type=click.Choice(sorted(formats.WRITERS)))
@json_flag
@click.pass_context
def export(ctx, table, fmt, as_json):
    """Queue an export of a scratch table; prints the export job id."""
    cfg = _config(ctx)
    r = _call(cfg, "POST", "/v1/mydb/export",
              json={"table": table, "format": fmt})
    if as_json:
        click.echo(json.dumps(r.json(), indent=2))
    else:
        click.echo(r.json()["job_id"])


@main.command()
@click.argument("job_id", type=int)
@click.option("-o", "--output", required=True,
              type=click.Path(dir_okay=False), help="file to write")
@click.option("--timeout", default=600.0, show_default=True, type=float,
              help="seconds to wait for the export to finish")
@click.pass_context
def download(ctx, job_id, output, timeout):
    """Wait for an export job to finish, then fetch its file."""
    cfg = _config(ctx)
    deadline = time.monotonic() + timeout
    delay = 0.25
    while True:
        job = _call(cfg, "GET", f"/v1/jobs/{job_id}").json()
        state = job["state"]
        if state == "Finished":
            break
        if state in ("Failed", "Canceled"):
            raise click.ClickException(
                f"job {job_id} ended {state}: {job.get('error_msg') or ''}")
        if time.monotonic() >= deadline:
            raise click.ClickException(f"job {job_id} still {state} "
                                       f"after {timeout:.0f}s")
        time.sleep(delay)
        delay = min(delay * 2.0, POLL_CAP_S)
    token = job["output_url"]
    if not token:
        raise click.ClickException(f"job {job_id} has no output file")
    r = _call(cfg, "GET", f"/v1/download/{token}", timeout=300.0)
    with open(output, "wb") as fh:
        fh.write(r.content)
    click.echo(output)


@main.command()
@json_flag
@click.pass_context
def tables(ctx, as_json):
    """List the scratch database's tables."""
    cfg = _config(ctx)
    _emit_rows(_call(cfg, "GET", "/v1/mydb/tables").json(), as_json)


# ------------------------------------------------------------------ server

@click.group()
def server_main():
    """Operate the service: initialize the admin database, run the API."""


@server_main.command()
@click.option("--admin-db", envvar="CASBATCH_ADMIN_DB", required=True,
              type=click.Path(dir_okay=False), help="admin database file")
@click.option("--target", "target_name", default=None,
              help="register a query target with this name")
@click.option("--locator", default=None, type=click.Path(file_okay=False),
              help="directory holding the target's database files")
@click.option("--max-concurrent", default=2, show_default=True, type=int,
              help="worker slots on the new target")
@click.option("--create-user", is_flag=True,
              help="create an account (password from CASBATCH_PASSWORD "
                   "or prompted); prints its wsid")
@click.option("--email", default=None, help="notification address")
def init(admin_db, target_name, locator, max_concurrent, create_user, email):
    """Create or extend the admin database."""
    admin = AdminDb(admin_db)
    if target_name:
        if not locator:
            raise click.UsageError("--target requires --locator")
        target_id = admin.register_target(ServerTarget(
            None, target_name, locator, (), max_concurrent=max_concurrent))
        click.echo(f"target\t{target_id}\t{target_name}")
    if create_user:
        password = os.environ.get("CASBATCH_PASSWORD") or click.prompt(
            "password", hide_input=True, confirmation_prompt=True)
        user = admin.create_user(password, email=email,
                                 notify=email is not None)
        click.echo(f"user\t{user.ws_id}")
    if not target_name and not create_user:
        click.echo(f"admin database ready at {admin_db}")


@server_main.command()
@click.option("--admin-db", envvar="CASBATCH_ADMIN_DB", required=True,
              type=click.Path(dir_okay=False), help="admin database file")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8765, show_default=True, type=int)
@click.option("--poll-interval", default=5.0, show_default=True, type=float,
              help="scheduler poll cadence in seconds")
@click.option("--retention", default=604800.0, show_default=True, type=float,
              help="seconds to keep export files")
@click.option("--wheel-buckets", default=sharedscan.DEFAULT_BUCKETS,
              show_default=True, type=int)
@click.option("--no-wheel", is_flag=True, help="disable shared scans")
@click.option("--log-level", default="info", show_default=True)
def serve(admin_db, host, port, poll_interval, retention, wheel_buckets,
          no_wheel, log_level):
    """Run the HTTP API with the job scheduler in the same process."""
    import uvicorn

    from .api import create_app
    from .scheduler import JobScheduler, SchedulerConfig

    logging.basicConfig(level=log_level.upper())
    admin = AdminDb(admin_db)
    mydbm = MyDbManager(admin)
    sched = JobScheduler(admin, mydbm, SchedulerConfig(
        poll_interval_s=poll_interval,
        retention_s=retention,
        use_wheel=not no_wheel,
        wheel_buckets=wheel_buckets,
    ))
    pump = threading.Thread(target=sched.run, name="scheduler",
                            kwargs={"install_signal_handlers": False})
    pump.start()

    # uvicorn re-raises a caught SIGTERM/SIGINT into the handlers that
    # were registered before run(); drain the scheduler there, not in a
    # finally block the re-raise would never reach
    def drain(signum, frame):
        sched.stop()
        pump.join(timeout=60.0)
        sys.exit(0)

    signal.signal(signal.SIGTERM, drain)
    signal.signal(signal.SIGINT, drain)
    try:
        uvicorn.run(create_app(admin, mydbm), host=host, port=port,
                    log_level=log_level)
    finally:
        sched.stop()
        pump.join(timeout=60.0)


# ----------------------------------------------------------------- datagen

@click.command()
@click.option("--admin-db", envvar="CASBATCH_ADMIN_DB", required=True,
              type=click.Path(dir_okay=False), help="admin database file")
@click.option("--target", "target_name", required=True,
              help="target name (or numeric id) to load into")
@click.option("--context", default="sim", show_default=True,
              help="context name for the new catalog")
@click.option("--rows", default=100_000, show_default=True, type=int)
@click.option("--seed", default=0, show_default=True, type=int)
def datagen_main(admin_db, target_name, context, rows, seed):
    """Generate a deterministic synthetic sky catalog on a target."""
    admin = AdminDb(admin_db)
    matches = [t for t in admin.list_targets()
               if t.name == target_name or str(t.target_id) == target_name]
    if not matches:
        raise click.ClickException(f"no target named {target_name!r}")
    try:
        path = datagen.install(admin, matches[0].target_id, context,
                               datagen.CatalogSpec(n_rows=rows, seed=seed))
    except CasBatchError as exc:
        raise click.ClickException(str(exc)) from exc
    click.echo(f"{context}\t{rows}\t{path}")


# ------------------------------------------------------------------- stats

_METRICS = {
    "elapsed": lambda s: s.elapsed_s,
    "rows": lambda s: float(s.rows),
    "cpu": lambda s: s.cpu_s,
}


@click.command()
@click.option("--admin-db", envvar="CASBATCH_ADMIN_DB", required=True,
              type=click.Path(dir_okay=False), help="admin database file")
@click.option("--metric", default="all", show_default=True,
              type=click.Choice(["all", *sorted(_METRICS)]))
@click.option("--bins-per-decade", default=5, show_default=True, type=int)
def stats_main(admin_db, metric, bins_per_decade):
    """Emit log-binned workload histograms as CSV for plotting."""
    admin = AdminDb(admin_db)
    stats = metrics.stats_from_rows(admin.list_stats())
    names = sorted(_METRICS) if metric == "all" else [metric]
    writer = csv.writer(sys.stdout)
    writer.writerow(["metric", "bin_center", "count"])
    for name in names:
        values = [v for v in (_METRICS[name](s) for s in stats) if v > 0]
        if not values:
            continue
        for center, count in metrics.log_histogram(values, bins_per_decade):
            writer.writerow([name, f"{center:.6g}", count])


if __name__ == "__main__":
    main()
