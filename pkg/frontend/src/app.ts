import { ApiClient, ApiError, type FetchLike } from './client.js';
import { highlightSql } from './highlight.js';
import { Poller } from './poll.js';
import { clear, el, fmtDuration, fmtTime, stateBadge } from './render.js';
import {
  isTerminal,
  type DownloadPayload,
  type Job,
  type QuickResult,
  type TableInfo,
} from './types.js';

export interface AppOptions {
  endpoint?: string;
  fetchImpl?: FetchLike;
  /** job polling cadence; defaults to the scheduler's 3 s */
  pollIntervalMs?: number;
}

type View = 'login' | 'query' | 'history' | 'mydb' | 'job';

const EXPORT_FORMATS = ['csv', 'votable', 'json'];
const IMPORT_FORMATS = ['csv', 'votable'];
const JOB_COLUMNS: { key: keyof Job; label: string }[] = [
  { key: 'job_id', label: 'Job' },
  { key: 'job_kind', label: 'Kind' },
  { key: 'queue_id', label: 'Queue' },
  { key: 'state', label: 'State' },
  { key: 't_submitted', label: 'Submitted' },
  { key: 't_started', label: 'Started' },
  { key: 't_finished', label: 'Finished' },
  { key: 'rows_out', label: 'Rows' },
  { key: 'error_msg', label: 'Error' },
];

/**
 * The single-page client. All state a screen shows comes from the HTTP
 * API through one ApiClient; the credential stays inside that client
 * and is dropped on sign-out or any 401. One Poller at most is live at
 * a time, owned by the current screen and stopped on navigation.
 */
export class App {
  view: View = 'login';
  client: ApiClient;
  /** completed file downloads, newest last */
  readonly downloads: { filename: string; bytes: number }[] = [];

  private readonly root: HTMLElement;
  private readonly fetchImpl?: FetchLike;
  private readonly pollIntervalMs: number;
  private poller: Poller | null = null;
  private currentJobId: number | null = null;
  private lastJobs: Job[] = [];
  private sortKey: keyof Job = 't_submitted';
  private sortDir: 1 | -1 = -1;
  private loginNotice = '';
  private draft = { query: '', queue: 'long', context: '' };

  constructor(root: HTMLElement, options: AppOptions = {}) {
    this.root = root;
    this.fetchImpl = options.fetchImpl;
    this.pollIntervalMs = options.pollIntervalMs ?? 3000;
    this.client = new ApiClient(options.endpoint ?? '', this.fetchImpl);
    this.show('login');
  }

  show(view: View, jobId?: number): void {
    if (this.poller) {
      this.poller.stop();
      this.poller = null;
    }
    this.view = view;
    if (jobId !== undefined) this.currentJobId = jobId;
    clear(this.root);
    if (view !== 'login') this.root.append(this.header());
    const page = el('div', { class: 'page' });
    this.root.append(page);
    switch (view) {
      case 'login':
        this.renderLogin(page);
        break;
      case 'query':
        this.renderQuery(page);
        break;
      case 'history':
        this.renderHistory(page);
        break;
      case 'mydb':
        this.renderMyDb(page);
        break;
      case 'job':
        this.renderJob(page);
        break;
    }
  }

  private header(): HTMLElement {
    const tab = (label: string, view: View) =>
      el(
        'button',
        {
          class: this.view === view ? 'tab active' : 'tab',
          onclick: () => this.show(view),
        },
        label,
      );
    return el(
      'div',
      { class: 'top' },
      el('span', { class: 'brand' }, 'casbatch'),
      tab('Query', 'query'),
      tab('History', 'history'),
      tab('MyDB', 'mydb'),
      el('span', { class: 'spacer' }),
      el('span', { class: 'whoami' }, `ws ${this.client.wsId ?? '?'}`),
      el('button', { class: 'tab', onclick: () => this.logout() }, 'Sign out'),
    );
  }

  private logout(): void {
    this.client.setCredential(null);
    this.loginNotice = '';
    this.show('login');
  }

  private onUnauthorized = (): void => {
    this.loginNotice = 'Your session was rejected. Sign in again.';
    this.show('login');
  };

  // -- login -----------------------------------------------------------------

  private renderLogin(page: HTMLElement): void {
    const endpoint = el('input', {
      id: 'endpoint',
      value: this.client.endpoint,
      placeholder: 'http://127.0.0.1:8765',
    });
    const wsid = el('input', { id: 'wsid', placeholder: 'workspace id' });
    const password = el('input', { id: 'password', type: 'password' });
    const err = el('div', { class: 'err', id: 'login-err' }, this.loginNotice);
    const button = el(
      'button',
      {
        id: 'login-btn',
        onclick: () => void this.login(endpoint.value, wsid.value, password.value, err),
      },
      'Sign in',
    );
    page.append(
      el('h2', {}, 'Sign in'),
      field('Server', endpoint),
      field('Workspace id', wsid),
      field('Password', password),
      button,
      err,
    );
  }

  private async login(
    endpoint: string,
    wsid: string,
    password: string,
    err: HTMLElement,
  ): Promise<void> {
    const wsId = Number(wsid);
    if (!Number.isInteger(wsId) || wsId <= 0) {
      err.textContent = 'workspace id must be a positive integer';
      return;
    }
    const client = new ApiClient(endpoint.replace(/\/+$/, ''), this.fetchImpl);
    client.setCredential({ wsId, password });
    try {
      await client.listJobs();
    } catch (error) {
      err.textContent = messageOf(error);
      return;
    }
    client.onUnauthorized = this.onUnauthorized;
    this.client = client;
    this.loginNotice = '';
    this.show('query');
  }

  // -- query screen -------------------------------------------------------------

  private renderQuery(page: HTMLElement): void {
    const layer = el('pre', { class: 'hl', 'aria-hidden': 'true' });
    const editor = el('textarea', {
      id: 'sql',
      spellcheck: 'false',
      oninput: () => {
        this.draft.query = editor.value;
        layer.innerHTML = highlightSql(editor.value) + '\n';
      },
      onscroll: () => {
        layer.scrollTop = editor.scrollTop;
        layer.scrollLeft = editor.scrollLeft;
      },
    }) as HTMLTextAreaElement;
    editor.value = this.draft.query;
    layer.innerHTML = highlightSql(this.draft.query) + '\n';

    const queue = el('input', {
      id: 'queue',
      list: 'queue-options',
      value: this.draft.queue,
      oninput: () => (this.draft.queue = queue.value),
    }) as HTMLInputElement;
    const context = el('input', {
      id: 'context',
      placeholder: 'server default',
      value: this.draft.context,
      oninput: () => (this.draft.context = context.value),
    }) as HTMLInputElement;
    const err = el('div', { class: 'err', id: 'query-err' });
    const out = el('div', { id: 'quick-out' });
    const run = el(
      'button',
      { id: 'run-btn', onclick: () => void this.runQuery(err, out) },
      'Submit',
    );

    page.append(
      el('h2', {}, 'Query'),
      el('div', { class: 'editor' }, layer, editor),
      el(
        'div',
        { class: 'row' },
        field('Queue', queue),
        field('Context', context),
        run,
      ),
      el(
        'datalist',
        { id: 'queue-options' },
        el('option', { value: 'quick' }),
        el('option', { value: 'long' }),
      ),
      err,
      out,
    );
  }

  private async runQuery(err: HTMLElement, out: HTMLElement): Promise<void> {
    err.textContent = '';
    clear(out);
    const { query, queue, context } = this.draft;
    if (!query.trim()) {
      err.textContent = 'enter a query first';
      return;
    }
    try {
      if (queue === 'quick') {
        const result = await this.client.quick(query, context || undefined);
        this.renderQuickResult(out, result);
      } else {
        const jobId = await this.client.submit(query, queue, context || undefined);
        this.show('job', jobId);
      }
    } catch (error) {
      err.textContent = messageOf(error);
    }
  }

  private renderQuickResult(out: HTMLElement, result: QuickResult): void {
    const head = el('tr', {});
    for (const column of result.columns) head.append(el('th', {}, column.name));
    const body = el('tbody', {});
    for (const row of result.rows) {
      const tr = el('tr', {});
      for (const cell of row) tr.append(el('td', {}, cell === null ? '' : String(cell)));
      body.append(tr);
    }
    out.append(
      el(
        'div',
        { class: 'note', id: 'quick-note' },
        `${result.rows.length} rows (job ${result.jobId})` +
          (result.truncated ? ', truncated at the row cap' : ''),
      ),
      el('table', { class: 'grid' }, el('thead', {}, head), body),
    );
  }

  // -- history screen --------------------------------------------------------------

  private renderHistory(page: HTMLElement): void {
    const err = el('div', { class: 'err', id: 'history-err' });
    const head = el('tr', {});
    for (const column of JOB_COLUMNS) {
      head.append(
        el(
          'th',
          { onclick: () => this.resort(column.key) },
          column.label + (this.sortKey === column.key ? (this.sortDir > 0 ? ' ^' : ' v') : ''),
        ),
      );
    }
    head.append(el('th', {}, 'Actions'));
    const body = el('tbody', {});
    page.append(
      el('h2', {}, 'Job history'),
      el('table', { class: 'grid', id: 'jobs' }, el('thead', {}, head), body),
      err,
    );

    this.poller = new Poller(async () => {
      const jobs = await this.client.listJobs();
      this.lastJobs = jobs;
      this.renderJobRows(body, err);
      return jobs.some((job) => !isTerminal(job.state));
    }, this.pollIntervalMs);
    this.poller.start();
  }

  private resort(key: keyof Job): void {
    if (this.sortKey === key) this.sortDir = this.sortDir > 0 ? -1 : 1;
    else {
      this.sortKey = key;
      this.sortDir = 1;
    }
    if (this.view === 'history') this.show('history');
  }

  private renderJobRows(body: HTMLElement, err: HTMLElement): void {
    const jobs = [...this.lastJobs].sort((a, b) => {
      const x = a[this.sortKey];
      const y = b[this.sortKey];
      if (x === y) return b.job_id - a.job_id;
      if (x === null) return 1;
      if (y === null) return -1;
      return (x < y ? -1 : 1) * this.sortDir;
    });
    clear(body);
    for (const job of jobs) {
      const actions = el('td', {});
      if (!isTerminal(job.state)) {
        actions.append(
          el(
            'button',
            {
              class: 'cancel-btn',
              onclick: () => void this.historyAction(() => this.client.cancel(job.job_id), err),
            },
            'Cancel',
          ),
        );
      } else {
        actions.append(
          el(
            'button',
            {
              class: 'resubmit-btn',
              onclick: () =>
                void this.historyAction(() => this.client.resubmit(job.job_id), err),
            },
            'Resubmit',
          ),
        );
      }
      actions.append(
        el(
          'button',
          { class: 'view-btn', onclick: () => this.show('job', job.job_id) },
          'View',
        ),
      );
      body.append(
        el(
          'tr',
          { 'data-job': String(job.job_id) },
          el('td', {}, String(job.job_id)),
          el('td', {}, job.job_kind),
          el('td', {}, job.queue_id),
          el('td', {}, stateBadge(job.state)),
          el('td', {}, fmtTime(job.t_submitted)),
          el('td', {}, fmtTime(job.t_started)),
          el('td', {}, fmtTime(job.t_finished)),
          el('td', {}, String(job.rows_out)),
          el('td', { class: 'errcell', title: job.error_msg ?? '' }, trim(job.error_msg, 40)),
          actions,
        ),
      );
    }
  }

  private async historyAction(action: () => Promise<unknown>, err: HTMLElement): Promise<void> {
    err.textContent = '';
    try {
      await action();
    } catch (error) {
      err.textContent = messageOf(error);
    }
    // a resubmit revives a finished list, so make sure the poller is live
    if (this.poller) {
      this.poller.start();
      this.poller.kick();
    }
  }

  // -- job detail -----------------------------------------------------------------

  private renderJob(page: HTMLElement): void {
    const jobId = this.currentJobId;
    if (jobId === null) {
      this.show('history');
      return;
    }
    const err = el('div', { class: 'err', id: 'job-err' });
    const detail = el('div', { id: 'job-detail' });
    page.append(el('h2', {}, `Job ${jobId}`), detail, err);

    this.poller = new Poller(async () => {
      const job = await this.client.getJob(jobId);
      this.renderJobDetail(detail, err, job);
      return !isTerminal(job.state);
    }, this.pollIntervalMs);
    this.poller.start();
  }

  private renderJobDetail(detail: HTMLElement, err: HTMLElement, job: Job): void {
    clear(detail);
    const rows: [string, Node | string][] = [
      ['State', stateBadge(job.state)],
      ['Kind', job.job_kind],
      ['Queue', job.queue_id],
      ['Context', job.context ?? '-'],
      ['Submitted', fmtTime(job.t_submitted)],
      ['Started', fmtTime(job.t_started)],
      ['Finished', fmtTime(job.t_finished)],
      ['Duration', fmtDuration(job.t_started, job.t_finished)],
      ['Rows out', String(job.rows_out)],
      ['Destination', job.dest_table ? `${job.dest_mydb}.${job.dest_table}` : '-'],
    ];
    const grid = el('table', { class: 'kv' });
    for (const [label, value] of rows) {
      grid.append(
        el('tr', {}, el('th', {}, label), el('td', { 'data-field': label.toLowerCase() }, value)),
      );
    }
    detail.append(grid);
    if (job.error_msg) {
      detail.append(el('div', { class: 'err', id: 'job-error-msg' }, job.error_msg));
    }
    if (job.query_text) {
      const pre = el('pre', { class: 'sql-view' });
      pre.innerHTML = highlightSql(job.query_text);
      detail.append(pre);
    }

    const actions = el('div', { class: 'row' });
    if (!isTerminal(job.state)) {
      actions.append(
        el(
          'button',
          {
            id: 'cancel-btn',
            onclick: () => void this.jobAction(() => this.client.cancel(job.job_id), err),
          },
          'Cancel',
        ),
      );
    } else {
      actions.append(
        el(
          'button',
          {
            id: 'resubmit-btn',
            onclick: () =>
              void this.jobAction(async () => {
                const next = await this.client.resubmit(job.job_id);
                this.show('job', next);
              }, err),
          },
          'Resubmit',
        ),
      );
    }
    if (job.job_kind === 'Export' && job.state === 'Finished' && job.output_url) {
      const token = job.output_url;
      actions.append(
        el(
          'button',
          { id: 'download-btn', onclick: () => void this.fetchDownload(token, err) },
          'Download',
        ),
      );
    }
    actions.append(
      el('button', { id: 'back-btn', onclick: () => this.show('history') }, 'History'),
    );
    detail.append(actions, el('div', { class: 'note', id: 'download-note' }));
  }

  private async jobAction(action: () => Promise<unknown>, err: HTMLElement): Promise<void> {
    err.textContent = '';
    try {
      await action();
    } catch (error) {
      err.textContent = messageOf(error);
    }
    if (this.poller) {
      this.poller.start();
      this.poller.kick();
    }
  }

  private async fetchDownload(token: string, err: HTMLElement): Promise<void> {
    err.textContent = '';
    try {
      const payload = await this.client.download(token);
      this.downloads.push({ filename: payload.filename, bytes: payload.body.size });
      this.offerToBrowser(payload);
      const note = this.root.querySelector('#download-note');
      if (note) note.textContent = `saved ${payload.filename} (${payload.body.size} bytes)`;
    } catch (error) {
      err.textContent = messageOf(error);
    }
  }

  private offerToBrowser(payload: DownloadPayload): void {
    // hand the bytes to the browser's save flow where available
    if (typeof URL.createObjectURL !== 'function') return;
    const href = URL.createObjectURL(payload.body);
    const anchor = el('a', { href, download: payload.filename });
    this.root.append(anchor);
    anchor.click();
    anchor.remove();
    URL.revokeObjectURL(href);
  }

  // -- MyDB screen ----------------------------------------------------------------

  private renderMyDb(page: HTMLElement): void {
    const err = el('div', { class: 'err', id: 'mydb-err' });
    const body = el('tbody', {});
    const note = el('div', { class: 'note', id: 'mydb-note' });

    const upFile = el('input', { id: 'up-file', type: 'file' }) as HTMLInputElement;
    const upTable = el('input', { id: 'up-table', placeholder: 'table name' }) as HTMLInputElement;
    const upFormat = formatSelect('up-format', IMPORT_FORMATS);
    const uploadBtn = el(
      'button',
      {
        id: 'upload-btn',
        onclick: () => void this.upload(upFile, upTable, upFormat, body, err, note),
      },
      'Upload',
    );

    const nbTable = el('input', { id: 'nb-table', placeholder: 'my table' }) as HTMLInputElement;
    const nbContext = el('input', { id: 'nb-context', placeholder: 'context' }) as HTMLInputElement;
    const nbTarget = el('input', { id: 'nb-target', placeholder: 'catalog table' }) as HTMLInputElement;
    const nbRadius = el('input', { id: 'nb-radius', value: '1.0' }) as HTMLInputElement;
    const nbBtn = el(
      'button',
      {
        id: 'nb-btn',
        onclick: () =>
          void this.runNeighbors(nbTable, nbContext, nbTarget, nbRadius, body, err, note),
      },
      'Find neighbors',
    );

    page.append(
      el('h2', {}, 'MyDB'),
      el(
        'table',
        { class: 'grid', id: 'tables' },
        el(
          'thead',
          {},
          el(
            'tr',
            {},
            el('th', {}, 'Table'),
            el('th', {}, 'Rows'),
            el('th', {}, 'Columns'),
            el('th', {}, 'Created'),
            el('th', {}, 'Actions'),
          ),
        ),
        body,
      ),
      el('h3', {}, 'Upload'),
      el('div', { class: 'row' }, upFile, field('Table', upTable), field('Format', upFormat), uploadBtn),
      el('h3', {}, 'Neighbors'),
      el(
        'div',
        { class: 'row' },
        field('My table', nbTable),
        field('Context', nbContext),
        field('Catalog table', nbTarget),
        field('Radius (arcmin)', nbRadius),
        nbBtn,
      ),
      note,
      err,
    );
    void this.refreshTables(body, err);
  }

  private async refreshTables(body: HTMLElement, err: HTMLElement): Promise<void> {
    let tables: TableInfo[];
    try {
      tables = await this.client.tables();
    } catch (error) {
      err.textContent = messageOf(error);
      return;
    }
    clear(body);
    for (const table of tables) {
      const expFormat = formatSelect('', EXPORT_FORMATS);
      expFormat.className = 'exp-format';
      const pubGroup = el('input', {
        class: 'pub-group',
        placeholder: 'group',
      }) as HTMLInputElement;
      body.append(
        el(
          'tr',
          { 'data-table': table.name },
          el('td', {}, table.name),
          el('td', {}, String(table.row_count)),
          el('td', {}, table.columns.map(([name]) => name).join(', ')),
          el('td', {}, fmtTime(table.created_at)),
          el(
            'td',
            {},
            el(
              'button',
              {
                class: 'drop-btn',
                onclick: () =>
                  void this.mydbAction(
                    () => this.client.dropTable(table.name),
                    body,
                    err,
                  ),
              },
              'Drop',
            ),
            expFormat,
            el(
              'button',
              {
                class: 'exp-btn',
                onclick: () =>
                  void this.exportTable(table.name, expFormat.value, err),
              },
              'Export',
            ),
            pubGroup,
            el(
              'button',
              {
                class: 'pub-btn',
                onclick: () =>
                  void this.mydbAction(
                    () => this.client.publish(pubGroup.value, table.name),
                    body,
                    err,
                  ),
              },
              'Publish',
            ),
          ),
        ),
      );
    }
  }

  private async mydbAction(
    action: () => Promise<unknown>,
    body: HTMLElement,
    err: HTMLElement,
  ): Promise<void> {
    err.textContent = '';
    try {
      await action();
    } catch (error) {
      err.textContent = messageOf(error);
      return;
    }
    await this.refreshTables(body, err);
  }

  private async upload(
    file: HTMLInputElement,
    table: HTMLInputElement,
    format: HTMLSelectElement,
    body: HTMLElement,
    err: HTMLElement,
    note: HTMLElement,
  ): Promise<void> {
    err.textContent = '';
    const chosen = file.files && file.files[0];
    if (!chosen) {
      err.textContent = 'choose a file to upload';
      return;
    }
    if (!table.value.trim()) {
      err.textContent = 'name the new table';
      return;
    }
    try {
      const info = await this.client.importTable(table.value.trim(), format.value, chosen);
      note.textContent = `imported ${info.name} (${info.row_count} rows)`;
    } catch (error) {
      err.textContent = messageOf(error);
      return;
    }
    await this.refreshTables(body, err);
  }

  private async exportTable(table: string, format: string, err: HTMLElement): Promise<void> {
    err.textContent = '';
    try {
      const jobId = await this.client.exportTable(table, format);
      this.show('job', jobId);
    } catch (error) {
      err.textContent = messageOf(error);
    }
  }

  private async runNeighbors(
    table: HTMLInputElement,
    context: HTMLInputElement,
    target: HTMLInputElement,
    radius: HTMLInputElement,
    body: HTMLElement,
    err: HTMLElement,
    note: HTMLElement,
  ): Promise<void> {
    err.textContent = '';
    const arcmin = Number(radius.value);
    if (!Number.isFinite(arcmin)) {
      err.textContent = 'radius must be a number of arcminutes';
      return;
    }
    try {
      const info = await this.client.neighbors(
        table.value.trim(),
        context.value.trim(),
        target.value.trim(),
        arcmin,
      );
      note.textContent = `created ${info.name} (${info.row_count} rows)`;
    } catch (error) {
      err.textContent = messageOf(error);
      return;
    }
    await this.refreshTables(body, err);
  }
}

function field(label: string, input: HTMLElement): HTMLElement {
  return el('label', { class: 'field' }, el('span', {}, label), input);
}

function formatSelect(id: string, formats: string[]): HTMLSelectElement {
  const select = el('select', id ? { id } : {}) as HTMLSelectElement;
  for (const format of formats) select.append(el('option', { value: format }, format));
  return select;
}

function trim(text: string | null, max: number): string {
  if (!text) return '';
  return text.length <= max ? text : text.slice(0, max - 3) + '...';
}

function messageOf(error: unknown): string {
  if (error instanceof ApiError) return error.message;
  return error instanceof Error ? error.message : String(error);
}
