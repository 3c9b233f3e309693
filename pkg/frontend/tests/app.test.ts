import { beforeEach, describe, expect, it } from 'vitest';

import { App } from '../src/app.js';
import { FakeServer } from './fakeServer.js';

const POLL_MS = 20;
const BATCH_QUERY = 'SELECT TOP 10 *\nINTO MyDB.rgal\nFROM galaxy\nWHERE r < 22 AND r >21';

const DOCUMENTED = [
  /^GET \/v1\/health$/,
  /^POST \/v1\/jobs$/,
  /^GET \/v1\/jobs(\?[^ ]*)?$/,
  /^GET \/v1\/jobs\/\d+$/,
  /^POST \/v1\/jobs\/\d+\/cancel$/,
  /^POST \/v1\/jobs\/\d+\/resubmit$/,
  /^POST \/v1\/quick$/,
  /^GET \/v1\/mydb\/tables$/,
  /^DELETE \/v1\/mydb\/tables\/[^/]+$/,
  /^POST \/v1\/mydb\/import$/,
  /^POST \/v1\/mydb\/export$/,
  /^POST \/v1\/mydb\/neighbors$/,
  /^POST \/v1\/groups\/[^/]+\/publish$/,
  /^GET \/v1\/download\/[^/]+$/,
];

function assertDocumentedRoutesOnly(server: FakeServer): void {
  for (const entry of server.log) {
    expect(
      DOCUMENTED.some((route) => route.test(entry)),
      `request outside the documented API: ${entry}`,
    ).toBe(true);
  }
}

function sleep(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}

function mount(server: FakeServer): { app: App; root: HTMLElement } {
  document.body.innerHTML = '<div id="app"></div>';
  const root = document.getElementById('app') as HTMLElement;
  const app = new App(root, {
    endpoint: 'http://api.test',
    fetchImpl: server.fetch,
    pollIntervalMs: POLL_MS,
  });
  return { app, root };
}

function q<T extends Element>(root: ParentNode, selector: string): T {
  const node = root.querySelector(selector);
  expect(node, `missing element ${selector}`).not.toBeNull();
  return node as T;
}

function setValue(input: HTMLInputElement | HTMLTextAreaElement, value: string): void {
  input.value = value;
  input.dispatchEvent(new Event('input'));
}

async function login(root: HTMLElement, password = 'pw'): Promise<void> {
  setValue(q<HTMLInputElement>(root, '#wsid'), '1');
  setValue(q<HTMLInputElement>(root, '#password'), password);
  q<HTMLButtonElement>(root, '#login-btn').click();
  await sleep(15);
}

function clickTab(root: HTMLElement, label: string): void {
  const tabs = [...root.querySelectorAll('button.tab')];
  const tab = tabs.find((node) => node.textContent === label);
  expect(tab, `no tab ${label}`).toBeDefined();
  (tab as HTMLButtonElement).click();
}

async function submitBatch(root: HTMLElement, query: string): Promise<void> {
  setValue(q<HTMLTextAreaElement>(root, '#sql'), query);
  q<HTMLButtonElement>(root, '#run-btn').click();
  await sleep(15);
}

function jobState(root: HTMLElement): string {
  return q<HTMLElement>(root, '[data-field="state"]').textContent ?? '';
}

describe('portal', () => {
  beforeEach(() => {
    localStorage.clear();
    sessionStorage.clear();
  });

  it('rejects a bad password, accepts the right one, and never touches storage', async () => {
    const server = new FakeServer();
    const { root } = mount(server);

    await login(root, 'nope');
    expect(q<HTMLElement>(root, '#login-err').textContent).toBe('invalid credentials');
    expect(root.querySelector('.top')).toBeNull();

    await login(root);
    expect(root.querySelector('#sql')).not.toBeNull();
    expect(localStorage.length).toBe(0);
    expect(sessionStorage.length).toBe(0);
    assertDocumentedRoutesOnly(server);
  });

  it('submits a batch query and follows it through its states, then stops polling', async () => {
    const server = new FakeServer();
    const { root } = mount(server);
    await login(root);

    await submitBatch(root, BATCH_QUERY);
    expect(jobState(root)).toBe('Ready');

    server.advance();
    await sleep(POLL_MS * 2);
    expect(jobState(root)).toBe('Started');

    server.advance();
    await sleep(POLL_MS * 2);
    expect(jobState(root)).toBe('Finished');
    expect(q<HTMLElement>(root, '[data-field="rows out"]').textContent).toBe('10');
    expect(server.jobs.get(1)?.query_text).toBe(BATCH_QUERY);

    const polls = () => server.log.filter((entry) => entry === 'GET /v1/jobs/1').length;
    const settled = polls();
    await sleep(POLL_MS * 6);
    expect(polls()).toBe(settled);
    assertDocumentedRoutesOnly(server);
  });

  it('cancels a running job from history within one refresh', async () => {
    const server = new FakeServer();
    const { root } = mount(server);
    await login(root);

    await submitBatch(root, BATCH_QUERY);
    server.advance();
    clickTab(root, 'History');
    await sleep(POLL_MS * 2);

    const row = q<HTMLElement>(root, 'tr[data-job="1"]');
    expect(row.querySelector('.badge')?.textContent).toBe('Started');
    q<HTMLButtonElement>(row, '.cancel-btn').click();
    await sleep(10);
    server.advance();
    await sleep(POLL_MS * 2);

    expect(q<HTMLElement>(root, 'tr[data-job="1"] .badge').textContent).toBe('Canceled');
    assertDocumentedRoutesOnly(server);
  });

  it('resubmits a failed job as a fresh clone of the same query', async () => {
    const server = new FakeServer();
    const { root } = mount(server);
    await login(root);

    const doomed = 'SELECT FAILME INTO MyDB.f FROM galaxy';
    await submitBatch(root, doomed);
    server.advance();
    server.advance();
    clickTab(root, 'History');
    await sleep(POLL_MS * 2);

    const row = q<HTMLElement>(root, 'tr[data-job="1"]');
    expect(row.querySelector('.badge')?.textContent).toBe('Failed');
    q<HTMLButtonElement>(row, '.resubmit-btn').click();
    await sleep(POLL_MS * 2);

    const clone = q<HTMLElement>(root, 'tr[data-job="2"]');
    expect(clone.querySelector('.badge')?.textContent).toBe('Ready');
    expect(server.jobs.get(2)?.query_text).toBe(doomed);
    assertDocumentedRoutesOnly(server);
  });

  it('runs quick queries inline and surfaces engine errors in place', async () => {
    const server = new FakeServer();
    const { root } = mount(server);
    await login(root);

    setValue(q<HTMLInputElement>(root, '#queue'), 'quick');
    setValue(q<HTMLTextAreaElement>(root, '#sql'), 'SELECT BIG FROM galaxy');
    q<HTMLButtonElement>(root, '#run-btn').click();
    await sleep(15);

    expect(q<HTMLElement>(root, '#quick-out td').textContent).toBe('42');
    expect(q<HTMLElement>(root, '#quick-note').textContent).toContain('truncated');

    setValue(q<HTMLTextAreaElement>(root, '#sql'), 'SELECT BOOM');
    q<HTMLButtonElement>(root, '#run-btn').click();
    await sleep(15);
    expect(q<HTMLElement>(root, '#query-err').textContent).toBe('no such table: nope');
    assertDocumentedRoutesOnly(server);
  });

  it('uploads a file, cross-matches it, publishes, and drops tables', async () => {
    const server = new FakeServer();
    const { root } = mount(server);
    await login(root);
    clickTab(root, 'MyDB');
    await sleep(15);

    const file = new File(['id,ra,dec\n1,10.0,0.0\n2,11.0,0.5\n'], 'pts.csv', {
      type: 'text/csv',
    });
    const picker = q<HTMLInputElement>(root, '#up-file');
    Object.defineProperty(picker, 'files', { value: [file], configurable: true });
    setValue(q<HTMLInputElement>(root, '#up-table'), 'pts');
    q<HTMLButtonElement>(root, '#upload-btn').click();
    await sleep(15);

    expect(q<HTMLElement>(root, '#mydb-note').textContent).toBe('imported pts (2 rows)');
    expect(root.querySelector('tr[data-table="pts"]')).not.toBeNull();

    q<HTMLButtonElement>(root, '#upload-btn').click();
    await sleep(15);
    expect(q<HTMLElement>(root, '#mydb-err').textContent).toContain('already exists');

    setValue(q<HTMLInputElement>(root, '#nb-table'), 'pts');
    setValue(q<HTMLInputElement>(root, '#nb-context'), 'sim');
    setValue(q<HTMLInputElement>(root, '#nb-target'), 'galaxy');
    setValue(q<HTMLInputElement>(root, '#nb-radius'), '90');
    q<HTMLButtonElement>(root, '#nb-btn').click();
    await sleep(15);
    expect(q<HTMLElement>(root, '#mydb-err').textContent).toContain('(0, 60]');

    setValue(q<HTMLInputElement>(root, '#nb-radius'), '0.5');
    q<HTMLButtonElement>(root, '#nb-btn').click();
    await sleep(15);
    expect(q<HTMLElement>(root, '#mydb-note').textContent).toBe(
      'created pts_neighbors (2 rows)',
    );
    expect(root.querySelector('tr[data-table="pts_neighbors"]')).not.toBeNull();

    const ptsRow = q<HTMLElement>(root, 'tr[data-table="pts"]');
    setValue(q<HTMLInputElement>(ptsRow, '.pub-group'), 'science');
    q<HTMLButtonElement>(ptsRow, '.pub-btn').click();
    await sleep(15);
    expect(server.published.has('science:pts')).toBe(true);

    q<HTMLButtonElement>(
      q<HTMLElement>(root, 'tr[data-table="pts_neighbors"]'),
      '.drop-btn',
    ).click();
    await sleep(15);
    expect(root.querySelector('tr[data-table="pts_neighbors"]')).toBeNull();
    expect(root.querySelector('tr[data-table="pts"]')).not.toBeNull();
    assertDocumentedRoutesOnly(server);
  });

  it('exports a table and downloads the file once the job finishes', async () => {
    const server = new FakeServer();
    server.tables.set('pts', {
      name: 'pts',
      columns: [
        ['id', 'INTEGER'],
        ['ra', 'REAL'],
        ['dec', 'REAL'],
      ],
      row_count: 2,
      created_at: Date.now(),
      published_to: [],
    });
    const { app, root } = mount(server);
    await login(root);
    clickTab(root, 'MyDB');
    await sleep(15);

    q<HTMLButtonElement>(root, 'tr[data-table="pts"] .exp-btn').click();
    await sleep(15);
    expect(jobState(root)).toBe('Ready');
    expect(root.querySelector('#download-btn')).toBeNull();

    server.advance();
    server.advance();
    await sleep(POLL_MS * 2);
    expect(jobState(root)).toBe('Finished');

    q<HTMLButtonElement>(root, '#download-btn').click();
    await sleep(15);
    expect(app.downloads).toHaveLength(1);
    expect(app.downloads[0].filename).toBe('export-tok1.csv');
    expect(app.downloads[0].bytes).toBeGreaterThan(0);
    expect(q<HTMLElement>(root, '#download-note').textContent).toContain('saved export-tok1.csv');
    expect(server.log).toContain('GET /v1/download/tok1');

    const record = server.downloads.get('tok1');
    expect(record).toBeDefined();
    if (record) record.purged = true;
    q<HTMLButtonElement>(root, '#download-btn').click();
    await sleep(15);
    expect(q<HTMLElement>(root, '#job-err').textContent).toBe(
      'download expired and was removed',
    );
    assertDocumentedRoutesOnly(server);
  });

  it('drops to the login screen when the session stops being accepted', async () => {
    const server = new FakeServer();
    const { root } = mount(server);
    await login(root);
    // a live job keeps the history refresh polling
    await submitBatch(root, BATCH_QUERY);
    clickTab(root, 'History');
    await sleep(15);

    server.password = 'rotated';
    await sleep(POLL_MS * 3);
    expect(root.querySelector('#login-btn')).not.toBeNull();
    expect(q<HTMLElement>(root, '#login-err').textContent).toContain('Sign in again');

    const listPolls = () => server.log.filter((entry) => entry.startsWith('GET /v1/jobs')).length;
    const settled = listPolls();
    await sleep(POLL_MS * 5);
    expect(listPolls()).toBe(settled);
    assertDocumentedRoutesOnly(server);
  });

  it('sorts the history table by the clicked column', async () => {
    const server = new FakeServer();
    const { app, root } = mount(server);
    await login(root);
    for (const table of ['a', 'b', 'c']) {
      await app.client.submit(`SELECT 1 INTO MyDB.${table} FROM galaxy`, 'long');
    }
    server.advance();
    server.advance();
    clickTab(root, 'History');
    await sleep(POLL_MS * 2);

    const firstCell = () => q<HTMLElement>(root, '#jobs tbody tr td').textContent;
    expect(firstCell()).toBe('3');

    const jobHeader = () =>
      [...root.querySelectorAll('#jobs th')].find((th) =>
        (th.textContent ?? '').startsWith('Job'),
      ) as HTMLElement;
    jobHeader().click();
    await sleep(POLL_MS * 2);
    expect(firstCell()).toBe('1');

    jobHeader().click();
    await sleep(POLL_MS * 2);
    expect(firstCell()).toBe('3');
    assertDocumentedRoutesOnly(server);
  });
});
