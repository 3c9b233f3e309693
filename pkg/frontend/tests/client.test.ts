import { describe, expect, it } from 'vitest';

import { ApiClient, ApiError } from '../src/client.js';
import { FakeServer } from './fakeServer.js';

function makeClient(server: FakeServer): ApiClient {
  const client = new ApiClient('http://api.test', server.fetch);
  client.setCredential({ wsId: 1, password: 'pw' });
  return client;
}

describe('ApiClient', () => {
  it('sends basic credentials and round-trips a submission', async () => {
    const server = new FakeServer();
    const client = makeClient(server);
    const jobId = await client.submit('SELECT 1 INTO MyDB.t FROM galaxy', 'long', 'dr1');
    expect(jobId).toBe(1);
    const job = await client.getJob(jobId);
    expect(job.state).toBe('Ready');
    expect(job.context).toBe('dr1');
    const listed = await client.listJobs({ state: 'ready' });
    expect(listed.map((j) => j.job_id)).toEqual([1]);
  });

  it('surfaces the server detail message on errors', async () => {
    const server = new FakeServer();
    const client = makeClient(server);
    const failure = client.dropTable('missing');
    await expect(failure).rejects.toBeInstanceOf(ApiError);
    await expect(failure).rejects.toMatchObject({
      status: 404,
      message: "no table 'missing'",
    });
  });

  it('clears the credential and notifies on a 401', async () => {
    const server = new FakeServer();
    const client = makeClient(server);
    let bounced = 0;
    client.onUnauthorized = () => (bounced += 1);
    server.password = 'rotated';
    await expect(client.listJobs()).rejects.toMatchObject({ status: 401 });
    expect(bounced).toBe(1);
    expect(client.authenticated).toBe(false);
  });

  it('parses the quick lane response and its headers', async () => {
    const server = new FakeServer();
    const client = makeClient(server);
    const result = await client.quick('SELECT BIG FROM galaxy');
    expect(result.columns.map((c) => c.name)).toEqual(['n']);
    expect(result.rows).toEqual([[42]]);
    expect(result.truncated).toBe(true);
    expect(result.jobId).toBeGreaterThan(0);
  });

  it('downloads export payloads with their filename', async () => {
    const server = new FakeServer();
    const client = makeClient(server);
    server.downloads.set('tokx', { body: 'a,b\n1,2\n', purged: false });
    const payload = await client.download('tokx');
    expect(payload.filename).toBe('export-tokx.csv');
    expect(payload.contentType).toContain('text/csv');
    expect(await payload.body.text()).toBe('a,b\n1,2\n');
  });

  it('reports expiry as the server phrases it', async () => {
    const server = new FakeServer();
    const client = makeClient(server);
    server.downloads.set('tokg', { body: '', purged: true });
    await expect(client.download('tokg')).rejects.toMatchObject({
      status: 410,
      message: 'download expired and was removed',
    });
  });
});
