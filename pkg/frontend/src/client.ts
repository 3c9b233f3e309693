import type {
  DownloadPayload,
  Job,
  PublishRecord,
  QuickResult,
  TableInfo,
} from './types.js';

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(
    readonly status: number,
    message: string,
  ) {
    super(message);
    this.name = 'ApiError';
  }
}

export interface Credential {
  wsId: number;
  password: string;
}

async function detailOf(response: Response): Promise<string> {
  try {
    const body = (await response.json()) as { detail?: unknown };
    if (typeof body.detail === 'string' && body.detail) return body.detail;
  } catch {
    /* not JSON */
  }
  return `request failed with status ${response.status}`;
}

/**
 * Typed client for the service API. The credential lives only in this
 * object; it is never written to storage of any kind. A 401 clears it
 * and fires onUnauthorized so the app can return to the login screen.
 */
export class ApiClient {
  onUnauthorized: (() => void) | null = null;

  private credential: Credential | null = null;
  private readonly fetchImpl: FetchLike;

  constructor(
    readonly endpoint: string,
    fetchImpl?: FetchLike,
  ) {
    this.fetchImpl = fetchImpl ?? ((url, init) => fetch(url, init));
  }

  setCredential(credential: Credential | null): void {
    this.credential = credential;
  }

  get authenticated(): boolean {
    return this.credential !== null;
  }

  get wsId(): number | null {
    return this.credential ? this.credential.wsId : null;
  }

  private async call(
    method: string,
    path: string,
    init: { body?: BodyInit; headers?: Record<string, string> } = {},
  ): Promise<Response> {
    const headers: Record<string, string> = { ...init.headers };
    if (this.credential) {
      const raw = `${this.credential.wsId}:${this.credential.password}`;
      headers['Authorization'] = `Basic ${btoa(raw)}`;
    }
    const response = await this.fetchImpl(this.endpoint + path, {
      method,
      headers,
      body: init.body,
    });
    if (response.status === 401) {
      this.credential = null;
      const message = await detailOf(response);
      if (this.onUnauthorized) this.onUnauthorized();
      throw new ApiError(401, message);
    }
    if (!response.ok) {
      throw new ApiError(response.status, await detailOf(response));
    }
    return response;
  }

  private async json<T>(
    method: string,
    path: string,
    body?: unknown,
  ): Promise<T> {
    const init =
      body === undefined
        ? {}
        : {
            body: JSON.stringify(body),
            headers: { 'Content-Type': 'application/json' },
          };
    const response = await this.call(method, path, init);
    return (await response.json()) as T;
  }

  async health(): Promise<boolean> {
    const response = await this.fetchImpl(this.endpoint + '/v1/health');
    return response.ok;
  }

  // -- jobs ----------------------------------------------------------------

  async submit(query: string, queue: string, context?: string): Promise<number> {
    const body: Record<string, string> = { query, queue };
    if (context) body['context'] = context;
    const out = await this.json<{ job_id: number }>('POST', '/v1/jobs', body);
    return out.job_id;
  }

  async listJobs(filter: { state?: string; kind?: string } = {}): Promise<Job[]> {
    const params = new URLSearchParams();
    if (filter.state) params.set('state', filter.state);
    if (filter.kind) params.set('kind', filter.kind);
    const qs = params.toString();
    return this.json<Job[]>('GET', qs ? `/v1/jobs?${qs}` : '/v1/jobs');
  }

  async getJob(jobId: number): Promise<Job> {
    return this.json<Job>('GET', `/v1/jobs/${jobId}`);
  }

  async cancel(jobId: number): Promise<void> {
    await this.json('POST', `/v1/jobs/${jobId}/cancel`);
  }

  async resubmit(jobId: number): Promise<number> {
    const out = await this.json<{ job_id: number }>(
      'POST',
      `/v1/jobs/${jobId}/resubmit`,
    );
    return out.job_id;
  }

  // -- quick lane ------------------------------------------------------------

  async quick(query: string, context?: string): Promise<QuickResult> {
    const body: Record<string, string> = { query };
    if (context) body['context'] = context;
    const response = await this.call('POST', '/v1/quick', {
      body: JSON.stringify(body),
      headers: {
        'Content-Type': 'application/json',
        Accept: 'application/json',
      },
    });
    const data = (await response.json()) as {
      columns: { name: string; datatype: string }[];
      rows: unknown[][];
    };
    return {
      jobId: Number(response.headers.get('X-Job-Id') ?? -1),
      truncated: response.headers.get('X-Truncated') === 'true',
      columns: data.columns,
      rows: data.rows,
    };
  }

  // -- scratch database -----------------------------------------------------

  async tables(): Promise<TableInfo[]> {
    return this.json<TableInfo[]>('GET', '/v1/mydb/tables');
  }

  async dropTable(table: string): Promise<void> {
    await this.json('DELETE', `/v1/mydb/tables/${encodeURIComponent(table)}`);
  }

  async importTable(table: string, format: string, file: Blob): Promise<TableInfo> {
    const form = new FormData();
    form.append('table', table);
    form.append('format', format);
    form.append('file', file);
    const response = await this.call('POST', '/v1/mydb/import', { body: form });
    return (await response.json()) as TableInfo;
  }

  async exportTable(table: string, format: string): Promise<number> {
    const out = await this.json<{ job_id: number }>('POST', '/v1/mydb/export', {
      table,
      format,
    });
    return out.job_id;
  }

  async neighbors(
    table: string,
    context: string,
    targetTable: string,
    radiusArcmin: number,
  ): Promise<TableInfo> {
    return this.json<TableInfo>('POST', '/v1/mydb/neighbors', {
      table,
      context,
      target_table: targetTable,
      radius_arcmin: radiusArcmin,
    });
  }

  // -- groups -----------------------------------------------------------------

  async publish(group: string, table: string): Promise<PublishRecord> {
    return this.json<PublishRecord>(
      'POST',
      `/v1/groups/${encodeURIComponent(group)}/publish`,
      { table },
    );
  }

  // -- downloads ----------------------------------------------------------------

  async download(token: string): Promise<DownloadPayload> {
    const response = await this.call('GET', `/v1/download/${token}`);
    const contentType =
      response.headers.get('Content-Type') ?? 'application/octet-stream';
    const disposition = response.headers.get('Content-Disposition') ?? '';
    const match = /filename="?([^";]+)"?/.exec(disposition);
    return {
      filename: match ? match[1] : `export-${token}`,
      contentType,
      body: await response.blob(),
    };
  }
}
