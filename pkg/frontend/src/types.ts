export type JobState = 'Ready' | 'Started' | 'Finished' | 'Failed' | 'Canceled';
export type JobKind = 'Query' | 'Export' | 'Import';

export const TERMINAL_STATES: ReadonlySet<JobState> = new Set([
  'Finished',
  'Failed',
  'Canceled',
]);

export function isTerminal(state: JobState): boolean {
  return TERMINAL_STATES.has(state);
}

/** One job row, field for field what the server returns. */
export interface Job {
  job_id: number;
  user_id: number;
  queue_id: string;
  target_id: number | null;
  job_kind: JobKind;
  query_text: string;
  rewritten_text: string;
  dest_mydb: string | null;
  dest_table: string | null;
  state: JobState;
  t_submitted: number;
  t_started: number | null;
  t_finished: number | null;
  rows_out: number;
  error_msg: string | null;
  output_url: string | null;
  cancel_requested: boolean;
  params: Record<string, unknown>;
  route: string | null;
  context: string | null;
}

export interface TableInfo {
  name: string;
  columns: [string, string][];
  row_count: number;
  created_at: number;
  published_to: number[];
}

export interface PublishRecord {
  group_id: number;
  publisher_ws: number;
  alias: string;
  mydb_name: string;
  table_name: string;
  published_at: number;
}

export interface QuickResult {
  jobId: number;
  truncated: boolean;
  columns: { name: string; datatype: string }[];
  rows: unknown[][];
}

export interface DownloadPayload {
  filename: string;
  contentType: string;
  body: Blob;
}
