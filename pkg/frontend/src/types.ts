export type FlagStatus = 'open' | 'resolved' | 'dismissed';

export type FlagKind =
  | 'duplicate_id'
  | 'id_below_range'
  | 'id_above_range'
  | 'no_id'
  | 'api_failed'
  | 'merged_entry'
  | 'category_order'
  | 'terminal_truncation'
  | 'no_category';

export interface FlagSummary {
  flag_id: string;
  volume_key: string;
  page: number;
  row_ref: number;
  kind: FlagKind;
  detail: string;
  status: FlagStatus;
  resolution: Resolution | null;
}

export interface PatentFieldValues {
  patent_id: string;
  assignee: string;
  location: string;
  title: string;
  date: string;
}

export interface RecordSnapshot {
  volume_key: string;
  page_first: number;
  page_last: number;
  entry: string;
  category: string | null;
  merged_from: number[];
  was_merged: boolean;
  fields: PatentFieldValues;
  api_failed: boolean;
}

export interface AuditEntry {
  timestamp: number;
  actor: string;
  change: string;
}

export interface FlagDetail extends FlagSummary {
  record: RecordSnapshot | null;
  images: string[];
  audit: AuditEntry[];
}

export type ResolutionAction = 'resolve' | 'dismiss' | 'delete_row';

export interface Resolution {
  action: ResolutionAction;
  entry?: string | null;
  patent_id?: string | null;
  note?: string | null;
}

export interface ResolutionResult extends FlagSummary {
  record: RecordSnapshot | null;
  next_flag_id: string | null;
}

export interface Progress {
  counts: Record<FlagStatus, number>;
  volumes: Record<string, Record<FlagStatus, number>>;
}

export interface FlagFilter {
  status?: FlagStatus;
  kind?: string;
  volume?: string;
}
