// Review session controller: queue cursor, field drafts, and the
// Save/Dismiss/Delete/Skip actions. DOM-free so the whole edit flow can
// run headlessly under test; the view layer renders from this state.

import { ApiClient, ApiError } from './api.js';
import type { FlagDetail, FlagFilter, FlagSummary } from './types.js';

export type ActionOutcome = 'advanced' | 'queue-empty' | 'conflict';

export function isValidPatentId(value: string): boolean {
  return /^\d+$/.test(value);
}

export class ReviewSession {
  flags: FlagSummary[] = [];
  current: FlagDetail | null = null;
  entryDraft = '';
  idDraft = '';
  dirtyEntry = false;
  dirtyId = false;

  constructor(private readonly api: ApiClient) {}

  async loadQueue(filter: FlagFilter = {}): Promise<FlagSummary[]> {
    this.flags = await this.api.listFlags({ status: 'open', ...filter });
    return this.flags;
  }

  /** One flag fetch per view; images load through the URLs in the detail. */
  async open(flagId: string): Promise<FlagDetail> {
    const detail = await this.api.getFlag(flagId);
    this.current = detail;
    this.entryDraft = detail.record?.entry ?? '';
    this.idDraft = detail.record?.fields.patent_id ?? '';
    this.dirtyEntry = false;
    this.dirtyId = false;
    return detail;
  }

  setEntry(text: string): void {
    if (!this.current) return;
    this.entryDraft = text;
    this.dirtyEntry = text !== (this.current.record?.entry ?? '');
  }

  setId(text: string): void {
    if (!this.current) return;
    this.idDraft = text;
    this.dirtyId = text !== (this.current.record?.fields.patent_id ?? '');
  }

  /** Save is legal only while an edited ID still passes the digits check. */
  get canSave(): boolean {
    if (!this.current) return false;
    if (this.dirtyId && !isValidPatentId(this.idDraft)) return false;
    return true;
  }

  private async advance(nextFlagId: string | null): Promise<ActionOutcome> {
    if (nextFlagId === null) {
      this.current = null;
      await this.loadQueue();
      return 'queue-empty';
    }
    await this.open(nextFlagId);
    return 'advanced';
  }

  private async close(
    action: 'resolve' | 'dismiss' | 'delete_row',
    note?: string,
  ): Promise<ActionOutcome> {
    if (!this.current) return 'queue-empty';
    try {
      const result = await this.api.postResolution(this.current.flag_id, {
        action,
        entry: action === 'resolve' && this.dirtyEntry ? this.entryDraft : null,
        patent_id: action === 'resolve' && this.dirtyId ? this.idDraft : null,
        note: note ?? null,
      });
      this.flags = this.flags.filter((f) => f.flag_id !== result.flag_id);
      return this.advance(result.next_flag_id);
    } catch (error) {
      if (error instanceof ApiError && error.status === 409) {
        return 'conflict';
      }
      throw error;
    }
  }

  saveAndNext(note?: string): Promise<ActionOutcome> {
    if (!this.canSave) {
      return Promise.reject(new Error('patent_id fails the digits-only check'));
    }
    return this.close('resolve', note);
  }

  dismissAndNext(note?: string): Promise<ActionOutcome> {
    return this.close('dismiss', note);
  }

  deleteRow(note?: string): Promise<ActionOutcome> {
    return this.close('delete_row', note);
  }

  /** Advance the cursor without touching the dataset. */
  async skip(): Promise<ActionOutcome> {
    if (!this.current) return 'queue-empty';
    const index = this.flags.findIndex((f) => f.flag_id === this.current!.flag_id);
    const next = this.flags[index + 1];
    if (!next) {
      this.current = null;
      return 'queue-empty';
    }
    await this.open(next.flag_id);
    return 'advanced';
  }
}
