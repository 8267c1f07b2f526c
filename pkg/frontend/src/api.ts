// Typed client for the review service. Every dataset change in the UI
// goes through postResolution; nothing else mutates state.

import type {
  FlagDetail,
  FlagFilter,
  FlagSummary,
  Progress,
  Resolution,
  ResolutionResult,
} from './types.js';

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    message: string,
  ) {
    super(message);
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(
    private readonly baseUrl: string = '',
    private readonly fetchImpl: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await this.fetchImpl(this.baseUrl + path, init);
    if (!response.ok) {
      let code = 'error';
      let message = response.statusText;
      try {
        const body = (await response.json()) as { code?: string; message?: string };
        code = body.code ?? code;
        message = body.message ?? message;
      } catch {
        // non-JSON error body; keep the status text
      }
      throw new ApiError(response.status, code, message);
    }
    return (await response.json()) as T;
  }

  listFlags(filter: FlagFilter = {}): Promise<FlagSummary[]> {
    const params = new URLSearchParams();
    if (filter.status) params.set('status', filter.status);
    if (filter.kind) params.set('kind', filter.kind);
    if (filter.volume) params.set('volume', filter.volume);
    const query = params.toString();
    return this.request(`/api/flags${query ? `?${query}` : ''}`);
  }

  getFlag(flagId: string): Promise<FlagDetail> {
    return this.request(`/api/flags/${encodeURIComponent(flagId)}`);
  }

  postResolution(flagId: string, resolution: Resolution): Promise<ResolutionResult> {
    return this.request(`/api/flags/${encodeURIComponent(flagId)}/resolution`, {
      method: 'POST',
      headers: { 'content-type': 'application/json' },
      body: JSON.stringify(resolution),
    });
  }

  progress(): Promise<Progress> {
    return this.request('/api/progress');
  }
}
