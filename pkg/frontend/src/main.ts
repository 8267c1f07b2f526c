// DOM wiring: queue screen with counts and filters, review screen with
// the page image on top and editable entry/ID fields below. Enter saves
// and advances, Esc skips; counts refresh in the background every 30s.

import { ApiClient, ApiError } from './api.js';
import { ReviewSession, isValidPatentId } from './session.js';
import type { ActionOutcome, } from './session.js';
import type { FlagSummary } from './types.js';

const api = new ApiClient();
const session = new ReviewSession(api);

const el = (id: string): HTMLElement => {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node;
};

const queueScreen = () => el('queue-screen');
const reviewScreen = () => el('review-screen');
const banner = () => el('banner');

function showBanner(text: string, kind: 'error' | 'info' = 'error'): void {
  const node = banner();
  node.textContent = text;
  node.className = `banner ${kind}`;
  node.hidden = false;
}

function hideBanner(): void {
  banner().hidden = true;
}

async function refreshCounts(): Promise<void> {
  try {
    const progress = await api.progress();
    el('counts').textContent =
      `open ${progress.counts.open} · resolved ${progress.counts.resolved}` +
      ` · dismissed ${progress.counts.dismissed}`;
    hideBanner();
  } catch {
    showBanner('service unreachable; retrying…');
  }
}

function flagRow(flag: FlagSummary): HTMLElement {
  const row = document.createElement('tr');
  row.innerHTML = `
    <td>${flag.volume_key}</td>
    <td>${flag.page}</td>
    <td>${flag.row_ref}</td>
    <td><span class="kind">${flag.kind}</span></td>
    <td>${flag.detail}</td>`;
  row.tabIndex = 0;
  row.addEventListener('click', () => void openFlag(flag.flag_id));
  row.addEventListener('keydown', (event) => {
    if (event.key === 'Enter') void openFlag(flag.flag_id);
  });
  return row;
}

async function renderQueue(): Promise<void> {
  const kind = (el('filter-kind') as HTMLSelectElement).value;
  const volume = (el('filter-volume') as HTMLInputElement).value.trim();
  try {
    const flags = await session.loadQueue({
      kind: kind || undefined,
      volume: volume || undefined,
    });
    const body = el('queue-body');
    body.replaceChildren(...flags.map(flagRow));
    el('queue-empty').hidden = flags.length > 0;
    hideBanner();
  } catch {
    showBanner('could not load the flag queue');
  }
  void refreshCounts();
}

function showQueue(): void {
  reviewScreen().hidden = true;
  queueScreen().hidden = false;
  void renderQueue();
}

function renderReview(): void {
  const detail = session.current;
  if (!detail) {
    showQueue();
    return;
  }
  queueScreen().hidden = true;
  reviewScreen().hidden = false;

  el('flag-title').textContent =
    `${detail.kind} / volume ${detail.volume_key}, page ${detail.page}, row ${detail.row_ref}`;
  el('flag-detail').textContent = detail.detail;

  const pane = el('image-pane');
  pane.replaceChildren();
  for (const url of detail.images) {
    const img = document.createElement('img');
    img.src = url;
    img.alt = `page scan`;
    attachZoomPan(img);
    pane.appendChild(img);
  }

  (el('field-entry') as HTMLTextAreaElement).value = session.entryDraft;
  (el('field-id') as HTMLInputElement).value = session.idDraft;
  updateSaveState();
}

function updateSaveState(): void {
  const save = el('action-save') as HTMLButtonElement;
  save.disabled = !session.canSave;
  const idField = el('field-id') as HTMLInputElement;
  idField.classList.toggle(
    'invalid',
    session.dirtyId && !isValidPatentId(idField.value),
  );
}

function attachZoomPan(img: HTMLImageElement): void {
  let zoomed = false;
  let dragging = false;
  let startX = 0;
  let startY = 0;
  img.addEventListener('click', () => {
    if (dragging) return;
    zoomed = !zoomed;
    img.classList.toggle('zoomed', zoomed);
    if (!zoomed) img.style.translate = '';
  });
  img.addEventListener('pointerdown', (event) => {
    if (!zoomed) return;
    dragging = false;
    startX = event.clientX;
    startY = event.clientY;
    img.setPointerCapture(event.pointerId);
  });
  img.addEventListener('pointermove', (event) => {
    if (!zoomed || !img.hasPointerCapture(event.pointerId)) return;
    const dx = event.clientX - startX;
    const dy = event.clientY - startY;
    if (Math.abs(dx) + Math.abs(dy) > 3) dragging = true;
    if (dragging) img.style.translate = `${dx}px ${dy}px`;
  });
}

async function openFlag(flagId: string): Promise<void> {
  try {
    await session.open(flagId);
    renderReview();
  } catch (error) {
    if (error instanceof ApiError && error.status === 404) {
      showBanner('flag vanished; reloading queue', 'info');
      showQueue();
    } else {
      showBanner('could not load the flag');
    }
  }
}

async function act(run: () => Promise<ActionOutcome>): Promise<void> {
  try {
    const outcome = await run();
    if (outcome === 'conflict') {
      showBanner('flag was closed elsewhere; reload the queue', 'info');
      showQueue();
    } else if (outcome === 'queue-empty') {
      showQueue();
    } else {
      renderReview();
    }
    void refreshCounts();
  } catch (error) {
    showBanner(error instanceof Error ? error.message : 'action failed');
  }
}

function wire(): void {
  el('filter-kind').addEventListener('change', () => void renderQueue());
  el('filter-volume').addEventListener('change', () => void renderQueue());
  el('queue-reload').addEventListener('click', () => void renderQueue());
  el('back-to-queue').addEventListener('click', showQueue);

  const entryField = el('field-entry') as HTMLTextAreaElement;
  entryField.addEventListener('input', () => {
    session.setEntry(entryField.value);
    updateSaveState();
  });
  const idField = el('field-id') as HTMLInputElement;
  idField.addEventListener('input', () => {
    session.setId(idField.value);
    updateSaveState();
  });

  el('action-save').addEventListener('click', () => void act(() => session.saveAndNext()));
  el('action-dismiss').addEventListener('click', () => void act(() => session.dismissAndNext()));
  el('action-delete').addEventListener('click', () => {
    if (window.confirm('Delete this row from the dataset?')) {
      void act(() => session.deleteRow());
    }
  });
  el('action-skip').addEventListener('click', () => void act(() => session.skip()));

  document.addEventListener('keydown', (event) => {
    if (reviewScreen().hidden) return;
    if (event.key === 'Enter' && !(event.target instanceof HTMLTextAreaElement)) {
      event.preventDefault();
      if (session.canSave) void act(() => session.saveAndNext());
    } else if (event.key === 'Escape') {
      event.preventDefault();
      void act(() => session.skip());
    }
  });

  window.setInterval(() => void refreshCounts(), 30_000);
  showQueue();
}

document.addEventListener('DOMContentLoaded', wire);
