import { EstimateInput } from "./api.js";
import { ALLOWED_SCALE, formatSp } from "./scale.js";
import { SessionState, SessionStore } from "./store.js";

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function readForm(root: HTMLElement): EstimateInput {
  const get = (id: string) => (root.querySelector<HTMLInputElement>(`#${id}`)?.value ?? "").trim();
  const input: EstimateInput = {
    title: get("task-title"),
    description: (root.querySelector<HTMLTextAreaElement>("#task-description")?.value ?? "").trim(),
  };
  const k = get("task-topk");
  if (k) input.top_k = Number(k);
  const temperature = get("task-temperature");
  if (temperature) input.temperature = Number(temperature);
  return input;
}

function renderForm(state: SessionState, store: SessionStore): HTMLElement {
  const form = el("form", "task-form");
  form.id = "task-form";

  const projectSelect = el("select", "project-select");
  projectSelect.id = "project-select";
  for (const project of state.projects) {
    const option = el("option", undefined, `${project.project_id} (${project.task_count} tasks)`);
    option.value = project.project_id;
    option.selected = project.project_id === state.projectId;
    projectSelect.append(option);
  }
  projectSelect.addEventListener("change", () => void store.selectProject(projectSelect.value));

  const title = el("input", "task-title");
  title.id = "task-title";
  title.placeholder = "Task title";
  title.value = state.lastInput?.title ?? "";

  const description = el("textarea", "task-description");
  description.id = "task-description";
  description.placeholder = "Task description";
  description.value = state.lastInput?.description ?? "";

  const topK = el("input", "task-topk");
  topK.id = "task-topk";
  topK.type = "number";
  topK.min = "1";
  topK.placeholder = "k (optional)";

  const temperature = el("input", "task-temperature");
  temperature.id = "task-temperature";
  temperature.type = "number";
  temperature.step = "0.1";
  temperature.min = "0";
  temperature.placeholder = "temperature (optional)";

  const submit = el("button", "submit-btn", state.submitting ? "Estimating..." : "Estimate");
  submit.type = "submit";
  submit.disabled = state.submitting;

  form.append(projectSelect, title, description, topK, temperature, submit);
  form.addEventListener("submit", (event) => {
    event.preventDefault();
    void store.submitTask(readForm(form));
  });
  return form;
}

function renderInlineError(state: SessionState, store: SessionStore): HTMLElement | null {
  if (!state.inlineError) return null;
  const box = el("div", "inline-error");
  box.append(el("span", "inline-error-text", state.inlineError));
  const retry = el("button", "retry-btn", "Retry");
  retry.addEventListener("click", () => void store.retry());
  box.append(retry);
  return box;
}

function renderSuggestion(state: SessionState, store: SessionStore): HTMLElement | null {
  const suggestion = state.suggestion;
  if (!suggestion) return null;

  const panel = el("section", "suggestion-panel");
  const headline = el("div", "suggestion-headline");
  headline.append(el("span", undefined, "Suggested story point: "));
  // Display the server's value verbatim; the UI never derives estimates.
  headline.append(el("strong", "suggested-sp", formatSp(suggestion.suggested)));
  panel.append(headline)

  const cards = el("ol", "evidence-list");
  for (const card of suggestion.evidence) {
    const item = el("li", "evidence-card");
    item.append(el("span", "sp-badge", formatSp(card.story_point)));
    item.append(el("span", "similarity", card.similarity.toFixed(3)));
    item.append(el("div", "card-title", card.title));
    item.append(el("div", "card-desc", card.description));
    cards.append(item);
  }
  panel.append(cards);

  const controls = el("div", "decision-controls");
  const accept = el("button", "accept-btn", `Accept ${formatSp(suggestion.suggested)}`);
  accept.addEventListener("click", () => void store.decide(suggestion.suggested));
  controls.append(accept);

  const deck = el("div", "override-deck");
  for (const value of ALLOWED_SCALE) {
    const card = el("button", "card-btn", formatSp(value));
    card.dataset.value = String(value);
    card.addEventListener("click", () => void store.decide(value));
    deck.append(card);
  }
  controls.append(deck);
  panel.append(controls);
  return panel;
}

function renderHistory(state: SessionState): HTMLElement {
  const section = el("section", "history");
  section.append(el("h2", undefined, "Session history"));
  const list = el("ul", "history-list");
  for (const entry of state.history) {
    const item = el("li", entry.pending ? "history-item pending" : "history-item");
    const record = entry.record;
    const label = record.accepted
      ? `accepted ${formatSp(record.final)}`
      : `${formatSp(record.suggested)} → ${formatSp(record.final)}`;
    item.append(el("span", "history-title", record.title));
    item.append(el("span", record.accepted ? "accepted-flag accepted" : "accepted-flag overridden", label));
    list.append(item);
  }
  section.append(list);
  return section;
}

function renderToast(state: SessionState, store: SessionStore): HTMLElement | null {
  if (!state.toast) return null;
  const toast = el("div", "toast", state.toast);
  const dismiss = el("button", "toast-dismiss", "Dismiss");
  dismiss.addEventListener("click", () => store.clearToast());
  toast.append(dismiss);
  return toast;
}

/** Re-render the whole session view into `root` (small DOM, no diffing). */
export function render(root: HTMLElement, state: SessionState, store: SessionStore): void {
  root.replaceChildren();
  root.append(renderForm(state, store));
  for (const part of [
    renderInlineError(state, store),
    renderSuggestion(state, store),
    renderToast(state, store),
  ]) {
    if (part) root.append(part);
  }
  root.append(renderHistory(state));
}

export function mount(root: HTMLElement, store: SessionStore): void {
  store.subscribe((state) => render(root, state, store));
  render(root, store.getState(), store);
}
