import {
  api as defaultApi,
  ApiClient,
  ApiError,
  DecisionRecord,
  EstimateInput,
  EstimateResponse,
  ProjectInfo,
} from "./api.js";

/** History rows are server records plus not-yet-acknowledged optimistic
 * entries, which carry a local key instead of a server id. */
export interface HistoryEntry {
  record: DecisionRecord;
  pending: boolean;
  localKey?: number;
}

export interface SessionState {
  projects: ProjectInfo[];
  projectId: string | null;
  submitting: boolean;
  lastInput: EstimateInput | null;
  suggestion: EstimateResponse | null;
  history: HistoryEntry[];
  inlineError: string | null;
  toast: string | null;
}

type Listener = (state: SessionState) => void;

let localKeyCounter = 0;

export class SessionStore {
  private state: SessionState = {
    projects: [],
    projectId: null,
    submitting: false,
    lastInput: null,
    suggestion: null,
    history: [],
    inlineError: null,
    toast: null,
  };
  private listeners: Listener[] = [];

  constructor(private readonly api: ApiClient = defaultApi) {}

  getState(): SessionState {
    return this.state;
  }

  subscribe(listener: Listener): () => void {
    this.listeners.push(listener);
    return () => {
      this.listeners = this.listeners.filter((l) => l !== listener);
    };
  }

  private update(patch: Partial<SessionState>): void {
    this.state = { ...this.state, ...patch };
    for (const listener of this.listeners) listener(this.state);
  }

  async loadProjects(): Promise<void> {
    const projects = await this.api.listProjects();
    this.update({ projects });
    if (projects.length > 0 && this.state.projectId === null) {
      await this.selectProject(projects[0].project_id);
    }
  }

  async selectProject(projectId: string): Promise<void> {
    this.update({ projectId, suggestion: null, inlineError: null, history: [] });
    const page = await this.api.fetchHistory(projectId);
    this.update({ history: page.items.map((record) => ({ record, pending: false })) });
  }

  /** Submit the task form. In-flight requests are de-duplicated: while one
   * estimate is pending, further submits are ignored. */
  async submitTask(input: EstimateInput): Promise<void> {
    if (this.state.submitting) return;
    if (!this.state.projectId) return;
    if (!input.title.trim()) {
      this.update({ inlineError: "Title must not be empty.", suggestion: null });
      return;
    }
    this.update({ submitting: true, inlineError: null, lastInput: input });
    try {
      const suggestion = await this.api.requestEstimate(this.state.projectId, input);
      this.update({ suggestion, submitting: false });
    } catch (err) {
      const message = err instanceof ApiError ? `Estimation failed (${err.status}): ${err.message}` : String(err);
      this.update({ inlineError: message, suggestion: null, submitting: false });
    }
  }

  /** Re-submit the last task after an API error. */
  async retry(): Promise<void> {
    if (this.state.lastInput) await this.submitTask(this.state.lastInput);
  }

  /** Record an accept (final === suggested) or an override. The entry is
   * prepended optimistically and reconciled with the server record; on
   * failure it is rolled back and a toast is shown. */
  async decide(final: number): Promise<void> {
    const { suggestion, lastInput, projectId } = this.state;
    if (!suggestion || !lastInput || !projectId) return;

    const localKey = ++localKeyCounter;
    const optimistic: HistoryEntry = {
      pending: true,
      localKey,
      record: {
        id: -1,
        project_id: projectId,
        title: lastInput.title,
        description: lastInput.description,
        suggested: suggestion.suggested,
        final,
        accepted: final === suggestion.suggested,
        decided_at: new Date().toISOString(),
      },
    };
    this.update({ history: [optimistic, ...this.state.history], suggestion: null, toast: null });

    try {
      const stored = await this.api.recordDecision(projectId, {
        title: lastInput.title,
        description: lastInput.description,
        suggested: suggestion.suggested,
        final,
      });
      this.update({
        history: this.state.history.map((entry) =>
          entry.localKey === localKey ? { record: stored, pending: false } : entry,
        ),
      });
    } catch (err) {
      this.update({
        history: this.state.history.filter((entry) => entry.localKey !== localKey),
        suggestion,
        toast: `Saving the decision failed: ${err instanceof Error ? err.message : String(err)}`,
      });
    }
  }

  clearToast(): void {
    this.update({ toast: null });
  }
}
