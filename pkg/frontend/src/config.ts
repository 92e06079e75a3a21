import { GENERATED_API_BASE } from "./config.generated.js";

/** API base URL: injected at build time, with a window-level escape hatch
 * for serving the same bundle against another host. */
export function apiBase(): string {
  const runtime = (globalThis as { SPRAG_API_BASE?: string }).SPRAG_API_BASE;
  return runtime ?? GENERATED_API_BASE;
}
