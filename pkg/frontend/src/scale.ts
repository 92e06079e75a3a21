/** The story-point card deck. The override control renders exactly these
 * values; the UI never invents or computes story points itself. */
export const ALLOWED_SCALE: readonly number[] = [0, 0.5, 1, 2, 3, 5, 8, 13, 21, 34, 55, 89];

export function formatSp(value: number): string {
  return String(value);
}

export function isOnScale(value: number): boolean {
  return ALLOWED_SCALE.includes(value);
}
