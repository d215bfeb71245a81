import type { Decision } from "./types.js";

export const KEY_BINDINGS: Record<string, Decision> = {
  t: "confirm_tb",
  h: "confirm_healthy",
  u: "uncertain",
};

/** Map a keydown to a verdict decision; returns null for unbound keys or
 * while the focus is in a text input. */
export function decisionForKey(key: string, targetTag?: string): Decision | null {
  if (targetTag && ["input", "textarea", "select"].includes(targetTag.toLowerCase())) {
    return null;
  }
  return KEY_BINDINGS[key.toLowerCase()] ?? null;
}
