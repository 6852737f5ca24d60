/**
 * Key-to-action mapping.  Learned actions carry no names, only indices in
 * [0, K), so maps are plain records and every entry is validated against the
 * active session's action count before use.
 */

export type KeyMap = Record<string, number>;

export const DEFAULT_KEYMAP: KeyMap = {
  ArrowLeft: 0,
  ArrowRight: 1,
  ArrowUp: 2,
  ArrowDown: 3,
  Space: 4,
  " ": 4,
};

export class KeymapError extends Error {}

/** Throws when a mapping points outside the session's action space. */
export function validateKeymap(keymap: KeyMap, numActions: number): KeyMap {
  for (const [key, action] of Object.entries(keymap)) {
    if (!Number.isInteger(action) || action < 0 || action >= numActions) {
      throw new KeymapError(
        `key "${key}" maps to action ${action}, outside [0, ${numActions})`,
      );
    }
  }
  return keymap;
}

/** Restrict the default map to the first K actions. */
export function defaultKeymapFor(numActions: number): KeyMap {
  const map: KeyMap = {};
  for (const [key, action] of Object.entries(DEFAULT_KEYMAP)) {
    if (action < numActions) map[key] = action;
  }
  return map;
}

/** Deterministic lookup; unmapped keys yield null and no request is sent. */
export function mapKey(key: string, keymap: KeyMap): number | null {
  return Object.prototype.hasOwnProperty.call(keymap, key) ? keymap[key] : null;
}
