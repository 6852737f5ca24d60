import { PlayLoop, FrameSink, LoopStatus } from "./app";
import { PlayClient } from "./client";
import { defaultKeymapFor } from "./keymap";

/** Browser bootstrap: checkpoint picker, viewer, keymap buttons, status bar. */

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Record<string, string> = {},
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [k, v] of Object.entries(attrs)) node.setAttribute(k, v);
  if (text) node.textContent = text;
  return node;
}

class ImageSink implements FrameSink {
  constructor(private readonly img: HTMLImageElement) {}
  showFrame(frame: string): void {
    this.img.src = `data:image/png;base64,${frame}`;
  }
}

async function start(): Promise<void> {
  const root = document.getElementById("app");
  if (!root) throw new Error("missing #app container");
  const client = new PlayClient("");

  const checkpoints = await client.listCheckpoints();
  if (checkpoints.length === 0) {
    root.appendChild(el("p", {}, "No checkpoints available on the server."));
    return;
  }

  const picker = el("select");
  for (const c of checkpoints) {
    picker.appendChild(el("option", { value: c.id }, `${c.id} (K=${c.num_actions})`));
  }
  const startBtn = el("button", {}, "New session");
  const viewer = el("img", { id: "viewer", width: "256", height: "256", alt: "frame" });
  viewer.style.imageRendering = "pixelated";
  const statusBar = el("div", { id: "status" });
  const buttons = el("div", { id: "actions" });
  const autoLabel = el("label", {}, " auto-repeat last action");
  const autoBox = el("input", { type: "checkbox" });
  autoLabel.prepend(autoBox);
  const retryBtn = el("button", { hidden: "hidden" }, "Retry");

  root.append(picker, startBtn, el("br"), viewer, el("br"), buttons, autoLabel, retryBtn, statusBar);

  let loop: PlayLoop | null = null;

  function renderStatus(status: LoopStatus): void {
    const latency = status.latencyMs === null ? "-" : `${status.latencyMs.toFixed(0)}ms`;
    statusBar.textContent =
      `step ${status.step} | queued ${status.pendingDepth} | latency ${latency}` +
      (status.error ? ` | error: ${status.error}` : "");
    retryBtn.hidden = status.error === null;
  }

  startBtn.addEventListener("click", async () => {
    loop?.dispose();
    const session = await client.createSession(picker.value);
    const keymap = defaultKeymapFor(session.num_actions);
    loop = new PlayLoop(client, session, keymap, new ImageSink(viewer), {
      onStatus: renderStatus,
    });
    loop.attach(window);

    buttons.replaceChildren();
    const byAction = new Map<number, string[]>();
    for (const [key, action] of Object.entries(keymap)) {
      if (key === " ") continue;
      byAction.set(action, [...(byAction.get(action) ?? []), key]);
    }
    for (let a = 0; a < session.num_actions; a++) {
      const keys = byAction.get(a)?.join("/") ?? "";
      const btn = el("button", {}, `action ${a}${keys ? ` (${keys})` : ""}`);
      btn.addEventListener("click", () => loop?.pressAction(a));
      buttons.appendChild(btn);
    }
    autoBox.checked = false;
    renderStatus(loop.status());
  });

  autoBox.addEventListener("change", () => loop?.setAutoStep(autoBox.checked));
  retryBtn.addEventListener("click", () => loop?.retry());
}

start().catch((err) => {
  const root = document.getElementById("app");
  if (root) root.appendChild(el("p", {}, `startup failed: ${err}`));
});
