import type { UiState } from "./store.js";

export interface DisplaySettings {
  endpoint: string; // host:port of the daemon's GUI channel
  tokenFile: string;
}

// Renders the whole window as lines of text.  Pure: no I/O, no state.
export function render(state: UiState, settings?: DisplaySettings): string[] {
  const lines: string[] = [];
  lines.push(`== ${state.title} ==`);

  for (const error of state.errors) {
    lines.push(`[!] ${error.message}  (dismiss ${error.id})`);
  }

  switch (state.screen.name) {
    case "idle":
      lines.push("idle — waiting for the daemon");
      break;
    case "picker":
      lines.push("pick a recipient (or type a new contact id):");
      for (const contact of state.screen.contacts) {
        lines.push(`  - ${contact}`);
      }
      lines.push("commands: pick <contact> <v1|v2>   cancel");
      break;
    case "mirror":
      lines.push(`streaming to ${state.screen.recipient} — every keystroke is encrypted`);
      lines.push(`| ${state.plaintext}`);
      break;
    case "compose":
      lines.push(`composing to ${state.screen.recipient} (finish sends, cancel discards)`);
      for (const draftLine of state.plaintext.split("\n")) {
        lines.push(`| ${draftLine}`);
      }
      break;
  }

  if (state.viewer.length > 0) {
    lines.push("--- decrypted ---");
    for (const entry of state.viewer) {
      if (entry.kind === "displayed") {
        const from = entry.sender ?? "unknown sender";
        const via = entry.source ? ` via ${entry.source}` : "";
        lines.push(`from ${from}${via}: ${entry.text ?? ""}`);
      } else if (entry.kind === "integrity_warning") {
        lines.push(`[warning] token failed verification: ${entry.reason ?? "unknown reason"}`);
      } else {
        lines.push(`[unrecoverable] ${entry.reason ?? "unknown reason"}`);
      }
    }
    lines.push("(clear to dismiss)");
  }

  if (settings) {
    lines.push(`settings (read-only): daemon ${settings.endpoint}, token ${settings.tokenFile}`);
  }

  return lines;
}
