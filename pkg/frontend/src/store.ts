import {
  appendPayload,
  decryptedPayload,
  editPayload,
  errorPayload,
  sessionStartPayload,
  type DecryptedEntry,
  type GuiFrame,
} from "./frames.js";

export type EncryptMode = "v1" | "v2";

export type Screen =
  | { name: "idle" }
  | { name: "picker"; contacts: string[] }
  | { name: "mirror"; recipient: string } // v1: live view of what is being typed
  | { name: "compose"; recipient: string }; // v2: draft shown until Finish

export interface UiError {
  id: number;
  message: string;
}

export interface UiState {
  screen: Screen;
  plaintext: string; // daemon-fed mirror of the session's plaintext
  viewer: DecryptedEntry[]; // decrypted messages awaiting dismissal
  errors: UiError[];
  title: string;
}

export const BASE_TITLE = "textguard";

function initialState(): UiState {
  return { screen: { name: "idle" }, plaintext: "", viewer: [], errors: [], title: BASE_TITLE };
}

// Pure model of everything the window shows.  Frames from the daemon and
// local user actions both funnel through here; rendering is elsewhere.
// Plaintext lives only in this object and leaves it solely through
// GuiApp.submitCompose, back down the authenticated daemon channel.
export class UiStore {
  state: UiState = initialState();
  private nextErrorId = 1;
  private listeners: Array<() => void> = [];

  subscribe(listener: () => void): void {
    this.listeners.push(listener);
  }

  private changed(): void {
    for (const listener of this.listeners) listener();
  }

  applyFrame(frame: GuiFrame): void {
    switch (frame.kind) {
      case "session_start": {
        const parsed = sessionStartPayload.safeParse(frame.payload);
        const contacts = parsed.success ? parsed.data.contacts : [];
        this.state.screen = { name: "picker", contacts };
        this.state.plaintext = "";
        this.state.title = BASE_TITLE;
        break;
      }
      case "plaintext_append": {
        const parsed = appendPayload.safeParse(frame.payload);
        if (!parsed.success) {
          this.pushError("daemon sent a malformed plaintext_append frame");
          break;
        }
        this.state.plaintext += parsed.data.char;
        break;
      }
      case "plaintext_edit": {
        const parsed = editPayload.safeParse(frame.payload);
        if (parsed.success && parsed.data.op === "backspace") {
          const chars = Array.from(this.state.plaintext);
          chars.pop();
          this.state.plaintext = chars.join("");
        }
        break;
      }
      case "show_decrypted": {
        const parsed = decryptedPayload.safeParse(frame.payload);
        if (!parsed.success) {
          this.pushError("daemon sent a malformed show_decrypted frame");
          break;
        }
        this.state.viewer.push(parsed.data);
        break;
      }
      case "close": {
        this.state.screen = { name: "idle" };
        this.state.plaintext = "";
        this.state.title = BASE_TITLE;
        break;
      }
      case "error": {
        const parsed = errorPayload.safeParse(frame.payload);
        this.pushError(parsed.success ? parsed.data.message : "daemon error");
        break;
      }
      default:
        // recipient_set / compose_submit travel the other way; ignore echoes.
        break;
    }
    this.changed();
  }

  enterSession(recipient: string, mode: EncryptMode): void {
    this.state.screen =
      mode === "v1" ? { name: "mirror", recipient } : { name: "compose", recipient };
    this.state.plaintext = "";
    this.state.title = `${BASE_TITLE} — encrypting to ${recipient}`;
    this.changed();
  }

  backToIdle(): void {
    this.state.screen = { name: "idle" };
    this.state.plaintext = "";
    this.state.title = BASE_TITLE;
    this.changed();
  }

  pushError(message: string): void {
    this.state.errors.push({ id: this.nextErrorId++, message });
    this.changed();
  }

  dismissError(id: number): void {
    this.state.errors = this.state.errors.filter((entry) => entry.id !== id);
    this.changed();
  }

  dismissViewer(): void {
    this.state.viewer = [];
    this.changed();
  }
}
