import type { DaemonConnection } from "./connection.js";
import { UiStore, type EncryptMode } from "./store.js";

export interface FrameStats {
  framesSeen: number;
  maxApplyMs: number; // worst frame-arrival-to-state-updated latency
}

// Ties one daemon connection to one UI store and exposes the user actions.
export class GuiApp {
  readonly store = new UiStore();
  readonly stats: FrameStats = { framesSeen: 0, maxApplyMs: 0 };
  private quitting = false;

  constructor(private readonly conn: DaemonConnection) {
    conn.onFrame((frame, receivedAt) => {
      this.store.applyFrame(frame);
      const elapsed = performance.now() - receivedAt;
      this.stats.framesSeen += 1;
      if (elapsed > this.stats.maxApplyMs) this.stats.maxApplyMs = elapsed;
    });
    conn.onClose(() => {
      if (this.quitting) return;
      this.store.backToIdle();
      this.store.pushError("daemon channel closed");
    });
  }

  // Picker: an existing contact or a freshly typed id (the daemon resolves
  // new ids against its directory and reports failures as error frames).
  pickRecipient(contact: string, mode: EncryptMode): void {
    this.conn.send("recipient_set", { contact, mode });
    this.store.enterSession(contact, mode);
  }

  // During decryption the same frame names the sender to retry against.
  pickSender(contact: string): void {
    this.conn.send("recipient_set", { contact, mode: "v1" });
  }

  // Finish button.  Sends exactly what the window shows unless the caller
  // supplies the text itself; the daemon answers with a close frame.
  submitCompose(text?: string): void {
    this.conn.send("compose_submit", { text: text ?? this.store.state.plaintext });
  }

  // Escape / cancel button: nothing is emitted, the daemon drops the session.
  cancel(): void {
    this.conn.send("close", {});
    this.store.backToIdle();
  }

  dismissError(id: number): void {
    this.store.dismissError(id);
  }

  dismissViewer(): void {
    this.store.dismissViewer();
  }

  quit(): void {
    this.quitting = true;
    this.conn.close();
  }
}
