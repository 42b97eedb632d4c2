import { afterEach, describe, expect, it } from "vitest";
import { GuiApp } from "../src/app.js";
import { DaemonConnection } from "../src/connection.js";
import { MockDaemon, waitFor } from "./mock_daemon.js";

const TOKEN = "apptesttoken";

async function attach(): Promise<{ daemon: MockDaemon; app: GuiApp }> {
  const daemon = await MockDaemon.start(TOKEN);
  const conn = await DaemonConnection.connect({ port: daemon.port, token: TOKEN });
  return { daemon, app: new GuiApp(conn) };
}

describe("GuiApp", () => {
  let daemon: MockDaemon;
  let app: GuiApp;

  afterEach(async () => {
    app?.quit();
    await daemon?.stop();
  });

  it("runs a v1 session: picker, recipient, live mirror", async () => {
    ({ daemon, app } = await attach());

    daemon.send("session_start", { purpose: "encrypt", contacts: ["bob", "carol"] });
    await waitFor(() => app.store.state.screen.name === "picker");

    app.pickRecipient("bob", "v1");
    const [picked] = await daemon.waitForFrames(1);
    expect(picked!.kind).toBe("recipient_set");
    expect(picked!.payload).toEqual({ contact: "bob", mode: "v1" });
    expect(app.store.state.title).toContain("bob");

    const text = "meet at the usual place";
    for (const char of text) daemon.send("plaintext_append", { char });
    daemon.send("plaintext_edit", { op: "backspace" });
    await waitFor(() => app.store.state.plaintext === text.slice(0, -1));

    daemon.send("close");
    await waitFor(() => app.store.state.screen.name === "idle");
    expect(app.store.state.plaintext).toBe("");
  });

  it("keeps up with a burst of mirror frames well inside 100ms each", async () => {
    ({ daemon, app } = await attach());
    app.pickRecipient("bob", "v1");

    const count = 400;
    for (let i = 0; i < count; i++) {
      daemon.send("plaintext_append", { char: String.fromCharCode(97 + (i % 26)) });
    }
    await waitFor(() => app.store.state.plaintext.length === count);

    expect(app.stats.framesSeen).toBeGreaterThanOrEqual(count);
    expect(app.stats.maxApplyMs).toBeLessThan(100);
  });

  it("runs a v2 compose: draft mirrors frames, finish submits it verbatim", async () => {
    ({ daemon, app } = await attach());

    daemon.send("session_start", { purpose: "encrypt", contacts: ["carol"] });
    await waitFor(() => app.store.state.screen.name === "picker");
    app.pickRecipient("carol", "v2");
    expect(app.store.state.screen).toEqual({ name: "compose", recipient: "carol" });

    const draft = "first line\nsecond line";
    for (const char of draft) daemon.send("plaintext_append", { char });
    await waitFor(() => app.store.state.plaintext === draft);

    app.submitCompose();
    const frames = await daemon.waitForFrames(2); // recipient_set, compose_submit
    expect(frames[1]!.kind).toBe("compose_submit");
    expect(frames[1]!.payload).toEqual({ text: draft });

    daemon.send("close");
    await waitFor(() => app.store.state.screen.name === "idle");
  });

  it("escape cancels a compose without emitting anything", async () => {
    ({ daemon, app } = await attach());
    daemon.send("session_start", { purpose: "encrypt", contacts: ["carol"] });
    await waitFor(() => app.store.state.screen.name === "picker");
    app.pickRecipient("carol", "v2");
    for (const char of "draft never sent") daemon.send("plaintext_append", { char });
    await waitFor(() => app.store.state.plaintext.length > 0);

    app.cancel();
    await daemon.waitForFrames(2); // recipient_set, close
    const kinds = daemon.received.map((f) => f.kind);
    expect(kinds).toContain("close");
    expect(kinds).not.toContain("compose_submit");
    expect(app.store.state.screen.name).toBe("idle");
    expect(app.store.state.plaintext).toBe("");
  });

  it("cancelling from the picker sends close", async () => {
    ({ daemon, app } = await attach());
    daemon.send("session_start", { purpose: "encrypt", contacts: [] });
    await waitFor(() => app.store.state.screen.name === "picker");
    app.cancel();
    const [frame] = await daemon.waitForFrames(1);
    expect(frame!.kind).toBe("close");
  });

  it("shows decrypted messages until the viewer is dismissed", async () => {
    ({ daemon, app } = await attach());
    daemon.send("show_decrypted", {
      kind: "displayed",
      sender: "bob",
      source: "session",
      text: "the answer is 42",
    });
    daemon.send("show_decrypted", {
      kind: "integrity_warning",
      sender: null,
      source: null,
      reason: "token failed authentication against every session",
    });
    await waitFor(() => app.store.state.viewer.length === 2);
    expect(app.store.state.viewer[0]!.sender).toBe("bob");
    app.dismissViewer();
    expect(app.store.state.viewer).toEqual([]);
  });

  it("daemon errors surface as dismissible banners", async () => {
    ({ daemon, app } = await attach());
    daemon.send("error", { message: "cannot start encryption: device is grabbed" });
    await waitFor(() => app.store.state.errors.length === 1);
    const id = app.store.state.errors[0]!.id;
    expect(app.store.state.errors[0]!.message).toContain("device is grabbed");
    app.dismissError(id);
    expect(app.store.state.errors).toEqual([]);
  });

  it("an unexpected channel drop becomes a visible error", async () => {
    ({ daemon, app } = await attach());
    daemon.dropClient();
    await waitFor(() => app.store.state.errors.length === 1);
    expect(app.store.state.errors[0]!.message).toContain("daemon channel closed");
  });

  it("a deliberate quit closes quietly", async () => {
    ({ daemon, app } = await attach());
    app.quit();
    await waitFor(() => !daemon.hasClient);
    expect(app.store.state.errors).toEqual([]);
  });
});
