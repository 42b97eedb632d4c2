import { describe, expect, it } from "vitest";
import { render } from "../src/terminal.js";
import { UiStore } from "../src/store.js";

function storeWith(setup: (store: UiStore) => void): UiStore {
  const store = new UiStore();
  setup(store);
  return store;
}

describe("terminal renderer", () => {
  it("shows the picker contacts and the commands hint", () => {
    const store = storeWith((s) =>
      s.applyFrame({ kind: "session_start", payload: { contacts: ["bob", "carol"] }, auth: "" }),
    );
    const lines = render(store.state);
    expect(lines).toContain("  - bob");
    expect(lines).toContain("  - carol");
    expect(lines.some((l) => l.includes("pick <contact> <v1|v2>"))).toBe(true);
  });

  it("titles the mirror with the recipient and shows the live text", () => {
    const store = storeWith((s) => {
      s.enterSession("bob", "v1");
      for (const char of "hello") s.applyFrame({ kind: "plaintext_append", payload: { char }, auth: "" });
    });
    const lines = render(store.state);
    expect(lines[0]).toContain("encrypting to bob");
    expect(lines).toContain("| hello");
  });

  it("renders a multi-line compose draft line by line", () => {
    const store = storeWith((s) => {
      s.enterSession("carol", "v2");
      for (const char of "first\nsecond") {
        s.applyFrame({ kind: "plaintext_append", payload: { char }, auth: "" });
      }
    });
    const lines = render(store.state);
    expect(lines).toContain("| first");
    expect(lines).toContain("| second");
  });

  it("labels decrypted messages with sender and source", () => {
    const store = storeWith((s) =>
      s.applyFrame({
        kind: "show_decrypted",
        payload: { kind: "displayed", sender: "bob", source: "cache", text: "the plan" },
        auth: "",
      }),
    );
    expect(render(store.state)).toContain("from bob via cache: the plan");
  });

  it("styles integrity warnings distinctly and never shows a text body", () => {
    const store = storeWith((s) =>
      s.applyFrame({
        kind: "show_decrypted",
        payload: { kind: "integrity_warning", sender: null, source: null, reason: "mac mismatch" },
        auth: "",
      }),
    );
    const lines = render(store.state);
    const warning = lines.find((l) => l.startsWith("[warning]"));
    expect(warning).toBeDefined();
    expect(warning).toContain("mac mismatch");
  });

  it("renders every pending error with its dismissal id", () => {
    const store = storeWith((s) => {
      s.pushError("first problem");
      s.pushError("second problem");
    });
    const lines = render(store.state);
    expect(lines.filter((l) => l.startsWith("[!]"))).toHaveLength(2);
    expect(lines.some((l) => l.includes("first problem") && l.includes("dismiss 1"))).toBe(true);
  });

  it("appends the read-only settings footer when given", () => {
    const lines = render(new UiStore().state, {
      endpoint: "127.0.0.1:4242",
      tokenFile: "/run/textguard/gui.token",
    });
    const footer = lines[lines.length - 1]!;
    expect(footer).toContain("read-only");
    expect(footer).toContain("127.0.0.1:4242");
  });
});
