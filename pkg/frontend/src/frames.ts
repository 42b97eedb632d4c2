import { z } from "zod";

// Wire format shared with the daemon: one JSON object per line, and every
// frame (either direction) carries the per-boot auth token.
export const FRAME_KINDS = [
  "session_start",
  "recipient_set",
  "plaintext_append",
  "plaintext_edit",
  "show_decrypted",
  "compose_submit",
  "close",
  "error",
] as const;

export type FrameKind = (typeof FRAME_KINDS)[number];

export interface GuiFrame {
  kind: FrameKind;
  payload: Record<string, unknown>;
  auth: string;
}

export class FrameError extends Error {}

const frameSchema = z.object({
  kind: z.enum(FRAME_KINDS),
  payload: z.record(z.string(), z.unknown()).default({}),
  auth: z.string().default(""),
});

export function encodeFrame(frame: GuiFrame): string {
  return (
    JSON.stringify({ kind: frame.kind, payload: frame.payload, auth: frame.auth }) + "\n"
  );
}

export function decodeFrame(line: string): GuiFrame {
  let data: unknown;
  try {
    data = JSON.parse(line);
  } catch {
    throw new FrameError(`frame is not valid JSON: ${line.slice(0, 80)}`);
  }
  const parsed = frameSchema.safeParse(data);
  if (!parsed.success) {
    throw new FrameError(`malformed frame: ${parsed.error.issues[0]?.message ?? "bad shape"}`);
  }
  return parsed.data as GuiFrame;
}

// Payload shapes of the frames the daemon sends us.

export const sessionStartPayload = z.object({
  purpose: z.string().default("encrypt"),
  contacts: z.array(z.string()).default([]),
});

export const appendPayload = z.object({ char: z.string() });

export const editPayload = z.object({ op: z.string() });

export const decryptedPayload = z.object({
  kind: z.enum(["displayed", "integrity_warning", "unrecoverable"]),
  sender: z.string().nullish(),
  source: z.string().nullish(),
  text: z.string().optional(),
  reason: z.string().optional(),
});

export const errorPayload = z.object({ message: z.string().default("") });

export type DecryptedEntry = z.infer<typeof decryptedPayload>;
