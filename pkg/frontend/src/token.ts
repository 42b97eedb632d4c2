import { readFileSync } from "node:fs";

// The daemon writes its auth token to <store>/gui.token at boot and removes
// it on shutdown.  Reading it is the only file access this client performs.
export function readTokenFile(path: string): string {
  let raw: string;
  try {
    raw = readFileSync(path, "utf-8");
  } catch (err) {
    throw new Error(`cannot read daemon token at ${path}: ${(err as Error).message}`);
  }
  const token = raw.trim();
  if (token === "") {
    throw new Error(`daemon token file ${path} is empty`);
  }
  return token;
}
