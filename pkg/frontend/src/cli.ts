#!/usr/bin/env node
import * as readline from "node:readline";
import yargs from "yargs";
import { hideBin } from "yargs/helpers";
import { GuiApp } from "./app.js";
import { AuthRejected, DaemonBusy, DaemonConnection, DaemonUnreachable } from "./connection.js";
import { render } from "./terminal.js";
import { readTokenFile } from "./token.js";

async function main(): Promise<number> {
  const argv = await yargs(hideBin(process.argv))
    .scriptName("textguard-gui")
    .usage("$0 --port <gui-port> --token-file <path>")
    .option("port", { type: "number", demandOption: true, describe: "daemon GUI port" })
    .option("host", { type: "string", default: "127.0.0.1" })
    .option("token-file", {
      type: "string",
      demandOption: true,
      describe: "path to the daemon's gui.token file",
    })
    .option("attempts", { type: "number", default: 10, describe: "connect retries" })
    .option("backoff-ms", { type: "number", default: 250 })
    .strict()
    .parse();

  let conn: DaemonConnection;
  try {
    conn = await DaemonConnection.connect({
      host: argv.host,
      port: argv.port,
      token: readTokenFile(argv.tokenFile),
      attempts: argv.attempts,
      backoffMs: argv.backoffMs,
    });
  } catch (err) {
    if (err instanceof AuthRejected || err instanceof DaemonBusy || err instanceof DaemonUnreachable) {
      console.error(`cannot attach to daemon: ${err.message}`);
      return 1;
    }
    throw err;
  }

  const app = new GuiApp(conn);
  const settings = {
    endpoint: `${argv.host}:${argv.port}`,
    tokenFile: argv.tokenFile,
  };

  const repaint = () => {
    console.log(render(app.store.state, settings).join("\n"));
  };
  app.store.subscribe(repaint);
  repaint();

  const rl = readline.createInterface({ input: process.stdin, output: process.stdout });
  rl.setPrompt("> ");
  rl.prompt();

  return new Promise((resolve) => {
    conn.onClose(() => {
      rl.close();
    });
    rl.on("line", (line) => {
      const [command, ...rest] = line.trim().split(/\s+/);
      try {
        switch (command) {
          case "":
            break;
          case "pick": {
            const [contact, mode] = rest;
            if (!contact || (mode !== "v1" && mode !== "v2")) {
              console.log("usage: pick <contact> <v1|v2>");
              break;
            }
            app.pickRecipient(contact, mode);
            break;
          }
          case "finish":
            app.submitCompose();
            break;
          case "cancel":
            app.cancel();
            break;
          case "dismiss":
            app.dismissError(Number(rest[0]));
            break;
          case "clear":
            app.dismissViewer();
            break;
          case "quit":
            app.quit();
            rl.close();
            return;
          default:
            console.log("commands: pick finish cancel dismiss clear quit");
        }
      } catch (err) {
        console.error(`error: ${(err as Error).message}`);
      }
      rl.prompt();
    });
    rl.on("close", () => resolve(0));
  });
}

main().then(
  (code) => process.exit(code),
  (err) => {
    console.error(`fatal: ${(err as Error).message}`);
    process.exit(1);
  },
);
