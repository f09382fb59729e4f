/** Shared plumbing for the HTTP-level tests: ephemeral ports, clean teardown. */
import { Server } from "node:http";

import { boundUrl } from "../src/server.js";

export async function listen(server: Server): Promise<string> {
  await new Promise<void>((resolve, reject) => {
    server.once("error", reject);
    server.listen(0, "127.0.0.1", () => {
      server.removeListener("error", reject);
      resolve();
    });
  });
  return boundUrl(server);
}

export async function stop(server: Server): Promise<void> {
  const closed = new Promise<void>((resolve, reject) =>
    server.close((err) => (err ? reject(err) : resolve())),
  );
  // Kept-alive client connections would otherwise make close() wait forever.
  server.closeAllConnections();
  await closed;
}

export function postJson(url: string, body: unknown): Promise<Response> {
  return fetch(url, {
    method: "POST",
    headers: { "Content-Type": "application/json" },
    body: JSON.stringify(body),
  });
}
