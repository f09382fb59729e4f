/**
 * The HTTP face of the service: GET /health and POST /embed.
 *
 * /embed takes {context, texts} and answers {dim, vectors} with one vector
 * per text, computed after prepending the context to each text so the same
 * text embeds differently under different contexts. Requests are accepted
 * concurrently but model inference runs serialized, so callers may not
 * assume anything about ordering across requests.
 *
 * The server starts answering before the model finishes loading: both
 * endpoints return 503 until the model is ready, and keep returning 503
 * (with the load error) if loading failed, which lets health checks report
 * the problem instead of the process dying silently.
 */
import { createServer, IncomingMessage, Server, ServerResponse } from "node:http";

import { EmbeddingModel, loadModel, Pooling } from "./model.js";

const DEFAULT_MAX_BODY_BYTES = 8 * 1024 * 1024;

/** Inserted between the context and each text before inference. */
export const CONTEXT_SEPARATOR = "\n";

export interface ServiceOptions {
  maxBodyBytes?: number;
}

export interface ServeOptions extends ServiceOptions {
  host?: string;
  pooling?: Pooling;
  log?: (line: string) => void;
}

interface EmbedRequest {
  context: string;
  texts: string[];
}

class PayloadTooLarge extends Error {}

function errorMessage(err: unknown): string {
  return err instanceof Error ? err.message : String(err);
}

function sendJson(res: ServerResponse, status: number, body: unknown): void {
  const payload = JSON.stringify(body);
  res.writeHead(status, {
    "Content-Type": "application/json",
    "Content-Length": Buffer.byteLength(payload),
  });
  res.end(payload);
}

async function readBody(req: IncomingMessage, maxBytes: number): Promise<Buffer> {
  const chunks: Buffer[] = [];
  let total = 0;
  for await (const chunk of req) {
    total += (chunk as Buffer).length;
    if (total > maxBytes) {
      throw new PayloadTooLarge(`request body exceeds ${maxBytes} bytes`);
    }
    chunks.push(chunk as Buffer);
  }
  return Buffer.concat(chunks);
}

function parseEmbedRequest(raw: Buffer): { value: EmbedRequest } | { invalid: string } {
  let body: unknown;
  try {
    body = JSON.parse(raw.toString("utf8"));
  } catch {
    return { invalid: "body is not valid JSON" };
  }
  if (typeof body !== "object" || body === null || Array.isArray(body)) {
    return { invalid: "body must be a JSON object" };
  }
  const { context, texts } = body as Record<string, unknown>;
  if (typeof context !== "string") {
    return { invalid: "'context' must be a string" };
  }
  if (!Array.isArray(texts)) {
    return { invalid: "'texts' must be an array of strings" };
  }
  for (let i = 0; i < texts.length; i++) {
    if (typeof texts[i] !== "string") {
      return { invalid: `'texts[${i}]' must be a string` };
    }
  }
  return { value: { context, texts: texts as string[] } };
}

/**
 * Build the HTTP server around a model (or a promise of one).
 *
 * The model promise may still be pending or may reject; the server reports
 * 503 in both cases rather than crashing, so it can be brought up before a
 * slow model load completes.
 */
export function createService(
  model: EmbeddingModel | Promise<EmbeddingModel>,
  options: ServiceOptions = {},
): Server {
  const maxBodyBytes = options.maxBodyBytes ?? DEFAULT_MAX_BODY_BYTES;
  let ready: EmbeddingModel | undefined;
  let loadError: string | undefined;
  Promise.resolve(model).then(
    (m) => {
      ready = m;
    },
    (err) => {
      loadError = `model failed to load: ${errorMessage(err)}`;
    },
  );

  // Inference queue: requests stay concurrent, model calls do not overlap.
  let inference: Promise<unknown> = Promise.resolve();
  function serialized<T>(run: () => Promise<T>): Promise<T> {
    const next = inference.then(run, run);
    inference = next.catch(() => undefined);
    return next;
  }

  async function handleEmbed(req: IncomingMessage, res: ServerResponse, m: EmbeddingModel) {
    let raw: Buffer;
    try {
      raw = await readBody(req, maxBodyBytes);
    } catch (err) {
      if (err instanceof PayloadTooLarge) {
        sendJson(res, 413, { error: err.message });
        return;
      }
      throw err;
    }
    const parsed = parseEmbedRequest(raw);
    if ("invalid" in parsed) {
      sendJson(res, 400, { error: parsed.invalid });
      return;
    }
    const { context, texts } = parsed.value;
    const inputs = texts.map((t) => (context.length > 0 ? context + CONTEXT_SEPARATOR + t : t));
    const vectors = await serialized(() => Promise.resolve(m.embed(inputs)));
    const wellFormed =
      vectors.length === inputs.length &&
      vectors.every((v) => v.length === m.dim && v.every(Number.isFinite));
    if (!wellFormed) {
      sendJson(res, 500, { error: "model produced malformed vectors" });
      return;
    }
    sendJson(res, 200, { dim: m.dim, vectors });
  }

  async function handle(req: IncomingMessage, res: ServerResponse) {
    const path = new URL(req.url ?? "", "http://localhost").pathname;
    if (req.method === "GET" && path === "/health") {
      if (ready === undefined) {
        sendJson(res, 503, { error: loadError ?? "model not ready" });
      } else {
        sendJson(res, 200, { dim: ready.dim, model: ready.name });
      }
      return;
    }
    if (req.method === "POST" && path === "/embed") {
      if (ready === undefined) {
        sendJson(res, 503, { error: loadError ?? "model not ready" });
        return;
      }
      await handleEmbed(req, res, ready);
      return;
    }
    sendJson(res, 404, { error: "not found" });
  }

  return createServer((req, res) => {
    handle(req, res).catch((err) => {
      if (!res.headersSent) {
        sendJson(res, 500, { error: errorMessage(err) });
      } else {
        res.destroy();
      }
    });
  });
}

/** URL of a listening server; handy for tests and startup logs. */
export function boundUrl(server: Server): string {
  const addr = server.address();
  if (addr === null || typeof addr === "string") {
    throw new Error("server is not listening on a TCP port");
  }
  const host = addr.family === "IPv6" ? `[${addr.address}]` : addr.address;
  return `http://${host}:${addr.port}`;
}

/**
 * Load a model by spec and serve it; resolves once the port is bound.
 *
 * The model keeps loading in the background — the service answers 503 until
 * it is ready, then switches to real responses.
 */
export async function serve(modelSpec: string, port: number, options: ServeOptions = {}): Promise<Server> {
  const log = options.log ?? (() => {});
  const model = loadModel(modelSpec, options.pooling ?? "eos");
  model.then(
    (m) => log(`model ready: ${m.name} (dim=${m.dim})`),
    (err) => log(`model failed to load: ${errorMessage(err)}`),
  );
  const server = createService(model, { maxBodyBytes: options.maxBodyBytes });
  await new Promise<void>((resolve, reject) => {
    server.once("error", reject);
    server.listen(port, options.host ?? "127.0.0.1", () => {
      server.removeListener("error", reject);
      resolve();
    });
  });
  log(`listening on ${boundUrl(server)}`);
  return server;
}
