/** HTTP behavior: routing, validation, readiness states, and concurrency. */
import { Server } from "node:http";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { EmbeddingModel, StubModel } from "../src/model.js";
import { boundUrl, createService, serve } from "../src/server.js";
import { listen, postJson, stop } from "./helpers.js";

const sleep = (ms: number) => new Promise((resolve) => setTimeout(resolve, ms));

describe("routing and happy path", () => {
  const model = new StubModel(8);
  let server: Server;
  let url: string;

  beforeAll(async () => {
    server = createService(model);
    url = await listen(server);
  });
  afterAll(() => stop(server));

  it("answers the health check with the declared dimension and model", async () => {
    const res = await fetch(`${url}/health`);
    expect(res.status).toBe(200);
    expect(await res.json()).toEqual({ dim: 8, model: "stub-8" });
  });

  it("returns one vector per text, each of the declared dimension", async () => {
    const res = await postJson(`${url}/embed`, {
      context: "emp(id, name, age)",
      texts: ["age", "salary", "age"],
    });
    expect(res.status).toBe(200);
    const body = await res.json();
    expect(body.dim).toBe(8);
    expect(body.vectors).toHaveLength(3);
    for (const vec of body.vectors) {
      expect(vec).toHaveLength(8);
      expect(vec.every(Number.isFinite)).toBe(true);
    }
    expect(body.vectors[0]).toEqual(body.vectors[2]);
    expect(body.vectors[0]).not.toEqual(body.vectors[1]);
  });

  it("prepends the context to each text before inference", async () => {
    const res = await postJson(`${url}/embed`, { context: "ctx", texts: ["age"] });
    const body = await res.json();
    expect(body.vectors[0]).toEqual(model.embedOne("ctx\nage"));
  });

  it("embeds the bare text when the context is empty", async () => {
    const res = await postJson(`${url}/embed`, { context: "", texts: ["age"] });
    const body = await res.json();
    expect(body.vectors[0]).toEqual(model.embedOne("age"));
  });

  it("answers an empty batch with an empty vector list", async () => {
    const res = await postJson(`${url}/embed`, { context: "ctx", texts: [] });
    expect(res.status).toBe(200);
    expect(await res.json()).toEqual({ dim: 8, vectors: [] });
  });

  it("404s everything that is not GET /health or POST /embed", async () => {
    for (const request of [
      fetch(`${url}/`),
      fetch(`${url}/embed`),
      fetch(`${url}/health/`),
      fetch(`${url}/health`, { method: "POST" }),
      postJson(`${url}/nope`, {}),
    ]) {
      const res = await request;
      expect(res.status).toBe(404);
      expect(await res.json()).toEqual({ error: "not found" });
    }
  });

  it("ignores a query string when matching the path", async () => {
    const res = await fetch(`${url}/health?verbose=1`);
    expect(res.status).toBe(200);
  });
});

describe("malformed requests", () => {
  let server: Server;
  let url: string;

  beforeAll(async () => {
    server = createService(new StubModel(4));
    url = await listen(server);
  });
  afterAll(() => stop(server));

  async function expectBadRequest(body: string, messagePart: string) {
    const res = await fetch(`${url}/embed`, { method: "POST", body });
    expect(res.status).toBe(400);
    const payload = await res.json();
    expect(payload.error).toContain(messagePart);
  }

  it("rejects bodies that are not JSON", () =>
    expectBadRequest("{nope", "not valid JSON"));

  it("rejects JSON bodies that are not objects", () =>
    expectBadRequest("[1, 2]", "JSON object"));

  it("rejects a missing or non-string context", async () => {
    await expectBadRequest(JSON.stringify({ texts: ["age"] }), "context");
    await expectBadRequest(JSON.stringify({ context: 7, texts: ["age"] }), "context");
  });

  it("rejects missing, non-array, or mixed-type texts", async () => {
    await expectBadRequest(JSON.stringify({ context: "c" }), "texts");
    await expectBadRequest(JSON.stringify({ context: "c", texts: "age" }), "texts");
    await expectBadRequest(
      JSON.stringify({ context: "c", texts: ["age", 3] }),
      "texts[1]",
    );
  });
});

describe("request size cap", () => {
  it("answers 413 when the body exceeds the configured limit", async () => {
    const server = createService(new StubModel(4), { maxBodyBytes: 64 });
    const url = await listen(server);
    try {
      const res = await postJson(`${url}/embed`, {
        context: "x".repeat(200),
        texts: ["age"],
      });
      expect(res.status).toBe(413);
      expect((await res.json()).error).toContain("64");
    } finally {
      await stop(server);
    }
  });
});

describe("readiness", () => {
  it("answers 503 on both endpoints while the model is loading", async () => {
    const server = createService(new Promise<EmbeddingModel>(() => {}));
    const url = await listen(server);
    try {
      const health = await fetch(`${url}/health`);
      expect(health.status).toBe(503);
      expect((await health.json()).error).toBe("model not ready");
      const embed = await postJson(`${url}/embed`, { context: "", texts: ["age"] });
      expect(embed.status).toBe(503);
    } finally {
      await stop(server);
    }
  });

  it("keeps answering 503 with the cause when the model failed to load", async () => {
    const server = createService(Promise.reject(new Error("weights missing")));
    const url = await listen(server);
    try {
      await sleep(1); // let the rejection settle
      const res = await fetch(`${url}/health`);
      expect(res.status).toBe(503);
      expect((await res.json()).error).toContain("weights missing");
    } finally {
      await stop(server);
    }
  });
});

describe("model misbehavior", () => {
  async function expectServerError(model: EmbeddingModel, messagePart: string) {
    const server = createService(model);
    const url = await listen(server);
    try {
      const res = await postJson(`${url}/embed`, { context: "", texts: ["age"] });
      expect(res.status).toBe(500);
      expect((await res.json()).error).toContain(messagePart);
    } finally {
      await stop(server);
    }
  }

  it("rejects vectors of the wrong length instead of forwarding them", () =>
    expectServerError(
      { name: "broken", dim: 3, embed: async (texts) => texts.map(() => [1, 2]) },
      "malformed vectors",
    ));

  it("rejects non-finite vector entries instead of forwarding them", () =>
    expectServerError(
      { name: "broken", dim: 2, embed: async (texts) => texts.map(() => [NaN, 1]) },
      "malformed vectors",
    ));

  it("surfaces inference failures as a 500 with the message", () =>
    expectServerError(
      {
        name: "broken",
        dim: 2,
        embed: async () => {
          throw new Error("kaput");
        },
      },
      "kaput",
    ));
});

describe("concurrency", () => {
  it("serves parallel identical requests consistently", async () => {
    const server = createService(new StubModel(8));
    const url = await listen(server);
    try {
      const responses = await Promise.all(
        Array.from({ length: 16 }, () =>
          postJson(`${url}/embed`, { context: "ctx", texts: ["age", "salary"] }),
        ),
      );
      const bodies = await Promise.all(responses.map((r) => r.text()));
      for (const res of responses) expect(res.status).toBe(200);
      for (const body of bodies.slice(1)) expect(body).toBe(bodies[0]);
    } finally {
      await stop(server);
    }
  });

  it("never overlaps model inference calls", async () => {
    let inFlight = 0;
    let overlapped = false;
    const slowModel: EmbeddingModel = {
      name: "slow",
      dim: 2,
      async embed(texts) {
        inFlight += 1;
        if (inFlight > 1) overlapped = true;
        await sleep(5);
        inFlight -= 1;
        return texts.map(() => [1, 0]);
      },
    };
    const server = createService(slowModel);
    const url = await listen(server);
    try {
      const responses = await Promise.all(
        Array.from({ length: 8 }, () =>
          postJson(`${url}/embed`, { context: "", texts: ["x"] }),
        ),
      );
      for (const res of responses) expect(res.status).toBe(200);
      expect(overlapped).toBe(false);
    } finally {
      await stop(server);
    }
  });
});

describe("serve", () => {
  it("binds the port, loads the model, and logs both milestones", async () => {
    const lines: string[] = [];
    const server = await serve("stub:6", 0, {
      host: "127.0.0.1",
      log: (line) => lines.push(line),
    });
    try {
      const url = boundUrl(server);
      let health: Response = await fetch(`${url}/health`);
      for (let i = 0; i < 200 && health.status === 503; i++) {
        await sleep(5);
        health = await fetch(`${url}/health`);
      }
      expect(health.status).toBe(200);
      expect(await health.json()).toEqual({ dim: 6, model: "stub-6" });
      expect(lines.some((l) => l.includes("listening on http://127.0.0.1:"))).toBe(true);
      expect(lines).toContain("model ready: stub-6 (dim=6)");
    } finally {
      await stop(server);
    }
  });

  it("refuses to report a URL before listening", () => {
    const server = createService(new StubModel(4));
    expect(() => boundUrl(server)).toThrow("not listening");
  });
});
