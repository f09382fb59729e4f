/** Stub model contracts: shape, determinism, pooling, and model loading. */
import { describe, expect, it } from "vitest";

import { loadModel, StubModel, tokenize } from "../src/model.js";

function sumSq(vec: number[]): number {
  return vec.reduce((acc, x) => acc + x * x, 0);
}

describe("tokenize", () => {
  it("splits on whitespace and appends the end-of-sequence token", () => {
    expect(tokenize("age  >\t30")).toEqual(["age", ">", "30", "</s>"]);
  });

  it("gives the empty text a single end-of-sequence position", () => {
    expect(tokenize("")).toEqual(["</s>"]);
    expect(tokenize("   ")).toEqual(["</s>"]);
  });
});

describe("StubModel", () => {
  it("rejects non-positive or fractional dimensions", () => {
    expect(() => new StubModel(0)).toThrow(RangeError);
    expect(() => new StubModel(-3)).toThrow(RangeError);
    expect(() => new StubModel(2.5)).toThrow(RangeError);
  });

  it("names itself after its dimension", () => {
    expect(new StubModel().name).toBe("stub-64");
    expect(new StubModel(12).name).toBe("stub-12");
    expect(new StubModel().dim).toBe(64);
  });

  it("produces one unit-norm vector of length dim per text", async () => {
    const model = new StubModel(24);
    const vectors = await model.embed(["age", "salary > 100", ""]);
    expect(vectors).toHaveLength(3);
    for (const vec of vectors) {
      expect(vec).toHaveLength(24);
      expect(vec.every(Number.isFinite)).toBe(true);
      expect(sumSq(vec)).toBeCloseTo(1.0, 12);
    }
  });

  it("is deterministic across calls and instances", async () => {
    const a = await new StubModel(16).embed(["select name from emp"]);
    const b = await new StubModel(16).embed(["select name from emp"]);
    expect(a).toEqual(b);
  });

  it("gives distinct texts distinct vectors", () => {
    const model = new StubModel(32);
    const texts = ["age", "salary", "age > 30", "age > 31", "Column age"];
    const vectors = texts.map((t) => model.embedOne(t));
    for (let i = 0; i < vectors.length; i++) {
      for (let j = i + 1; j < vectors.length; j++) {
        expect(vectors[i]).not.toEqual(vectors[j]);
      }
    }
  });

  it("is sensitive to a prepended context prefix", () => {
    const model = new StubModel(16);
    expect(model.embedOne("emp(id, age)\nage")).not.toEqual(model.embedOne("age"));
  });

  it("builds hidden states causally: shared prefixes share states", () => {
    const model = new StubModel(8);
    const left = model.states("alpha beta gamma");
    const right = model.states("alpha beta delta");
    expect(left).toHaveLength(4); // three tokens plus EOS
    expect(left[0]).toEqual(right[0]);
    expect(left[1]).toEqual(right[1]);
    expect(left[2]).not.toEqual(right[2]);
    expect(left[3]).not.toEqual(right[3]);
  });

  it("distinguishes eos pooling from mean pooling on multi-token text", () => {
    const eos = new StubModel(16, "eos").embedOne("several words here");
    const mean = new StubModel(16, "mean").embedOne("several words here");
    expect(eos).not.toEqual(mean);
  });

  it("makes the poolings agree on a single-position sequence", () => {
    // The empty text has only the EOS position, so there is nothing to average.
    expect(new StubModel(16, "eos").embedOne("")).toEqual(
      new StubModel(16, "mean").embedOne(""),
    );
  });
});

describe("loadModel", () => {
  it("builds the default stub", async () => {
    const model = await loadModel("stub");
    expect(model).toBeInstanceOf(StubModel);
    expect(model.dim).toBe(64);
    expect((model as StubModel).pooling).toBe("eos");
  });

  it("honors an explicit dimension and pooling", async () => {
    const model = (await loadModel("stub:12", "mean")) as StubModel;
    expect(model.dim).toBe(12);
    expect(model.pooling).toBe("mean");
  });

  it("explains how to enable pretrained models when the backend is absent", async () => {
    await expect(loadModel("org/some-model")).rejects.toThrow(
      /@huggingface\/transformers/,
    );
  });
});
