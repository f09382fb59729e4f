/**
 * Embedding models behind a single interface.
 *
 * A model turns a batch of input strings into one fixed-length vector each.
 * Vector extraction follows the final-position convention: the hidden state
 * at the last token (the EOS position) summarizes the whole sequence, so a
 * prefix prepended to the input genuinely steers the output. Mean pooling
 * over all positions is available behind a flag for models without a usable
 * EOS convention.
 *
 * The stub model ships with the service and needs no weights: it fakes a
 * causal encoder by hashing each token together with everything before it,
 * so position i depends on exactly the tokens at positions <= i. That keeps
 * the pooling code honest (EOS and mean genuinely differ, prefixes genuinely
 * matter) while staying deterministic across processes and platforms.
 */
import { createHash } from "node:crypto";

export type Pooling = "eos" | "mean";

export const POOLINGS: readonly Pooling[] = ["eos", "mean"];

export interface EmbeddingModel {
  /** Reported under "model" in /health responses. */
  readonly name: string;
  /** Length of every vector this model produces. */
  readonly dim: number;
  /** One vector per input string; treated as unordered by callers. */
  embed(texts: string[]): Promise<number[][]>;
}

const EOS_TOKEN = "</s>";

/** Whitespace tokens plus a trailing EOS, so every text has >= 1 position. */
export function tokenize(text: string): string[] {
  const tokens = text.split(/\s+/u).filter((t) => t.length > 0);
  tokens.push(EOS_TOKEN);
  return tokens;
}

/** Stretch one digest into `dim` floats in [-1, 1) via counter-mode hashing. */
function expand(digest: Buffer, dim: number): Float64Array {
  const out = new Float64Array(dim);
  let block = Buffer.alloc(0);
  let offset = 0;
  let counter = 0;
  for (let i = 0; i < dim; i++) {
    if (offset + 4 > block.length) {
      block = createHash("sha256").update(digest).update(String(counter)).digest();
      counter += 1;
      offset = 0;
    }
    out[i] = (block.readUInt32BE(offset) / 2 ** 32) * 2 - 1;
    offset += 4;
  }
  return out;
}

function meanOf(states: Float64Array[]): Float64Array {
  const out = new Float64Array(states[0].length);
  for (const state of states) {
    for (let i = 0; i < out.length; i++) out[i] += state[i];
  }
  for (let i = 0; i < out.length; i++) out[i] /= states.length;
  return out;
}

function unitNorm(vec: Float64Array): number[] {
  let sumSq = 0;
  for (const x of vec) sumSq += x * x;
  const norm = Math.sqrt(sumSq);
  return Array.from(vec, (x) => (norm > 0 ? x / norm : 0));
}

/**
 * Deterministic weight-free model: a stand-in for a causal encoder.
 *
 * The hidden state at position i expands sha256(tokens[0..i]), chained one
 * token at a time, so states share a prefix exactly as far as their token
 * sequences do. Pooled vectors are L2-normalized.
 */
export class StubModel implements EmbeddingModel {
  readonly name: string;
  readonly dim: number;
  readonly pooling: Pooling;

  constructor(dim = 64, pooling: Pooling = "eos") {
    if (!Number.isInteger(dim) || dim < 1) {
      throw new RangeError(`dim must be a positive integer, got ${dim}`);
    }
    this.dim = dim;
    this.pooling = pooling;
    this.name = `stub-${dim}`;
  }

  /** Per-position hidden states for a text; exported surface for tests. */
  states(text: string): Float64Array[] {
    const out: Float64Array[] = [];
    let chain = createHash("sha256").update("embed-stub-v1").digest();
    for (const token of tokenize(text)) {
      chain = createHash("sha256").update(chain).update(token, "utf8").digest();
      out.push(expand(chain, this.dim));
    }
    return out;
  }

  embedOne(text: string): number[] {
    const states = this.states(text);
    const pooled = this.pooling === "eos" ? states[states.length - 1] : meanOf(states);
    return unitNorm(pooled);
  }

  async embed(texts: string[]): Promise<number[][]> {
    return texts.map((text) => this.embedOne(text));
  }
}

const STUB_SPEC = /^stub(?::(\d+))?$/;

/**
 * Resolve a model spec to a loaded model.
 *
 * "stub" or "stub:<dim>" builds the weight-free stub; anything else is
 * treated as a pretrained model id and loaded through the optional
 * transformers backend.
 */
export async function loadModel(spec: string, pooling: Pooling = "eos"): Promise<EmbeddingModel> {
  const match = STUB_SPEC.exec(spec);
  if (match) {
    return new StubModel(match[1] === undefined ? 64 : Number(match[1]), pooling);
  }
  const { loadPretrained } = await import("./pretrained.js");
  return loadPretrained(spec, pooling);
}
