/**
 * Optional backend wrapping a pretrained feature-extraction pipeline.
 *
 * The heavyweight dependency is imported lazily at load time, so the service
 * (and its tests) work without it installed; asking for a pretrained model
 * without the package present fails with an instruction rather than a module
 * resolution stack trace. Inference runs one text at a time: batching would
 * pad sequences and the final position of a padded sequence is a pad token,
 * not the EOS whose hidden state we want.
 */
import type { EmbeddingModel, Pooling } from "./model.js";

const BACKEND_PACKAGE = "@huggingface/transformers";

type Extractor = (
  text: string,
  options: { pooling: "none" | "mean" },
) => Promise<{ tolist(): number[][][] | number[][] }>;

async function importBackend(): Promise<{ pipeline: Function }> {
  try {
    // Variable specifier keeps the optional package out of compile-time
    // resolution; install it only when serving real models.
    return await import(String(BACKEND_PACKAGE));
  } catch (cause) {
    throw new Error(
      `pretrained models need the optional '${BACKEND_PACKAGE}' package ` +
        `(npm install ${BACKEND_PACKAGE}); only 'stub' models work without it`,
      { cause },
    );
  }
}

async function extractOne(
  extractor: Extractor,
  text: string,
  pooling: Pooling,
): Promise<number[]> {
  if (pooling === "mean") {
    const output = await extractor(text, { pooling: "mean" });
    return (output.tolist() as number[][])[0];
  }
  // pooling "none" yields [batch=1][tokens][hidden]; take the final position.
  const output = await extractor(text, { pooling: "none" });
  const positions = (output.tolist() as number[][][])[0];
  return positions[positions.length - 1];
}

export async function loadPretrained(
  modelId: string,
  pooling: Pooling,
): Promise<EmbeddingModel> {
  const { pipeline } = await importBackend();
  const extractor = (await pipeline("feature-extraction", modelId)) as Extractor;
  const probe = await extractOne(extractor, "dimension probe", pooling);
  const dim = probe.length;

  return {
    name: modelId,
    dim,
    async embed(texts: string[]): Promise<number[][]> {
      const vectors: number[][] = [];
      for (const text of texts) {
        vectors.push(await extractOne(extractor, text, pooling));
      }
      return vectors;
    },
  };
}
