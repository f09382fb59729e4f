#!/usr/bin/env node
/** Command-line entry point: parse flags, start the service, stay up. */
import { parseArgs } from "node:util";

import { Pooling, POOLINGS } from "./model.js";
import { serve } from "./server.js";

const USAGE = `usage: embed-service [options]

options:
  --model <spec>    "stub", "stub:<dim>", or a pretrained model id
                    (default: stub:64; pretrained ids need the optional
                    @huggingface/transformers package)
  --pooling <mode>  "eos" (final-position hidden state, default) or "mean"
  --port <n>        TCP port, 0 picks a free one (default: 8094)
  --host <addr>     bind address (default: 127.0.0.1)
  -h, --help        show this help
`;

function fail(message: string): never {
  process.stderr.write(`${message}\n\n${USAGE}`);
  process.exit(2);
}

async function main(): Promise<void> {
  let values;
  try {
    ({ values } = parseArgs({
      options: {
        model: { type: "string", default: "stub:64" },
        pooling: { type: "string", default: "eos" },
        port: { type: "string", default: "8094" },
        host: { type: "string", default: "127.0.0.1" },
        help: { type: "boolean", short: "h", default: false },
      },
      allowPositionals: false,
    }));
  } catch (err) {
    fail(err instanceof Error ? err.message : String(err));
  }
  if (values.help) {
    process.stdout.write(USAGE);
    return;
  }
  if (!(POOLINGS as string[]).includes(values.pooling)) {
    fail(`--pooling must be one of: ${POOLINGS.join(", ")}`);
  }
  const port = Number(values.port);
  if (!Number.isInteger(port) || port < 0 || port > 65535) {
    fail(`--port must be an integer in [0, 65535], got ${values.port}`);
  }
  await serve(values.model, port, {
    host: values.host,
    pooling: values.pooling as Pooling,
    log: (line) => console.log(line),
  });
}

main().catch((err) => {
  console.error(err instanceof Error ? err.message : String(err));
  process.exit(1);
});
