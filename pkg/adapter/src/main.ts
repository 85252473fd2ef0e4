/** CLI entry point: serve a model over the tensor wire protocol. */

import { AdapterServer } from "./server.js";
import { loadModel } from "./models.js";

interface Args {
  host: string;
  port: number;
  model: string;
  shape: [number, number, number] | null;
}

function usage(): never {
  console.error(
    "usage: node dist/main.js --model <spec> [--port N] [--host H] [--shape C,H,W]\n" +
      "  model specs: zero | constant:<value> | scale:<factor> | module:<path>",
  );
  process.exit(1);
}

function parseArgs(argv: string[]): Args {
  const args: Args = { host: "127.0.0.1", port: 0, model: "", shape: null };
  for (let i = 0; i < argv.length; i++) {
    const flag = argv[i];
    const value = argv[i + 1];
    switch (flag) {
      case "--host":
        if (value === undefined) usage();
        args.host = value;
        i++;
        break;
      case "--port": {
        if (value === undefined) usage();
        const port = Number(value);
        if (!Number.isInteger(port) || port < 0 || port > 65535) usage();
        args.port = port;
        i++;
        break;
      }
      case "--model":
        if (value === undefined) usage();
        args.model = value;
        i++;
        break;
      case "--shape": {
        if (value === undefined) usage();
        const dims = value.split(",").map(Number);
        if (dims.length !== 3 || dims.some((d) => !Number.isInteger(d) || d < 1)) usage();
        args.shape = dims as [number, number, number];
        i++;
        break;
      }
      default:
        usage();
    }
  }
  if (!args.model) usage();
  return args;
}

async function main(): Promise<void> {
  const args = parseArgs(process.argv.slice(2));
  const model = await loadModel(args.model);
  const server = new AdapterServer(model, {
    expectShape: args.shape,
    log: (line) => console.error(`[adapter] ${line}`),
  });
  const address = await server.listen(args.port, args.host);
  // Parseable startup line; clients wait for it to learn the bound port.
  console.log(`listening on ${address.address}:${address.port} model=${model.spec}`);
  const shutdown = () => {
    void server.close().then(() => process.exit(0));
  };
  process.on("SIGINT", shutdown);
  process.on("SIGTERM", shutdown);
}

main().catch((err) => {
  console.error(`fatal: ${(err as Error).message}`);
  process.exit(1);
});
