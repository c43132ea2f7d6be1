/**
 * Entry point: `node main.js --config <bridge-config.json>`.
 *
 * Exit codes: 0 after end of input, 3 on startup/validation failure.
 */
import { loadBridgeConfig } from "./config";
import { serve } from "./serve";

function configPath(argv: string[]): string {
  const index = argv.indexOf("--config");
  if (index === -1 || index + 1 >= argv.length) {
    throw new Error("usage: main.js --config <path>");
  }
  return argv[index + 1];
}

async function main(): Promise<number> {
  let config;
  try {
    config = loadBridgeConfig(configPath(process.argv.slice(2)));
    await serve(config);
  } catch (err) {
    process.stderr.write(`bridge startup failed: ${(err as Error).message}\n`);
    return 3;
  }
  return 0;
}

main().then((code) => process.exit(code));
