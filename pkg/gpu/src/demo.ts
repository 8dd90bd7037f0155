/** Device-path demo runner.
 *
 * Invoked by the host toolkit's `demo --channel device`: scans the
 * protected function of a live target through mapped host memory, heals
 * it if hooked, and verifies the bytes hash back to the golden checksum.
 *
 *   node dist/demo.js --golden FILE [--pid N --base HEX]
 *                     [--engine auto|device|sim] [--mem-path FILE]
 *
 * Exit codes: 0 done (including an explicitly diagnosed skip), 1 failure,
 * 2 usage error.
 */

import { readFileSync } from "node:fs";
import process from "node:process";

import { chooseEngine, type EnginePreference } from "./device.js";
import { parseGolden } from "./golden.js";
import { processMemoryPath } from "./hostmem.js";

interface Args {
  golden: string;
  pid: number | null;
  base: number | null;
  engine: EnginePreference;
  memPath: string | null;
}

const usage = (message: string): never => {
  process.stderr.write(`demo: ${message}\n`);
  process.stderr.write(
    "usage: demo --golden FILE [--pid N --base HEX] [--engine auto|device|sim] [--mem-path FILE]\n",
  );
  process.exit(2);
};

const parseArgs = (argv: string[]): Args => {
  const args: Args = { golden: "", pid: null, base: null, engine: "auto", memPath: null };
  for (let i = 0; i < argv.length; i += 2) {
    const flag = argv[i];
    const value = argv[i + 1];
    if (value === undefined) {
      usage(`missing value for ${flag}`);
    }
    switch (flag) {
      case "--golden":
        args.golden = value;
        break;
      case "--pid":
        args.pid = Number(value);
        break;
      case "--base":
        args.base = Number.parseInt(value, 16);
        break;
      case "--engine":
        if (value !== "auto" && value !== "device" && value !== "sim") {
          usage(`bad engine ${value}`);
        }
        args.engine = value as EnginePreference;
        break;
      case "--mem-path":
        args.memPath = value;
        break;
      default:
        usage(`unknown flag ${flag}`);
    }
  }
  if (args.golden === "") {
    usage("--golden is required");
  }
  if ((args.pid === null) === (args.memPath === null)) {
    if (args.pid !== null) {
      usage("--pid and --mem-path are mutually exclusive");
    }
    usage("need a target: --pid N --base HEX, or --mem-path FILE --base HEX");
  }
  if (args.base === null || Number.isNaN(args.base)) {
    usage("--base HEX is required");
  }
  return args;
};

export const runScenario = (args: Args): number => {
  const golden = parseGolden(readFileSync(args.golden, "utf8"));
  const memPath = args.memPath ?? processMemoryPath(args.pid as number);
  const { engine, note } = chooseEngine(args.engine, memPath);
  process.stderr.write(`demo: ${note}\n`);
  if (engine === null) {
    return 0; // diagnosed skip: no device path to run
  }
  try {
    const region = { base: args.base as number, length: golden.length };
    const offsets = golden.offsets.length > 0 ? golden.offsets : [...golden.data.keys()];

    const scan = engine.scan(region, offsets);
    if (scan.flag === 0) {
      process.stdout.write(`device-scan: ${golden.symbol} is not hooked (flag 0)\n`);
      return 0;
    }
    process.stdout.write(`device-scan: ${golden.symbol} is hooked (flag 1)\n`);

    const heal = engine.heal(region, golden);
    if (!heal.verified) {
      process.stderr.write("demo: heal verification failed\n");
      return 1;
    }
    process.stdout.write(
      `device-heal: hook at ${golden.symbol} removed (${heal.bytesWritten} byte(s))\n`,
    );
    const match = heal.checksum === golden.checksum ? "matches" : "DIFFERS from";
    process.stdout.write(
      `device-verify: crc ${heal.checksum.toString(16).padStart(8, "0")} ${match} golden\n`,
    );
    return heal.checksum === golden.checksum ? 0 : 1;
  } finally {
    engine.close();
  }
};

const isMain = (() => {
  const entry = process.argv[1];
  return entry !== undefined && import.meta.url.endsWith(entry.split("/").pop() as string);
})();

if (isMain) {
  try {
    process.exit(runScenario(parseArgs(process.argv.slice(2))));
  } catch (error) {
    process.stderr.write(`demo: ${(error as Error).message}\n`);
    process.exit(1);
  }
}
