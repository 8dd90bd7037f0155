/** Compute-device detection and the engines that launch kernels.
 *
 * A real device engine needs vendor hardware plus its toolkit; when none
 * is present the probe reports exactly why, and callers skip the device
 * path rather than fail. The simulated engine runs the same kernels with
 * the same mapping lifecycle, with the node process standing in as the
 * DMA engine; it exists so the full scenario stays testable on machines
 * without a GPU and is always labeled as a simulation.
 */

import { execFileSync } from "node:child_process";
import { existsSync } from "node:fs";

import { crc32 } from "./crc32.js";
import type { GoldenImage } from "./golden.js";
import { HostMemoryChannel } from "./hostmem.js";
import { healKernel, scanKernel } from "./kernels.js";
import { withMappedRegion, type HostRegion } from "./mapped.js";

export interface DeviceProbe {
  readonly available: boolean;
  readonly name: string;
  readonly reason: string;
}

const hasNvidiaSmi = (): string | null => {
  try {
    const out = execFileSync("nvidia-smi", ["--query-gpu=name", "--format=csv,noheader"], {
      encoding: "utf8",
      timeout: 10_000,
      stdio: ["ignore", "pipe", "ignore"],
    });
    const name = out.trim().split("\n")[0];
    return name.length > 0 ? name : null;
  } catch {
    return null;
  }
};

export const detectComputeDevice = (): DeviceProbe => {
  const webgpu = (globalThis as { navigator?: { gpu?: unknown } }).navigator?.gpu;
  if (webgpu !== undefined) {
    return { available: true, name: "webgpu-adapter", reason: "WebGPU adapter present" };
  }
  if (existsSync("/dev/nvidia0")) {
    const name = hasNvidiaSmi() ?? "nvidia-device";
    return { available: true, name, reason: "/dev/nvidia0 present" };
  }
  const smi = hasNvidiaSmi();
  if (smi !== null) {
    return { available: true, name: smi, reason: "nvidia-smi reports a device" };
  }
  return {
    available: false,
    name: "none",
    reason:
      "no compute device: no WebGPU adapter, /dev/nvidia0 absent, nvidia-smi not found",
  };
};

export interface ScanResult {
  readonly flag: 0 | 1;
}

export interface HealResult {
  readonly bytesWritten: number;
  readonly verified: boolean;
  readonly checksum: number;
}

/** Launches the scan/heal kernels against mapped host memory. */
export interface DmaEngine {
  readonly name: string;
  readonly simulated: boolean;
  scan(region: HostRegion, offsets: readonly number[]): ScanResult;
  heal(region: HostRegion, golden: GoldenImage): HealResult;
  close(): void;
}

export class SimulatedDmaEngine implements DmaEngine {
  readonly name = "simulated-dma";
  readonly simulated = true;
  private readonly channel: HostMemoryChannel;

  constructor(memoryPath: string) {
    this.channel = new HostMemoryChannel(memoryPath);
  }

  scan(region: HostRegion, offsets: readonly number[]): ScanResult {
    return withMappedRegion(this.channel, region, (mapped) => ({
      flag: scanKernel(mapped.view(), offsets),
    }));
  }

  heal(region: HostRegion, golden: GoldenImage): HealResult {
    return withMappedRegion(this.channel, region, (mapped) => {
      const offsets =
        golden.offsets.length > 0 ? golden.offsets : [...golden.data.keys()];
      const originals = Uint8Array.from(offsets, (offset) => golden.data[offset]);
      const bytesWritten = healKernel(mapped.view(), offsets, originals);
      const after = mapped.readAll();
      const checksum = crc32(after);
      const verified =
        offsets.every((offset) => after[offset] === golden.data[offset]) &&
        after[0] !== 0xcc;
      return { bytesWritten, verified, checksum };
    });
  }

  close(): void {
    this.channel.close();
  }
}

export type EnginePreference = "auto" | "device" | "sim";

export interface EngineChoice {
  readonly engine: DmaEngine | null;
  readonly probe: DeviceProbe;
  readonly note: string;
}

export const chooseEngine = (
  preference: EnginePreference,
  memoryPath: string,
): EngineChoice => {
  const probe = detectComputeDevice();
  if (preference === "device" || preference === "auto") {
    if (probe.available) {
      // A vendor-toolkit engine would be constructed here; building one
      // requires the device toolchain, which detection alone cannot
      // supply. Report honestly rather than pretend.
      return {
        engine: null,
        probe,
        note: `device ${probe.name} detected but no device toolchain is built in; ` +
          "rerun with --engine sim or build the vendor engine",
      };
    }
    if (preference === "device") {
      return { engine: null, probe, note: `device path skipped: ${probe.reason}` };
    }
  }
  return {
    engine: new SimulatedDmaEngine(memoryPath),
    probe,
    note:
      preference === "auto" && !probe.available
        ? `no device (${probe.reason}); using simulated DMA engine`
        : "simulated DMA engine selected",
  };
};
