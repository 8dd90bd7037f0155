export { CRC_TABLE, crc32, REVERSED_POLYNOMIAL } from "./crc32.js";
export { GoldenFormatError, parseGolden, serializeGolden } from "./golden.js";
export type { GoldenImage } from "./golden.js";
export { INT3, healKernel, scanKernel } from "./kernels.js";
export type { KernelMemory } from "./kernels.js";
export { HostMemoryChannel, processMemoryPath } from "./hostmem.js";
export { MappedRegion, activeMappingCount, withMappedRegion } from "./mapped.js";
export type { HostRegion } from "./mapped.js";
export {
  SimulatedDmaEngine,
  chooseEngine,
  detectComputeDevice,
} from "./device.js";
export type {
  DeviceProbe,
  DmaEngine,
  EngineChoice,
  EnginePreference,
  HealResult,
  ScanResult,
} from "./device.js";
export { runScenario } from "./demo.js";
