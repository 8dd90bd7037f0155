import { mkdtempSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";

import { afterEach, describe, expect, it } from "vitest";

import { HostMemoryChannel } from "../src/hostmem.js";
import { MappedRegion, activeMappingCount, withMappedRegion } from "../src/mapped.js";

const tempMemory = (size: number): string => {
  const path = join(mkdtempSync(join(tmpdir(), "selfheal-gpu-")), "mem");
  writeFileSync(path, Buffer.alloc(size, 0x90));
  return path;
};

const channels: HostMemoryChannel[] = [];
const openChannel = (path: string): HostMemoryChannel => {
  const channel = new HostMemoryChannel(path);
  channels.push(channel);
  return channel;
};

afterEach(() => {
  while (channels.length > 0) {
    channels.pop()?.close();
  }
  expect(activeMappingCount()).toBe(0);
});

describe("host memory channel", () => {
  it("positioned reads and writes round-trip", () => {
    const channel = openChannel(tempMemory(64));
    channel.writeAt(10, Uint8Array.of(1, 2, 3));
    expect([...channel.readAt(9, 5)]).toEqual([0x90, 1, 2, 3, 0x90]);
  });

  it("rejects bad addresses and use after close", () => {
    const channel = new HostMemoryChannel(tempMemory(8));
    expect(() => channel.readAt(-1, 1)).toThrow(RangeError);
    channel.close();
    expect(() => channel.readAt(0, 1)).toThrow(/closed/);
  });
});

describe("mapped region lifecycle", () => {
  it("registers before use and unregisters at teardown", () => {
    const channel = openChannel(tempMemory(32));
    const before = activeMappingCount();
    const result = withMappedRegion(channel, { base: 4, length: 8 }, (mapped) => {
      expect(activeMappingCount()).toBe(before + 1);
      expect(mapped.isRegistered).toBe(true);
      return mapped.view().load(0);
    });
    expect(result).toBe(0x90);
    expect(activeMappingCount()).toBe(before);
  });

  it("unregisters even when the kernel body throws", () => {
    const channel = openChannel(tempMemory(32));
    const before = activeMappingCount();
    expect(() =>
      withMappedRegion(channel, { base: 0, length: 8 }, () => {
        throw new Error("launch failure");
      }),
    ).toThrow(/launch failure/);
    expect(activeMappingCount()).toBe(before);
  });

  it("view enforces region bounds and registration state", () => {
    const channel = openChannel(tempMemory(32));
    const mapped = MappedRegion.register(channel, { base: 8, length: 4 });
    const view = mapped.view();
    expect(() => view.load(4)).toThrow(RangeError);
    expect(() => view.load(-1)).toThrow(RangeError);
    mapped.unregister();
    expect(() => view.load(0)).toThrow(/unregistered/);
    mapped.unregister(); // idempotent
  });

  it("device alias matches the host base in unified addressing", () => {
    const channel = openChannel(tempMemory(16));
    const mapped = MappedRegion.register(channel, { base: 2, length: 4 });
    expect(mapped.deviceAlias).toBe(2);
    mapped.unregister();
  });
});
