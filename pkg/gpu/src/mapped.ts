/** Mapped-region lifecycle: host pages are registered for device access
 * before any kernel launch and unregistered at teardown. An internal
 * counter lets tests assert that no registration ever leaks.
 */

import type { HostMemoryChannel } from "./hostmem.js";
import type { KernelMemory } from "./kernels.js";

export interface HostRegion {
  readonly base: number;
  readonly length: number;
}

let activeRegistrations = 0;

export const activeMappingCount = (): number => activeRegistrations;

export class MappedRegion {
  /** Device-visible alias of the host base (unified addressing here). */
  readonly deviceAlias: number;
  private registered = true;

  private constructor(
    private readonly channel: HostMemoryChannel,
    readonly host: HostRegion,
  ) {
    this.deviceAlias = host.base;
    activeRegistrations++;
  }

  static register(channel: HostMemoryChannel, host: HostRegion): MappedRegion {
    if (host.length < 1 || host.base < 0 || !Number.isSafeInteger(host.base)) {
      throw new RangeError(`bad host region ${host.base}+${host.length}`);
    }
    return new MappedRegion(channel, host);
  }

  get isRegistered(): boolean {
    return this.registered;
  }

  unregister(): void {
    if (this.registered) {
      this.registered = false;
      activeRegistrations--;
    }
  }

  /** Bounds-checked byte view handed to kernels. */
  view(): KernelMemory {
    const { channel, host } = this;
    const checked = (offset: number): number => {
      if (!this.registered) {
        throw new Error("region was unregistered");
      }
      if (offset < 0 || offset >= host.length) {
        throw new RangeError(`offset ${offset} outside region of ${host.length}`);
      }
      return host.base + offset;
    };
    return {
      load: (offset) => channel.readAt(checked(offset), 1)[0],
      store: (offset, value) => {
        channel.writeAt(checked(offset), Uint8Array.of(value & 0xff));
      },
    };
  }

  readAll(): Uint8Array {
    if (!this.registered) {
      throw new Error("region was unregistered");
    }
    return this.channel.readAt(this.host.base, this.host.length);
  }
}

/** Run `body` with a freshly registered mapping; always unregister. */
export const withMappedRegion = <T>(
  channel: HostMemoryChannel,
  host: HostRegion,
  body: (mapped: MappedRegion) => T,
): T => {
  const mapped = MappedRegion.register(channel, host);
  try {
    return body(mapped);
  } finally {
    mapped.unregister();
  }
};
