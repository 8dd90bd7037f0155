/** Host-memory access channel.
 *
 * Production path: positioned reads/writes on a process's memory file,
 * the transfer executing entirely outside the target's CPU context.
 * Tests substitute any regular file. Addresses stay within JS safe
 * integer range (x86-64 user addresses are < 2^48).
 */

import { closeSync, openSync, readSync, writeSync } from "node:fs";

export const processMemoryPath = (pid: number): string => `/proc/${pid}/mem`;

export class HostMemoryChannel {
  private fd: number | null;

  constructor(readonly path: string) {
    this.fd = openSync(path, "r+");
  }

  private get openFd(): number {
    if (this.fd === null) {
      throw new Error(`channel to ${this.path} is closed`);
    }
    return this.fd;
  }

  readAt(address: number, length: number): Uint8Array {
    if (!Number.isSafeInteger(address) || address < 0) {
      throw new RangeError(`bad address ${address}`);
    }
    const out = Buffer.alloc(length);
    let done = 0;
    while (done < length) {
      const n = readSync(this.openFd, out, done, length - done, address + done);
      if (n <= 0) {
        throw new Error(`short read at 0x${(address + done).toString(16)}`);
      }
      done += n;
    }
    return Uint8Array.from(out);
  }

  writeAt(address: number, data: Uint8Array): number {
    if (!Number.isSafeInteger(address) || address < 0) {
      throw new RangeError(`bad address ${address}`);
    }
    const buf = Buffer.from(data);
    let done = 0;
    while (done < data.length) {
      const n = writeSync(this.openFd, buf, done, data.length - done, address + done);
      if (n <= 0) {
        throw new Error(`short write at 0x${(address + done).toString(16)}`);
      }
      done += n;
    }
    return done;
  }

  close(): void {
    if (this.fd !== null) {
      closeSync(this.fd);
      this.fd = null;
    }
  }
}
