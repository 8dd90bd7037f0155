/** Device kernels, single thread and single block by design.
 *
 * Both kernels address the protected function through a KernelMemory
 * view of mapped host memory; fidelity to the one-thread reference
 * behavior matters more than speed here.
 */

export const INT3 = 0xcc;

/** Byte-addressed view of a mapped region, as a kernel sees it. */
export interface KernelMemory {
  load(offset: number): number;
  store(offset: number, value: number): void;
}

/** Scan kernel: result flag is 1 iff any listed offset holds 0xCC. */
export const scanKernel = (
  func: KernelMemory,
  offsets: readonly number[],
): 0 | 1 => {
  let hooked = false;
  for (let i = 0; i < offsets.length; i++) {
    if (func.load(offsets[i]) === INT3) {
      hooked = true;
    }
  }
  return hooked ? 1 : 0;
};

/** Heal kernel: write the original byte at every listed offset that
 * deviates; returns how many bytes were rewritten. */
export const healKernel = (
  func: KernelMemory,
  offsets: readonly number[],
  originalBytes: Uint8Array,
): number => {
  if (offsets.length > originalBytes.length) {
    throw new RangeError("more offsets than original bytes");
  }
  let written = 0;
  for (let i = 0; i < offsets.length; i++) {
    if (func.load(offsets[i]) !== originalBytes[i]) {
      func.store(offsets[i], originalBytes[i]);
      written++;
    }
  }
  return written;
};
