/** Table-driven CRC-32 over the reflected polynomial 0xEDB88320.
 *
 * Same semantics as the host toolkit: init 0xFFFFFFFF, per-byte table
 * fold, final complement. Used to validate golden files and to confirm
 * a healed region hashes back to its recorded checksum.
 */

export const REVERSED_POLYNOMIAL = 0xedb88320;

const buildTable = (): Uint32Array => {
  const table = new Uint32Array(256);
  for (let n = 0; n < 256; n++) {
    let checksum = n;
    for (let i = 0; i < 8; i++) {
      checksum = (checksum >>> 1) ^ (checksum & 1 ? REVERSED_POLYNOMIAL : 0);
    }
    table[n] = checksum >>> 0;
  }
  return table;
};

export const CRC_TABLE: Uint32Array = buildTable();

export const crc32 = (data: Uint8Array): number => {
  let checksum = 0xffffffff;
  for (const value of data) {
    checksum = (CRC_TABLE[(checksum ^ value) & 0xff] ^ (checksum >>> 8)) >>> 0;
  }
  return (~checksum) >>> 0;
};
