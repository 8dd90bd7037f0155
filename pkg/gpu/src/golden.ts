/** GOLDENv1 file format: the trusted record shared with the host toolkit.
 *
 * Line-oriented ASCII, LF terminators, in this exact order:
 *
 *   GOLDENv1
 *   symbol <name>
 *   length <decimal>
 *   checksum <8 lowercase hex digits>
 *   offsets <comma-separated decimals, no spaces>
 *   bytes <2*length lowercase hex digits>
 */

import { crc32 } from "./crc32.js";

export interface GoldenImage {
  readonly symbol: string;
  readonly length: number;
  readonly checksum: number;
  readonly offsets: readonly number[];
  readonly data: Uint8Array;
}

export class GoldenFormatError extends Error {}

const field = (line: string | undefined, key: string): string => {
  if (line === undefined) {
    throw new GoldenFormatError(`missing ${key} line`);
  }
  const space = line.indexOf(" ");
  const head = space < 0 ? line : line.slice(0, space);
  if (head !== key) {
    throw new GoldenFormatError(`expected ${key} line, got ${JSON.stringify(line)}`);
  }
  return space < 0 ? "" : line.slice(space + 1);
};

export const parseGolden = (text: string): GoldenImage => {
  const lines = text.split("\n");
  if (lines.length !== 7 || lines[6] !== "") {
    throw new GoldenFormatError("expected exactly 6 LF-terminated lines");
  }
  if (lines[0] !== "GOLDENv1") {
    throw new GoldenFormatError(`bad magic ${JSON.stringify(lines[0])}`);
  }
  const symbol = field(lines[1], "symbol");
  if (!/^[!-~]+$/.test(symbol)) {
    throw new GoldenFormatError(`bad symbol ${JSON.stringify(symbol)}`);
  }
  const lengthText = field(lines[2], "length");
  if (!/^\d+$/.test(lengthText)) {
    throw new GoldenFormatError(`bad length ${JSON.stringify(lengthText)}`);
  }
  const length = Number(lengthText);
  const checksumText = field(lines[3], "checksum");
  if (!/^[0-9a-f]{8}$/.test(checksumText)) {
    throw new GoldenFormatError("checksum must be 8 lowercase hex digits");
  }
  const checksum = Number.parseInt(checksumText, 16);
  const offsetsText = field(lines[4], "offsets");
  const offsets =
    offsetsText === "" ? [] : offsetsText.split(",").map((part) => {
      if (!/^\d+$/.test(part)) {
        throw new GoldenFormatError(`bad offset ${JSON.stringify(part)}`);
      }
      return Number(part);
    });
  const bytesText = field(lines[5], "bytes");
  if (bytesText.length !== 2 * length || !/^[0-9a-f]*$/.test(bytesText)) {
    throw new GoldenFormatError(`bytes must be ${2 * length} lowercase hex digits`);
  }
  const data = Uint8Array.from(Buffer.from(bytesText, "hex"));

  if (length < 1) {
    throw new GoldenFormatError("length must be >= 1");
  }
  let previous = -1;
  for (const offset of offsets) {
    if (!(previous < offset && offset < length)) {
      throw new GoldenFormatError(`offset ${offset} out of range for length ${length}`);
    }
    previous = offset;
  }
  const computed = crc32(data);
  if (computed !== checksum) {
    throw new GoldenFormatError(
      `checksum mismatch: stored ${checksumText}, computed ${computed.toString(16).padStart(8, "0")}`,
    );
  }
  return { symbol, length, checksum, offsets, data };
};

export const serializeGolden = (image: GoldenImage): string =>
  [
    "GOLDENv1",
    `symbol ${image.symbol}`,
    `length ${image.length}`,
    `checksum ${image.checksum.toString(16).padStart(8, "0")}`,
    `offsets ${image.offsets.join(",")}`,
    `bytes ${Buffer.from(image.data).toString("hex")}`,
    "",
  ].join("\n");
