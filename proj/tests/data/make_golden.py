# SPDX-License-Identifier: Apache-2.0
#
# Writes the golden checkpoint test vector byte-by-byte, independently of the
# C++ serializer, so endianness and layout are pinned by a second
# implementation. Checked-in output: golden_tiny.ckpt.

import struct
import sys


def entry(name: str, dims, values) -> bytes:
    out = struct.pack("<H", len(name)) + name.encode("ascii")
    out += b"\x00"  # dtype: f32
    out += struct.pack("B", len(dims))
    for d in dims:
        out += struct.pack("<I", d)
    for v in values:
        out += struct.pack("<f", v)
    return out


def main() -> None:
    meta = "purpose=golden\nseed=7\n".encode("ascii")
    blob = b"LSMAE1\x00\x00"
    blob += struct.pack("<I", 2)  # entry count
    blob += struct.pack("<I", len(meta)) + meta
    blob += entry("alpha", [2, 3], [0.5, -1.5, 2.25, 0.0, 1.0e-7, 3.0e8])
    blob += entry("opt/m/alpha", [4], [1.0, 2.0, 3.0, 4.0])
    path = sys.argv[1] if len(sys.argv) > 1 else "golden_tiny.ckpt"
    with open(path, "wb") as f:
        f.write(blob)
    print(f"wrote {len(blob)} bytes to {path}")


if __name__ == "__main__":
    main()
