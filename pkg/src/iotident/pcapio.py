"""Classic pcap (libpcap) capture file reading.

Only the classic format is handled: a 24-byte global header with magic
0xa1b2c3d4 (either byte order) followed by 16-byte record headers. pcapng
is an extension point, not supported here.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Union

from .errors import MalformedFileError, TruncatedRecordWarning

MAGIC_BE = 0xA1B2C3D4
GLOBAL_HEADER_LEN = 24
RECORD_HEADER_LEN = 16

LINKTYPE_ETHERNET = 1


@dataclass(frozen=True)
class RawPacketView:
    """One capture record: identity context plus the raw frame bytes."""

    capture_id: str
    index: int
    ts_sec: int
    ts_usec: int
    link_type: int
    data: bytes

    def __len__(self) -> int:
        return len(self.data)


def _byte_order(magic_bytes: bytes) -> str:
    if struct.unpack(">I", magic_bytes)[0] == MAGIC_BE:
        return ">"
    if struct.unpack("<I", magic_bytes)[0] == MAGIC_BE:
        return "<"
    raise MalformedFileError(f"unsupported capture magic {magic_bytes.hex()}")


def read_capture(path: Union[str, Path], capture_id: str | None = None) -> Iterator[RawPacketView]:
    """Yield every record of a classic pcap file in file order.

    Record header fields are normalized regardless of the file's
    endianness marker. A record that claims more bytes than remain stops
    the iteration with a TruncatedRecordWarning; records before it are
    still yielded.
    """
    path = Path(path)
    cid = capture_id if capture_id is not None else str(path)
    with open(path, "rb") as fh:
        header = fh.read(GLOBAL_HEADER_LEN)
        if len(header) < GLOBAL_HEADER_LEN:
            raise MalformedFileError(f"{path}: truncated global header ({len(header)} bytes)")
        order = _byte_order(header[:4])
        _vmaj, _vmin, _zone, _sigfigs, _snaplen, link_type = struct.unpack(
            order + "HHiIII", header[4:]
        )
        index = 0
        while True:
            rec = fh.read(RECORD_HEADER_LEN)
            if not rec:
                return
            if len(rec) < RECORD_HEADER_LEN:
                warnings.warn(
                    f"{path}: truncated record header at packet {index}",
                    TruncatedRecordWarning,
                    stacklevel=2,
                )
                return
            ts_sec, ts_usec, incl_len, _orig_len = struct.unpack(order + "IIII", rec)
            data = fh.read(incl_len)
            if len(data) < incl_len:
                warnings.warn(
                    f"{path}: record {index} claims {incl_len} bytes, "
                    f"{len(data)} remain",
                    TruncatedRecordWarning,
                    stacklevel=2,
                )
                return
            yield RawPacketView(
                capture_id=cid,
                index=index,
                ts_sec=ts_sec,
                ts_usec=ts_usec,
                link_type=link_type,
                data=data,
            )
            index += 1
