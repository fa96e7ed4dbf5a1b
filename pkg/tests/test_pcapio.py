import pytest

from framebuild import arp, dns_udp_frame, ether, pcap_bytes
from iotident.errors import MalformedFileError, TruncatedRecordWarning
from iotident.pcapio import read_capture


def write(tmp_path, name, data):
    p = tmp_path / name
    p.write_bytes(data)
    return p


def test_empty_capture(tmp_path):
    p = write(tmp_path, "empty.pcap", pcap_bytes([]))
    assert list(read_capture(p)) == []


def test_single_arp_record(tmp_path):
    # 14-byte ethernet + 28-byte arp body, padded to the 60-byte minimum
    frame = ether("aa:bb:cc:dd:ee:01", "ff:ff:ff:ff:ff:ff", 0x0806, arp(1))
    frame += b"\x00" * (60 - len(frame))
    assert len(frame) == 60
    p = write(tmp_path, "one.pcap", pcap_bytes([frame]))
    pkts = list(read_capture(p))
    assert len(pkts) == 1
    assert pkts[0].index == 0
    assert len(pkts[0].data) == 60
    assert pkts[0].data == frame
    assert pkts[0].link_type == 1
    assert pkts[0].ts_sec == 1_600_000_000


def test_byte_order_variants_identical(tmp_path):
    frame = dns_udp_frame(payload=b"abc")
    le = write(tmp_path, "le.pcap", pcap_bytes([frame], byte_order="<"))
    be = write(tmp_path, "be.pcap", pcap_bytes([frame], byte_order=">"))
    out_le = [(p.index, p.ts_sec, p.ts_usec, p.link_type, p.data) for p in read_capture(le)]
    out_be = [(p.index, p.ts_sec, p.ts_usec, p.link_type, p.data) for p in read_capture(be)]
    assert out_le == out_be


def test_big_endian_magic_on_disk(tmp_path):
    data = pcap_bytes([], byte_order=">")
    assert data[:4] == b"\xa1\xb2\xc3\xd4"
    data_le = pcap_bytes([], byte_order="<")
    assert data_le[:4] == b"\xd4\xc3\xb2\xa1"


def test_indices_increase(tmp_path):
    frames = [dns_udp_frame(payload=bytes([i])) for i in range(5)]
    p = write(tmp_path, "five.pcap", pcap_bytes(frames))
    pkts = list(read_capture(p))
    assert [pkt.index for pkt in pkts] == [0, 1, 2, 3, 4]
    assert [len(pkt.data) for pkt in pkts] == [43] * 5


def test_bad_magic(tmp_path):
    p = write(tmp_path, "bad.pcap", b"\x00" * 24)
    with pytest.raises(MalformedFileError):
        list(read_capture(p))


def test_truncated_global_header(tmp_path):
    p = write(tmp_path, "short.pcap", b"\xd4\xc3\xb2\xa1short")
    with pytest.raises(MalformedFileError):
        list(read_capture(p))


def test_truncated_record_returns_prior_records(tmp_path):
    good = dns_udp_frame()
    data = pcap_bytes([good, good])
    # third record claims 100 bytes but the file ends after 4
    import struct

    data += struct.pack("<IIII", 0, 0, 100, 100) + b"\x00" * 4
    p = write(tmp_path, "trunc.pcap", data)
    with pytest.warns(TruncatedRecordWarning):
        pkts = list(read_capture(p))
    assert len(pkts) == 2


def test_truncated_record_header(tmp_path):
    data = pcap_bytes([dns_udp_frame()]) + b"\x01\x02\x03"
    p = write(tmp_path, "trunc2.pcap", data)
    with pytest.warns(TruncatedRecordWarning):
        pkts = list(read_capture(p))
    assert len(pkts) == 1


def test_capture_id_defaults_and_override(tmp_path):
    p = write(tmp_path, "cid.pcap", pcap_bytes([dns_udp_frame()]))
    assert next(iter(read_capture(p))).capture_id == str(p)
    assert next(iter(read_capture(p, capture_id="x/y.pcap"))).capture_id == "x/y.pcap"


def test_read_is_deterministic(tmp_path):
    frames = [dns_udp_frame(payload=bytes(range(i))) for i in range(10)]
    p = write(tmp_path, "det.pcap", pcap_bytes(frames))
    assert list(read_capture(p)) == list(read_capture(p))
