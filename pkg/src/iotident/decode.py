"""Per-packet protocol layer decoding.

decode_layers is total: malformed or unknown input never raises, an
underlength header simply leaves that layer absent and stops the descent.
The resulting LayerStack deliberately omits session-identifying fields
(IP addresses, IP ID, TCP sequence/acknowledgment numbers) so that
feature extraction cannot read them.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Optional

from .pcapio import LINKTYPE_ETHERNET, RawPacketView

ETHERTYPE_IPV4 = 0x0800
ETHERTYPE_ARP = 0x0806
ETHERTYPE_IPV6 = 0x86DD
ETHERTYPE_EAPOL = 0x888E

IPPROTO_ICMP = 1
IPPROTO_TCP = 6
IPPROTO_UDP = 17

# Well-known ports mapped to application markers; membership of either the
# source or destination port sets the marker.
PORT_MARKERS = {
    53: "DNS",
    67: "BOOTP",
    68: "BOOTP",
    80: "HTTP",
    443: "HTTPS",
    123: "NTP",
    1900: "SSDP",
    5353: "MDNS",
}


@dataclass(frozen=True)
class Ethernet:
    src_mac: str
    dst_mac: str
    ethertype: int
    frame_size: int


@dataclass(frozen=True)
class Arp:
    opcode: int
    hw_type: int
    proto_type: int


@dataclass(frozen=True)
class Ipv4:
    version: int
    header_len: int  # IHL, in 32-bit words, as encoded
    tos: int
    total_len: int
    flags: int  # 3-bit field
    frag_offset: int
    ttl: int
    protocol_number: int


@dataclass(frozen=True)
class TcpOptions:
    mss: bool = False
    window_scale: bool = False
    sack_permitted: bool = False
    timestamp: bool = False


@dataclass(frozen=True)
class Tcp:
    src_port: int
    dst_port: int
    data_offset: int  # in 32-bit words, as encoded
    flag_fin: bool
    flag_syn: bool
    flag_rst: bool
    flag_psh: bool
    flag_ack: bool
    flag_urg: bool
    flag_ece: bool
    flag_cwr: bool
    window: int
    urgent_ptr: int
    options: TcpOptions


@dataclass(frozen=True)
class Udp:
    src_port: int
    dst_port: int
    length: int


@dataclass(frozen=True)
class Icmp:
    type: int
    code: int


@dataclass(frozen=True)
class LayerStack:
    """Uniform decoded view of one frame.

    At most one of tcp/udp/icmp is present, and none of them is present
    without ip. payload holds the residue after the highest decoded header.
    """

    ethernet: Optional[Ethernet] = None
    arp: Optional[Arp] = None
    ip: Optional[Ipv4] = None
    tcp: Optional[Tcp] = None
    udp: Optional[Udp] = None
    icmp: Optional[Icmp] = None
    app_markers: frozenset[str] = field(default_factory=frozenset)
    payload: bytes = b""


def _mac(raw: bytes) -> str:
    return ":".join(f"{b:02x}" for b in raw)


def _parse_tcp_options(raw: bytes) -> TcpOptions:
    mss = wscale = sackok = tstamp = False
    i = 0
    while i < len(raw):
        kind = raw[i]
        if kind == 0:  # end of options
            break
        if kind == 1:  # no-op
            i += 1
            continue
        if i + 1 >= len(raw):
            break
        length = raw[i + 1]
        if length < 2 or i + length > len(raw):
            break
        if kind == 2:
            mss = True
        elif kind == 3:
            wscale = True
        elif kind == 4:
            sackok = True
        elif kind == 8:
            tstamp = True
        i += length
    return TcpOptions(mss=mss, window_scale=wscale, sack_permitted=sackok, timestamp=tstamp)


def _port_markers(src_port: int, dst_port: int) -> set[str]:
    markers = set()
    for port in (src_port, dst_port):
        name = PORT_MARKERS.get(port)
        if name is not None:
            markers.add(name)
    return markers


def decode_layers(pkt: RawPacketView) -> LayerStack:
    """Decode an Ethernet frame into a LayerStack. Never raises.

    Non-Ethernet link types yield an all-absent stack whose payload is the
    whole frame. IPv6 stops at the Ethernet layer (the catalogue is
    IPv4-centric); the ethertype still identifies it.
    """
    data = pkt.data
    if pkt.link_type != LINKTYPE_ETHERNET:
        return LayerStack(payload=data)
    if len(data) < 14:
        return LayerStack(payload=data)

    ethertype = struct.unpack(">H", data[12:14])[0]
    eth = Ethernet(
        src_mac=_mac(data[6:12]),
        dst_mac=_mac(data[0:6]),
        ethertype=ethertype,
        frame_size=len(data),
    )
    rest = data[14:]
    markers: set[str] = set()

    if ethertype < 0x0600:
        # IEEE 802.3 length field: LLC framing follows.
        markers.add("LLC")
        return LayerStack(ethernet=eth, app_markers=frozenset(markers), payload=rest)

    if ethertype == ETHERTYPE_EAPOL:
        markers.add("EAPOL")
        return LayerStack(ethernet=eth, app_markers=frozenset(markers), payload=rest)

    if ethertype == ETHERTYPE_ARP:
        if len(rest) < 8:
            return LayerStack(ethernet=eth, payload=rest)
        hw_type, proto_type, hlen, plen, opcode = struct.unpack(">HHBBH", rest[:8])
        body_len = 8 + 2 * (hlen + plen)
        arp = Arp(opcode=opcode, hw_type=hw_type, proto_type=proto_type)
        return LayerStack(ethernet=eth, arp=arp, payload=rest[min(body_len, len(rest)):])

    if ethertype != ETHERTYPE_IPV4:
        # IPv6 and anything else: undissected, ethertype marks it.
        return LayerStack(ethernet=eth, payload=rest)

    if len(rest) < 20:
        return LayerStack(ethernet=eth, payload=rest)
    ver_ihl = rest[0]
    version = ver_ihl >> 4
    ihl = ver_ihl & 0x0F
    header_bytes = ihl * 4
    if version != 4 or ihl < 5 or len(rest) < header_bytes:
        return LayerStack(ethernet=eth, payload=rest)
    tos = rest[1]
    total_len = struct.unpack(">H", rest[2:4])[0]
    flags_frag = struct.unpack(">H", rest[6:8])[0]
    ip = Ipv4(
        version=version,
        header_len=ihl,
        tos=tos,
        total_len=total_len,
        flags=flags_frag >> 13,
        frag_offset=flags_frag & 0x1FFF,
        ttl=rest[8],
        protocol_number=rest[9],
    )
    ip_payload = rest[header_bytes:]

    # Non-first fragments carry mid-stream bytes, not a transport header.
    if ip.frag_offset != 0:
        return LayerStack(ethernet=eth, ip=ip, payload=ip_payload)

    if ip.protocol_number == IPPROTO_TCP:
        if len(ip_payload) < 20:
            return LayerStack(ethernet=eth, ip=ip, payload=ip_payload)
        src_port, dst_port = struct.unpack(">HH", ip_payload[:4])
        offset_flags = struct.unpack(">H", ip_payload[12:14])[0]
        data_offset = offset_flags >> 12
        flags = offset_flags & 0xFF
        tcp_header_bytes = data_offset * 4
        if data_offset < 5 or len(ip_payload) < tcp_header_bytes:
            return LayerStack(ethernet=eth, ip=ip, payload=ip_payload)
        window, _checksum, urgent = struct.unpack(">HHH", ip_payload[14:20])
        tcp = Tcp(
            src_port=src_port,
            dst_port=dst_port,
            data_offset=data_offset,
            flag_fin=bool(flags & 0x01),
            flag_syn=bool(flags & 0x02),
            flag_rst=bool(flags & 0x04),
            flag_psh=bool(flags & 0x08),
            flag_ack=bool(flags & 0x10),
            flag_urg=bool(flags & 0x20),
            flag_ece=bool(flags & 0x40),
            flag_cwr=bool(flags & 0x80),
            window=window,
            urgent_ptr=urgent,
            options=_parse_tcp_options(ip_payload[20:tcp_header_bytes]),
        )
        markers |= _port_markers(src_port, dst_port)
        if src_port == 443 or dst_port == 443:
            markers.add("TLS")
        return LayerStack(
            ethernet=eth,
            ip=ip,
            tcp=tcp,
            app_markers=frozenset(markers),
            payload=ip_payload[tcp_header_bytes:],
        )

    if ip.protocol_number == IPPROTO_UDP:
        if len(ip_payload) < 8:
            return LayerStack(ethernet=eth, ip=ip, payload=ip_payload)
        src_port, dst_port, length, _checksum = struct.unpack(">HHHH", ip_payload[:8])
        udp = Udp(src_port=src_port, dst_port=dst_port, length=length)
        markers |= _port_markers(src_port, dst_port)
        return LayerStack(
            ethernet=eth,
            ip=ip,
            udp=udp,
            app_markers=frozenset(markers),
            payload=ip_payload[8:],
        )

    if ip.protocol_number == IPPROTO_ICMP:
        if len(ip_payload) < 4:
            return LayerStack(ethernet=eth, ip=ip, payload=ip_payload)
        icmp = Icmp(type=ip_payload[0], code=ip_payload[1])
        return LayerStack(ethernet=eth, ip=ip, icmp=icmp, payload=ip_payload[8:])

    return LayerStack(ethernet=eth, ip=ip, payload=ip_payload)
