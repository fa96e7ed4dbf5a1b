"""Behavior feature extraction from decoded packet layers.

The catalogue is data: an ordered list of (name, kind, rule_id) entries,
loadable from a definition file so alternative feature sets can be swapped
in. Rules read a FeatureView, a restricted surface that never exposes MAC
or IP addresses, IP ID, TCP sequence/acknowledgment numbers, or raw port
numbers; port numbers are bucketed into classes before rules see them.

Missing-layer values encode as -1 for numerics, False for booleans, and
the reserved category "absent" for categoricals.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence, Union

from . import kernels
from .decode import LayerStack
from .errors import CatalogueError, OutOfRangeError

FeatureValue = Union[float, bool, str]
FeatureVector = tuple  # values aligned to a FeatureCatalogue

KINDS = ("numeric", "boolean", "categorical")

ABSENT = "absent"
NUMERIC_SENTINEL = -1.0

# The 14 port classes. Exact-match classes take precedence over ranges.
PORT_CLASSES = (
    "NoPort",
    "Reserved0",
    "DNS53",
    "BOOTPServer67",
    "BOOTPClient68",
    "HTTP80",
    "NTP123",
    "HTTPS443",
    "SSDP1900",
    "MDNS5353",
    "ANTLR49153",
    "WellKnown",
    "Registered",
    "Dynamic",
)

_EXACT_PORTS = {
    0: "Reserved0",
    53: "DNS53",
    67: "BOOTPServer67",
    68: "BOOTPClient68",
    80: "HTTP80",
    123: "NTP123",
    443: "HTTPS443",
    1900: "SSDP1900",
    5353: "MDNS5353",
    49153: "ANTLR49153",
}

# protocol_label precedence: app markers first, then transport, then down
# the stack. TLS and LLC markers are catalogue booleans only.
_MARKER_PRECEDENCE = ("DNS", "BOOTP", "HTTP", "HTTPS", "NTP", "SSDP", "MDNS", "EAPOL")


def classify_port(port: Optional[int]) -> str:
    """Bucket a port number into one of the 14 port classes."""
    if port is None:
        return "NoPort"
    port = int(port)
    if port < 0 or port > 65535:
        raise OutOfRangeError(f"port {port} outside [0, 65535]")
    exact = _EXACT_PORTS.get(port)
    if exact is not None:
        return exact
    if port <= 1023:
        return "WellKnown"
    if port <= 49151:
        return "Registered"
    return "Dynamic"


def payload_entropy(payload: bytes) -> float:
    """Shannon entropy (base 2, bits per byte) of a payload; empty -> 0.0."""
    if not payload:
        return 0.0
    return kernels.shannon_entropy(bytes(payload))


def protocol_label(stack: LayerStack) -> str:
    """Name of the highest decoded or marked protocol in the stack."""
    for name in _MARKER_PRECEDENCE:
        if name in stack.app_markers:
            return name
    if stack.tcp is not None:
        return "TCP"
    if stack.udp is not None:
        return "UDP"
    if stack.icmp is not None:
        return "ICMP"
    if stack.arp is not None:
        return "ARP"
    if stack.ip is not None:
        return "IP"
    if stack.ethernet is not None:
        return "Ethernet"
    return ABSENT


class FeatureView:
    """Restricted read surface handed to extraction rules.

    Holds only behavior fields. Addresses and session counters are not
    copied in, so no rule can depend on them.
    """

    __slots__ = (
        "eth_size", "eth_type",
        "arp_opcode", "arp_hw_type", "arp_proto_type",
        "ip_version", "ip_header_len", "ip_tos", "ip_len", "ip_flags",
        "ip_frag_offset", "ip_ttl", "ip_protocol",
        "tcp_data_offset", "tcp_window", "tcp_urgent_ptr",
        "tcp_flag_fin", "tcp_flag_syn", "tcp_flag_rst", "tcp_flag_psh",
        "tcp_flag_ack", "tcp_flag_urg", "tcp_flag_ece", "tcp_flag_cwr",
        "tcp_opt_mss", "tcp_opt_window_scale", "tcp_opt_sack_permitted",
        "tcp_opt_timestamp",
        "udp_len",
        "icmp_type", "icmp_code",
        "has_arp", "has_ip", "has_tcp", "has_udp", "has_icmp",
        "payload", "markers", "protocol", "sport_class", "dport_class",
    )

    def __init__(self, stack: LayerStack):
        eth, arp, ip, tcp, udp, icmp = (
            stack.ethernet, stack.arp, stack.ip, stack.tcp, stack.udp, stack.icmp,
        )
        self.eth_size = eth.frame_size if eth else None
        self.eth_type = eth.ethertype if eth else None
        self.arp_opcode = arp.opcode if arp else None
        self.arp_hw_type = arp.hw_type if arp else None
        self.arp_proto_type = arp.proto_type if arp else None
        self.ip_version = ip.version if ip else None
        self.ip_header_len = ip.header_len if ip else None
        self.ip_tos = ip.tos if ip else None
        self.ip_len = ip.total_len if ip else None
        self.ip_flags = ip.flags if ip else None
        self.ip_frag_offset = ip.frag_offset if ip else None
        self.ip_ttl = ip.ttl if ip else None
        self.ip_protocol = ip.protocol_number if ip else None
        self.tcp_data_offset = tcp.data_offset if tcp else None
        self.tcp_window = tcp.window if tcp else None
        self.tcp_urgent_ptr = tcp.urgent_ptr if tcp else None
        self.tcp_flag_fin = tcp.flag_fin if tcp else False
        self.tcp_flag_syn = tcp.flag_syn if tcp else False
        self.tcp_flag_rst = tcp.flag_rst if tcp else False
        self.tcp_flag_psh = tcp.flag_psh if tcp else False
        self.tcp_flag_ack = tcp.flag_ack if tcp else False
        self.tcp_flag_urg = tcp.flag_urg if tcp else False
        self.tcp_flag_ece = tcp.flag_ece if tcp else False
        self.tcp_flag_cwr = tcp.flag_cwr if tcp else False
        self.tcp_opt_mss = tcp.options.mss if tcp else False
        self.tcp_opt_window_scale = tcp.options.window_scale if tcp else False
        self.tcp_opt_sack_permitted = tcp.options.sack_permitted if tcp else False
        self.tcp_opt_timestamp = tcp.options.timestamp if tcp else False
        self.udp_len = udp.length if udp else None
        self.icmp_type = icmp.type if icmp else None
        self.icmp_code = icmp.code if icmp else None
        self.has_arp = arp is not None
        self.has_ip = ip is not None
        self.has_tcp = tcp is not None
        self.has_udp = udp is not None
        self.has_icmp = icmp is not None
        self.payload = stack.payload
        self.markers = stack.app_markers
        self.protocol = protocol_label(stack)
        if tcp is not None:
            self.sport_class = classify_port(tcp.src_port)
            self.dport_class = classify_port(tcp.dst_port)
        elif udp is not None:
            self.sport_class = classify_port(udp.src_port)
            self.dport_class = classify_port(udp.dst_port)
        else:
            self.sport_class = classify_port(None)
            self.dport_class = classify_port(None)


def _num(attr: str) -> Callable[[FeatureView], float]:
    def rule(view: FeatureView) -> float:
        v = getattr(view, attr)
        return NUMERIC_SENTINEL if v is None else float(v)

    return rule


def _flag(attr: str) -> Callable[[FeatureView], bool]:
    def rule(view: FeatureView) -> bool:
        return bool(getattr(view, attr))

    return rule


def _marker(name: str) -> Callable[[FeatureView], bool]:
    def rule(view: FeatureView) -> bool:
        return name in view.markers

    return rule


def _ip_flag_bit(bit: int) -> Callable[[FeatureView], bool]:
    def rule(view: FeatureView) -> bool:
        return view.ip_flags is not None and bool(view.ip_flags & bit)

    return rule


RULE_TABLE: dict[str, Callable[[FeatureView], FeatureValue]] = {
    "eth.frame_size": _num("eth_size"),
    "eth.ethertype": _num("eth_type"),
    "arp.opcode": _num("arp_opcode"),
    "arp.hw_type": _num("arp_hw_type"),
    "arp.proto_type": _num("arp_proto_type"),
    "ip.version": _num("ip_version"),
    "ip.header_len": _num("ip_header_len"),
    "ip.tos": _num("ip_tos"),
    "ip.total_len": _num("ip_len"),
    "ip.flags": _num("ip_flags"),
    "ip.flag_df": _ip_flag_bit(0b010),
    "ip.flag_mf": _ip_flag_bit(0b001),
    "ip.frag_offset": _num("ip_frag_offset"),
    "ip.ttl": _num("ip_ttl"),
    "ip.protocol_number": _num("ip_protocol"),
    "tcp.data_offset": _num("tcp_data_offset"),
    "tcp.window": _num("tcp_window"),
    "tcp.urgent_ptr": _num("tcp_urgent_ptr"),
    "tcp.flag_fin": _flag("tcp_flag_fin"),
    "tcp.flag_syn": _flag("tcp_flag_syn"),
    "tcp.flag_rst": _flag("tcp_flag_rst"),
    "tcp.flag_psh": _flag("tcp_flag_psh"),
    "tcp.flag_ack": _flag("tcp_flag_ack"),
    "tcp.flag_urg": _flag("tcp_flag_urg"),
    "tcp.flag_ece": _flag("tcp_flag_ece"),
    "tcp.flag_cwr": _flag("tcp_flag_cwr"),
    "tcp.opt_mss": _flag("tcp_opt_mss"),
    "tcp.opt_window_scale": _flag("tcp_opt_window_scale"),
    "tcp.opt_sack_permitted": _flag("tcp_opt_sack_permitted"),
    "tcp.opt_timestamp": _flag("tcp_opt_timestamp"),
    "udp.length": _num("udp_len"),
    "icmp.type": _num("icmp_type"),
    "icmp.code": _num("icmp_code"),
    "present.arp": _flag("has_arp"),
    "present.ip": _flag("has_ip"),
    "present.tcp": _flag("has_tcp"),
    "present.udp": _flag("has_udp"),
    "present.icmp": _flag("has_icmp"),
    "payload.size": lambda v: float(len(v.payload)),
    "payload.entropy": lambda v: payload_entropy(v.payload),
    "proto.label": lambda v: v.protocol,
    "port.src_class": lambda v: v.sport_class,
    "port.dst_class": lambda v: v.dport_class,
    "marker.dns": _marker("DNS"),
    "marker.bootp": _marker("BOOTP"),
    "marker.http": _marker("HTTP"),
    "marker.https": _marker("HTTPS"),
    "marker.ntp": _marker("NTP"),
    "marker.ssdp": _marker("SSDP"),
    "marker.mdns": _marker("MDNS"),
    "marker.tls": _marker("TLS"),
    "marker.eapol": _marker("EAPOL"),
    "marker.llc": _marker("LLC"),
}

_NAME_RE = re.compile(r"^[A-Za-z][A-Za-z0-9_]*$")


@dataclass(frozen=True)
class CatalogueEntry:
    name: str
    kind: str
    rule_id: str


@dataclass(frozen=True)
class FeatureCatalogue:
    """Ordered, typed definition of every extractable feature."""

    version: str
    entries: tuple[CatalogueEntry, ...]

    def __post_init__(self):
        seen = set()
        for e in self.entries:
            if not _NAME_RE.match(e.name):
                raise CatalogueError(f"bad feature name {e.name!r}")
            if e.name in seen:
                raise CatalogueError(f"duplicate feature name {e.name!r}")
            seen.add(e.name)
            if e.kind not in KINDS:
                raise CatalogueError(f"{e.name}: unknown kind {e.kind!r}")
            if e.rule_id not in RULE_TABLE:
                raise CatalogueError(f"{e.name}: unknown rule {e.rule_id!r}")
        object.__setattr__(
            self, "_rules", tuple(RULE_TABLE[e.rule_id] for e in self.entries)
        )

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(e.name for e in self.entries)

    @property
    def kinds(self) -> tuple[str, ...]:
        return tuple(e.kind for e in self.entries)

    def __len__(self) -> int:
        return len(self.entries)


def extract_features(stack: LayerStack, catalogue: FeatureCatalogue) -> FeatureVector:
    """One value per catalogue entry, computed solely from the stack."""
    view = FeatureView(stack)
    return tuple(rule(view) for rule in catalogue._rules)


def parse_catalogue(lines: Iterable[str], default_version: str = "unversioned") -> FeatureCatalogue:
    """Parse a catalogue definition: `name,kind,rule_id` per line.

    Blank lines and `#` comments are skipped; an optional `version=<v>`
    directive names the catalogue.
    """
    version = default_version
    entries = []
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("version="):
            version = line.split("=", 1)[1].strip()
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 3:
            raise CatalogueError(f"line {lineno}: expected `name,kind,rule_id`, got {line!r}")
        entries.append(CatalogueEntry(*parts))
    if not entries:
        raise CatalogueError("catalogue defines no features")
    return FeatureCatalogue(version=version, entries=tuple(entries))


def load_catalogue(path: Union[str, Path]) -> FeatureCatalogue:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_catalogue(fh)


def default_catalogue() -> FeatureCatalogue:
    """The shipped default catalogue (version default-v1)."""
    text = resources.files("iotident.data").joinpath("catalogue_default.txt").read_text("utf-8")
    return parse_catalogue(text.splitlines())
