"""User-supplied configuration profile: app id, performance text, traffic, packet format."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field


@dataclass
class Profile:
    app: str = ""
    performance: dict = field(default_factory=dict)
    traffic_frequency: dict = field(default_factory=dict)  # client id -> packets/sec
    packet_format: list = field(default_factory=list)      # [(field name, bits)]
    network: str = ""

    def validate(self) -> None:
        for name, bits in self.packet_format:
            if bits <= 0:
                raise ValueError(f"non-positive width for field {name!r}")
        for client, pps in self.traffic_frequency.items():
            if pps < 0:
                raise ValueError(f"negative traffic frequency for {client!r}")


_RATE_RE = re.compile(r"^\s*([0-9.]+)\s*([kKmMgG]?)pps\s*$")
_RATE_SCALE = {"": 1.0, "k": 1e3, "m": 1e6, "g": 1e9}


def _parse_rate(value) -> float:
    if isinstance(value, (int, float)):
        return float(value)
    m = _RATE_RE.match(str(value))
    if not m:
        raise ValueError(f"cannot parse traffic rate {value!r}")
    return float(m.group(1)) * _RATE_SCALE[m.group(2).lower()]


def _parse_width(value) -> int:
    m = re.match(r"^bit_(\d+)$", str(value))
    if not m:
        raise ValueError(f"cannot parse field width {value!r}")
    return int(m.group(1))


def load_profile(path_or_dict) -> Profile:
    """Load a profile from a JSON file path or an already-parsed dict.

    Top-level keys: app, performance, "traffic frequency", packet_format.
    Inside packet_format, the "network" entry names the standard stack
    (e.g. ethernet/ipv4/udp); every other entry is a custom header whose
    fields appear, in declaration order, in the hdr.* namespace.
    """
    if isinstance(path_or_dict, dict):
        data = path_or_dict
    else:
        with open(path_or_dict) as fh:
            data = json.load(fh)
    prof = Profile(app=data.get("app", ""))
    perf = data.get("performance", {})
    prof.performance = perf if isinstance(perf, dict) else {"objective": perf}
    for client, rate in data.get("traffic frequency", data.get("traffic_frequency", {})).items():
        prof.traffic_frequency[client] = _parse_rate(rate)
    for header, body in data.get("packet_format", {}).items():
        if header == "network":
            prof.network = str(body)
            continue
        for fname, width in body.items():
            prof.packet_format.append((f"hdr.{fname}", _parse_width(width)))
    prof.validate()
    return prof
