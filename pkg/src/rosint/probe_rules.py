"""Data-driven probe rules: the stage-3 XML-RPC matcher and Rosbridge service names."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path


@dataclass
class XmlRpcMatcher:
    statuses: tuple = (400, 405, 501)
    body_markers: tuple = ("<?xml",)
    content_types: tuple = ("text/xml",)
    server_tokens: tuple = ("BaseHTTP", "xmlrpc", "XML-RPC")

    def matches(self, status: int, headers: dict, body: bytes) -> bool:
        if status not in self.statuses:
            return False
        text = body.decode("latin-1")
        if any(marker in text for marker in self.body_markers):
            return True
        ctype = headers.get("content-type", "").lower()
        if any(ct.lower() in ctype for ct in self.content_types):
            return True
        server = headers.get("server", "").lower()
        return any(tok.lower() in server for tok in self.server_tokens)


@dataclass
class BridgeServices:
    # first entry is preferred; later ones are alternates for older rosapi builds
    topic_list_services: tuple = ("/rosapi/topics",)
    param_name_services: tuple = ("/rosapi/get_param_names",)

    def allowed(self) -> frozenset:
        return frozenset(self.topic_list_services) | frozenset(self.param_name_services)


@dataclass
class ProbeRules:
    xmlrpc: XmlRpcMatcher = field(default_factory=XmlRpcMatcher)
    rosbridge: BridgeServices = field(default_factory=BridgeServices)


def load_probe_rules(path=None) -> ProbeRules:
    if path is None:
        text = resources.files("rosint.data").joinpath("probe_rules.json").read_text()
    else:
        text = Path(path).read_text()
    raw = json.loads(text)
    xml = raw.get("xmlrpc", {})
    bridge = raw.get("rosbridge", {})
    return ProbeRules(
        XmlRpcMatcher(**{k: tuple(v) for k, v in xml.items()}),
        BridgeServices(**{k: tuple(v) for k, v in bridge.items()}),
    )
