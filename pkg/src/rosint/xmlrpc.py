"""Minimal XML-RPC value codec for the subset spoken by the ROS master.

Values are plain Python objects: ``int``, ``bool``, ``str``, ``float``,
``list`` and ``dict`` with string keys.
"""

from __future__ import annotations

import math
import re
import xml.etree.ElementTree as ET

from .errors import MalformedResponse, XmlRpcFault

INT32_MIN, INT32_MAX = -(1 << 31), (1 << 31) - 1
INT64_MIN, INT64_MAX = -(1 << 63), (1 << 63) - 1

_ESCAPES = {"&": "&amp;", "<": "&lt;", ">": "&gt;", "\r": "&#13;"}
_NOT_XML_CHAR = re.compile("[^\t\n\r\x20-\ud7ff\ue000-\ufffd\U00010000-\U0010ffff]")


def _escape(text: str) -> str:
    bad = _NOT_XML_CHAR.search(text)
    if bad:
        raise ValueError(f"character {bad.group()!r} cannot appear in XML")
    # \r must be a character reference or XML parsers normalise it to \n
    return "".join(_ESCAPES.get(ch, ch) for ch in text)


def _dump(value, out: list) -> None:
    if isinstance(value, bool):
        out.append(f"<value><boolean>{int(value)}</boolean></value>")
    elif isinstance(value, int):
        if INT32_MIN <= value <= INT32_MAX:
            out.append(f"<value><int>{value}</int></value>")
        elif INT64_MIN <= value <= INT64_MAX:
            out.append(f"<value><i8>{value}</i8></value>")
        else:
            raise OverflowError(f"integer out of XML-RPC range: {value}")
    elif isinstance(value, float):
        if not math.isfinite(value):
            raise ValueError("XML-RPC cannot encode non-finite doubles")
        out.append(f"<value><double>{value!r}</double></value>")
    elif isinstance(value, str):
        out.append(f"<value><string>{_escape(value)}</string></value>")
    elif isinstance(value, (list, tuple)):
        out.append("<value><array><data>")
        for item in value:
            _dump(item, out)
        out.append("</data></array></value>")
    elif isinstance(value, dict):
        out.append("<value><struct>")
        for key, item in value.items():
            if not isinstance(key, str):
                raise TypeError(f"struct keys must be strings, got {type(key).__name__}")
            out.append(f"<member><name>{_escape(key)}</name>")
            _dump(item, out)
            out.append("</member>")
        out.append("</struct></value>")
    else:
        raise TypeError(f"cannot encode {type(value).__name__} as XML-RPC")


def dumps_value(value) -> str:
    out: list[str] = []
    _dump(value, out)
    return "".join(out)


def dumps_call(method: str, params) -> bytes:
    body = ["<?xml version='1.0'?>\n<methodCall>\n<methodName>", _escape(method),
            "</methodName>\n<params>\n"]
    for p in params:
        body.append("<param>\n")
        _dump(p, body)
        body.append("\n</param>\n")
    body.append("</params>\n</methodCall>\n")
    return "".join(body).encode("utf-8")


def dumps_response(value) -> bytes:
    body = ["<?xml version='1.0'?>\n<methodResponse>\n<params>\n<param>\n"]
    _dump(value, body)
    body.append("\n</param>\n</params>\n</methodResponse>\n")
    return "".join(body).encode("utf-8")


def dumps_fault(code: int, message: str) -> bytes:
    body = ["<?xml version='1.0'?>\n<methodResponse>\n<fault>\n"]
    _dump({"faultCode": code, "faultString": message}, body)
    body.append("\n</fault>\n</methodResponse>\n")
    return "".join(body).encode("utf-8")


def _parse_document(data: bytes | str) -> ET.Element:
    raw = data.encode("utf-8") if isinstance(data, str) else data
    # untrusted peers: refuse entity declarations outright
    if b"<!DOCTYPE" in raw or b"<!ENTITY" in raw:
        raise MalformedResponse("DTDs are not accepted in XML-RPC documents")
    try:
        return ET.fromstring(raw)
    except ET.ParseError as exc:
        raise MalformedResponse(f"invalid XML: {exc}") from None


def _parse_value(elem: ET.Element):
    children = list(elem)
    if not children:
        return elem.text or ""
    if len(children) != 1:
        raise MalformedResponse("value element must hold exactly one typed child")
    node = children[0]
    tag = node.tag
    text = node.text or ""
    try:
        if tag in ("int", "i4", "i8"):
            return int(text.strip())
        if tag == "boolean":
            flag = text.strip()
            if flag not in ("0", "1"):
                raise MalformedResponse(f"bad boolean {flag!r}")
            return flag == "1"
        if tag == "double":
            return float(text.strip())
    except ValueError:
        raise MalformedResponse(f"bad {tag} literal {text!r}") from None
    if tag == "string":
        return text
    if tag == "array":
        data = node.find("data")
        if data is None:
            raise MalformedResponse("array without data element")
        return [_parse_value(v) for v in data.findall("value")]
    if tag == "struct":
        result = {}
        for member in node.findall("member"):
            name = member.find("name")
            value = member.find("value")
            if name is None or value is None:
                raise MalformedResponse("struct member missing name or value")
            result[name.text or ""] = _parse_value(value)
        return result
    raise MalformedResponse(f"unsupported XML-RPC type <{tag}>")


def loads_value(text: str):
    return _parse_value(_parse_document(text))


def loads_response(data: bytes | str):
    """Parse a methodResponse; ``<fault>`` documents raise :class:`XmlRpcFault`."""
    root = _parse_document(data)
    if root.tag != "methodResponse":
        raise MalformedResponse(f"expected methodResponse, got <{root.tag}>")
    fault = root.find("fault/value")
    if fault is not None:
        detail = _parse_value(fault)
        if not isinstance(detail, dict):
            raise MalformedResponse("fault payload must be a struct")
        raise XmlRpcFault(detail.get("faultCode"), detail.get("faultString", ""))
    value = root.find("params/param/value")
    if value is None:
        raise MalformedResponse("methodResponse carries no value")
    return _parse_value(value)


def loads_call(data: bytes | str):
    root = _parse_document(data)
    if root.tag != "methodCall":
        raise MalformedResponse(f"expected methodCall, got <{root.tag}>")
    name = root.findtext("methodName")
    if not name:
        raise MalformedResponse("methodCall without methodName")
    params = [_parse_value(v) for v in root.findall("params/param/value")]
    return name.strip(), params
