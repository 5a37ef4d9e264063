#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
XML Document Model

Immutable element tree used as the substrate for every SOAP header, token
and signature in the toolkit. Provides:
- parse: UTF-8 bytes -> XmlDocument (lxml does the tokenizing; the result is
  converted into the immutable model and checked against the supported subset)
- serialize: XmlDocument -> UTF-8 bytes (no XML declaration, `<x/>` for
  empty elements, attribute order as stored)
- canonicalize: the project's bit-exact canonical form used for digests and
  signatures

Canonical form rules:
  1. UTF-8 output.
  2. Attributes sorted by (namespace_uri, local_name) by code point.
  3. Namespace declarations emitted on the element where first visibly used
     (element or attribute name), sorted by prefix, before the attributes.
  4. Empty elements written as start tag + end tag.
  5. Text escapes & < > CR; attribute values additionally escape " TAB LF.
  6. Text otherwise byte-preserved.
"""

import logging
import re
from dataclasses import dataclass, replace
from typing import Dict, Iterable, Iterator, List, Mapping, Optional, Sequence, Tuple, Union

from lxml import etree

from src.security.constants import XML_NS
from src.security.errors import MalformedXml, UnsupportedConstruct

logger = logging.getLogger(__name__)

_NCNAME_RE = re.compile(r"^[^\W\d][\w.\-]*$", re.UNICODE)


def is_ncname(value: str) -> bool:
    return bool(value) and ":" not in value and _NCNAME_RE.match(value) is not None


@dataclass(frozen=True)
class XmlName:
    namespace_uri: str
    local_name: str
    prefix: str = ""

    def __post_init__(self):
        if not is_ncname(self.local_name):
            raise ValueError(f"invalid local name: {self.local_name!r}")
        if self.prefix and not is_ncname(self.prefix):
            raise ValueError(f"invalid prefix: {self.prefix!r}")
        if self.prefix and not self.namespace_uri:
            raise ValueError(f"prefix {self.prefix!r} requires a namespace URI")

    @property
    def qualified(self) -> str:
        return f"{self.prefix}:{self.local_name}" if self.prefix else self.local_name

    @property
    def key(self) -> Tuple[str, str]:
        return (self.namespace_uri, self.local_name)

    def matches(self, namespace_uri: str, local_name: str) -> bool:
        return self.namespace_uri == namespace_uri and self.local_name == local_name


@dataclass(frozen=True)
class XmlElement:
    name: XmlName
    attributes: Tuple[Tuple[XmlName, str], ...] = ()
    namespace_declarations: Tuple[Tuple[str, str], ...] = ()
    children: Tuple[Union["XmlElement", str], ...] = ()

    def __post_init__(self):
        # Accept lists from callers but store tuples.
        object.__setattr__(self, "attributes", tuple((n, v) for n, v in self.attributes))
        object.__setattr__(self, "namespace_declarations", tuple(self.namespace_declarations))
        object.__setattr__(self, "children", tuple(self.children))

        seen = set()
        for attr_name, value in self.attributes:
            if not isinstance(value, str):
                raise TypeError(f"attribute {attr_name.qualified} value must be str")
            if attr_name.key in seen:
                raise ValueError(f"duplicate attribute {attr_name.qualified}")
            seen.add(attr_name.key)
        for child in self.children:
            if not isinstance(child, (XmlElement, str)):
                raise TypeError(f"unsupported child node {type(child).__name__}")

    # Navigation helpers

    @property
    def element_children(self) -> List["XmlElement"]:
        return [c for c in self.children if isinstance(c, XmlElement)]

    @property
    def text(self) -> str:
        """Concatenated direct text children."""
        return "".join(c for c in self.children if isinstance(c, str))

    def find(self, namespace_uri: str, local_name: str) -> Optional["XmlElement"]:
        for child in self.element_children:
            if child.name.matches(namespace_uri, local_name):
                return child
        return None

    def find_all(self, namespace_uri: str, local_name: str) -> List["XmlElement"]:
        return [c for c in self.element_children if c.name.matches(namespace_uri, local_name)]

    def get(self, namespace_uri: str, local_name: str, default: Optional[str] = None) -> Optional[str]:
        for attr_name, value in self.attributes:
            if attr_name.matches(namespace_uri, local_name):
                return value
        return default

    def iter(self) -> Iterator["XmlElement"]:
        """Depth-first, document order, self included."""
        yield self
        for child in self.element_children:
            yield from child.iter()

    def with_attribute(self, attr_name: XmlName, value: str) -> "XmlElement":
        kept = [(n, v) for n, v in self.attributes if n.key != attr_name.key]
        kept.append((attr_name, value))
        return replace(self, attributes=tuple(kept))

    def with_children(self, children: Iterable[Union["XmlElement", str]]) -> "XmlElement":
        return replace(self, children=tuple(children))

    def structurally_equals(self, other: object) -> bool:
        """Namespace-aware equality that ignores attribute order, prefixes and
        where namespace declarations happen to sit."""
        if not isinstance(other, XmlElement):
            return False
        if self.name.key != other.name.key:
            return False
        mine = {(n.key, v) for n, v in self.attributes}
        theirs = {(n.key, v) for n, v in other.attributes}
        if mine != theirs:
            return False
        left, right = _merged_children(self), _merged_children(other)
        if len(left) != len(right):
            return False
        for a, b in zip(left, right):
            if isinstance(a, str) or isinstance(b, str):
                if a != b:
                    return False
            elif not a.structurally_equals(b):
                return False
        return True


@dataclass(frozen=True)
class XmlDocument:
    root: XmlElement

    def structurally_equals(self, other: object) -> bool:
        return isinstance(other, XmlDocument) and self.root.structurally_equals(other.root)


def element(namespace_uri: str, local_name: str, prefix: str = "",
            attributes: Sequence[Tuple[XmlName, str]] = (),
            children: Sequence[Union[XmlElement, str]] = (),
            namespace_declarations: Sequence[Tuple[str, str]] = ()) -> XmlElement:
    return XmlElement(
        name=XmlName(namespace_uri, local_name, prefix),
        attributes=tuple(attributes),
        namespace_declarations=tuple(namespace_declarations),
        children=tuple(children),
    )


def text_element(namespace_uri: str, local_name: str, prefix: str, text: str,
                 attributes: Sequence[Tuple[XmlName, str]] = ()) -> XmlElement:
    return element(namespace_uri, local_name, prefix, attributes=attributes,
                   children=(text,) if text else ())


def _merged_children(elem: XmlElement) -> List[Union[XmlElement, str]]:
    merged: List[Union[XmlElement, str]] = []
    for child in elem.children:
        if isinstance(child, str):
            if not child:
                continue
            if merged and isinstance(merged[-1], str):
                merged[-1] = merged[-1] + child
                continue
        merged.append(child)
    return merged


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

def _make_parser() -> etree.XMLParser:
    return etree.XMLParser(
        resolve_entities=False,
        no_network=True,
        load_dtd=False,
        remove_comments=False,
        remove_pis=False,
        strip_cdata=False,
        huge_tree=False,
    )


def parse(data: bytes) -> XmlDocument:
    """Parse UTF-8 bytes into an XmlDocument.

    Raises MalformedXml for syntax errors and UnsupportedConstruct for DTDs,
    comments, processing instructions and CDATA sections.
    """
    if not isinstance(data, (bytes, bytearray)):
        raise TypeError("parse() expects bytes")
    data = bytes(data)
    if b"<![CDATA[" in data:
        raise UnsupportedConstruct("CDATA sections are not supported")

    try:
        root = etree.fromstring(data, _make_parser())
    except etree.XMLSyntaxError as e:
        raise MalformedXml(e.msg or str(e), position=getattr(e, "position", None)) from e
    except ValueError as e:
        raise MalformedXml(str(e)) from e

    if root is None:
        raise MalformedXml("document has no root element")
    if root.getroottree().docinfo.doctype:
        raise UnsupportedConstruct("DTD declarations are not supported")
    siblings = list(root.itersiblings(preceding=True)) + list(root.itersiblings())
    if siblings:
        raise UnsupportedConstruct(f"{_node_kind(siblings[0])} outside the root element is not supported")
    for node in root.iter():
        if not isinstance(node.tag, str):
            raise UnsupportedConstruct(f"{_node_kind(node)} is not supported")

    return XmlDocument(root=_from_lxml(root, {}))


def _node_kind(node) -> str:
    if node.tag is etree.Comment:
        return "comment"
    if node.tag is etree.PI:
        return "processing instruction"
    if node.tag is etree.Entity:
        return "entity reference"
    return "node"


def _make_name(namespace_uri: str, local_name: str, prefix: str) -> XmlName:
    try:
        return XmlName(namespace_uri, local_name, prefix)
    except ValueError as e:
        raise MalformedXml(str(e)) from e


def _attribute_prefix(node, namespace_uri: str) -> str:
    if not namespace_uri:
        return ""
    if namespace_uri == XML_NS:
        return "xml"
    candidates = sorted(p for p, u in node.nsmap.items() if p and u == namespace_uri)
    if not candidates:
        raise MalformedXml(f"no prefix bound to attribute namespace {namespace_uri}")
    return candidates[0]


def _from_lxml(node, parent_nsmap: Mapping[Optional[str], str]) -> XmlElement:
    qname = etree.QName(node)
    name = _make_name(qname.namespace or "", qname.localname, node.prefix or "")

    attributes = []
    for key, value in node.attrib.items():
        attr_qname = etree.QName(key)
        namespace_uri = attr_qname.namespace or ""
        attributes.append((_make_name(namespace_uri, attr_qname.localname,
                                      _attribute_prefix(node, namespace_uri)), value))

    nsmap = node.nsmap
    declarations = [(prefix or "", uri) for prefix, uri in nsmap.items()
                    if parent_nsmap.get(prefix) != uri]

    children: List[Union[XmlElement, str]] = []
    if node.text:
        children.append(node.text)
    for child in node:
        children.append(_from_lxml(child, nsmap))
        if child.tail:
            children.append(child.tail)

    return XmlElement(name=name, attributes=tuple(attributes),
                      namespace_declarations=tuple(declarations), children=tuple(children))


# ---------------------------------------------------------------------------
# Writing (shared by serialize and canonicalize)
# ---------------------------------------------------------------------------

def escape_text(value: str) -> str:
    return (value.replace("&", "&amp;").replace("<", "&lt;")
            .replace(">", "&gt;").replace("\r", "&#xD;"))


def escape_attribute(value: str) -> str:
    return (escape_text(value).replace('"', "&quot;")
            .replace("\t", "&#x9;").replace("\n", "&#xA;"))


def _used_namespaces(elem: XmlElement) -> List[Tuple[str, str]]:
    """(prefix, uri) pairs visibly used by the element name and attributes."""
    used: Dict[str, str] = {elem.name.prefix: elem.name.namespace_uri}
    for attr_name, _ in elem.attributes:
        if attr_name.local_name == "xmlns" and not attr_name.prefix:
            raise UnsupportedConstruct("xmlns must not be modelled as an attribute")
        if not attr_name.namespace_uri:
            continue
        if not attr_name.prefix:
            raise UnsupportedConstruct(
                f"namespaced attribute {attr_name.local_name} needs a prefix")
        bound = used.get(attr_name.prefix)
        if bound is not None and bound != attr_name.namespace_uri:
            raise UnsupportedConstruct(f"prefix {attr_name.prefix} bound to two namespaces")
        used[attr_name.prefix] = attr_name.namespace_uri
    return [(p, u) for p, u in used.items() if p != "xml"]


def _declaration(prefix: str, uri: str) -> str:
    attr = f"xmlns:{prefix}" if prefix else "xmlns"
    return f' {attr}="{escape_attribute(uri)}"'


def _write(elem: XmlElement, scope: Dict[str, str], out: List[str]) -> None:
    scope = dict(scope)
    declarations = []
    for prefix, uri in elem.namespace_declarations:
        declarations.append((prefix, uri))
        scope[prefix] = uri
    for prefix, uri in _used_namespaces(elem):
        if scope.get(prefix, "") != uri:
            declarations.append((prefix, uri))
            scope[prefix] = uri

    tag = elem.name.qualified
    out.append("<" + tag)
    out.extend(_declaration(p, u) for p, u in declarations)
    for attr_name, value in elem.attributes:
        out.append(f' {attr_name.qualified}="{escape_attribute(value)}"')
    if not elem.children:
        out.append("/>")
        return
    out.append(">")
    for child in elem.children:
        if isinstance(child, str):
            out.append(escape_text(child))
        else:
            _write(child, scope, out)
    out.append(f"</{tag}>")


def serialize_element(elem: XmlElement, in_scope: Sequence[Tuple[str, str]] = ()) -> bytes:
    out: List[str] = []
    _write(elem, dict(in_scope), out)
    return "".join(out).encode("utf-8")


def serialize(doc: XmlDocument) -> bytes:
    return serialize_element(doc.root)


def _write_canonical(elem: XmlElement, rendered: Dict[str, str], out: List[str]) -> None:
    rendered = dict(rendered)
    declarations = []
    for prefix, uri in _used_namespaces(elem):
        if rendered.get(prefix, "") != uri:
            declarations.append((prefix, uri))
            rendered[prefix] = uri
    declarations.sort(key=lambda d: d[0])
    attributes = sorted(elem.attributes, key=lambda a: (a[0].namespace_uri, a[0].local_name))

    tag = elem.name.qualified
    out.append("<" + tag)
    out.extend(_declaration(p, u) for p, u in declarations)
    for attr_name, value in attributes:
        out.append(f' {attr_name.qualified}="{escape_attribute(value)}"')
    out.append(">")
    for child in elem.children:
        if isinstance(child, str):
            out.append(escape_text(child))
        else:
            _write_canonical(child, rendered, out)
    out.append(f"</{tag}>")


def canonicalize(elem: XmlElement, inherited_namespaces: Sequence[Tuple[str, str]] = ()) -> bytes:
    """Canonical bytes of elem.

    inherited_namespaces lists the declarations already rendered by output
    ancestors; they are not repeated. Signing apexes pass none.
    """
    out: List[str] = []
    _write_canonical(elem, dict(inherited_namespaces), out)
    return "".join(out).encode("utf-8")
