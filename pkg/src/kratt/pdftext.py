"""Minimal PDF text-layer extraction, page by page.

Covers straightforward PDFs: uncompressed or FlateDecode content streams with
text drawn through Tj/TJ/' operators and Latin-1/WinAnsi-encoded literals.
Scanned-image PDFs (pages without a text layer) are detected and rejected by
the caller. This is deliberately not a general PDF parser; no OCR, no CID
fonts, no encryption.
"""

from __future__ import annotations

import base64
import re
import zlib
from pathlib import Path


class PdfTextError(ValueError):
    """The file is not a PDF we can pull a text layer from."""


_OBJ = re.compile(rb"(\d+)\s+(\d+)\s+obj\b(.*?)endobj", re.DOTALL)
_STREAM = re.compile(rb"stream\r?\n(.*?)(?:\r?\n)?endstream", re.DOTALL)
_REF = re.compile(rb"(\d+)\s+\d+\s+R")
_FILTER = re.compile(rb"/Filter\s*(\[[^\]]*\]|/\w+)")
_NAME = re.compile(rb"/(\w+)")

_SUPPORTED_FILTERS = {b"ASCII85Decode", b"FlateDecode"}


def _objects(data: bytes) -> dict[int, bytes]:
    return {int(m.group(1)): m.group(3) for m in _OBJ.finditer(data)}


def _dict_part(body: bytes) -> bytes:
    # The object's top-level dictionary, before any stream payload.
    end = body.find(b"stream")
    return body[:end] if end != -1 else body


def _stream_payload(body: bytes) -> bytes | None:
    m = _STREAM.search(body)
    if m is None:
        return None
    payload = m.group(1)
    filter_match = _FILTER.search(_dict_part(body))
    if not filter_match:
        return payload
    names = _NAME.findall(filter_match.group(1))
    unsupported = [n for n in names if n not in _SUPPORTED_FILTERS]
    if unsupported:
        raise PdfTextError(
            f"unsupported stream filter {unsupported[0].decode()!r}")
    try:
        for name in names:  # applied in declared order
            if name == b"ASCII85Decode":
                payload = base64.a85decode(payload.strip(), adobe=True)
            elif name == b"FlateDecode":
                payload = zlib.decompress(payload)
    except (ValueError, zlib.error) as exc:
        raise PdfTextError(f"cannot decode content stream: {exc}") from exc
    return payload


def _refs_after(key: bytes, d: bytes) -> list[int]:
    pos = d.find(key)
    if pos == -1:
        return []
    tail = d[pos + len(key):]
    array_match = re.match(rb"\s*\[(.*?)\]", tail, re.DOTALL)
    if array_match:
        return [int(m.group(1)) for m in _REF.finditer(array_match.group(1))]
    single = _REF.match(tail.lstrip())
    return [int(single.group(1))] if single else []


def _page_order(objects: dict[int, bytes]) -> list[int]:
    """Document-order page object numbers via the page tree; falls back to
    file order of /Type /Page objects when the tree is unresolvable."""
    roots = [num for num, body in objects.items()
             if b"/Type" in body and b"/Catalog" in _dict_part(body)]
    page_type = re.compile(rb"/Type\s*/Page(?![a-zA-Z])")

    def walk(num: int, seen: set[int]) -> list[int]:
        if num in seen or num not in objects:
            return []
        seen.add(num)
        d = _dict_part(objects[num])
        if page_type.search(d):
            return [num]
        out: list[int] = []
        for kid in _refs_after(b"/Kids", d):
            out.extend(walk(kid, seen))
        return out

    for root in sorted(roots):
        for pages_ref in _refs_after(b"/Pages", _dict_part(objects[root])):
            ordered = walk(pages_ref, set())
            if ordered:
                return ordered

    return sorted(num for num, body in objects.items()
                  if page_type.search(_dict_part(body)))


_ESCAPES = {
    b"n": b"\n", b"r": b"\r", b"t": b"\t", b"b": b"\b", b"f": b"\f",
    b"(": b"(", b")": b")", b"\\": b"\\",
}


def _decode_literal(raw: bytes) -> str:
    out = bytearray()
    i = 0
    while i < len(raw):
        ch = raw[i:i + 1]
        if ch == b"\\":
            nxt = raw[i + 1:i + 2]
            if nxt in _ESCAPES:
                out += _ESCAPES[nxt]
                i += 2
                continue
            octal = re.match(rb"\\([0-7]{1,3})", raw[i:])
            if octal:
                out.append(int(octal.group(1), 8))
                i += 1 + len(octal.group(1))
                continue
            i += 1
            continue
        out += ch
        i += 1
    return out.decode("cp1252", errors="replace")


_TEXT_TOKEN = re.compile(
    rb"\((?P<lit>(?:\\.|[^\\()])*)\)\s*(?:Tj|')"   # (string) Tj   (string) '
    rb"|\[(?P<arr>(?:\\.|[^\]])*)\]\s*TJ"           # [ ... ] TJ
    rb"|(?P<nl>T\*|TD|Td|ET)",                      # line / block breaks
    re.DOTALL)

_ARR_LITERAL = re.compile(rb"\((?:\\.|[^\\()])*\)", re.DOTALL)


def _content_text(stream: bytes) -> str:
    parts: list[str] = []
    for m in _TEXT_TOKEN.finditer(stream):
        if m.group("nl") is not None:
            if parts and not parts[-1].endswith("\n"):
                parts.append("\n")
        elif m.group("lit") is not None:
            parts.append(_decode_literal(m.group("lit")))
        else:
            for lit in _ARR_LITERAL.findall(m.group("arr")):
                parts.append(_decode_literal(lit[1:-1]))
    return "".join(parts).strip()


def extract_pages(path: str | Path) -> list[str]:
    """Extract per-page text from a PDF's text layer, in document page order.

    Raises PdfTextError for non-PDF input or when no page carries extractable
    text (e.g. scanned images).
    """
    data = Path(path).read_bytes()
    if not data.startswith(b"%PDF-"):
        raise PdfTextError(f"{path}: not a PDF file")
    objects = _objects(data)
    page_nums = _page_order(objects)
    if not page_nums:
        raise PdfTextError(f"{path}: no pages found")

    pages: list[str] = []
    for num in page_nums:
        d = _dict_part(objects[num])
        text_parts: list[str] = []
        for content_ref in _refs_after(b"/Contents", d):
            body = objects.get(content_ref)
            if body is None:
                continue
            payload = _stream_payload(body)
            if payload:
                text_parts.append(_content_text(payload))
        pages.append("\n".join(p for p in text_parts if p))

    if not any(pages):
        raise PdfTextError(
            f"{path}: no extractable text layer on any page "
            "(scanned-image PDFs are not supported; OCR is out of scope)")
    return pages
