"""Semantic attribute extraction and cross-modal pool merging.

Attributes are short phrases pulled from each modality by the chat
backend, normalized, and merged into one deduplicated pool that keeps
per-attribute provenance (image, text, or both).
"""

import logging
import re
from dataclasses import dataclass
from enum import Enum

from .errors import EmptyPoolError, ValidationError
from .gateway import ChatMessage, ChatRequest, Gateway

log = logging.getLogger(__name__)


class Source(str, Enum):
    IMAGE = "image"
    TEXT = "text"
    BOTH = "both"


@dataclass(frozen=True)
class Attribute:
    """One normalized attribute phrase with its original surface forms."""

    text: str
    source: Source
    raw_forms: tuple[str, ...]


@dataclass(frozen=True)
class AttributePool:
    """Merged, deduplicated attribute set for one sample.

    ``n_image``/``n_text`` count the per-modality attributes before the
    union, so ``len(attributes) <= n_image + n_text`` always holds.
    """

    sample_id: str
    attributes: tuple[Attribute, ...]
    n_image: int
    n_text: int

    def texts(self) -> list[str]:
        return [a.text for a in self.attributes]

    def to_json(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "attributes": [
                {"text": a.text, "source": a.source.value, "raw_forms": list(a.raw_forms)}
                for a in self.attributes
            ],
            "n_image": self.n_image,
            "n_text": self.n_text,
        }

    @classmethod
    def from_json(cls, data: dict) -> "AttributePool":
        return cls(
            sample_id=data["sample_id"],
            attributes=tuple(
                Attribute(a["text"], Source(a["source"]), tuple(a["raw_forms"]))
                for a in data["attributes"]
            ),
            n_image=data["n_image"],
            n_text=data["n_text"],
        )


_WS = re.compile(r"\s+")
_TERMINAL_PUNCT = ".,;:!?。，；：！？、·"
_LIST_MARKER = re.compile(r"^\s*(?:[-*•]|\d+[.)、])\s*")
_SPLIT = re.compile(r"[,\n，、;；]")


def normalize_attribute(s: str) -> str:
    """Trim, casefold, collapse internal whitespace, drop end punctuation."""
    s = _WS.sub(" ", s.strip()).casefold()
    return s.rstrip(_TERMINAL_PUNCT + " ")


def parse_attribute_reply(reply: str) -> list[str]:
    """Split a newline- or comma-delimited reply into raw attribute items.

    List markers like "1." or "-" are stripped; empty items are dropped.
    """
    items = []
    for piece in _SPLIT.split(reply):
        piece = _LIST_MARKER.sub("", piece).strip()
        if piece:
            items.append(piece)
    return items


def extract_attributes(
    content: str,
    modality: Source,
    gateway: Gateway,
    prompt_template: str,
    model_id: str,
    max_attributes: int = 32,
    max_tokens: int = 256,
    request_tag: str = "",
) -> list[Attribute]:
    """Ask the backend for this modality's attributes and normalize them.

    ``content`` is the caption text or the image reference, substituted
    into the template's ``{input}`` placeholder; image requests also carry
    the reference as an image attachment. Duplicates (after normalization)
    collapse to the first occurrence; at most ``max_attributes`` survive.
    """
    if modality not in (Source.IMAGE, Source.TEXT):
        raise ValidationError(f"modality must be image or text, not {modality}")
    if "{input}" not in prompt_template:
        raise ValidationError("prompt template must contain the {input} placeholder")
    prompt = prompt_template.replace("{input}", content)
    message = ChatMessage(
        "user", prompt, image_ref=content if modality is Source.IMAGE else None
    )
    req = ChatRequest(
        model_id=model_id,
        messages=(message,),
        temperature=0.0,
        max_tokens=max_tokens,
        request_tag=request_tag or f"extract/{modality.value}",
    )
    reply = gateway.complete(req).content

    seen: dict[str, list[str]] = {}
    for raw in parse_attribute_reply(reply):
        text = normalize_attribute(raw)
        if not text:
            continue
        if text in seen:
            seen[text].append(raw)
        elif len(seen) < max_attributes:
            seen[text] = [raw]
    if not seen:
        log.warning("attribute extraction returned nothing (%s, %s)",
                    modality.value, request_tag or model_id)
        return []
    return [Attribute(t, modality, tuple(forms)) for t, forms in seen.items()]


def _edit_distance(a: str, b: str) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i]
        for j, cb in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def similarity_ratio(a: str, b: str) -> float:
    """Normalized edit-distance similarity: 1 - distance / max length."""
    if not a and not b:
        return 1.0
    return 1.0 - _edit_distance(a, b) / max(len(a), len(b))


def merge_pools(
    from_image: list[Attribute],
    from_text: list[Attribute],
    sample_id: str = "",
    fuzzy: bool = False,
    fuzzy_threshold: float = 0.9,
) -> AttributePool:
    """Union both modalities' attributes into one deduplicated pool.

    Image-derived attributes come first, then text-derived ones, each
    group in extraction order; an attribute present in both collapses to
    a single entry with source ``both``. With ``fuzzy`` enabled, a text
    attribute also merges into an image attribute whose normalized form
    is within ``fuzzy_threshold`` edit-distance similarity.
    """
    if not from_image and not from_text:
        raise EmptyPoolError(
            f"sample {sample_id or '<unknown>'}: both modalities produced "
            "zero attributes; completeness is undefined for an empty pool"
        )
    merged: dict[str, Attribute] = {}
    for attr in from_image:
        if attr.text in merged:
            existing = merged[attr.text]
            merged[attr.text] = Attribute(
                attr.text, Source.IMAGE, existing.raw_forms + attr.raw_forms
            )
        else:
            merged[attr.text] = Attribute(attr.text, Source.IMAGE, attr.raw_forms)

    def find_fuzzy(text: str) -> str | None:
        best, best_ratio = None, fuzzy_threshold
        for key in merged:
            ratio = similarity_ratio(text, key)
            if ratio >= best_ratio:
                best, best_ratio = key, ratio
        return best

    for attr in from_text:
        key = attr.text if attr.text in merged else (find_fuzzy(attr.text) if fuzzy else None)
        if key is not None:
            existing = merged[key]
            source = Source.BOTH if existing.source is Source.IMAGE else existing.source
            merged[key] = Attribute(key, source, existing.raw_forms + attr.raw_forms)
        else:
            merged[attr.text] = Attribute(attr.text, Source.TEXT, attr.raw_forms)

    return AttributePool(
        sample_id=sample_id,
        attributes=tuple(merged.values()),
        n_image=len(from_image),
        n_text=len(from_text),
    )
