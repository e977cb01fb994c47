"""Sidebar layout, patch attachment, and trigger stamping.

A frame is split into an L-shaped sidebar (top band plus left band, both
``patch_width`` pixels thick) and the remaining image region. Composition
shrinks the original image into the image region and writes constant patch
pixels into the sidebar; a trigger is stamped afterwards, strictly inside the
image region. Everything is differentiable with respect to patch pixels so
the same code path serves optimization, evaluation, and finite-difference
checks.

Patch pixels are stored as the L-shaped mask flattened in row-major order.
On disk a patch is a lossless 8-bit PNG of the full frame with the image
region zeroed, plus a JSON sidecar describing the layout.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

from .errors import BatchError, InputShapeError, LayoutError, PlacementError, StateError
from .seeding import torch_generator

PATCH_FORMAT_VERSION = 1
MASK_NAME = "L-sidebar"


@dataclass(frozen=True)
class Layout:
    """Frame geometry: where the sidebar lives and where the image goes."""

    frame_height: int
    frame_width: int
    patch_width: int

    def __post_init__(self) -> None:
        h, w, pw = self.frame_height, self.frame_width, self.patch_width
        if h <= 0 or w <= 0:
            raise LayoutError(f"frame must be positive, got {h}x{w}")
        if not 0 < pw < min(h, w):
            raise LayoutError(
                f"patch_width must satisfy 0 < patch_width < min(H, W)={min(h, w)}, got {pw}"
            )

    @property
    def image_height(self) -> int:
        return self.frame_height - self.patch_width

    @property
    def image_width(self) -> int:
        return self.frame_width - self.patch_width

    @property
    def patch_pixel_count(self) -> int:
        return self.frame_height * self.frame_width - self.image_height * self.image_width

    def patch_mask(self) -> torch.Tensor:
        """Boolean (H, W) mask of the sidebar: rows < w or cols < w."""
        mask = torch.zeros(self.frame_height, self.frame_width, dtype=torch.bool)
        mask[: self.patch_width, :] = True
        mask[:, : self.patch_width] = True
        return mask

    def to_dict(self) -> dict:
        return {
            "frame_height": self.frame_height,
            "frame_width": self.frame_width,
            "patch_width": self.patch_width,
        }

    @staticmethod
    def from_dict(payload: dict) -> "Layout":
        return Layout(
            frame_height=int(payload["frame_height"]),
            frame_width=int(payload["frame_width"]),
            patch_width=int(payload["patch_width"]),
        )


@dataclass
class Patch:
    """Constant sidebar content: (n_pixels, 3) values in [0, 1], row-major."""

    pixels: torch.Tensor
    layout: Layout
    metadata: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        expected = (self.layout.patch_pixel_count, 3)
        if tuple(self.pixels.shape) != expected:
            raise InputShapeError(
                f"patch pixels must have shape {expected}, got {tuple(self.pixels.shape)}"
            )
        values = self.pixels.detach()
        lo, hi = float(values.min()), float(values.max())
        if lo < -1e-6 or hi > 1 + 1e-6:
            raise InputShapeError(f"patch values must lie in [0, 1], got [{lo}, {hi}]")

    def as_frame(self) -> torch.Tensor:
        """Render to a full (3, H, W) canvas with the image region zeroed."""
        canvas = torch.zeros(
            3, self.layout.frame_height, self.layout.frame_width, dtype=self.pixels.dtype
        )
        canvas[:, self.layout.patch_mask()] = self.pixels.t()
        return canvas

    def quantized_canvas(self) -> np.ndarray:
        """8-bit (H, W, 3) canvas; this is the canonical serialized form."""
        canvas = self.as_frame().detach().clamp(0, 1).numpy()
        return np.floor(canvas * 255.0 + 0.5).astype(np.uint8).transpose(1, 2, 0)

    def fingerprint(self) -> str:
        """SHA-256 of the quantized canvas bytes."""
        return hashlib.sha256(self.quantized_canvas().tobytes()).hexdigest()


def random_patch(layout: Layout, seed: int, dtype: torch.dtype = torch.float32) -> Patch:
    gen = torch_generator(seed, "patch-init")
    pixels = torch.rand(layout.patch_pixel_count, 3, generator=gen, dtype=torch.float32)
    return Patch(pixels=pixels.to(dtype), layout=layout)


TRIGGER_KINDS = ("square", "brightness")
PLACEMENTS = ("adjacent", "fixed", "random")


@dataclass(frozen=True)
class TriggerSpec:
    """What the trigger looks like and where it goes.

    ``square`` stamps a solid ``width`` x ``width`` block of ``color``;
    ``brightness`` shifts the whole image region by ``delta`` (then clamps).
    Placement is in full-frame coordinates and must keep a square trigger
    entirely inside the image region. ``adjacent`` means touching the sidebar
    corner: rows [w, w+t), cols [w, w+t).
    """

    kind: str = "square"
    width: int = 3
    color: tuple[float, float, float] = (1.0, 1.0, 1.0)
    placement: str = "adjacent"
    row: int | None = None
    col: int | None = None
    delta: float = 0.3

    def __post_init__(self) -> None:
        if self.kind not in TRIGGER_KINDS:
            raise PlacementError(f"unknown trigger kind {self.kind!r}, expected {TRIGGER_KINDS}")
        if self.placement not in PLACEMENTS:
            raise PlacementError(
                f"unknown placement {self.placement!r}, expected {PLACEMENTS}"
            )
        if self.kind == "square":
            if self.width < 1:
                raise PlacementError(f"trigger width must be >= 1, got {self.width}")
            if any(not 0.0 <= c <= 1.0 for c in self.color):
                raise PlacementError(f"trigger color must lie in [0, 1]^3, got {self.color}")
        else:
            if not -1.0 <= self.delta <= 1.0:
                raise PlacementError(f"brightness delta must lie in [-1, 1], got {self.delta}")
        if self.placement == "fixed" and (self.row is None or self.col is None):
            raise PlacementError("fixed placement requires row and col")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "width": self.width,
            "color": list(self.color),
            "placement": self.placement,
            "row": self.row,
            "col": self.col,
            "delta": self.delta,
        }

    @staticmethod
    def from_dict(payload: dict) -> "TriggerSpec":
        return TriggerSpec(
            kind=payload.get("kind", "square"),
            width=int(payload.get("width", 3)),
            color=tuple(payload.get("color", (1.0, 1.0, 1.0))),
            placement=payload.get("placement", "adjacent"),
            row=payload.get("row"),
            col=payload.get("col"),
            delta=float(payload.get("delta", 0.3)),
        )


def _check_square_fits(spec: TriggerSpec, layout: Layout) -> None:
    w, t = layout.patch_width, spec.width
    if w + t > layout.frame_height or w + t > layout.frame_width:
        raise PlacementError(
            f"square trigger of width {t} cannot fit inside the "
            f"{layout.image_height}x{layout.image_width} image region"
        )


def resolve_trigger_positions(
    spec: TriggerSpec,
    layout: Layout,
    n: int,
    generator: torch.Generator | None = None,
) -> torch.Tensor:
    """Top-left corners (n, 2) for a square trigger, full-frame coordinates."""
    if spec.kind != "square":
        raise PlacementError("positions are only defined for square triggers")
    _check_square_fits(spec, layout)
    w, t = layout.patch_width, spec.width
    if spec.placement == "adjacent":
        return torch.tensor([[w, w]], dtype=torch.int64).repeat(n, 1)
    if spec.placement == "fixed":
        r, c = int(spec.row), int(spec.col)
        if not (w <= r and w <= c and r + t <= layout.frame_height and c + t <= layout.frame_width):
            raise PlacementError(
                f"fixed trigger at ({r}, {c}) with width {t} leaves the image region"
            )
        return torch.tensor([[r, c]], dtype=torch.int64).repeat(n, 1)
    if generator is None:
        raise PlacementError("random placement requires a generator")
    rows = torch.randint(w, layout.frame_height - t + 1, (n,), generator=generator)
    cols = torch.randint(w, layout.frame_width - t + 1, (n,), generator=generator)
    return torch.stack([rows, cols], dim=1)


def attach_patch(images: torch.Tensor, patch: Patch) -> torch.Tensor:
    """Shrink images into the image region and write the sidebar pixels.

    Accepts (B, 3, h, w) image batches of any spatial size; the output is
    (B, 3, H, W) frames in the patch's dtype. Gradients flow to patch pixels.
    """
    if images.ndim != 4 or images.shape[1] != 3:
        raise BatchError(f"images must be (B, 3, h, w), got {tuple(images.shape)}")
    layout = patch.layout
    b = images.shape[0]
    dtype = patch.pixels.dtype
    resized = F.interpolate(
        images.to(dtype),
        size=(layout.image_height, layout.image_width),
        mode="bilinear",
        align_corners=True,
    )
    canvas = torch.zeros(b, 3, layout.frame_height, layout.frame_width, dtype=dtype)
    canvas[:, :, layout.patch_mask()] = patch.pixels.t()
    canvas[:, :, layout.patch_width :, layout.patch_width :] = resized
    return canvas


def read_back_patch(frames: torch.Tensor, layout: Layout) -> torch.Tensor:
    """Extract sidebar pixels (n_pixels, 3) from composited frames."""
    if frames.ndim == 3:
        frames = frames.unsqueeze(0)
    return frames[0][:, layout.patch_mask()].t()


def apply_trigger(
    frames: torch.Tensor,
    spec: TriggerSpec,
    layout: Layout,
    positions: torch.Tensor | None = None,
    generator: torch.Generator | None = None,
) -> torch.Tensor:
    """Stamp the trigger onto already-composited (or raw) frames.

    The trigger only ever touches the image region, so sidebar pixels and
    their gradients are untouched. Frames may be (3, H, W) or (B, 3, H, W).
    """
    squeeze = frames.ndim == 3
    if squeeze:
        frames = frames.unsqueeze(0)
    if frames.ndim != 4 or frames.shape[1] != 3:
        raise BatchError(f"frames must be (B, 3, H, W), got {tuple(frames.shape)}")
    if frames.shape[2] != layout.frame_height or frames.shape[3] != layout.frame_width:
        raise BatchError(
            f"frames are {tuple(frames.shape[2:])} but layout expects "
            f"{(layout.frame_height, layout.frame_width)}"
        )

    out = frames.clone()
    w = layout.patch_width
    if spec.kind == "brightness":
        region = out[:, :, w:, w:]
        out[:, :, w:, w:] = (region + spec.delta).clamp(0.0, 1.0)
        if squeeze:
            return out.squeeze(0)
        return out

    if positions is None:
        positions = resolve_trigger_positions(spec, layout, frames.shape[0], generator)
    if positions.shape[0] != frames.shape[0]:
        raise BatchError(
            f"got {positions.shape[0]} trigger positions for {frames.shape[0]} frames"
        )
    t = spec.width
    color = torch.tensor(spec.color, dtype=out.dtype).view(3, 1, 1)
    for i in range(out.shape[0]):
        r, c = int(positions[i, 0]), int(positions[i, 1])
        if not (w <= r and w <= c and r + t <= layout.frame_height and c + t <= layout.frame_width):
            raise PlacementError(f"trigger at ({r}, {c}) leaves the image region")
        out[i, :, r : r + t, c : c + t] = color
    if squeeze:
        return out.squeeze(0)
    return out


class ComposedStreams(NamedTuple):
    """Clean and triggered frames built from the same image batch."""

    clean: torch.Tensor
    triggered: torch.Tensor
    positions: torch.Tensor | None


def build_training_batch(
    images: torch.Tensor, patch: Patch, spec: TriggerSpec, seed: int
) -> ComposedStreams:
    """Compose both optimization streams from one batch of originals.

    The same images feed both streams so the clean and attack losses see
    identical content; ``seed`` pins random trigger placement.
    """
    clean = attach_patch(images, patch)
    positions = None
    if spec.kind == "square":
        gen = torch_generator(seed, "trigger-placement")
        positions = resolve_trigger_positions(spec, patch.layout, images.shape[0], gen)
    triggered = apply_trigger(clean, spec, patch.layout, positions=positions)
    return ComposedStreams(clean=clean, triggered=triggered, positions=positions)


def save_patch(patch: Patch, path_prefix: str, metadata: dict | None = None) -> dict:
    """Write ``<prefix>.png`` and ``<prefix>.json``; returns the sidecar dict."""
    canvas = patch.quantized_canvas()
    png_path = path_prefix + ".png"
    Image.fromarray(canvas, mode="RGB").save(png_path, format="PNG")
    sidecar = {
        "format_version": PATCH_FORMAT_VERSION,
        "mask": MASK_NAME,
        "patch_width": patch.layout.patch_width,
        "frame_height": patch.layout.frame_height,
        "frame_width": patch.layout.frame_width,
        "fingerprint": patch.fingerprint(),
        "metadata": {**patch.metadata, **(metadata or {})},
    }
    with open(path_prefix + ".json", "w") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return sidecar


def load_patch(path_prefix: str) -> Patch:
    """Read a patch artifact; values are re-quantized [0, 1] floats."""
    if path_prefix.endswith(".png") or path_prefix.endswith(".json"):
        path_prefix = os.path.splitext(path_prefix)[0]
    with open(path_prefix + ".json") as fh:
        sidecar = json.load(fh)
    if sidecar.get("mask") != MASK_NAME:
        raise LayoutError(f"unsupported mask {sidecar.get('mask')!r}")
    layout = Layout(
        frame_height=int(sidecar["frame_height"]),
        frame_width=int(sidecar["frame_width"]),
        patch_width=int(sidecar["patch_width"]),
    )
    canvas = np.asarray(Image.open(path_prefix + ".png").convert("RGB"), dtype=np.uint8)
    if canvas.shape != (layout.frame_height, layout.frame_width, 3):
        raise LayoutError(
            f"artifact canvas is {canvas.shape[:2]}, sidecar says "
            f"{(layout.frame_height, layout.frame_width)}"
        )
    frame = torch.from_numpy(canvas.astype(np.float32) / 255.0).permute(2, 0, 1)
    pixels = frame[:, layout.patch_mask()].t().contiguous()
    patch = Patch(pixels=pixels, layout=layout, metadata=dict(sidecar.get("metadata", {})))
    stored = sidecar.get("fingerprint")
    if stored is not None and stored != patch.fingerprint():
        raise StateError("patch artifact fingerprint mismatch; file may be corrupt")
    return patch
