"""Digital-to-physical transform stack: board, shape warp, color map.

The physical world bends a displayed patch in two ways the optimizer must
see: geometry (the surface is viewed in perspective, cell by cell) and color
(display plus camera response). Both are calibrated from a rendered board
photographed in each environment, then applied differentiably so patches can
be trained straight through them.

Conventions used throughout this module:

* points are ``(x, y)`` = (column, row) in pixel coordinates;
* cell corners are ordered TL, TR, BR, BL and rewound to positive shoelace
  area on construction;
* a homography maps digital board coordinates to observed photo coordinates;
* application order is fixed: shape warp, then color map, then clamp to
  [0, 1]. The two do not commute, so the order is part of the contract.

The shape warp back-samples: for every output pixel the inverse per-cell
homography names a source point in the digital frame, realized with bilinear
``grid_sample`` so gradients flow to the input image (and through it to the
patch). Output pixels claimed by no cell pass through unchanged.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from .errors import AlignmentError, BoardSpecError, FitError

TRANSFORM_FORMAT_VERSION = 1


# ----------------------------------------------------------------------------
# homography math (float64 numpy)


def _normalize_points(pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Hartley normalization: center at origin, RMS distance sqrt(2)."""
    mean = pts.mean(axis=0)
    centered = pts - mean
    rms = np.sqrt((centered**2).sum(axis=1).mean())
    scale = np.sqrt(2.0) / rms if rms > 1e-12 else 1.0
    t = np.array(
        [[scale, 0.0, -scale * mean[0]], [0.0, scale, -scale * mean[1]], [0.0, 0.0, 1.0]]
    )
    return centered * scale, t


def fit_homography(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Direct linear transform from >= 4 point pairs; returns H with H[2,2]=1.

    Exactly 4 pairs give the exact interpolating homography. Degenerate
    configurations (collinear triples, repeated points) raise FitError.
    """
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if src.shape != dst.shape or src.ndim != 2 or src.shape[1] != 2:
        raise FitError(f"point arrays must be (n, 2), got {src.shape} and {dst.shape}")
    n = src.shape[0]
    if n < 4:
        raise FitError(f"homography needs >= 4 point pairs, got {n}")

    src_n, t_src = _normalize_points(src)
    dst_n, t_dst = _normalize_points(dst)

    rows = []
    for (x, y), (u, v) in zip(src_n, dst_n):
        rows.append([x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y, -u])
        rows.append([0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y, -v])
    a = np.array(rows)
    _, s, vt = np.linalg.svd(a)
    # a unique solution needs rank 8: the two smallest singular values must gap
    if s[0] <= 0 or s[-2] / s[0] < 1e-10:
        raise FitError("degenerate correspondences: homography is not unique")
    h_n = vt[-1].reshape(3, 3)
    h = np.linalg.inv(t_dst) @ h_n @ t_src
    if abs(h[2, 2]) < 1e-12:
        raise FitError("degenerate homography (vanishing scale)")
    return h / h[2, 2]


def apply_homography(h: np.ndarray, pts: np.ndarray) -> np.ndarray:
    pts = np.asarray(pts, dtype=np.float64)
    single = pts.ndim == 1
    if single:
        pts = pts[None]
    ones = np.ones((pts.shape[0], 1))
    mapped = np.hstack([pts, ones]) @ np.asarray(h, dtype=np.float64).T
    out = mapped[:, :2] / mapped[:, 2:3]
    return out[0] if single else out


def reprojection_error(h: np.ndarray, src: np.ndarray, dst: np.ndarray) -> float:
    return float(np.linalg.norm(apply_homography(h, src) - np.asarray(dst), axis=1).max())


def _rewind_positive(quad: np.ndarray) -> np.ndarray:
    """Reorder corners so the shoelace area is positive (consistent winding)."""
    x, y = quad[:, 0], quad[:, 1]
    area = 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))
    return quad[::-1].copy() if area < 0 else quad.copy()


def _points_in_quad(px: np.ndarray, py: np.ndarray, quad: np.ndarray, eps: float = 1e-7) -> np.ndarray:
    """Vectorized convex-quad containment for positively wound corners."""
    inside = np.ones_like(px, dtype=bool)
    for i in range(4):
        ax, ay = quad[i]
        bx, by = quad[(i + 1) % 4]
        cross = (bx - ax) * (py - ay) - (by - ay) * (px - ax)
        inside &= cross >= -eps
    return inside


# ----------------------------------------------------------------------------
# calibration board


def lattice_colors(levels: int) -> np.ndarray:
    """All (levels^3, 3) RGB colors on the uniform cube lattice."""
    axis = np.linspace(0.0, 1.0, levels)
    r, g, b = np.meshgrid(axis, axis, axis, indexing="ij")
    return np.stack([r.ravel(), g.ravel(), b.ravel()], axis=1)


@dataclass(frozen=True)
class CalibrationBoardSpec:
    """Renderable board: G x G micro-surface cells, corner fiducials, and a
    full color lattice tiled across the cell interiors."""

    grid_size: int = 4
    lattice: int = 6
    cell_pixels: int = 64
    marker_pixels: int = 6
    blocks_per_cell: int | None = None

    def __post_init__(self) -> None:
        if self.grid_size < 1:
            raise BoardSpecError(f"grid_size must be >= 1, got {self.grid_size}")
        if self.lattice < 2:
            raise BoardSpecError(f"lattice must be >= 2, got {self.lattice}")
        if self.marker_pixels < 2:
            raise BoardSpecError("marker_pixels must be >= 2")

    @property
    def n_colors(self) -> int:
        return self.lattice**3

    @property
    def blocks_axis(self) -> int:
        if self.blocks_per_cell is not None:
            return self.blocks_per_cell
        per_cell = self.n_colors / self.grid_size**2
        return int(np.ceil(np.sqrt(per_cell)))

    def validate_capacity(self) -> None:
        k = self.blocks_axis
        slots = self.grid_size**2 * k**2
        if slots < self.n_colors:
            raise BoardSpecError(
                f"board hosts {slots} color blocks but the lattice needs "
                f"{self.n_colors}; enlarge the grid or blocks_per_cell"
            )
        interior = self.cell_pixels - 2 * self.marker_pixels
        if interior < k * 2:
            raise BoardSpecError(
                f"cell interior of {interior}px cannot hold {k}x{k} blocks of >= 2px"
            )


@dataclass
class BoardGeometry:
    """Exact ground-truth geometry of a rendered board."""

    image_size: tuple[int, int]
    cells: list[dict]  # {"id": int, "corners": [[x, y] * 4]}
    blocks: list[dict]  # {"cell_id": int, "rect": [x0, y0, x1, y1], "color": [r, g, b]}
    markers: list[dict]  # {"id": int, "center": [x, y], "size": int}

    def to_json(self) -> str:
        return json.dumps(
            {
                "image_size": list(self.image_size),
                "cells": self.cells,
                "blocks": self.blocks,
                "markers": self.markers,
            },
            indent=2,
            sort_keys=True,
        )

    @staticmethod
    def from_json(payload: str) -> "BoardGeometry":
        raw = json.loads(payload)
        return BoardGeometry(
            image_size=tuple(raw["image_size"]),
            cells=raw["cells"],
            blocks=raw["blocks"],
            markers=raw["markers"],
        )


def generate_board(spec: CalibrationBoardSpec) -> tuple[torch.Tensor, BoardGeometry]:
    """Render the board image (3, S, S) and return its exact geometry.

    Every lattice color appears at least once; blocks cycle through the
    lattice when there are spare slots. Fiducial markers at cell corners are
    purely visual (detection is out of scope); their true positions ship with
    the geometry.
    """
    spec.validate_capacity()
    g, cp, k = spec.grid_size, spec.cell_pixels, spec.blocks_axis
    size = g * cp
    image = torch.full((3, size, size), 0.5)
    colors = lattice_colors(spec.lattice)

    cells, blocks, markers = [], [], []
    slot = 0
    for i in range(g):
        for j in range(g):
            cell_id = i * g + j
            x0, y0 = j * cp, i * cp
            cells.append(
                {
                    "id": cell_id,
                    "corners": [
                        [float(x0), float(y0)],
                        [float(x0 + cp), float(y0)],
                        [float(x0 + cp), float(y0 + cp)],
                        [float(x0), float(y0 + cp)],
                    ],
                }
            )
            m = spec.marker_pixels
            side = (cp - 2 * m) // k
            for bi in range(k):
                for bj in range(k):
                    bx0 = x0 + m + bj * side
                    by0 = y0 + m + bi * side
                    color = colors[slot % spec.n_colors]
                    image[:, by0 : by0 + side, bx0 : bx0 + side] = torch.tensor(
                        color, dtype=torch.float32
                    ).view(3, 1, 1)
                    blocks.append(
                        {
                            "cell_id": cell_id,
                            "rect": [float(bx0), float(by0), float(bx0 + side), float(by0 + side)],
                            "color": [float(c) for c in color],
                        }
                    )
                    slot += 1

    marker_id = 0
    half = spec.marker_pixels // 2
    for i in range(g + 1):
        for j in range(g + 1):
            cx, cy = j * cp, i * cp
            x0, x1 = max(0, cx - half), min(size, cx + half)
            y0, y1 = max(0, cy - half), min(size, cy + half)
            image[:, y0:y1, x0:x1] = 0.0
            # a white quadrant keyed by corner parity makes markers tellable apart
            mx, my = (x0 + x1) // 2, (y0 + y1) // 2
            if (i + j) % 2 == 0:
                image[:, y0:my, x0:mx] = 1.0
            else:
                image[:, my:y1, mx:x1] = 1.0
            markers.append({"id": marker_id, "center": [float(cx), float(cy)], "size": spec.marker_pixels})
            marker_id += 1

    geometry = BoardGeometry(image_size=(size, size), cells=cells, blocks=blocks, markers=markers)
    return image, geometry


# ----------------------------------------------------------------------------
# correspondences


@dataclass
class CorrespondenceSet:
    """Paired digital/observed cell corners plus paired colors."""

    cells: list[dict]  # {"id": int, "digital": [[x, y] * 4], "observed": [[x, y] * 4]}
    colors: list[dict] = field(default_factory=list)  # {"digital": [3], "observed": [3]}

    def to_json(self) -> str:
        return json.dumps({"cells": self.cells, "colors": self.colors}, indent=2, sort_keys=True)

    @staticmethod
    def from_json(payload: str) -> "CorrespondenceSet":
        raw = json.loads(payload)
        return CorrespondenceSet(cells=raw["cells"], colors=raw.get("colors", []))

    def save(self, path: str) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_json())
            fh.write("\n")

    @staticmethod
    def load(path: str) -> "CorrespondenceSet":
        with open(path) as fh:
            return CorrespondenceSet.from_json(fh.read())


def correspondences_from_homography(
    frame_height: int, frame_width: int, grid_size: int, homography: np.ndarray
) -> CorrespondenceSet:
    """Synthetic-environment helper: tile the frame into G x G cells and map
    every cell corner through one global homography."""
    cells = []
    ys = np.linspace(0.0, frame_height, grid_size + 1)
    xs = np.linspace(0.0, frame_width, grid_size + 1)
    for i in range(grid_size):
        for j in range(grid_size):
            digital = np.array(
                [
                    [xs[j], ys[i]],
                    [xs[j + 1], ys[i]],
                    [xs[j + 1], ys[i + 1]],
                    [xs[j], ys[i + 1]],
                ]
            )
            observed = apply_homography(homography, digital)
            cells.append(
                {
                    "id": i * grid_size + j,
                    "digital": digital.tolist(),
                    "observed": observed.tolist(),
                }
            )
    return CorrespondenceSet(cells=cells)


# ----------------------------------------------------------------------------
# shape transform


@dataclass
class CellMap:
    cell_id: int
    digital: np.ndarray
    observed: np.ndarray
    homography: np.ndarray


@dataclass
class ShapeTransform:
    """Per-cell projective warp from digital frame to observed frame."""

    cells: list[CellMap]
    max_residual: float = 0.0
    _grid_cache: dict = field(default_factory=dict, repr=False)

    def cell_by_id(self, cell_id: int) -> CellMap:
        for cell in self.cells:
            if cell.cell_id == cell_id:
                return cell
        raise FitError(f"no cell with id {cell_id}")

    def warp_grid(self, height: int, width: int) -> tuple[np.ndarray, np.ndarray]:
        """Source sampling coordinates (H, W, 2) and coverage mask (H, W).

        For covered output pixels the source is the inverse-homography image
        of the pixel center; uncovered pixels sample themselves (identity
        passthrough). First cell to claim a pixel wins, in list order.
        """
        key = (height, width)
        if key in self._grid_cache:
            return self._grid_cache[key]
        ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
        src_x, src_y = xs.copy(), ys.copy()
        covered = np.zeros((height, width), dtype=bool)
        for cell in self.cells:
            hinv = np.linalg.inv(cell.homography)
            denom = hinv[2, 0] * xs + hinv[2, 1] * ys + hinv[2, 2]
            ok = np.abs(denom) > 1e-12
            sx = np.where(ok, (hinv[0, 0] * xs + hinv[0, 1] * ys + hinv[0, 2]) / denom, 0.0)
            sy = np.where(ok, (hinv[1, 0] * xs + hinv[1, 1] * ys + hinv[1, 2]) / denom, 0.0)
            inside = ok & ~covered & _points_in_quad(sx, sy, cell.digital)
            src_x[inside] = sx[inside]
            src_y[inside] = sy[inside]
            covered |= inside
        grid = np.stack([src_x, src_y], axis=-1)
        self._grid_cache[key] = (grid, covered)
        return grid, covered

    def apply(self, frames: torch.Tensor) -> torch.Tensor:
        squeeze = frames.ndim == 3
        if squeeze:
            frames = frames.unsqueeze(0)
        b, _, h, w = frames.shape
        grid_np, _ = self.warp_grid(h, w)
        gx = 2.0 * grid_np[..., 0] / max(w - 1, 1) - 1.0
        gy = 2.0 * grid_np[..., 1] / max(h - 1, 1) - 1.0
        grid = torch.from_numpy(np.stack([gx, gy], axis=-1)).to(frames.dtype)
        warped = F.grid_sample(
            frames,
            grid.unsqueeze(0).expand(b, -1, -1, -1),
            mode="bilinear",
            padding_mode="border",
            align_corners=True,
        )
        return warped.squeeze(0) if squeeze else warped

    def to_dict(self) -> dict:
        return {
            "cells": [
                {
                    "id": c.cell_id,
                    "digital": c.digital.tolist(),
                    "observed": c.observed.tolist(),
                    "homography": c.homography.reshape(-1).tolist(),
                }
                for c in self.cells
            ],
            "max_residual": self.max_residual,
        }

    @staticmethod
    def from_dict(payload: dict) -> "ShapeTransform":
        cells = [
            CellMap(
                cell_id=int(c["id"]),
                digital=_rewind_positive(np.array(c["digital"], dtype=np.float64)),
                observed=np.array(c["observed"], dtype=np.float64),
                homography=np.array(c["homography"], dtype=np.float64).reshape(3, 3),
            )
            for c in payload["cells"]
        ]
        return ShapeTransform(cells=cells, max_residual=float(payload.get("max_residual", 0.0)))


def fit_shape_transform(correspondences: CorrespondenceSet) -> ShapeTransform:
    """Exact per-cell homographies from 4-corner correspondences."""
    if not correspondences.cells:
        raise FitError("correspondence set has no cells")
    cells = []
    worst = 0.0
    for raw in correspondences.cells:
        digital = np.array(raw["digital"], dtype=np.float64)
        observed = np.array(raw["observed"], dtype=np.float64)
        if digital.shape[0] < 4 or observed.shape != digital.shape:
            raise FitError(f"cell {raw.get('id')}: need matching sets of >= 4 corners")
        h = fit_homography(digital, observed)
        worst = max(worst, reprojection_error(h, digital, observed))
        cells.append(
            CellMap(
                cell_id=int(raw["id"]),
                digital=_rewind_positive(digital),
                observed=observed,
                homography=h,
            )
        )
    return ShapeTransform(cells=cells, max_residual=worst)


# ----------------------------------------------------------------------------
# color transform


def _identity_kernel() -> tuple[np.ndarray, np.ndarray]:
    kernel = np.zeros((3, 3, 3, 3))
    for c in range(3):
        kernel[c, c, 1, 1] = 1.0
    return kernel, np.zeros(3)


@dataclass
class ColorTransform:
    """One 3->3 channel conv with a 3x3 spatial footprint plus bias.

    Applied with replicate padding so borders see their own colors rather
    than zeros; the fit uses the identical forward, so the two sides agree.
    """

    kernel: np.ndarray
    bias: np.ndarray
    residual_mse: float = 0.0
    converged: bool = True

    def apply(self, frames: torch.Tensor) -> torch.Tensor:
        squeeze = frames.ndim == 3
        if squeeze:
            frames = frames.unsqueeze(0)
        weight = torch.from_numpy(self.kernel).to(frames.dtype)
        bias = torch.from_numpy(self.bias).to(frames.dtype)
        padded = F.pad(frames, (1, 1, 1, 1), mode="replicate")
        out = F.conv2d(padded, weight, bias)
        return out.squeeze(0) if squeeze else out

    def effective_matrix(self) -> np.ndarray:
        """Channel map seen by constant colors: spatial taps summed, (3, 3)."""
        return self.kernel.sum(axis=(2, 3))

    def to_dict(self) -> dict:
        return {
            "kernel": self.kernel.reshape(-1).tolist(),
            "bias": self.bias.tolist(),
            "residual_mse": self.residual_mse,
            "converged": self.converged,
        }

    @staticmethod
    def from_dict(payload: dict) -> "ColorTransform":
        return ColorTransform(
            kernel=np.array(payload["kernel"], dtype=np.float64).reshape(3, 3, 3, 3),
            bias=np.array(payload["bias"], dtype=np.float64),
            residual_mse=float(payload.get("residual_mse", 0.0)),
            converged=bool(payload.get("converged", True)),
        )


MIN_COLOR_PAIRS = 216


def fit_color_transform(
    pairs: tuple[np.ndarray, np.ndarray] | None = None,
    aligned: tuple[torch.Tensor, torch.Tensor] | None = None,
    max_iter: int = 400,
    converged_tol: float = 1e-6,
    min_pairs: int = MIN_COLOR_PAIRS,
) -> ColorTransform:
    """Gradient-fit the color map by MSE, starting from the identity.

    ``aligned`` mode fits the full spatial kernel on a (digital, observed)
    image pair (the images must be shape-aligned already). ``pairs`` mode
    fits from per-block color averages; constant colors cannot pin down the
    spatial footprint, so only the center tap and bias are learned there.
    Non-convergence is recorded in ``converged``/``residual_mse``, not fatal.
    """
    if (pairs is None) == (aligned is None):
        raise FitError("provide exactly one of pairs= or aligned=")

    if aligned is not None:
        digital, observed = aligned
        digital = torch.as_tensor(digital, dtype=torch.float64)
        observed = torch.as_tensor(observed, dtype=torch.float64)
        if digital.ndim == 3:
            digital = digital.unsqueeze(0)
            observed = observed.unsqueeze(0)
        if digital.shape != observed.shape:
            raise FitError(
                f"aligned images must share a shape, got {tuple(digital.shape)} "
                f"vs {tuple(observed.shape)}"
            )
        k0, b0 = _identity_kernel()
        weight = torch.tensor(k0, requires_grad=True)
        bias = torch.tensor(b0, requires_grad=True)
        padded = F.pad(digital, (1, 1, 1, 1), mode="replicate")

        def forward() -> torch.Tensor:
            return F.conv2d(padded, weight, bias)

        params = [weight, bias]
    else:
        dig, obs = pairs
        dig = torch.as_tensor(np.asarray(dig), dtype=torch.float64)
        obs = torch.as_tensor(np.asarray(obs), dtype=torch.float64)
        if dig.ndim != 2 or dig.shape[1] != 3 or dig.shape != obs.shape:
            raise FitError("pairs must be matching (n, 3) color arrays")
        if dig.shape[0] < min_pairs:
            raise FitError(f"need >= {min_pairs} color pairs, got {dig.shape[0]}")
        matrix = torch.eye(3, dtype=torch.float64, requires_grad=True)
        bias = torch.zeros(3, dtype=torch.float64, requires_grad=True)

        def forward() -> torch.Tensor:
            return dig @ matrix.t() + bias

        observed = obs
        params = [matrix, bias]

    optimizer = torch.optim.LBFGS(
        params, max_iter=max_iter, history_size=25, line_search_fn="strong_wolfe",
        tolerance_grad=1e-14, tolerance_change=1e-16,
    )

    def closure():
        optimizer.zero_grad()
        loss = F.mse_loss(forward(), observed)
        loss.backward()
        return loss

    optimizer.step(closure)
    with torch.no_grad():
        final = float(F.mse_loss(forward(), observed))

    if aligned is not None:
        kernel = params[0].detach().numpy().copy()
        bias_np = params[1].detach().numpy().copy()
    else:
        kernel, _ = _identity_kernel()
        kernel[:, :, 1, 1] = params[0].detach().numpy()
        bias_np = params[1].detach().numpy().copy()

    return ColorTransform(
        kernel=kernel,
        bias=bias_np,
        residual_mse=final,
        converged=final <= converged_tol,
    )


def extract_color_pairs(
    board_image: torch.Tensor,
    photo_image: torch.Tensor,
    shape: ShapeTransform,
    geometry: BoardGeometry,
    window: int = 3,
) -> tuple[np.ndarray, np.ndarray]:
    """Average each block's observed color at its projected center.

    Returns (digital, observed) arrays of shape (n_blocks, 3). Projected
    windows that leave the photo raise AlignmentError.
    """
    cell_index = {cell.cell_id: cell for cell in shape.cells}
    _, ph, pw = photo_image.shape
    half = window // 2
    digital_out, observed_out = [], []
    for block in geometry.blocks:
        cell = cell_index.get(block["cell_id"])
        if cell is None:
            raise AlignmentError(f"no homography for cell {block['cell_id']}")
        x0, y0, x1, y1 = block["rect"]
        center = np.array([(x0 + x1) / 2.0, (y0 + y1) / 2.0])
        px, py = apply_homography(cell.homography, center)
        cx, cy = int(round(px)), int(round(py))
        if not (half <= cx < pw - half and half <= cy < ph - half):
            raise AlignmentError(
                f"projected block center ({px:.1f}, {py:.1f}) leaves the photo"
            )
        patch = photo_image[:, cy - half : cy + half + 1, cx - half : cx + half + 1]
        observed_out.append(patch.mean(dim=(1, 2)).numpy())
        digital_out.append(np.array(block["color"], dtype=np.float64))
    return np.array(digital_out), np.array(observed_out)


# ----------------------------------------------------------------------------
# full transform


@dataclass
class PhysicalTransform:
    """Shape warp then color map then clamp, end to end differentiable."""

    environment: str = "attack-env"
    shape: ShapeTransform | None = None
    color: ColorTransform | None = None

    def apply(self, frames: torch.Tensor) -> torch.Tensor:
        squeeze = frames.ndim == 3
        if squeeze:
            frames = frames.unsqueeze(0)
        out = frames
        if self.shape is not None:
            out = self.shape.apply(out)
        if self.color is not None:
            out = self.color.apply(out)
        out = out.clamp(0.0, 1.0)
        return out.squeeze(0) if squeeze else out

    def to_dict(self) -> dict:
        return {
            "format_version": TRANSFORM_FORMAT_VERSION,
            "environment": self.environment,
            "shape": self.shape.to_dict() if self.shape else None,
            "color": self.color.to_dict() if self.color else None,
        }

    def save(self, path: str) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @staticmethod
    def from_dict(payload: dict) -> "PhysicalTransform":
        return PhysicalTransform(
            environment=payload.get("environment", "attack-env"),
            shape=ShapeTransform.from_dict(payload["shape"]) if payload.get("shape") else None,
            color=ColorTransform.from_dict(payload["color"]) if payload.get("color") else None,
        )

    @staticmethod
    def load(path: str) -> "PhysicalTransform":
        with open(path) as fh:
            return PhysicalTransform.from_dict(json.load(fh))


@dataclass
class EnvTransforms:
    """Per-environment transforms for the two optimization streams."""

    clean: PhysicalTransform | None = None
    attack: PhysicalTransform | None = None
