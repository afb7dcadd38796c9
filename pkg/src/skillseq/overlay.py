"""Trajectory heatmap figures: tool paths colored by activation intensity.

The figure is an SVG with a 640x480 trajectory canvas on top and a
horizontal intensity strip over time directly below it.  Channels are
consumed as consecutive (x, y) pairs, one pair per tool.  Each tool has
its own 256-step color ramp; a vertex at intensity v gets ramp color
``round(v * 255)``, interpolated linearly per RGB component between the
ramp's two documented endpoints.
"""

from __future__ import annotations

import warnings

import numpy as np

from .data import RAW, fill_gaps
from .explain import CamMap

__all__ = ["render_cam_overlay", "tool_pairs", "ramp_color", "RAMPS"]

CANVAS_W = 640.0
CANVAS_H = 480.0
STRIP_H = 30.0
STRIP_GAP = 20.0

# (low RGB, high RGB) endpoints; ramp k colors tool k.
RAMPS = (
    ((20, 44, 120), (245, 160, 30)),    # deep blue -> amber
    ((16, 96, 40), (230, 40, 160)),     # forest green -> magenta
    ((90, 90, 90), (250, 230, 40)),     # grey -> yellow
    ((70, 20, 110), (60, 220, 220)),    # violet -> cyan
)


def ramp_color(tool_index, intensity):
    """Hex color for one vertex: 256 linear steps between ramp endpoints."""
    lo, hi = RAMPS[tool_index % len(RAMPS)]
    q = int(round(float(np.clip(intensity, 0.0, 1.0)) * 255.0))
    rgb = [int(round(a + (b - a) * q / 255.0)) for a, b in zip(lo, hi)]
    return "#%02x%02x%02x" % tuple(rgb)


def _tool_name(x_name, y_name, index):
    for suffix in ("_x", "x"):
        if x_name.endswith(suffix):
            stem = x_name[: len(x_name) - len(suffix)]
            if y_name == stem + suffix.replace("x", "y"):
                return stem if stem else f"tool{index}"
    return f"tool{index}"


def tool_pairs(channels):
    """Group channel names into ((x_col, y_col, tool_name), ...)."""
    if len(channels) % 2 != 0:
        raise ValueError(
            f"need an even channel count to pair coordinates, got {len(channels)}"
        )
    pairs = []
    for k in range(0, len(channels), 2):
        pairs.append((k, k + 1, _tool_name(channels[k], channels[k + 1], k // 2)))
    return tuple(pairs)


def _cam_index(frame, n_frames, cam_len):
    return min(int(frame * cam_len / n_frames), cam_len - 1)


def _fmt(v):
    return f"{v:.2f}".rstrip("0").rstrip(".")


def render_cam_overlay(trial_raw, cam, output_path):
    """Write an SVG overlay of ``trial_raw``'s tool paths shaded by ``cam``.

    ``trial_raw`` supplies un-normalized coordinates in the original
    640x480 frame; values outside that frame are clamped to its edge and
    reported via a warning.  ``cam`` may be shorter than the raw trial
    (the usual case after downsampling); raw frame i reads intensity
    ``cam[floor(i * len(cam) / T_raw)]``.
    """
    if not isinstance(cam, CamMap):
        raise TypeError(f"expected a CamMap, got {type(cam).__name__}")
    if trial_raw.stage == RAW and np.isnan(trial_raw.values).any():
        trial_raw = fill_gaps(trial_raw)
    values = np.asarray(trial_raw.values, dtype=np.float64)
    if np.isnan(values).any():
        raise ValueError(f"trial {trial_raw.trial_id} still has missing samples")
    n = values.shape[0]
    if n < 1:
        raise ValueError("cannot render an empty trial")
    pairs = tool_pairs(trial_raw.channels)
    intensity = np.asarray(cam.intensity, dtype=np.float64)

    out_of_range = int(np.sum((values[:, [p[0] for p in pairs]] < 0)
                              | (values[:, [p[0] for p in pairs]] > CANVAS_W))
                       + np.sum((values[:, [p[1] for p in pairs]] < 0)
                                | (values[:, [p[1] for p in pairs]] > CANVAS_H)))
    if out_of_range:
        warnings.warn(
            f"trial {trial_raw.trial_id}: clamped {out_of_range} coordinate(s) "
            f"outside the 640x480 frame",
            stacklevel=2,
        )

    total_h = CANVAS_H + STRIP_GAP + STRIP_H
    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{int(CANVAS_W)}" '
        f'height="{int(total_h)}" viewBox="0 0 {int(CANVAS_W)} {int(total_h)}">',
        f'<desc>trial={trial_raw.trial_id} class_index={cam.class_index}</desc>',
        f'<rect x="0" y="0" width="{int(CANVAS_W)}" height="{int(CANVAS_H)}" '
        'fill="white" stroke="#404040" stroke-width="1"/>',
    ]

    for tool, (cx, cy, name) in enumerate(pairs):
        xs = np.clip(values[:, cx], 0.0, CANVAS_W)
        ys = np.clip(values[:, cy], 0.0, CANVAS_H)
        points = " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in zip(xs, ys))
        parts.append(
            f'<polyline points="{points}" fill="none" stroke="#b0b0b0" '
            f'stroke-width="0.8"><title>{name}</title></polyline>'
        )
        for i, (x, y) in enumerate(zip(xs, ys)):
            v = intensity[_cam_index(i, n, len(intensity))]
            parts.append(
                f'<circle cx="{_fmt(x)}" cy="{_fmt(y)}" r="2.2" '
                f'fill="{ramp_color(tool, v)}"/>'
            )

    strip_y = CANVAS_H + STRIP_GAP
    seg_w = CANVAS_W / len(intensity)
    for i, v in enumerate(intensity):
        grey = int(round((1.0 - float(np.clip(v, 0.0, 1.0))) * 255.0))
        parts.append(
            f'<rect x="{_fmt(i * seg_w)}" y="{_fmt(strip_y)}" '
            f'width="{_fmt(seg_w + 0.01)}" height="{_fmt(STRIP_H)}" '
            f'fill="#%02x%02x%02x"/>' % (grey, grey, grey)
        )
    parts.append(
        f'<rect x="0" y="{_fmt(strip_y)}" width="{int(CANVAS_W)}" '
        f'height="{_fmt(STRIP_H)}" fill="none" stroke="#404040" stroke-width="1"/>'
    )
    parts.append("</svg>")
    text = "\n".join(parts) + "\n"
    with open(output_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    return output_path
