"""Static SVG rendering of a glucose trace with the 70-180 mg/dL band."""

from __future__ import annotations

from .twin import GlucoseTrace

BAND_LO = 70.0
BAND_HI = 180.0


def _fmt(x: float) -> str:
    return f"{x:.2f}".rstrip("0").rstrip(".")


def trace_to_svg(trace: GlucoseTrace, lo: float = BAND_LO, hi: float = BAND_HI,
                 width: int = 900, height: int = 360, title: str = "") -> str:
    """Figure-style output: shaded target band, hourly x grid, glucose line.

    Pure text generation; identical traces produce identical bytes.
    """
    margin_l, margin_r, margin_t, margin_b = 56, 16, 28, 36
    plot_w = width - margin_l - margin_r
    plot_h = height - margin_t - margin_b

    times = trace.times()
    g = trace.samples
    t_min, t_max = float(times[0]), float(times[-1])
    if t_max <= t_min:
        t_max = t_min + 1.0
    y_lo = min(40.0, float(g.min()) - 10.0)
    y_hi = max(260.0, float(g.max()) + 10.0)

    def sx(t: float) -> float:
        return margin_l + plot_w * (t - t_min) / (t_max - t_min)

    def sy(v: float) -> float:
        return margin_t + plot_h * (y_hi - v) / (y_hi - y_lo)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        # target band
        f'<rect x="{_fmt(margin_l)}" y="{_fmt(sy(hi))}" width="{_fmt(plot_w)}" '
        f'height="{_fmt(sy(lo) - sy(hi))}" fill="#d7ecd9"/>',
        f'<line x1="{_fmt(margin_l)}" y1="{_fmt(sy(lo))}" x2="{_fmt(margin_l + plot_w)}" '
        f'y2="{_fmt(sy(lo))}" stroke="#7bb27f" stroke-width="1"/>',
        f'<line x1="{_fmt(margin_l)}" y1="{_fmt(sy(hi))}" x2="{_fmt(margin_l + plot_w)}" '
        f'y2="{_fmt(sy(hi))}" stroke="#7bb27f" stroke-width="1"/>',
    ]

    # hourly grid and x labels
    hour = 60.0
    t = (int(t_min // hour)) * hour
    while t <= t_max:
        if t >= t_min:
            x = sx(t)
            parts.append(f'<line x1="{_fmt(x)}" y1="{_fmt(margin_t)}" x2="{_fmt(x)}" '
                         f'y2="{_fmt(margin_t + plot_h)}" stroke="#eeeeee" stroke-width="1"/>')
            parts.append(f'<text x="{_fmt(x)}" y="{height - 12}" font-size="11" '
                         f'text-anchor="middle" fill="#555555">{_fmt(t)}</text>')
        t += hour

    # y ticks
    for v in (54.0, 70.0, 120.0, 180.0, 250.0):
        if y_lo <= v <= y_hi:
            parts.append(f'<text x="{margin_l - 8}" y="{_fmt(sy(v) + 4)}" font-size="11" '
                         f'text-anchor="end" fill="#555555">{_fmt(v)}</text>')

    points = " ".join(f"{_fmt(sx(float(t)))},{_fmt(sy(float(v)))}"
                      for t, v in zip(times, g))
    parts.append(f'<polyline points="{points}" fill="none" stroke="#1f5fa8" '
                 f'stroke-width="1.5"/>')

    parts.append(f'<text x="{margin_l}" y="18" font-size="13" fill="#222222">'
                 f'{title or "glucose (mg/dL) vs time (min)"}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
