"""SVG drawing of a trajectory: obstacles grey, starts green, goals blue, time-coloured paths."""

from __future__ import annotations

from xml.sax.saxutils import escape

from .sim import Trajectory

START = (46, 160, 67)
END = (31, 90, 200)


def _lerp_color(s: float) -> str:
    c = [round(a + (b - a) * s) for a, b in zip(START, END)]
    return "#%02x%02x%02x" % tuple(c)


def render_svg(traj: Trajectory, width: int = 600, marker_every: int = 5) -> str:
    """One polyline per agent plus time-coloured markers and a colour bar."""
    cfg = traj.config
    arr = cfg.arrays()
    (x0, y0), (x1, y1) = cfg.workspace.min, cfg.workspace.max
    scale = width / (x1 - x0)
    height = int(round((y1 - y0) * scale))
    bar = 40

    def X(x):
        return (x - x0) * scale

    def Y(y):
        return (y1 - y) * scale  # y axis points up in the world

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width + bar}" height="{height}" '
           f'viewBox="0 0 {width + bar} {height}">',
           f'<title>{escape(cfg.digest())} seed={traj.seed} status={escape(traj.status)}</title>',
           '<defs><linearGradient id="time" x1="0" y1="1" x2="0" y2="0">'
           f'<stop offset="0" stop-color="{_lerp_color(0.0)}"/>'
           f'<stop offset="1" stop-color="{_lerp_color(1.0)}"/></linearGradient></defs>',
           f'<rect x="0" y="0" width="{width}" height="{height}" fill="white" stroke="black"/>']
    for c, r in zip(arr["obs"], arr["obs_r"]):
        out.append(f'<circle cx="{X(c[0]):.2f}" cy="{Y(c[1]):.2f}" r="{r * scale:.2f}" fill="#9e9e9e"/>')
    L = traj.positions.shape[0]
    for i in range(cfg.n_agents):
        P = traj.positions[:, i]
        pts = " ".join(f"{X(p[0]):.2f},{Y(p[1]):.2f}" for p in P)
        out.append(f'<polyline points="{pts}" fill="none" stroke="#607d8b" stroke-width="1"/>')
        for t in range(0, L, marker_every):
            s = t / max(L - 1, 1)
            out.append(f'<circle cx="{X(P[t, 0]):.2f}" cy="{Y(P[t, 1]):.2f}" r="1.5" '
                       f'fill="{_lerp_color(s)}"/>')
    for i in range(cfg.n_agents):
        s, g, r = arr["start"][i], arr["goal"][i], arr["radius"][i]
        out.append(f'<circle cx="{X(s[0]):.2f}" cy="{Y(s[1]):.2f}" r="{r * scale:.2f}" '
                   f'fill="none" stroke="{_lerp_color(0.0)}" stroke-width="2"/>')
        h = r * scale
        out.append(f'<rect x="{X(g[0]) - h:.2f}" y="{Y(g[1]) - h:.2f}" width="{2 * h:.2f}" '
                   f'height="{2 * h:.2f}" fill="none" stroke="{_lerp_color(1.0)}" stroke-width="2"/>')
    out.append(f'<rect x="{width + 10}" y="10" width="15" height="{height - 20}" fill="url(#time)"/>')
    out.append(f'<text x="{width + 8}" y="{height - 2}" font-size="9">0</text>')
    out.append(f'<text x="{width + 8}" y="9" font-size="9">{L - 1}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_svg(traj: Trajectory, path, **kw) -> None:
    with open(path, "w") as fh:
        fh.write(render_svg(traj, **kw))


def count_polylines(svg: str) -> int:
    return svg.count("<polyline ")


__all__ = ["render_svg", "write_svg", "count_polylines"]
