"""Independent slow oracles the fast paths are checked against.

Nothing in here may call the package's intersection or traversal code: the
bisection intersector works on sign changes of scalar indicator functions,
and the cell integrator marches positions with a fixed time step.
"""

from __future__ import annotations

import math

import numpy as np

from lorentztube.geometry import Segment, Vec2


def bisect_hit_time(origin: Vec2, direction: Vec2, shape, t_max: float = 8.0,
                    n_scan: int = 4096, iters: int = 90):
    """First crossing time of the ray with the shape, by scan plus bisection.

    Returns None when no sign change of the indicator occurs within t_max.
    Segments use the signed side of the carrying line (validity within the
    segment is checked at the root); circles use distance minus radius.
    """
    ox, oy, dx, dy = origin.x, origin.y, direction.x, direction.y
    if isinstance(shape, Segment):
        ax, ay, bx, by = shape.a.x, shape.a.y, shape.b.x, shape.b.y
        ex, ey = bx - ax, by - ay

        def f(t):
            px, py = ox + t * dx, oy + t * dy
            return (px - ax) * ey - (py - ay) * ex

        def valid(t):
            px, py = ox + t * dx, oy + t * dy
            s = ((px - ax) * ex + (py - ay) * ey) / (ex * ex + ey * ey)
            return -1e-9 <= s <= 1.0 + 1e-9
    else:
        cx, cy, r = shape.center.x, shape.center.y, shape.radius

        def f(t):
            px, py = ox + t * dx, oy + t * dy
            return math.hypot(px - cx, py - cy) - r

        def valid(t):
            return True

    ts = np.linspace(1e-12, t_max, n_scan)
    px = ox + ts * dx
    py = oy + ts * dy
    if isinstance(shape, Segment):
        vals = (px - shape.a.x) * (shape.b.y - shape.a.y) \
            - (py - shape.a.y) * (shape.b.x - shape.a.x)
    else:
        vals = np.hypot(px - shape.center.x, py - shape.center.y) - shape.radius
    signs = vals > 0
    flips = np.nonzero(signs[1:] != signs[:-1])[0]
    for i in flips:
        lo, hi = ts[i], ts[i + 1]
        for _ in range(iters):
            mid = 0.5 * (lo + hi)
            if (f(lo) > 0) != (f(mid) > 0):
                hi = mid
            else:
                lo = mid
        t = 0.5 * (lo + hi)
        if valid(t):
            return t
        # crossed the carrying line outside the segment; a straight ray
        # meets a line once, so there is nothing further out
        if isinstance(shape, Segment):
            return None
    return None


def integrate_disc_cell(q: Vec2, v: Vec2, disc_center: Vec2, disc_r: float,
                        dt: float = 1e-6, width: float = 1.0, height: float = 1.0,
                        max_time: float = 50.0):
    """Fixed-step integration of the square cell with one disc.

    Marches the free flight in dt steps, detects wall or disc penetration,
    then solves the contact inside the offending step and reflects there.
    Gates are the lines x = 0 and x = width.  Returns
    (exit_point, exit_velocity, e, flight_time, collisions).
    """
    qx, qy = q.x, q.y
    vx, vy = v.x, v.y
    t_total = 0.0
    collisions = 0
    cx, cy = disc_center.x, disc_center.y
    chunk = 65536
    while t_total < max_time:
        steps = np.arange(1, chunk + 1) * dt
        px = qx + steps * vx
        py = qy + steps * vy
        hit_wall = (py < 0.0) | (py > height)
        hit_disc = (px - cx) ** 2 + (py - cy) ** 2 < disc_r ** 2
        hit_gate = (px < 0.0) | (px > width)
        any_hit = hit_wall | hit_disc | hit_gate
        if not any_hit.any():
            qx += chunk * dt * vx
            qy += chunk * dt * vy
            t_total += chunk * dt
            continue
        i = int(np.argmax(any_hit))
        # state at the step before the event
        t_base = i * dt
        bx = qx + t_base * vx
        by = qy + t_base * vy
        if hit_gate[i]:
            target = 0.0 if px[i] < 0.0 else width
            s = (target - bx) / vx
            e = -1 if target == 0.0 else 1
            return (Vec2(target, by + s * vy), Vec2(vx, vy), e,
                    t_total + t_base + s, collisions)
        if hit_wall[i]:
            target = 0.0 if py[i] < 0.0 else height
            s = (target - by) / vy
            qx = bx + s * vx
            qy = target
            vy = -vy
            t_total += t_base + s
            collisions += 1
            continue
        # disc: solve |b + s v - c| = r on the offending step
        rx, ry = bx - cx, by - cy
        bcoef = rx * vx + ry * vy
        ccoef = rx * rx + ry * ry - disc_r ** 2
        disc = bcoef * bcoef - ccoef
        s = -bcoef - math.sqrt(max(disc, 0.0))
        qx = bx + s * vx
        qy = by + s * vy
        nx = (qx - cx) / disc_r
        ny = (qy - cy) / disc_r
        d = vx * nx + vy * ny
        vx -= 2.0 * d * nx
        vy -= 2.0 * d * ny
        t_total += t_base + s
        collisions += 1
    raise RuntimeError("integrator ran out of time budget")
