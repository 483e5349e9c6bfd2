"""Numba kernels for the planar rigid-body core.

Everything here operates on flat float64/uint8 arrays owned by
``physics2d.Scene`` so the hot settle loop never re-enters the interpreter.
All loops run in a fixed order over preallocated buffers, which keeps
trajectories bit-reproducible for identical inputs.

Coordinates are (y, z) with gravity along -z. A body's rotation matrix for
angle ``a`` is [[cos, -sin], [sin, cos]]; local axis 0 carries the half
length, local axis 1 the half thickness.
"""

import math

import numpy as np
from numba import njit

# collide() axis identifiers, Box2D-lite style
_FACE_A_Y = 0
_FACE_A_Z = 1
_FACE_B_Y = 2
_FACE_B_Z = 3

# axis selection prefers earlier axes unless clearly beaten (keeps the
# chosen reference face stable across near-tie frames)
_REL_TOL = 0.95
_ABS_TOL = 0.01


@njit(cache=True, nogil=True)
def _incident_edge(hy, hz, py, pz, c, s, fny, fnz, out):
    """Pick the face of the incident box most anti-parallel to the
    reference normal; writes its two world-space vertices into out[0:2]."""
    # reference normal in incident-box frame
    ny = -(c * fny + s * fnz)
    nz = -(-s * fny + c * fnz)
    if abs(ny) > abs(nz):
        if ny >= 0.0:
            l0y, l0z = hy, -hz
            l1y, l1z = hy, hz
        else:
            l0y, l0z = -hy, hz
            l1y, l1z = -hy, -hz
    else:
        if nz >= 0.0:
            l0y, l0z = hy, hz
            l1y, l1z = -hy, hz
        else:
            l0y, l0z = -hy, -hz
            l1y, l1z = hy, -hz
    out[0, 0] = py + c * l0y - s * l0z
    out[0, 1] = pz + s * l0y + c * l0z
    out[1, 0] = py + c * l1y - s * l1z
    out[1, 1] = pz + s * l1y + c * l1z


@njit(cache=True, nogil=True)
def _clip_segment(v_in, n_in, ny, nz, offset, v_out):
    """Sutherland-Hodgman clip of a 2-point segment against a half plane."""
    n_out = 0
    d0 = ny * v_in[0, 0] + nz * v_in[0, 1] - offset
    d1 = ny * v_in[1, 0] + nz * v_in[1, 1] - offset
    if d0 <= 0.0:
        v_out[n_out, 0] = v_in[0, 0]
        v_out[n_out, 1] = v_in[0, 1]
        n_out += 1
    if d1 <= 0.0:
        v_out[n_out, 0] = v_in[1, 0]
        v_out[n_out, 1] = v_in[1, 1]
        n_out += 1
    if d0 * d1 < 0.0:
        t = d0 / (d0 - d1)
        v_out[n_out, 0] = v_in[0, 0] + t * (v_in[1, 0] - v_in[0, 0])
        v_out[n_out, 1] = v_in[0, 1] + t * (v_in[1, 1] - v_in[0, 1])
        n_out += 1
    return n_out


@njit(cache=True, nogil=True)
def _collide_boxes(pay, paz, aa, hay, haz, pby, pbz, ab, hby, hbz,
                   pts, seps, work_a, work_b):
    """SAT + face clipping for two oriented rectangles.

    Returns (count, normal_y, normal_z) with the normal pointing from box A
    to box B; writes up to two contact points (world coords, projected onto
    the reference face) and their separations (<= 0) into pts/seps.
    """
    ca = math.cos(aa)
    sa = math.sin(aa)
    cb = math.cos(ab)
    sb = math.sin(ab)

    dpy = pby - pay
    dpz = pbz - paz
    # position delta in each body frame
    da0 = ca * dpy + sa * dpz
    da1 = -sa * dpy + ca * dpz
    db0 = cb * dpy + sb * dpz
    db1 = -sb * dpy + cb * dpz

    # C = R_a^T R_b = R(ab - aa)
    cr = math.cos(ab - aa)
    sr = math.sin(ab - aa)
    a00 = abs(cr)
    a01 = abs(sr)

    fa0 = abs(da0) - hay - (a00 * hby + a01 * hbz)
    if fa0 > 0.0:
        return 0, 0.0, 0.0
    fa1 = abs(da1) - haz - (a01 * hby + a00 * hbz)
    if fa1 > 0.0:
        return 0, 0.0, 0.0
    fb0 = abs(db0) - hby - (a00 * hay + a01 * haz)
    if fb0 > 0.0:
        return 0, 0.0, 0.0
    fb1 = abs(db1) - hbz - (a01 * hay + a00 * haz)
    if fb1 > 0.0:
        return 0, 0.0, 0.0

    axis = _FACE_A_Y
    separation = fa0
    if da0 > 0.0:
        ny, nz = ca, sa
    else:
        ny, nz = -ca, -sa

    if fa1 > _REL_TOL * separation + _ABS_TOL * haz:
        axis = _FACE_A_Z
        separation = fa1
        if da1 > 0.0:
            ny, nz = -sa, ca
        else:
            ny, nz = sa, -ca
    if fb0 > _REL_TOL * separation + _ABS_TOL * hby:
        axis = _FACE_B_Y
        separation = fb0
        if db0 > 0.0:
            ny, nz = cb, sb
        else:
            ny, nz = -cb, -sb
    if fb1 > _REL_TOL * separation + _ABS_TOL * hbz:
        axis = _FACE_B_Z
        separation = fb1
        if db1 > 0.0:
            ny, nz = -sb, cb
        else:
            ny, nz = sb, -cb

    # reference face setup: front plane plus two side planes
    if axis == _FACE_A_Y:
        fny, fnz = ny, nz
        front = pay * fny + paz * fnz + hay
        sny, snz = -sa, ca
        side = pay * sny + paz * snz
        neg_side = -side + haz
        pos_side = side + haz
        _incident_edge(hby, hbz, pby, pbz, cb, sb, fny, fnz, work_a)
    elif axis == _FACE_A_Z:
        fny, fnz = ny, nz
        front = pay * fny + paz * fnz + haz
        sny, snz = ca, sa
        side = pay * sny + paz * snz
        neg_side = -side + hay
        pos_side = side + hay
        _incident_edge(hby, hbz, pby, pbz, cb, sb, fny, fnz, work_a)
    elif axis == _FACE_B_Y:
        fny, fnz = -ny, -nz
        front = pby * fny + pbz * fnz + hby
        sny, snz = -sb, cb
        side = pby * sny + pbz * snz
        neg_side = -side + hbz
        pos_side = side + hbz
        _incident_edge(hay, haz, pay, paz, ca, sa, fny, fnz, work_a)
    else:
        fny, fnz = -ny, -nz
        front = pby * fny + pbz * fnz + hbz
        sny, snz = cb, sb
        side = pby * sny + pbz * snz
        neg_side = -side + hay
        pos_side = side + hay
        _incident_edge(hay, haz, pay, paz, ca, sa, fny, fnz, work_a)

    if _clip_segment(work_a, 2, -sny, -snz, neg_side, work_b) < 2:
        return 0, 0.0, 0.0
    if _clip_segment(work_b, 2, sny, snz, pos_side, work_a) < 2:
        return 0, 0.0, 0.0

    count = 0
    for i in range(2):
        sep = fny * work_a[i, 0] + fnz * work_a[i, 1] - front
        if sep <= 0.0:
            pts[count, 0] = work_a[i, 0] - sep * fny
            pts[count, 1] = work_a[i, 1] - sep * fnz
            seps[count] = sep
            count += 1
    return count, ny, nz


@njit(cache=True, nogil=True)
def _gather_contacts(pos, angle, half, inv_mass, alive,
                     c_a, c_b, c_py, c_pz, c_ny, c_nz, c_sep,
                     pts, seps, work_a, work_b):
    """Narrow phase over all live pairs; returns the contact-point count."""
    n = pos.shape[0]
    m = 0
    for i in range(n):
        if alive[i] == 0:
            continue
        hyi = half[i, 0]
        hzi = half[i, 1]
        ri = math.hypot(hyi, hzi)
        for j in range(i + 1, n):
            if alive[j] == 0:
                continue
            if inv_mass[i] == 0.0 and inv_mass[j] == 0.0:
                continue
            # circle-radius broad phase
            rj = math.hypot(half[j, 0], half[j, 1])
            dy = pos[j, 0] - pos[i, 0]
            dz = pos[j, 1] - pos[i, 1]
            rr = ri + rj
            if dy * dy + dz * dz > rr * rr:
                continue
            cnt, ny, nz = _collide_boxes(
                pos[i, 0], pos[i, 1], angle[i], hyi, hzi,
                pos[j, 0], pos[j, 1], angle[j], half[j, 0], half[j, 1],
                pts, seps, work_a, work_b)
            for k in range(cnt):
                c_a[m] = i
                c_b[m] = j
                c_py[m] = pts[k, 0]
                c_pz[m] = pts[k, 1]
                c_ny[m] = ny
                c_nz[m] = nz
                c_sep[m] = seps[k]
                m += 1
    return m


@njit(cache=True, nogil=True)
def advance(pos, angle, vel, omega, half, inv_mass, inv_inertia, alive,
            dt, gravity, friction, iterations, baumgarte, slop,
            n_steps, eps_v, eps_w, quiet_needed, check_quiescence):
    """Run up to n_steps of semi-implicit integration with impulse contacts.

    With check_quiescence, stops once every live dynamic body has stayed
    below the velocity thresholds for quiet_needed consecutive steps.
    Returns (steps_done, converged).
    """
    n = pos.shape[0]
    cap = n * n * 2
    c_a = np.empty(cap, np.int64)
    c_b = np.empty(cap, np.int64)
    c_py = np.empty(cap, np.float64)
    c_pz = np.empty(cap, np.float64)
    c_ny = np.empty(cap, np.float64)
    c_nz = np.empty(cap, np.float64)
    c_sep = np.empty(cap, np.float64)
    r1y = np.empty(cap, np.float64)
    r1z = np.empty(cap, np.float64)
    r2y = np.empty(cap, np.float64)
    r2z = np.empty(cap, np.float64)
    mass_n = np.empty(cap, np.float64)
    mass_t = np.empty(cap, np.float64)
    bias = np.empty(cap, np.float64)
    acc_n = np.empty(cap, np.float64)
    acc_t = np.empty(cap, np.float64)
    acc_bn = np.empty(cap, np.float64)
    # previous-step contacts for warm starting (matched by pair + proximity)
    p_a = np.empty(cap, np.int64)
    p_b = np.empty(cap, np.int64)
    p_py = np.empty(cap, np.float64)
    p_pz = np.empty(cap, np.float64)
    p_pn = np.empty(cap, np.float64)
    p_pt = np.empty(cap, np.float64)
    m_prev = 0
    match_r2 = 4.0e-6  # 2 mm matching radius, squared
    # pseudo-velocities: penetration correction that moves positions this
    # step but never enters the real velocity state (keeps resting stacks
    # from being fed energy by the positional bias)
    pv = np.zeros((n, 2), np.float64)
    pw = np.zeros(n, np.float64)
    pts = np.empty((2, 2), np.float64)
    seps = np.empty(2, np.float64)
    work_a = np.empty((2, 2), np.float64)
    work_b = np.empty((2, 2), np.float64)

    inv_dt = 1.0 / dt
    quiet = 0
    steps = 0
    for _ in range(n_steps):
        # integrate gravity
        for i in range(n):
            if inv_mass[i] > 0.0 and alive[i] != 0:
                vel[i, 1] -= gravity * dt

        m = _gather_contacts(pos, angle, half, inv_mass, alive,
                             c_a, c_b, c_py, c_pz, c_ny, c_nz, c_sep,
                             pts, seps, work_a, work_b)

        # precompute effective masses and restitution-free bias velocity
        for k in range(m):
            a = c_a[k]
            b = c_b[k]
            ny = c_ny[k]
            nz = c_nz[k]
            ty = nz
            tz = -ny
            r1y[k] = c_py[k] - pos[a, 0]
            r1z[k] = c_pz[k] - pos[a, 1]
            r2y[k] = c_py[k] - pos[b, 0]
            r2z[k] = c_pz[k] - pos[b, 1]
            rn1 = r1y[k] * ny + r1z[k] * nz
            rn2 = r2y[k] * ny + r2z[k] * nz
            rr1 = r1y[k] * r1y[k] + r1z[k] * r1z[k]
            rr2 = r2y[k] * r2y[k] + r2z[k] * r2z[k]
            kn = (inv_mass[a] + inv_mass[b]
                  + inv_inertia[a] * (rr1 - rn1 * rn1)
                  + inv_inertia[b] * (rr2 - rn2 * rn2))
            mass_n[k] = 1.0 / kn
            rt1 = r1y[k] * ty + r1z[k] * tz
            rt2 = r2y[k] * ty + r2z[k] * tz
            kt = (inv_mass[a] + inv_mass[b]
                  + inv_inertia[a] * (rr1 - rt1 * rt1)
                  + inv_inertia[b] * (rr2 - rt2 * rt2))
            mass_t[k] = 1.0 / kt
            pen_beyond_slop = c_sep[k] + slop
            if pen_beyond_slop < 0.0:
                bias[k] = -baumgarte * inv_dt * pen_beyond_slop
            else:
                bias[k] = 0.0
            acc_bn[k] = 0.0

            # warm start from the nearest matching contact of the last step
            pn = 0.0
            pt = 0.0
            best = match_r2
            for q in range(m_prev):
                if p_a[q] == a and p_b[q] == b:
                    ddy = p_py[q] - c_py[k]
                    ddz = p_pz[q] - c_pz[k]
                    d2 = ddy * ddy + ddz * ddz
                    if d2 < best:
                        best = d2
                        pn = p_pn[q]
                        pt = p_pt[q]
            acc_n[k] = pn
            acc_t[k] = pt
            if pn != 0.0 or pt != 0.0:
                ty = nz
                tz = -ny
                py = pn * ny + pt * ty
                pz = pn * nz + pt * tz
                vel[a, 0] -= inv_mass[a] * py
                vel[a, 1] -= inv_mass[a] * pz
                omega[a] -= inv_inertia[a] * (r1y[k] * pz - r1z[k] * py)
                vel[b, 0] += inv_mass[b] * py
                vel[b, 1] += inv_mass[b] * pz
                omega[b] += inv_inertia[b] * (r2y[k] * pz - r2z[k] * py)

        # sequential impulses with within-step accumulation
        for _it in range(iterations):
            for k in range(m):
                a = c_a[k]
                b = c_b[k]
                ny = c_ny[k]
                nz = c_nz[k]
                dvy = (vel[b, 0] - omega[b] * r2z[k]
                       - vel[a, 0] + omega[a] * r1z[k])
                dvz = (vel[b, 1] + omega[b] * r2y[k]
                       - vel[a, 1] - omega[a] * r1y[k])
                vn = dvy * ny + dvz * nz
                d_pn = mass_n[k] * (-vn)
                pn0 = acc_n[k]
                pn1 = pn0 + d_pn
                if pn1 < 0.0:
                    pn1 = 0.0
                acc_n[k] = pn1
                d_pn = pn1 - pn0
                py = d_pn * ny
                pz = d_pn * nz
                vel[a, 0] -= inv_mass[a] * py
                vel[a, 1] -= inv_mass[a] * pz
                omega[a] -= inv_inertia[a] * (r1y[k] * pz - r1z[k] * py)
                vel[b, 0] += inv_mass[b] * py
                vel[b, 1] += inv_mass[b] * pz
                omega[b] += inv_inertia[b] * (r2y[k] * pz - r2z[k] * py)

                ty = nz
                tz = -ny
                dvy = (vel[b, 0] - omega[b] * r2z[k]
                       - vel[a, 0] + omega[a] * r1z[k])
                dvz = (vel[b, 1] + omega[b] * r2y[k]
                       - vel[a, 1] - omega[a] * r1y[k])
                vt = dvy * ty + dvz * tz
                d_pt = -mass_t[k] * vt
                max_pt = friction * acc_n[k]
                pt0 = acc_t[k]
                pt1 = pt0 + d_pt
                if pt1 < -max_pt:
                    pt1 = -max_pt
                elif pt1 > max_pt:
                    pt1 = max_pt
                acc_t[k] = pt1
                d_pt = pt1 - pt0
                py = d_pt * ty
                pz = d_pt * tz
                vel[a, 0] -= inv_mass[a] * py
                vel[a, 1] -= inv_mass[a] * pz
                omega[a] -= inv_inertia[a] * (r1y[k] * pz - r1z[k] * py)
                vel[b, 0] += inv_mass[b] * py
                vel[b, 1] += inv_mass[b] * pz
                omega[b] += inv_inertia[b] * (r2y[k] * pz - r2z[k] * py)

        # remember solved impulses for next step's warm start
        for k in range(m):
            p_a[k] = c_a[k]
            p_b[k] = c_b[k]
            p_py[k] = c_py[k]
            p_pz[k] = c_pz[k]
            p_pn[k] = acc_n[k]
            p_pt[k] = acc_t[k]
        m_prev = m

        # positional correction on pseudo-velocities (discarded each step)
        for i in range(n):
            pv[i, 0] = 0.0
            pv[i, 1] = 0.0
            pw[i] = 0.0
        for _it in range(iterations):
            for k in range(m):
                if bias[k] == 0.0:
                    continue
                a = c_a[k]
                b = c_b[k]
                ny = c_ny[k]
                nz = c_nz[k]
                dvy = (pv[b, 0] - pw[b] * r2z[k]
                       - pv[a, 0] + pw[a] * r1z[k])
                dvz = (pv[b, 1] + pw[b] * r2y[k]
                       - pv[a, 1] - pw[a] * r1y[k])
                vn = dvy * ny + dvz * nz
                d_pn = mass_n[k] * (bias[k] - vn)
                pn0 = acc_bn[k]
                pn1 = pn0 + d_pn
                if pn1 < 0.0:
                    pn1 = 0.0
                acc_bn[k] = pn1
                d_pn = pn1 - pn0
                py = d_pn * ny
                pz = d_pn * nz
                pv[a, 0] -= inv_mass[a] * py
                pv[a, 1] -= inv_mass[a] * pz
                pw[a] -= inv_inertia[a] * (r1y[k] * pz - r1z[k] * py)
                pv[b, 0] += inv_mass[b] * py
                pv[b, 1] += inv_mass[b] * pz
                pw[b] += inv_inertia[b] * (r2y[k] * pz - r2z[k] * py)

        # integrate positions; keep angles in (-pi, pi]
        for i in range(n):
            if inv_mass[i] > 0.0 and alive[i] != 0:
                pos[i, 0] += (vel[i, 0] + pv[i, 0]) * dt
                pos[i, 1] += (vel[i, 1] + pv[i, 1]) * dt
                a = angle[i] + (omega[i] + pw[i]) * dt
                if a > math.pi or a <= -math.pi:
                    a -= 2.0 * math.pi * math.floor((a + math.pi)
                                                    / (2.0 * math.pi))
                    if a == -math.pi:
                        a = math.pi
                angle[i] = a

        steps += 1
        if check_quiescence:
            still = True
            for i in range(n):
                if inv_mass[i] > 0.0 and alive[i] != 0:
                    if (math.hypot(vel[i, 0], vel[i, 1]) >= eps_v
                            or abs(omega[i]) >= eps_w):
                        still = False
                        break
            if still:
                quiet += 1
                if quiet >= quiet_needed:
                    return steps, True
            else:
                quiet = 0
    return steps, not check_quiescence


@njit(cache=True, nogil=True)
def surface_heights(pos, angle, half, alive, probes, out):
    """Highest surface z hit by a downward ray at each probe y."""
    n = pos.shape[0]
    for q in range(probes.shape[0]):
        yq = probes[q]
        best = -1.0e30
        for i in range(n):
            if alive[i] == 0:
                continue
            c = math.cos(angle[i])
            s = math.sin(angle[i])
            hy = half[i, 0]
            hz = half[i, 1]
            cy = pos[i, 0]
            cz = pos[i, 1]
            # corner loop in CCW order
            for e in range(4):
                if e == 0:
                    u0, w0, u1, w1 = hy, hz, -hy, hz
                elif e == 1:
                    u0, w0, u1, w1 = -hy, hz, -hy, -hz
                elif e == 2:
                    u0, w0, u1, w1 = -hy, -hz, hy, -hz
                else:
                    u0, w0, u1, w1 = hy, -hz, hy, hz
                y0 = cy + c * u0 - s * w0
                z0 = cz + s * u0 + c * w0
                y1 = cy + c * u1 - s * w1
                z1 = cz + s * u1 + c * w1
                if (y0 - yq) * (y1 - yq) <= 0.0:
                    if y0 != y1:
                        t = (yq - y0) / (y1 - y0)
                        z_hit = z0 + t * (z1 - z0)
                    else:
                        z_hit = z0 if z0 > z1 else z1
                    if z_hit > best:
                        best = z_hit
        out[q] = best


@njit(cache=True, nogil=True)
def max_penetration(pos, angle, half, inv_mass, alive):
    """Deepest pairwise overlap among live bodies (0 when separated)."""
    n = pos.shape[0]
    pts = np.empty((2, 2), np.float64)
    seps = np.empty(2, np.float64)
    work_a = np.empty((2, 2), np.float64)
    work_b = np.empty((2, 2), np.float64)
    worst = 0.0
    for i in range(n):
        if alive[i] == 0:
            continue
        for j in range(i + 1, n):
            if alive[j] == 0:
                continue
            if inv_mass[i] == 0.0 and inv_mass[j] == 0.0:
                continue
            cnt, _ny, _nz = _collide_boxes(
                pos[i, 0], pos[i, 1], angle[i], half[i, 0], half[i, 1],
                pos[j, 0], pos[j, 1], angle[j], half[j, 0], half[j, 1],
                pts, seps, work_a, work_b)
            for k in range(cnt):
                depth = -seps[k]
                if depth > worst:
                    worst = depth
    return worst
