"""Hot numeric kernels, each in a numba loop flavour and a numpy flavour.

The public functions (``fk_forward``, ``fk_vjp``, ``project_forward``,
``project_vjp``, ``geometric_median``) dispatch on
:func:`mocapvi._accel.numba_enabled`.  Both flavours implement identical
math; ``tests/test_kernels.py`` checks them against each other.

Kinematic tree arrays (see :meth:`KinematicModel.arrays`):

* ``parent[s]`` parent segment index, -1 for the root (always segment 0)
* ``offset[s]`` nominal offset of segment s in its parent frame (m)
* ``scale[s]`` index into the scale factors, -1 for unscaled
* ``jtype[s]`` 0 free root, 1 hinge, 2 ball (intrinsic XYZ Euler)
* ``axis[s]`` hinge axis (unit vector)
* ``qidx[s]`` first pose coordinate driven by segment s
* ``site_seg[j]``, ``site_off[j]`` site attachment and nominal offset
* ``n_scale`` number of scale factors; site residual j lives at
  ``beta[n_scale + 3*j : n_scale + 3*j + 3]``
"""
import numpy as np

from ._accel import numba_enabled, try_njit

FREE, HINGE, BALL = 0, 1, 2
MIN_DEPTH = 1e-6


# ======================================================================
# rotations (numpy, batched over leading axis)
# ======================================================================

def _rx(a):
    c, s = np.cos(a), np.sin(a)
    z, o = np.zeros_like(a), np.ones_like(a)
    return np.stack([o, z, z, z, c, -s, z, s, c], -1).reshape(a.shape + (3, 3))


def _ry(a):
    c, s = np.cos(a), np.sin(a)
    z, o = np.zeros_like(a), np.ones_like(a)
    return np.stack([c, z, s, z, o, z, -s, z, c], -1).reshape(a.shape + (3, 3))


def _rz(a):
    c, s = np.cos(a), np.sin(a)
    z, o = np.zeros_like(a), np.ones_like(a)
    return np.stack([c, -s, z, s, c, z, z, z, o], -1).reshape(a.shape + (3, 3))


def _drx(a):
    c, s = np.cos(a), np.sin(a)
    z = np.zeros_like(a)
    return np.stack([z, z, z, z, -s, -c, z, c, -s], -1).reshape(a.shape + (3, 3))


def _dry(a):
    c, s = np.cos(a), np.sin(a)
    z = np.zeros_like(a)
    return np.stack([-s, z, c, z, z, z, -c, z, -s], -1).reshape(a.shape + (3, 3))


def _drz(a):
    c, s = np.cos(a), np.sin(a)
    z = np.zeros_like(a)
    return np.stack([-s, -c, z, c, -s, z, z, z, z], -1).reshape(a.shape + (3, 3))


def euler_xyz(angles):
    """Intrinsic XYZ Euler angles (..., 3) -> rotation matrices (..., 3, 3)."""
    angles = np.asarray(angles, dtype=np.float64)
    return _rx(angles[..., 0]) @ _ry(angles[..., 1]) @ _rz(angles[..., 2])


def _hat(n):
    return np.array([[0.0, -n[2], n[1]], [n[2], 0.0, -n[0]], [-n[1], n[0], 0.0]])


def _hinge_np(q, axis):
    k = _hat(axis)
    k2 = k @ k
    c, s = np.cos(q)[:, None, None], np.sin(q)[:, None, None]
    return np.eye(3) + s * k + (1.0 - c) * k2, c * k + s * k2


def _local_np(theta, s, jtype, axis, qidx):
    """Local joint rotation and its partials for every pose in the batch."""
    q0 = qidx[s] + (3 if jtype[s] == FREE else 0)
    if jtype[s] == HINGE:
        rot, d = _hinge_np(theta[:, q0], axis[s])
        return rot, (d,)
    ang = theta[:, q0:q0 + 3]
    rx, ry, rz = _rx(ang[:, 0]), _ry(ang[:, 1]), _rz(ang[:, 2])
    rot = rx @ ry @ rz
    return rot, (_drx(ang[:, 0]) @ ry @ rz, rx @ _dry(ang[:, 1]) @ rz, rx @ ry @ _drz(ang[:, 2]))


def _scale_np(beta, idx):
    return 1.0 if idx < 0 else beta[idx]


# ======================================================================
# forward kinematics: numpy flavour
# ======================================================================

def _fk_chain_np(theta, beta, parent, offset, scale, jtype, axis, qidx):
    n = theta.shape[0]
    nseg = parent.shape[0]
    rots = np.empty((nseg, n, 3, 3))
    locs = [None] * nseg
    pos = np.empty((nseg, n, 3))
    for s in range(nseg):
        rot, dloc = _local_np(theta, s, jtype, axis, qidx)
        locs[s] = (rot, dloc)
        if parent[s] < 0:
            rots[s] = rot
            pos[s] = theta[:, 0:3]
        else:
            p = parent[s]
            w = _scale_np(beta, scale[s]) * offset[s]
            pos[s] = pos[p] + rots[p] @ w
            rots[s] = rots[p] @ rot
    return rots, pos, locs


def _fk_forward_np(theta, beta, parent, offset, scale, jtype, axis, qidx,
                   site_seg, site_off, n_scale):
    rots, pos, _ = _fk_chain_np(theta, beta, parent, offset, scale, jtype, axis, qidx)
    nsite = site_seg.shape[0]
    sites = np.empty((theta.shape[0], nsite, 3))
    for j in range(nsite):
        s = site_seg[j]
        v = _scale_np(beta, scale[s]) * site_off[j] + beta[n_scale + 3 * j:n_scale + 3 * j + 3]
        sites[:, j] = pos[s] + rots[s] @ v
    return sites, np.ascontiguousarray(np.swapaxes(pos, 0, 1))


def _fk_vjp_np(theta, beta, parent, offset, scale, jtype, axis, qidx,
               site_seg, site_off, n_scale, gsites):
    rots, pos, locs = _fk_chain_np(theta, beta, parent, offset, scale, jtype, axis, qidx)
    n = theta.shape[0]
    nseg = parent.shape[0]
    gtheta = np.zeros_like(theta)
    gbeta = np.zeros_like(beta)
    grot = np.zeros((nseg, n, 3, 3))
    gpos = np.zeros((nseg, n, 3))
    for j in range(site_seg.shape[0]):
        s = site_seg[j]
        sc = _scale_np(beta, scale[s])
        v = sc * site_off[j] + beta[n_scale + 3 * j:n_scale + 3 * j + 3]
        gx = gsites[:, j]
        gpos[s] += gx
        grot[s] += gx[:, :, None] * v[None, None, :]
        gv = np.einsum("nij,ni->j", rots[s], gx)
        gbeta[n_scale + 3 * j:n_scale + 3 * j + 3] += gv
        if scale[s] >= 0:
            gbeta[scale[s]] += gv @ site_off[j]
    for s in range(nseg - 1, -1, -1):
        rot, dloc = locs[s]
        if parent[s] < 0:
            gtheta[:, 0:3] += gpos[s]
            gloc = grot[s]
        else:
            p = parent[s]
            w = _scale_np(beta, scale[s]) * offset[s]
            gpos[p] += gpos[s]
            grot[p] += gpos[s][:, :, None] * w[None, None, :]
            if scale[s] >= 0:
                gbeta[scale[s]] += np.einsum("nij,ni,j->", rots[p], gpos[s], offset[s])
            grot[p] += grot[s] @ np.swapaxes(rot, -1, -2)
            gloc = np.swapaxes(rots[p], -1, -2) @ grot[s]
        q0 = qidx[s] + (3 if jtype[s] == FREE else 0)
        for k, d in enumerate(dloc):
            gtheta[:, q0 + k] += np.einsum("nij,nij->n", gloc, d)
    return gtheta, gbeta


# ======================================================================
# forward kinematics: numba flavour (loops per pose)
# ======================================================================

@try_njit
def _mm3(a, b, out):
    for i in range(3):
        for j in range(3):
            acc = 0.0
            for k in range(3):
                acc += a[i, k] * b[k, j]
            out[i, j] = acc


@try_njit
def _euler_nb(a, b, c, rot, d0, d1, d2):
    # R = Rx(a) Ry(b) Rz(c) and its partials, written out without temporaries
    ca, sa = np.cos(a), np.sin(a)
    cb, sb = np.cos(b), np.sin(b)
    cc, sc = np.cos(c), np.sin(c)
    rot[0, 0] = cb * cc
    rot[0, 1] = -cb * sc
    rot[0, 2] = sb
    rot[1, 0] = sa * sb * cc + ca * sc
    rot[1, 1] = -sa * sb * sc + ca * cc
    rot[1, 2] = -sa * cb
    rot[2, 0] = -ca * sb * cc + sa * sc
    rot[2, 1] = ca * sb * sc + sa * cc
    rot[2, 2] = ca * cb
    d0[0, 0] = 0.0
    d0[0, 1] = 0.0
    d0[0, 2] = 0.0
    d0[1, 0] = ca * sb * cc - sa * sc
    d0[1, 1] = -ca * sb * sc - sa * cc
    d0[1, 2] = -ca * cb
    d0[2, 0] = sa * sb * cc + ca * sc
    d0[2, 1] = -sa * sb * sc + ca * cc
    d0[2, 2] = -sa * cb
    d1[0, 0] = -sb * cc
    d1[0, 1] = sb * sc
    d1[0, 2] = cb
    d1[1, 0] = sa * cb * cc
    d1[1, 1] = -sa * cb * sc
    d1[1, 2] = sa * sb
    d1[2, 0] = -ca * cb * cc
    d1[2, 1] = ca * cb * sc
    d1[2, 2] = -ca * sb
    d2[0, 0] = -cb * sc
    d2[0, 1] = -cb * cc
    d2[0, 2] = 0.0
    d2[1, 0] = -sa * sb * sc + ca * cc
    d2[1, 1] = -sa * sb * cc - ca * sc
    d2[1, 2] = 0.0
    d2[2, 0] = ca * sb * sc + sa * cc
    d2[2, 1] = ca * sb * cc - sa * sc
    d2[2, 2] = 0.0


@try_njit
def _hinge_nb(q, n, rot, d0):
    # Rodrigues about n: R = I + sin K + (1 - cos) K^2 with K^2 = n n^T - |n|^2 I
    c, s = np.cos(q), np.sin(q)
    nn = n[0] * n[0] + n[1] * n[1] + n[2] * n[2]
    for i in range(3):
        for j in range(3):
            if i == j:
                kij = 0.0
            elif (j - i) % 3 == 1:
                kij = -n[3 - i - j]
            else:
                kij = n[3 - i - j]
            k2ij = n[i] * n[j] - (nn if i == j else 0.0)
            rot[i, j] = (1.0 if i == j else 0.0) + s * kij + (1.0 - c) * k2ij
            d0[i, j] = c * kij + s * k2ij


@try_njit
def _fk_pose_nb(th, beta, parent, offset, scale, jtype, axis, qidx, rots, locs, dlocs, pos):
    nseg = parent.shape[0]
    for s in range(nseg):
        q0 = qidx[s]
        if jtype[s] == 1:
            _hinge_nb(th[q0], axis[s], locs[s], dlocs[s, 0])
        elif jtype[s] == 0:
            _euler_nb(th[3], th[4], th[5], locs[s], dlocs[s, 0], dlocs[s, 1], dlocs[s, 2])
        else:
            _euler_nb(th[q0], th[q0 + 1], th[q0 + 2], locs[s], dlocs[s, 0], dlocs[s, 1], dlocs[s, 2])
        p = parent[s]
        if p < 0:
            for i in range(3):
                pos[s, i] = th[i]
                for j in range(3):
                    rots[s, i, j] = locs[s, i, j]
        else:
            sc = 1.0 if scale[s] < 0 else beta[scale[s]]
            for i in range(3):
                acc = pos[p, i]
                for k in range(3):
                    acc += rots[p, i, k] * sc * offset[s, k]
                pos[s, i] = acc
            _mm3(rots[p], locs[s], rots[s])


@try_njit(cache=True)
def _fk_forward_nb(theta, beta, parent, offset, scale, jtype, axis, qidx,
                   site_seg, site_off, n_scale):
    n = theta.shape[0]
    nseg = parent.shape[0]
    nsite = site_seg.shape[0]
    sites = np.empty((n, nsite, 3))
    origins = np.empty((n, nseg, 3))
    rots = np.empty((nseg, 3, 3))
    locs = np.empty((nseg, 3, 3))
    dlocs = np.empty((nseg, 3, 3, 3))
    pos = np.empty((nseg, 3))
    for m in range(n):
        _fk_pose_nb(theta[m], beta, parent, offset, scale, jtype, axis, qidx, rots, locs, dlocs, pos)
        for s in range(nseg):
            for i in range(3):
                origins[m, s, i] = pos[s, i]
        for j in range(nsite):
            s = site_seg[j]
            sc = 1.0 if scale[s] < 0 else beta[scale[s]]
            for i in range(3):
                acc = pos[s, i]
                for k in range(3):
                    acc += rots[s, i, k] * (sc * site_off[j, k] + beta[n_scale + 3 * j + k])
                sites[m, j, i] = acc
    return sites, origins


@try_njit(cache=True)
def _fk_vjp_nb(theta, beta, parent, offset, scale, jtype, axis, qidx,
               site_seg, site_off, n_scale, gsites):
    n = theta.shape[0]
    nseg = parent.shape[0]
    nsite = site_seg.shape[0]
    gtheta = np.zeros_like(theta)
    gbeta = np.zeros_like(beta)
    rots = np.empty((nseg, 3, 3))
    locs = np.empty((nseg, 3, 3))
    dlocs = np.empty((nseg, 3, 3, 3))
    pos = np.empty((nseg, 3))
    grot = np.empty((nseg, 3, 3))
    gpos = np.empty((nseg, 3))
    v = np.empty(3)
    gv = np.empty(3)
    gloc = np.empty((3, 3))
    for m in range(n):
        _fk_pose_nb(theta[m], beta, parent, offset, scale, jtype, axis, qidx, rots, locs, dlocs, pos)
        grot[:] = 0.0
        gpos[:] = 0.0
        for j in range(nsite):
            s = site_seg[j]
            sc = 1.0 if scale[s] < 0 else beta[scale[s]]
            for k in range(3):
                v[k] = sc * site_off[j, k] + beta[n_scale + 3 * j + k]
            for i in range(3):
                gx = gsites[m, j, i]
                gpos[s, i] += gx
                for k in range(3):
                    grot[s, i, k] += gx * v[k]
            for k in range(3):
                acc = 0.0
                for i in range(3):
                    acc += rots[s, i, k] * gsites[m, j, i]
                gv[k] = acc
                gbeta[n_scale + 3 * j + k] += acc
            if scale[s] >= 0:
                gbeta[scale[s]] += gv[0] * site_off[j, 0] + gv[1] * site_off[j, 1] + gv[2] * site_off[j, 2]
        for s in range(nseg - 1, -1, -1):
            p = parent[s]
            if p < 0:
                for i in range(3):
                    gtheta[m, i] += gpos[s, i]
                    for k in range(3):
                        gloc[i, k] = grot[s, i, k]
            else:
                sc = 1.0 if scale[s] < 0 else beta[scale[s]]
                for i in range(3):
                    gpos[p, i] += gpos[s, i]
                    for k in range(3):
                        grot[p, i, k] += gpos[s, i] * sc * offset[s, k]
                if scale[s] >= 0:
                    acc = 0.0
                    for i in range(3):
                        for k in range(3):
                            acc += rots[p, i, k] * gpos[s, i] * offset[s, k]
                    gbeta[scale[s]] += acc
                # R_s = R_p @ L_s
                for i in range(3):
                    for k in range(3):
                        acc = 0.0
                        acc2 = 0.0
                        for l in range(3):
                            acc += grot[s, i, l] * locs[s, k, l]
                            acc2 += rots[p, l, i] * grot[s, l, k]
                        grot[p, i, k] += acc
                        gloc[i, k] = acc2
            ndof = 1 if jtype[s] == 1 else 3
            q0 = qidx[s] + (3 if jtype[s] == 0 else 0)
            for d in range(ndof):
                acc = 0.0
                for i in range(3):
                    for k in range(3):
                        acc += gloc[i, k] * dlocs[s, d, i, k]
                gtheta[m, q0 + d] += acc
    return gtheta, gbeta


def fk_forward(theta, beta, arrays):
    """Sites (N, J, 3) and segment origins (N, S, 3) for poses (N, K)."""
    theta = np.ascontiguousarray(theta, dtype=np.float64)
    beta = np.ascontiguousarray(beta, dtype=np.float64)
    fn = _fk_forward_nb if numba_enabled() else _fk_forward_np
    return fn(theta, beta, *arrays)


def fk_vjp(theta, beta, arrays, gsites):
    """Cotangents of pose and scale parameters given site cotangents."""
    theta = np.ascontiguousarray(theta, dtype=np.float64)
    beta = np.ascontiguousarray(beta, dtype=np.float64)
    gsites = np.ascontiguousarray(gsites, dtype=np.float64)
    fn = _fk_vjp_nb if numba_enabled() else _fk_vjp_np
    return fn(theta, beta, *arrays, gsites)


# ======================================================================
# projection with Brown-Conrady distortion
# intr = (fx, fy, cx, cy), dist = (k1, k2, p1, p2, k3)
# ======================================================================

def _project_np(pts, rot, trans, intr, dist):
    xc = pts @ rot.T + trans
    z = xc[:, 2]
    valid = z > MIN_DEPTH
    zs = np.where(valid, z, 1.0)
    a = xc[:, 0] / zs
    b = xc[:, 1] / zs
    k1, k2, p1, p2, k3 = dist
    r2 = a * a + b * b
    rad = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3))
    xd = a * rad + 2.0 * p1 * a * b + p2 * (r2 + 2.0 * a * a)
    yd = b * rad + p1 * (r2 + 2.0 * b * b) + 2.0 * p2 * a * b
    uv = np.stack([intr[0] * xd + intr[2], intr[1] * yd + intr[3]], -1)
    uv[~valid] = 0.0
    return uv, valid


def _project_vjp_np(pts, rot, trans, intr, dist, guv):
    xc = pts @ rot.T + trans
    z = xc[:, 2]
    valid = z > MIN_DEPTH
    zs = np.where(valid, z, 1.0)
    a = xc[:, 0] / zs
    b = xc[:, 1] / zs
    k1, k2, p1, p2, k3 = dist
    r2 = a * a + b * b
    rad = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3))
    drad = k1 + r2 * (2.0 * k2 + 3.0 * k3 * r2)
    dxa = rad + 2.0 * a * a * drad + 2.0 * p1 * b + 6.0 * p2 * a
    dxb = 2.0 * a * b * drad + 2.0 * p1 * a + 2.0 * p2 * b
    dya = 2.0 * a * b * drad + 2.0 * p1 * a + 2.0 * p2 * b
    dyb = rad + 2.0 * b * b * drad + 6.0 * p1 * b + 2.0 * p2 * a
    gu = np.where(valid, guv[:, 0], 0.0) * intr[0]
    gvv = np.where(valid, guv[:, 1], 0.0) * intr[1]
    ga = gu * dxa + gvv * dya
    gb = gu * dxb + gvv * dyb
    gxc = np.stack([ga / zs, gb / zs, -(ga * a + gb * b) / zs], -1)
    return gxc @ rot, gxc.T @ pts, gxc.sum(0)


@try_njit(cache=True)
def _project_nb(pts, rot, trans, intr, dist):
    n = pts.shape[0]
    uv = np.zeros((n, 2))
    valid = np.zeros(n, dtype=np.bool_)
    k1, k2, p1, p2, k3 = dist[0], dist[1], dist[2], dist[3], dist[4]
    for m in range(n):
        x = rot[0, 0] * pts[m, 0] + rot[0, 1] * pts[m, 1] + rot[0, 2] * pts[m, 2] + trans[0]
        y = rot[1, 0] * pts[m, 0] + rot[1, 1] * pts[m, 1] + rot[1, 2] * pts[m, 2] + trans[1]
        z = rot[2, 0] * pts[m, 0] + rot[2, 1] * pts[m, 1] + rot[2, 2] * pts[m, 2] + trans[2]
        if z <= MIN_DEPTH:
            continue
        valid[m] = True
        a = x / z
        b = y / z
        r2 = a * a + b * b
        rad = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3))
        xd = a * rad + 2.0 * p1 * a * b + p2 * (r2 + 2.0 * a * a)
        yd = b * rad + p1 * (r2 + 2.0 * b * b) + 2.0 * p2 * a * b
        uv[m, 0] = intr[0] * xd + intr[2]
        uv[m, 1] = intr[1] * yd + intr[3]
    return uv, valid


@try_njit(cache=True)
def _project_vjp_nb(pts, rot, trans, intr, dist, guv):
    n = pts.shape[0]
    gpts = np.zeros((n, 3))
    grot = np.zeros((3, 3))
    gtrans = np.zeros(3)
    k1, k2, p1, p2, k3 = dist[0], dist[1], dist[2], dist[3], dist[4]
    for m in range(n):
        x = rot[0, 0] * pts[m, 0] + rot[0, 1] * pts[m, 1] + rot[0, 2] * pts[m, 2] + trans[0]
        y = rot[1, 0] * pts[m, 0] + rot[1, 1] * pts[m, 1] + rot[1, 2] * pts[m, 2] + trans[1]
        z = rot[2, 0] * pts[m, 0] + rot[2, 1] * pts[m, 1] + rot[2, 2] * pts[m, 2] + trans[2]
        if z <= MIN_DEPTH:
            continue
        a = x / z
        b = y / z
        r2 = a * a + b * b
        rad = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3))
        drad = k1 + r2 * (2.0 * k2 + 3.0 * k3 * r2)
        dxa = rad + 2.0 * a * a * drad + 2.0 * p1 * b + 6.0 * p2 * a
        dxb = 2.0 * a * b * drad + 2.0 * p1 * a + 2.0 * p2 * b
        dya = dxb
        dyb = rad + 2.0 * b * b * drad + 6.0 * p1 * b + 2.0 * p2 * a
        gu = guv[m, 0] * intr[0]
        gv = guv[m, 1] * intr[1]
        ga = gu * dxa + gv * dya
        gb = gu * dxb + gv * dyb
        g0 = ga / z
        g1 = gb / z
        g2 = -(ga * a + gb * b) / z
        for k in range(3):
            gpts[m, k] = rot[0, k] * g0 + rot[1, k] * g1 + rot[2, k] * g2
            grot[0, k] += g0 * pts[m, k]
            grot[1, k] += g1 * pts[m, k]
            grot[2, k] += g2 * pts[m, k]
        gtrans[0] += g0
        gtrans[1] += g1
        gtrans[2] += g2
    return gpts, grot, gtrans


def _as_project_args(pts, rot, trans, intr, dist):
    return (np.ascontiguousarray(pts, dtype=np.float64).reshape(-1, 3),
            np.ascontiguousarray(rot, dtype=np.float64),
            np.ascontiguousarray(trans, dtype=np.float64),
            np.ascontiguousarray(intr, dtype=np.float64),
            np.ascontiguousarray(dist, dtype=np.float64))


def project_forward(pts, rot, trans, intr, dist):
    """Pixels (N, 2) and in-front mask (N,) for world points (N, 3).

    Points with camera depth <= 1e-6 m get pixel (0, 0) and ``valid=False``.
    """
    args = _as_project_args(pts, rot, trans, intr, dist)
    fn = _project_nb if numba_enabled() else _project_np
    return fn(*args)


def project_vjp(pts, rot, trans, intr, dist, guv):
    """Cotangents of (points, rotation matrix, translation); masked points get 0."""
    args = _as_project_args(pts, rot, trans, intr, dist)
    guv = np.ascontiguousarray(guv, dtype=np.float64).reshape(-1, 2)
    fn = _project_vjp_nb if numba_enabled() else _project_vjp_np
    return fn(*args, guv)


# ======================================================================
# Weiszfeld geometric median over batches of point clouds (M, n, 3)
# ======================================================================

@try_njit(cache=True)
def _geomedian_nb(points, tol, max_iter):
    m_count, n, dim = points.shape
    out = np.empty((m_count, dim))
    converged = np.zeros(m_count, dtype=np.bool_)
    y = np.empty(dim)
    num = np.empty(dim)
    for m in range(m_count):
        for k in range(dim):
            acc = 0.0
            for i in range(n):
                acc += points[m, i, k]
            y[k] = acc / n
        for _ in range(max_iter):
            for k in range(dim):
                num[k] = 0.0
            den = 0.0
            for i in range(n):
                d2 = 0.0
                for k in range(dim):
                    diff = points[m, i, k] - y[k]
                    d2 += diff * diff
                d = np.sqrt(d2)
                if d < 1e-12:
                    for k in range(dim):
                        y[k] += 1e-12
                    d = 0.0
                    for k in range(dim):
                        diff = points[m, i, k] - y[k]
                        d += diff * diff
                    d = max(np.sqrt(d), 1e-12)
                w = 1.0 / d
                den += w
                for k in range(dim):
                    num[k] += w * points[m, i, k]
            step = 0.0
            for k in range(dim):
                new = num[k] / den
                step += (new - y[k]) ** 2
                y[k] = new
            if np.sqrt(step) < tol:
                converged[m] = True
                break
        for k in range(dim):
            out[m, k] = y[k]
    return out, converged


def _geomedian_np(points, tol, max_iter):
    y = points.mean(axis=1)
    converged = np.zeros(points.shape[0], dtype=bool)
    active = np.ones(points.shape[0], dtype=bool)
    for _ in range(max_iter):
        if not active.any():
            break
        pts = points[active]
        ya = y[active]
        d = np.linalg.norm(pts - ya[:, None, :], axis=-1)
        hit = (d < 1e-12).any(axis=1)
        if hit.any():
            ya = ya + np.where(hit, 1e-12, 0.0)[:, None]
            d = np.linalg.norm(pts - ya[:, None, :], axis=-1)
        w = 1.0 / np.maximum(d, 1e-12)
        new = (w[..., None] * pts).sum(1) / w.sum(1)[:, None]
        done = np.linalg.norm(new - ya, axis=-1) < tol
        idx = np.flatnonzero(active)
        y[idx] = new
        converged[idx[done]] = True
        active[idx[done]] = False
    return y, converged


def geometric_median(points, tol=1e-9, max_iter=200):
    """Weiszfeld geometric medians of point clouds.

    ``points`` is (M, n, d).  Returns medians (M, d) and a converged flag per
    cloud.  Clouds that do not converge fall back to the coordinate-wise
    median.
    """
    points = np.ascontiguousarray(points, dtype=np.float64)
    fn = _geomedian_nb if numba_enabled() else _geomedian_np
    med, ok = fn(points, float(tol), int(max_iter))
    if not ok.all():
        med = med.copy()
        med[~ok] = np.median(points[~ok], axis=1)
    return med, ok


# ======================================================================
# Adam update (in place)
# ======================================================================

def _adam_np(x, g, m, v, lr, b1, b2, eps, wd, c1, c2):
    m *= b1
    m += (1.0 - b1) * g
    v *= b2
    v += (1.0 - b2) * g * g
    if wd != 0.0:
        x *= 1.0 - lr * wd
    x -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


@try_njit(cache=True, fastmath=True)
def _adam_nb(x, g, m, v, lr, b1, b2, eps, wd, c1, c2):
    decay = 1.0 - lr * wd
    for i in range(x.size):
        m[i] = b1 * m[i] + (1.0 - b1) * g[i]
        v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i]
        if wd != 0.0:
            x[i] *= decay
        x[i] -= lr * (m[i] / c1) / (np.sqrt(v[i] / c2) + eps)


def adam_update(x, g, m, v, lr, beta1, beta2, eps, weight_decay, t):
    """One Adam(W) step on contiguous 1-D arrays, in place; ``t`` counts steps
    from 1 for bias correction."""
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    fn = _adam_nb if numba_enabled() else _adam_np
    fn(x, np.ascontiguousarray(g, dtype=np.float64), m, v, float(lr), float(beta1),
       float(beta2), float(eps), float(weight_decay), c1, c2)
