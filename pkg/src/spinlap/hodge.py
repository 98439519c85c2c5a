"""Discrete Hodge theory on the glued mesh: harmonic 1-forms, the normalized
holomorphic basis upsilon_i, the period matrix B, pointwise v_i = upsilon_i /
omega, the Abel map, and the moduli-derivative identity for B.

Harmonic representatives are computed with cotangent weights (exact on the
flat charts): for each homology generator the seam-crossing cochain gamma is
projected to gamma - d alpha with L alpha = d* gamma.  The holomorphic basis
is the complex combination of the 2g real harmonic cochains minimizing the
antiholomorphic energy subject to the a-period normalization.

Near each cone point, upsilon_i / dx_k is holomorphic in the distinguished
coordinate; its Taylor coefficients are recovered by an FFT of the Abel map
over a mesh ring (Cauchy integral on the x-circle), which supplies accurate
pointwise values where the plain per-triangle reconstruction degrades.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import theta as th


class MeshQualityError(RuntimeError):
    """Singular linear system or failed rank condition in the Hodge solve."""


class DiscretizationError(RuntimeError):
    """Period matrix failed a structural invariant (e.g. Im B not PD)."""


# ---------------------------------------------------------------------------
# mesh linear algebra helpers

def edge_index_map(mesh):
    edges = mesh.edges()
    emap = {(int(u), int(v)): i for i, (u, v) in enumerate(edges)}
    return edges, emap


def _oriented_value(cochain, emap, u, v):
    if (u, v) in emap:
        return cochain[emap[(u, v)]]
    return -cochain[emap[(v, u)]]


def cotan_laplacian(mesh, edges, emap):
    """Cotangent-weight Laplacian and the edge weight vector.

    Cone-patch triangles use their distinguished-chart (x) corner coordinates:
    the Dirichlet energy is conformally invariant and scalar harmonics are
    smooth in x, so this removes the O(1) relative error the z-chart weights
    suffer in the graded zone (z ~ x^2/2 there).
    """
    from .surface import cone_patch_triangles
    nv = mesh.n_vertices
    w = np.zeros(len(edges))
    alt = {}
    for tris in cone_patch_triangles(mesh):
        alt.update(tris)
    for t in range(mesh.n_triangles):
        tri = mesh.triangles[t]
        p = alt.get(t, mesh.tri_pos[t])
        for c in range(3):
            u, v = int(tri[(c + 1) % 3]), int(tri[(c + 2) % 3])
            a = p[(c + 1) % 3] - p[c]
            b = p[(c + 2) % 3] - p[c]
            cross = (np.conj(a) * b).imag
            cot = (a * np.conj(b)).real / cross
            key = (u, v) if (u, v) in emap else (v, u)
            w[emap[key]] += 0.5 * cot
    rows, cols, vals = [], [], []
    for i, (u, v) in enumerate(edges):
        rows += [u, v, u, v]
        cols += [v, u, u, v]
        vals += [-w[i], -w[i], w[i], w[i]]
    L = sp.csr_matrix((vals, (rows, cols)), shape=(nv, nv))
    return L, w


def crossing_cochains(mesh, edges, emap):
    """Closed cochains gamma_{a_j}, gamma_{b_j} from seam-crossing counts."""
    g = mesh.genus
    ga = [np.zeros(len(edges)) for _ in range(g)]
    gb = [np.zeros(len(edges)) for _ in range(g)]
    seen = set()
    for t in range(mesh.n_triangles):
        j = int(mesh.tri_chart[t])
        tri = mesh.triangles[t]
        for c in range(3):
            u, v = int(tri[c]), int(tri[(c + 1) % 3])
            key = (u, v) if (u, v) in emap else (v, u)
            if key in seen:
                continue
            seen.add(key)
            du = mesh.tri_wrap[t, (c + 1) % 3] - mesh.tri_wrap[t, c]
            sgn = 1.0 if key == (u, v) else -1.0
            ga[j][emap[key]] = sgn * du[0]
            gb[j][emap[key]] = sgn * du[1]
    return ga, gb


def harmonic_basis(mesh):
    """2g real harmonic cochains (closed and cotangent-co-closed).

    Returns (edges, emap, cochains) with cochains an (2g, ne) array ordered
    [a_1..a_g, b_1..b_g] by the crossing class they represent.
    """
    edges, emap = edge_index_map(mesh)
    L, w = cotan_laplacian(mesh, edges, emap)
    ga, gb = crossing_cochains(mesh, edges, emap)
    nv = mesh.n_vertices

    # pin one vertex to fix the constant mode
    Lp = L.tolil()
    Lp[0, :] = 0.0
    Lp[0, 0] = 1.0
    solver = spla.splu(Lp.tocsc())

    inc_rows, inc_cols, inc_vals = [], [], []
    for i, (u, v) in enumerate(edges):
        inc_rows += [u, v]
        inc_cols += [i, i]
        inc_vals += [-w[i], w[i]]
    DIVT = sp.csr_matrix((inc_vals, (inc_rows, inc_cols)), shape=(nv, len(edges)))

    out = []
    for gamma in (*ga, *gb):
        div = DIVT @ gamma
        div[0] = 0.0
        alpha = solver.solve(div)
        dalpha = alpha[edges[:, 1]] - alpha[edges[:, 0]]
        out.append(gamma - dalpha)
    return edges, emap, np.array(out)


def _triangle_pq(mesh, edges, emap, cochain, alt_coords=None):
    """Per-triangle (p, q) with cochain ~ p dz + q dzbar on each triangle.

    alt_coords optionally overrides corner coordinates per triangle (the
    distinguished chart inside cone patches, where the linear model is valid);
    also returns the area in the coordinates actually used.
    """
    nt = mesh.n_triangles
    p = np.zeros(nt, dtype=complex)
    q = np.zeros(nt, dtype=complex)
    w = np.zeros(nt)
    alt_coords = alt_coords or {}
    for t in range(nt):
        tri = mesh.triangles[t]
        pos = alt_coords.get(t, mesh.tri_pos[t])
        A = np.zeros((3, 2), dtype=complex)
        b = np.zeros(3, dtype=complex)
        for c in range(3):
            u, v = int(tri[c]), int(tri[(c + 1) % 3])
            dz = pos[(c + 1) % 3] - pos[c]
            A[c] = (dz, np.conj(dz))
            b[c] = _oriented_value(cochain, emap, u, v)
        sol, *_ = np.linalg.lstsq(A, b, rcond=None)
        p[t], q[t] = sol
        w[t] = 0.5 * abs((np.conj(pos[1] - pos[0]) * (pos[2] - pos[0])).imag)
    return p, q, w


# ---------------------------------------------------------------------------
# period data

@dataclass
class PeriodData:
    mesh: object
    upsilon: np.ndarray          # (g, ne) complex holomorphic cochains
    edges: np.ndarray
    emap: dict
    b_matrix: np.ndarray         # symmetrized, checked
    b_raw: np.ndarray
    residual: float
    v_tri: np.ndarray            # (g, nt) per-triangle v_i
    v_vertex: np.ndarray         # (g, nv)
    abel_vertex: np.ndarray      # (g, nv) tree-integrated Abel map
    cone_poly: list              # per cone: (g, n_coef) Taylor coeffs of upsilon/dx
    abel_cone: np.ndarray        # (g, n_cones) Abel map at the cone points
    _cache: dict = field(default_factory=dict)

    @property
    def genus(self):
        return self.mesh.genus

    # ----- point handles: int vertex | ("tri", t, z) | ("cone", k, x)
    def abel(self, pt):
        if isinstance(pt, (int, np.integer)):
            return self.abel_vertex[:, int(pt)]
        kind = pt[0]
        if kind == "tri":
            _, t, z = pt
            tri = self.mesh.triangles[t]
            z0 = self.mesh.tri_pos[t][0]
            return self.abel_vertex[:, int(tri[0])] + self.v_tri[:, t] * (complex(z) - z0)
        if kind == "cone":
            _, k, x = pt
            x = complex(x)
            out = self.abel_cone[:, k].copy()
            for i in range(self.genus):
                coef = self.cone_poly[k][i]
                out[i] += sum(coef[n] * x ** (n + 1) / (n + 1)
                              for n in range(len(coef)))
            return out
        raise ValueError(f"unknown point handle {pt!r}")

    def v(self, pt):
        if isinstance(pt, (int, np.integer)):
            return self.v_vertex[:, int(pt)]
        kind = pt[0]
        if kind == "tri":
            return self.v_tri[:, pt[1]]
        if kind == "cone":
            _, k, x = pt
            x = complex(x)
            if x == 0:
                raise ZeroDivisionError("v is singular at the cone point")
            return self.upsilon_dx(k, x) / x
        raise ValueError(f"unknown point handle {pt!r}")

    def upsilon_dx(self, k, x):
        """(upsilon_i / dx_k)(x), the holomorphic cone-chart ratio."""
        x = complex(x)
        return np.array([np.polyval(self.cone_poly[k][i][::-1], x)
                         for i in range(self.genus)])

    def offset_point(self, pt, dz):
        """A point displaced by dz in the flat chart near pt (for local fits)."""
        if isinstance(pt, (int, np.integer)):
            t = self._vertex_ref_triangle(int(pt))
            tri = list(self.mesh.triangles[t])
            c = tri.index(int(pt))
            z = self.mesh.tri_pos[t][c]
            return ("tri", t, z + complex(dz))
        if pt[0] == "tri":
            return ("tri", pt[1], pt[2] + complex(dz))
        raise ValueError("offset_point supports vertex or tri handles")

    def _vertex_ref_triangle(self, v):
        key = ("vref", v)
        if key not in self._cache:
            hits = np.nonzero((self.mesh.triangles == v).any(axis=1))[0]
            self._cache[key] = int(hits[0])
        return self._cache[key]

    # ----- theta caches
    def theta0(self, char):
        key = ("theta0", char)
        if key not in self._cache:
            self._cache[key] = th.theta(char, np.zeros(self.genus), self.b_matrix)
        return self._cache[key]

    def theta_gradient0(self, char):
        key = ("grad0", char)
        if key not in self._cache:
            self._cache[key] = th.theta_gradient0(char, self.b_matrix)
        return self._cache[key]

    # ----- h_delta branch machinery
    def h_delta_sq(self, delta, pt):
        """h_delta^2 at a point handle, in the trivialization h_delta() uses
        (distinguished chart at cone handles, flat chart elsewhere)."""
        grad = self.theta_gradient0(delta)
        if isinstance(pt, tuple) and pt[0] == "cone":
            _, k, x = pt
            return complex(grad @ self.upsilon_dx(k, complex(x)))
        return complex(grad @ self.v(pt))

    def h_delta_sq_vertex(self, delta):
        key = ("h2", delta)
        if key not in self._cache:
            grad = self.theta_gradient0(delta)
            self._cache[key] = grad @ self.v_vertex
        return self._cache[key]

    def _h_sign_field(self, delta):
        """Tree-propagated sign field making sqrt(h^2) continuous along the
        spanning tree (a gauge; h_delta is a spinor section, not a function)."""
        key = ("hsign", delta)
        if key in self._cache:
            return self._cache[key]
        h2 = self.h_delta_sq_vertex(delta)
        root = np.sqrt(h2)
        signs = np.zeros(self.mesh.n_vertices, dtype=np.int8)
        order, parent = self._tree()
        signs[order[0]] = 1
        for v in order[1:]:
            u = parent[v]
            same = abs(root[v] - signs[u] * root[u])
            flip = abs(root[v] + signs[u] * root[u])
            signs[v] = signs[u] if same <= flip else -signs[u]
        self._cache[key] = signs
        return signs

    def h_delta(self, delta, pt):
        grad = self.theta_gradient0(delta)
        if isinstance(pt, (int, np.integer)):
            h2 = complex(grad @ self.v_vertex[:, int(pt)])
            return self._h_sign_field(delta)[int(pt)] * np.sqrt(h2)
        if pt[0] == "cone":
            _, k, x = pt
            # h in the x_k-trivialization: h^2 = sum_i grad_i (upsilon_i/dx)(x)
            h2 = complex(grad @ self.upsilon_dx(k, complex(x)))
            return np.sqrt(h2)
        h2 = complex(grad @ self.v(pt))
        # inherit the sign of the nearest vertex of the reference triangle
        t = pt[1]
        v0 = int(self.mesh.triangles[t][0])
        s = self._h_sign_field(delta)[v0]
        ref = s * np.sqrt(complex(grad @ self.v_vertex[:, v0]))
        val = np.sqrt(h2)
        return val if abs(val - ref) <= abs(val + ref) else -val

    def h_monodromy(self, delta, path, max_step=2.6):
        """Sign picked up by a continuous branch of h_delta along a closed
        vertex path: (-1)^w with w the winding number of h_delta^2.

        Raises MeshQualityError if an argument increment exceeds max_step
        (path too close to a zero of h^2 for reliable tracking); callers may
        reroute the cycle away from small |h^2| and retry.
        """
        h2 = self.h_delta_sq_vertex(delta)[np.asarray(path, dtype=int)]
        if np.min(np.abs(h2)) == 0.0:
            raise MeshQualityError("h^2 vanishes on the monodromy path")
        steps = np.angle(h2[1:] / h2[:-1])
        if np.max(np.abs(steps)) > max_step:
            raise MeshQualityError("h^2 winding under-resolved along path")
        w = int(round(float(np.sum(steps)) / (2.0 * math.pi)))
        return -1 if w % 2 else 1

    def cone_loop_integral(self, k, rings=(0, 1, 2)):
        """oint v_i v_j omega around cone k by chord quadrature of the patch
        Abel field over mesh rings (averaged); equals 2 pi i (ups_i/dx)(P_k)
        (ups_j/dx)(P_k) in the continuum."""
        key = ("coneloop", k, rings)
        if key in self._cache:
            return self._cache[key]
        mesh = self.mesh
        patch = mesh.cone_patches[k]
        cone = patch.cone
        local = _patch_abel(mesh, patch, self.abel_vertex, self.edges,
                            self.emap, self.upsilon)
        g = self.genus
        acc = np.zeros((g, g), dtype=complex)
        used = 0
        for ring in rings:
            if ring >= len(patch.ring_radii):
                continue
            slots = patch.ring_slots[ring]
            rho = patch.ring_radii[ring]
            zs = [rho * np.exp(1j * (phi + cone.theta_ray)) for _, phi, _ in slots]
            As = [local[int(v)] for v, _, _ in slots]
            zs.append(zs[0])
            As.append(As[0])
            tot = np.zeros((g, g), dtype=complex)
            for a in range(len(zs) - 1):
                dz = zs[a + 1] - zs[a]
                dA = np.asarray(As[a + 1]) - np.asarray(As[a])
                tot += np.outer(dA, dA) / dz
            acc += tot
            used += 1
        self._cache[key] = acc / used
        return self._cache[key]

    def _tree(self):
        key = "tree"
        if key in self._cache:
            return self._cache[key]
        from collections import deque
        nv = self.mesh.n_vertices
        adj = [[] for _ in range(nv)]
        for u, v in self.edges:
            adj[int(u)].append(int(v))
            adj[int(v)].append(int(u))
        parent = np.full(nv, -1, dtype=int)
        order = [0]
        seen = np.zeros(nv, dtype=bool)
        seen[0] = True
        dq = deque([0])
        while dq:
            u = dq.popleft()
            for v in adj[u]:
                if not seen[v]:
                    seen[v] = True
                    parent[v] = u
                    order.append(v)
                    dq.append(v)
        self._cache[key] = (order, parent)
        return self._cache[key]


def period_matrix(mesh, basis=None) -> PeriodData:
    """Normalized holomorphic cochain basis and the period matrix B."""
    if basis is None:
        edges, emap, cochains = harmonic_basis(mesh)
    else:
        edges, emap, cochains = basis
    g = mesh.genus
    areas = mesh.triangle_areas()

    # rank of the period pairing over the 2g cycles
    paths = []
    for j in range(g):
        paths.append(mesh.cycle_paths[j]["a"])
    for j in range(g):
        paths.append(mesh.cycle_paths[j]["b"])
    P = np.array([[_path_integral(cochains[m], emap, path)
                   for m in range(2 * g)] for path in paths])
    if np.linalg.matrix_rank(P, tol=1e-8) != 2 * g:
        raise MeshQualityError("period pairing rank deficient")

    # Antiholomorphic-energy Gram.  Inside cone patches upsilon ~ 1/x makes
    # the z-chart linear model useless, so those triangles use their
    # distinguished-chart coordinates (the energy is conformally invariant and
    # upsilon/dx is smooth there).  The b-periods of the raw cochains are
    # exact integers, so the entire B error enters through these coefficients.
    from .surface import cone_patch_triangles
    alt = {}
    for ptris in cone_patch_triangles(mesh):
        alt.update(ptris)
    pq = [_triangle_pq(mesh, edges, emap, cochains[m]) for m in range(2 * g)]
    pq_x = [_triangle_pq(mesh, edges, emap, cochains[m], alt_coords=alt)
            for m in range(2 * g)]
    Q = np.array([pq_x[m][1] for m in range(2 * g)])    # antihol parts
    weights = pq_x[0][2]
    G = (np.conj(Q) * weights) @ Q.T
    G = 0.5 * (G + np.conj(G.T))

    Pa = P[:g, :]                                       # a-periods of the basis
    upsilon, v_tri = [], []
    for j in range(g):
        rhs = np.zeros(g)
        rhs[j] = 1.0
        c = _constrained_min(G, Pa, rhs)
        upsilon.append(np.tensordot(c, cochains, axes=(0, 0)))
        v_tri.append(np.tensordot(c, np.array([pq[m][0] for m in range(2 * g)]),
                                  axes=(0, 0)))
    upsilon = np.array(upsilon)
    v_tri = np.array(v_tri)

    b_raw = np.array([[_path_integral(upsilon[j], emap, mesh.cycle_paths[i]["b"])
                       for j in range(g)] for i in range(g)])
    b_sym = 0.5 * (b_raw + b_raw.T)
    wmin = np.linalg.eigvalsh(b_sym.imag).min()
    if wmin <= 0:
        raise DiscretizationError("Im B not positive definite")

    # co-closedness residual of the holomorphic basis
    L, w = cotan_laplacian(mesh, edges, emap)
    nv = mesh.n_vertices
    rows, cols, vals = [], [], []
    for i, (u, v) in enumerate(edges):
        rows += [u, v]
        cols += [i, i]
        vals += [-w[i], w[i]]
    DIVT = sp.csr_matrix((vals, (rows, cols)), shape=(nv, len(edges)))
    resid = max(float(np.max(np.abs(DIVT @ ups))) for ups in upsilon)

    v_vertex = _vertex_v(mesh, v_tri)
    abel_vertex = _tree_abel(mesh, edges, emap, upsilon)
    cone_poly, abel_cone, v_vertex = _cone_charts(mesh, abel_vertex, v_vertex,
                                                  edges, emap, upsilon)

    return PeriodData(mesh=mesh, upsilon=upsilon, edges=edges, emap=emap,
                      b_matrix=b_sym, b_raw=b_raw, residual=resid,
                      v_tri=v_tri, v_vertex=v_vertex,
                      abel_vertex=abel_vertex, cone_poly=cone_poly,
                      abel_cone=abel_cone)


def _bulk_triangle_mask(mesh):
    """1 for triangles outside every cone patch, 0 inside."""
    inpatch = set()
    for p in mesh.cone_patches:
        inpatch.add(p.center_vertex)
        for slots in p.ring_slots:
            inpatch.update(int(v) for v, _, _ in slots)
    mask = np.ones(mesh.n_triangles)
    if inpatch:
        for t in range(mesh.n_triangles):
            if any(int(v) in inpatch for v in mesh.triangles[t]):
                mask[t] = 0.0
    return mask


def _path_integral(cochain, emap, path):
    total = 0.0 + 0.0j
    for u, v in zip(path[:-1], path[1:]):
        total += _oriented_value(cochain, emap, int(u), int(v))
    return total


def _constrained_min(G, A, rhs):
    """argmin c^H G c subject to A c = rhs (KKT system)."""
    g2 = G.shape[0]
    k = A.shape[0]
    kkt = np.zeros((g2 + k, g2 + k), dtype=complex)
    kkt[:g2, :g2] = G + 1e-14 * np.eye(g2) * max(1.0, np.trace(G).real)
    kkt[:g2, g2:] = np.conj(A.T)
    kkt[g2:, :g2] = A
    sol = np.linalg.solve(kkt, np.concatenate([np.zeros(g2), rhs]))
    return sol[:g2]


def _vertex_v(mesh, v_tri):
    g, nt = v_tri.shape
    nv = mesh.n_vertices
    acc = np.zeros((g, nv), dtype=complex)
    wsum = np.zeros(nv)
    areas = mesh.triangle_areas()
    for t in range(nt):
        for c in range(3):
            v = int(mesh.triangles[t][c])
            acc[:, v] += areas[t] * v_tri[:, t]
            wsum[v] += areas[t]
    wsum[wsum == 0] = 1.0
    return acc / wsum


def _tree_abel(mesh, edges, emap, upsilon):
    from collections import deque
    g = upsilon.shape[0]
    nv = mesh.n_vertices
    adj = [[] for _ in range(nv)]
    for u, v in edges:
        adj[int(u)].append(int(v))
        adj[int(v)].append(int(u))
    out = np.zeros((g, nv), dtype=complex)
    seen = np.zeros(nv, dtype=bool)
    seen[0] = True
    dq = deque([0])
    while dq:
        u = dq.popleft()
        for v in adj[u]:
            if not seen[v]:
                seen[v] = True
                for i in range(g):
                    out[i, v] = out[i, u] + _oriented_value(upsilon[i], emap, u, v)
                dq.append(v)
    return out


def _patch_abel(mesh, patch, abel_vertex, edges, emap, upsilon):
    """Single-valued Abel field on a cone patch (local integration of the
    closed cochain: loops around the cone carry no residue, so the punctured
    patch is integration-safe; anchored to the global tree at one vertex)."""
    from collections import deque
    pverts = set()
    for slots in patch.ring_slots:
        pverts.update(int(v) for v, _, _ in slots)
    adj = {v: [] for v in pverts}
    for u, v in edges:
        u, v = int(u), int(v)
        if u in pverts and v in pverts:
            adj[u].append(v)
            adj[v].append(u)
    root = int(patch.ring_slots[0][0][0])
    g = upsilon.shape[0]
    out = {root: abel_vertex[:, root].copy()}
    dq = deque([root])
    while dq:
        u = dq.popleft()
        for v in adj[u]:
            if v not in out:
                out[v] = out[u] + np.array(
                    [_oriented_value(upsilon[i], emap, u, v) for i in range(g)])
                dq.append(v)
    if len(out) != len(pverts):
        raise MeshQualityError("cone patch vertex graph is disconnected")
    return out


def _cone_charts(mesh, abel_vertex, v_vertex, edges, emap, upsilon,
                 ring_use=2, n_coef=8):
    """Taylor coefficients of upsilon/dx at each cone by FFT of the Abel map
    over a mesh ring (Cauchy integral on the x-circle); also overwrites v at
    the patch vertices with the analytic values."""
    g = abel_vertex.shape[0]
    polys, abel_c = [], []
    for patch in mesh.cone_patches:
        cone = patch.cone
        local = _patch_abel(mesh, patch, abel_vertex, edges, emap, upsilon)
        m = min(ring_use, len(patch.ring_radii) - 1)
        slots = patch.ring_slots[m]
        rho = patch.ring_radii[m]
        R = math.sqrt(2.0 * rho)
        nslot = len(slots)
        phis = np.array([s[1] for s in slots])
        xarg = 0.5 * (phis + cone.theta_ray)            # uniform, step 2 pi/nslot
        A = np.array([local[int(v)] for v, _, _ in slots]).T   # (g, nslot)
        coefs = np.empty((g, n_coef), dtype=complex)
        a0 = np.empty(g, dtype=complex)
        nmax = min(n_coef + 1, nslot // 2)
        for i in range(g):
            fft = np.fft.fft(A[i]) / nslot
            # A(x) = sum_n c_n x^n at x = R e^{i(arg0 + 2 pi m/N)}:
            # FFT bin n = c_n R^n e^{i n arg0}
            c = np.zeros(n_coef + 1, dtype=complex)
            for n in range(nmax):
                c[n] = fft[n] / (R ** n * np.exp(1j * n * xarg[0]))
            a0[i] = c[0]
            coefs[i] = [(n + 1) * c[n + 1] for n in range(n_coef)]
        polys.append(coefs)
        abel_c.append(a0)
        # fix v at patch vertices using the analytic chart
        fixed = set()
        for mm, slots_m in enumerate(patch.ring_slots):
            rho_m = patch.ring_radii[mm]
            for (vid, phi, torus) in slots_m:
                if vid in fixed:
                    continue
                x = math.sqrt(2.0 * rho_m) * np.exp(0.5j * (phi + cone.theta_ray))
                e = np.array([np.polyval(coefs[i][::-1], x) for i in range(g)])
                v_vertex[:, vid] = e / x
                fixed.add(vid)
    if abel_c:
        return polys, np.array(abel_c).T, v_vertex
    return polys, np.zeros((g, 0), dtype=complex), v_vertex


def dual_cycle_integral(periods: PeriodData, i, j, nu):
    """Contour integral of upsilon_i upsilon_j / omega over the dual cycle of
    the moduli coordinate nu = ("A", idx) | ("B", idx) | ("C", k).

    A_idx^dag = -b_idx, B_idx^dag = a_idx (shifted representatives are
    homologous; the integrand is closed), C_k^dag = small circle around P_k in
    the distinguished chart, evaluated by residue of the analytic cone fit.
    """
    mesh = periods.mesh
    kind, idx = nu
    if kind == "C":
        return periods.cone_loop_integral(idx)[i, j]
    if kind == "A":
        path = list(reversed(mesh.cycle_paths[idx]["b"]))
    elif kind == "B":
        path = mesh.cycle_paths[idx]["a"]
    else:
        raise ValueError(nu)
    from .surface import _edge_vector_table
    table = _edge_vector_table(mesh)
    total = 0.0 + 0.0j
    vv = periods.v_vertex[i] * periods.v_vertex[j]
    for u, v in zip(path[:-1], path[1:]):
        dz = table[(int(u), int(v))]
        total += 0.5 * (vv[int(u)] + vv[int(v)]) * dz
    return total


def check_dB_dnu(moduli, nu, step=0.02, h=0.05, mesh_kwargs=None):
    """Relative mismatch between central differences of B and the contour
    integral dB_ij/dnu = oint_{nu^dag} upsilon_i upsilon_j / omega.

    Returns a dict with the finite-difference matrix, the contour matrix, the
    relative error, and the antiholomorphic derivative norm |dB/dnubar|.
    """
    from . import surface as sf
    mesh_kwargs = dict(mesh_kwargs or {})
    frozen = {}

    def bmat(m):
        surf = sf.build_surface(m)
        mesh = sf.generate_mesh(surf, h=h, structure=frozen.get("s"),
                                **mesh_kwargs)
        frozen.setdefault("s", mesh.structure)
        return period_matrix(mesh)

    def perturbed(m, nu, dz):
        kind, idx = nu
        A, B, C = list(m.A), list(m.B), list(m.C)
        if kind == "A":
            A[idx] += dz
        elif kind == "B":
            B[idx] += dz
        else:
            C[idx] += dz
        return sf.ModuliPoint(genus=m.genus, A=A, B=B, C=C)

    base = bmat(moduli)
    bp = bmat(perturbed(moduli, nu, step)).b_matrix
    bm = bmat(perturbed(moduli, nu, -step)).b_matrix
    bpi = bmat(perturbed(moduli, nu, 1j * step)).b_matrix
    bmi = bmat(perturbed(moduli, nu, -1j * step)).b_matrix
    dx = (bp - bm) / (2 * step)
    dy = (bpi - bmi) / (2 * step)
    d_nu = 0.5 * (dx - 1j * dy)
    d_nubar = 0.5 * (dx + 1j * dy)

    g = moduli.genus
    contour = np.array([[dual_cycle_integral(base, i, j, nu)
                         for j in range(g)] for i in range(g)])
    scale = max(np.max(np.abs(d_nu)), np.max(np.abs(contour)), 1e-30)
    rel = float(np.max(np.abs(d_nu - contour)) / scale)
    return {"fd": d_nu, "contour": contour, "rel_error": rel,
            "dbar_norm": float(np.max(np.abs(d_nubar))),
            "periods": base}
