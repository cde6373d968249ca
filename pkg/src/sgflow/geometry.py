"""Laguerre (power) tessellations of a cuboid domain.

The tessellation is the geometric backbone of the transport solver: given
seed points ``z`` and Kantorovich weights ``w``, cell ``i`` is the set of
domain points where ``|x - z_i|^2 - w_i`` is minimal.  Cells are convex and
are built by half-space clipping against power bisectors of nearby seeds,
with a security-radius criterion guaranteeing that the pruned candidate set
was sufficient.

Periodic axes are handled with explicit image seeds.  Each cell is built as
a single convex polytope in the frame of its (wrapped) seed, bounded on a
periodic axis by half a period on each side; this representative tiles the
periodic domain exactly, and makes all moment integrals plain Euclidean
integrals.  Centroids are therefore reported in the seed's frame and may
stick out of the box near a periodic seam.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from . import _laguerre


class GeometryError(Exception):
    """Inconsistent or degenerate tessellation input."""


class DuplicateSeedError(GeometryError):
    """Two seeds share both position and weight."""

    def __init__(self, i: int, j: int):
        self.pair = (i, j)
        super().__init__(
            f"seeds {i} and {j} have identical position and weight; "
            "the power diagram is ill-defined for this pair"
        )


@dataclass(frozen=True)
class Domain:
    """Axis-aligned cuboid fluid domain with per-axis periodicity."""

    lo: np.ndarray
    hi: np.ndarray
    periodic: tuple[bool, bool, bool] = (False, False, False)

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=np.float64).reshape(3)
        hi = np.asarray(self.hi, dtype=np.float64).reshape(3)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "periodic", tuple(bool(p) for p in self.periodic))
        if not np.all(np.isfinite(lo)) or not np.all(np.isfinite(hi)):
            raise GeometryError("domain bounds must be finite")
        if np.any(hi <= lo):
            raise GeometryError("domain must satisfy lo < hi on every axis")
        if self.periodic[2]:
            raise GeometryError("the vertical axis is never periodic")

    @property
    def widths(self) -> np.ndarray:
        return self.hi - self.lo

    @property
    def volume(self) -> float:
        return float(np.prod(self.widths))

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(self.widths))

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    def wrap(self, points: np.ndarray) -> np.ndarray:
        """Map periodic coordinates into [lo, hi); other axes untouched."""
        pts = np.array(points, dtype=np.float64, copy=True)
        single = pts.ndim == 1
        pts = np.atleast_2d(pts)
        for k in range(3):
            if self.periodic[k]:
                width = self.hi[k] - self.lo[k]
                pts[:, k] = self.lo[k] + np.mod(pts[:, k] - self.lo[k], width)
        return pts[0] if single else pts

    def contains(self, points: np.ndarray, tol: float = 0.0) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        return np.all((pts >= self.lo - tol) & (pts <= self.hi + tol), axis=1)


@dataclass
class SeedCloud:
    """Discrete geostrophic particle cloud with per-seed masses."""

    positions: np.ndarray
    mass: np.ndarray | None = None

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64)
        if pos.ndim != 2 or pos.shape[1] != 3:
            raise GeometryError("seed positions must have shape (N, 3)")
        if pos.shape[0] < 1:
            raise GeometryError("need at least one seed")
        if not np.all(np.isfinite(pos)):
            raise GeometryError("seed positions must be finite")
        self.positions = pos
        n = pos.shape[0]
        if self.mass is None:
            self.mass = np.full(n, 1.0 / n)
        else:
            m = np.asarray(self.mass, dtype=np.float64).reshape(n)
            if np.any(m <= 0.0):
                raise GeometryError("seed masses must be strictly positive")
            if abs(m.sum() - 1.0) > 1e-12:
                raise GeometryError("seed masses must sum to 1")
            self.mass = m

    @property
    def n(self) -> int:
        return self.positions.shape[0]


@dataclass
class WeightVector:
    """Kantorovich weights, gauge-normalized to zero mean."""

    w: np.ndarray

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=np.float64).reshape(-1)

    @classmethod
    def zeros(cls, n: int) -> "WeightVector":
        return cls(np.zeros(n))

    def normalized(self) -> "WeightVector":
        return WeightVector(self.w - self.w.mean())

    @property
    def is_gauge_normalized(self) -> bool:
        scale = max(1.0, float(np.max(np.abs(self.w), initial=0.0)))
        return abs(float(self.w.sum())) <= 1e-9 * scale * len(self.w)


@dataclass
class LaguerreDiagram:
    """Per-cell integral quantities of one (seeds, weights) tessellation.

    ``centroids`` and ``second_moments`` are taken about each seed's wrapped
    representative; ``neighbors(i)`` yields ``(j, interface_area,
    seed_image_distance)`` triples, where ``j == i`` marks an interface with
    the cell's own periodic image.
    """

    domain: Domain
    volumes: np.ndarray
    centroids: np.ndarray
    second_moments: np.ndarray
    empty: np.ndarray
    wrapped_seeds: np.ndarray
    _nbr_ptr: np.ndarray = field(repr=False)
    _nbr_j: np.ndarray = field(repr=False)
    _nbr_area: np.ndarray = field(repr=False)
    _nbr_dist: np.ndarray = field(repr=False)
    _nbr_shift: np.ndarray = field(repr=False)
    faces: list | None = None

    @property
    def n(self) -> int:
        return len(self.volumes)

    def neighbors(self, i: int) -> list[tuple[int, float, float]]:
        lo, hi = self._nbr_ptr[i], self._nbr_ptr[i + 1]
        return [
            (int(self._nbr_j[k]), float(self._nbr_area[k]), float(self._nbr_dist[k]))
            for k in range(lo, hi)
        ]

    @property
    def total_volume(self) -> float:
        return float(self.volumes.sum())

    def centroid_offsets(self) -> np.ndarray:
        """Centroid minus wrapped seed, the quantity driving the dynamics."""
        return self.centroids - self.wrapped_seeds


def periodic_images(seed: np.ndarray, domain: Domain) -> list[np.ndarray]:
    """The seed plus its shifts by one period along every periodic axis."""
    seed = np.asarray(seed, dtype=np.float64).reshape(3)
    offsets = []
    for k in range(3):
        if domain.periodic[k]:
            width = domain.hi[k] - domain.lo[k]
            offsets.append((0.0, -width, width))
        else:
            offsets.append((0.0,))
    return [seed + np.array(s) for s in itertools.product(*offsets)]


def _shift_table(domain: Domain) -> np.ndarray:
    """Integer image shifts, canonical (0,0,0) first."""
    offs = [(0, -1, 1) if domain.periodic[k] else (0,) for k in range(3)]
    return np.array(list(itertools.product(*offs)), dtype=np.int64)


def _check_duplicates(wrapped: np.ndarray, w: np.ndarray):
    n = wrapped.shape[0]
    if n < 2:
        return
    key = np.column_stack([wrapped, w])
    order = np.lexsort(key.T[::-1])
    sk = key[order]
    same = np.all(sk[1:] == sk[:-1], axis=1)
    if np.any(same):
        k = int(np.argmax(same))
        i, j = int(order[k]), int(order[k + 1])
        raise DuplicateSeedError(min(i, j), max(i, j))


class DiagramBuilder:
    """Reusable tessellator for a fixed seed configuration.

    KD-tree and image bookkeeping depend only on positions, so a Newton
    iteration rebuilding the diagram for many weight vectors reuses one
    builder.  Not reentrant; concurrent builds need separate instances.
    """

    MAXV = 64
    MAXF = 96
    K0 = 64
    KMAX = 256

    def __init__(self, seeds: SeedCloud, domain: Domain, k_hint: int | None = None):
        self.seeds = seeds
        self.domain = domain
        self.n = seeds.n
        self.wrapped = domain.wrap(seeds.positions)
        self.shifts = _shift_table(domain)
        widths = domain.widths
        self.shift_vecs = self.shifts * widths[None, :]
        ns = len(self.shifts)
        self.img_pts = (self.wrapped[None, :, :] + self.shift_vecs[:, None, :]).reshape(-1, 3)
        self.img_owner = np.tile(np.arange(self.n, dtype=np.int64), ns)
        self.img_shift = np.repeat(np.arange(ns, dtype=np.int64), self.n)
        self.tree = cKDTree(self.img_pts)
        self.m = self.img_pts.shape[0]
        self.avail = self.m - ns  # images of other seeds
        self._k = min(k_hint or self.K0, self.avail) if self.avail > 0 else 0
        # starting box in seed-centered coordinates
        self.box_lo = np.empty((self.n, 3))
        self.box_hi = np.empty((self.n, 3))
        for d in range(3):
            if domain.periodic[d]:
                self.box_lo[:, d] = -0.5 * widths[d]
                self.box_hi[:, d] = 0.5 * widths[d]
            else:
                self.box_lo[:, d] = domain.lo[d] - self.wrapped[:, d]
                self.box_hi[:, d] = domain.hi[d] - self.wrapped[:, d]
        self.eps = 1e-12 * domain.diameter
        self.dtol = 1e-9 * domain.diameter
        self._cand_cache = None

    def _candidates_for(self, rows: np.ndarray, k: int):
        """Distance-sorted competitor images for the given cells.

        Position-only, so the full-row result is cached across the weight
        changes of a Newton iteration.
        """
        full = len(rows) == self.n
        if full:
            cached = self._cand_cache
            if cached is not None and cached[0] >= k:
                if cached[0] == k:
                    return cached[1], np.minimum(cached[2], k)
                return (np.ascontiguousarray(cached[1][:, :k]),
                        np.minimum(cached[2], k))
        k_query = min(k + len(self.shifts), self.m)
        _, idx = self.tree.query(self.wrapped[rows], k=k_query, workers=-1)
        idx = np.atleast_2d(idx)
        if idx.shape[0] != len(rows):  # k_query == 1 returns a flat array
            idx = idx.reshape(len(rows), -1)
        own = self.img_owner[idx] == rows[:, None]
        order = np.argsort(own, axis=1, kind="stable")
        cand = np.take_along_axis(idx, order, axis=1)
        cnt = np.minimum((~own).sum(axis=1), k).astype(np.int64)
        cand = np.ascontiguousarray(cand[:, :k])
        if full:
            self._cand_cache = (k, cand, cnt)
        return cand, cnt

    def _candidates_in_radius(self, rows: np.ndarray, big_r: np.ndarray,
                              w_rows: np.ndarray, wmax: float):
        """Exactly the competitor images each cell's security radius demands."""
        slack = np.maximum(big_r * big_r + (wmax - w_rows), 0.0)
        rad = (big_r + np.sqrt(slack)) * (1.0 + 1e-12) + self.eps
        pts = self.wrapped[rows]
        lists = self.tree.query_ball_point(pts, rad, workers=-1,
                                           return_sorted=False)
        lens = np.array([len(lst) for lst in lists], dtype=np.int64)
        if lens.sum() == 0:
            return (np.zeros((len(rows), 1), dtype=np.int64),
                    np.zeros(len(rows), dtype=np.int64))
        flat = np.concatenate([np.asarray(lst, dtype=np.int64) for lst in lists])
        rep = np.repeat(np.arange(len(rows), dtype=np.int64), lens)
        keep = self.img_owner[flat] != rows[rep]
        flat, rep = flat[keep], rep[keep]
        d = np.linalg.norm(self.img_pts[flat] - pts[rep], axis=1)
        order = np.lexsort((d, rep))
        flat, rep = flat[order], rep[order]
        cnt = np.bincount(rep, minlength=len(rows)).astype(np.int64)
        kmax = max(int(cnt.max()), 1)
        cand = np.zeros((len(rows), kmax), dtype=np.int64)
        col = np.arange(len(flat)) - np.repeat(np.cumsum(cnt) - cnt, cnt)
        cand[rep, col] = flat
        return np.ascontiguousarray(cand), cnt

    def build(self, weights: WeightVector, *, keep_faces: bool = False,
              check: bool = False) -> LaguerreDiagram:
        """Tessellate for the given weights.

        Candidate pruning is verified globally: omitted bisectors can only
        inflate cells, so the cell volumes summing to the domain volume
        certifies the diagram; cells whose security radius was not reached
        get a second pass with exactly the competitor images that radius
        demands.
        """
        w = weights.w
        if len(w) != self.n:
            raise GeometryError("weights and seeds disagree on N")
        _check_duplicates(self.wrapped, w)
        img_w = np.tile(w, len(self.shifts))
        wmax = float(w.max())
        vol_x = self.domain.volume

        maxv, maxf = self.MAXV, self.MAXF
        k = min(self._k, self.avail)
        rows = np.arange(self.n, dtype=np.int64)
        cand = self._candidates_for(rows, k) if k > 0 else (
            np.zeros((self.n, 1), dtype=np.int64),
            np.zeros(self.n, dtype=np.int64))
        out = None
        faces_raw = None
        exact = False
        for _ in range(24):
            cand_idx, cand_cnt = cand
            if keep_faces:
                fv_out = np.zeros((self.n, maxf, maxv, 3))
                fnv_out = np.zeros((self.n, maxf), dtype=np.int64)
                ftag_out = np.zeros((self.n, maxf), dtype=np.int64)
                nf_out = np.zeros(self.n, dtype=np.int64)
            else:
                fv_out = np.zeros((1, 1, 1, 3))
                fnv_out = np.zeros((1, 1), dtype=np.int64)
                ftag_out = np.zeros((1, 1), dtype=np.int64)
                nf_out = np.zeros(1, dtype=np.int64)
            res = _laguerre.build_cells(
                rows, self.wrapped, w, self.img_pts, img_w, cand_idx, cand_cnt,
                self.box_lo, self.box_hi, wmax, self.eps, self.dtol,
                maxv, maxf, fv_out, fnv_out, ftag_out, nf_out, keep_faces)
            if out is None:
                out = [np.array(a) for a in res]
                done = np.zeros(self.n, dtype=bool)
                if keep_faces:
                    faces_raw = [fv_out, fnv_out, ftag_out, nf_out]
            else:
                for a, b in zip(out, res):
                    a[rows] = b[rows]
                if keep_faces:
                    for a, b in zip(faces_raw, (fv_out, fnv_out, ftag_out, nf_out)):
                        a[rows] = b[rows]
            (vol, cen, m2, nbr_img, nbr_area, nbr_cnt, empty, certified,
             overflow, r2) = out
            done[rows] = exact

            if np.any(overflow[rows]):
                # bigger scratch arrays change output widths: rebuild all
                maxv *= 2
                maxf *= 2
                out = None
                rows = np.arange(self.n, dtype=np.int64)
                cand = self._candidates_for(rows, k) if k > 0 else cand
                exact = False
                if keep_faces:
                    faces_raw = None
                continue

            excess = float(vol.sum()) - vol_x
            if abs(excess) <= 1e-10 * vol_x:
                break
            suspects = np.flatnonzero(~certified & ~empty & ~done)
            if len(suspects) == 0:
                if abs(excess) <= 1e-9 * vol_x:
                    break
                raise GeometryError(
                    f"cells do not partition the domain (excess {excess:g}) "
                    "and no cell is eligible for more candidates")
            # each suspect gets exactly the images its security radius
            # demands, in one ball query
            rows = suspects
            cand = self._candidates_in_radius(
                suspects, np.sqrt(out[9][suspects]), w[suspects], wmax)
            exact = True
        else:
            raise GeometryError("cell construction failed to stabilize")

        nbr = self._assemble_neighbors(nbr_img, nbr_area, nbr_cnt)
        diagram = LaguerreDiagram(
            domain=self.domain,
            volumes=vol,
            centroids=cen,
            second_moments=m2,
            empty=empty,
            wrapped_seeds=self.wrapped,
            _nbr_ptr=nbr[0], _nbr_j=nbr[1], _nbr_area=nbr[2],
            _nbr_dist=nbr[3], _nbr_shift=nbr[4],
            faces=self._assemble_faces(*faces_raw) if keep_faces else None,
        )
        if check:
            total = diagram.total_volume
            if abs(total - self.domain.volume) > 1e-9 * self.domain.volume:
                raise GeometryError(
                    f"cells do not partition the domain: {total} vs {self.domain.volume}")
        return diagram

    def _assemble_neighbors(self, nbr_img, nbr_area, nbr_cnt):
        n = self.n
        widths = self.domain.widths
        rows = np.repeat(np.arange(n, dtype=np.int64), nbr_cnt)
        valid = np.arange(nbr_img.shape[1])[None, :] < nbr_cnt[:, None]
        flat = nbr_img[valid]
        areas = nbr_area[valid]

        is_wall = flat < 0
        wall_axis = (-flat - 1) // 2
        wall_side = (-flat - 1) % 2
        per = np.array(self.domain.periodic)
        keep_wall = is_wall & per[np.clip(wall_axis, 0, 2)]
        keep = (~is_wall) | keep_wall

        rows = rows[keep]
        flat = flat[keep]
        areas = areas[keep]
        is_wall = is_wall[keep]
        wall_axis = wall_axis[keep]
        wall_side = wall_side[keep]

        j = np.where(is_wall, rows, self.img_owner[np.where(is_wall, 0, flat)])
        shift = np.zeros((len(rows), 3), dtype=np.int64)
        if len(rows):
            img_sh = self.shifts[self.img_shift[np.where(is_wall, 0, flat)]]
            shift[~is_wall] = img_sh[~is_wall]
            for d in range(3):
                sel = is_wall & (wall_axis == d)
                shift[sel, d] = np.where(wall_side[sel] == 1, 1, -1)
        dvec = self.wrapped[j] + shift * widths[None, :] - self.wrapped[rows]
        dist = np.linalg.norm(dvec, axis=1)

        # symmetrize: interface (i -> j, s) pairs with (j -> i, -s)
        code = (shift[:, 0] + 1) * 9 + (shift[:, 1] + 1) * 3 + (shift[:, 2] + 1)
        ncode = (-shift[:, 0] + 1) * 9 + (-shift[:, 1] + 1) * 3 + (-shift[:, 2] + 1)
        swap = (j < rows) | ((j == rows) & (ncode < code))
        a_lo = np.where(swap, j, rows)
        a_hi = np.where(swap, rows, j)
        a_code = np.where(swap, ncode, code)
        key = (a_lo * n + a_hi) * 27 + a_code
        uk, inv, cnt = np.unique(key, return_inverse=True, return_counts=True)
        mean_area = np.bincount(inv, weights=areas, minlength=len(uk)) / cnt
        mean_dist = np.bincount(inv, weights=dist, minlength=len(uk)) / cnt

        u_code = uk % 27
        u_hi = (uk // 27) % n
        u_lo = uk // (27 * n)
        sx = u_code // 9 - 1
        sy = (u_code // 3) % 3 - 1
        sz = u_code % 3 - 1
        u_shift = np.column_stack([sx, sy, sz])

        # emit both directions for every unique undirected interface
        self_pair = (u_lo == u_hi) & (u_code == 13)  # zero shift, impossible
        assert not np.any(self_pair)
        out_i = np.concatenate([u_lo, u_hi])
        out_j = np.concatenate([u_hi, u_lo])
        out_area = np.concatenate([mean_area, mean_area])
        out_dist = np.concatenate([mean_dist, mean_dist])
        out_shift = np.concatenate([u_shift, -u_shift])
        # a period-spanning cell meets its own image once per undirected key
        dup = (out_i[len(uk):] == out_j[len(uk):])
        if np.any(dup):
            sel = np.ones(len(out_i), dtype=bool)
            sel[len(uk):][dup] = False
            out_i, out_j = out_i[sel], out_j[sel]
            out_area, out_dist, out_shift = out_area[sel], out_dist[sel], out_shift[sel]

        order = np.lexsort((out_j, out_i))
        out_i = out_i[order]
        ptr = np.zeros(n + 1, dtype=np.int64)
        np.add.at(ptr, out_i + 1, 1)
        ptr = np.cumsum(ptr)
        return (ptr, out_j[order], out_area[order], out_dist[order],
                out_shift[order].astype(np.int8))

    def _assemble_faces(self, fv_out, fnv_out, ftag_out, nf_out):
        faces = []
        for i in range(self.n):
            cell = []
            for f in range(nf_out[i]):
                m = fnv_out[i, f]
                cell.append((int(ftag_out[i, f]), np.array(fv_out[i, f, :m])))
            faces.append(cell)
        return faces


def build_diagram(seeds: SeedCloud, weights: WeightVector, domain: Domain,
                  *, keep_faces: bool = False, check: bool = False) -> LaguerreDiagram:
    """Laguerre tessellation of the domain for one (seeds, weights) pair."""
    return DiagramBuilder(seeds, domain).build(
        weights, keep_faces=keep_faces, check=check)


def cell_moments(faces, seed) -> tuple[float, np.ndarray, float]:
    """Exact volume, centroid and second moment of a convex polytope.

    ``faces`` is a sequence of (k, 3) vertex arrays, each a convex planar
    polygon bounding the polytope.  The second moment is taken about
    ``seed``.  An empty polytope yields volume 0 and a NaN centroid flag.
    """
    seed = np.asarray(seed, dtype=np.float64).reshape(3)
    polys = [np.asarray(f, dtype=np.float64) for f in faces if len(f) >= 3]
    if not polys:
        return 0.0, np.full(3, np.nan), 0.0
    allv = np.vstack(polys)
    p = allv.mean(axis=0)
    vol = 0.0
    cen = np.zeros(3)
    m2 = 0.0
    for poly in polys:
        for k in range(1, len(poly) - 1):
            a, b, c = poly[0] - p, poly[k] - p, poly[k + 1] - p
            v = abs(np.dot(a, np.cross(b, c))) / 6.0
            if v == 0.0:
                continue
            verts = np.array([p, poly[0], poly[k], poly[k + 1]])
            vol += v
            cen += v * verts.mean(axis=0)
            rel = verts - seed
            s = rel.sum(axis=0)
            m2 += v / 20.0 * (np.dot(s, s) + np.einsum("ij,ij->", rel, rel))
    if vol == 0.0:
        return 0.0, np.full(3, np.nan), 0.0
    return float(vol), cen / vol, float(m2)


@dataclass(frozen=True)
class Domain2D:
    """Planar domain for the 2D benchmark; axis 2 (vertical) never periodic."""

    lo: np.ndarray
    hi: np.ndarray
    periodic_x: bool = True

    def __post_init__(self):
        object.__setattr__(self, "lo", np.asarray(self.lo, dtype=np.float64).reshape(2))
        object.__setattr__(self, "hi", np.asarray(self.hi, dtype=np.float64).reshape(2))
        if np.any(self.hi <= self.lo):
            raise GeometryError("domain must satisfy lo < hi on every axis")

    @property
    def area(self) -> float:
        return float(np.prod(self.hi - self.lo))

    def embed(self) -> Domain:
        """Unit-thickness slab whose prismatic cells realize the 2D diagram."""
        return Domain(
            lo=np.array([self.lo[0], self.lo[1], 0.0]),
            hi=np.array([self.hi[0], self.hi[1], 1.0]),
            periodic=(self.periodic_x, False, False),
        )


def embed_seeds_2d(positions2: np.ndarray, mass=None) -> SeedCloud:
    """Lift 2D seeds to the slab mid-plane; cells become prisms."""
    pos2 = np.asarray(positions2, dtype=np.float64)
    if pos2.ndim != 2 or pos2.shape[1] != 2:
        raise GeometryError("2D seed positions must have shape (N, 2)")
    pos3 = np.column_stack([pos2, np.full(len(pos2), 0.5)])
    return SeedCloud(pos3, mass=mass)


def build_diagram_2d(positions2: np.ndarray, weights: WeightVector,
                     domain2: Domain2D, mass=None):
    """2D Laguerre diagram via the slab embedding.

    Returns (areas, centroids2, second_moments2, slab_diagram); the slab's
    vertical moment contribution area/12 is removed from the second moments.
    """
    seeds3 = embed_seeds_2d(positions2, mass=mass)
    diagram = build_diagram(seeds3, weights, domain2.embed())
    areas = diagram.volumes
    cen2 = diagram.centroids[:, :2]
    m2_2d = diagram.second_moments - areas / 12.0
    return areas, cen2, m2_2d, diagram


def assign_points(points: np.ndarray, seeds: SeedCloud, weights: WeightVector,
                  domain: Domain) -> np.ndarray:
    """Owning cell of each point by the defining power inequality."""
    wrapped = domain.wrap(seeds.positions)
    shifts = _shift_table(domain) * domain.widths[None, :]
    img_pts = (wrapped[None, :, :] + shifts[:, None, :]).reshape(-1, 3)
    img_w = np.tile(weights.w, len(shifts))
    img_owner = np.tile(np.arange(seeds.n, dtype=np.int64), len(shifts))
    pts = np.ascontiguousarray(np.atleast_2d(points), dtype=np.float64)
    return _laguerre.assign_points(pts, img_pts, img_w, img_owner)


def monte_carlo_volumes(seeds: SeedCloud, weights: WeightVector, domain: Domain,
                        n_samples: int, rng: np.random.Generator,
                        chunk: int = 2_000_000) -> np.ndarray:
    """Rejection-free Monte-Carlo estimate of every cell volume."""
    counts = np.zeros(seeds.n, dtype=np.int64)
    remaining = n_samples
    while remaining > 0:
        m = min(chunk, remaining)
        pts = rng.uniform(domain.lo, domain.hi, size=(m, 3))
        owners = assign_points(pts, seeds, weights, domain)
        counts += np.bincount(owners, minlength=seeds.n)
        remaining -= m
    return counts / n_samples * domain.volume


def dump_csv(diagram: LaguerreDiagram, path):
    """Per-cell summary as ``i,volume,cx,cy,cz,second_moment``."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("i,volume,cx,cy,cz,second_moment\n")
        for i in range(diagram.n):
            c = diagram.centroids[i]
            fh.write(f"{i},{diagram.volumes[i]!r},{c[0]!r},{c[1]!r},{c[2]!r},"
                     f"{diagram.second_moments[i]!r}\n")


def dump_vtk(diagram: LaguerreDiagram, path):
    """Cell polygon soup as legacy-VTK POLYDATA (requires keep_faces)."""
    if diagram.faces is None:
        raise GeometryError("diagram was built without keep_faces=True")
    points = []
    polys = []
    for cell in diagram.faces:
        for _tag, poly in cell:
            base = len(points)
            points.extend(poly.tolist())
            polys.append([len(poly)] + [base + k for k in range(len(poly))])
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# vtk DataFile Version 2.0\n")
        fh.write("laguerre cells\nASCII\nDATASET POLYDATA\n")
        fh.write(f"POINTS {len(points)} double\n")
        for p in points:
            fh.write(f"{p[0]!r} {p[1]!r} {p[2]!r}\n")
        size = sum(len(p) for p in polys)
        fh.write(f"POLYGONS {len(polys)} {size}\n")
        for p in polys:
            fh.write(" ".join(str(x) for x in p) + "\n")
