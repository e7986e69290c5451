//! Voronoi tessellation of site coordinates and the neighbourhood graph.
//!
//! Sites are treated as planar points. Each site's Voronoi cell is carved out
//! of a bounding rectangle by half-plane clipping against the perpendicular
//! bisectors of the other sites, which keeps every cell finite and makes
//! "shared boundary of positive length" decidable. Two sites are neighbours
//! iff their cells share a boundary segment longer than a tolerance relative
//! to the bounding-box diagonal; cells that meet only at a corner are not
//! neighbours, so a regular grid yields rook adjacency.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::{Result, SdmeError};

/// Relative tolerance on shared-boundary length (fraction of bbox diagonal).
pub const BOUNDARY_LENGTH_TOL: f64 = 1e-9;

/// Default padding fraction applied to the coordinate extent when no
/// bounding box is supplied.
pub const DEFAULT_BBOX_PADDING: f64 = 0.05;

/// Georeferenced site centroids.
#[derive(Debug, Clone)]
pub struct SiteCoordinates {
    ids: Vec<i64>,
    points: Vec<[f64; 2]>,
    /// Free-form note on the coordinate reference system. The tessellation is
    /// planar either way; the note is carried into outputs, never interpreted.
    pub crs_note: Option<String>,
}

impl SiteCoordinates {
    /// Builds from `(site_id, lon, lat)` triples, validating uniqueness and
    /// finiteness.
    pub fn new(entries: Vec<(i64, f64, f64)>) -> Result<Self> {
        if entries.len() < 2 {
            return Err(SdmeError::TooFewSites(entries.len()));
        }
        let mut seen_ids = BTreeSet::new();
        let mut seen_pos: BTreeMap<(u64, u64), i64> = BTreeMap::new();
        let mut ids = Vec::with_capacity(entries.len());
        let mut points = Vec::with_capacity(entries.len());
        for (id, lon, lat) in entries {
            if !lon.is_finite() || !lat.is_finite() {
                return Err(SdmeError::InvalidInput(format!(
                    "site {id} has non-finite coordinates ({lon}, {lat})"
                )));
            }
            if !seen_ids.insert(id) {
                return Err(SdmeError::InvalidInput(format!("duplicate site_id {id}")));
            }
            if let Some(&other) = seen_pos.get(&(lon.to_bits(), lat.to_bits())) {
                return Err(SdmeError::DuplicateCoordinates(other, id));
            }
            seen_pos.insert((lon.to_bits(), lat.to_bits()), id);
            ids.push(id);
            points.push([lon, lat]);
        }
        Ok(Self {
            ids,
            points,
            crs_note: None,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[i64] {
        &self.ids
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    /// Smallest axis-aligned rectangle containing all sites, padded by
    /// `frac` of the extent on every side (degenerate extents padded by 0.5).
    pub fn padded_extent(&self, frac: f64) -> Rect {
        let (mut min_x, mut min_y) = (f64::INFINITY, f64::INFINITY);
        let (mut max_x, mut max_y) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in &self.points {
            min_x = min_x.min(p[0]);
            max_x = max_x.max(p[0]);
            min_y = min_y.min(p[1]);
            max_y = max_y.max(p[1]);
        }
        let pad = |lo: f64, hi: f64| {
            let ext = hi - lo;
            if ext > 0.0 {
                ext * frac
            } else {
                0.5
            }
        };
        let (px, py) = (pad(min_x, max_x), pad(min_y, max_y));
        Rect {
            min_x: min_x - px,
            min_y: min_y - py,
            max_x: max_x + px,
            max_y: max_y + py,
        }
    }
}

/// Axis-aligned bounding rectangle used to clip Voronoi cells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl Rect {
    pub fn contains(&self, p: [f64; 2]) -> bool {
        p[0] >= self.min_x && p[0] <= self.max_x && p[1] >= self.min_y && p[1] <= self.max_y
    }

    pub fn diagonal(&self) -> f64 {
        ((self.max_x - self.min_x).powi(2) + (self.max_y - self.min_y).powi(2)).sqrt()
    }
}

/// Undirected neighbourhood graph over dense site indices `0..n_sites`.
///
/// Edges are stored once with `l < t`; `neighbor_counts[l]` is the degree of
/// site `l` (the `n_l` entering the CAR conditional).
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialGraph {
    pub n_sites: usize,
    pub edges: Vec<(usize, usize)>,
    pub neighbor_counts: Vec<usize>,
    /// Original site ids, indexed by dense site index.
    pub site_ids: Vec<i64>,
}

impl SpatialGraph {
    /// Builds a graph from an edge list over dense indices.
    pub fn from_edges(site_ids: Vec<i64>, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let n = site_ids.len();
        let mut set = BTreeSet::new();
        for (a, b) in edges {
            if a == b {
                return Err(SdmeError::InvalidInput(format!("self-loop at site index {a}")));
            }
            if a >= n || b >= n {
                return Err(SdmeError::InvalidInput(format!(
                    "edge ({a},{b}) out of range for {n} sites"
                )));
            }
            set.insert((a.min(b), a.max(b)));
        }
        let edges: Vec<(usize, usize)> = set.into_iter().collect();
        let mut neighbor_counts = vec![0usize; n];
        for &(a, b) in &edges {
            neighbor_counts[a] += 1;
            neighbor_counts[b] += 1;
        }
        Ok(Self {
            n_sites: n,
            edges,
            neighbor_counts,
            site_ids,
        })
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    /// Adjacency lists (dense indices).
    pub fn adjacency_lists(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n_sites];
        for &(a, b) in &self.edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        adj
    }

    pub fn degree_sum(&self) -> usize {
        self.neighbor_counts.iter().sum()
    }
}

/// A clipped Voronoi cell: the generating site's dense index and the convex
/// polygon vertices in counter-clockwise order.
#[derive(Debug, Clone)]
pub struct VoronoiCell {
    pub site: usize,
    pub vertices: Vec<[f64; 2]>,
}

/// Provenance of a polygon edge during clipping: either part of the bounding
/// box or part of the bisector with another site.
#[derive(Debug, Clone, Copy, PartialEq)]
enum EdgeSource {
    Boundary,
    Bisector(usize),
}

/// Convex polygon with per-edge provenance; edge `i` runs from vertex `i` to
/// vertex `(i + 1) % n`.
#[derive(Debug, Clone)]
struct SourcedPolygon {
    vertices: Vec<[f64; 2]>,
    sources: Vec<EdgeSource>,
}

impl SourcedPolygon {
    fn rect(r: &Rect) -> Self {
        Self {
            vertices: vec![
                [r.min_x, r.min_y],
                [r.max_x, r.min_y],
                [r.max_x, r.max_y],
                [r.min_x, r.max_y],
            ],
            sources: vec![EdgeSource::Boundary; 4],
        }
    }

    /// Sutherland–Hodgman clip against the half-plane `a·x + b·y <= c`,
    /// tagging any newly created edge with `source`.
    fn clip(&self, a: f64, b: f64, c: f64, source: EdgeSource) -> Self {
        let n = self.vertices.len();
        let mut vertices = Vec::with_capacity(n + 1);
        let mut sources = Vec::with_capacity(n + 1);
        let val = |p: [f64; 2]| a * p[0] + b * p[1] - c;
        for i in 0..n {
            let cur = self.vertices[i];
            let nxt = self.vertices[(i + 1) % n];
            let src = self.sources[i];
            let (vc, vn) = (val(cur), val(nxt));
            let intersect = || {
                let t = vc / (vc - vn);
                [cur[0] + t * (nxt[0] - cur[0]), cur[1] + t * (nxt[1] - cur[1])]
            };
            if vc <= 0.0 {
                // current vertex inside
                vertices.push(cur);
                if vn <= 0.0 {
                    sources.push(src);
                } else {
                    // leaving: keep the surviving part of this edge, then the
                    // new edge along the clip line starts at the intersection
                    sources.push(src);
                    vertices.push(intersect());
                    sources.push(source);
                }
            } else if vn <= 0.0 {
                // entering: the rest of this edge survives
                vertices.push(intersect());
                sources.push(src);
            }
        }
        Self { vertices, sources }
    }

    /// Length of boundary contributed by each bisector site.
    fn bisector_lengths(&self) -> BTreeMap<usize, f64> {
        let mut out = BTreeMap::new();
        let n = self.vertices.len();
        for i in 0..n {
            if let EdgeSource::Bisector(t) = self.sources[i] {
                let p = self.vertices[i];
                let q = self.vertices[(i + 1) % n];
                let len = ((q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2)).sqrt();
                *out.entry(t).or_insert(0.0) += len;
            }
        }
        out
    }

    /// Polygon with consecutive near-duplicate vertices collapsed.
    fn cleaned_vertices(&self, tol: f64) -> Vec<[f64; 2]> {
        let mut out: Vec<[f64; 2]> = Vec::with_capacity(self.vertices.len());
        for &v in &self.vertices {
            if let Some(&last) = out.last() {
                if (v[0] - last[0]).abs() <= tol && (v[1] - last[1]).abs() <= tol {
                    continue;
                }
            }
            out.push(v);
        }
        if out.len() >= 2 {
            let (first, last) = (out[0], *out.last().unwrap());
            if (first[0] - last[0]).abs() <= tol && (first[1] - last[1]).abs() <= tol {
                out.pop();
            }
        }
        out
    }
}

/// Clipped Voronoi cell of one site together with the boundary length it
/// shares with every bisector neighbour.
fn clip_cell(
    idx: usize,
    points: &[[f64; 2]],
    order: &mut Vec<usize>,
    bbox: &Rect,
) -> (SourcedPolygon, BTreeMap<usize, f64>) {
    let p = points[idx];
    order.clear();
    order.extend((0..points.len()).filter(|&t| t != idx));
    let d2 = |t: usize| {
        let q = points[t];
        (q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2)
    };
    order.sort_by(|&a, &b| d2(a).partial_cmp(&d2(b)).unwrap());

    let mut poly = SourcedPolygon::rect(bbox);
    for &t in order.iter() {
        // security radius: once the nearest unprocessed site is farther than
        // twice the farthest cell vertex, no remaining bisector can cut the cell
        let max_r2 = poly
            .vertices
            .iter()
            .map(|v| (v[0] - p[0]).powi(2) + (v[1] - p[1]).powi(2))
            .fold(0.0f64, f64::max);
        if d2(t) > 4.0 * max_r2 {
            break;
        }
        let q = points[t];
        // closer to p than to q: 2(q-p)·x <= |q|^2 - |p|^2
        let a = 2.0 * (q[0] - p[0]);
        let b = 2.0 * (q[1] - p[1]);
        let c = q[0] * q[0] + q[1] * q[1] - p[0] * p[0] - p[1] * p[1];
        poly = poly.clip(a, b, c, EdgeSource::Bisector(t));
        if poly.vertices.is_empty() {
            break;
        }
    }
    let lengths = poly.bisector_lengths();
    (poly, lengths)
}

/// Full tessellation output: clipped cells plus the adjacency graph.
#[derive(Debug, Clone)]
pub struct Tessellation {
    pub cells: Vec<VoronoiCell>,
    pub graph: SpatialGraph,
    pub bbox: Rect,
}

/// Tessellates the sites and derives adjacency from shared cell boundaries.
///
/// `bounding_box = None` uses the coordinate extent padded by 5% per side.
/// An edge `(l, t)` exists iff the two clipped cells share a boundary segment
/// of positive length (longer than [`BOUNDARY_LENGTH_TOL`] of the bbox
/// diagonal); point contact does not count.
pub fn voronoi_tessellation(coords: &SiteCoordinates, bounding_box: Option<Rect>) -> Result<Tessellation> {
    let bbox = bounding_box.unwrap_or_else(|| coords.padded_extent(DEFAULT_BBOX_PADDING));
    for (id, p) in coords.ids().iter().zip(coords.points()) {
        if !bbox.contains(*p) {
            return Err(SdmeError::InvalidInput(format!(
                "site {id} at ({}, {}) lies outside the bounding box",
                p[0], p[1]
            )));
        }
    }
    let n = coords.len();
    let points = coords.points();
    let tol = BOUNDARY_LENGTH_TOL * bbox.diagonal();

    let mut cells = Vec::with_capacity(n);
    // shared-boundary length per ordered pair, as seen from each side
    let mut shared: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut order = Vec::with_capacity(n);
    for idx in 0..n {
        let (poly, lengths) = clip_cell(idx, points, &mut order, &bbox);
        for (t, len) in lengths {
            let key = (idx.min(t), idx.max(t));
            let slot = shared.entry(key).or_insert(0.0);
            *slot = slot.max(len);
        }
        cells.push(VoronoiCell {
            site: idx,
            vertices: poly.cleaned_vertices(tol),
        });
    }

    let edges: Vec<(usize, usize)> = shared
        .into_iter()
        .filter(|&(_, len)| len > tol)
        .map(|(pair, _)| pair)
        .collect();
    let graph = SpatialGraph::from_edges(coords.ids().to_vec(), edges)?;
    debug_assert_eq!(graph.degree_sum(), 2 * graph.n_edges());
    Ok(Tessellation { cells, graph, bbox })
}

/// Adjacency structure alone (see [`voronoi_tessellation`]).
pub fn build_voronoi_adjacency(coords: &SiteCoordinates, bounding_box: Option<Rect>) -> Result<SpatialGraph> {
    voronoi_tessellation(coords, bounding_box).map(|t| t.graph)
}

/// Partitions sites into maximal connected sets; each component is a sorted
/// list of dense site indices, components ordered by smallest member.
pub fn connected_components(graph: &SpatialGraph) -> Vec<Vec<usize>> {
    let adj = graph.adjacency_lists();
    let mut seen = vec![false; graph.n_sites];
    let mut components = Vec::new();
    for start in 0..graph.n_sites {
        if seen[start] {
            continue;
        }
        let mut stack = vec![start];
        let mut comp = Vec::new();
        seen[start] = true;
        while let Some(v) = stack.pop() {
            comp.push(v);
            for &w in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        comp.sort_unstable();
        components.push(comp);
    }
    components
}

/// GeoJSON `FeatureCollection` of the clipped cell polygons, one feature per
/// site with its `site_id` property.
pub fn cells_to_geojson(tess: &Tessellation) -> serde_json::Value {
    let features: Vec<serde_json::Value> = tess
        .cells
        .iter()
        .map(|cell| {
            let mut ring: Vec<[f64; 2]> = cell.vertices.clone();
            if let Some(&first) = ring.first() {
                ring.push(first);
            }
            serde_json::json!({
                "type": "Feature",
                "properties": { "site_id": tess.graph.site_ids[cell.site] },
                "geometry": { "type": "Polygon", "coordinates": [ring] },
            })
        })
        .collect();
    serde_json::json!({ "type": "FeatureCollection", "features": features })
}

/// Regular `k × k` grid of cell centres on the unit square, ids `1..=k*k`
/// in row-major order.
pub fn unit_square_grid(k: usize) -> SiteCoordinates {
    let mut entries = Vec::with_capacity(k * k);
    for row in 0..k {
        for col in 0..k {
            let id = (row * k + col + 1) as i64;
            let x = (col as f64 + 0.5) / k as f64;
            let y = (row as f64 + 0.5) / k as f64;
            entries.push((id, x, y));
        }
    }
    SiteCoordinates::new(entries).expect("grid coordinates are valid")
}

/// Rook-adjacency edge set of a `k × k` grid over dense row-major indices.
/// Used as the analytic oracle for grid tessellations.
pub fn rook_grid_edges(k: usize) -> BTreeSet<(usize, usize)> {
    let mut edges = BTreeSet::new();
    for row in 0..k {
        for col in 0..k {
            let i = row * k + col;
            if col + 1 < k {
                edges.insert((i, i + 1));
            }
            if row + 1 < k {
                edges.insert((i, i + k));
            }
        }
    }
    edges
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_graph(k: usize) -> SpatialGraph {
        build_voronoi_adjacency(&unit_square_grid(k), None).unwrap()
    }

    #[test]
    fn two_sites_share_one_edge() {
        let coords = SiteCoordinates::new(vec![(1, 0.25, 0.5), (2, 0.75, 0.5)]).unwrap();
        let g = build_voronoi_adjacency(&coords, None).unwrap();
        assert_eq!(g.n_edges(), 1);
        assert_eq!(g.neighbor_counts, vec![1, 1]);
    }

    #[test]
    fn grid_3x3_is_rook() {
        let g = grid_graph(3);
        // center cell (index 4) has 4 neighbours, corners have 2
        assert_eq!(g.neighbor_counts[4], 4);
        for corner in [0, 2, 6, 8] {
            assert_eq!(g.neighbor_counts[corner], 2, "corner {corner}");
        }
        let got: BTreeSet<_> = g.edges.iter().copied().collect();
        assert_eq!(got, rook_grid_edges(3));
    }

    #[test]
    fn grid_15x15_has_420_edges() {
        let g = grid_graph(15);
        assert_eq!(g.n_edges(), 2 * 15 * 14);
        let got: BTreeSet<_> = g.edges.iter().copied().collect();
        assert_eq!(got, rook_grid_edges(15));
    }

    #[test]
    fn rook_adjacency_on_small_grids() {
        for k in [2usize, 3, 4] {
            let g = grid_graph(k);
            let got: BTreeSet<_> = g.edges.iter().copied().collect();
            assert_eq!(got, rook_grid_edges(k), "grid {k}x{k}");
            assert_eq!(g.degree_sum(), 2 * g.n_edges());
        }
    }

    #[test]
    fn duplicate_coordinates_error_names_sites() {
        let coords = SiteCoordinates::new(vec![(7, 0.1, 0.2), (9, 0.1, 0.2)]);
        match coords {
            Err(SdmeError::DuplicateCoordinates(a, b)) => assert_eq!((a, b), (7, 9)),
            other => panic!("expected duplicate error, got {other:?}"),
        }
    }

    #[test]
    fn too_few_sites_errors() {
        assert!(matches!(
            SiteCoordinates::new(vec![(1, 0.0, 0.0)]),
            Err(SdmeError::TooFewSites(1))
        ));
    }

    #[test]
    fn components_fully_connected_grid() {
        let g = grid_graph(3);
        let comps = connected_components(&g);
        assert_eq!(comps.len(), 1);
        assert_eq!(comps[0].len(), 9);
    }

    #[test]
    fn components_edgeless_and_cliques() {
        let g = SpatialGraph::from_edges(vec![1, 2, 3, 4], std::iter::empty()).unwrap();
        assert_eq!(connected_components(&g).len(), 4);

        let g = SpatialGraph::from_edges(vec![1, 2, 3, 4], vec![(0, 1), (2, 3)]).unwrap();
        let comps = connected_components(&g);
        assert_eq!(comps, vec![vec![0, 1], vec![2, 3]]);
    }

    #[test]
    fn translation_and_scale_invariance() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(10);
        for _ in 0..20 {
            let n = rng.random_range(5..25);
            let pts: Vec<(i64, f64, f64)> = (0..n)
                .map(|i| (i as i64, rng.random::<f64>(), rng.random::<f64>()))
                .collect();
            let base = build_voronoi_adjacency(&SiteCoordinates::new(pts.clone()).unwrap(), None).unwrap();
            let scale = 10f64.powf(rng.random_range(-2.0..2.0));
            let (dx, dy) = (rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0));
            let moved: Vec<(i64, f64, f64)> = pts
                .iter()
                .map(|&(id, x, y)| (id, x * scale + dx, y * scale + dy))
                .collect();
            let transformed =
                build_voronoi_adjacency(&SiteCoordinates::new(moved).unwrap(), None).unwrap();
            assert_eq!(base.edges, transformed.edges);
        }
    }

    #[test]
    fn geojson_has_one_feature_per_site() {
        let tess = voronoi_tessellation(&unit_square_grid(3), None).unwrap();
        let gj = cells_to_geojson(&tess);
        assert_eq!(gj["features"].as_array().unwrap().len(), 9);
    }
}
