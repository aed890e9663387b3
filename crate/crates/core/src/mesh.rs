//! Triangle meshes from voxel grids, Laplacian smoothing and STL output.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::voxelize::VoxelGrid;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeshError {
    #[error("grid has no set voxels")]
    EmptyGrid,
    #[error("{0} triangles do not fit a 32-bit STL count")]
    TooManyTriangles(usize),
    #[error("malformed STL: {0}")]
    Malformed(String),
}

/// Indexed triangle mesh in millimetres, counter-clockwise seen from outside.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TriMesh {
    pub vertices: Vec<[f64; 3]>,
    pub triangles: Vec<[u32; 3]>,
}

impl TriMesh {
    pub fn bounding_box(&self) -> Option<([f64; 3], [f64; 3])> {
        let first = *self.vertices.first()?;
        Some(
            self.vertices
                .iter()
                .fold((first, first), |(mut lo, mut hi), v| {
                    for k in 0..3 {
                        lo[k] = lo[k].min(v[k]);
                        hi[k] = hi[k].max(v[k]);
                    }
                    (lo, hi)
                }),
        )
    }

    /// Length of the bounding-box diagonal, 0 for an empty mesh.
    pub fn bounding_diagonal(&self) -> f64 {
        self.bounding_box()
            .map(|(lo, hi)| {
                ((hi[0] - lo[0]).powi(2) + (hi[1] - lo[1]).powi(2) + (hi[2] - lo[2]).powi(2)).sqrt()
            })
            .unwrap_or(0.0)
    }

    pub fn surface_area(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| {
                let n = cross(
                    sub(self.vertices[t[1] as usize], self.vertices[t[0] as usize]),
                    sub(self.vertices[t[2] as usize], self.vertices[t[0] as usize]),
                );
                0.5 * norm(n)
            })
            .sum()
    }

    /// Sorted, deduplicated 1-ring neighbours of every vertex.
    pub fn neighbors(&self) -> Vec<Vec<u32>> {
        let mut adj = vec![Vec::new(); self.vertices.len()];
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                adj[a as usize].push(b);
                adj[b as usize].push(a);
            }
        }
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
        }
        adj
    }

    /// Counts how many triangles use each undirected edge.
    pub fn edge_audit(&self) -> EdgeAudit {
        let mut undirected: HashMap<(u32, u32), u32> = HashMap::new();
        let mut directed: HashMap<(u32, u32), u32> = HashMap::new();
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                *undirected.entry((a.min(b), a.max(b))).or_default() += 1;
                *directed.entry((a, b)).or_default() += 1;
            }
        }
        EdgeAudit {
            edges: undirected.len(),
            boundary_edges: undirected.values().filter(|&&c| c == 1).count(),
            nonmanifold_edges: undirected.values().filter(|&&c| c > 2).count(),
            misoriented_edges: directed.values().filter(|&&c| c > 1).count(),
        }
    }

    /// Number of edge-connected triangle components.
    pub fn component_count(&self) -> usize {
        let mut uf = UnionFind::new(self.vertices.len());
        for t in &self.triangles {
            uf.union(t[0] as usize, t[1] as usize);
            uf.union(t[0] as usize, t[2] as usize);
        }
        let mut roots: Vec<usize> = self
            .triangles
            .iter()
            .map(|t| uf.find(t[0] as usize))
            .collect();
        roots.sort_unstable();
        roots.dedup();
        roots.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EdgeAudit {
    pub edges: usize,
    pub boundary_edges: usize,
    pub nonmanifold_edges: usize,
    /// Directed edges used by more than one triangle (inconsistent winding).
    pub misoriented_edges: usize,
}

impl EdgeAudit {
    /// Every edge shared by exactly two consistently oriented triangles.
    pub fn is_closed_manifold(&self) -> bool {
        self.boundary_edges == 0 && self.nonmanifold_edges == 0 && self.misoriented_edges == 0
    }
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // Smaller root wins so the result does not depend on call order.
            let (lo, hi) = (ra.min(rb), ra.max(rb));
            self.parent[hi] = lo;
        }
    }
}

/// One exposed voxel face: its voxel and its four lattice corners, counter-
/// clockwise seen from outside.
struct Face {
    voxel: usize,
    corners: [[usize; 3]; 4],
}

const DIRECTIONS: [(usize, bool); 6] = [
    (0, false),
    (0, true),
    (1, false),
    (1, true),
    (2, false),
    (2, true),
];

/// Emits two triangles for every face between a set voxel and an empty or
/// out-of-grid neighbour.
///
/// Corners are welded by lattice position, except where two surface sheets
/// only touch along an edge or at a point (diagonal voxel contacts); there the
/// shared corners are split so each sheet stays a closed manifold. A diagonal
/// edge contact whose two sheets are joined again at both ends cannot be
/// split that way; it is closed by setting one of the two empty voxels at the
/// edge (the lower index), repeating until none remain. Vertices are ordered
/// by lattice index.
pub fn extract_mesh(grid: &VoxelGrid) -> Result<TriMesh, MeshError> {
    let mut repaired: Option<VoxelGrid> = None;
    loop {
        let current = repaired.as_ref().unwrap_or(grid);
        match weld(current)? {
            Ok(mesh) => return Ok(mesh),
            Err(pinches) => {
                let work = repaired.get_or_insert_with(|| grid.clone());
                for v in pinches {
                    work.set(v[0], v[1], v[2], true);
                }
            }
        }
    }
}

/// The welded mesh, or the voxels to set to remove pinched edges.
#[allow(clippy::type_complexity)]
fn weld(grid: &VoxelGrid) -> Result<Result<TriMesh, Vec<[usize; 3]>>, MeshError> {
    let [nx, ny, _] = grid.dims();
    let (lx, ly) = (nx + 1, ny + 1);
    let lattice_index = |c: [usize; 3]| c[0] + lx * (c[1] + ly * c[2]);

    let mut faces = Vec::new();
    for [x, y, z] in grid.iter_set() {
        let voxel = grid.index(x, y, z);
        for &(axis, positive) in &DIRECTIONS {
            let mut n = [x as i64, y as i64, z as i64];
            n[axis] += if positive { 1 } else { -1 };
            if grid.get_signed(n[0], n[1], n[2]) {
                continue;
            }
            let b = (axis + 1) % 3;
            let c = (axis + 2) % 3;
            let mut origin = [x, y, z];
            if positive {
                origin[axis] += 1;
            }
            let at = |db: usize, dc: usize| {
                let mut p = origin;
                p[b] += db;
                p[c] += dc;
                p
            };
            // e_b x e_c = e_axis, so (0,0),(1,0),(1,1),(0,1) faces +axis.
            let corners = if positive {
                [at(0, 0), at(1, 0), at(1, 1), at(0, 1)]
            } else {
                [at(0, 0), at(0, 1), at(1, 1), at(1, 0)]
            };
            faces.push(Face { voxel, corners });
        }
    }
    if faces.is_empty() {
        return Err(MeshError::EmptyGrid);
    }

    // Every face edge keyed by its lattice endpoints.
    let mut edges: Vec<(usize, usize, usize, usize)> = Vec::with_capacity(faces.len() * 4);
    for (f, face) in faces.iter().enumerate() {
        for k in 0..4 {
            let a = lattice_index(face.corners[k]);
            let b = lattice_index(face.corners[(k + 1) % 4]);
            edges.push((a.min(b), a.max(b), f, k));
        }
    }
    edges.sort_unstable();

    let mut uf = UnionFind::new(faces.len() * 4);
    let corner_of = |f: usize, lattice: usize| -> usize {
        let k = faces[f]
            .corners
            .iter()
            .position(|&c| lattice_index(c) == lattice)
            .expect("edge endpoint is a face corner");
        f * 4 + k
    };
    let link = |uf: &mut UnionFind, f1: usize, f2: usize, a: usize, b: usize| {
        uf.union(corner_of(f1, a), corner_of(f2, a));
        uf.union(corner_of(f1, b), corner_of(f2, b));
    };
    for group in edges.chunk_by(|p, q| (p.0, p.1) == (q.0, q.1)) {
        let (a, b) = (group[0].0, group[0].1);
        match group.len() {
            2 => link(&mut uf, group[0].2, group[1].2, a, b),
            4 => {
                // Two voxels touching only along this edge: pair each voxel's
                // own two faces.
                let mut by_voxel: Vec<usize> = group.iter().map(|e| e.2).collect();
                by_voxel.sort_by_key(|&f| (faces[f].voxel, f));
                link(&mut uf, by_voxel[0], by_voxel[1], a, b);
                link(&mut uf, by_voxel[2], by_voxel[3], a, b);
            }
            n => unreachable!("lattice edge shared by {n} boundary faces"),
        }
    }
    let mut pinches = Vec::new();
    for group in edges.chunk_by(|p, q| (p.0, p.1) == (q.0, q.1)) {
        if group.len() != 4 {
            continue;
        }
        let (a, b) = (group[0].0, group[0].1);
        let mut by_voxel: Vec<usize> = group.iter().map(|e| e.2).collect();
        by_voxel.sort_by_key(|&f| (faces[f].voxel, f));
        let (f, g) = (by_voxel[0], by_voxel[2]);
        if uf.find(corner_of(f, a)) == uf.find(corner_of(g, a))
            && uf.find(corner_of(f, b)) == uf.find(corner_of(g, b))
        {
            pinches.push(empty_at_edge(grid, faces[f].corners, a, b, lattice_index));
        }
    }
    if !pinches.is_empty() {
        pinches.sort_unstable();
        pinches.dedup();
        return Ok(Err(pinches));
    }

    // Number the corner classes in lattice order.
    let mut classes: Vec<(usize, usize, usize)> = (0..faces.len() * 4)
        .filter_map(|id| {
            let root = uf.find(id);
            (root == id).then(|| (lattice_index(faces[id / 4].corners[id % 4]), id, id))
        })
        .collect();
    classes.sort_unstable();
    let mut vertex_of_root = HashMap::with_capacity(classes.len());
    let size = grid.voxel_size();
    let mut vertices = Vec::with_capacity(classes.len());
    for (v, &(_, _, root)) in classes.iter().enumerate() {
        vertex_of_root.insert(root, v as u32);
        let c = faces[root / 4].corners[root % 4];
        vertices.push([
            c[0] as f64 * size[0],
            c[1] as f64 * size[1],
            c[2] as f64 * size[2],
        ]);
    }

    let mut triangles = Vec::with_capacity(faces.len() * 2);
    for f in 0..faces.len() {
        let q: [u32; 4] = std::array::from_fn(|k| vertex_of_root[&uf.find(f * 4 + k)]);
        triangles.push([q[0], q[1], q[2]]);
        triangles.push([q[0], q[2], q[3]]);
    }
    Ok(Ok(TriMesh {
        vertices,
        triangles,
    }))
}

/// Lowest-index in-grid empty voxel among the four around the lattice edge
/// `a`-`b`, which is an edge of a face with lattice `corners`.
fn empty_at_edge(
    grid: &VoxelGrid,
    corners: [[usize; 3]; 4],
    a: usize,
    b: usize,
    lattice_index: impl Fn([usize; 3]) -> usize,
) -> [usize; 3] {
    let pa = *corners
        .iter()
        .find(|&&c| lattice_index(c) == a)
        .expect("corner");
    let pb = *corners
        .iter()
        .find(|&&c| lattice_index(c) == b)
        .expect("corner");
    let axis = (0..3)
        .find(|&k| pa[k] != pb[k])
        .expect("distinct endpoints");
    let (p, q) = ((axis + 1) % 3, (axis + 2) % 3);
    let mut best = None;
    for dp in [1i64, 0] {
        for dq in [1i64, 0] {
            let mut v = [0i64; 3];
            v[axis] = pa[axis].min(pb[axis]) as i64;
            v[p] = pa[p] as i64 - dp;
            v[q] = pa[q] as i64 - dq;
            let inside = (0..3).all(|k| v[k] >= 0 && (v[k] as usize) < grid.dims()[k]);
            if inside && !grid.get_signed(v[0], v[1], v[2]) {
                let v = v.map(|c| c as usize);
                let key = grid.index(v[0], v[1], v[2]);
                if best.is_none_or(|(k, _)| key < k) {
                    best = Some((key, v));
                }
            }
        }
    }
    best.expect("a diagonal contact has an empty voxel in the grid")
        .1
}

/// `steps` synchronous passes, each moving every vertex `lambda` of the way
/// to the centroid of its 1-ring neighbours.
pub fn laplacian_smooth(mesh: &TriMesh, steps: usize, lambda: f64) -> TriMesh {
    let mut out = mesh.clone();
    if steps == 0 {
        return out;
    }
    let adj = mesh.neighbors();
    let mut next = out.vertices.clone();
    for _ in 0..steps {
        for (i, ring) in adj.iter().enumerate() {
            if ring.is_empty() {
                next[i] = out.vertices[i];
                continue;
            }
            let mut c = [0.0; 3];
            for &n in ring {
                let p = out.vertices[n as usize];
                c[0] += p[0];
                c[1] += p[1];
                c[2] += p[2];
            }
            let k = ring.len() as f64;
            let v = out.vertices[i];
            for a in 0..3 {
                next[i][a] = v[a] + lambda * (c[a] / k - v[a]);
            }
        }
        std::mem::swap(&mut out.vertices, &mut next);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StlMode {
    Binary,
    Ascii,
}

const STL_HEADER_TAG: &[u8] = b"supershape binary STL";

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn norm(a: [f64; 3]) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

/// Unit normal by the right-hand rule; zero for degenerate triangles.
fn facet_normal(mesh: &TriMesh, t: &[u32; 3]) -> [f64; 3] {
    let [a, b, c] = t.map(|i| mesh.vertices[i as usize]);
    let n = cross(sub(b, a), sub(c, a));
    let len = norm(n);
    if len > 0.0 {
        [n[0] / len, n[1] / len, n[2] / len]
    } else {
        [0.0; 3]
    }
}

/// Serializes the mesh as STL.
///
/// Binary layout: 80-byte header (a short tag, zero padded), u32 LE triangle
/// count, then per triangle twelve f32 LE (normal, three vertices) and a zero
/// u16 attribute; `84 + 50 * T` bytes in total.
pub fn export_stl(mesh: &TriMesh, mode: StlMode) -> Result<Vec<u8>, MeshError> {
    let count = u32::try_from(mesh.triangles.len())
        .map_err(|_| MeshError::TooManyTriangles(mesh.triangles.len()))?;
    match mode {
        StlMode::Binary => {
            let mut out = Vec::with_capacity(84 + 50 * mesh.triangles.len());
            let mut header = [0u8; 80];
            header[..STL_HEADER_TAG.len()].copy_from_slice(STL_HEADER_TAG);
            out.extend_from_slice(&header);
            out.extend_from_slice(&count.to_le_bytes());
            for t in &mesh.triangles {
                let normal = facet_normal(mesh, t);
                let verts = t.map(|i| mesh.vertices[i as usize]);
                for v in std::iter::once(normal).chain(verts) {
                    for c in v {
                        out.extend_from_slice(&(c as f32).to_le_bytes());
                    }
                }
                out.extend_from_slice(&0u16.to_le_bytes());
            }
            Ok(out)
        }
        StlMode::Ascii => {
            let mut s = String::from("solid supershape\n");
            for t in &mesh.triangles {
                let n = facet_normal(mesh, t);
                let _ = writeln!(
                    s,
                    "  facet normal {:e} {:e} {:e}",
                    n[0] as f32, n[1] as f32, n[2] as f32
                );
                s.push_str("    outer loop\n");
                for i in t {
                    let v = mesh.vertices[*i as usize];
                    let _ = writeln!(
                        s,
                        "      vertex {:e} {:e} {:e}",
                        v[0] as f32, v[1] as f32, v[2] as f32
                    );
                }
                s.push_str("    endloop\n  endfacet\n");
            }
            s.push_str("endsolid supershape\n");
            Ok(s.into_bytes())
        }
    }
}

/// A triangle as stored in a binary STL: normal and three vertices.
pub type StlFacet = [[f32; 3]; 4];

/// Parses a binary STL into its facets.
pub fn parse_binary_stl(bytes: &[u8]) -> Result<Vec<StlFacet>, MeshError> {
    if bytes.len() < 84 {
        return Err(MeshError::Malformed(
            "shorter than the 84-byte header".into(),
        ));
    }
    let count = u32::from_le_bytes(bytes[80..84].try_into().unwrap()) as usize;
    let expected = 84 + 50 * count;
    if bytes.len() != expected {
        return Err(MeshError::Malformed(format!(
            "{} bytes for {count} triangles, expected {expected}",
            bytes.len()
        )));
    }
    Ok(bytes[84..]
        .chunks_exact(50)
        .map(|rec| {
            std::array::from_fn(|v| {
                std::array::from_fn(|c| {
                    let o = (v * 3 + c) * 4;
                    f32::from_le_bytes(rec[o..o + 4].try_into().unwrap())
                })
            })
        })
        .collect())
}
