//! Binary voxel grids: surface rasterization, interior filling, the turbine
//! mounting platform and voxel-match scoring.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    sample_surface, superformula_r, BasicGenome, BasicParams, Genome, GeometryError, Resolution,
    Surface, SurfaceSample, TwistParam,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VoxelError {
    #[error("no sampled point falls inside the workspace")]
    EmptyResult,
    #[error("grid {0}x{1} is smaller than the 14x14 platform footprint")]
    GridTooSmall(usize, usize),
    #[error("grid dimensions differ: {0:?} vs {1:?}")]
    DimMismatch([usize; 3], [usize; 3]),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Dense 3D occupancy, x fastest, then y, then z.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    dims: [usize; 3],
    voxel_size: [f64; 3],
    occupancy: Vec<bool>,
}

impl VoxelGrid {
    pub fn new(dims: [usize; 3], voxel_size: [f64; 3]) -> Result<Self, VoxelError> {
        if dims.iter().any(|&d| d == 0) {
            return Err(VoxelError::InvalidGrid(format!(
                "zero dimension in {dims:?}"
            )));
        }
        if voxel_size.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(VoxelError::InvalidGrid(format!(
                "voxel size {voxel_size:?} must be positive"
            )));
        }
        let len = dims[0]
            .checked_mul(dims[1])
            .and_then(|v| v.checked_mul(dims[2]))
            .ok_or_else(|| VoxelError::InvalidGrid("grid too large".into()))?;
        Ok(Self {
            dims,
            voxel_size,
            occupancy: vec![false; len],
        })
    }

    pub fn from_occupancy(
        dims: [usize; 3],
        voxel_size: [f64; 3],
        occupancy: Vec<bool>,
    ) -> Result<Self, VoxelError> {
        let mut grid = Self::new(dims, voxel_size)?;
        if occupancy.len() != grid.occupancy.len() {
            return Err(VoxelError::InvalidGrid(format!(
                "occupancy has {} cells, dims need {}",
                occupancy.len(),
                grid.occupancy.len()
            )));
        }
        grid.occupancy = occupancy;
        Ok(grid)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn voxel_size(&self) -> [f64; 3] {
        self.voxel_size
    }

    pub fn len(&self) -> usize {
        self.occupancy.len()
    }

    pub fn is_empty(&self) -> bool {
        self.occupancy.is_empty()
    }

    pub fn occupancy(&self) -> &[bool] {
        &self.occupancy
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        debug_assert!(x < self.dims[0] && y < self.dims[1] && z < self.dims[2]);
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> bool {
        self.occupancy[self.index(x, y, z)]
    }

    /// Occupancy with everything outside the grid reading as empty.
    #[inline]
    pub fn get_signed(&self, x: i64, y: i64, z: i64) -> bool {
        if x < 0 || y < 0 || z < 0 {
            return false;
        }
        let (x, y, z) = (x as usize, y as usize, z as usize);
        x < self.dims[0] && y < self.dims[1] && z < self.dims[2] && self.get(x, y, z)
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, value: bool) {
        let i = self.index(x, y, z);
        self.occupancy[i] = value;
    }

    pub fn count(&self) -> usize {
        self.occupancy.iter().filter(|&&v| v).count()
    }

    /// Fraction of set voxels.
    pub fn active_fraction(&self) -> f64 {
        self.count() as f64 / self.len() as f64
    }

    pub fn complement(&self) -> Self {
        Self {
            dims: self.dims,
            voxel_size: self.voxel_size,
            occupancy: self.occupancy.iter().map(|v| !v).collect(),
        }
    }

    /// Coordinates of every set voxel in storage order.
    pub fn iter_set(&self) -> impl Iterator<Item = [usize; 3]> + '_ {
        let [nx, ny, _] = self.dims;
        self.occupancy
            .iter()
            .enumerate()
            .filter(|(_, &v)| v)
            .map(move |(i, _)| [i % nx, (i / nx) % ny, i / (nx * ny)])
    }
}

pub fn active_fraction(grid: &VoxelGrid) -> f64 {
    grid.active_fraction()
}

/// Fraction of voxels whose occupancy agrees between the two grids.
pub fn match_fraction(candidate: &VoxelGrid, target: &VoxelGrid) -> Result<f64, VoxelError> {
    if candidate.dims != target.dims {
        return Err(VoxelError::DimMismatch(candidate.dims, target.dims));
    }
    let equal = candidate
        .occupancy
        .iter()
        .zip(&target.occupancy)
        .filter(|(a, b)| a == b)
        .count();
    Ok(equal as f64 / candidate.len() as f64)
}

/// Physical build volume and its voxel resolution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Workspace {
    /// Millimetres along x, y, z.
    pub physical_size: [f64; 3],
    pub grid_dims: [usize; 3],
    pub platform_enabled: bool,
    pub fill_interior: bool,
}

impl Workspace {
    /// 50^3 unit voxels, solid shapes, no platform.
    pub fn target_default() -> Self {
        Self {
            physical_size: [50.0, 50.0, 50.0],
            grid_dims: [50, 50, 50],
            platform_enabled: false,
            fill_interior: true,
        }
    }

    /// 50 x 50 x 70 mm at 100^3 voxels, hollow shells on a platform.
    pub fn vawt_default() -> Self {
        Self {
            physical_size: [50.0, 50.0, 70.0],
            grid_dims: [100, 100, 100],
            platform_enabled: true,
            fill_interior: false,
        }
    }

    pub fn voxel_size(&self) -> [f64; 3] {
        [
            self.physical_size[0] / self.grid_dims[0] as f64,
            self.physical_size[1] / self.grid_dims[1] as f64,
            self.physical_size[2] / self.grid_dims[2] as f64,
        ]
    }

    pub fn empty_grid(&self) -> Result<VoxelGrid, VoxelError> {
        VoxelGrid::new(self.grid_dims, self.voxel_size())
    }
}

/// How model coordinates are placed in the grid. The model origin always
/// lands on the grid centre; coordinates are in voxel units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Placement {
    /// Uniform scale chosen so the largest sampled radius reaches the
    /// nearest grid face.
    Normalized,
    /// Fixed number of voxels per model unit. Parts beyond the grid are clipped.
    Scaled { voxels_per_unit: f64 },
}

impl Placement {
    /// Basic genomes at radius 1 = 25 voxels; extended genomes use `r0`
    /// directly as voxels.
    pub fn vawt_for(genome: &Genome) -> Self {
        match genome {
            Genome::Basic(_) => Placement::Scaled {
                voxels_per_unit: 25.0,
            },
            Genome::Extended(_) => Placement::Scaled {
                voxels_per_unit: 1.0,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RasterOptions {
    pub placement: Placement,
    /// Maximum number of midpoint halvings applied to a lattice cell.
    pub max_depth: u32,
    /// Lattice cells are refined until neighbouring samples are at most this
    /// many voxels apart (Chebyshev distance).
    pub max_spacing: f64,
    /// Upper bound on refined samples per render. Plans above it have their
    /// deepest levels lowered until they fit.
    #[serde(default = "default_max_samples")]
    pub max_samples: usize,
}

fn default_max_samples() -> usize {
    1 << 22
}

impl Default for RasterOptions {
    fn default() -> Self {
        Self {
            placement: Placement::Normalized,
            max_depth: 6,
            max_spacing: 0.5,
            max_samples: default_max_samples(),
        }
    }
}

/// Everything needed to turn a genome into a grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenderOptions {
    pub resolution: Resolution,
    pub raster: RasterOptions,
    #[serde(default)]
    pub twist: TwistParam,
}

impl RenderOptions {
    /// Solid, normalized rendering for target matching on a 50^3 grid.
    pub fn target() -> Self {
        Self {
            resolution: Resolution::new(128, 64),
            raster: RasterOptions::default(),
            twist: TwistParam::C2,
        }
    }

    pub fn vawt_for(genome: &Genome) -> Self {
        Self {
            resolution: Resolution::default(),
            raster: RasterOptions {
                placement: Placement::vawt_for(genome),
                ..RasterOptions::default()
            },
            twist: TwistParam::C2,
        }
    }
}

struct GridMap {
    center: [f64; 3],
    scale: f64,
    dims: [f64; 3],
}

impl GridMap {
    #[inline]
    fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        [
            self.center[0] + p[0] * self.scale,
            self.center[1] + p[1] * self.scale,
            self.center[2] + p[2] * self.scale,
        ]
    }
}

/// Marks every voxel crossed by the sampled surface.
///
/// Lattice cells whose corners are further apart than
/// `opts.max_spacing` voxels are subdivided by repeated midpoint halving
/// (up to `opts.max_depth` levels) before their samples are marked. Samples
/// outside the grid are clipped.
pub fn rasterize(
    sample: &SurfaceSample,
    ws: &Workspace,
    opts: &RasterOptions,
) -> Result<VoxelGrid, VoxelError> {
    let mut grid = ws.empty_grid()?;
    let dims = [
        ws.grid_dims[0] as f64,
        ws.grid_dims[1] as f64,
        ws.grid_dims[2] as f64,
    ];
    let profiles = match sample.surface {
        Surface::Basic(genome) => Some(Profiles::new(&genome, sample.resolution)),
        Surface::Extended { .. } => None,
    };
    let scale = match opts.placement {
        Placement::Scaled { voxels_per_unit } => voxels_per_unit,
        Placement::Normalized => {
            let max_r = match &profiles {
                Some(p) => p.max_radius(),
                None => sample
                    .points()
                    .iter()
                    .map(|p| (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt())
                    .fold(0.0, f64::max),
            };
            if max_r <= 0.0 {
                // Everything collapsed onto the origin.
                1.0
            } else {
                let half = dims.iter().copied().fold(f64::INFINITY, f64::min) / 2.0;
                half * (1.0 - 1e-9) / max_r
            }
        }
    };
    let map = GridMap {
        center: [dims[0] / 2.0, dims[1] / 2.0, dims[2] / 2.0],
        scale,
        dims,
    };
    let mut marker = Marker {
        grid: &mut grid,
        inside: 0,
    };
    match (&sample.surface, profiles) {
        (Surface::Basic(genome), Some(p)) => {
            rasterize_separable(genome, &p, &map, opts, &mut marker)
        }
        _ => rasterize_generic(sample, &map, opts, &mut marker),
    }
    if marker.inside == 0 {
        return Err(VoxelError::EmptyResult);
    }
    Ok(grid)
}

struct Marker<'a> {
    grid: &'a mut VoxelGrid,
    inside: usize,
}

impl Marker<'_> {
    #[inline]
    fn mark(&mut self, c: [f64; 3]) {
        // Comparisons are false for NaN, so non-finite samples are dropped.
        let [nx, ny, nz] = self.grid.dims;
        if c[0] >= 0.0 && c[1] >= 0.0 && c[2] >= 0.0 {
            let (x, y, z) = (c[0] as usize, c[1] as usize, c[2] as usize);
            if x < nx && y < ny && z < nz {
                self.grid.occupancy[x + nx * (y + ny * z)] = true;
                self.inside += 1;
            }
        }
    }
}

#[inline]
fn chebyshev(a: [f64; 3], b: [f64; 3]) -> f64 {
    (a[0] - b[0])
        .abs()
        .max((a[1] - b[1]).abs())
        .max((a[2] - b[2]).abs())
}

/// Number of halvings needed to bring `span` under `spacing`.
#[inline]
fn halvings(span: f64, spacing: f64, max_depth: u32) -> u32 {
    if !span.is_finite() {
        return max_depth;
    }
    let mut level = 0;
    let mut s = span;
    while s > spacing && level < max_depth {
        s *= 0.5;
        level += 1;
    }
    level
}

/// Corners of a lattice cell in grid coordinates, and whether the cell can
/// touch the grid at all.
struct Cell {
    level_u: u32,
    level_v: u32,
}

fn plan_cells(
    base: &[[f64; 3]],
    nu: usize,
    nv: usize,
    map: &GridMap,
    opts: &RasterOptions,
) -> Vec<Option<Cell>> {
    let mut cells = Vec::with_capacity((nu - 1) * (nv - 1));
    for j in 0..nv - 1 {
        for i in 0..nu - 1 {
            let p00 = base[j * nu + i];
            let p10 = base[j * nu + i + 1];
            let p01 = base[(j + 1) * nu + i];
            let p11 = base[(j + 1) * nu + i + 1];
            let span_u = chebyshev(p00, p10).max(chebyshev(p01, p11));
            let span_v = chebyshev(p00, p01).max(chebyshev(p10, p11));
            let reach = span_u.max(span_v).min(CULL_MARGIN);
            let outside = (0..3).any(|k| {
                let lo = p00[k].min(p10[k]).min(p01[k]).min(p11[k]);
                let hi = p00[k].max(p10[k]).max(p01[k]).max(p11[k]);
                hi < -reach || lo > map.dims[k] + reach
            });
            if outside {
                cells.push(None);
            } else {
                cells.push(Some(Cell {
                    level_u: halvings(span_u, opts.max_spacing, opts.max_depth),
                    level_v: halvings(span_v, opts.max_spacing, opts.max_depth),
                }));
            }
        }
    }
    fit_budget(&mut cells, opts);
    cells
}

/// Largest distance, in voxels, a cell's surface is assumed to bulge past
/// its corners when deciding whether it can touch the grid.
const CULL_MARGIN: f64 = 4.0;

/// Lowers the deepest cell levels until the plan's sample count fits
/// `opts.max_samples`.
fn fit_budget(cells: &mut [Option<Cell>], opts: &RasterOptions) {
    let total = |cells: &[Option<Cell>]| -> usize {
        cells
            .iter()
            .flatten()
            .map(|c| ((1usize << c.level_u) + 1) * ((1usize << c.level_v) + 1))
            .sum()
    };
    let mut cap = opts.max_depth;
    while cap > 0 && total(cells) > opts.max_samples {
        cap -= 1;
        for c in cells.iter_mut().flatten() {
            c.level_u = c.level_u.min(cap);
            c.level_v = c.level_v.min(cap);
        }
    }
}

/// Lattice coordinate between samples `i` and `i + 1` at fraction `k / 2^level`.
#[inline]
fn sub_lattice(i: usize, n: usize, k: usize, level: u32) -> f64 {
    let step = 1.0 / (n - 1) as f64;
    let lo = SurfaceSample::lattice(i, n);
    if k == 0 {
        lo
    } else if k == 1 << level {
        SurfaceSample::lattice(i + 1, n)
    } else {
        lo + step * (k as f64 / (1u64 << level) as f64)
    }
}

/// Dense samples per base lattice interval of a separable surface, as a
/// power of two.
const DENSE_LEVEL: u32 = 3;
const DENSE: usize = 1 << DENSE_LEVEL;

/// A planar superformula curve `(r cos a, r sin a)` sampled `DENSE` times
/// per base interval, with per-interval extents.
struct Profile {
    n: usize,
    dense: Vec<[f64; 2]>,
    /// Per base interval: lowest and highest value of each component.
    lo: Vec<[f64; 2]>,
    hi: Vec<[f64; 2]>,
    /// Per base interval and level: widest component range over the
    /// `2^level` equal sub-intervals.
    width: Vec<[[f64; 2]; DENSE_LEVEL as usize + 1]>,
}

impl Profile {
    fn new(n: usize, params: &BasicParams, angle: fn(f64) -> f64) -> Self {
        let point = |t: f64| {
            let a = angle(t);
            let r = superformula_r(a, params);
            [r * a.cos(), r * a.sin()]
        };
        let mut dense = Vec::with_capacity((n - 1) * DENSE + 1);
        for i in 0..n - 1 {
            for k in 0..DENSE {
                dense.push(point(sub_lattice(i, n, k, DENSE_LEVEL)));
            }
        }
        dense.push(point(SurfaceSample::lattice(n - 1, n)));

        let range = |pts: &[[f64; 2]]| {
            let mut lo = [f64::INFINITY; 2];
            let mut hi = [f64::NEG_INFINITY; 2];
            for p in pts {
                for c in 0..2 {
                    lo[c] = lo[c].min(p[c]);
                    hi[c] = hi[c].max(p[c]);
                }
            }
            (lo, hi)
        };
        let mut lo = Vec::with_capacity(n - 1);
        let mut hi = Vec::with_capacity(n - 1);
        let mut width = Vec::with_capacity(n - 1);
        for i in 0..n - 1 {
            let span = &dense[i * DENSE..=(i + 1) * DENSE];
            let (l, h) = range(span);
            lo.push(l);
            hi.push(h);
            let mut w = [[0.0f64; 2]; DENSE_LEVEL as usize + 1];
            for (level, wl) in w.iter_mut().enumerate() {
                let step = DENSE >> level;
                for m in 0..(1 << level) {
                    let (l, h) = range(&span[m * step..=(m + 1) * step]);
                    for c in 0..2 {
                        wl[c] = wl[c].max(h[c] - l[c]);
                    }
                }
            }
            width.push(w);
        }
        Self {
            n,
            dense,
            lo,
            hi,
            width,
        }
    }

    /// Widest component range of the sub-intervals of interval `i` at
    /// `level`. Below the dense spacing the range is taken to halve per level.
    #[inline]
    fn width(&self, i: usize, level: u32, c: usize) -> f64 {
        if level <= DENSE_LEVEL {
            self.width[i][level as usize][c]
        } else {
            self.width[i][DENSE_LEVEL as usize][c] / (1u64 << (level - DENSE_LEVEL)) as f64
        }
    }

    #[inline]
    fn max_abs(&self, i: usize, c: usize) -> f64 {
        self.lo[i][c].abs().max(self.hi[i][c].abs())
    }

    /// Samples of interval `i` at `level`, including both ends.
    fn refined(
        &self,
        i: usize,
        level: u32,
        params: &BasicParams,
        angle: fn(f64) -> f64,
    ) -> Vec<[f64; 2]> {
        if level <= DENSE_LEVEL {
            self.dense[i * DENSE..=(i + 1) * DENSE]
                .iter()
                .step_by(DENSE >> level)
                .copied()
                .collect()
        } else {
            (0..=(1usize << level))
                .map(|k| {
                    let a = angle(sub_lattice(i, self.n, k, level));
                    let r = superformula_r(a, params);
                    [r * a.cos(), r * a.sin()]
                })
                .collect()
        }
    }
}

/// Longitude and latitude profiles of a basic genome. Surface points are
/// `(a0 b0, a1 b0, b1)` for `a` on the longitude and `b` on the latitude.
struct Profiles {
    lon: Profile,
    lat: Profile,
}

impl Profiles {
    fn new(genome: &BasicGenome, res: Resolution) -> Self {
        Self {
            lon: Profile::new(res.theta, &genome.longitude(), Surface::theta),
            lat: Profile::new(res.phi, &genome.latitude(), Surface::varphi),
        }
    }

    fn max_radius(&self) -> f64 {
        let a2 = self
            .lon
            .dense
            .iter()
            .map(|a| a[0] * a[0] + a[1] * a[1])
            .fold(0.0, f64::max);
        self.lat
            .dense
            .iter()
            .map(|b| (a2 * b[0] * b[0] + b[1] * b[1]).sqrt())
            .fold(0.0, f64::max)
    }
}

/// Smallest level at which `width(level) * factor` fits under the spacing.
#[inline]
fn level_for(width: impl Fn(u32) -> f64, opts: &RasterOptions) -> u32 {
    (0..opts.max_depth)
        .find(|&l| width(l) <= opts.max_spacing)
        .unwrap_or(opts.max_depth)
}

/// Spherical products factor into a longitude and a latitude curve, so
/// refined samples only need one superformula evaluation per refined
/// longitude and latitude rather than per point. Cell extents come from the
/// dense profiles, which catches features that fall between base samples.
fn rasterize_separable(
    genome: &BasicGenome,
    p: &Profiles,
    map: &GridMap,
    opts: &RasterOptions,
    marker: &mut Marker,
) {
    let (nu, nv) = (p.lon.n, p.lat.n);
    let s = map.scale;
    let margin = opts.max_spacing;
    let mut cells: Vec<Option<Cell>> = Vec::with_capacity((nu - 1) * (nv - 1));
    for j in 0..nv - 1 {
        let (blo, bhi) = (p.lat.lo[j], p.lat.hi[j]);
        let zlo = map.center[2] + blo[1] * s;
        let zhi = map.center[2] + bhi[1] * s;
        let b0 = p.lat.max_abs(j, 0);
        for i in 0..nu - 1 {
            let (alo, ahi) = (p.lon.lo[i], p.lon.hi[i]);
            let outside = zhi < -margin
                || zlo > map.dims[2] + margin
                || (0..2).any(|c| {
                    let prods = [
                        alo[c] * blo[0],
                        alo[c] * bhi[0],
                        ahi[c] * blo[0],
                        ahi[c] * bhi[0],
                    ];
                    let lo =
                        map.center[c] + prods.iter().copied().fold(f64::INFINITY, f64::min) * s;
                    let hi =
                        map.center[c] + prods.iter().copied().fold(f64::NEG_INFINITY, f64::max) * s;
                    hi < -margin || lo > map.dims[c] + margin
                });
            if outside {
                cells.push(None);
                continue;
            }
            let a = p.lon.max_abs(i, 0).max(p.lon.max_abs(i, 1));
            let level_u = level_for(
                |l| s * b0 * p.lon.width(i, l, 0).max(p.lon.width(i, l, 1)),
                opts,
            );
            let level_v = level_for(
                |l| s * (a * p.lat.width(j, l, 0)).max(p.lat.width(j, l, 1)),
                opts,
            );
            cells.push(Some(Cell { level_u, level_v }));
        }
    }
    fit_budget(&mut cells, opts);

    let mut depth_u = vec![0u32; nu - 1];
    let mut depth_v = vec![0u32; nv - 1];
    for j in 0..nv - 1 {
        for i in 0..nu - 1 {
            if let Some(c) = &cells[j * (nu - 1) + i] {
                depth_u[i] = depth_u[i].max(c.level_u);
                depth_v[j] = depth_v[j].max(c.level_v);
            }
        }
    }
    let lon = genome.longitude();
    let lat = genome.latitude();
    let fine_u: Vec<Vec<[f64; 2]>> = (0..nu - 1)
        .map(|i| p.lon.refined(i, depth_u[i], &lon, Surface::theta))
        .collect();
    let fine_v: Vec<Vec<[f64; 2]>> = (0..nv - 1)
        .map(|j| p.lat.refined(j, depth_v[j], &lat, Surface::varphi))
        .collect();

    for j in 0..nv - 1 {
        for i in 0..nu - 1 {
            let Some(cell) = &cells[j * (nu - 1) + i] else {
                continue;
            };
            let stride_u = 1usize << (depth_u[i] - cell.level_u);
            let stride_v = 1usize << (depth_v[j] - cell.level_v);
            // A shared edge is left to the neighbour that starts on it.
            let mut take_u = (1usize << cell.level_u) + 1;
            if i + 2 < nu && cells[j * (nu - 1) + i + 1].is_some() {
                take_u -= 1;
            }
            let mut take_v = (1usize << cell.level_v) + 1;
            if j + 2 < nv && cells[(j + 1) * (nu - 1) + i].is_some() {
                take_v -= 1;
            }
            for b in fine_v[j].iter().step_by(stride_v).take(take_v) {
                let z = map.center[2] + b[1] * s;
                for a in fine_u[i].iter().step_by(stride_u).take(take_u) {
                    marker.mark([
                        map.center[0] + a[0] * b[0] * s,
                        map.center[1] + a[1] * b[0] * s,
                        z,
                    ]);
                }
            }
        }
    }
}

fn rasterize_generic(
    sample: &SurfaceSample,
    map: &GridMap,
    opts: &RasterOptions,
    marker: &mut Marker,
) {
    let (nu, nv) = (sample.resolution.theta, sample.resolution.phi);
    let base: Vec<[f64; 3]> = sample.points().iter().map(|&p| map.apply(p)).collect();
    let cells = plan_cells(&base, nu, nv, map, opts);
    for j in 0..nv - 1 {
        for i in 0..nu - 1 {
            let Some(cell) = &cells[j * (nu - 1) + i] else {
                continue;
            };
            if cell.level_u == 0 && cell.level_v == 0 {
                for p in [
                    base[j * nu + i],
                    base[j * nu + i + 1],
                    base[(j + 1) * nu + i],
                    base[(j + 1) * nu + i + 1],
                ] {
                    marker.mark(p);
                }
                continue;
            }
            for kv in 0..=(1usize << cell.level_v) {
                let v = sub_lattice(j, nv, kv, cell.level_v);
                for ku in 0..=(1usize << cell.level_u) {
                    let u = sub_lattice(i, nu, ku, cell.level_u);
                    marker.mark(map.apply(sample.surface.point(u, v)));
                }
            }
        }
    }
}

/// Sets every voxel not reachable from the grid boundary through empty
/// voxels (6-connectivity), turning closed shells into solids.
///
/// Works on maximal runs of empty voxels along x: two runs in rows adjacent
/// in y or z are face-connected exactly when their x ranges overlap.
pub fn fill_interior(grid: &VoxelGrid) -> VoxelGrid {
    let [nx, ny, nz] = grid.dims;
    // runs[row_start[r]..row_start[r + 1]] are the empty runs of row r = y + ny * z.
    let mut runs: Vec<(usize, usize)> = Vec::new();
    let mut row_start = Vec::with_capacity(ny * nz + 1);
    for row in grid.occupancy.chunks_exact(nx) {
        row_start.push(runs.len());
        let mut x = 0;
        while x < nx {
            if row[x] {
                x += 1;
                continue;
            }
            let start = x;
            while x < nx && !row[x] {
                x += 1;
            }
            runs.push((start, x));
        }
    }
    row_start.push(runs.len());

    let outside = runs.len();
    let mut parent: Vec<usize> = (0..=outside).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    fn union(parent: &mut [usize], a: usize, b: usize) {
        let (ra, rb) = (find(parent, a), find(parent, b));
        if ra != rb {
            parent[ra.min(rb)] = ra.max(rb);
        }
    }
    let link_rows = |parent: &mut Vec<usize>, a: usize, b: usize| {
        let (mut i, mut j) = (row_start[a], row_start[b]);
        while i < row_start[a + 1] && j < row_start[b + 1] {
            let (ra, rb) = (runs[i], runs[j]);
            if ra.0 < rb.1 && rb.0 < ra.1 {
                union(parent, i, j);
            }
            if ra.1 < rb.1 {
                i += 1;
            } else {
                j += 1;
            }
        }
    };
    for z in 0..nz {
        for y in 0..ny {
            let r = y + ny * z;
            let border_row = y == 0 || z == 0 || y == ny - 1 || z == nz - 1;
            for i in row_start[r]..row_start[r + 1] {
                let (x0, x1) = runs[i];
                if border_row || x0 == 0 || x1 == nx {
                    union(&mut parent, i, outside);
                }
            }
            if y + 1 < ny {
                link_rows(&mut parent, r, r + 1);
            }
            if z + 1 < nz {
                link_rows(&mut parent, r, r + ny);
            }
        }
    }

    let mut out = grid.clone();
    let outside_root = find(&mut parent, outside);
    for r in 0..ny * nz {
        for i in row_start[r]..row_start[r + 1] {
            if find(&mut parent, i) != outside_root {
                let (x0, x1) = runs[i];
                out.occupancy[r * nx + x0..r * nx + x1].fill(true);
            }
        }
    }
    out
}

/// Width of the empty tube through the platform.
pub const PLATFORM_INNER: usize = 10;
/// Width of the tube plus its two-voxel wall.
pub const PLATFORM_OUTER: usize = 14;

/// Adds the square mounting ring (two voxels thick around a 10 x 10 hollow
/// tube) through every z-layer, centred in x and y.
pub fn add_platform(grid: &VoxelGrid) -> Result<VoxelGrid, VoxelError> {
    let [nx, ny, nz] = grid.dims;
    if nx < PLATFORM_OUTER || ny < PLATFORM_OUTER {
        return Err(VoxelError::GridTooSmall(nx, ny));
    }
    let outer_x = (nx - PLATFORM_OUTER) / 2;
    let outer_y = (ny - PLATFORM_OUTER) / 2;
    let wall = (PLATFORM_OUTER - PLATFORM_INNER) / 2;
    let mut out = grid.clone();
    for z in 0..nz {
        for dy in 0..PLATFORM_OUTER {
            for dx in 0..PLATFORM_OUTER {
                let in_tube = (wall..wall + PLATFORM_INNER).contains(&dx)
                    && (wall..wall + PLATFORM_INNER).contains(&dy);
                out.set(outer_x + dx, outer_y + dy, z, !in_tube);
            }
        }
    }
    Ok(out)
}

/// Samples, rasterizes and (if the workspace asks for it) fills a genome.
/// The platform is not applied.
pub fn render_shape(
    genome: &Genome,
    ws: &Workspace,
    opts: &RenderOptions,
) -> Result<VoxelGrid, VoxelError> {
    let sample = sample_surface(genome, opts.resolution, opts.twist)?;
    let grid = rasterize(&sample, ws, &opts.raster)?;
    Ok(if ws.fill_interior {
        fill_interior(&grid)
    } else {
        grid
    })
}

/// [`render_shape`] followed by the platform when the workspace enables it.
pub fn render_grid(
    genome: &Genome,
    ws: &Workspace,
    opts: &RenderOptions,
) -> Result<VoxelGrid, VoxelError> {
    let grid = render_shape(genome, ws, opts)?;
    if ws.platform_enabled {
        add_platform(&grid)
    } else {
        Ok(grid)
    }
}

/// Flat binary encoding of voxel grids.
///
/// ```text
/// offset  size  field
///      0     8  magic "SSVOXEL\0"
///      8     4  format version, u32 LE (1)
///     12     4  reserved, zero
///     16    12  nx, ny, nz as u32 LE
///     28    24  voxel size x, y, z in mm as f64 LE
///     52     *  occupancy bits, x fastest then y then z, LSB first in each byte
/// ```
pub mod format {
    use super::{VoxelError, VoxelGrid};

    pub const MAGIC: &[u8; 8] = b"SSVOXEL\0";
    pub const VERSION: u32 = 1;
    pub const HEADER_LEN: usize = 52;

    pub fn encode(grid: &VoxelGrid) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + grid.len().div_ceil(8));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&0u32.to_le_bytes());
        for d in grid.dims() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for s in grid.voxel_size() {
            out.extend_from_slice(&s.to_le_bytes());
        }
        for chunk in grid.occupancy().chunks(8) {
            let byte = chunk
                .iter()
                .enumerate()
                .fold(0u8, |acc, (bit, &v)| acc | ((v as u8) << bit));
            out.push(byte);
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<VoxelGrid, VoxelError> {
        let bad = |msg: &str| VoxelError::InvalidGrid(msg.to_string());
        if bytes.len() < HEADER_LEN {
            return Err(bad("truncated header"));
        }
        if &bytes[..8] != MAGIC {
            return Err(bad("bad magic"));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        if u32_at(8) != VERSION {
            return Err(bad("unsupported version"));
        }
        let dims = [
            u32_at(16) as usize,
            u32_at(20) as usize,
            u32_at(24) as usize,
        ];
        let size = [f64_at(28), f64_at(36), f64_at(44)];
        let mut grid = VoxelGrid::new(dims, size)?;
        let payload = &bytes[HEADER_LEN..];
        if payload.len() != grid.len().div_ceil(8) {
            return Err(bad("occupancy length does not match dims"));
        }
        for (i, cell) in grid.occupancy.iter_mut().enumerate() {
            *cell = payload[i / 8] >> (i % 8) & 1 == 1;
        }
        Ok(grid)
    }
}
