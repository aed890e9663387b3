//! Superformula evaluation: the planar radius function, its spherical product
//! in 3D, and the extended toroidal/twisted surface.
//!
//! Every function here is total. Degenerate parameter combinations (zero
//! exponents, zero bases, overflow) are resolved by a fixed policy so that any
//! finite genome yields finite coordinates.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Lower clamp on `|n1|` before the outer exponent `-1/n1` is applied.
pub const N1_EPSILON: f64 = 1e-9;
/// Lower clamp on the bracketed base before exponentiation.
pub const BASE_EPSILON: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("sampling resolution {0}x{1} is below the 8x8 minimum")]
    ResolutionTooSmall(usize, usize),
    #[error("genome must have 8 or 16 genes, got {0}")]
    BadGeneCount(usize),
    #[error("gene {index} is not finite")]
    NonFiniteGene { index: usize },
    #[error("r0 must be positive, got {0}")]
    NonPositiveSize(f64),
}

/// Parameters of one planar superformula.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BasicParams {
    pub a: f64,
    pub b: f64,
    pub m: f64,
    pub n1: f64,
    pub n2: f64,
    pub n3: f64,
}

impl BasicParams {
    /// Parameters with `a = b = 1`, as used everywhere in evolution.
    pub fn new(m: f64, n1: f64, n2: f64, n3: f64) -> Self {
        Self {
            a: 1.0,
            b: 1.0,
            m,
            n1,
            n2,
            n3,
        }
    }
}

/// `x^e` for `x >= 0` with `0^0 = 1`.
#[inline]
fn pow_nonneg(x: f64, e: f64) -> f64 {
    if e == 0.0 {
        1.0
    } else {
        x.powf(e)
    }
}

/// Radius of the superformula at angle `phi`.
///
/// The result is always finite and non-negative.
pub fn superformula_r(phi: f64, p: &BasicParams) -> f64 {
    let angle = p.m * phi / 4.0;
    let cos_term = (angle.cos() / p.a).abs();
    let sin_term = (angle.sin() / p.b).abs();
    // f64::max drops NaN, so a NaN base also lands on the clamp.
    let base = (pow_nonneg(cos_term, p.n2) + pow_nonneg(sin_term, p.n3)).max(BASE_EPSILON);
    let n1 = if p.n1.abs() < N1_EPSILON {
        if p.n1 < 0.0 {
            -N1_EPSILON
        } else {
            N1_EPSILON
        }
    } else {
        p.n1
    };
    let r = base.powf(-1.0 / n1);
    if r.is_finite() {
        r
    } else {
        0.0
    }
}

/// Point on the spherical product of two superformulas.
///
/// `theta` is longitude in `[-pi, pi]`, `varphi` latitude in `[-pi/2, pi/2]`.
pub fn spherical_product(theta: f64, varphi: f64, p1: &BasicParams, p2: &BasicParams) -> [f64; 3] {
    let r1 = superformula_r(theta, p1);
    let r2 = superformula_r(varphi, p2);
    let ring = r2 * varphi.cos();
    [
        r1 * theta.cos() * ring,
        r1 * theta.sin() * ring,
        r2 * varphi.sin(),
    ]
}

/// Signed power `sign(b) * |b|^e`, with non-finite results mapped to 0.
#[inline]
fn signed_pow(base: f64, exp: f64) -> f64 {
    let v = if base < 0.0 {
        -(-base).powf(exp)
    } else {
        base.powf(exp)
    };
    if v.is_finite() {
        v
    } else {
        0.0
    }
}

/// The eight genes shared by both genome kinds: two superformula octets with
/// `a = b = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "BasicFields", into = "BasicFields")]
pub struct BasicGenome {
    genes: [f64; 8],
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BasicFields {
    m1: f64,
    n11: f64,
    n12: f64,
    n13: f64,
    m2: f64,
    n21: f64,
    n22: f64,
    n23: f64,
}

impl From<BasicFields> for BasicGenome {
    fn from(f: BasicFields) -> Self {
        Self::new([f.m1, f.n11, f.n12, f.n13, f.m2, f.n21, f.n22, f.n23])
    }
}

impl From<BasicGenome> for BasicFields {
    fn from(g: BasicGenome) -> Self {
        let [m1, n11, n12, n13, m2, n21, n22, n23] = g.genes;
        Self {
            m1,
            n11,
            n12,
            n13,
            m2,
            n21,
            n22,
            n23,
        }
    }
}

impl BasicGenome {
    /// Genes in order `m1, n11, n12, n13, m2, n21, n22, n23`.
    pub const fn new(genes: [f64; 8]) -> Self {
        Self { genes }
    }

    pub fn genes(&self) -> &[f64; 8] {
        &self.genes
    }

    /// Longitude (`theta`) parameters.
    pub fn longitude(&self) -> BasicParams {
        let g = &self.genes;
        BasicParams::new(g[0], g[1], g[2], g[3])
    }

    /// Latitude (`varphi`) parameters.
    pub fn latitude(&self) -> BasicParams {
        let g = &self.genes;
        BasicParams::new(g[4], g[5], g[6], g[7])
    }

    pub fn point(&self, theta: f64, varphi: f64) -> [f64; 3] {
        spherical_product(theta, varphi, &self.longitude(), &self.latitude())
    }
}

/// Which parameter drives the `phi2` twist line of the extended surface.
///
/// `C2` is the canonical reading. `C3` is a non-canonical alternative for
/// experimenting with parameter sets that give `c3` a value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TwistParam {
    #[default]
    C2,
    C3,
}

/// Sixteen genes: the basic octet followed by
/// `t1, t2, d1, d2, c1, c2, c3, r0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "ExtendedFields", into = "ExtendedFields")]
pub struct ExtendedGenome {
    genes: [f64; 16],
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExtendedFields {
    m1: f64,
    n11: f64,
    n12: f64,
    n13: f64,
    m2: f64,
    n21: f64,
    n22: f64,
    n23: f64,
    t1: f64,
    t2: f64,
    d1: f64,
    d2: f64,
    c1: f64,
    c2: f64,
    c3: f64,
    r0: f64,
}

impl From<ExtendedFields> for ExtendedGenome {
    fn from(f: ExtendedFields) -> Self {
        Self::new([
            f.m1, f.n11, f.n12, f.n13, f.m2, f.n21, f.n22, f.n23, f.t1, f.t2, f.d1, f.d2, f.c1,
            f.c2, f.c3, f.r0,
        ])
    }
}

impl From<ExtendedGenome> for ExtendedFields {
    fn from(g: ExtendedGenome) -> Self {
        let [m1, n11, n12, n13, m2, n21, n22, n23, t1, t2, d1, d2, c1, c2, c3, r0] = g.genes;
        Self {
            m1,
            n11,
            n12,
            n13,
            m2,
            n21,
            n22,
            n23,
            t1,
            t2,
            d1,
            d2,
            c1,
            c2,
            c3,
            r0,
        }
    }
}

impl ExtendedGenome {
    pub const fn new(genes: [f64; 16]) -> Self {
        Self { genes }
    }

    pub fn genes(&self) -> &[f64; 16] {
        &self.genes
    }

    pub fn r0(&self) -> f64 {
        self.genes[15]
    }
}

/// Evaluates the extended surface at `(u, v)` in `[0, 1]^2`.
///
/// The statements run in this order: the twist offset, twist, and
/// the two power terms read `u` before it is remapped to an angle.
pub fn extended_point(u: f64, v: f64, g: &ExtendedGenome, twist: TwistParam) -> [f64; 3] {
    let [m1, n11, n12, n13, m2, n21, n22, n23, t1, t2, d1, d2, c1, c2, c3, r0] = g.genes;
    let mut theta = u;
    let mut phi = v;

    let t2c = (r0 * signed_pow(c2, d2) * t2 * c1) / 2.0;
    let t2 = t2 * c1 * theta;
    let d1 = signed_pow(theta * c1, d1);
    let d2 = signed_pow(theta * c2, d2);
    theta = (((PI * 2.0) * theta) - PI) * c1;
    phi = ((PI * phi) - FRAC_PI_2) * c2;
    let twist_rate = match twist {
        TwistParam::C2 => c2,
        TwistParam::C3 => c3,
    };
    let phi2 = phi + (twist_rate * theta);
    let r1 = superformula_r(theta, &BasicParams::new(m1, n11, n12, n13));
    let r2 = superformula_r(phi, &BasicParams::new(m2, n21, n22, n23));

    let radial = t1 + d1 * r2 * phi2.cos();
    let x = r0 * r1 * radial * phi.cos();
    let y = r0 * r1 * radial * phi.sin();
    let z = r0 * d2 * (r2 * phi2.sin() - t2) + t2c;
    [finite_or_zero(x), finite_or_zero(y), finite_or_zero(z)]
}

#[inline]
fn finite_or_zero(v: f64) -> f64 {
    if v.is_finite() {
        v
    } else {
        0.0
    }
}

/// A genome of either kind.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Genome {
    Basic(BasicGenome),
    Extended(ExtendedGenome),
}

impl Genome {
    /// Builds a genome from a flat gene vector of length 8 or 16.
    pub fn from_genes(genes: &[f64]) -> Result<Self, GeometryError> {
        let genome = match genes.len() {
            8 => Genome::Basic(BasicGenome::new(genes.try_into().expect("length checked"))),
            16 => Genome::Extended(ExtendedGenome::new(
                genes.try_into().expect("length checked"),
            )),
            n => return Err(GeometryError::BadGeneCount(n)),
        };
        genome.validate()?;
        Ok(genome)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if let Some(index) = self.genes().iter().position(|g| !g.is_finite()) {
            return Err(GeometryError::NonFiniteGene { index });
        }
        if let Genome::Extended(e) = self {
            if e.r0() <= 0.0 {
                return Err(GeometryError::NonPositiveSize(e.r0()));
            }
        }
        Ok(())
    }

    pub fn genes(&self) -> &[f64] {
        match self {
            Genome::Basic(g) => &g.genes,
            Genome::Extended(g) => &g.genes,
        }
    }

    pub fn genes_mut(&mut self) -> &mut [f64] {
        match self {
            Genome::Basic(g) => &mut g.genes,
            Genome::Extended(g) => &mut g.genes,
        }
    }

    pub fn kind(&self) -> GenomeKind {
        match self {
            Genome::Basic(_) => GenomeKind::Basic,
            Genome::Extended(_) => GenomeKind::Extended,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenomeKind {
    Basic,
    Extended,
}

impl GenomeKind {
    pub fn gene_count(self) -> usize {
        match self {
            GenomeKind::Basic => 8,
            GenomeKind::Extended => 16,
        }
    }
}

/// A parametric surface ready for sampling over the unit square.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Surface {
    /// Spherical product; `u` maps to longitude, `v` to latitude.
    Basic(BasicGenome),
    Extended {
        genome: ExtendedGenome,
        twist: TwistParam,
    },
}

impl Surface {
    pub fn new(genome: &Genome, twist: TwistParam) -> Self {
        match *genome {
            Genome::Basic(g) => Surface::Basic(g),
            Genome::Extended(genome) => Surface::Extended { genome, twist },
        }
    }

    /// Longitude for lattice coordinate `u` in `[0, 1]`.
    #[inline]
    pub fn theta(u: f64) -> f64 {
        -PI + 2.0 * PI * u
    }

    /// Latitude for lattice coordinate `v` in `[0, 1]`.
    #[inline]
    pub fn varphi(v: f64) -> f64 {
        -FRAC_PI_2 + PI * v
    }

    /// Evaluates the surface at unit-square coordinates.
    pub fn point(&self, u: f64, v: f64) -> [f64; 3] {
        match self {
            Surface::Basic(g) => g.point(Self::theta(u), Self::varphi(v)),
            Surface::Extended { genome, twist } => extended_point(u, v, genome, *twist),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Resolution {
    /// Samples along `theta` (basic) or `u` (extended).
    pub theta: usize,
    /// Samples along `varphi` (basic) or `v` (extended).
    pub phi: usize,
}

impl Resolution {
    pub const fn new(theta: usize, phi: usize) -> Self {
        Self { theta, phi }
    }
}

impl Default for Resolution {
    fn default() -> Self {
        Self::new(512, 256)
    }
}

/// Points sampled on a uniform lattice over the parameter domain.
///
/// Lattice neighbours in `(i, j)` are neighbours on the surface.
#[derive(Debug, Clone)]
pub struct SurfaceSample {
    pub surface: Surface,
    pub resolution: Resolution,
    points: Vec<[f64; 3]>,
}

impl SurfaceSample {
    /// Point at longitude index `i` and latitude index `j`.
    pub fn point(&self, i: usize, j: usize) -> [f64; 3] {
        self.points[j * self.resolution.theta + i]
    }

    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    /// Lattice coordinate of index `i` out of `n` samples.
    #[inline]
    pub fn lattice(i: usize, n: usize) -> f64 {
        i as f64 / (n - 1) as f64
    }
}

pub fn sample_surface(
    genome: &Genome,
    res: Resolution,
    twist: TwistParam,
) -> Result<SurfaceSample, GeometryError> {
    if res.theta < 8 || res.phi < 8 {
        return Err(GeometryError::ResolutionTooSmall(res.theta, res.phi));
    }
    let surface = Surface::new(genome, twist);
    let mut points = Vec::with_capacity(res.theta * res.phi);
    if let Surface::Basic(g) = surface {
        // Same arithmetic as `spherical_product`, one radius per row/column.
        let (lon, lat) = (g.longitude(), g.latitude());
        let columns: Vec<(f64, f64)> = (0..res.theta)
            .map(|i| {
                let theta = Surface::theta(SurfaceSample::lattice(i, res.theta));
                let r1 = superformula_r(theta, &lon);
                (r1 * theta.cos(), r1 * theta.sin())
            })
            .collect();
        for j in 0..res.phi {
            let varphi = Surface::varphi(SurfaceSample::lattice(j, res.phi));
            let r2 = superformula_r(varphi, &lat);
            let ring = r2 * varphi.cos();
            let z = r2 * varphi.sin();
            points.extend(columns.iter().map(|&(c, s)| [c * ring, s * ring, z]));
        }
        return Ok(SurfaceSample {
            surface,
            resolution: res,
            points,
        });
    }
    for j in 0..res.phi {
        let v = SurfaceSample::lattice(j, res.phi);
        for i in 0..res.theta {
            let u = SurfaceSample::lattice(i, res.theta);
            points.push(surface.point(u, v));
        }
    }
    Ok(SurfaceSample {
        surface,
        resolution: res,
        points,
    })
}
