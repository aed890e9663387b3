//! Voxel and mesh checks against independent references: an analytic
//! inside test for spherical products, hand-derived smoothing results and
//! STL digests confirmed with numpy-stl and trimesh (`tests/oracle/stl_check.py`).

use proptest::prelude::*;
use sha2::{Digest, Sha256};
use supershape_core::targets::builtin;
use supershape_core::*;

fn basic(name: &str) -> BasicGenome {
    match builtin(name).unwrap().genome {
        Genome::Basic(g) => g,
        other => panic!("{name} is {other:?}"),
    }
}

/// Exact membership for the solid bounded by a basic supershape. The surface
/// is star-shaped about the origin: the xy direction fixes theta, and
/// dividing the xy radius by r1(theta) leaves a point on the latitude curve.
fn inside(g: &BasicGenome, p: [f64; 3]) -> bool {
    let theta = p[1].atan2(p[0]);
    let r1 = superformula_r(theta, &g.longitude());
    let rho = p[0].hypot(p[1]);
    if r1 <= 0.0 {
        return rho == 0.0 && p[2] == 0.0;
    }
    let q = rho / r1;
    let phi = p[2].atan2(q);
    q.hypot(p[2]) <= superformula_r(phi, &g.latitude())
}

fn solid(dims: [usize; 3], fill: bool) -> Workspace {
    Workspace {
        physical_size: dims.map(|d| d as f64),
        grid_dims: dims,
        platform_enabled: false,
        fill_interior: fill,
    }
}

#[test]
fn unit_sphere_shell_sits_on_radius_25() {
    let sphere = Genome::Basic(BasicGenome::new([0.0, 1.0, 1.0, 1.0, 0.0, 1.0, 1.0, 1.0]));
    let grid = render_shape(&sphere, &solid([50; 3], false), &RenderOptions::target()).unwrap();
    let tol = 1.5 * 3f64.sqrt();
    for [x, y, z] in grid.iter_set() {
        let d = [x, y, z].map(|c| c as f64 + 0.5 - 25.0);
        let r = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        assert!((r - 25.0).abs() <= tol, "voxel {:?} at radius {r}", [x, y, z]);
    }
    // Shell, not solid: the centre stays empty.
    assert!(!grid.get(25, 25, 25));
    assert!(grid.count() > 4000);
}

#[test]
fn targets_agree_with_analytic_solid() {
    for name in ["cube", "star", "heart"] {
        let g = basic(name);
        let genome = Genome::Basic(g);
        let sample = sample_surface(&genome, Resolution::new(512, 256), TwistParam::C2).unwrap();
        let reach = sample
            .points()
            .iter()
            .flat_map(|p| p.iter().map(|c| c.abs()))
            .fold(0.0, f64::max);
        let s = 22.0 / reach;
        let mut opts = RenderOptions::target();
        opts.raster.placement = Placement::Scaled { voxels_per_unit: s };
        let grid = render_shape(&genome, &solid([50; 3], true), &opts).unwrap();
        let model = |v: [f64; 3]| v.map(|c| (c - 25.0) / s);

        let mut interior = 0;
        for z in 0..50 {
            for y in 0..50 {
                for x in 0..50 {
                    let c = [x, y, z].map(|c| c as f64);
                    let corners_in = (0..8).all(|k| {
                        inside(&g, model([c[0] + (k & 1) as f64, c[1] + (k >> 1 & 1) as f64, c[2] + (k >> 2) as f64]))
                    });
                    if corners_in {
                        interior += 1;
                        assert!(grid.get(x, y, z), "{name}: interior voxel {:?} unset", [x, y, z]);
                    }
                }
            }
        }
        assert!(interior > 1000, "{name}: {interior}");

        let offsets = [-1.0, -0.5, 0.0, 0.5, 1.0];
        for [x, y, z] in grid.iter_set() {
            let c = [x, y, z].map(|c| c as f64 + 0.5);
            let near = offsets.iter().any(|&dx| {
                offsets.iter().any(|&dy| {
                    offsets
                        .iter()
                        .any(|&dz| inside(&g, model([c[0] + dx, c[1] + dy, c[2] + dz])))
                })
            });
            assert!(near, "{name}: voxel {:?} is more than a voxel from the solid", [x, y, z]);
        }
    }
}

#[test]
fn star_seed_in_turbine_workspace() {
    let g = builtin("vawt_star_seed").unwrap().genome;
    let grid = render_shape(&g, &Workspace::vawt_default(), &RenderOptions::vawt_for(&g)).unwrap();
    assert_eq!(grid.count(), 32552);
    assert_eq!(grid.active_fraction(), 0.032552);
    // A prism: the profile is confined to |z - 50| <= 25 and repeats in z.
    let layer = |z: usize| -> Vec<bool> {
        (0..100 * 100).map(|i| grid.get(i % 100, i / 100, z)).collect()
    };
    assert!((0..24).all(|z| layer(z).iter().all(|&v| !v)));
    assert_eq!(layer(40), layer(60));
}

fn grid_with(dims: [usize; 3], size: [f64; 3], set: &[[usize; 3]]) -> VoxelGrid {
    let mut g = VoxelGrid::new(dims, size).unwrap();
    for &[x, y, z] in set {
        g.set(x, y, z, true);
    }
    g
}

/// Exposed faces counted directly from occupancy.
fn exposed_faces(g: &VoxelGrid) -> usize {
    let mut n = 0;
    for [x, y, z] in g.iter_set() {
        let p = [x, y, z].map(|c| c as i64);
        for axis in 0..3 {
            for d in [-1, 1] {
                let mut q = p;
                q[axis] += d;
                n += !g.get_signed(q[0], q[1], q[2]) as usize;
            }
        }
    }
    n
}

#[test]
fn two_voxel_bar() {
    let bar = grid_with([2, 1, 1], [0.5, 0.5, 0.7], &[[0, 0, 0], [1, 0, 0]]);
    assert_eq!(exposed_faces(&bar), 10);
    let m = extract_mesh(&bar).unwrap();
    assert_eq!(m.triangles.len(), 20);
    assert_eq!(m.vertices.len(), 12);
    assert!(m.edge_audit().is_closed_manifold());
    let (lo, hi) = m.bounding_box().unwrap();
    assert_eq!((lo, hi), ([0.0; 3], [1.0, 0.5, 0.7]));
}

#[test]
fn hollow_shell_has_two_closed_components() {
    let mut set = Vec::new();
    for z in 1..6 {
        for y in 1..6 {
            for x in 1..6 {
                let wall = [x, y, z].iter().any(|&c| c == 1 || c == 5);
                if wall {
                    set.push([x, y, z]);
                }
            }
        }
    }
    let shell = grid_with([7; 3], [1.0; 3], &set);
    let m = extract_mesh(&shell).unwrap();
    assert!(m.edge_audit().is_closed_manifold());
    assert_eq!(m.component_count(), 2);
    assert_eq!(m.triangles.len(), 2 * (6 * 25 + 6 * 9));
}

fn unit_cube() -> TriMesh {
    extract_mesh(&grid_with([1; 3], [1.0; 3], &[[0, 0, 0]])).unwrap()
}

#[test]
fn one_smoothing_pass_on_unit_cube() {
    // Each face is split along the diagonal from its lowest to its highest
    // corner, so (0,0,0) and (1,1,1) have six neighbours and the rest four.
    let want = |v: [f64; 3]| -> [f64; 3] {
        match v.map(|c| c as u8) {
            [0, 0, 0] | [1, 1, 1] => [0.5, 0.5, 0.5],
            [1, 0, 0] => [0.75, 0.5, 0.5],
            [0, 1, 0] => [0.5, 0.75, 0.5],
            [0, 0, 1] => [0.5, 0.5, 0.75],
            [0, 1, 1] => [0.25, 0.5, 0.5],
            [1, 0, 1] => [0.5, 0.25, 0.5],
            [1, 1, 0] => [0.5, 0.5, 0.25],
            _ => unreachable!(),
        }
    };
    let cube = unit_cube();
    let smoothed = laplacian_smooth(&cube, 1, 1.0);
    for (before, after) in cube.vertices.iter().zip(&smoothed.vertices) {
        assert_eq!(*after, want(*before), "vertex {before:?}");
    }
}

#[test]
fn repeated_smoothing_contracts() {
    let diagonal = |m: &TriMesh| {
        let (lo, hi) = m.bounding_box().unwrap();
        ((hi[0] - lo[0]).powi(2) + (hi[1] - lo[1]).powi(2) + (hi[2] - lo[2]).powi(2)).sqrt()
    };
    let mut m = extract_mesh(&grid_with([3, 2, 2], [1.0; 3], &[[0, 0, 0], [1, 0, 0], [2, 0, 0], [2, 1, 0], [2, 1, 1]])).unwrap();
    let mut last = diagonal(&m);
    for _ in 0..1000 {
        m = laplacian_smooth(&m, 1, 1.0);
        let d = diagonal(&m);
        if last < 1e-12 {
            break;
        }
        assert!(d < last, "{d} !< {last}");
        last = d;
    }
    assert!(last < 1e-6, "{last}");
}

fn sha256(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[test]
fn stl_digests() {
    let cube = export_stl(&unit_cube(), StlMode::Binary).unwrap();
    assert_eq!(cube.len(), 684);
    assert_eq!(
        sha256(&cube),
        "ecad163d326d63a55367f295861ef525aed648453a69edca3d0ca16d973069da"
    );
    let bar = grid_with([2, 1, 1], [0.5, 0.5, 0.7], &[[0, 0, 0], [1, 0, 0]]);
    let bar = export_stl(&extract_mesh(&bar).unwrap(), StlMode::Binary).unwrap();
    assert_eq!(
        sha256(&bar),
        "b06db9f0efa925afe9d3c2dd998e98ed65f9116debdcdeb06abdabaa8ac51917"
    );
    let empty = TriMesh {
        vertices: vec![],
        triangles: vec![],
    };
    let bytes = export_stl(&empty, StlMode::Binary).unwrap();
    assert_eq!(bytes.len(), 84);
    assert_eq!(&bytes[80..], &[0; 4]);
}

#[test]
fn ascii_stl_grammar() {
    let text = String::from_utf8(export_stl(&unit_cube(), StlMode::Ascii).unwrap()).unwrap();
    let lines: Vec<&str> = text.lines().map(str::trim).collect();
    assert!(lines[0].starts_with("solid"));
    assert!(lines.last().unwrap().starts_with("endsolid"));
    assert_eq!(lines.iter().filter(|l| l.starts_with("facet normal")).count(), 12);
    assert_eq!(lines.iter().filter(|l| l.starts_with("vertex")).count(), 36);
    assert_eq!(lines.len(), 2 + 12 * 7);
}

fn random_grid() -> impl Strategy<Value = VoxelGrid> {
    (1usize..6, 1usize..6, 1usize..6)
        .prop_flat_map(|(x, y, z)| {
            prop::collection::vec(any::<bool>(), x * y * z).prop_map(move |bits| {
                let mut g = VoxelGrid::new([x, y, z], [1.0; 3]).unwrap();
                for (i, b) in bits.into_iter().enumerate() {
                    g.set(i % x, i / x % y, i / (x * y), b);
                }
                g
            })
        })
}

fn random_pair() -> impl Strategy<Value = (VoxelGrid, VoxelGrid)> {
    random_grid().prop_flat_map(|a| {
        let [x, y, z] = a.dims();
        prop::collection::vec(any::<bool>(), x * y * z).prop_map(move |bits| {
            let mut b = a.clone();
            for (i, v) in bits.into_iter().enumerate() {
                b.set(i % x, i / x % y, i / (x * y), v);
            }
            (a.clone(), b)
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 100, ..ProptestConfig::default() })]

    #[test]
    fn fill_is_idempotent_and_monotone(g in random_grid()) {
        let once = fill_interior(&g);
        prop_assert_eq!(&fill_interior(&once), &once);
        for [x, y, z] in g.iter_set() {
            prop_assert!(once.get(x, y, z));
        }
    }

    #[test]
    fn match_fraction_is_hamming((a, b) in random_pair()) {
        let n = a.dims().iter().product::<usize>() as f64;
        let mut differ = 0;
        for z in 0..a.dims()[2] {
            for y in 0..a.dims()[1] {
                for x in 0..a.dims()[0] {
                    differ += (a.get(x, y, z) != b.get(x, y, z)) as usize;
                }
            }
        }
        let m = match_fraction(&a, &b).unwrap();
        prop_assert_eq!(m, match_fraction(&b, &a).unwrap());
        prop_assert!((m - (1.0 - differ as f64 / n)).abs() < 1e-15);
    }

    #[test]
    fn platform_postconditions(bits in prop::collection::vec(any::<bool>(), 16 * 16 * 3)) {
        let mut g = VoxelGrid::new([16, 16, 3], [1.0; 3]).unwrap();
        for (i, b) in bits.iter().enumerate() {
            g.set(i % 16, i / 16 % 16, i / 256, *b);
        }
        let p = add_platform(&g).unwrap();
        for z in 0..3 {
            for y in 0..16 {
                for x in 0..16 {
                    // Ring spans 1..15, tube 3..13 on a 16-wide grid.
                    let ring = (1..15).contains(&x) && (1..15).contains(&y);
                    let tube = (3..13).contains(&x) && (3..13).contains(&y);
                    let want = if tube { false } else if ring { true } else { g.get(x, y, z) };
                    prop_assert_eq!(p.get(x, y, z), want);
                }
            }
        }
        prop_assert_eq!(&add_platform(&p).unwrap(), &p);
    }
}
