//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Genomes cross the boundary as JSON text, either a tagged genome object
//! or a plain array of 8 or 16 genes.

use supershape_core::evolve::{mutate, stream, GAConfig};
use supershape_core::targets::{builtin, BUILTIN_NAMES};
use supershape_core::{
    export_stl, extract_mesh, laplacian_smooth, match_fraction, render_grid, Genome,
    RenderOptions, StlMode, TargetMatch, Workspace,
};
use wasm_bindgen::prelude::*;

/// Edge length of the grid used for target scores.
pub const TARGET_DIMS: usize = 50;

pub fn parse_genome(text: &str) -> Result<Genome, String> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| e.to_string())?;
    let genome = if value.is_array() {
        let genes: Vec<f64> = serde_json::from_value(value).map_err(|e| e.to_string())?;
        Genome::from_genes(&genes).map_err(|e| e.to_string())?
    } else {
        serde_json::from_value(value).map_err(|e| e.to_string())?
    };
    genome.validate().map_err(|e| e.to_string())?;
    Ok(genome)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub stl: Vec<u8>,
    pub triangles: usize,
    pub active_voxels: usize,
}

/// Voxelizes, meshes and smooths a genome. `turbine` selects the 100^3
/// turbine workspace with its platform instead of the 50^3 solid workspace.
pub fn render_model(genome: &Genome, turbine: bool, smooth: usize) -> Result<Model, String> {
    let (ws, opts) = if turbine {
        (Workspace::vawt_default(), RenderOptions::vawt_for(genome))
    } else {
        (Workspace::target_default(), RenderOptions::target())
    };
    let grid = render_grid(genome, &ws, &opts).map_err(|e| e.to_string())?;
    let mesh = extract_mesh(&grid).map_err(|e| e.to_string())?;
    let mesh = laplacian_smooth(&mesh, smooth, 1.0);
    Ok(Model {
        stl: export_stl(&mesh, StlMode::Binary).map_err(|e| e.to_string())?,
        triangles: mesh.triangles.len(),
        active_voxels: grid.count(),
    })
}

/// Fraction of voxels agreeing with a named target.
pub fn score(genome: &Genome, target: &str) -> Result<f64, String> {
    let tm = TargetMatch::builtin(target, [TARGET_DIMS; 3]).map_err(|e| e.to_string())?;
    let grid = render_grid(genome, tm.workspace(), &RenderOptions::target())
        .map_err(|e| e.to_string())?;
    match_fraction(&grid, tm.target()).map_err(|e| e.to_string())
}

/// One mutation under the target-mode settings, reproducible from `seed`.
pub fn mutated(genome: &Genome, seed: u64) -> Genome {
    let cfg = GAConfig {
        gene_bounds: GAConfig::default_bounds(genome.kind()),
        ..GAConfig::target()
    };
    mutate(genome, &cfg, &mut stream(seed, 0))
}

fn js(e: String) -> JsError {
    JsError::new(&e)
}

/// The builtin genomes as a JSON array of `{name, description, genome}`.
#[wasm_bindgen]
pub fn builtins() -> String {
    let all: Vec<_> = BUILTIN_NAMES
        .iter()
        .map(|n| builtin(n).expect("listed names exist"))
        .collect();
    serde_json::to_string(&all).expect("genomes serialize")
}

#[wasm_bindgen]
pub struct Rendered(Model);

#[wasm_bindgen]
impl Rendered {
    /// Binary STL bytes.
    #[wasm_bindgen(getter)]
    pub fn stl(&self) -> Vec<u8> {
        self.0.stl.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn triangles(&self) -> usize {
        self.0.triangles
    }

    #[wasm_bindgen(getter, js_name = activeVoxels)]
    pub fn active_voxels(&self) -> usize {
        self.0.active_voxels
    }
}

#[wasm_bindgen]
pub fn render(genome_json: &str, turbine: bool, smooth: usize) -> Result<Rendered, JsError> {
    let genome = parse_genome(genome_json).map_err(js)?;
    render_model(&genome, turbine, smooth).map(Rendered).map_err(js)
}

#[wasm_bindgen(js_name = targetMatch)]
pub fn target_match(genome_json: &str, target: &str) -> Result<f64, JsError> {
    let genome = parse_genome(genome_json).map_err(js)?;
    score(&genome, target).map_err(js)
}

/// Returns the mutated genome as JSON.
#[wasm_bindgen(js_name = mutate)]
pub fn mutate_genome(genome_json: &str, seed: u64) -> Result<String, JsError> {
    let genome = parse_genome(genome_json).map_err(js)?;
    Ok(serde_json::to_string(&mutated(&genome, seed)).expect("genomes serialize"))
}
