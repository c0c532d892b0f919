use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{thread_pool, PipelineError, RunConfig};
use crate::codec::pnm::{read_triple, write_triple};
use crate::codec::{
    fit_contour_map_many, interior_mask, load_pixels, rasterize, transform, Canvas, ContourMap, ImageTriple, Lineage,
    Pixel, SamplePair,
};
use crate::fem::{
    analyze, build_mesh_cantilever, build_mesh_lshape, build_mesh_truss_like, load_nodes, Axis, Constraint, LoadCase,
    LoadEdge, LoadLocation, Material, Mesh, LOAD_STATIONS,
};
use crate::physloss::{channels_of, mse_loss, physical_loss};

pub const TRUSS_TEMPLATE: &str = "truss_cantilever_v1";
pub const AUGMENTATIONS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Cantilever,
    LShape,
    Truss,
}

impl Family {
    pub fn tag(self) -> &'static str {
        match self {
            Family::Cantilever => "cant",
            Family::LShape => "lshape",
            Family::Truss => "truss",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    Validation,
}

impl std::str::FromStr for Split {
    type Err = PipelineError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            "validation" | "val" => Ok(Split::Validation),
            _ => Err(PipelineError::Config(format!("unknown split {s:?} (train, test, validation)"))),
        }
    }
}

/// One analysis to run on a coarse and a fine mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseSpec {
    pub case_id: String,
    pub family: Family,
    pub load: LoadCase,
    /// Distributed load on a long edge, added to complete the 63-case set.
    pub supplementary: bool,
}

impl CaseSpec {
    fn new(family: Family, load: LoadCase, supplementary: bool) -> Self {
        CaseSpec { case_id: format!("{}_{}", family.tag(), load.label()), family, load, supplementary }
    }
}

/// The load variants listed per constraint kind: concentrated x and y loads at
/// the six free-end stations, then distributed x and y loads on the free end.
fn table_loads(constraint: Constraint, total: f64) -> Vec<LoadCase> {
    let mut v = Vec::with_capacity(14);
    for dir in [Axis::X, Axis::Y] {
        for i in 0..=LOAD_STATIONS {
            v.push(LoadCase::concentrated(constraint, dir, i, total));
        }
    }
    for dir in [Axis::X, Axis::Y] {
        v.push(LoadCase::distributed(constraint, dir, LoadEdge::FreeEnd, total));
    }
    v
}

/// Documentation of the case selection, echoed into the dataset summary.
pub const SELECTION_RULE: &str = "cantilever and L-shape x {fixed, sliding} x {concentrated x at stations 0..5, \
concentrated y at stations 0..5, distributed x on the free end, distributed y on the free end} = 56 cases, \
plus cantilever distributed loads on the top/bottom edges enumerated as constraint (fixed, sliding) x edge \
(top, bottom) x direction (x, y), first 7 taken (sliding/bottom/y dropped) = 63 base cases; all loads positive";

pub const ORDINATE_RULE: &str = "concentrated-load station i sits at ordinate i*H/5 along the free-end edge \
(cantilever height H, L-shape arm width d, truss tip plate height)";

/// The 63 training/test base cases in a fixed order.
pub fn base_cases(total: f64) -> Vec<CaseSpec> {
    let mut v = Vec::with_capacity(63);
    for family in [Family::Cantilever, Family::LShape] {
        for c in [Constraint::Fixed, Constraint::Sliding] {
            v.extend(table_loads(c, total).into_iter().map(|l| CaseSpec::new(family, l, false)));
        }
    }
    let mut extra = Vec::new();
    for c in [Constraint::Fixed, Constraint::Sliding] {
        for edge in [LoadEdge::Top, LoadEdge::Bottom] {
            for dir in [Axis::X, Axis::Y] {
                extra.push(CaseSpec::new(Family::Cantilever, LoadCase::distributed(c, dir, edge, total), true));
            }
        }
    }
    v.extend(extra.into_iter().take(7));
    v
}

/// Unseen-topology cases: every fixed-root load variant on the truss.
pub fn validation_cases(total: f64) -> Vec<CaseSpec> {
    table_loads(Constraint::Fixed, total).into_iter().map(|l| CaseSpec::new(Family::Truss, l, false)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub case_id: String,
    pub family: Family,
    pub load: LoadCase,
    /// Ordinate of a concentrated load along the free-end edge (mm).
    pub load_ordinate: Option<f64>,
    pub supplementary: bool,
    pub split: Split,
    pub contour_map: ContourMap,
    pub canvas: Canvas,
    /// Float rasters (sx, sy, txy) relative to the dataset directory.
    pub coarse_files: [String; 3],
    pub fine_files: [String; 3],
    pub load_pixels: Vec<Pixel>,
    /// Sample identifiers produced by augmentation at load time.
    pub augmentations: Vec<String>,
    pub coarse_elements: usize,
    pub fine_elements: usize,
    pub strain_energy_coarse: f64,
    pub strain_energy_fine: f64,
    /// Normalized physical loss of the coarse and fine images.
    pub physical_coarse: f64,
    pub physical_fine: f64,
    /// MSE of the coarse image against the fine one.
    pub mse_coarse: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetManifest {
    pub records: Vec<ManifestRecord>,
}

impl DatasetManifest {
    pub fn write(&self, path: &Path) -> Result<(), PipelineError> {
        let mut f = fs::File::create(path)?;
        for r in &self.records {
            serde_json::to_writer(&mut f, r).map_err(|e| PipelineError::Data(e.to_string()))?;
            f.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path)
            .map_err(|e| PipelineError::Data(format!("cannot read manifest {}: {e}", path.display())))?;
        let mut records = Vec::new();
        for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            records.push(
                serde_json::from_str(line)
                    .map_err(|e| PipelineError::Data(format!("{}:{}: {e}", path.display(), n + 1)))?,
            );
        }
        Ok(DatasetManifest { records })
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn count(&self, split: Split) -> usize {
        self.split(split).count()
    }
}

/// 3:1 train/test assignment of base cases, stratified by family and
/// shuffled with `seed`.
pub fn assign_splits(cases: &[CaseSpec], seed: u64) -> Vec<Split> {
    let mut splits = vec![Split::Train; cases.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_family: BTreeMap<Family, Vec<usize>> = BTreeMap::new();
    for (i, c) in cases.iter().enumerate() {
        by_family.entry(c.family).or_default().push(i);
    }
    for idx in by_family.values_mut() {
        idx.shuffle(&mut rng);
        let n_test = (idx.len() as f64 / 4.0).round() as usize;
        for &i in &idx[..n_test] {
            splits[i] = Split::Test;
        }
    }
    splits
}

struct FamilyMeshes {
    coarse: Arc<Mesh>,
    fine: Arc<Mesh>,
    canvas: Canvas,
    edge_height: f64,
}

fn family_meshes(family: Family, cfg: &RunConfig) -> Result<FamilyMeshes, PipelineError> {
    let d = &cfg.data;
    let fem = |e| PipelineError::Numerical(format!("meshing {family:?}: {e}"));
    let (coarse, fine, edge_height) = match family {
        Family::Cantilever => (
            build_mesh_cantilever(d.height, d.height / 10.0).map_err(fem)?,
            build_mesh_cantilever(d.height, d.height / 40.0).map_err(fem)?,
            d.height,
        ),
        Family::LShape => (
            build_mesh_lshape(d.height, d.height / 5.0).map_err(fem)?,
            build_mesh_lshape(d.height, d.height / 20.0).map_err(fem)?,
            d.height,
        ),
        Family::Truss => {
            let coarse_size = 0.1 * d.truss_scale;
            (
                build_mesh_truss_like(TRUSS_TEMPLATE, d.truss_scale, coarse_size).map_err(fem)?,
                build_mesh_truss_like(TRUSS_TEMPLATE, d.truss_scale, coarse_size / 4.0).map_err(fem)?,
                d.truss_scale,
            )
        }
    };
    let canvas = Canvas::fit(&fine.outline, d.canvas_width, d.canvas_height);
    Ok(FamilyMeshes { coarse: Arc::new(coarse), fine: Arc::new(fine), canvas, edge_height })
}

struct CaseResult {
    record: ManifestRecord,
    coarse: ImageTriple,
    fine: ImageTriple,
}

fn run_case(
    case: &CaseSpec,
    split: Split,
    meshes: &FamilyMeshes,
    cfg: &RunConfig,
) -> Result<CaseResult, PipelineError> {
    let material: Material = cfg.data.material.into();
    let id = &case.case_id;
    let num = |e: &dyn std::fmt::Display| PipelineError::Numerical(format!("case {id}: {e}"));
    let coarse = analyze(&meshes.coarse, &material, &case.load).map_err(|e| num(&e))?;
    let fine = analyze(&meshes.fine, &material, &case.load).map_err(|e| num(&e))?;
    // the fine space contains the coarse one, so refinement cannot lower the energy
    if fine.strain_energy < coarse.strain_energy * (1.0 - 1e-9) {
        return Err(num(&format!("fine strain energy {} below coarse {}", fine.strain_energy, coarse.strain_energy)));
    }
    let map = fit_contour_map_many(&[&fine.stress, &coarse.stress]);
    let canvas = &meshes.canvas;
    let fine_img = rasterize(&fine.stress, map, canvas, id.clone()).map_err(|e| num(&e))?;
    let coarse_img = rasterize(&coarse.stress, map, canvas, id.clone()).map_err(|e| num(&e))?;
    let eps = cfg.data.epsilon;
    if coarse_img.background(eps) != fine_img.background(eps) {
        return Err(num(&"coarse and fine footprints differ"));
    }
    let nodes = load_nodes(&meshes.fine, &case.load).map_err(|e| num(&e))?;
    let load_px = load_pixels(&meshes.fine, &nodes, canvas);
    let mask = interior_mask(&fine_img, eps, &load_px);
    let (w, h) = (canvas.width, canvas.height);
    let phys = |img: &ImageTriple| physical_loss(channels_of(img), w, h, &mask).map(|p| p.normalized);
    let physical_coarse = phys(&coarse_img).map_err(|e| num(&e))?;
    let physical_fine = phys(&fine_img).map_err(|e| num(&e))?;
    let mse_coarse = mse_loss(channels_of(&coarse_img), channels_of(&fine_img)).map_err(|e| num(&e))?;
    let file = |tag: &str| std::array::from_fn(|c| format!("images/{id}_{}_{tag}.pfm", crate::codec::CHANNEL_NAMES[c]));
    let augmentations = if split == Split::Validation {
        vec![Lineage::base(id.clone()).sample_id()]
    } else {
        (0..AUGMENTATIONS)
            .map(|k| {
                Lineage { base_case: id.clone(), hflip: k & 1 != 0, vflip: k & 2 != 0, invert: k & 4 != 0 }.sample_id()
            })
            .collect()
    };
    let load_ordinate = match case.load.location {
        LoadLocation::Station(i) => Some(i as f64 * meshes.edge_height / LOAD_STATIONS as f64),
        LoadLocation::Edge(_) => None,
    };
    let record = ManifestRecord {
        case_id: id.clone(),
        family: case.family,
        load: case.load,
        load_ordinate,
        supplementary: case.supplementary,
        split,
        contour_map: map,
        canvas: *canvas,
        coarse_files: file("coarse"),
        fine_files: file("fine"),
        load_pixels: load_px,
        augmentations,
        coarse_elements: meshes.coarse.num_elements(),
        fine_elements: meshes.fine.num_elements(),
        strain_energy_coarse: coarse.strain_energy,
        strain_energy_fine: fine.strain_energy,
        physical_coarse,
        physical_fine,
        mse_coarse,
    };
    Ok(CaseResult { record, coarse: coarse_img, fine: fine_img })
}

/// Dataset summary written next to the manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub base_cases: usize,
    pub augmentations_per_case: usize,
    pub samples: usize,
    pub train_cases: usize,
    pub test_cases: usize,
    pub validation_cases: usize,
    pub split_seed: u64,
    pub selection_rule: String,
    pub ordinate_rule: String,
    pub canvas_width: usize,
    pub canvas_height: usize,
}

/// Solves, rasterizes and writes every base and validation case; returns the
/// manifest (also written as `manifest.jsonl`).
pub fn generate_dataset(cfg: &RunConfig) -> Result<DatasetManifest, PipelineError> {
    cfg.validate()?;
    let dir = cfg.dataset_dir();
    fs::create_dir_all(dir.join("images"))?;
    let total = cfg.data.load_magnitude;
    let base = base_cases(total);
    let splits = assign_splits(&base, cfg.data.split_seed);
    let mut jobs: Vec<(CaseSpec, Split)> = base.into_iter().zip(splits).collect();
    jobs.extend(validation_cases(total).into_iter().map(|c| (c, Split::Validation)));

    let pool = thread_pool()?;
    let families = [Family::Cantilever, Family::LShape, Family::Truss];
    let meshes: Vec<FamilyMeshes> =
        pool.install(|| families.par_iter().map(|&f| family_meshes(f, cfg)).collect::<Result<_, _>>())?;
    let mesh_of = |f: Family| &meshes[families.iter().position(|&g| g == f).expect("family")];
    let export = cfg.data.export_images;
    let images = dir.join("images");
    let results: Vec<ManifestRecord> = pool.install(|| {
        jobs.par_iter()
            .map(|(case, split)| {
                let r = run_case(case, *split, mesh_of(case.family), cfg)?;
                let wr = |e: crate::codec::CodecError| PipelineError::Data(format!("writing {}: {e}", case.case_id));
                write_triple(&images, &r.coarse, "coarse", export).map_err(wr)?;
                write_triple(&images, &r.fine, "fine", export).map_err(wr)?;
                Ok(r.record)
            })
            .collect::<Result<_, PipelineError>>()
    })?;
    let manifest = DatasetManifest { records: results };
    manifest.write(&cfg.manifest_path())?;
    let n_base = manifest.records.iter().filter(|r| r.split != Split::Validation).count();
    let info = DatasetInfo {
        base_cases: n_base,
        augmentations_per_case: AUGMENTATIONS,
        samples: n_base * AUGMENTATIONS,
        train_cases: manifest.count(Split::Train),
        test_cases: manifest.count(Split::Test),
        validation_cases: manifest.count(Split::Validation),
        split_seed: cfg.data.split_seed,
        selection_rule: SELECTION_RULE.into(),
        ordinate_rule: ORDINATE_RULE.into(),
        canvas_width: cfg.data.canvas_width,
        canvas_height: cfg.data.canvas_height,
    };
    fs::write(dir.join("dataset_info.json"), serde_json::to_string_pretty(&info).expect("serializable"))?;
    Ok(manifest)
}

/// Reads the coarse/fine images of one record.
pub fn load_pair(dataset_dir: &Path, record: &ManifestRecord) -> Result<SamplePair, PipelineError> {
    let paths = |f: &[String; 3]| -> [PathBuf; 3] { std::array::from_fn(|c| dataset_dir.join(&f[c])) };
    let rd = |f: &[String; 3]| {
        read_triple(&paths(f), record.contour_map, &record.case_id)
            .map_err(|e| PipelineError::Data(format!("case {}: {e}", record.case_id)))
    };
    let coarse = rd(&record.coarse_files)?;
    let fine = rd(&record.fine_files)?;
    if !coarse.same_shape(&fine) || coarse.width != record.canvas.width || coarse.height != record.canvas.height {
        return Err(PipelineError::Data(format!("case {}: raster sizes disagree with the manifest", record.case_id)));
    }
    Ok(SamplePair {
        coarse,
        fine,
        load_pixels: record.load_pixels.clone(),
        lineage: Lineage::base(record.case_id.clone()),
    })
}

/// Base pairs of a generated dataset; train and test samples are augmented on
/// demand, validation samples are used as generated.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub dir: PathBuf,
    pub manifest: DatasetManifest,
    pub epsilon: f64,
    pub train: Vec<SamplePair>,
    pub test: Vec<SamplePair>,
    pub validation: Vec<SamplePair>,
}

impl Dataset {
    pub fn load(cfg: &RunConfig) -> Result<Self, PipelineError> {
        let path = cfg.manifest_path();
        if !path.is_file() {
            return Err(PipelineError::Data(format!("no manifest at {} (run gen-data first)", path.display())));
        }
        let manifest = DatasetManifest::read(&path)?;
        let dir = cfg.dataset_dir();
        let pool = thread_pool()?;
        let load = |split: Split| -> Result<Vec<SamplePair>, PipelineError> {
            let recs: Vec<&ManifestRecord> = manifest.split(split).collect();
            pool.install(|| recs.par_iter().map(|r| load_pair(&dir, r)).collect())
        };
        let (train, test, validation) = (load(Split::Train)?, load(Split::Test)?, load(Split::Validation)?);
        if train.is_empty() {
            return Err(PipelineError::Data("the manifest has no training cases".into()));
        }
        Ok(Dataset { dir, epsilon: cfg.data.epsilon, manifest, train, test, validation })
    }

    pub fn base(&self, split: Split) -> &[SamplePair] {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
            Split::Validation => &self.validation,
        }
    }

    fn factor(split: Split) -> usize {
        if split == Split::Validation {
            1
        } else {
            AUGMENTATIONS
        }
    }

    /// Number of samples after augmentation.
    pub fn len(&self, split: Split) -> usize {
        self.base(split).len() * Self::factor(split)
    }

    pub fn is_empty(&self, split: Split) -> bool {
        self.base(split).is_empty()
    }

    /// Sample `k`: base case `k / 8` under augmentation code `k % 8`.
    pub fn sample(&self, split: Split, k: usize) -> SamplePair {
        let f = Self::factor(split);
        let code = k % f;
        transform(&self.base(split)[k / f], code & 1 != 0, code & 2 != 0, code & 4 != 0)
    }
}
