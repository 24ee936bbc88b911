//! Artificial lenses: intensity vectors generated from known coefficients,
//! so a zero-error fit exists.
//!
//! Coefficients are drawn uniformly from finite grids: amplitudes in steps
//! of 0.001 on `[0, 1]`, offsets in steps of 0.01 degrees on `[0, 90]`, and
//! exponents in steps of 0.1 on `[0, 10]`. Candela values are computed at
//! every integer polar angle from 0 to 90 (the 90 degree value follows the
//! model's clamp rule) and the emitted file carries zeros from 91 to 180.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::model::{eval_intensity, ModelParams, LOBES};
use crate::photometry::{write_ies, IntensitySamples, NumberFormat, LOWER_HEMISPHERE_MAX};
use crate::seed;

pub const DEFAULT_SCALE: f64 = 1000.0;

/// Grid step counts: value = index * step.
const A_STEPS: u32 = 1000; // step 0.001
const B_STEPS: u32 = 9000; // step 0.01
const C_STEPS: u32 = 100; // step 0.1

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtificialInstance {
    /// Generating coefficients, on the grids above.
    pub truth: ModelParams,
    pub samples: IntensitySamples,
    /// Intensity scale the truth was evaluated with.
    pub scale: f64,
    pub seed: u64,
}

impl ArtificialInstance {
    /// The truth re-expressed against the samples' own peak, which is the
    /// scale the fitting model uses. Its error on `samples` is zero.
    pub fn fit_truth(&self) -> ModelParams {
        let ratio = self.scale / self.samples.i_max();
        ModelParams {
            a: self.truth.a.map(|a| a * ratio),
            ..self.truth
        }
    }
}

fn draw_grid_params(rng: &mut impl Rng) -> ModelParams {
    let draw = |rng: &mut dyn rand::RngCore, steps: u32, divisor: f64| -> [f64; LOBES] {
        std::array::from_fn(|_| rng.gen_range(0..=steps) as f64 / divisor)
    };
    ModelParams {
        a: draw(rng, A_STEPS, 1000.0),
        b: draw(rng, B_STEPS, 100.0),
        c: draw(rng, C_STEPS, 10.0),
    }
}

pub fn samples_for(truth: &ModelParams, scale: f64) -> IntensitySamples {
    IntensitySamples::new(
        (0..=LOWER_HEMISPHERE_MAX)
            .map(|phi| {
                let phi = phi as f64;
                (phi, eval_intensity(truth, phi, scale))
            })
            .collect(),
    )
    .expect("model output is finite and non-negative on the generator grids")
}

/// Draws one instance. Draws whose samples are all zero are rejected.
pub fn generate_instance<R: Rng>(rng: &mut R, scale: f64, seed: u64) -> ArtificialInstance {
    loop {
        let truth = draw_grid_params(rng);
        let samples = samples_for(&truth, scale);
        if samples.i_max() > 0.0 {
            return ArtificialInstance {
                truth,
                samples,
                scale,
                seed,
            };
        }
    }
}

pub fn instance_from_seed(seed: u64, scale: f64) -> ArtificialInstance {
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
    generate_instance(&mut rng, scale, seed)
}

/// `n` instances whose seeds derive from `master_seed` and the index.
pub fn generate_dataset(n: usize, master_seed: u64, scale: f64) -> Vec<ArtificialInstance> {
    (0..n)
        .map(|i| instance_from_seed(seed::derive_seed(master_seed, i as u64), scale))
        .collect()
}

/// One manifest line: which file holds which generating coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub index: usize,
    pub seed: u64,
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
    pub b1: f64,
    pub b2: f64,
    pub b3: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub i_max: f64,
    pub file: String,
}

impl ManifestRow {
    pub fn truth(&self) -> ModelParams {
        ModelParams::new(
            [self.a1, self.a2, self.a3],
            [self.b1, self.b2, self.b3],
            [self.c1, self.c2, self.c3],
        )
    }
}

pub const MANIFEST_FILE: &str = "manifest.csv";

pub fn instance_file_name(index: usize) -> String {
    format!("art_{index:03}.ies")
}

pub fn manifest_rows(instances: &[ArtificialInstance]) -> Vec<ManifestRow> {
    instances
        .iter()
        .enumerate()
        .map(|(index, inst)| {
            let t = &inst.truth;
            ManifestRow {
                index,
                seed: inst.seed,
                a1: t.a[0],
                a2: t.a[1],
                a3: t.a[2],
                b1: t.b[0],
                b2: t.b[1],
                b3: t.b[2],
                c1: t.c[0],
                c2: t.c[1],
                c3: t.c[2],
                i_max: inst.scale,
                file: instance_file_name(index),
            }
        })
        .collect()
}

pub fn instance_ies(inst: &ArtificialInstance, format: NumberFormat) -> String {
    let meta = vec![
        "[TEST] artificial instance".to_string(),
        format!("[_SEED] {}", inst.seed),
        format!("[_SCALE] {}", inst.scale),
    ];
    write_ies(&inst.samples, format, &meta)
}

/// Writes one `.ies` file per instance plus `manifest.csv`; returns the
/// file paths in index order.
pub fn write_dataset(instances: &[ArtificialInstance], dir: &Path, format: NumberFormat) -> io::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut paths = Vec::with_capacity(instances.len());
    for (i, inst) in instances.iter().enumerate() {
        let path = dir.join(instance_file_name(i));
        fs::write(&path, instance_ies(inst, format))?;
        paths.push(path);
    }
    let mut w = csv::Writer::from_path(dir.join(MANIFEST_FILE)).map_err(io::Error::other)?;
    if instances.is_empty() {
        w.write_record([
            "index", "seed", "a1", "a2", "a3", "b1", "b2", "b3", "c1", "c2", "c3", "i_max", "file",
        ])
        .map_err(io::Error::other)?;
    }
    for row in manifest_rows(instances) {
        w.serialize(row).map_err(io::Error::other)?;
    }
    w.flush()?;
    Ok(paths)
}

pub fn read_manifest(path: &Path) -> csv::Result<Vec<ManifestRow>> {
    csv::Reader::from_path(path)?.deserialize().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::rms;
    use crate::photometry::{extract_plane, parse_ies};

    fn on_grid(v: f64, step: f64, lo: f64, hi: f64) -> bool {
        let k = v / step;
        (lo..=hi).contains(&v) && (k - k.round()).abs() < 1e-9
    }

    #[test]
    fn truths_lie_on_grids() {
        for inst in generate_dataset(200, 5, DEFAULT_SCALE) {
            let t = inst.truth;
            assert!(t.a.iter().all(|&v| on_grid(v, 0.001, 0.0, 1.0)));
            assert!(t.b.iter().all(|&v| on_grid(v, 0.01, 0.0, 90.0)));
            assert!(t.c.iter().all(|&v| on_grid(v, 0.1, 0.0, 10.0)));
            assert_eq!(inst.samples.len(), 91);
        }
    }

    #[test]
    fn truth_fits_exactly() {
        for inst in generate_dataset(50, 8, DEFAULT_SCALE) {
            assert!(rms(&inst.fit_truth(), &inst.samples) < 1e-10);
        }
    }

    #[test]
    fn dataset_is_reproducible() {
        assert_eq!(
            generate_dataset(100, 99, DEFAULT_SCALE),
            generate_dataset(100, 99, DEFAULT_SCALE)
        );
        assert!(generate_dataset(0, 99, DEFAULT_SCALE).is_empty());
    }

    #[test]
    fn emitted_file_zeroes_upper_hemisphere() {
        let inst = instance_from_seed(3, DEFAULT_SCALE);
        let f = parse_ies(&instance_ies(&inst, NumberFormat::Full)).unwrap();
        assert!(f.candela_grid[0][91..].iter().all(|&v| v == 0.0));
        assert_eq!(extract_plane(&f, 0).unwrap(), inst.samples);
    }
}
