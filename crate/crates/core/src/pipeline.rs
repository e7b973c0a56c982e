//! End-to-end experiment driver: configuration, the single-frame pipeline,
//! and the timing benchmark.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::cube::{render_guide, HsiCube, SpectralResponse};
use crate::dispersion::{DispersionModel, NoiseParams};
use crate::error::{Error, Result};
use crate::filternet::FilterNetWeights;
use crate::guided::Kernel;
use crate::io;
use crate::maskgen::{generate_mask_full, MaskGenParams};
use crate::metrics::{evaluate, EvalReport};
use crate::offset::remove_offset;
use crate::recon::{reconstruct_frame, Method};
use crate::rng::derive_seed;
use crate::sensor::{add_noise, capture_noiseless, photon_scale};
use crate::synth::{default_wavelengths, synth_scene, SceneKind};

fn default_lambda_min() -> f32 {
    400.0
}
fn default_lambda_max() -> f32 {
    700.0
}
fn default_compactness() -> f32 {
    10.0
}
fn default_read_std() -> f64 {
    5.0
}
fn default_epsilon() -> f32 {
    1e-4
}
fn default_slic_iterations() -> usize {
    10
}
fn default_guard() -> usize {
    1
}

/// Superpixel budget: a number or `"auto"` for `W*H / (4N)`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum QSpec {
    Count(usize),
    Auto(String),
}

impl Default for QSpec {
    fn default() -> Self {
        QSpec::Auto("auto".into())
    }
}

impl QSpec {
    pub fn resolve(&self, width: usize, height: usize, n: usize) -> Result<usize> {
        match self {
            QSpec::Count(q) => Ok(*q),
            QSpec::Auto(s) if s == "auto" => Ok(MaskGenParams::auto_q(width, height, n)),
            QSpec::Auto(other) => Err(Error::Config(format!(
                "mask.q must be a count or \"auto\", got \"{other}\""
            ))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskConfig {
    pub n: usize,
    #[serde(default = "default_guard")]
    pub v: usize,
    #[serde(default)]
    pub q: QSpec,
    #[serde(default = "default_compactness")]
    pub compactness: f32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_shift: Option<usize>,
    #[serde(default = "default_slic_iterations")]
    pub slic_iterations: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct DispConfig {
    /// Per-band shifts; evenly spread over `mask.n` pixels when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shifts: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blur_quadratic: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<Vec<f32>>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    /// Expected electrons at the brightest pixel; zero disables noise.
    #[serde(default)]
    pub photons: f64,
    #[serde(default = "default_read_std")]
    pub read_std: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            photons: 0.0,
            read_std: default_read_std(),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "lowercase")]
pub enum MethodKind {
    #[default]
    Rank1,
    Guided,
    Network,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodConfig {
    #[serde(default)]
    pub kind: MethodKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel_height: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel_width: Option<usize>,
    #[serde(default = "default_epsilon")]
    pub epsilon: f32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights_path: Option<PathBuf>,
}

impl Default for MethodConfig {
    fn default() -> Self {
        MethodConfig {
            kind: MethodKind::Rank1,
            kernel_height: None,
            kernel_width: None,
            epsilon: default_epsilon(),
            weights_path: None,
        }
    }
}

/// One JSON file drives the whole experiment. All randomness flows from
/// `seed`, namespaced per stage.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub width: usize,
    pub height: usize,
    pub bands: usize,
    #[serde(default = "default_lambda_min")]
    pub lambda_min: f32,
    #[serde(default = "default_lambda_max")]
    pub lambda_max: f32,
    #[serde(default)]
    pub scene: SceneConfig,
    #[serde(default)]
    pub seed: u64,
    pub mask: MaskConfig,
    #[serde(default)]
    pub dispersion: DispConfig,
    #[serde(default)]
    pub contrast_eps: f32,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub method: MethodConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
}

impl PipelineConfig {
    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let config: PipelineConfig = serde_json::from_slice(bytes)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read(path)?)
    }

    pub fn wavelengths(&self) -> Vec<f32> {
        default_wavelengths(self.bands, self.lambda_min, self.lambda_max)
    }

    /// Cross-field consistency; every message names both offending fields.
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || self.bands == 0 {
            return Err(Error::Config(
                "width, height, and bands must be >= 1".into(),
            ));
        }
        if self.lambda_min >= self.lambda_max && self.bands > 1 {
            return Err(Error::Config(format!(
                "lambda_min = {} must be below lambda_max = {}",
                self.lambda_min, self.lambda_max
            )));
        }
        if let Some(shifts) = &self.dispersion.shifts {
            if shifts.len() != self.bands {
                return Err(Error::Config(format!(
                    "dispersion.shifts has {} entries but bands = {}",
                    shifts.len(),
                    self.bands
                )));
            }
            let span = shifts.iter().max().copied().unwrap_or(0) + 1;
            if span != self.mask.n {
                return Err(Error::Config(format!(
                    "mask.n = {} but dispersion.shifts span {span} pixels",
                    self.mask.n
                )));
            }
        }
        if let Some(resp) = &self.dispersion.response {
            if resp.len() != self.bands {
                return Err(Error::Config(format!(
                    "dispersion.response has {} entries but bands = {}",
                    resp.len(),
                    self.bands
                )));
            }
        }
        if self.mask.n > self.width {
            return Err(Error::Config(format!(
                "mask.n = {} exceeds width = {}",
                self.mask.n, self.width
            )));
        }
        if self.mask.v > self.height {
            return Err(Error::Config(format!(
                "mask.v = {} exceeds height = {}",
                self.mask.v, self.height
            )));
        }
        if !(0.0..1.0).contains(&self.contrast_eps) {
            return Err(Error::Config(format!(
                "contrast_eps = {} outside [0, 1)",
                self.contrast_eps
            )));
        }
        if self.method.kind == MethodKind::Network && self.method.weights_path.is_none() {
            return Err(Error::Config(
                "method.kind = network requires method.weights_path".into(),
            ));
        }
        match (&self.scene.kind, &self.scene.path) {
            (None, None) => {
                return Err(Error::Config(
                    "scene.kind or scene.path must be set".into(),
                ))
            }
            (Some(_), Some(_)) => {
                return Err(Error::Config(
                    "scene.kind and scene.path are mutually exclusive".into(),
                ))
            }
            (Some(kind), None) => {
                kind.parse::<SceneKind>()?;
            }
            (None, Some(_)) => {}
        }
        Ok(())
    }

    pub fn mask_params(&self) -> Result<MaskGenParams> {
        let q = self.mask.q.resolve(self.width, self.height, self.mask.n)?;
        let mut params = MaskGenParams::new(self.mask.n, q, self.mask.compactness);
        params.v = self.mask.v;
        if let Some(ms) = self.mask.max_shift {
            params.max_shift = ms;
        }
        params.slic_iterations = self.mask.slic_iterations;
        Ok(params)
    }

    pub fn dispersion_model(&self) -> Result<DispersionModel> {
        let mut model = match &self.dispersion.shifts {
            Some(shifts) => DispersionModel::new(
                shifts.clone(),
                vec![0.0; self.bands],
                self.dispersion
                    .response
                    .clone()
                    .unwrap_or_else(|| vec![1.0; self.bands]),
            )?,
            None => {
                let mut m = DispersionModel::linear(self.bands, self.mask.n)?;
                if let Some(resp) = &self.dispersion.response {
                    m.response = resp.clone();
                    m.validate()?;
                }
                m
            }
        };
        if let Some(q) = self.dispersion.blur_quadratic {
            model = model.with_blur_quadratic(q, &self.wavelengths())?;
        }
        Ok(model)
    }

    pub fn method(&self) -> Result<Method> {
        match self.method.kind {
            MethodKind::Rank1 => Ok(Method::Rank1),
            MethodKind::Guided => {
                let kernel = match (self.method.kernel_height, self.method.kernel_width) {
                    (Some(h), Some(w)) => Kernel::boxcar(h, w)?,
                    (None, None) => Kernel::default_for_spread(self.mask.n),
                    _ => {
                        return Err(Error::Config(
                            "method.kernel_height and method.kernel_width must be set together"
                                .into(),
                        ))
                    }
                };
                Ok(Method::Guided {
                    kernel,
                    epsilon: self.method.epsilon,
                })
            }
            MethodKind::Network => {
                let path = self.method.weights_path.as_ref().ok_or_else(|| {
                    Error::Config("method.kind = network requires method.weights_path".into())
                })?;
                Ok(Method::Network {
                    weights: FilterNetWeights::load(path)?,
                })
            }
        }
    }

    pub fn scene_cube(&self) -> Result<HsiCube> {
        match (&self.scene.kind, &self.scene.path) {
            (Some(kind), None) => {
                let kind: SceneKind = kind.parse()?;
                let cube = synth_scene(
                    kind,
                    self.width,
                    self.height,
                    self.bands,
                    derive_seed(self.seed, "scene"),
                )?;
                Ok(HsiCube {
                    wavelengths: self.wavelengths(),
                    ..cube
                })
            }
            (None, Some(path)) => {
                let cube = io::load_cube(path)?;
                if (cube.width, cube.height, cube.bands)
                    != (self.width, self.height, self.bands)
                {
                    return Err(Error::Config(format!(
                        "scene.path cube is {}x{}x{} but width/height/bands say {}x{}x{}",
                        cube.width,
                        cube.height,
                        cube.bands,
                        self.width,
                        self.height,
                        self.bands
                    )));
                }
                Ok(cube)
            }
            _ => Err(Error::Config("scene must name a kind or a path".into())),
        }
    }
}

/// Apply a `--set key=value` override onto the raw JSON config. Dotted keys
/// address nested objects; values parse as JSON first, falling back to a
/// plain string.
pub fn apply_override(root: &mut serde_json::Value, key: &str, value: &str) -> Result<()> {
    let parsed: serde_json::Value = serde_json::from_str(value)
        .unwrap_or_else(|_| serde_json::Value::String(value.to_string()));
    let mut cursor = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if i + 1 == parts.len() {
            match cursor {
                serde_json::Value::Object(map) => {
                    map.insert(part.to_string(), parsed);
                    return Ok(());
                }
                _ => {
                    return Err(Error::Config(format!(
                        "cannot set '{key}': '{part}' is not an object"
                    )))
                }
            }
        }
        cursor = match cursor {
            serde_json::Value::Object(map) => map
                .entry(part.to_string())
                .or_insert_with(|| serde_json::Value::Object(Default::default())),
            _ => {
                return Err(Error::Config(format!(
                    "cannot set '{key}': '{part}' is not an object"
                )))
            }
        };
    }
    Ok(())
}

struct StageClock {
    timings: BTreeMap<String, f64>,
}

impl StageClock {
    fn new() -> Self {
        StageClock {
            timings: BTreeMap::new(),
        }
    }

    fn time<T>(&mut self, name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let t = Instant::now();
        let out = f()?;
        self.timings
            .insert(name.to_string(), t.elapsed().as_secs_f64() * 1e3);
        Ok(out)
    }
}

/// Run the full single-frame pipeline: guide render, adaptive mask, capture,
/// offset removal, reconstruction, evaluation. Artifacts land in
/// `config.out_dir` when set; the report always comes back.
pub fn run_pipeline(config: &PipelineConfig) -> Result<EvalReport> {
    config.validate()?;
    match config.threads {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            pool.install(|| run_pipeline_inner(config))
        }
        None => run_pipeline_inner(config),
    }
}

fn run_pipeline_inner(config: &PipelineConfig) -> Result<EvalReport> {
    let mut clock = StageClock::new();
    let cube = clock.time("scene", || config.scene_cube())?;
    let response = SpectralResponse::default_for(&cube.wavelengths);
    let (guide, gray) = clock.time("guide", || render_guide(&cube, &response))?;

    let mask_params = config.mask_params()?;
    let maskgen = generate_mask_full(&guide, &mask_params)?;
    clock
        .timings
        .insert("segmentation".into(), maskgen.stats.slic_ms);
    clock.timings.insert("mask".into(), maskgen.stats.mask_ms());

    let disp = config.dispersion_model()?;
    let noiseless = clock.time("capture", || {
        capture_noiseless(&cube, &maskgen.mask, &disp, config.contrast_eps)
    })?;
    let (sensor, scale) = if config.noise.photons > 0.0 {
        let noise = NoiseParams {
            photon_level: config.noise.photons,
            read_std: config.noise.read_std,
            seed: derive_seed(config.seed, "noise"),
        };
        let scale = photon_scale(&noiseless, &noise);
        let noisy = clock.time("noise", || add_noise(&noiseless, &noise))?;
        (noisy, Some(scale))
    } else {
        (noiseless, None)
    };
    let sensor = if config.contrast_eps > 0.0 {
        clock.time("offset", || {
            remove_offset(&sensor, &maskgen.mask, &disp).map(|(clean, _)| clean)
        })?
    } else {
        sensor
    };

    let method = config.method()?;
    let (mut recon, stats) = clock.time("reconstruction", || {
        reconstruct_frame(
            &gray,
            &sensor,
            &maskgen.mask,
            &maskgen.spmap,
            &disp,
            &cube.wavelengths,
            &method,
        )
    })?;
    if let Some(scale) = scale {
        if scale > 0.0 {
            for v in recon.data.iter_mut() {
                *v = (*v as f64 / scale) as f32;
            }
        }
    }

    let uncovered = stats.uncovered_fraction(cube.width, cube.height, cube.bands);
    let report = clock.time("evaluate", || {
        evaluate(&cube, &recon, uncovered, BTreeMap::new())
    })?;
    let report = EvalReport {
        timings_ms: clock.timings,
        ..report
    };

    if let Some(dir) = &config.out_dir {
        std::fs::create_dir_all(dir)?;
        io::save_cube(&cube, &dir.join("scene.hsi"))?;
        io::save_guide_png(&guide, &dir.join("guide.png"))?;
        io::save_gray_png(&gray, &dir.join("gray.png"))?;
        io::save_mask(&maskgen.mask, &dir.join("mask.png"))?;
        io::save_labels(&maskgen.spmap, &dir.join("labels.bin"))?;
        io::save_labels_png(&maskgen.spmap, &dir.join("labels.png"))?;
        io::save_sensor_png(&sensor, &dir.join("sensor.png16"))?;
        io::save_cube(&recon, &dir.join("recon.hsi"))?;
        std::fs::write(
            dir.join("report.json"),
            serde_json::to_vec_pretty(&report)?,
        )?;
    }
    Ok(report)
}

/// Median and 95th-percentile wall-clock per stage over repeated runs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchTable {
    pub repeats: usize,
    pub stages: Vec<StageStat>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageStat {
    pub stage: String,
    pub median_ms: f64,
    pub p95_ms: f64,
}

impl BenchTable {
    pub fn to_text(&self) -> String {
        let name_width = self
            .stages
            .iter()
            .map(|s| s.stage.len())
            .max()
            .unwrap_or(5)
            .max("stage".len());
        let mut out = format!(
            "{:<name_width$}  {:>12}  {:>12}\n",
            "stage", "median_ms", "p95_ms"
        );
        for s in &self.stages {
            out.push_str(&format!(
                "{:<name_width$}  {:>12.3}  {:>12.3}\n",
                s.stage, s.median_ms, s.p95_ms
            ));
        }
        out
    }
}

fn percentile(sorted: &[f64], p: f64) -> f64 {
    let rank = ((p * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

/// Re-run the pipeline `repeats` times and summarize the stage timings.
pub fn bench_pipeline(config: &PipelineConfig, repeats: usize) -> Result<BenchTable> {
    if repeats < 3 {
        return Err(Error::InvalidParam("bench needs at least 3 repeats".into()));
    }
    // Benchmark runs never write artifacts.
    let mut config = config.clone();
    config.out_dir = None;

    let stage_names = ["segmentation", "mask", "capture-sim", "reconstruction"];
    let mut samples: BTreeMap<&str, Vec<f64>> =
        stage_names.iter().map(|&s| (s, Vec::new())).collect();
    for _ in 0..repeats {
        let report = run_pipeline(&config)?;
        let t = &report.timings_ms;
        let capture_sim = t.get("capture").copied().unwrap_or(0.0)
            + t.get("noise").copied().unwrap_or(0.0)
            + t.get("offset").copied().unwrap_or(0.0);
        samples.get_mut("segmentation").unwrap().push(
            t.get("segmentation").copied().unwrap_or(0.0),
        );
        samples
            .get_mut("mask")
            .unwrap()
            .push(t.get("mask").copied().unwrap_or(0.0));
        samples.get_mut("capture-sim").unwrap().push(capture_sim);
        samples.get_mut("reconstruction").unwrap().push(
            t.get("reconstruction").copied().unwrap_or(0.0),
        );
    }
    let stages = stage_names
        .iter()
        .map(|&name| {
            let mut v = samples[name].clone();
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            StageStat {
                stage: name.to_string(),
                median_ms: percentile(&v, 0.5),
                p95_ms: percentile(&v, 0.95),
            }
        })
        .collect();
    Ok(BenchTable { repeats, stages })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_config() -> PipelineConfig {
        PipelineConfig {
            width: 48,
            height: 40,
            bands: 5,
            lambda_min: 400.0,
            lambda_max: 700.0,
            scene: SceneConfig {
                kind: Some("rank1-patches".into()),
                path: None,
            },
            seed: 7,
            mask: MaskConfig {
                n: 5,
                v: 1,
                q: QSpec::Count(24),
                compactness: 10.0,
                max_shift: None,
                slic_iterations: 10,
            },
            dispersion: DispConfig::default(),
            contrast_eps: 0.0,
            noise: NoiseConfig {
                photons: 0.0,
                read_std: 0.0,
            },
            method: MethodConfig::default(),
            threads: None,
            out_dir: None,
        }
    }

    #[test]
    fn ideal_rank1_pipeline_is_exact() {
        let report = run_pipeline(&base_config()).unwrap();
        assert!(report.is_exact(), "mean psnr {:?}", report.mean_psnr_db);
    }

    #[test]
    fn config_validation_names_both_fields() {
        let mut config = base_config();
        config.dispersion.shifts = Some(vec![0, 1, 2, 3, 9]);
        let err = config.validate().unwrap_err().to_string();
        assert!(err.contains("mask.n"), "{err}");
        assert!(err.contains("dispersion.shifts"), "{err}");

        let mut config = base_config();
        config.dispersion.shifts = Some(vec![0, 1, 2]);
        let err = config.validate().unwrap_err().to_string();
        assert!(err.contains("dispersion.shifts"), "{err}");
        assert!(err.contains("bands"), "{err}");
    }

    #[test]
    fn overrides_reach_nested_fields() {
        let mut raw = serde_json::to_value(base_config()).unwrap();
        apply_override(&mut raw, "mask.n", "6").unwrap();
        apply_override(&mut raw, "noise.photons", "500.5").unwrap();
        apply_override(&mut raw, "scene.kind", "gradient").unwrap();
        let config: PipelineConfig = serde_json::from_value(raw).unwrap();
        assert_eq!(config.mask.n, 6);
        assert_eq!(config.noise.photons, 500.5);
        assert_eq!(config.scene.kind.as_deref(), Some("gradient"));
    }

    #[test]
    fn reports_are_reproducible_modulo_timings() {
        let mut config = base_config();
        config.noise.photons = 2000.0;
        config.noise.read_std = 5.0;
        let mut a = run_pipeline(&config).unwrap();
        let mut b = run_pipeline(&config).unwrap();
        a.timings_ms.clear();
        b.timings_ms.clear();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn bench_p95_at_least_median() {
        let mut config = base_config();
        config.width = 32;
        config.height = 32;
        config.mask.q = QSpec::Count(16);
        let table = bench_pipeline(&config, 5).unwrap();
        assert_eq!(table.stages.len(), 4);
        for s in &table.stages {
            assert!(
                s.p95_ms >= s.median_ms,
                "{}: p95 {} < median {}",
                s.stage,
                s.p95_ms,
                s.median_ms
            );
        }
        let text = table.to_text();
        assert!(text.contains("segmentation"));
        assert!(bench_pipeline(&config, 2).is_err());
    }

    #[test]
    fn auto_q_resolves_to_quarter_budget() {
        let q = QSpec::default().resolve(64, 64, 8).unwrap();
        assert_eq!(q, 64 * 64 / 32);
    }
}
