//! Stage execution inside a run directory.
//!
//! Every stage reads what earlier stages left on disk, writes its own
//! artifacts, and appends one manifest record. Completed stages are skipped
//! on rerun.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::json;
use sldm::descriptor::Descriptor;
use sldm::io::{png, FlatTensor};
use sldm::metrics::{isnr, psnr, snr, ssim, ImageMetrics, MetricReport};
use sldm::phantom::{build_dataset, generate_phantom_pair, DatasetEntry, DatasetManifest, PhantomPair, Split};
use sldm::rng;
use sldm::saem::{region_histogram, roi_mean, run_saem};
use sldm::sde::{reverse_sample_batch, SampleOptions, SdeSchedule};
use sldm::structure::{make_test_state, make_training_pair};
use sldm::{AugmentedState, ImageGrid};
use sldm_nn::{
    pretrain_alignment, retrieval_accuracy, train_resumable, training_loss, AlignmentModel, Checkpoint, NetworkPredictor,
    ScoreNetwork, SemanticContext, TrainingExample,
};

use crate::config::RunConfig;
use crate::error::{usage, Error, Result};
use crate::manifest::{RunManifest, StageRecord};
use crate::verify::verify_run;

pub const CONFIG_FILE: &str = "config.toml";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    GenData,
    PretrainClip,
    Train,
    Sample,
    Saem,
    Eval,
    Verify,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 8] =
        [Stage::GenData, Stage::PretrainClip, Stage::Train, Stage::Sample, Stage::Saem, Stage::Eval, Stage::Verify, Stage::Report];

    pub fn name(self) -> &'static str {
        match self {
            Stage::GenData => "gen-data",
            Stage::PretrainClip => "pretrain-clip",
            Stage::Train => "train",
            Stage::Sample => "sample",
            Stage::Saem => "saem",
            Stage::Eval => "eval",
            Stage::Verify => "verify",
            Stage::Report => "report",
        }
    }

    fn enabled(self, cfg: &RunConfig) -> bool {
        let s = &cfg.stages;
        match self {
            Stage::GenData => s.gen_data,
            Stage::PretrainClip => s.pretrain_clip,
            Stage::Train => s.train,
            Stage::Sample => s.sample,
            Stage::Saem => s.saem,
            Stage::Eval => s.eval,
            Stage::Verify => s.verify,
            Stage::Report => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StageStatus {
    /// Already recorded in the manifest.
    Skipped,
    /// Turned off in the config.
    Disabled,
    Ran(StageRecord),
}

struct Output {
    artifacts: Vec<String>,
    summary: serde_json::Value,
}

/// A run directory bound to its config.
pub struct Run {
    pub config: RunConfig,
    pub dir: PathBuf,
    pub manifest: RunManifest,
    schedule: SdeSchedule,
}

fn stage_err(stage: Stage) -> impl FnOnce(Error) -> Error {
    move |e| match e {
        Error::Usage(_) => e,
        other => Error::Stage { stage: stage.name(), source: Box::new(other) },
    }
}

fn image_of(grid: &ImageGrid) -> Result<ImageGrid> {
    Ok(grid.extract_channel(0)?)
}

impl Run {
    /// Validates the config, writes it into the run directory (or checks it
    /// against the one already there) and loads the manifest.
    pub fn open(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let schedule = config.schedule.build().map_err(|e| usage(format!("schedule: {e}")))?;
        let dir = config.out_dir.clone();
        std::fs::create_dir_all(&dir)?;
        let path = dir.join(CONFIG_FILE);
        if path.exists() {
            let existing = RunConfig::load(&path)?;
            if existing.hash() != config.hash() {
                return Err(usage(format!("{} holds a run with a different config", dir.display())));
            }
        } else {
            std::fs::write(&path, config.to_toml())?;
        }
        let manifest = RunManifest::open(&dir, &config.hash())?;
        Ok(Self { config, dir, manifest, schedule })
    }

    pub fn schedule(&self) -> &SdeSchedule {
        &self.schedule
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    /// Runs `stage` unless it is disabled or already complete.
    pub fn run_stage(&mut self, stage: Stage) -> Result<StageStatus> {
        if self.manifest.completed(stage.name()).is_some() {
            log::info!("{}: already complete", stage.name());
            return Ok(StageStatus::Skipped);
        }
        if !stage.enabled(&self.config) {
            return Ok(StageStatus::Disabled);
        }
        log::info!("{}: running", stage.name());
        let start = Instant::now();
        let out = match stage {
            Stage::GenData => self.gen_data(),
            Stage::PretrainClip => self.pretrain_clip(),
            Stage::Train => self.train(),
            Stage::Sample => self.sample(),
            Stage::Saem => self.saem(),
            Stage::Eval => self.eval(),
            Stage::Verify => self.verify(),
            Stage::Report => self.report(),
        }
        .map_err(stage_err(stage))?;
        let record = StageRecord {
            stage: stage.name().to_string(),
            config_hash: self.manifest.config_hash.clone(),
            seconds: start.elapsed().as_secs_f64(),
            artifacts: out.artifacts,
            summary: out.summary,
        };
        self.manifest.append(record.clone())?;
        log::info!("{}: done in {:.1}s", stage.name(), record.seconds);
        Ok(StageStatus::Ran(record))
    }

    pub fn run_all(&mut self) -> Result<()> {
        for stage in Stage::ALL {
            self.run_stage(stage)?;
        }
        Ok(())
    }

    /// Writes a CSV whose first line records the config hash.
    fn write_csv(&self, rel: &str, body: &str) -> Result<String> {
        let path = self.path(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(path, format!("# config_hash={}\n{body}", self.config.hash()))?;
        Ok(rel.to_string())
    }

    fn ensure_dir(&self, rel: &str) -> Result<()> {
        std::fs::create_dir_all(self.path(rel))?;
        Ok(())
    }

    fn dataset(&self) -> Result<DatasetManifest> {
        let dir = self.path("data");
        if !dir.join(sldm::phantom::MANIFEST_FILE).exists() {
            return Err(Error::Runtime("no dataset in the run directory; run gen-data first".into()));
        }
        Ok(DatasetManifest::load(&dir)?)
    }

    /// Pairs of one split in manifest order.
    pub fn split(&self, split: Split) -> Result<Vec<(DatasetEntry, PhantomPair)>> {
        let m = self.dataset()?;
        let dir = self.path("data");
        m.split(split).map(|e| Ok((e.clone(), m.load_pair(&dir, e)?))).collect()
    }

    pub fn alignment_model(&self) -> Result<Option<AlignmentModel>> {
        let p = self.path("alignment/alignment.ckpt");
        if !self.config.sampling.semantic || !p.exists() {
            return Ok(None);
        }
        Ok(Some(AlignmentModel::from_checkpoint(&Checkpoint::load(&p)?)?))
    }

    pub fn score_network(&self) -> Result<ScoreNetwork> {
        let p = self.path("train/score.ckpt");
        if !p.exists() {
            return Err(Error::Runtime("no trained score network; run train first".into()));
        }
        Ok(ScoreNetwork::from_checkpoint(&Checkpoint::load(&p)?, &self.schedule)?)
    }

    fn context(model: Option<&AlignmentModel>, d: &Descriptor) -> Result<Option<SemanticContext>> {
        model.map(|m| Ok(SemanticContext::from_descriptor(m.encode_descriptor(d)?, d))).transpose()
    }

    /// Sampled states of the test split, in split order.
    pub fn samples(&self) -> Result<Vec<AugmentedState>> {
        self.split(Split::Test)?
            .iter()
            .map(|(e, _)| {
                let t = FlatTensor::load(self.path(&format!("samples/{}.sldm", e.id)))?;
                Ok(AugmentedState::from_grid(t.to_grid()?)?)
            })
            .collect()
    }

    /// Test-time condition states `[y, C(y), C(y)]` and semantic contexts.
    pub fn test_conditions(&self, pairs: &[(DatasetEntry, PhantomPair)]) -> Result<(Vec<AugmentedState>, Vec<Option<SemanticContext>>)> {
        let model = self.alignment_model()?;
        let mut mus = Vec::with_capacity(pairs.len());
        let mut ctx = Vec::with_capacity(pairs.len());
        for (_, p) in pairs {
            mus.push(make_test_state(&p.ld_image, &self.config.edges)?);
            ctx.push(Self::context(model.as_ref(), &p.descriptor)?);
        }
        Ok((mus, ctx))
    }

    /// Reverse chains for `mus`, chain `i` on stream `(sampling seed, i)`.
    pub fn sample_states(
        &self,
        net: &ScoreNetwork,
        mus: &[AugmentedState],
        contexts: Vec<Option<SemanticContext>>,
        options: SampleOptions,
    ) -> Result<Vec<sldm::sde::SampleOutput>> {
        let predictor = NetworkPredictor { net, contexts, chunk: self.config.sampling.chunk };
        Ok(reverse_sample_batch(mus, &predictor, &self.schedule, self.config.seeds.sampling, options)?)
    }

    fn gen_data(&mut self) -> Result<Output> {
        let c = &self.config;
        let d = c.dataset;
        let m = build_dataset(&c.phantom, d.train, d.val, d.test, c.seeds.data, &self.path("data"))?;
        let artifacts = m.all_files().into_iter().map(|f| format!("data/{f}")).collect();
        Ok(Output { artifacts, summary: json!({ "train": d.train, "val": d.val, "test": d.test }) })
    }

    fn pretrain_clip(&mut self) -> Result<Output> {
        let to_pairs = |v: Vec<(DatasetEntry, PhantomPair)>| -> Vec<sldm_nn::AlignmentPair> {
            v.into_iter().map(|(_, p)| (p.ld_image, p.descriptor)).collect()
        };
        let mut train = to_pairs(self.split(Split::Train)?);
        let pool_seed = rng::derive_seed(self.config.seeds.alignment, u64::MAX);
        for k in 0..self.config.dataset.alignment_pool as u64 {
            let p = generate_phantom_pair(&self.config.phantom, rng::derive_seed(pool_seed, k))?;
            train.push((p.ld_image, p.descriptor));
        }
        let test = to_pairs(self.split(Split::Test)?);
        let out = pretrain_alignment(&train, &self.config.alignment, self.config.seeds.alignment)?;
        self.ensure_dir("alignment")?;
        out.checkpoint.save(self.path("alignment/alignment.ckpt"))?;
        let loss = self.write_csv("alignment/loss.csv", &out.checkpoint.loss_curve_csv())?;
        let mut body = String::from("split,pairs,class_top1,instance_top1,matched_over_mismatched\n");
        let mut summary = json!({ "warnings": out.warnings, "final_loss": out.loss_curve.last() });
        for (name, pairs) in [("train", &train), ("test", &test)] {
            let r = retrieval_accuracy(&out.model, pairs)?;
            body += &format!("{name},{},{:.6},{:.6},{:.6}\n", r.pairs, r.class_top1, r.instance_top1, r.matched_over_mismatched);
            summary[name] = serde_json::to_value(r).expect("report serializes");
        }
        let retrieval = self.write_csv("alignment/retrieval.csv", &body)?;
        Ok(Output { artifacts: vec!["alignment/alignment.ckpt".into(), loss, retrieval], summary })
    }

    fn examples(&self, split: Split) -> Result<Vec<TrainingExample>> {
        let model = self.alignment_model()?;
        self.split(split)?
            .into_iter()
            .map(|(_, p)| {
                let (x0, mu) = make_training_pair(&p.nd_aligned, &p.ld_image, &self.config.edges)?;
                Ok(TrainingExample { x0, mu, semantic: Self::context(model.as_ref(), &p.descriptor)? })
            })
            .collect()
    }

    fn train(&mut self) -> Result<Output> {
        let data = self.examples(Split::Train)?;
        self.ensure_dir("train")?;
        let latest = self.path("train/latest.ckpt");
        let resume = if latest.exists() { Some(Checkpoint::load(&latest)?) } else { None };
        if let Some(r) = &resume {
            log::info!("train: resuming from iteration {}", r.header.iteration);
        }
        let cfg = &self.config.training;
        let mut sink = |c: &Checkpoint| c.save(&latest);
        let out = match train_resumable(&data, cfg, &self.schedule, self.config.seeds.training, resume.as_ref(), &mut sink) {
            Ok(o) => o,
            Err(sldm_nn::Error::NonFiniteLoss { iteration, last_good }) => {
                last_good.save(self.path("train/last_good.ckpt"))?;
                return Err(Error::Runtime(format!(
                    "non-finite loss at iteration {iteration}; last good checkpoint saved to train/last_good.ckpt"
                )));
            }
            Err(e) => return Err(e.into()),
        };
        out.checkpoint.save(self.path("train/score.ckpt"))?;
        if latest.exists() {
            std::fs::remove_file(&latest)?;
        }
        let loss = self.write_csv("train/loss.csv", &out.checkpoint.loss_curve_csv())?;
        let val = self.examples(Split::Val)?;
        let val_loss = training_loss(&out.network, &val, self.config.seeds.training, cfg)?;
        let curve = &out.checkpoint.header.loss_curve;
        let tail = &curve[curve.len().saturating_sub(50)..];
        Ok(Output {
            artifacts: vec!["train/score.ckpt".into(), loss],
            summary: json!({
                "iterations": out.checkpoint.header.iteration,
                "parameters": out.network.parameter_count(),
                "final_loss": tail.iter().sum::<f64>() / tail.len().max(1) as f64,
                "val_loss": val_loss,
            }),
        })
    }

    fn sample(&mut self) -> Result<Output> {
        let net = self.score_network()?;
        let pairs = self.split(Split::Test)?;
        let (mus, ctx) = self.test_conditions(&pairs)?;
        let steps = self.schedule.steps();
        let options = SampleOptions { snapshot_every: self.config.sampling.snapshots.then_some((steps / 10).max(1)) };
        let outs = self.sample_states(&net, &mus, ctx, options)?;
        self.ensure_dir("samples")?;
        let mut artifacts = Vec::new();
        for ((e, _), o) in pairs.iter().zip(&outs) {
            let t = format!("samples/{}.sldm", e.id);
            FlatTensor::from_grid(o.x0_hat.grid()).save(self.path(&t))?;
            let p = format!("samples/{}_out.png", e.id);
            png::write_gray16(self.path(&p), &o.x0_hat.image_channel())?;
            artifacts.extend([t, p]);
            for (step, s) in &o.trajectory {
                let p = format!("samples/{}_t{step:03}.png", e.id);
                png::write_gray16(self.path(&p), &image_of(s.grid())?)?;
                artifacts.push(p);
            }
        }
        Ok(Output { artifacts, summary: json!({ "chains": outs.len(), "steps": steps }) })
    }

    fn saem(&mut self) -> Result<Output> {
        let pairs = self.split(Split::Test)?;
        let samples = self.samples()?;
        let c = &self.config.saem;
        self.ensure_dir("saem")?;
        let mut artifacts = Vec::new();
        let mut stats = String::from("id,lambda,vessel_mean,bone_mean,background_mean,sub_b_vessel_mean\n");
        let mut hist = String::from("id,lambda,bin,center,count\n");
        for ((e, p), s) in pairs.iter().zip(&samples) {
            let fill = s.image_channel();
            for &lambda in &c.lambdas {
                let r = run_saem(&p.ld_image, &fill, lambda, &c.bilateral)?;
                let f = format!("saem/{}_lambda{lambda:.2}.png", e.id);
                png::write_gray16(self.path(&f), &r.x_out)?;
                artifacts.push(f);
                let mean = |img: &ImageGrid, roi: &ImageGrid| roi_mean(img, roi).map_or(f64::NAN, |v| v);
                stats += &format!(
                    "{},{lambda},{:.6},{:.6},{:.6},{:.6}\n",
                    e.id,
                    mean(&r.x_out, &p.vessel_mask),
                    mean(&r.x_out, &p.bone_mask),
                    mean(&r.x_out, &p.background_mask),
                    mean(&r.x_sub_b, &p.vessel_mask)
                );
                if let Ok(h) = region_histogram(&r.x_out, &p.vessel_mask, c.histogram_bins) {
                    for (k, n) in h.counts.iter().enumerate() {
                        hist += &format!("{},{lambda},{k},{:.6},{n}\n", e.id, h.bin_center(k));
                    }
                }
            }
        }
        artifacts.push(self.write_csv("saem/stats.csv", &stats)?);
        artifacts.push(self.write_csv("saem/histograms.csv", &hist)?);
        Ok(Output { artifacts, summary: json!({ "lambdas": c.lambdas, "images": pairs.len() }) })
    }

    fn eval(&mut self) -> Result<Output> {
        let pairs = self.split(Split::Test)?;
        let samples = self.samples()?;
        let (mus, _) = self.test_conditions(&pairs)?;
        let mut out_rows = Vec::new();
        let mut in_rows = Vec::new();
        let mut bench = Vec::new();
        for (((e, p), s), mu) in pairs.iter().zip(&samples).zip(&mus) {
            let img = s.image_channel();
            let o = image_metrics(&self.config, &e.id, &img, p)?;
            let i = image_metrics(&self.config, &e.id, &p.ld_image, p)?;
            let noise_floor = std_over(&p.ld_image, &p.background_mask)?;
            let bone_shift = match (roi_mean(&img, &p.bone_mask), roi_mean(&p.ld_image, &p.bone_mask)) {
                (Ok(a), Ok(b)) => a - b,
                _ => 0.0,
            };
            bench.push(BenchmarkRow {
                id: e.id.clone(),
                psnr_gain: o.psnr - i.psnr,
                ssim_gain: o.ssim - i.ssim,
                isnr: o.isnr,
                bone_shift,
                noise_floor,
                structure_mae: s.structure_channels().mean_abs_diff(&mu.structure_channels())?,
                vessel_mae: masked_mae(&img, &p.ld_image, &p.vessel_mask)?,
            });
            out_rows.push(o);
            in_rows.push(i);
        }
        let out = MetricReport::aggregate(out_rows);
        let inp = MetricReport::aggregate(in_rows);
        let summary = BenchmarkSummary::from_rows(&bench);
        let artifacts = vec![
            self.write_csv("eval/metrics.csv", &out.to_csv())?,
            self.write_csv("eval/input_metrics.csv", &inp.to_csv())?,
            self.write_csv("eval/benchmark.csv", &BenchmarkRow::csv(&bench))?,
        ];
        Ok(Output {
            artifacts,
            summary: json!({
                "output": { "snr": out.snr, "isnr": out.isnr, "psnr": out.psnr, "ssim": out.ssim },
                "input": { "snr": inp.snr, "psnr": inp.psnr, "ssim": inp.ssim },
                "benchmark": summary,
            }),
        })
    }

    fn verify(&mut self) -> Result<Output> {
        let report = verify_run(self)?;
        self.ensure_dir("verify")?;
        let mut artifacts = vec![self.write_csv("verify/checks.csv", &report.to_csv())?];
        if let Some(t) = &report.theorem {
            artifacts.push(self.write_csv("verify/theorem.csv", &t.to_csv())?);
        }
        std::fs::write(self.path("verify/report.txt"), report.to_text())?;
        artifacts.push("verify/report.txt".into());
        Ok(Output { artifacts, summary: json!({ "passed": report.passed(), "failed": report.failed_names() }) })
    }

    fn report(&mut self) -> Result<Output> {
        let text = crate::report::render(self)?;
        std::fs::write(self.path("report.md"), text)?;
        Ok(Output { artifacts: vec!["report.md".into()], summary: json!({}) })
    }

    /// The verification report of a completed verify stage.
    pub fn verify_outcome(&self) -> Option<bool> {
        self.manifest.completed(Stage::Verify.name()).and_then(|r| r.summary["passed"].as_bool())
    }
}

/// Per-image enhancement measurements of the phantom benchmark.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BenchmarkRow {
    pub id: String,
    /// `PSNR(out, ND) − PSNR(LD, ND)` against the realigned reference.
    pub psnr_gain: f64,
    pub ssim_gain: f64,
    pub isnr: f64,
    /// Bone-region mean of the output minus that of the input.
    pub bone_shift: f64,
    /// Background standard deviation of the input.
    pub noise_floor: f64,
    /// Mean absolute deviation of the output structure channels from `C(y)`.
    pub structure_mae: f64,
    /// Mean absolute image-channel change on vessel pixels.
    pub vessel_mae: f64,
}

impl BenchmarkRow {
    fn csv(rows: &[BenchmarkRow]) -> String {
        let mut s = String::from("id,psnr_gain_db,ssim_gain,isnr_db,bone_shift,noise_floor,structure_mae,vessel_mae\n");
        for r in rows {
            s += &format!(
                "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
                r.id, r.psnr_gain, r.ssim_gain, r.isnr, r.bone_shift, r.noise_floor, r.structure_mae, r.vessel_mae
            );
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BenchmarkSummary {
    pub pairs: usize,
    pub mean_psnr_gain: f64,
    pub mean_ssim_gain: f64,
    pub isnr_positive_fraction: f64,
    pub mean_abs_bone_shift: f64,
    pub mean_noise_floor: f64,
    pub mean_structure_mae: f64,
    pub mean_vessel_mae: f64,
}

impl BenchmarkSummary {
    pub fn from_rows(rows: &[BenchmarkRow]) -> Self {
        let n = rows.len().max(1) as f64;
        let mean = |f: fn(&BenchmarkRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
        Self {
            pairs: rows.len(),
            mean_psnr_gain: mean(|r| r.psnr_gain),
            mean_ssim_gain: mean(|r| r.ssim_gain),
            isnr_positive_fraction: rows.iter().filter(|r| r.isnr > 0.0).count() as f64 / n,
            mean_abs_bone_shift: mean(|r| r.bone_shift.abs()),
            mean_noise_floor: mean(|r| r.noise_floor),
            mean_structure_mae: mean(|r| r.structure_mae),
            mean_vessel_mae: mean(|r| r.vessel_mae),
        }
    }
}

/// PSNR/SSIM against the realigned and the raw reference, SNR and ISNR on
/// the vessel and background masks.
pub fn image_metrics(cfg: &RunConfig, name: &str, img: &ImageGrid, p: &PhantomPair) -> Result<ImageMetrics> {
    let e = &cfg.eval;
    Ok(ImageMetrics {
        name: name.to_string(),
        psnr: psnr(img, &p.nd_aligned, e.peak)?,
        ssim: ssim(img, &p.nd_aligned, &e.ssim)?,
        snr: snr(img, &p.vessel_mask, &p.background_mask)?,
        isnr: isnr(img, &p.ld_image, &p.vessel_mask, &p.background_mask)?,
        psnr_full: psnr(img, &p.nd_image, e.peak)?,
        ssim_full: ssim(img, &p.nd_image, &e.ssim)?,
    })
}

fn std_over(img: &ImageGrid, roi: &ImageGrid) -> Result<f64> {
    let v: Vec<f64> = img.data().iter().zip(roi.data()).filter(|(_, &m)| m != 0.0).map(|(&x, _)| x).collect();
    if v.len() < 2 {
        return Err(Error::Core(sldm::Error::EmptyRegion("noise floor".into())));
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    Ok((v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt())
}

fn masked_mae(a: &ImageGrid, b: &ImageGrid, roi: &ImageGrid) -> Result<f64> {
    a.ensure_same_shape(b, "masked mae")?;
    let (s, n) = a
        .data()
        .iter()
        .zip(b.data())
        .zip(roi.data())
        .filter(|(_, &m)| m != 0.0)
        .fold((0.0, 0usize), |(s, n), ((x, y), _)| (s + (x - y).abs(), n + 1));
    Ok(if n == 0 { 0.0 } else { s / n as f64 })
}

/// Runs every enabled stage of `config` in order.
pub fn run_pipeline(config: RunConfig) -> Result<RunManifest> {
    let mut run = Run::open(config)?;
    run.run_all()?;
    Ok(run.manifest)
}

/// Loads the per-image benchmark rows written by the eval stage.
pub fn read_benchmark(dir: &Path) -> Result<Vec<BenchmarkRow>> {
    let text = std::fs::read_to_string(dir.join("eval/benchmark.csv"))?;
    let mut rows = Vec::new();
    for line in text.lines().filter(|l| !l.starts_with('#')).skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let num = |i: usize| f.get(i).and_then(|v| v.parse::<f64>().ok()).ok_or_else(|| Error::Runtime(format!("bad row {line:?}")));
        rows.push(BenchmarkRow {
            id: f[0].to_string(),
            psnr_gain: num(1)?,
            ssim_gain: num(2)?,
            isnr: num(3)?,
            bone_shift: num(4)?,
            noise_floor: num(5)?,
            structure_mae: num(6)?,
            vessel_mae: num(7)?,
        });
    }
    Ok(rows)
}
