#![allow(dead_code)]

use sldm::phantom::{generate_phantom_pair, PhantomSpec};
use sldm::sde::{ScheduleConfig, SdeSchedule};
use sldm::structure::{make_training_pair, EdgeExtractorConfig};
use sldm_nn::{ScoreNetConfig, TrainingExample};

pub fn schedule() -> SdeSchedule {
    ScheduleConfig::default().build().unwrap()
}

pub fn edges() -> EdgeExtractorConfig {
    EdgeExtractorConfig { gaussian_sigma: 1.4, low_threshold: 0.04, high_threshold: 0.1 }
}

pub fn tiny() -> ScoreNetConfig {
    ScoreNetConfig { widths: vec![4, 8, 8], res_blocks: 1, time_dim: 8, attention_dim: 8, cross_attention: true }
}

pub fn examples(size: usize, n: u64, seed0: u64) -> Vec<TrainingExample> {
    let spec = PhantomSpec { size, ..PhantomSpec::default() };
    (0..n)
        .map(|s| {
            let p = generate_phantom_pair(&spec, seed0 + s).unwrap();
            let (x0, mu) = make_training_pair(&p.nd_aligned, &p.ld_image, &edges()).unwrap();
            TrainingExample { x0, mu, semantic: None }
        })
        .collect()
}
