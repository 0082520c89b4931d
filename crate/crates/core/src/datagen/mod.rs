//! Synthetic Gaussian-kernel image datasets.
//!
//! Every image carries two main-effect kernels of intensity `σ_A` (the
//! signal) and one confounder kernel of intensity `σ_B`. Group 1 (label 0)
//! and group 2 (label 1) draw both intensities from shifted uniform ranges.
//!
//! Randomness is ChaCha8 seeded per sample: sample `i` of a dataset with
//! seed `s` uses `ChaCha8Rng::seed_from_u64(mix_seed(s, i))`, stream 0 for its
//! intensities and stream 1 for pixel noise. Images can therefore be
//! re-rendered bit-exactly (e.g. at a different confounder intensity).

mod container;
mod render;

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::matrix::Mat;

pub use container::{
    decode, encode, find, find_f64, find_i64, read_container, write_container, ContainerError,
    NamedTensor, TensorData,
};
pub use render::{render_image, render_kernels, KernelSpec, Layout};

/// Per-stage shift of the sampling ranges in the continual schedules.
pub const SHIFT_PER_STAGE: f64 = 0.125;
pub const DEFAULT_NOISE_STD: f64 = 0.01;
pub const TRAIN_FRACTION: f64 = 0.8;

#[derive(Debug, Error)]
pub enum DatagenError {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error(transparent)]
    Container(#[from] ContainerError),
}

/// splitmix64 finalizer over `(seed, index)`.
pub fn mix_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(index)
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Schedule {
    Static,
    /// Dataset 1: confounder ranges drift apart, main effects fixed.
    ConfShifts,
    /// Dataset 2: main-effect ranges drift together, confounder fixed.
    MainShifts,
    /// Dataset 3: both drift.
    BothShift,
    /// Confounder kernel walks the anti-diagonal of an 8×8-cell grid.
    Positional,
}

impl Schedule {
    pub fn name(self) -> &'static str {
        match self {
            Schedule::Static => "static",
            Schedule::ConfShifts => "conf_shifts",
            Schedule::MainShifts => "main_shifts",
            Schedule::BothShift => "both_shift",
            Schedule::Positional => "positional",
        }
    }

    pub fn parse(s: &str) -> Result<Self, DatagenError> {
        Ok(match s {
            "static" => Schedule::Static,
            "conf_shifts" | "dataset1" => Schedule::ConfShifts,
            "main_shifts" | "dataset2" => Schedule::MainShifts,
            "both_shift" | "dataset3" => Schedule::BothShift,
            "positional" => Schedule::Positional,
            other => {
                return Err(DatagenError::Parameter(format!("unknown schedule {other:?}")))
            }
        })
    }

    fn code(self) -> i64 {
        self as i64
    }

    fn from_code(c: i64) -> Option<Self> {
        [
            Schedule::Static,
            Schedule::ConfShifts,
            Schedule::MainShifts,
            Schedule::BothShift,
            Schedule::Positional,
        ]
        .into_iter()
        .find(|s| s.code() == c)
    }

    pub fn default_stages(self) -> usize {
        match self {
            Schedule::Static => 1,
            Schedule::Positional => 4,
            _ => 5,
        }
    }
}

/// Uniform sampling range `[low, high)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Range {
    pub low: f64,
    pub high: f64,
}

impl Range {
    pub const fn new(low: f64, high: f64) -> Self {
        Range { low, high }
    }

    pub fn shifted(self, by: f64) -> Self {
        Range::new(self.low + by, self.high + by)
    }

    pub fn width(self) -> f64 {
        self.high - self.low
    }

    pub fn contains(self, v: f64) -> bool {
        v >= self.low && v <= self.high
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageSpec {
    pub stage_id: usize,
    /// Main-effect ranges for group 1 and group 2.
    pub sigma_a: [Range; 2],
    /// Confounder ranges for group 1 and group 2.
    pub sigma_b: [Range; 2],
    pub conf_center: (f64, f64),
    pub n_images: usize,
    pub image_size: usize,
}

impl StageSpec {
    /// Best accuracy reachable from the main effects alone.
    pub fn theoretical_max(&self) -> Result<f64, DatagenError> {
        theoretical_max(self.sigma_a[0], self.sigma_a[1])
    }
}

/// `1 − overlap / (2·width)` for two equal-width uniform ranges.
pub fn theoretical_max(range1: Range, range2: Range) -> Result<f64, DatagenError> {
    let (w1, w2) = (range1.width(), range2.width());
    if !(w1 > 0.0) || !(w2 > 0.0) {
        return Err(DatagenError::Parameter(format!(
            "degenerate range width ({w1}, {w2})"
        )));
    }
    if (w1 - w2).abs() > 1e-12 * w1.max(w2) {
        return Err(DatagenError::Parameter(format!(
            "ranges must have equal widths, got {w1} and {w2}"
        )));
    }
    let overlap = (range1.high.min(range2.high) - range1.low.max(range2.low)).max(0.0);
    Ok(1.0 - overlap / (2.0 * w1))
}

/// Stage ranges for a schedule, before sample counts are attached.
pub fn stage_specs(
    schedule: Schedule,
    stages: usize,
    n_per_stage: usize,
) -> Result<Vec<StageSpec>, DatagenError> {
    if n_per_stage == 0 || n_per_stage % 2 != 0 {
        return Err(DatagenError::Parameter(format!(
            "images per stage must be even and positive, got {n_per_stage}"
        )));
    }
    let base_g1 = Range::new(3.0, 5.0);
    let base_g2 = Range::new(4.0, 6.0);
    let mk = |stage_id, sigma_a, sigma_b, conf_center| StageSpec {
        stage_id,
        sigma_a,
        sigma_b,
        conf_center,
        n_images: n_per_stage,
        image_size: 32,
    };
    match schedule {
        Schedule::Static => {
            if stages != 1 {
                return Err(DatagenError::Parameter("static dataset has one stage".into()));
            }
            let r = [Range::new(1.0, 4.0), Range::new(3.0, 6.0)];
            Ok(vec![mk(0, r, r, Layout::quadrant3_center())])
        }
        Schedule::Positional => {
            if stages == 0 {
                return Err(DatagenError::Parameter("need at least one stage".into()));
            }
            Ok((0..stages)
                .map(|s| {
                    // Walk cells (3,0) → (0,3) along the anti-diagonal.
                    let step = if stages == 1 {
                        0
                    } else {
                        ((s * 3) as f64 / (stages - 1) as f64).round() as usize
                    };
                    let center = Layout::cell_center(3 - step, step);
                    mk(s, [base_g1, base_g2], [base_g1, base_g2], center)
                })
                .collect())
        }
        Schedule::ConfShifts | Schedule::MainShifts | Schedule::BothShift => {
            if stages < 2 {
                return Err(DatagenError::Parameter(format!(
                    "continual schedules need >= 2 stages, got {stages}"
                )));
            }
            let shift_a = matches!(schedule, Schedule::MainShifts | Schedule::BothShift);
            let shift_b = matches!(schedule, Schedule::ConfShifts | Schedule::BothShift);
            Ok((0..stages)
                .map(|s| {
                    let d = SHIFT_PER_STAGE * s as f64;
                    let a = if shift_a {
                        [base_g1.shifted(d), base_g2.shifted(-d)]
                    } else {
                        [base_g1, base_g2]
                    };
                    let b = if shift_b {
                        [base_g1.shifted(-d), base_g2.shifted(d)]
                    } else {
                        [base_g1, base_g2]
                    };
                    mk(s, a, b, Layout::quadrant3_center())
                })
                .collect())
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub schedule: Schedule,
    pub seed: u64,
    pub noise_std: f64,
    pub layout: Layout,
    pub stages: Vec<StageSpec>,
    /// N×1×S×S, row-major.
    pub images: Vec<f64>,
    pub labels: Vec<u8>,
    /// Rendered `σ_B` per sample: N×1, or N×S for the positional schedule
    /// with the intensity in the column of the stage's confounder cell.
    pub confounders: Mat,
    pub sigma_a: Vec<f64>,
    pub stage_ids: Vec<usize>,
    pub is_train: Vec<bool>,
}

impl SynthDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_len(&self) -> usize {
        self.layout.image_size * self.layout.image_size
    }

    pub fn image(&self, i: usize) -> &[f64] {
        let n = self.image_len();
        &self.images[i * n..(i + 1) * n]
    }

    pub fn num_stages(&self) -> usize {
        self.stages.len()
    }

    /// Indices of one stage's train or test split, in dataset order.
    pub fn split_indices(&self, stage: usize, train: bool) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.stage_ids[i] == stage && self.is_train[i] == train)
            .collect()
    }

    /// Per-stage theoretical maximum accuracies.
    pub fn theoretical_maxima(&self) -> Result<Vec<f64>, DatagenError> {
        self.stages.iter().map(StageSpec::theoretical_max).collect()
    }

    /// Rendered confounder intensity `σ_B` of sample `i`.
    pub fn conf_intensity(&self, i: usize) -> f64 {
        self.confounders.row(i).iter().sum()
    }

    /// Re-renders sample `i` with the confounder scaled by `delta`. At
    /// `delta = 1` this reproduces the stored image bit for bit.
    pub fn render_at_delta(&self, i: usize, delta: f64) -> Result<Vec<f64>, DatagenError> {
        let stage = &self.stages[self.stage_ids[i]];
        let mut rng = noise_rng(self.seed, i);
        render_image(
            &self.layout,
            self.sigma_a[i],
            self.conf_intensity(i),
            stage.conf_center,
            delta,
            self.noise_std,
            &mut rng,
        )
    }

    pub fn to_records(&self) -> Vec<NamedTensor> {
        let n = self.len();
        let s = self.layout.image_size;
        let mut stage_rows = Vec::new();
        for st in &self.stages {
            stage_rows.extend_from_slice(&[
                st.stage_id as f64,
                st.sigma_a[0].low,
                st.sigma_a[0].high,
                st.sigma_a[1].low,
                st.sigma_a[1].high,
                st.sigma_b[0].low,
                st.sigma_b[0].high,
                st.sigma_b[1].low,
                st.sigma_b[1].high,
                st.conf_center.0,
                st.conf_center.1,
                st.n_images as f64,
            ]);
        }
        let (m0, m1) = (self.layout.main_centers[0], self.layout.main_centers[1]);
        vec![
            NamedTensor::scalar_i64("meta.schedule", self.schedule.code()),
            NamedTensor::scalar_i64("meta.seed", self.seed as i64),
            NamedTensor::scalar_f64("meta.noise_std", self.noise_std),
            NamedTensor::f64(
                "layout",
                &[6],
                vec![s as f64, self.layout.spread, m0.0, m0.1, m1.0, m1.1],
            ),
            NamedTensor::f64("stages", &[self.stages.len(), STAGE_COLS], stage_rows),
            NamedTensor::f64("images", &[n, 1, s, s], self.images.clone()),
            NamedTensor::i64("labels", &[n], self.labels.iter().map(|&v| v as i64).collect()),
            NamedTensor::f64(
                "confounders",
                &[n, self.confounders.cols()],
                self.confounders.data().to_vec(),
            ),
            NamedTensor::f64("sigma_a", &[n], self.sigma_a.clone()),
            NamedTensor::i64(
                "stage_ids",
                &[n],
                self.stage_ids.iter().map(|&v| v as i64).collect(),
            ),
            NamedTensor::i64("is_train", &[n], self.is_train.iter().map(|&v| v as i64).collect()),
        ]
    }

    pub fn from_records(records: &[NamedTensor]) -> Result<Self, DatagenError> {
        let bad = |m: &str| DatagenError::Container(ContainerError::Record(m.to_string()));
        let schedule = Schedule::from_code(find_i64(records, "meta.schedule")?[0])
            .ok_or_else(|| bad("unknown schedule code"))?;
        let seed = find_i64(records, "meta.seed")?[0] as u64;
        let noise_std = find_f64(records, "meta.noise_std")?[0];
        let lay = find_f64(records, "layout")?;
        if lay.len() != 6 {
            return Err(bad("layout record must hold 6 values"));
        }
        let layout = Layout {
            image_size: lay[0] as usize,
            spread: lay[1],
            main_centers: [(lay[2], lay[3]), (lay[4], lay[5])],
        };
        let st = find_f64(records, "stages")?;
        if st.len() % STAGE_COLS != 0 {
            return Err(bad("stages record has wrong width"));
        }
        let stages: Vec<StageSpec> = st
            .chunks_exact(STAGE_COLS)
            .map(|r| StageSpec {
                stage_id: r[0] as usize,
                sigma_a: [Range::new(r[1], r[2]), Range::new(r[3], r[4])],
                sigma_b: [Range::new(r[5], r[6]), Range::new(r[7], r[8])],
                conf_center: (r[9], r[10]),
                n_images: r[11] as usize,
                image_size: layout.image_size,
            })
            .collect();
        let images = find_f64(records, "images")?.to_vec();
        let labels: Vec<u8> = find_i64(records, "labels")?.iter().map(|&v| v as u8).collect();
        let n = labels.len();
        let conf_rec = find(records, "confounders")?;
        let k = conf_rec.dims.get(1).copied().unwrap_or(1) as usize;
        let confounders = Mat::new(n, k, find_f64(records, "confounders")?.to_vec())
            .map_err(|e| bad(&e.to_string()))?;
        let sigma_a = find_f64(records, "sigma_a")?.to_vec();
        let stage_ids: Vec<usize> = find_i64(records, "stage_ids")?
            .iter()
            .map(|&v| v as usize)
            .collect();
        let is_train: Vec<bool> = find_i64(records, "is_train")?.iter().map(|&v| v != 0).collect();
        let img_len = layout.image_size * layout.image_size;
        if images.len() != n * img_len
            || sigma_a.len() != n
            || stage_ids.len() != n
            || is_train.len() != n
            || stage_ids.iter().any(|&s| s >= stages.len())
        {
            return Err(bad("dataset records disagree on sample count"));
        }
        Ok(SynthDataset {
            schedule,
            seed,
            noise_std,
            layout,
            stages,
            images,
            labels,
            confounders,
            sigma_a,
            stage_ids,
            is_train,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), DatagenError> {
        Ok(write_container(path, &self.to_records())?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DatagenError> {
        Self::from_records(&read_container(path)?)
    }

    /// `index,stage,label,confounder_0,…` rows.
    pub fn to_csv(&self) -> String {
        let k = self.confounders.cols();
        let mut s = String::from("index,stage,label");
        for c in 0..k {
            let _ = write!(s, ",confounder_{c}");
        }
        s.push('\n');
        for i in 0..self.len() {
            let _ = write!(s, "{},{},{}", i, self.stage_ids[i], self.labels[i]);
            for c in 0..k {
                let _ = write!(s, ",{}", self.confounders[(i, c)]);
            }
            s.push('\n');
        }
        s
    }
}

const STAGE_COLS: usize = 12;

fn params_rng(seed: u64, index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix_seed(seed, index as u64))
}

fn noise_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut r = params_rng(seed, index);
    r.set_stream(1);
    r
}

/// Renders a dataset from stage specs. Labels alternate 0/1 within a stage;
/// each stage is split 80/20 per group.
pub fn generate(
    schedule: Schedule,
    stages: Vec<StageSpec>,
    seed: u64,
    noise_std: f64,
) -> Result<SynthDataset, DatagenError> {
    let layout = if schedule == Schedule::Positional {
        Layout::grid()
    } else {
        Layout::quadrants()
    };
    let total: usize = stages.iter().map(|s| s.n_images).sum();
    let k = if schedule == Schedule::Positional {
        stages.len()
    } else {
        1
    };
    let img_len = layout.image_size * layout.image_size;
    let mut images = Vec::with_capacity(total * img_len);
    let mut labels = Vec::with_capacity(total);
    let mut conf = Vec::with_capacity(total * k);
    let mut sigma_a = Vec::with_capacity(total);
    let mut stage_ids = Vec::with_capacity(total);
    let mut is_train = vec![false; total];

    for (s, st) in stages.iter().enumerate() {
        let start = labels.len();
        for j in 0..st.n_images {
            let i = labels.len();
            let group = j % 2;
            let mut rng = params_rng(seed, i);
            let a = rng.random_range(st.sigma_a[group].low..st.sigma_a[group].high);
            let b = rng.random_range(st.sigma_b[group].low..st.sigma_b[group].high);
            let mut nrng = noise_rng(seed, i);
            images.extend(render_image(&layout, a, b, st.conf_center, 1.0, noise_std, &mut nrng)?);
            labels.push(group as u8);
            conf.extend((0..k).map(|c| if k == 1 || c == s { b } else { 0.0 }));
            sigma_a.push(a);
            stage_ids.push(s);
        }
        let mut split_rng = ChaCha8Rng::seed_from_u64(mix_seed(seed ^ 0x5EED_5EED, s as u64));
        for group in 0..2u8 {
            let mut idx: Vec<usize> = (start..labels.len())
                .filter(|&i| labels[i] == group)
                .collect();
            idx.shuffle(&mut split_rng);
            let n_train = (idx.len() as f64 * TRAIN_FRACTION).round() as usize;
            for &i in &idx[..n_train] {
                is_train[i] = true;
            }
        }
    }
    Ok(SynthDataset {
        schedule,
        seed,
        noise_std,
        layout,
        stages,
        images,
        labels,
        confounders: Mat::new(total, k, conf).expect("k confounders per sample"),
        sigma_a,
        stage_ids,
        is_train,
    })
}

/// Single-stage dataset: `σ_A, σ_B ~ U(1,4)` for group 1, `U(3,6)` for group 2.
pub fn gen_static(n: usize, seed: u64) -> Result<SynthDataset, DatagenError> {
    if n % 2 != 0 {
        return Err(DatagenError::Parameter(format!("n must be even, got {n}")));
    }
    generate(Schedule::Static, stage_specs(Schedule::Static, 1, n)?, seed, DEFAULT_NOISE_STD)
}

/// Continual dataset with `stages` stages of `n_per_stage` images each.
pub fn gen_continual(
    schedule: Schedule,
    stages: usize,
    n_per_stage: usize,
    seed: u64,
) -> Result<SynthDataset, DatagenError> {
    if !matches!(
        schedule,
        Schedule::ConfShifts | Schedule::MainShifts | Schedule::BothShift
    ) {
        return Err(DatagenError::Parameter(format!(
            "{} is not a continual shift schedule",
            schedule.name()
        )));
    }
    generate(
        schedule,
        stage_specs(schedule, stages, n_per_stage)?,
        seed,
        DEFAULT_NOISE_STD,
    )
}

/// Positional dataset: `n_per_stage` images per stage; the confounder kernel
/// moves from the bottom-left to the top-right grid cell across stages.
pub fn gen_positional(
    stages: usize,
    n_per_stage: usize,
    seed: u64,
) -> Result<SynthDataset, DatagenError> {
    generate(
        Schedule::Positional,
        stage_specs(Schedule::Positional, stages, n_per_stage)?,
        seed,
        DEFAULT_NOISE_STD,
    )
}

/// Dispatches on schedule name with its default stage count.
pub fn gen_by_schedule(
    schedule: Schedule,
    n_per_stage: usize,
    seed: u64,
) -> Result<SynthDataset, DatagenError> {
    match schedule {
        Schedule::Static => gen_static(n_per_stage, seed),
        Schedule::Positional => gen_positional(4, n_per_stage, seed),
        s => gen_continual(s, 5, n_per_stage, seed),
    }
}

#[cfg(test)]
mod tests;
