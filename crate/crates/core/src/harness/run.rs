use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ExperimentConfig, HarnessError};
use crate::autonet::{build_synth_cnn, Adam, AdamConfig, Layer, Model, StepDecay, Tensor};
use crate::datagen::{mix_seed, Schedule, SynthDataset};
use crate::matrix::Mat;
use crate::metrics::{self, Rates, TransferDistance, TransferGem, TransferRecord};
use crate::rls::RmdnState;

/// Trainable parameters and residualization states at one point in training.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub params: Vec<Vec<f64>>,
    pub rmdn: Vec<RmdnState>,
}

impl Snapshot {
    pub fn capture(model: &Model) -> Self {
        Snapshot {
            params: model.params().iter().map(|p| p.data().to_vec()).collect(),
            rmdn: model.rmdn_layers().map(|r| r.state.clone()).collect(),
        }
    }

    pub fn restore(&self, model: &mut Model) -> Result<(), HarnessError> {
        let mismatch = || HarnessError::Checkpoint("snapshot does not match model layout".into());
        if self.params.len() != model.params().len()
            || self.rmdn.len() != model.rmdn_layers().count()
        {
            return Err(mismatch());
        }
        for (p, src) in model.params_mut().into_iter().zip(&self.params) {
            if p.len() != src.len() {
                return Err(mismatch());
            }
            p.data_mut().copy_from_slice(src);
        }
        for (r, src) in model.rmdn_layers_mut().zip(&self.rmdn) {
            if r.state.beta().shape() != src.beta().shape() {
                return Err(mismatch());
            }
            r.state = src.clone();
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DcorEntry {
    pub stage_trained: usize,
    pub stage_eval: usize,
    pub group: u8,
    /// `None` when the group has fewer than two test samples.
    pub dcor2: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossPoint {
    pub stage: usize,
    pub epoch: usize,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub seed: u64,
    pub config_hash: String,
    /// `r[(i, j)]`: accuracy on stage `j` after training through stage `i`.
    pub r: Mat,
    /// Theoretical maximum accuracy per stage.
    pub a: Vec<f64>,
    /// Untrained-model accuracy per stage.
    pub baseline: Vec<f64>,
    /// Row-major S×S, matching `r`.
    pub rates: Vec<Rates>,
    pub distance: Option<TransferDistance>,
    pub gem: Option<TransferGem>,
    pub dcor: Vec<DcorEntry>,
    pub losses: Vec<LossPoint>,
    /// Training samples read per stage.
    pub data_reads: Vec<u64>,
    /// Samples absorbed by the first residualization layer after each stage.
    pub rmdn_seen: Vec<u64>,
    pub snapshots: Vec<Snapshot>,
    pub wall_clock_secs: f64,
}

impl RunResult {
    pub fn stages(&self) -> usize {
        self.a.len()
    }

    pub fn rates_at(&self, stage_trained: usize, stage_eval: usize) -> &Rates {
        &self.rates[stage_trained * self.stages() + stage_eval]
    }

    pub fn dcor_at(&self, stage_trained: usize, stage_eval: usize, group: u8) -> Option<f64> {
        self.dcor
            .iter()
            .find(|d| d.stage_trained == stage_trained && d.stage_eval == stage_eval && d.group == group)
            .and_then(|d| d.dcor2)
    }
}

/// Generates or loads the dataset a config refers to.
pub fn load_dataset(cfg: &ExperimentConfig) -> Result<SynthDataset, HarnessError> {
    let d = &cfg.dataset;
    let ds = match &d.path {
        Some(p) => SynthDataset::load(p)?,
        None => match d.schedule {
            Schedule::Static => crate::datagen::gen_static(d.n, d.seed)?,
            Schedule::Positional => crate::datagen::gen_positional(d.stages, d.n, d.seed)?,
            s => crate::datagen::gen_continual(s, d.stages, d.n, d.seed)?,
        },
    };
    Ok(ds)
}

pub fn build_model(cfg: &ExperimentConfig, ds: &SynthDataset, seed: u64) -> Result<Model, HarnessError> {
    let spec = build_synth_cnn(cfg.model.placement, cfg.model.epsilon, cfg.model.lambda);
    let s = ds.layout.image_size;
    Ok(Model::new(&spec, &[1, s, s], ds.confounders.cols(), seed)?)
}

/// Stacks samples into an input batch and a `[confounders·δ, label, 1]`
/// design matrix.
pub fn make_batch(ds: &SynthDataset, idx: &[usize], images: &[&[f64]], delta: f64) -> (Tensor, Mat) {
    let s = ds.layout.image_size;
    let k = ds.confounders.cols();
    let mut x = Vec::with_capacity(idx.len() * s * s);
    let mut d = Vec::with_capacity(idx.len() * (k + 2));
    for (&i, img) in idx.iter().zip(images) {
        x.extend_from_slice(img);
        d.extend(ds.confounders.row(i).iter().map(|c| c * delta));
        d.push(ds.labels[i] as f64);
        d.push(1.0);
    }
    (
        Tensor::new(vec![idx.len(), 1, s, s], x).expect("batch shape"),
        Mat::new(idx.len(), k + 2, d).expect("design shape"),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOutcome {
    pub rates: Rates,
    pub dcor: [Option<f64>; 2],
}

/// Frozen-model evaluation on `idx` with images supplied by the caller.
pub fn evaluate(
    model: &mut Model,
    ds: &SynthDataset,
    idx: &[usize],
    images: &[Vec<f64>],
    delta: f64,
    batch_size: usize,
    with_dcor: bool,
) -> Result<EvalOutcome, HarnessError> {
    let mut preds = Vec::with_capacity(idx.len());
    let mut feats: Vec<f64> = Vec::new();
    let mut width = 0;
    for (chunk, imgs) in idx.chunks(batch_size).zip(images.chunks(batch_size)) {
        let refs: Vec<&[f64]> = imgs.iter().map(Vec::as_slice).collect();
        let (x, d) = make_batch(ds, chunk, &refs, delta);
        let (logits, _) = model.forward(&x, &d, false)?;
        let c = logits.shape()[1];
        preds.extend(logits.data().chunks_exact(c).map(|row| {
            // First maximum wins.
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |acc, (j, &v)| if v > acc.1 { (j, v) } else { acc })
                .0
        }));
        if with_dcor {
            let pl = model
                .prelogits()
                .ok_or_else(|| HarnessError::Config("model has no pre-logits layer".into()))?;
            width = pl.cols();
            feats.extend_from_slice(pl.data());
        }
    }
    let labels: Vec<usize> = idx.iter().map(|&i| ds.labels[i] as usize).collect();
    let rates = metrics::rates(&preds, &labels)?;
    let mut dcor = [None, None];
    if with_dcor {
        let k = ds.confounders.cols();
        for (g, slot) in dcor.iter_mut().enumerate() {
            let rows: Vec<usize> = (0..idx.len()).filter(|&r| labels[r] == g).collect();
            if rows.len() < 2 {
                continue;
            }
            let mut f = Vec::with_capacity(rows.len() * width);
            let mut c = Vec::with_capacity(rows.len() * k);
            for &r in &rows {
                f.extend_from_slice(&feats[r * width..(r + 1) * width]);
                c.extend(ds.confounders.row(idx[r]).iter().map(|v| v * delta));
            }
            let fm = Mat::new(rows.len(), width, f)?;
            let cm = Mat::new(rows.len(), k, c)?;
            *slot = Some(metrics::dcor2(&fm, &cm)?);
        }
    }
    Ok(EvalOutcome { rates, dcor })
}

fn stored_images(ds: &SynthDataset, idx: &[usize]) -> Vec<Vec<f64>> {
    idx.iter().map(|&i| ds.image(i).to_vec()).collect()
}

fn numerical(stage: usize, epoch: usize, detail: String) -> HarnessError {
    HarnessError::Divergence { stage, epoch, detail }
}

/// Trains through the stages in order without revisiting earlier training
/// data, filling row `i` of the accuracy matrix after stage `i`. The
/// residualization state is carried across stages.
pub fn run_continual(
    cfg: &ExperimentConfig,
    ds: &SynthDataset,
    seed: u64,
    keep_snapshots: bool,
) -> Result<RunResult, HarnessError> {
    cfg.validate()?;
    let start = Instant::now();
    let stages = ds.num_stages();
    let a = ds.theoretical_maxima()?;
    let mut model = build_model(cfg, ds, seed)?;
    let eb = cfg.eval.batch_size;

    let test_idx: Vec<Vec<usize>> = (0..stages).map(|s| ds.split_indices(s, false)).collect();
    let test_imgs: Vec<Vec<Vec<f64>>> = test_idx.iter().map(|idx| stored_images(ds, idx)).collect();

    let mut baseline = Vec::with_capacity(stages);
    for s in 0..stages {
        let out = evaluate(&mut model, ds, &test_idx[s], &test_imgs[s], 1.0, eb, false)?;
        baseline.push(out.rates.accuracy);
    }

    let mut adam = Adam::new(&model.params(), AdamConfig::default());
    let decay = StepDecay {
        base_lr: cfg.optim.lr,
        gamma: cfg.optim.gamma,
        every: cfg.optim.decay_every,
    };
    let mut r = Mat::zeros(stages, stages);
    let mut rates = Vec::with_capacity(stages * stages);
    let mut dcor = Vec::new();
    let mut losses = Vec::new();
    let mut data_reads = vec![0u64; stages];
    let mut rmdn_seen = Vec::with_capacity(stages);
    let mut snapshots = Vec::new();

    for stage in 0..stages {
        let mut order = ds.split_indices(stage, true);
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x5348_5546 + stage as u64));
        for epoch in 0..cfg.optim.epochs {
            let lr = decay.lr_at(stage * cfg.optim.epochs + epoch);
            order.shuffle(&mut rng);
            let mut total = 0.0;
            for chunk in order.chunks(cfg.optim.batch_size) {
                let imgs: Vec<&[f64]> = chunk.iter().map(|&i| ds.image(i)).collect();
                data_reads[stage] += chunk.len() as u64;
                let (x, d) = make_batch(ds, chunk, &imgs, 1.0);
                model.zero_grad();
                let (_, loss) = model
                    .forward(&x, &d, true)
                    .map_err(|e| numerical(stage, epoch, e.to_string()))?;
                let loss = loss.expect("synthetic CNN has a loss layer");
                if !loss.is_finite() {
                    return Err(numerical(stage, epoch, format!("loss {loss}")));
                }
                total += loss * chunk.len() as f64;
                model.backward()?;
                adam.step(model.params_mut(), lr)?;
            }
            losses.push(LossPoint {
                stage,
                epoch,
                loss: total / order.len().max(1) as f64,
            });
        }
        rmdn_seen.push(model.rmdn_layers().next().map_or(0, |l| l.state.n_seen()));

        for j in 0..stages {
            let out = evaluate(&mut model, ds, &test_idx[j], &test_imgs[j], 1.0, eb, cfg.eval.dcor)?;
            r[(stage, j)] = out.rates.accuracy;
            rates.push(out.rates);
            if cfg.eval.dcor {
                for g in 0..2u8 {
                    dcor.push(DcorEntry {
                        stage_trained: stage,
                        stage_eval: j,
                        group: g,
                        dcor2: out.dcor[g as usize],
                    });
                }
            }
        }
        if keep_snapshots {
            snapshots.push(Snapshot::capture(&model));
        }
    }

    let (distance, gem) = if stages >= 2 {
        let rec = TransferRecord::new(r.clone(), a.clone())?;
        (
            Some(metrics::transfer_distance(&rec)?),
            Some(metrics::transfer_gem(&rec, &baseline)?),
        )
    } else {
        (None, None)
    };
    Ok(RunResult {
        seed,
        config_hash: cfg.hash(),
        r,
        a,
        baseline,
        rates,
        distance,
        gem,
        dcor,
        losses,
        data_reads,
        rmdn_seen,
        snapshots,
        wall_clock_secs: start.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub stage_trained: usize,
    pub stage_eval: usize,
    pub delta: f64,
    pub accuracy: f64,
}

/// Evaluates each per-stage snapshot on every stage's test set with the
/// confounder re-rendered at intensity `δ`. The design matrix carries the
/// δ-scaled confounder.
pub fn delta_sweep(
    cfg: &ExperimentConfig,
    ds: &SynthDataset,
    seed: u64,
    snapshots: &[Snapshot],
    deltas: &[f64],
) -> Result<Vec<SweepRow>, HarnessError> {
    if let Some(d) = deltas.iter().find(|d| !(0.0..=1.0).contains(*d)) {
        return Err(HarnessError::Config(format!("delta {d} outside [0, 1]")));
    }
    if snapshots.len() != ds.num_stages() {
        return Err(HarnessError::Checkpoint(format!(
            "{} snapshots for {} stages",
            snapshots.len(),
            ds.num_stages()
        )));
    }
    let mut model = build_model(cfg, ds, seed)?;
    let mut rows = Vec::new();
    let stages = ds.num_stages();
    let mut acc = vec![0.0; stages * stages * deltas.len()];
    for j in 0..stages {
        let idx = ds.split_indices(j, false);
        for (di, &delta) in deltas.iter().enumerate() {
            let imgs = idx
                .iter()
                .map(|&i| ds.render_at_delta(i, delta))
                .collect::<Result<Vec<_>, _>>()?;
            for (i, snap) in snapshots.iter().enumerate() {
                snap.restore(&mut model)?;
                let out = evaluate(&mut model, ds, &idx, &imgs, delta, cfg.eval.batch_size, false)?;
                acc[(i * stages + j) * deltas.len() + di] = out.rates.accuracy;
            }
        }
    }
    for i in 0..stages {
        for j in 0..stages {
            for (di, &delta) in deltas.iter().enumerate() {
                rows.push(SweepRow {
                    stage_trained: i,
                    stage_eval: j,
                    delta,
                    accuracy: acc[(i * stages + j) * deltas.len() + di],
                });
            }
        }
    }
    Ok(rows)
}

/// Restores the last snapshot and returns the model, for inspection.
pub fn model_from_snapshot(
    cfg: &ExperimentConfig,
    ds: &SynthDataset,
    seed: u64,
    snap: &Snapshot,
) -> Result<Model, HarnessError> {
    let mut m = build_model(cfg, ds, seed)?;
    snap.restore(&mut m)?;
    Ok(m)
}

/// Widths of the residualization layers of a model, in order.
pub fn rmdn_widths(model: &Model) -> Vec<usize> {
    model
        .layers()
        .iter()
        .filter_map(|l| match l {
            Layer::Rmdn(r) => Some(r.state.features()),
            _ => None,
        })
        .collect()
}
