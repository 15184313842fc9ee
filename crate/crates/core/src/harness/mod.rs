//! Training, evaluation, the named ablation variants, and dataset splits.

mod data;
pub mod metrics;
mod optim;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::alignment::IndexEntry;
use crate::error::{PiaError, Result};
use crate::extractors::Label;
use crate::losses::{arcface_consistency, cross_entropy_with_grad, LossBreakdown, CONSISTENCY_EPSILON, DEFAULT_LAMBDA, DEFAULT_SMOOTHING};
use crate::model::{Architecture, Backbone, ModelConfig, Network, VideoInput};

pub use data::{load_dataset, load_entries, video_input, Dataset};
pub use optim::Adam;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lambda: f64,
    pub heads: usize,
    pub smoothing: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 3e-4,
            weight_decay: 1e-5,
            epochs: 25,
            batch_size: 16,
            lambda: DEFAULT_LAMBDA,
            heads: 4,
            smoothing: DEFAULT_SMOOTHING,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.weight_decay >= 0.0
            && self.epochs > 0
            && self.batch_size > 0
            && self.lambda >= 0.0
            && self.heads > 0
            && (0.0..1.0).contains(&self.smoothing);
        if ok {
            Ok(())
        } else {
            Err(PiaError::InvalidConfig(format!("training configuration out of range: {self:?}")))
        }
    }
}

/// Mean losses over one optimizer step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLoss {
    pub step: u64,
    pub ce: f64,
    pub arcface: f64,
    pub total: f64,
}

pub struct TrainOutcome {
    pub network: Network<f32>,
    pub history: Vec<StepLoss>,
}

fn consistency_of(video: &VideoInput) -> Result<f64> {
    if video.consistency_embeddings.len() < 2 {
        return Ok(0.0);
    }
    arcface_consistency(&video.consistency_embeddings, &video.consistency_mask, CONSISTENCY_EPSILON)
}

/// Trains a fresh network. `train.heads` overrides the model's head count.
///
/// The consistency term is computed on the raw identity embeddings, which
/// are inputs rather than outputs of the network, so it enters the reported
/// loss but contributes no parameter gradient.
pub fn train(model: &ModelConfig, data: &Dataset, tc: &TrainConfig) -> Result<TrainOutcome> {
    tc.validate()?;
    let (real, fake) = data.class_counts();
    if real == 0 || fake == 0 {
        return Err(PiaError::InvalidDataset(format!(
            "training needs both classes; got {real} real and {fake} fake videos"
        )));
    }
    let config = ModelConfig {
        heads: tc.heads,
        ..model.clone()
    };
    let mut net = Network::<f32>::new(&config, tc.seed)?;
    let mut opt = Adam::<f32>::new(tc.learning_rate, tc.weight_decay);
    let consistency: Vec<f64> = data.videos.iter().map(consistency_of).collect::<Result<_>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    rng.set_stream(0x7124);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::new();
    for epoch in 0..tc.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(tc.batch_size) {
            net.zero_grad();
            let scale = 1.0 / batch.len() as f32;
            let (mut ce, mut arc) = (0.0, 0.0);
            for &i in batch {
                let video = &data.videos[i];
                let (logits, cache) = net.forward(video)?;
                let (loss, grad) = cross_entropy_with_grad(&logits, video.label.class(), tc.smoothing)?;
                ce += loss as f64;
                arc += consistency[i];
                let grad: Vec<f32> = grad.into_iter().map(|g| g * scale).collect();
                net.backward(video, &cache, &grad);
            }
            opt.step(net.params_mut());
            let b = LossBreakdown::new(ce / batch.len() as f64, arc / batch.len() as f64, tc.lambda);
            history.push(StepLoss {
                step: opt.steps(),
                ce: b.ce,
                arcface: b.arcface,
                total: b.total,
            });
        }
        if let Some(last) = history.last() {
            log::info!("epoch {}/{}: loss {:.4}", epoch + 1, tc.epochs, last.total);
        }
    }
    Ok(TrainOutcome { network: net, history })
}

/// One JSON object per line: step, ce, arcface, total.
pub fn write_loss_log(path: &Path, history: &[StepLoss]) -> Result<()> {
    let mut out = Vec::new();
    for h in history {
        serde_json::to_writer(&mut out, h)?;
        out.push(b'\n');
    }
    fs::File::create(path)?.write_all(&out)?;
    Ok(())
}

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoScore {
    pub video_id: String,
    pub label: Label,
    pub category: String,
    pub probability: f64,
}

/// Metrics for one category. `n_videos` and `acc` cover the category's own
/// videos; `auc` and `ap` rank the category's fakes against every real video
/// and are absent for the real category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryReport {
    pub n_videos: usize,
    pub acc: f64,
    pub auc: Option<f64>,
    pub ap: Option<f64>,
}

/// Percentages in `[0, 100]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub n_videos: usize,
    pub acc: f64,
    pub auc: f64,
    pub ap: f64,
    pub per_category: BTreeMap<String, CategoryReport>,
    pub scores: Vec<VideoScore>,
}

pub const DECISION_THRESHOLD: f64 = 0.5;

pub fn score_videos(net: &Network<f32>, data: &Dataset) -> Result<Vec<VideoScore>> {
    data.videos
        .iter()
        .map(|v| {
            Ok(VideoScore {
                video_id: v.video_id.clone(),
                label: v.label,
                category: v.category.clone(),
                probability: net.score(v)?.probability,
            })
        })
        .collect()
}

/// Builds a report from per-video fake probabilities.
pub fn report_from_scores(scores: Vec<VideoScore>) -> Result<EvalReport> {
    let s: Vec<f64> = scores.iter().map(|v| v.probability).collect();
    let l: Vec<bool> = scores.iter().map(|v| v.label.is_fake()).collect();
    let pct = |x: f64| 100.0 * x;
    let mut per_category = BTreeMap::new();
    let categories: BTreeSet<&str> = scores.iter().map(|v| v.category.as_str()).collect();
    for cat in categories {
        let own: Vec<usize> = (0..scores.len()).filter(|&i| scores[i].category == cat).collect();
        let os: Vec<f64> = own.iter().map(|&i| s[i]).collect();
        let ol: Vec<bool> = own.iter().map(|&i| l[i]).collect();
        let ranked: Vec<usize> = (0..scores.len()).filter(|&i| !l[i] || scores[i].category == cat).collect();
        let rs: Vec<f64> = ranked.iter().map(|&i| s[i]).collect();
        let rl: Vec<bool> = ranked.iter().map(|&i| l[i]).collect();
        let has_fakes = ol.iter().any(|&x| x);
        let ranking = has_fakes && rl.iter().any(|&x| !x);
        per_category.insert(
            cat.to_string(),
            CategoryReport {
                n_videos: own.len(),
                acc: pct(metrics::accuracy(&os, &ol, DECISION_THRESHOLD)?),
                auc: ranking.then(|| metrics::roc_auc(&rs, &rl).map(pct)).transpose()?,
                ap: ranking.then(|| metrics::average_precision(&rs, &rl).map(pct)).transpose()?,
            },
        );
    }
    Ok(EvalReport {
        schema_version: REPORT_SCHEMA_VERSION,
        n_videos: scores.len(),
        acc: pct(metrics::accuracy(&s, &l, DECISION_THRESHOLD)?),
        auc: pct(metrics::roc_auc(&s, &l)?),
        ap: pct(metrics::average_precision(&s, &l)?),
        per_category,
        scores,
    })
}

/// Scores every test video with one pooled forward pass each.
pub fn evaluate(net: &Network<f32>, data: &Dataset) -> Result<EvalReport> {
    report_from_scores(score_videos(net, data)?)
}

/// Named ablation variants.
pub const ABLATIONS: [&str; 7] = ["full", "w/o_vi", "w/o_geom", "w/o_arc", "w_ph", "w/o_EB0", "plain_cnn"];

/// Model configuration and consistency weight of a named variant.
pub fn ablation_config(name: &str, base: &ModelConfig, tc: &TrainConfig) -> Result<(ModelConfig, TrainConfig)> {
    let mut m = base.clone();
    let mut t = tc.clone();
    match name {
        "full" => {}
        "w/o_vi" => m.streams.viseme = false,
        "w/o_geom" => m.streams.geometry = false,
        // the identity stream goes, and with it the loss over identity embeddings
        "w/o_arc" => {
            m.streams.identity = false;
            t.lambda = 0.0;
        }
        "w_ph" => m.phoneme_one_hot = true,
        "w/o_EB0" => m.backbone = Backbone::Frozen,
        "plain_cnn" => m.architecture = Architecture::PlainCnn,
        other => {
            return Err(PiaError::InvalidConfig(format!(
                "unknown ablation {other:?}; expected one of {ABLATIONS:?}"
            )))
        }
    }
    m.validate()?;
    Ok((m, t))
}

pub struct AblationRun {
    pub name: String,
    pub outcome: TrainOutcome,
    pub report: EvalReport,
}

pub fn run_ablation(name: &str, base: &ModelConfig, tc: &TrainConfig, train_set: &Dataset, test_set: &Dataset) -> Result<AblationRun> {
    let (m, t) = ablation_config(name, base, tc)?;
    let outcome = train(&m, train_set, &t)?;
    let report = evaluate(&outcome.network, test_set)?;
    Ok(AblationRun {
        name: name.to_string(),
        outcome,
        report,
    })
}

/// Withholds one fake category entirely: the test side gets all of its
/// fakes plus a seeded `test_fraction` of the real videos, the train side
/// the remaining reals and every other fake category.
pub fn leave_one_category_out(
    entries: &[IndexEntry],
    held_out: &str,
    test_fraction: f64,
    seed: u64,
) -> Result<(Vec<IndexEntry>, Vec<IndexEntry>)> {
    if !entries.iter().any(|e| e.label.is_fake() && e.category == held_out) {
        return Err(PiaError::InvalidDataset(format!("no fake videos in category {held_out:?}")));
    }
    let mut reals: Vec<&str> = entries
        .iter()
        .filter(|e| !e.label.is_fake())
        .map(|e| e.video_id.as_str())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    reals.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_test = ((reals.len() as f64 * test_fraction).round() as usize).clamp(1.min(reals.len()), reals.len());
    let test_reals: BTreeSet<&str> = reals[..n_test].iter().copied().collect();
    let (test, train) = entries.iter().cloned().partition(|e| {
        if e.label.is_fake() {
            e.category == held_out
        } else {
            test_reals.contains(e.video_id.as_str())
        }
    });
    Ok((train, test))
}
