use loopgan_tensor::{Adam, AdamConfig, Tape};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{chunk_batch, freeze, FeatureNetwork};
use crate::error::{Error, Result};
use crate::melpipe::{Corpus, MelClip, Split};
use crate::nn::BnUpdates;
use crate::real::{rng_for, Real};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierTrainConfig {
    pub epochs: usize,
    /// Clips per step; each contributes both chunks.
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for ClassifierTrainConfig {
    fn default() -> Self {
        Self { epochs: 12, batch_size: 16, lr: 1e-3, seed: 0 }
    }
}

/// Held-out evaluation of a classifier. AUC metrics are macro averages over
/// classes that have both positive and negative examples, and absent when
/// no class qualifies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub roc_auc: Option<f64>,
    pub pr_auc: Option<f64>,
    pub n_eval: usize,
    pub eval_split: Split,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    pub train_loss: Vec<f64>,
}

/// Area under the ROC curve of `scores` for binary `labels`, with ties
/// counted as one half. `None` without both classes present.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let pos: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| l).map(|(&s, _)| s).collect();
    let neg: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| !l).map(|(&s, _)| s).collect();
    if pos.is_empty() || neg.is_empty() {
        return None;
    }
    let mut wins = 0.0;
    for &p in &pos {
        for &n in &neg {
            wins += if p > n {
                1.0
            } else if p == n {
                0.5
            } else {
                0.0
            };
        }
    }
    Some(wins / (pos.len() * neg.len()) as f64)
}

/// Average precision (area under the step-wise precision-recall curve).
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let n_pos = labels.iter().filter(|&&l| l).count();
    if n_pos == 0 || n_pos == labels.len() {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let (mut tp, mut ap) = (0usize, 0.0);
    for (rank, &i) in order.iter().enumerate() {
        if labels[i] {
            tp += 1;
            ap += tp as f64 / (rank + 1) as f64;
        }
    }
    Some(ap / n_pos as f64)
}

fn macro_average(probs: &[Vec<f64>], labels: &[usize], k: usize, f: fn(&[f64], &[bool]) -> Option<f64>) -> Option<f64> {
    let vals: Vec<f64> = (0..k)
        .filter_map(|c| {
            let s: Vec<f64> = probs.iter().map(|p| p[c]).collect();
            let l: Vec<bool> = labels.iter().map(|&y| y == c).collect();
            f(&s, &l)
        })
        .collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

fn evaluate<T: Real>(net: &FeatureNetwork<T>, clips: &[&MelClip<T>], labels: &[usize]) -> (f64, Option<f64>, Option<f64>) {
    if clips.is_empty() {
        return (0.0, None, None);
    }
    let adapter = freeze(net.clone());
    let (_, probs) = adapter.clip_outputs(clips, 32);
    let correct = probs
        .iter()
        .zip(labels)
        .filter(|(p, &y)| p.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map(|m| m.0) == Some(y))
        .count();
    let k = net.class_count();
    (
        correct as f64 / clips.len() as f64,
        macro_average(&probs, labels, k, roc_auc),
        macro_average(&probs, labels, k, average_precision),
    )
}

/// Single-label cross-entropy training on chunks, labelled by their clip's
/// tag. The weights with the best validation accuracy are returned along
/// with their test-split report.
pub fn train_classifier<T: Real>(
    mut net: FeatureNetwork<T>,
    corpus: &Corpus<T>,
    config: &ClassifierTrainConfig,
) -> Result<(FeatureNetwork<T>, EvalReport)> {
    if net.class_count() < corpus.num_classes() {
        return Err(Error::Config(format!(
            "network has {} outputs but corpus has {} tags",
            net.class_count(),
            corpus.num_classes()
        )));
    }
    if config.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let train_idx = corpus.indices(Split::Train);
    if train_idx.is_empty() {
        return Err(Error::Config("corpus has no training split".into()));
    }
    let pick = |split: Split| {
        let idx = corpus.indices(split);
        (idx.iter().map(|&i| &corpus.clips[i]).collect::<Vec<_>>(), idx.iter().map(|&i| corpus.label(i)).collect::<Vec<_>>())
    };
    let (mut val_clips, mut val_labels) = pick(Split::Val);
    if val_clips.is_empty() {
        (val_clips, val_labels) = pick(Split::Train);
    }
    let mut eval_split = Split::Test;
    let (mut test_clips, mut test_labels) = pick(Split::Test);
    if test_clips.is_empty() {
        eval_split = if corpus.indices(Split::Val).is_empty() { Split::Train } else { Split::Val };
        (test_clips, test_labels) = (val_clips.clone(), val_labels.clone());
    }

    let mut adam = Adam::new(AdamConfig { lr: config.lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }, net.params());
    let mut best = (net.clone(), -1.0, 0usize);
    let mut train_loss = Vec::with_capacity(config.epochs);
    let mut step = 0usize;
    for epoch in 0..config.epochs {
        let mut order = train_idx.clone();
        order.shuffle(&mut rng_for(config.seed, &[epoch as u64]));
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            if batch.len() < 2 {
                continue;
            }
            let clips: Vec<&MelClip<T>> = batch.iter().map(|&i| &corpus.clips[i]).collect();
            let mut labels: Vec<usize> = batch.iter().map(|&i| corpus.label(i)).collect();
            labels.extend_from_within(..);
            let tape = Tape::new();
            let p = net.params().bind(&tape, true);
            let x = tape.constant(chunk_batch(&clips));
            let mut bn = BnUpdates::default();
            let out = net.forward(&p, x, Some(&mut bn));
            let loss = out.logits.cross_entropy(&labels);
            let lv = loss.item().as_f64();
            if !lv.is_finite() {
                return Err(Error::TrainingDiverged { step, restored_step: best.2 });
            }
            epoch_loss += lv * batch.len() as f64;
            let mut grads = tape.backward(loss);
            let g = p.grads(&mut grads);
            drop(p);
            adam.step(net.params_mut(), &g);
            bn.apply(net.buffers_mut());
            step += 1;
        }
        train_loss.push(epoch_loss / train_idx.len() as f64);
        let (val_acc, _, _) = evaluate(&net, &val_clips, &val_labels);
        log::info!("epoch {epoch}: loss {:.4} val acc {val_acc:.3}", train_loss[epoch]);
        if val_acc > best.1 {
            best = (net.clone(), val_acc, epoch);
        }
    }
    let (best_net, best_val_accuracy, best_epoch) = best;
    let (accuracy, roc_auc, pr_auc) = evaluate(&best_net, &test_clips, &test_labels);
    let report = EvalReport {
        accuracy,
        roc_auc,
        pr_auc,
        n_eval: test_clips.len(),
        eval_split,
        best_epoch,
        best_val_accuracy: best_val_accuracy.max(0.0),
        train_loss,
    };
    Ok((best_net, report))
}
