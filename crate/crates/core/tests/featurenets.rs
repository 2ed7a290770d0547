use std::time::Instant;

use loopgan_core::featurenets::{build_general, build_scnn, freeze, train_classifier, ClassifierTrainConfig, NetConfig};
use loopgan_core::melpipe::{make_general_corpus, make_synthetic_corpus, Split, SyntheticSpec};

#[test]
fn scnn_separates_ten_synthetic_classes() {
    let corpus = make_synthetic_corpus::<f32>(0, 500, 10).unwrap();
    let t = Instant::now();
    let net = build_scnn::<f32>(NetConfig::scnn(10)).unwrap();
    let cfg = ClassifierTrainConfig { epochs: 6, batch_size: 16, lr: 1e-3, seed: 0 };
    let (_, report) = train_classifier(net, &corpus, &cfg).unwrap();
    eprintln!("scnn: {report:?} in {:.1}s", t.elapsed().as_secs_f64());
    assert_eq!(report.eval_split, Split::Test);
    assert!(report.accuracy >= 0.9, "{report:?}");
    assert!(report.roc_auc.unwrap() > 0.9);
}

#[test]
fn general_embedding_clusters_by_class() {
    let corpus = make_general_corpus::<f32>(SyntheticSpec { seed: 1, n_clips: 280, n_classes: 10, n_distractors: 4 }).unwrap();
    let t = Instant::now();
    let net = build_general::<f32>(NetConfig::general(14, 128)).unwrap();
    let cfg = ClassifierTrainConfig { epochs: 6, batch_size: 16, lr: 1e-3, seed: 0 };
    let (net, report) = train_classifier(net, &corpus, &cfg).unwrap();
    eprintln!("general: {report:?} in {:.1}s", t.elapsed().as_secs_f64());
    let adapter = freeze(net);
    let held = make_synthetic_corpus::<f32>(99, 40, 10).unwrap();
    let clips: Vec<_> = held.clips.iter().collect();
    let (emb, _) = adapter.clip_outputs(&clips, 16);
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let (mut same, mut diff) = ((0.0, 0), (0.0, 0));
    for i in 0..clips.len() {
        for j in i + 1..clips.len() {
            let d = dist(&emb[i], &emb[j]);
            if held.label(i) == held.label(j) {
                same = (same.0 + d, same.1 + 1);
            } else {
                diff = (diff.0 + d, diff.1 + 1);
            }
        }
    }
    let (same, diff) = (same.0 / same.1 as f64, diff.0 / diff.1 as f64);
    eprintln!("mean same-class distance {same:.3}, cross-class {diff:.3}");
    assert!(diff > same);
}
