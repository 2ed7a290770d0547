use super::*;
use crate::melpipe::make_synthetic_corpus;
use loopgan_tensor::Tensor;

fn small_scnn(classes: usize) -> NetConfig {
    NetConfig::scnn(classes).with_widths(&[4, 8, 8, 16, 16, 16])
}

fn small_general() -> NetConfig {
    let mut c = NetConfig::general(5, 32).with_widths(&[4, 8, 8, 16]);
    c.seed = 3;
    c
}

fn random_chunks(n: usize, seed: u64) -> Tensor<f64> {
    let mut rng = rng_for(seed, &[]);
    Tensor::<f64>::randn(&[n, 1, N_MELS, CHUNK_FRAMES], 0.5, &mut rng).map(|v| v.clamp(-1.0, 1.0))
}

#[test]
fn tap_shapes_follow_ceil_pooling() {
    for cfg in [small_scnn(3), small_general()] {
        let net = FeatureNetwork::<f64>::new(cfg.clone()).unwrap();
        let adapter = freeze(net);
        let tape = Tape::new();
        let taps = adapter.extract_scales(&tape, tape.constant(random_chunks(2, 0))).unwrap();
        let dims: Vec<(usize, usize)> = taps.iter().map(|t| (t.dim(2), t.dim(3))).collect();
        assert_eq!(dims, vec![(32, 50), (16, 25), (8, 13), (4, 7)]);
        for (t, spec) in taps.iter().zip(adapter.scale_specs()) {
            assert_eq!(t.shape(), vec![2, spec.channels, spec.height, spec.width]);
        }
    }
}

#[test]
fn head_is_a_distribution_and_deterministic() {
    let adapter = freeze(FeatureNetwork::<f32>::new(small_scnn(10)).unwrap());
    let corpus = make_synthetic_corpus::<f32>(0, 10, 10).unwrap();
    let clips: Vec<_> = corpus.clips.iter().collect();
    let (e1, p1) = adapter.clip_outputs(&clips, 4);
    let (e2, p2) = adapter.clip_outputs(&clips, 3);
    assert_eq!(p1[0].len(), 10);
    for p in &p1 {
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }
    assert_eq!(e1, e2);
    assert_eq!(p1, p2);
}

#[test]
fn general_embedding_has_requested_width() {
    let adapter = freeze(FeatureNetwork::<f32>::new(NetConfig::general(4, 128).with_widths(&[4, 4, 8, 8])).unwrap());
    let corpus = make_synthetic_corpus::<f32>(0, 4, 4).unwrap();
    let clips: Vec<_> = corpus.clips.iter().collect();
    let (e, _) = adapter.clip_outputs(&clips, 4);
    assert!(e.iter().all(|row| row.len() == 128 && row.iter().all(|v| v.is_finite())));
}

#[test]
fn wrong_chunk_shape_is_rejected() {
    let adapter = freeze(FeatureNetwork::<f64>::new(small_general()).unwrap());
    let tape = Tape::new();
    let x = tape.constant(Tensor::zeros(&[1, 1, 64, 200]));
    assert!(matches!(adapter.extract_scales(&tape, x), Err(Error::Shape(_))));
}

#[test]
fn wrong_kind_or_widths_is_a_config_error() {
    assert!(build_scnn::<f32>(small_general()).is_err());
    assert!(build_general::<f32>(small_scnn(2)).is_err());
    assert!(FeatureNetwork::<f32>::new(NetConfig::scnn(1)).is_err());
    assert!(FeatureNetwork::<f32>::new(NetConfig::general(2, 8).with_widths(&[1, 2])).is_err());
}

#[test]
fn saturated_inputs_give_finite_maps() {
    for cfg in [small_scnn(2), small_general()] {
        let adapter = freeze(FeatureNetwork::<f32>::new(cfg).unwrap());
        for v in [-1.0f32, 1.0] {
            let tape = Tape::new();
            let taps = adapter.extract_scales(&tape, tape.constant(Tensor::full(&[1, 1, 64, 100], v))).unwrap();
            assert!(taps.iter().all(|t| t.value().is_finite()));
        }
    }
}

#[test]
fn input_gradient_matches_finite_difference() {
    for cfg in [small_scnn(2), small_general()] {
        let adapter = freeze(FeatureNetwork::<f64>::new(cfg).unwrap());
        let x0 = random_chunks(1, 9);
        let f = |x: &Tensor<f64>| -> f64 {
            let tape = Tape::new();
            let taps = adapter.extract_scales(&tape, tape.constant(x.clone())).unwrap();
            taps.iter().map(|t| t.value().data().iter().map(|v| v * v).sum::<f64>()).sum()
        };
        let tape = Tape::new();
        let x = tape.leaf(x0.clone());
        let taps = adapter.extract_scales(&tape, x).unwrap();
        let total = taps.iter().map(|t| t.square().sum()).reduce(|a, b| a.add(b)).unwrap();
        let g = tape.backward(total).get(x).unwrap().clone();
        let mut checked = 0;
        for idx in [640usize, 2000, 3333, 5000, 6399] {
            let h = 1e-6;
            let (mut xp, mut xm) = (x0.clone(), x0.clone());
            xp.data_mut()[idx] += h;
            xm.data_mut()[idx] -= h;
            let fd = (f(&xp) - f(&xm)) / (2.0 * h);
            let an = g.data()[idx];
            assert!((fd - an).abs() <= 1e-4 * fd.abs().max(1e-3), "idx {idx}: {fd} vs {an}");
            checked += (an != 0.0) as usize;
        }
        assert!(checked > 0, "gradient vanished everywhere");
    }
}

#[test]
fn degenerate_single_class_corpus() {
    let corpus = make_synthetic_corpus::<f32>(0, 20, 2).unwrap();
    let keep: Vec<usize> = (0..corpus.len()).filter(|&i| corpus.label(i) == 0).collect();
    let one = corpus.subset(&keep);
    assert_eq!(one.num_classes(), 1);
    let net = FeatureNetwork::<f32>::new(small_scnn(2)).unwrap();
    let cfg = ClassifierTrainConfig { epochs: 3, batch_size: 4, lr: 1e-2, seed: 0 };
    let (_, report) = train_classifier(net, &one, &cfg).unwrap();
    assert_eq!(report.accuracy, 1.0);
    assert_eq!(report.pr_auc, None);
    assert_eq!(report.roc_auc, None);
}

#[test]
fn auc_oracles() {
    assert_eq!(roc_auc(&[0.9, 0.8, 0.1], &[true, true, false]), Some(1.0));
    assert_eq!(roc_auc(&[0.1, 0.8, 0.9], &[true, true, false]), Some(0.0));
    assert_eq!(roc_auc(&[0.5, 0.5], &[true, false]), Some(0.5));
    assert_eq!(roc_auc(&[0.5, 0.5], &[true, true]), None);
    // ranks: pos at 1 and 3 -> (1/1 + 2/3) / 2
    let ap = average_precision(&[0.9, 0.8, 0.7], &[true, false, true]).unwrap();
    assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
}

#[test]
fn adapter_checkpoint_round_trip() {
    let adapter = freeze(FeatureNetwork::<f32>::new(small_scnn(3)).unwrap());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.safetensors");
    adapter.save(&path, AdapterMeta { tags: vec!["a".into(), "b".into(), "c".into()], ..Default::default() }).unwrap();
    let (back, header) = FrozenAdapter::<f32>::load(&path).unwrap();
    assert_eq!(back.digest(), adapter.digest());
    assert_eq!(header.scale_specs, adapter.scale_specs().to_vec());
    assert_eq!(header.tags.len(), 3);
    let (as64, _) = FrozenAdapter::<f64>::load(&path).unwrap();
    assert_eq!(as64.net().params().len(), adapter.net().params().len());
}
