use malle_core::data::synth_corpus;
use malle_core::models::{build_dncnn, build_mallenet, LayerSpec, MalleInsert, ModelConfig, ModelGraph, NodeRef};
use malle_core::ops::ConvSpec;
use malle_core::{max_abs_diff, Rng, Shape, Tensor};

/// Parameter count from the layer list alone, independent of the store.
fn enumerate_params(m: &ModelGraph) -> usize {
    fn conv(s: &ConvSpec) -> usize {
        s.weight_shape().numel() + s.c_out
    }
    m.layers()
        .iter()
        .map(|l| match l {
            LayerSpec::Conv(s) => conv(s),
            LayerSpec::InvertedBottleneck { channels, expansion } => {
                let e = channels * expansion;
                (channels * e + e) + (9 * e + e) + (e * channels + channels)
            }
            LayerSpec::MalleConv(p) => {
                let w = p.width;
                (9 * p.channels * w + w) + 4 * (9 * w * w + w) + (w * p.exit_channels() + p.exit_channels())
            }
            _ => 0,
        })
        .sum()
}

#[test]
fn dncnn_param_count_closed_form() {
    let m = build_dncnn(3, 16, MalleInsert::None).unwrap();
    assert_eq!(m.param_count(), 3 * 3 * (3 * 16 + 16 * 16 + 16 * 3) + (16 + 16 + 3));
    assert_eq!(m.param_count(), enumerate_params(&m));
}

#[test]
fn mallenet_param_count_matches_enumeration() {
    let m = build_mallenet(16, 2, 1, 4).unwrap();
    assert_eq!(m.param_count(), enumerate_params(&m));
    assert_eq!(m.divisor(), 64);
    assert_eq!(m.malle_layers().len(), 4);
}

#[test]
fn forward_preserves_shape_with_padding() {
    let m = build_mallenet(16, 2, 1, 4).unwrap();
    let mut rng = Rng::new(1);
    let x = Tensor::rand_uniform(Shape::new(1, 100, 100, 3), 0.0, 1.0, &mut rng);
    let shapes = m.shape_check(Shape::new(1, 128, 128, 3)).unwrap();
    assert_eq!(*shapes.last().unwrap(), Shape::new(1, 128, 128, 3));
    let before = m.param_count();
    assert_eq!(m.forward(&x).unwrap().shape(), x.shape());
    assert_eq!(m.param_count(), before);

    let d = build_dncnn(3, 16, MalleInsert::None).unwrap();
    let x = Tensor::rand_uniform(Shape::new(1, 64, 64, 3), 0.0, 1.0, &mut rng);
    assert_eq!(d.forward(&x).unwrap().shape(), x.shape());
}

#[test]
fn identity_malleconv_matches_plain_graph_at_init() {
    let with = build_dncnn(3, 16, MalleInsert::Mid(1)).unwrap();
    // Same graph with the MalleConv removed: conv, relu, relu, conv.
    let mut layers = with.layers().to_vec();
    layers.remove(2);
    let without = ModelGraph::new(with.config().clone(), layers, 3, true, vec![0]).unwrap();
    let mut rng = Rng::new(2);
    let x = Tensor::rand_uniform(Shape::new(2, 32, 32, 3), 0.0, 1.0, &mut rng);
    let mut a = with.clone();
    a.init_weights(7).unwrap();
    let mut b = without;
    b.init_weights(7).unwrap();
    // Conv layers after the removed one shift index; copy them over by position.
    for (src, dst) in [("l4.w", "l3.w"), ("l4.b", "l3.b")] {
        b.params_mut().set(dst, a.params().get(src).unwrap().clone()).unwrap();
    }
    let diff = max_abs_diff(&a.forward(&x).unwrap(), &b.forward(&x).unwrap()).unwrap();
    assert!(diff < 1e-6, "{diff}");
}

#[test]
fn dncnn_variants_differ_in_one_layer() {
    let plain = build_dncnn(3, 16, MalleInsert::None).unwrap();
    let malle = build_dncnn(3, 16, MalleInsert::Mid(1)).unwrap();
    let layer_of = |n: &String| n.split('.').next().unwrap().to_string();
    let a: std::collections::BTreeSet<_> = plain.params().names().cloned().collect();
    let b: std::collections::BTreeSet<_> = malle.params().names().cloned().collect();
    let differing: std::collections::BTreeSet<_> = a.symmetric_difference(&b).map(layer_of).collect();
    assert_eq!(differing.into_iter().collect::<Vec<_>>(), ["l2"]);
}

#[test]
fn init_is_deterministic() {
    let mut a = build_mallenet(16, 2, 1, 4).unwrap();
    let mut b = a.clone();
    a.init_weights(11).unwrap();
    b.init_weights(11).unwrap();
    assert_eq!(a.params(), b.params());
    b.init_weights(12).unwrap();
    assert_ne!(a.params(), b.params());
}

#[test]
fn mallenet_init_drift_is_small() {
    let img = &synth_corpus(1, 64, 3).unwrap()[0];
    let x = img.to_tensor();
    let mut worst = 0.0f32;
    for seed in 0..3 {
        let mut m = build_mallenet(16, 2, 1, 4).unwrap();
        m.init_weights(seed).unwrap();
        worst = worst.max(max_abs_diff(&m.forward(&x).unwrap(), &x).unwrap());
    }
    eprintln!("mallenet init drift {worst}");
    assert!(worst < 0.1, "{worst}");
}

#[test]
fn shape_checker_rejects_broken_concat() {
    let cfg = ModelConfig::default();
    let layers = vec![
        LayerSpec::SpaceToChannel(2),
        LayerSpec::Conv(ConvSpec::same(1, 12, 8)),
        LayerSpec::Concat(NodeRef::Input),
        LayerSpec::Conv(ConvSpec::same(1, 11, 3)),
    ];
    assert!(ModelGraph::new(cfg.clone(), layers, 3, true, vec![0]).is_err());
    let forward_ref = vec![LayerSpec::Concat(NodeRef::Layer(1)), LayerSpec::Conv(ConvSpec::same(1, 6, 3))];
    assert!(ModelGraph::new(cfg, forward_ref, 3, true, vec![0]).is_err());
}

#[test]
fn checkpoint_roundtrip_forward_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let mut m = build_dncnn(3, 8, MalleInsert::Mid(3)).unwrap();
    m.init_weights(5).unwrap();
    let path = dir.path().join("m.mckp");
    m.save(&path).unwrap();
    let back = ModelGraph::load(&path).unwrap();
    let mut rng = Rng::new(3);
    let x = Tensor::rand_uniform(Shape::new(1, 24, 40, 3), 0.0, 1.0, &mut rng);
    assert_eq!(m.forward(&x).unwrap(), back.forward(&x).unwrap());
}

#[test]
fn builder_errors() {
    assert!(build_dncnn(1, 16, MalleInsert::None).is_err());
    assert!(build_dncnn(2, 16, MalleInsert::Mid(1)).is_err());
    assert!(build_mallenet(3, 2, 1, 4).is_err());
    let m = build_dncnn(3, 4, MalleInsert::None).unwrap();
    assert!(m.forward(&Tensor::zeros(Shape::new(1, 8, 8, 1))).is_err());
}
