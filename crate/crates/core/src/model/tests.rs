use super::check::{four_cell_table, model_gradcheck};
use super::checkpoint::{from_bytes, to_bytes};
use super::*;
use crate::cellgraph::labeled_knn_graph;
use crate::features::build_vocab;
use crate::ingest::{generate_tables, GenSpec};
use crate::rng::Stream;

fn small_dims() -> ModelDims {
    ModelDims {
        gcn_hidden: 8,
        text_hidden: 6,
        embed_dim: 4,
        mlp_hidden: 10,
        img_channels: 32,
    }
}

fn table() -> TableInstance {
    let spec = GenSpec {
        n_tables: 1,
        rows_range: [4, 4],
        cols_range: [3, 3],
        seed: 5,
        ..GenSpec::default()
    };
    generate_tables(&spec).unwrap().remove(0)
}

fn model(variant: Variant, direction: Direction, t: &TableInstance) -> Model {
    let vocab = build_vocab(std::slice::from_ref(t), 12).unwrap();
    let cfg = ModelConfig::new(variant, direction, small_dims(), Some(&vocab), 3).unwrap();
    Model::init(cfg, variant.uses_text().then_some(vocab)).unwrap()
}

#[test]
fn config_zeroes_unused_dims_and_validates() {
    let t = table();
    let m = model(Variant::Pos, Direction::Horizontal, &t);
    assert_eq!((m.config.dims.text_hidden, m.config.dims.img_channels), (0, 0));
    assert!(m.vocab.is_none() && m.config.vocab_fingerprint.is_none());
    assert!(!m.params.names().any(|n| n.starts_with("lstm") || n.starts_with("conv")));
    let full = model(Variant::Full, Direction::Vertical, &t);
    assert_eq!(full.params.len(), 18);
    let mut bad = full.config.clone();
    bad.dims.img_channels = 0;
    assert!(matches!(bad.validate(), Err(Error::Config(_))));
    assert!(ModelConfig::new(Variant::PosText, Direction::Horizontal, small_dims(), None, 1).is_err());
}

#[test]
fn init_is_seeded_and_biases_start_at_zero_except_forget_gate() {
    let t = table();
    let a = model(Variant::PosText, Direction::Horizontal, &t);
    let b = model(Variant::PosText, Direction::Horizontal, &t);
    assert_eq!(a, b);
    for (name, p) in a.params.iter() {
        if name == "lstm.bias" {
            let h = a.config.dims.text_hidden;
            for (i, v) in p.data().iter().enumerate() {
                let forget = (h..2 * h).contains(&i);
                assert_eq!(*v, if forget { FORGET_BIAS_INIT } else { 0.0 });
            }
        } else if name.ends_with("bias") {
            assert!(p.data().iter().all(|v| *v == 0.0), "{name}");
        }
    }
}

#[test]
fn zero_head_gives_one_half() {
    let t = table();
    for v in Variant::ALL {
        let mut m = model(v, Direction::Horizontal, &t);
        for name in ["mlp1.weight", "mlp1.bias", "mlp2.weight", "mlp2.bias"] {
            m.params.get_mut(name).unwrap().data_mut().fill(0.0);
        }
        let g = labeled_knn_graph(&t, 6).unwrap();
        let p = m.forward(&t, &g).unwrap();
        assert_eq!(p.len(), g.edges.len());
        assert!(p.iter().all(|x| *x == 0.5));
        // ties classify as positive
        let v_model = Model {
            config: ModelConfig {
                direction: Direction::Vertical,
                ..m.config.clone()
            },
            ..m.clone()
        };
        let pred = predict_relations(&m, &v_model, &t, &g, 0.5).unwrap();
        assert!(pred.iter().all(|e| e.label_h && e.label_v));
    }
}

#[test]
fn endpoint_order_does_not_matter() {
    let t = table();
    let m = model(Variant::PosText, Direction::Vertical, &t);
    let g = labeled_knn_graph(&t, 6).unwrap();
    let prep = m.prepare(&t, &g).unwrap();
    let p = m.edge_probabilities(&prep).unwrap();
    let mut swapped = prep.clone();
    for pr in &mut swapped.pairs {
        *pr = (pr.1, pr.0);
    }
    swapped.pairs.reverse();
    swapped.edges.reverse();
    let mut q = m.edge_probabilities(&swapped).unwrap();
    q.reverse();
    assert_eq!(p, q);
}

#[test]
fn unused_inputs_never_change_output() {
    let t = table();
    let g = labeled_knn_graph(&t, 6).unwrap();
    let mut scrambled = t.clone();
    let mut rng = Stream::new(9, "scramble");
    for c in &mut scrambled.cells {
        let n = 1 + rng.below(10);
        c.text = (0..n).map(|_| char::from(b'a' + rng.below(26) as u8)).collect();
    }
    let mut blank = t.clone();
    blank.image = crate::raster::Grayscale2D::filled(t.image.width(), t.image.height(), 1.0);

    let pos = model(Variant::Pos, Direction::Horizontal, &t);
    let base = pos.forward(&t, &g).unwrap();
    assert_eq!(base, pos.forward(&scrambled, &g).unwrap());
    assert_eq!(base, pos.forward(&blank, &g).unwrap());

    let text = model(Variant::PosText, Direction::Horizontal, &t);
    let base = text.forward(&t, &g).unwrap();
    assert_eq!(base, text.forward(&blank, &g).unwrap());
    assert_ne!(base, text.forward(&scrambled, &g).unwrap());

    let full = model(Variant::Full, Direction::Horizontal, &t);
    assert_ne!(full.forward(&t, &g).unwrap(), full.forward(&blank, &g).unwrap());
}

#[test]
fn forward_is_deterministic() {
    let t = table();
    let g = labeled_knn_graph(&t, 6).unwrap();
    let m = model(Variant::Full, Direction::Vertical, &t);
    assert_eq!(m.forward(&t, &g).unwrap(), m.forward(&t, &g).unwrap());
}

#[test]
fn mismatches_are_errors() {
    let t = table();
    let g = labeled_knn_graph(&t, 6).unwrap();
    let m = model(Variant::PosText, Direction::Horizontal, &t);
    let other_vocab = build_vocab(&[four_cell_table(1).unwrap()], 12).unwrap();
    let prep = PreparedTable::new(&t, &g, Some(&other_vocab), false).unwrap();
    assert!(matches!(m.edge_probabilities(&prep), Err(Error::ConfigMismatch(_))));

    let other = four_cell_table(2).unwrap();
    let g_other = labeled_knn_graph(&other, 6).unwrap();
    assert!(matches!(m.forward(&t, &g_other), Err(Error::Graph(_))));

    let full = model(Variant::Full, Direction::Horizontal, &t);
    let no_image = PreparedTable::new(&t, &g, full.vocab.as_ref(), false).unwrap();
    assert!(full.edge_probabilities(&no_image).is_err());
    assert!(predict_relations(&m, &m, &t, &g, 0.5).is_err());
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let t = table();
    let g = labeled_knn_graph(&t, 6).unwrap();
    for v in Variant::ALL {
        let mut m = model(v, Direction::Vertical, &t);
        let mut rng = Stream::new(4, "perturb");
        for (_, p) in m.params.iter_mut() {
            for x in p.data_mut() {
                *x += rng.uniform_in(-0.05, 0.05) as f32;
            }
        }
        let bytes = to_bytes(&m).unwrap();
        let back = from_bytes(&bytes).unwrap();
        assert_eq!(back, m);
        let a = m.forward(&t, &g).unwrap();
        let b = back.forward(&t, &g).unwrap();
        assert_eq!(
            a.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        );
        assert_eq!(to_bytes(&back).unwrap(), bytes);
    }
}

#[test]
fn checkpoint_errors_are_distinct() {
    let t = table();
    let m = model(Variant::Pos, Direction::Horizontal, &t);
    let bytes = to_bytes(&m).unwrap();

    for cut in [0, 10, 40, bytes.len() - 1] {
        assert!(matches!(from_bytes(&bytes[..cut]), Err(Error::CheckpointCorrupt(_))), "{cut}");
    }
    let mut flipped = bytes.clone();
    *flipped.last_mut().unwrap() ^= 1;
    assert!(matches!(from_bytes(&flipped), Err(Error::CheckpointCorrupt(_))));

    let json_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let json = std::str::from_utf8(&bytes[16..16 + json_len]).unwrap();
    let rebuild = |j: String| {
        let mut out = bytes[..8].to_vec();
        out.extend_from_slice(&(j.len() as u64).to_le_bytes());
        out.extend_from_slice(j.as_bytes());
        out.extend_from_slice(&bytes[16 + json_len..]);
        out
    };
    let v2 = rebuild(json.replacen("\"format_version\":1", "\"format_version\":2", 1));
    assert!(matches!(from_bytes(&v2), Err(Error::CheckpointVersion { found: 2, expected: 1 })));
    let reshaped = rebuild(json.replacen("\"shape\":[2]", "\"shape\":[1,2]", 1));
    assert!(matches!(from_bytes(&reshaped), Err(Error::CheckpointShape { .. })));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pos.ckpt");
    save_checkpoint(&m, &path).unwrap();
    assert!(load_checkpoint_as(&path, Variant::Pos, Some(Direction::Horizontal)).is_ok());
    assert!(matches!(
        load_checkpoint_as(&path, Variant::Full, None),
        Err(Error::ConfigMismatch(_))
    ));
    assert!(matches!(
        load_checkpoint_as(&path, Variant::Pos, Some(Direction::Vertical)),
        Err(Error::ConfigMismatch(_))
    ));
}

#[test]
fn loss_gradients_are_finite_and_loss_starts_near_ln2() {
    let t = table();
    let g = labeled_knn_graph(&t, 6).unwrap();
    let m = model(Variant::Full, Direction::Horizontal, &t);
    let prep = m.prepare(&t, &g).unwrap();
    let (loss, grads, probs) = m.loss_and_grads(&prep, None).unwrap();
    assert!((loss - std::f64::consts::LN_2).abs() < 0.5, "{loss}");
    assert_eq!(grads.len(), m.params.len());
    assert!(grads.iter().all(|(_, g)| g.all_finite()));
    assert_eq!(probs, m.edge_probabilities(&prep).unwrap());
}

#[test]
fn pos_model_gradcheck_passes() {
    let r = model_gradcheck(Variant::Pos, 11, 16).unwrap();
    assert!(r.passes(1e-4), "{}", r.to_table());
}
