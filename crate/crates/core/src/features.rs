//! Per-node features: position vectors, text ids, and image samples.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cellgraph::relative_positions;
use crate::error::{Error, Result};
use crate::nn::{Graph, Real, Tensor};
use crate::raster::Grayscale2D;
use crate::table::TableInstance;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const DEFAULT_MAX_LEN: usize = 32;
pub const IMAGE_SIZE: usize = 256;

/// Character vocabulary. Ids `0` and `1` are padding and unknown; observed
/// characters follow in codepoint order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub max_len: usize,
    /// Codepoint to id.
    tokens: BTreeMap<u32, usize>,
}

impl Vocabulary {
    pub fn from_chars(chars: impl IntoIterator<Item = char>, max_len: usize) -> Self {
        let mut cps: Vec<u32> = chars.into_iter().map(u32::from).collect();
        cps.sort_unstable();
        cps.dedup();
        let tokens = cps.into_iter().enumerate().map(|(i, c)| (c, i + 2)).collect();
        Self { max_len, tokens }
    }

    /// Total id count including PAD and UNK.
    pub fn len(&self) -> usize {
        self.tokens.len() + 2
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, ch: char) -> usize {
        self.tokens.get(&u32::from(ch)).copied().unwrap_or(UNK)
    }

    /// Short stable hash of the serialized vocabulary.
    pub fn fingerprint(&self) -> String {
        crate::fingerprint(self)
    }
}

/// One id per distinct character of the corpus text.
pub fn build_vocab(corpus: &[TableInstance], max_len: usize) -> Result<Vocabulary> {
    if corpus.is_empty() {
        return Err(Error::Usage("cannot build a vocabulary from no tables".into()));
    }
    if max_len == 0 {
        return Err(Error::Config("max_len must be positive".into()));
    }
    Ok(Vocabulary::from_chars(
        corpus
            .iter()
            .flat_map(|t| t.cells.iter())
            .flat_map(|c| c.text.chars()),
        max_len,
    ))
}

/// First `max_len` characters as ids, right-padded with `PAD`.
pub fn encode_text(v: &Vocabulary, s: &str) -> Vec<usize> {
    let mut ids: Vec<usize> = s.chars().take(v.max_len).map(|c| v.id(c)).collect();
    ids.resize(v.max_len, PAD);
    ids
}

/// 3x3 minimum filter (thickens dark strokes), then bilinear resize to
/// 256x256 with half-pixel centers.
pub fn preprocess_image(img: &Grayscale2D) -> Result<Grayscale2D> {
    if img.width() < 2 || img.height() < 2 {
        return Err(Error::Usage(format!(
            "image must be at least 2x2, got {}x{}",
            img.width(),
            img.height()
        )));
    }
    let dilated = min_filter3(img);
    Ok(resize_bilinear(&dilated, IMAGE_SIZE, IMAGE_SIZE))
}

pub(crate) fn min_filter3(img: &Grayscale2D) -> Grayscale2D {
    let (w, h) = (img.width(), img.height());
    // separable: horizontal then vertical
    let mut tmp = vec![0f32; w * h];
    for y in 0..h {
        for x in 0..w {
            let lo = x.saturating_sub(1);
            let hi = (x + 1).min(w - 1);
            tmp[y * w + x] = (lo..=hi).map(|i| img.get(i, y)).fold(f32::INFINITY, f32::min);
        }
    }
    let mut out = vec![0f32; w * h];
    for y in 0..h {
        let lo = y.saturating_sub(1);
        let hi = (y + 1).min(h - 1);
        for x in 0..w {
            out[y * w + x] = (lo..=hi).map(|j| tmp[j * w + x]).fold(f32::INFINITY, f32::min);
        }
    }
    Grayscale2D::new(w, h, out).expect("same size")
}

pub(crate) fn resize_bilinear(img: &Grayscale2D, ow: usize, oh: usize) -> Grayscale2D {
    let (w, h) = (img.width(), img.height());
    let axis = |o: usize, out_n: usize, in_n: usize| {
        let s = ((o as f64 + 0.5) * in_n as f64 / out_n as f64 - 0.5).clamp(0.0, (in_n - 1) as f64);
        let i0 = s.floor() as usize;
        let i1 = (i0 + 1).min(in_n - 1);
        (i0, i1, (s - i0 as f64) as f32)
    };
    let xs: Vec<_> = (0..ow).map(|x| axis(x, ow, w)).collect();
    let mut out = Vec::with_capacity(ow * oh);
    for y in 0..oh {
        let (y0, y1, fy) = axis(y, oh, h);
        for &(x0, x1, fx) in &xs {
            let top = img.get(x0, y0) * (1.0 - fx) + img.get(x1, y0) * fx;
            let bot = img.get(x0, y1) * (1.0 - fx) + img.get(x1, y1) * fx;
            out.push((top * (1.0 - fy) + bot * fy).clamp(0.0, 1.0));
        }
    }
    Grayscale2D::new(ow, oh, out).expect("same size")
}

/// Align-corners bilinear samples of a `C x H x W` map at normalized points.
/// Out-of-range points clamp to the border.
pub fn grid_sample<T: Real>(fmap: &Tensor<T>, points: &[(f64, f64)]) -> Result<Vec<Vec<T>>> {
    let mut g = Graph::new();
    let f = g.constant(fmap.clone());
    let out = g.grid_sample(f, points)?;
    let c = fmap.shape()[0];
    Ok(g.value(out).data().chunks(c.max(1)).map(<[T]>::to_vec).collect())
}

/// The three feature families of one node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureBundle {
    pub pos: [f64; 8],
    pub text_ids: Vec<usize>,
    /// Filled after image sampling; empty until then.
    pub img_feat: Vec<f32>,
}

/// Position and text features for every cell, in ascending cell-id order.
pub fn node_features(t: &TableInstance, vocab: &Vocabulary) -> Vec<FeatureBundle> {
    let nodes = relative_positions(t);
    t.cells_by_id()
        .into_iter()
        .zip(nodes)
        .map(|(c, n)| FeatureBundle {
            pos: n.position_vector(),
            text_ids: encode_text(vocab, &c.text),
            img_feat: Vec::new(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::table::fixtures::profit_table;

    fn with_texts(texts: &[&str]) -> TableInstance {
        let mut t = profit_table();
        t.cells.truncate(texts.len());
        for (c, s) in t.cells.iter_mut().zip(texts) {
            c.text = s.to_string();
        }
        t
    }

    #[test]
    fn vocab_from_two_strings() {
        let v = build_vocab(&[with_texts(&["ab", "bc"])], 8).unwrap();
        assert_eq!(v.len(), 5);
        assert_eq!((v.id('a'), v.id('b'), v.id('c')), (2, 3, 4));
        assert_eq!(v.id('z'), UNK);
        let again = build_vocab(&[with_texts(&["ab", "bc"])], 8).unwrap();
        assert_eq!(v, again);
        assert_eq!(v.fingerprint(), again.fingerprint());
        assert!(build_vocab(&[], 8).is_err());
    }

    #[test]
    fn encoding_pads_and_truncates() {
        let v = Vocabulary::from_chars("0123456789.".chars(), 8);
        assert_eq!(encode_text(&v, ""), vec![PAD; 8]);
        let ids = encode_text(&v, "0.79");
        assert!(ids[..4].iter().all(|i| *i >= 2));
        assert_eq!(&ids[4..], &[PAD; 4]);
        let long = encode_text(&v, "0123456789012");
        assert_eq!(long.len(), 8);
        assert!(long.iter().all(|i| *i != PAD));
    }

    #[test]
    fn vocab_json_round_trip() {
        let v = Vocabulary::from_chars("万元ab".chars(), 4);
        let back: Vocabulary = serde_json::from_str(&serde_json::to_string(&v).unwrap()).unwrap();
        assert_eq!(back, v);
    }

    #[test]
    fn min_filter_grows_a_dark_pixel() {
        let mut img = Grayscale2D::filled(7, 7, 1.0);
        img.set(3, 3, 0.0);
        let d = min_filter3(&img);
        for y in 0..7 {
            for x in 0..7 {
                let dark = (2..=4).contains(&x) && (2..=4).contains(&y);
                assert_eq!(d.get(x, y), if dark { 0.0 } else { 1.0 });
            }
        }
    }

    #[test]
    fn white_stays_white() {
        let out = preprocess_image(&Grayscale2D::filled(40, 13, 1.0)).unwrap();
        assert_eq!((out.width(), out.height()), (256, 256));
        assert!(out.data().iter().all(|v| *v == 1.0));
        assert!(preprocess_image(&Grayscale2D::filled(1, 5, 1.0)).is_err());
    }

    #[test]
    fn rule_survives_downscaling() {
        let mut img = Grayscale2D::filled(512, 512, 1.0);
        img.fill_rect(0, 200, 512, 201, 0.0);
        let out = preprocess_image(&img).unwrap();
        let dark_rows: Vec<usize> = (0..256).filter(|&y| out.get(128, y) < 0.99).collect();
        assert!((2..=3).contains(&dark_rows.len()), "{dark_rows:?}");
        assert!(dark_rows.contains(&100));
        assert!(out.get(128, 100) < 0.5);
        assert!(out.in_unit_range());
    }

    #[test]
    fn grid_sample_values() {
        let f = Tensor::<f64>::from_f64(vec![1, 2, 2], &[0.0, 1.0, 2.0, 3.0]).unwrap();
        let s = grid_sample(&f, &[(0.5, 0.5), (0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0), (-3.0, 9.0)]).unwrap();
        let flat: Vec<f64> = s.into_iter().flatten().collect();
        assert_eq!(flat, vec![1.5, 0.0, 1.0, 2.0, 3.0, 2.0]);

        let c = Tensor::<f32>::full(vec![3, 4, 5], 7.0);
        for v in grid_sample(&c, &[(0.13, 0.77), (0.9, 0.01)]).unwrap() {
            assert!(v.iter().all(|x| (x - 7.0).abs() < 1e-5), "{v:?}");
        }
    }

    #[test]
    fn node_features_follow_cell_ids() {
        let t = profit_table();
        let v = build_vocab(&[t.clone()], DEFAULT_MAX_LEN).unwrap();
        let f = node_features(&t, &v);
        assert_eq!(f.len(), 9);
        assert!(f.iter().all(|b| b.text_ids.len() == DEFAULT_MAX_LEN));
        assert!(f.iter().all(|b| b.pos.iter().all(|p| (0.0..=1.0).contains(p))));
    }
}
