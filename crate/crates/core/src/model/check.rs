//! Finite-difference checks of every layer and of the full edge loss.

use serde::{Deserialize, Serialize};

use super::{edge_loss, Direction, Model, ModelConfig, ModelDims, PreparedTable, Variant};
use crate::cellgraph::labeled_knn_graph;
use crate::error::Result;
use crate::features::{build_vocab, DEFAULT_MAX_LEN};
use crate::ingest::{rasterize, GenSpec};
use crate::raster::Grayscale2D;
use crate::nn::layers::{cross_entropy, embedding, graph_conv, mlp, normalized_adjacency, recurrent_encode};
use crate::nn::layers::{LstmParams, MlpParams};
use crate::nn::{gradcheck, Bindings, GradcheckReport, Graph, ParamSet, Tensor, Var};
use crate::rng::Stream;
use crate::table::{BBox, Cell, Span, TableInstance};

/// Named result of one check.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NamedCheck {
    pub name: String,
    pub report: GradcheckReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SuiteReport {
    pub seed: u64,
    pub samples: usize,
    pub checks: Vec<NamedCheck>,
}

impl SuiteReport {
    pub fn max_rel_err(&self) -> f64 {
        self.checks.iter().map(|c| c.report.max_rel_err()).fold(0.0, f64::max)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.checks.iter().all(|c| c.report.passes(tol))
    }

    /// One aligned block per check.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        for c in &self.checks {
            s += &format!("[{}] max_rel_err {:.3e}\n", c.name, c.report.max_rel_err());
            s += &c.report.to_table();
            s.push('\n');
        }
        s += &format!("overall max_rel_err {:.3e}\n", self.max_rel_err());
        s
    }
}

fn random(rng: &mut Stream, shape: Vec<usize>, scale: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.uniform_in(-scale, scale)).collect();
    Tensor::new(shape, data).expect("length matches")
}

/// `sum(x * c)` with a fixed random `c`, so every output coordinate matters.
fn project(g: &mut Graph<f64>, x: Var, c: &Tensor<f64>) -> Result<Var> {
    let c = g.constant(c.clone());
    let y = g.mul(x, c)?;
    Ok(g.sum(y))
}

fn params(entries: Vec<(&str, Tensor<f64>)>) -> ParamSet<f64> {
    let mut p = ParamSet::new();
    for (n, t) in entries {
        p.insert(n, t).expect("unique names");
    }
    p
}

/// Hand-built 2x2 table with short texts on a 600x240 page.
///
/// The page is large enough that the image path sees both ink and background
/// around every cell center, and the strings are short, so every parameter
/// receives a gradient well above finite-difference noise.
pub fn four_cell_table(seed: u64) -> Result<TableInstance> {
    let mut rng = Stream::new(seed, "four-cell");
    let texts = ["Name", "2017", "Yihua", "0.79"];
    let mut cells = Vec::new();
    for (i, text) in texts.iter().enumerate() {
        let (r, c) = (i / 2, i % 2);
        let x = 60.0 + 300.0 * c as f64 + rng.uniform_in(0.0, 40.0).round();
        let y = 50.0 + 110.0 * r as f64 + rng.uniform_in(0.0, 20.0).round();
        let w = 5.0 * text.chars().count() as f64 - 1.0;
        let bbox = BBox::new(x, y, x + w, y + 7.0);
        cells.push(Cell::new(i as u32, *text, bbox, Span::unit(r as u32), Span::unit(c as u32)));
    }
    let mut t = TableInstance {
        source_id: format!("four-cell-{seed}"),
        cells,
        image: Grayscale2D::filled(1, 1, 1.0),
        table_bbox: BBox::new(0.0, 0.0, 600.0, 240.0),
        n_rows: 2,
        n_cols: 2,
        unit: None,
    };
    let spec = GenSpec {
        dropped_line_probability: 0.0,
        seed,
        ..GenSpec::default()
    };
    t.image = rasterize(&t, &spec)?;
    Ok(t)
}

/// Gradient check of the full edge loss for one variant on a 4-cell table,
/// with default dimensions and small random perturbations of the biases.
pub fn model_gradcheck(variant: Variant, seed: u64, samples: usize) -> Result<GradcheckReport> {
    let t = four_cell_table(seed)?;
    let vocab = build_vocab(std::slice::from_ref(&t), DEFAULT_MAX_LEN)?;
    let cfg = ModelConfig::new(variant, Direction::Horizontal, ModelDims::default(), Some(&vocab), seed)?;
    let model = Model::init(cfg, variant.uses_text().then_some(vocab))?;
    let graph = labeled_knn_graph(&t, model.config.k)?;
    let prep = PreparedTable::new(&t, &graph, model.vocab.as_ref(), variant.uses_image())?;
    let mut p: ParamSet<f64> = model.params.cast();
    let mut rng = Stream::new(seed, "gradcheck-bias");
    for (name, t) in p.iter_mut() {
        if name.ends_with("bias") {
            for v in t.data_mut() {
                *v += rng.uniform_in(-0.1, 0.1);
            }
        }
    }
    let cfg = model.config.clone();
    gradcheck(
        |g: &mut Graph<f64>, b: &Bindings| Ok(edge_loss(&cfg, g, b, &prep, None)?.1),
        &p,
        samples,
    )
}

/// Per-layer checks on random small shapes.
pub fn layer_gradchecks(seed: u64, samples: usize) -> Result<Vec<NamedCheck>> {
    let mut rng = Stream::new(seed, "gradcheck-layers");
    let mut out = Vec::new();
    let mut run = |name: &str, r: GradcheckReport| {
        out.push(NamedCheck {
            name: name.to_string(),
            report: r,
        })
    };

    // core ops chained: matmul, add, softmax, sigmoid, tanh, concat, slice, mean
    let c = random(&mut rng, vec![4, 6], 1.0);
    let p = params(vec![
        ("a", random(&mut rng, vec![4, 3], 1.0)),
        ("b", random(&mut rng, vec![3, 3], 1.0)),
        ("d", random(&mut rng, vec![4, 3], 1.0)),
    ]);
    run(
        "core_ops",
        gradcheck(
            |g, b| {
                let (a, bb, d) = (b.get("a")?, b.get("b")?, b.get("d")?);
                let m = g.matmul(a, bb)?;
                let s = g.add(m, d)?;
                let sm = g.softmax(s)?;
                let sg = g.sigmoid(d);
                let th = g.tanh(a);
                let x = g.concat(&[sm, sg])?;
                let th2 = g.concat(&[th, th])?;
                let y = g.mul(x, th2)?;
                let z = g.slice_cols(y, 1, 6)?;
                let mean = g.mean(z);
                let proj = project(g, y, &c)?;
                g.add(mean, proj)
            },
            &p,
            samples,
        )?,
    );

    let ids = [1usize, 3, 3, 7, 0];
    let c = random(&mut rng, vec![5, 4], 1.0);
    let p = params(vec![("table", random(&mut rng, vec![9, 4], 1.0))]);
    run(
        "embedding",
        gradcheck(
            |g, b| {
                let e = embedding(g, b.get("table")?, &ids)?;
                let t = g.tanh(e);
                project(g, t, &c)
            },
            &p,
            samples,
        )?,
    );

    let seqs = vec![vec![2usize, 5, 1, 0], vec![3, 3, 0, 0], vec![4, 1, 2, 6]];
    let c = random(&mut rng, vec![3, 5], 1.0);
    let p = params(vec![
        ("embed", random(&mut rng, vec![7, 3], 1.0)),
        ("w_ih", random(&mut rng, vec![3, 20], 0.8)),
        ("w_hh", random(&mut rng, vec![5, 20], 0.8)),
        ("bias", random(&mut rng, vec![20], 0.3)),
    ]);
    run(
        "recurrent_encode",
        gradcheck(
            |g, b| {
                let lp = LstmParams {
                    embed: b.get("embed")?,
                    w_ih: b.get("w_ih")?,
                    w_hh: b.get("w_hh")?,
                    bias: b.get("bias")?,
                };
                let h = recurrent_encode(g, &lp, &seqs)?;
                project(g, h, &c)
            },
            &p,
            samples,
        )?,
    );

    let c = random(&mut rng, vec![3, 4, 4], 1.0);
    let p = params(vec![
        ("input", random(&mut rng, vec![2, 8, 8], 1.0)),
        ("weight", random(&mut rng, vec![3, 2, 3, 3], 0.5)),
        ("bias", random(&mut rng, vec![3], 0.2)),
    ]);
    run(
        "conv2d",
        gradcheck(
            |g, b| {
                let y = g.conv2d(b.get("input")?, b.get("weight")?, b.get("bias")?, 2, 1)?;
                let y = g.relu(y);
                project(g, y, &c)
            },
            &p,
            samples,
        )?,
    );

    let edges = [(0usize, 1usize), (1, 2), (0, 3), (3, 4)];
    let adj = normalized_adjacency::<f64>(5, &edges)?;
    let c = random(&mut rng, vec![5, 3], 1.0);
    let p = params(vec![
        ("h", random(&mut rng, vec![5, 4], 1.0)),
        ("weight", random(&mut rng, vec![4, 3], 1.0)),
        ("bias", random(&mut rng, vec![3], 0.3)),
    ]);
    run(
        "graph_conv",
        gradcheck(
            |g, b| {
                let a = g.constant(adj.clone());
                let y = graph_conv(g, b.get("h")?, a, b.get("weight")?, b.get("bias")?)?;
                project(g, y, &c)
            },
            &p,
            samples,
        )?,
    );

    let c = random(&mut rng, vec![6, 2], 1.0);
    let p = params(vec![
        ("x", random(&mut rng, vec![6, 5], 1.0)),
        ("w1", random(&mut rng, vec![5, 7], 1.0)),
        ("b1", random(&mut rng, vec![7], 0.3)),
        ("w2", random(&mut rng, vec![7, 2], 1.0)),
        ("b2", random(&mut rng, vec![2], 0.3)),
    ]);
    run(
        "mlp",
        gradcheck(
            |g, b| {
                let hp = MlpParams {
                    w1: b.get("w1")?,
                    b1: b.get("b1")?,
                    w2: b.get("w2")?,
                    b2: b.get("b2")?,
                };
                let y = mlp(g, b.get("x")?, &hp)?;
                project(g, y, &c)
            },
            &p,
            samples,
        )?,
    );

    let labels = [true, false, false, true, true, false];
    let weights = [1.0, 2.0, 0.5, 1.0, 3.0, 1.0];
    let p = params(vec![("logits", random(&mut rng, vec![6, 2], 2.0))]);
    run(
        "cross_entropy",
        gradcheck(
            |g, b| cross_entropy(g, b.get("logits")?, &labels, Some(&weights)),
            &p,
            samples,
        )?,
    );

    let points: Vec<(f64, f64)> = (0..7).map(|_| (rng.uniform(), rng.uniform())).collect();
    let c = random(&mut rng, vec![7, 3], 1.0);
    let p = params(vec![("fmap", random(&mut rng, vec![3, 5, 4], 1.0))]);
    run(
        "grid_sample",
        gradcheck(
            |g, b| {
                let s = g.grid_sample(b.get("fmap")?, &points)?;
                project(g, s, &c)
            },
            &p,
            samples,
        )?,
    );
    Ok(out)
}

/// Every layer check plus the full loss of each variant.
pub fn gradcheck_suite(seed: u64, samples: usize) -> Result<SuiteReport> {
    let mut checks = layer_gradchecks(seed, samples)?;
    for v in Variant::ALL {
        checks.push(NamedCheck {
            name: format!("model:{}", v.label()),
            report: model_gradcheck(v, seed, samples)?,
        });
    }
    Ok(SuiteReport {
        seed,
        samples,
        checks,
    })
}
