//! Model checkpoints and code dumps on top of [`Container`].
//!
//! Header keys of a model checkpoint:
//!
//! ```text
//! kind=model
//! input_channels=1
//! depth=3
//! tied=true
//! seed=0
//! alpha=0.01
//! fista_iters=40
//! input_offset=0.13               (pixels are mapped to (p - offset) / scale)
//! input_scale=0.31
//! layer.<l>.scale_channels=1          (and the other LayerConfig fields)
//! history.epochs=5
//! history.<e>.recon_rel_err=0.41
//! history.<e>.objective=12.5,3.1,1.2
//! classifier.classes=10               (only when a head is stored)
//! classifier.layout=u1:32x24x24,x1:1x24x24
//! ```
//!
//! Blobs are `A.<bank>` and `B.<bank>` (one bank when tied), followed by
//! `classifier.weights`, `classifier.bias`, `classifier.mean` and
//! `classifier.std` for a stored head.

use std::path::Path;

use hcsc_core::classifier::{FeatureBlock, FeatureLayout, FeatureSource, LogisticModel};
use hcsc_core::inference::{Encoding, FistaSettings};
use hcsc_core::learning::EpochSummary;
use hcsc_core::model::{HierarchicalModel, LayerConfig};
use hcsc_core::{FilterBank, SignalTensor};

use super::container::{Blob, Container};
use super::DataError;
use crate::pipeline::InputTransform;

/// A logistic head together with the feature layout it was fitted on.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierHead {
    pub model: LogisticModel,
    pub layout: FeatureLayout,
    pub all_scales: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: HierarchicalModel,
    pub seed: u64,
    /// Solver settings the filters were trained with.
    pub fista: FistaSettings,
    pub input: InputTransform,
    pub history: Vec<EpochSummary>,
    pub classifier: Option<ClassifierHead>,
}

impl Checkpoint {
    pub fn new(model: HierarchicalModel, seed: u64, fista: FistaSettings) -> Self {
        Checkpoint {
            model,
            seed,
            fista,
            input: InputTransform::IDENTITY,
            history: Vec::new(),
            classifier: None,
        }
    }

    pub fn to_container(&self) -> Container {
        let m = &self.model;
        let mut c = Container::new();
        c.set("kind", "model");
        c.set("input_channels", m.input_channels());
        c.set("depth", m.depth());
        c.set("tied", m.is_tied());
        c.set("seed", self.seed);
        c.set("alpha", self.fista.step);
        c.set("fista_iters", self.fista.iters);
        c.set("input_offset", self.input.offset);
        c.set("input_scale", self.input.scale);
        for (i, cfg) in m.configs().iter().enumerate() {
            let p = format!("layer.{}.", i + 1);
            c.set(format!("{p}scale_channels"), cfg.scale_channels);
            c.set(format!("{p}detail_channels"), cfg.detail_channels);
            c.set(format!("{p}kernel_h"), cfg.kernel_h);
            c.set(format!("{p}kernel_w"), cfg.kernel_w);
            c.set(format!("{p}lambda"), cfg.lambda);
            c.set(format!("{p}gamma"), cfg.gamma);
            c.set(format!("{p}sigma_eps"), cfg.sigma_eps);
            c.set(format!("{p}sigma_x"), cfg.sigma_x);
            c.set(format!("{p}scale_filter_trainable"), cfg.scale_filter_trainable);
        }
        c.set("history.epochs", self.history.len());
        for h in &self.history {
            c.set(format!("history.{}.recon_rel_err", h.epoch), h.mean_recon_rel_err);
            c.set(format!("history.{}.objective", h.epoch), join(&h.mean_objective));
        }
        for (i, (a, b)) in m.scale_banks().iter().zip(m.detail_banks()).enumerate() {
            c.push_blob(bank_blob(&format!("A.{}", i + 1), a));
            c.push_blob(bank_blob(&format!("B.{}", i + 1), b));
        }
        if let Some(head) = &self.classifier {
            let lm = &head.model;
            c.set("classifier.classes", lm.classes);
            c.set("classifier.dim", lm.dim);
            c.set("classifier.all_scales", head.all_scales);
            c.set("classifier.layout", layout_string(&head.layout));
            let vec_blob = |name: &str, v: &[f32]| Blob {
                name: name.to_string(),
                shape: vec![v.len()],
                data: v.to_vec(),
            };
            c.push_blob(Blob {
                name: "classifier.weights".into(),
                shape: vec![lm.classes, lm.dim],
                data: lm.weights.clone(),
            });
            c.push_blob(vec_blob("classifier.bias", &lm.bias));
            c.push_blob(vec_blob("classifier.mean", &lm.mean));
            c.push_blob(vec_blob("classifier.std", &lm.std));
        }
        c
    }

    pub fn from_container(c: &Container) -> Result<Self, DataError> {
        expect_kind(c, "model")?;
        let input_channels: usize = c.parse("input_channels")?;
        let depth: usize = c.parse("depth")?;
        let tied: bool = c.parse("tied")?;
        let mut layers = Vec::with_capacity(depth);
        for l in 1..=depth {
            let p = format!("layer.{l}.");
            layers.push(LayerConfig {
                scale_channels: c.parse(&format!("{p}scale_channels"))?,
                detail_channels: c.parse(&format!("{p}detail_channels"))?,
                kernel_h: c.parse(&format!("{p}kernel_h"))?,
                kernel_w: c.parse(&format!("{p}kernel_w"))?,
                lambda: c.parse(&format!("{p}lambda"))?,
                gamma: c.parse(&format!("{p}gamma"))?,
                sigma_eps: c.parse(&format!("{p}sigma_eps"))?,
                sigma_x: c.parse(&format!("{p}sigma_x"))?,
                scale_filter_trainable: c.parse(&format!("{p}scale_filter_trainable"))?,
            });
        }
        let banks = if tied { 1 } else { depth };
        let mut scale = Vec::with_capacity(banks);
        let mut detail = Vec::with_capacity(banks);
        for i in 1..=banks {
            scale.push(blob_bank(c.blob(&format!("A.{i}"))?)?);
            detail.push(blob_bank(c.blob(&format!("B.{i}"))?)?);
        }
        let model = HierarchicalModel::from_parts(input_channels, layers, tied, scale, detail)?;

        let epochs: usize = c.parse("history.epochs")?;
        let mut history = Vec::with_capacity(epochs);
        for e in 1..=epochs {
            history.push(EpochSummary {
                epoch: e,
                mean_recon_rel_err: c.parse(&format!("history.{e}.recon_rel_err"))?,
                mean_objective: split(c.require(&format!("history.{e}.objective"))?)?,
            });
        }

        let classifier = match c.get("classifier.classes") {
            None => None,
            Some(_) => {
                let classes: usize = c.parse("classifier.classes")?;
                let dim: usize = c.parse("classifier.dim")?;
                let layout = parse_layout(c.require("classifier.layout")?)?;
                if layout.len() != dim {
                    return Err(DataError::SizeMismatch(format!(
                        "classifier layout has {} features but dim is {dim}",
                        layout.len()
                    )));
                }
                let weights = sized(c.blob("classifier.weights")?, &[classes, dim])?;
                let bias = sized(c.blob("classifier.bias")?, &[classes])?;
                let mean = sized(c.blob("classifier.mean")?, &[dim])?;
                let std = sized(c.blob("classifier.std")?, &[dim])?;
                Some(ClassifierHead {
                    model: LogisticModel {
                        classes,
                        dim,
                        weights,
                        bias,
                        mean,
                        std,
                    },
                    layout,
                    all_scales: c.parse("classifier.all_scales")?,
                })
            }
        };

        Ok(Checkpoint {
            model,
            seed: c.parse("seed")?,
            fista: FistaSettings {
                step: c.parse("alpha")?,
                iters: c.parse("fista_iters")?,
                record_objective: false,
            },
            input: InputTransform {
                offset: c.parse("input_offset")?,
                scale: c.parse("input_scale")?,
            },
            history,
            classifier,
        })
    }
}

pub fn save_checkpoint(path: impl AsRef<Path>, checkpoint: &Checkpoint) -> Result<(), DataError> {
    checkpoint.to_container().save(path)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, DataError> {
    let path = path.as_ref();
    Checkpoint::from_container(&Container::load(path)?).map_err(|e| e.at(path))
}

/// Codes of several examples: `x.<l>` and `u.<l>` blobs stacked over examples
/// (`n x channels x h x w`), the final objective of every layer in
/// `objective` (`n x depth`) and optionally the labels.
///
/// Encodings are appended one at a time so that callers can drop each
/// [`Encoding`] as soon as it is stored.
#[derive(Debug, Default)]
pub struct CodesBuilder {
    n: usize,
    shapes: Vec<(Shape3, Shape3)>,
    x: Vec<Vec<f32>>,
    u: Vec<Vec<f32>>,
    objective: Vec<f32>,
}

impl CodesBuilder {
    pub fn new() -> Self {
        CodesBuilder::default()
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn push(&mut self, e: &Encoding) -> Result<(), DataError> {
        let shapes: Vec<_> = e.x.iter().zip(&e.u).map(|(x, u)| (x.shape(), u.shape())).collect();
        if self.n == 0 {
            self.x = vec![Vec::new(); shapes.len()];
            self.u = vec![Vec::new(); shapes.len()];
            self.shapes = shapes;
        } else if shapes != self.shapes {
            return Err(DataError::DimMismatch(format!(
                "encoding {} has code shapes {shapes:?}, expected {:?}",
                self.n, self.shapes
            )));
        }
        for (l, (x, u)) in e.x.iter().zip(&e.u).enumerate() {
            self.x[l].extend_from_slice(x.data());
            self.u[l].extend_from_slice(u.data());
        }
        let depth = self.shapes.len();
        self.objective
            .extend((0..depth).map(|l| e.final_objective.get(l).copied().unwrap_or(f64::NAN) as f32));
        self.n += 1;
        Ok(())
    }

    pub fn finish(self, labels: Option<&[u8]>) -> Result<Container, DataError> {
        if self.n == 0 {
            return Err(DataError::SizeMismatch("no encodings to store".into()));
        }
        let depth = self.shapes.len();
        let mut c = Container::new();
        c.set("kind", "codes");
        c.set("examples", self.n);
        c.set("depth", depth);
        let stack = |s: (usize, usize, usize)| vec![self.n, s.0, s.1, s.2];
        for (l, (x, u)) in self.x.into_iter().zip(self.u).enumerate() {
            let (xs, us) = self.shapes[l];
            c.push_blob(Blob::new(format!("x.{}", l + 1), stack(xs), x)?);
            c.push_blob(Blob::new(format!("u.{}", l + 1), stack(us), u)?);
        }
        c.push_blob(Blob::new("objective", vec![self.n, depth], self.objective)?);
        if let Some(labels) = labels {
            if labels.len() != self.n {
                return Err(DataError::DimMismatch(format!(
                    "{} labels for {} encodings",
                    labels.len(),
                    self.n
                )));
            }
            c.push_blob(Blob::new(
                "labels",
                vec![labels.len()],
                labels.iter().map(|&l| l as f32).collect(),
            )?);
        }
        Ok(c)
    }
}

/// Stores `encodings` with [`CodesBuilder`].
pub fn codes_container(encodings: &[Encoding], labels: Option<&[u8]>) -> Result<Container, DataError> {
    let mut b = CodesBuilder::new();
    for e in encodings {
        b.push(e)?;
    }
    b.finish(labels)
}

/// Scale signals `[x_1, ..., x_L]` and detail signals `[u_1, ..., u_L]` of one example.
pub type ExampleCodes = (Vec<SignalTensor>, Vec<SignalTensor>);

type Shape3 = (usize, usize, usize);

/// Inverse of [`codes_container`]: per-example `(x, u)` lists.
pub fn codes_from_container(c: &Container) -> Result<Vec<ExampleCodes>, DataError> {
    expect_kind(c, "codes")?;
    let n: usize = c.parse("examples")?;
    let depth: usize = c.parse("depth")?;
    let mut out: Vec<ExampleCodes> = vec![(Vec::new(), Vec::new()); n];
    for l in 1..=depth {
        for name in ["x", "u"] {
            let b = c.blob(&format!("{name}.{l}"))?;
            let [bn, ch, h, w] = b.shape[..] else {
                return Err(DataError::DimMismatch(format!("{name}.{l} must be 4-D")));
            };
            if bn != n {
                return Err(DataError::DimMismatch(format!(
                    "{name}.{l} holds {bn} examples, expected {n}"
                )));
            }
            let plane = ch * h * w;
            for (i, slot) in out.iter_mut().enumerate() {
                let t = SignalTensor::from_vec(ch, h, w, b.data[i * plane..(i + 1) * plane].to_vec())?;
                if name == "x" {
                    slot.0.push(t);
                } else {
                    slot.1.push(t);
                }
            }
        }
    }
    Ok(out)
}

fn expect_kind(c: &Container, kind: &str) -> Result<(), DataError> {
    let found = c.require("kind")?;
    if found != kind {
        return Err(DataError::Header(format!("expected a {kind} container, found {found}")));
    }
    Ok(())
}

fn bank_blob(name: &str, bank: &FilterBank) -> Blob {
    let (o, i, h, w) = bank.shape();
    Blob {
        name: name.to_string(),
        shape: vec![o, i, h, w],
        data: bank.data().to_vec(),
    }
}

fn blob_bank(b: &Blob) -> Result<FilterBank, DataError> {
    let [o, i, h, w] = b.shape[..] else {
        return Err(DataError::DimMismatch(format!("filter blob {} must be 4-D", b.name)));
    };
    Ok(FilterBank::from_vec(o, i, h, w, b.data.clone())?)
}

fn sized(b: &Blob, shape: &[usize]) -> Result<Vec<f32>, DataError> {
    if b.shape != shape {
        return Err(DataError::DimMismatch(format!(
            "blob {} has shape {:?}, expected {shape:?}",
            b.name, b.shape
        )));
    }
    Ok(b.data.clone())
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn split(s: &str) -> Result<Vec<f64>, DataError> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|p| p.parse().map_err(|_| DataError::Header(format!("bad number {p:?}"))))
        .collect()
}

fn layout_string(layout: &FeatureLayout) -> String {
    layout
        .blocks
        .iter()
        .map(|b| {
            let (tag, l) = match b.source {
                FeatureSource::Detail(l) => ('u', l),
                FeatureSource::Scale(l) => ('x', l),
            };
            format!("{tag}{l}:{}x{}x{}", b.shape.0, b.shape.1, b.shape.2)
        })
        .collect::<Vec<_>>()
        .join(",")
}

fn parse_layout(s: &str) -> Result<FeatureLayout, DataError> {
    let bad = || DataError::Header(format!("bad feature layout {s:?}"));
    let mut blocks = Vec::new();
    for part in s.split(',').filter(|p| !p.is_empty()) {
        let (src, shape) = part.split_once(':').ok_or_else(bad)?;
        let l: usize = src.get(1..).and_then(|v| v.parse().ok()).ok_or_else(bad)?;
        let source = match src.as_bytes()[0] {
            b'u' => FeatureSource::Detail(l),
            b'x' => FeatureSource::Scale(l),
            _ => return Err(bad()),
        };
        let dims: Vec<usize> = shape
            .split('x')
            .map(|d| d.parse().map_err(|_| bad()))
            .collect::<Result<_, _>>()?;
        let [c, h, w] = dims[..] else { return Err(bad()) };
        blocks.push(FeatureBlock {
            source,
            shape: (c, h, w),
        });
    }
    Ok(FeatureLayout { blocks })
}
