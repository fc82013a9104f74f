use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use hcsc_core::classifier::FitSettings;
use hcsc_core::inference::{encode, encode_batch, reconstruct, relative_error, FistaSettings};
use hcsc_core::learning::{train, BatchRecord, EpochSummary, TrainMonitor, TrainSettings};
use hcsc_core::model::{HierarchicalModel, LayerConfig};
use hcsc_core::SignalTensor;

use super::*;
use crate::dataio::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, ClassifierHead, CodesBuilder};
use crate::dataio::metrics::MetricsWriter;
use crate::dataio::montage::Montage;
use crate::dataio::{Dataset, Split};
use crate::pipeline::{self, InputTransform, ModelSpec};

pub(super) fn dispatch(command: Command, out: &mut (dyn Write + Send)) -> Result<(), CliError> {
    let threads = match &command {
        Command::Train(a) => a.common.threads,
        Command::Encode(a) => a.common.threads,
        Command::Reconstruct(a) => a.common.threads,
        Command::Classify(a) => a.common.threads,
        Command::Visualize(a) => a.common.threads,
        Command::Eval(a) => a.common.threads,
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool
        .build()
        .map_err(|e| CliError::Config(format!("cannot start thread pool: {e}")))?;
    pool.install(|| match command {
        Command::Train(a) => cmd_train(&a, out),
        Command::Encode(a) => cmd_encode(&a, out),
        Command::Reconstruct(a) => cmd_reconstruct(&a, out),
        Command::Classify(a) => cmd_classify(&a, out),
        Command::Visualize(a) => cmd_visualize(&a, out),
        Command::Eval(a) => cmd_eval(&a, out),
    })
}

fn load_split(data: &DataArgs, split: Split) -> Result<Dataset, CliError> {
    let mut d = Dataset::load_mnist(&data.data_dir, split)?;
    let limit = match split {
        Split::Train => data.train_subset,
        Split::Test => data.test_subset,
    };
    if let Some(n) = limit {
        d.truncate(n);
    }
    if d.is_empty() {
        return Err(CliError::Config(format!("the {} split is empty", split.name())));
    }
    Ok(d)
}

fn split_of(s: SplitArg) -> Split {
    match s {
        SplitArg::Train => Split::Train,
        SplitArg::Test => Split::Test,
    }
}

fn out_file(common: &CommonArgs, name: &str) -> Result<PathBuf, CliError> {
    fs::create_dir_all(&common.out)?;
    Ok(common.out.join(name))
}

/// Loads a checkpoint and applies solver overrides to every layer.
fn load_model(path: &Path, o: &SolverOverrides) -> Result<Checkpoint, CliError> {
    let mut ck = load_checkpoint(path)?;
    if o.lambda.is_some() || o.gamma.is_some() {
        let first = ck.model.config(1).clone();
        ck.model
            .set_hyperparameters(o.lambda.unwrap_or(first.lambda), o.gamma.unwrap_or(first.gamma));
        for cfg in ck.model.configs() {
            cfg.validate()?;
        }
    }
    if let Some(step) = o.alpha {
        ck.fista.step = step;
    }
    if let Some(iters) = o.fista_iters {
        ck.fista.iters = iters;
    }
    ck.fista.validate()?;
    Ok(ck)
}

fn describe(model: &HierarchicalModel) -> String {
    let layers = model.depth();
    let s = if layers == 1 { "" } else { "s" };
    if model.is_tied() && layers > 1 {
        format!("{layers} layer{s} (tied)")
    } else {
        format!("{layers} layer{s}")
    }
}

/// Prints epoch summaries, evaluates the probe set and forwards batch
/// records to the metrics file.
struct Reporter<'a> {
    out: &'a mut (dyn Write + Send),
    metrics: MetricsWriter<BufWriter<File>>,
    probe: &'a [SignalTensor],
    fista: FistaSettings,
    error: Option<CliError>,
}

impl TrainMonitor for Reporter<'_> {
    fn on_batch(&mut self, record: &BatchRecord) {
        self.metrics.on_batch(record);
    }

    fn on_epoch(&mut self, s: &EpochSummary, model: &HierarchicalModel) {
        self.metrics.on_epoch(s, model);
        if self.error.is_some() {
            return;
        }
        let objective: Vec<String> = s.mean_objective.iter().map(|o| format!("{o:.4}")).collect();
        let mut line = format!(
            "epoch {} recon_rel_err {:.5} objective [{}]",
            s.epoch,
            s.mean_recon_rel_err,
            objective.join(", ")
        );
        if !self.probe.is_empty() {
            match pipeline::probe_error(model, self.probe, &self.fista) {
                Ok(e) => line.push_str(&format!(" probe_rel_err {e:.5}")),
                Err(e) => {
                    self.error = Some(e.into());
                    return;
                }
            }
        }
        if let Err(e) = writeln!(self.out, "{line}") {
            self.error = Some(e.into());
        }
    }
}

fn cmd_train(a: &TrainArgs, out: &mut (dyn Write + Send)) -> Result<(), CliError> {
    let spec = ModelSpec {
        layers: a.model.layers,
        tied: a.model.tied,
        layer: LayerConfig {
            scale_channels: a.model.scale_channels,
            detail_channels: a.model.detail_channels,
            kernel_h: a.model.kernel,
            kernel_w: a.model.kernel,
            lambda: a.solver.lambda,
            gamma: a.solver.gamma,
            scale_filter_trainable: a.model.trainable_scale,
            ..LayerConfig::default()
        },
    };
    let fista = FistaSettings {
        step: a.solver.alpha,
        iters: a.solver.fista_iters,
        record_objective: false,
    };
    let settings = TrainSettings {
        epochs: a.epochs,
        batch_size: a.batch_size,
        dict_lr: a.dict_lr,
        fista,
        seed: a.common.seed,
        shuffle: true,
    };
    settings.validate()?;
    let mut model = spec.init(1, a.common.seed)?;

    let data = load_split(&a.data, Split::Train)?;
    let input = match a.input_norm {
        InputNorm::Standard => InputTransform::standardize(&data.images),
        InputNorm::None => InputTransform::IDENTITY,
    };
    let images = input.apply_all(&data.images);
    drop(data);
    if model
        .code_size(model.depth(), (images[0].height(), images[0].width()))
        .is_none()
    {
        return Err(CliError::Config(format!(
            "{} layers of {}x{} kernels do not fit a {}x{} image",
            a.model.layers,
            a.model.kernel,
            a.model.kernel,
            images[0].height(),
            images[0].width()
        )));
    }

    let model_path = out_file(&a.common, "model.hcsc")?;
    let metrics_path = a.common.out.join("metrics.csv");
    let probe = &images[..a.probe.min(images.len())];
    writeln!(
        out,
        "training {} on {} images: {} trainable parameters, lambda {}, alpha {}, K {}",
        describe(&model),
        images.len(),
        model.trainable_param_count(),
        a.solver.lambda,
        a.solver.alpha,
        a.solver.fista_iters
    )?;
    if !probe.is_empty() {
        writeln!(
            out,
            "epoch 0 probe_rel_err {:.5}",
            pipeline::probe_error(&model, probe, &fista)?
        )?;
    }
    let metrics = MetricsWriter::new(BufWriter::new(File::create(&metrics_path)?))?;
    let mut reporter = Reporter {
        out,
        metrics,
        probe,
        fista,
        error: None,
    };
    let history = train(&mut model, &images, &settings, &mut reporter)?;
    let Reporter {
        out, metrics, error, ..
    } = reporter;
    if let Some(e) = error {
        return Err(e);
    }
    metrics.finish()?;

    let ck = Checkpoint {
        model,
        seed: a.common.seed,
        fista,
        input,
        history: history.epochs,
        classifier: None,
    };
    save_checkpoint(&model_path, &ck)?;
    writeln!(out, "wrote {} and {}", model_path.display(), metrics_path.display())?;
    Ok(())
}

fn cmd_encode(a: &EncodeArgs, out: &mut (dyn Write + Send)) -> Result<(), CliError> {
    let ck = load_model(&a.model, &a.solver)?;
    let data = load_split(&a.data, split_of(a.split))?;
    let depth = ck.model.depth();
    let mut builder = CodesBuilder::new();
    let mut objective = vec![0.0; depth];
    let mut nonzero = vec![0.0; depth];
    for chunk in data.images.chunks(256) {
        let chunk = ck.input.apply_all(chunk);
        for e in encode_batch(&ck.model, &chunk, &ck.fista)? {
            for l in 0..depth {
                objective[l] += e.final_objective[l];
                nonzero[l] += e.u[l].nonzero_fraction();
            }
            builder.push(&e)?;
        }
    }
    let n = builder.len() as f64;
    let path = out_file(&a.common, "codes.hcsc")?;
    builder.finish(Some(&data.labels))?.save(&path)?;
    writeln!(out, "encoded {} images with {}", data.len(), describe(&ck.model))?;
    for l in 0..depth {
        writeln!(
            out,
            "layer {} objective {:.5} u_nonzero {:.5}",
            l + 1,
            objective[l] / n,
            nonzero[l] / n
        )?;
    }
    writeln!(out, "wrote {}", path.display())?;
    Ok(())
}

fn cmd_reconstruct(a: &ReconstructArgs, out: &mut (dyn Write + Send)) -> Result<(), CliError> {
    let ck = load_model(&a.model, &a.solver)?;
    let mut data = load_split(&a.data, split_of(a.split))?;
    data.truncate(a.count.max(1));
    let images = ck.input.apply_all(&data.images);
    let encodings = encode_batch(&ck.model, &images, &ck.fista)?;
    let depth = ck.model.depth();
    let mut inputs = Vec::with_capacity(images.len());
    for img in &data.images {
        inputs.push(img.clone());
    }
    stack_montage(&inputs)?.save(&out_file(&a.common, "reconstruct_input.pgm")?)?;
    writeln!(
        out,
        "reconstructed {} images with {}",
        images.len(),
        describe(&ck.model)
    )?;
    for l in 1..=depth {
        let mut err = 0.0;
        let mut recons = Vec::with_capacity(images.len());
        for (img, enc) in images.iter().zip(&encodings) {
            let r = reconstruct(&ck.model, enc, l)?;
            err += relative_error(img, &r);
            recons.push(ck.input.invert(&r));
        }
        let path = out_file(&a.common, &format!("reconstruct_layer{l}.pgm"))?;
        stack_montage(&recons)?.save(&path)?;
        writeln!(
            out,
            "layer {l} rel_err {:.5} -> {}",
            err / images.len() as f64,
            path.display()
        )?;
    }
    Ok(())
}

fn stack_montage(images: &[SignalTensor]) -> Result<Montage, CliError> {
    let planes: Vec<&[f32]> = images
        .iter()
        .flat_map(|t| (0..t.channels()).map(move |c| t.channel(c)))
        .collect();
    Ok(Montage::from_planes(
        &planes,
        images[0].height(),
        images[0].width(),
        None,
    )?)
}

fn cmd_classify(a: &ClassifyArgs, out: &mut (dyn Write + Send)) -> Result<(), CliError> {
    let mut ck = load_model(&a.model, &a.solver)?;
    let train_set = load_split(&a.data, Split::Train)?;
    let test_set = match a.data.test_subset {
        Some(0) => None,
        _ => Some(load_split(&a.data, Split::Test)?),
    };
    let fit = FitSettings {
        lr: a.clf_lr,
        epochs: a.clf_epochs,
        batch_size: a.clf_batch_size,
        l2: a.clf_l2,
        seed: a.common.seed,
    };
    let train_images = ck.input.apply_all(&train_set.images);
    let (test_images, test_labels) = match &test_set {
        Some(t) => (ck.input.apply_all(&t.images), t.labels_usize()),
        None => (Vec::new(), Vec::new()),
    };
    let report = pipeline::classify(
        &ck.model,
        &ck.fista,
        &train_images,
        &train_set.labels_usize(),
        &test_images,
        &test_labels,
        &fit,
        a.all_scales,
    )?;
    let pct = |v: f64| {
        if v.is_nan() {
            "n/a".to_string()
        } else {
            format!("{:.2}%", 100.0 * v)
        }
    };
    writeln!(
        out,
        "{} train / {} test images, {} features",
        train_images.len(),
        test_images.len(),
        report.feature_dim
    )?;
    writeln!(out, "| Model | Train accuracy | Test accuracy | Parameters |")?;
    writeln!(out, "|---|---|---|---|")?;
    writeln!(
        out,
        "| {} | {} | {} | {} |",
        describe(&ck.model),
        pct(report.train_accuracy),
        pct(report.test_accuracy),
        report.trainable_params
    )?;
    ck.classifier = Some(ClassifierHead {
        model: report.head,
        layout: report.layout,
        all_scales: a.all_scales,
    });
    let path = out_file(&a.common, "classifier.hcsc")?;
    save_checkpoint(&path, &ck)?;
    writeln!(out, "wrote {}", path.display())?;
    Ok(())
}

fn cmd_visualize(a: &VisualizeArgs, out: &mut (dyn Write + Send)) -> Result<(), CliError> {
    let ck = load_model(&a.model, &a.solver)?;
    let depth = ck.model.depth();
    if a.layer == 0 || a.layer > depth {
        return Err(CliError::Model(hcsc_core::Error::Argument(format!(
            "layer {} out of range 1..={depth}",
            a.layer
        ))));
    }
    match a.what {
        What::Filters => {
            let (bank, name) = match a.bank {
                BankArg::A => (ck.model.a(a.layer), "A"),
                BankArg::B => (ck.model.b(a.layer), "B"),
            };
            let path = out_file(&a.common, &format!("filters_{name}{}.pgm", a.layer))?;
            let m = Montage::from_filters(bank, a.columns)?;
            m.save(&path)?;
            let (o, i, h, w) = bank.shape();
            writeln!(
                out,
                "{name}_{} {o}x{i}x{h}x{w} -> {} ({}x{})",
                a.layer,
                path.display(),
                m.width,
                m.height
            )?;
        }
        What::Codes => {
            let data = load_split(&a.data, split_of(a.split))?;
            let img = data.images.get(a.image).ok_or_else(|| {
                CliError::Config(format!("image {} out of range (split has {})", a.image, data.len()))
            })?;
            let enc = encode(&ck.model, &ck.input.apply(img), &ck.fista)?;
            let (x, u) = (&enc.x[a.layer - 1], &enc.u[a.layer - 1]);
            let xp = out_file(&a.common, &format!("codes_x{}.pgm", a.layer))?;
            let up = out_file(&a.common, &format!("codes_u{}.pgm", a.layer))?;
            Montage::from_tensor(x, a.columns)?.save(&xp)?;
            Montage::from_tensor(u, a.columns)?.save(&up)?;
            writeln!(
                out,
                "image {} (label {}) layer {}: x {:?} -> {}, u {:?} -> {}",
                a.image,
                data.labels[a.image],
                a.layer,
                x.shape(),
                xp.display(),
                u.shape(),
                up.display()
            )?;
            writeln!(
                out,
                "u_nonzero {:.5} at lambda {}",
                u.nonzero_fraction(),
                ck.model.config(a.layer).lambda
            )?;
        }
    }
    Ok(())
}

fn cmd_eval(a: &EvalArgs, out: &mut (dyn Write + Send)) -> Result<(), CliError> {
    let ck = load_model(&a.model, &a.solver)?;
    let data = load_split(&a.data, Split::Test)?;
    let images = ck.input.apply_all(&data.images);
    let depth = ck.model.depth();
    let head = ck.classifier.as_ref();
    let stats = pipeline::code_stats(&ck.model, &images, &ck.fista, head.map(|h| h.all_scales))?;
    writeln!(out, "{} on {} test images", describe(&ck.model), images.len())?;
    for l in 0..depth {
        writeln!(
            out,
            "layer {} rel_err {:.5} u_nonzero {:.5}",
            l + 1,
            stats.rel_err[l],
            stats.u_nonzero[l]
        )?;
    }
    match (head, &stats.features) {
        (Some(head), Some(x)) => {
            if x.layout() != Some(&head.layout) {
                return Err(CliError::Data(crate::dataio::DataError::DimMismatch(
                    "features do not match the stored classifier layout".into(),
                )));
            }
            let acc = head.model.accuracy(x, &data.labels_usize())?;
            writeln!(out, "test_accuracy {:.4}", acc)?;
        }
        _ => writeln!(out, "no classifier head stored; run `hcsc classify` first")?,
    }
    writeln!(out, "trainable_params {}", ck.model.trainable_param_count())?;
    Ok(())
}
