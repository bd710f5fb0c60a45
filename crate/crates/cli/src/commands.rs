//! One function per subcommand. Each writes its CSVs and a resolved copy of
//! the configuration into the output directory.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use pcdm_core::codec::{compress, decompress, default_aux_words};
use pcdm_core::diffusion::{
    cascaded_loss, cascaded_loss_with_grad, cvdm_loss, sample, train, CascadedModel, NoiseSchedule, VlbMode,
};
use pcdm_core::emd::bound_suite;
use pcdm_core::hvp::{gram_matrix, jacobian_matrix, volume_factor, HierarchyKind, HierarchySpec};
use pcdm_core::io::write_image;
use pcdm_core::ood::{auroc, OodScorer};
use pcdm_core::tensor::dequantize_centered;
use pcdm_core::{dequantize, ImageU8, Rng, Tensor};

use crate::config::ExperimentConfig;
use crate::data::{constant_images, uniform_noise};

/// Independent random streams of a run, all derived from the run seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    TrainData,
    EvalData,
    Init,
    Train,
    Eval,
    Sample,
    Ood,
    OodData,
    Emd,
    Aux,
}

pub fn stream(seed: u64, which: Stream) -> Rng {
    let mut root = Rng::new(seed);
    root.children(which as usize + 1).pop().expect("at least one child")
}

/// A failed invariant or acceptance check, reported with exit code 1.
#[derive(Debug)]
pub struct CheckFailed(pub String);

impl std::fmt::Display for CheckFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for CheckFailed {}

fn prepare_out(cfg: &ExperimentConfig, command: &str) -> Result<PathBuf> {
    let dir = cfg.out_dir();
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(format!("{command}.config"));
    fs::write(&path, cfg.resolved()).with_context(|| format!("writing {}", path.display()))?;
    Ok(dir)
}

fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush().with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn train_set(cfg: &ExperimentConfig, spec: &HierarchySpec, count: usize) -> Result<Vec<ImageU8>> {
    cfg.dataset(count, stream(cfg.seed()?, Stream::TrainData).next_u64())?.generate(spec)
}

fn eval_set(cfg: &ExperimentConfig, spec: &HierarchySpec) -> Result<Vec<ImageU8>> {
    cfg.dataset(cfg.get("eval_count")?, stream(cfg.seed()?, Stream::EvalData).next_u64())?.generate(spec)
}

fn load_model(path: &Path) -> Result<CascadedModel> {
    CascadedModel::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

/// Fresh model from the configuration.
pub fn init_model(cfg: &ExperimentConfig) -> Result<CascadedModel> {
    let spec = cfg.hierarchy()?;
    Ok(CascadedModel::init(
        spec,
        cfg.schedule()?,
        cfg.get("steps")?,
        &cfg.hidden()?,
        &mut stream(cfg.seed()?, Stream::Init),
    )?)
}

pub fn cmd_train(cfg: &ExperimentConfig) -> Result<()> {
    let dir = prepare_out(cfg, "train")?;
    let mut model = init_model(cfg)?;
    let tc = cfg.train_config()?;
    let data = train_set(cfg, &model.hierarchy, cfg.get("train_count")?)?;
    let every = (tc.iterations / 10).max(1);
    let report = train(&mut model, &data, &tc, &mut stream(cfg.seed()?, Stream::Train), |row| {
        if (row.step + 1) % every == 0 {
            eprintln!("step {:>6}  loss {:.4} nats/dim  {:.3} bpd", row.step + 1, row.loss_nats, row.bpd_estimate);
        }
    })?;
    let levels = model.hierarchy.levels;
    let mut header = vec!["step".to_string(), "loss_nats".into(), "bpd_estimate".into()];
    header.extend((1..=levels).map(|s| format!("scale_{s}_bpd")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    write_csv(
        &dir.join("metrics.csv"),
        &header,
        report.rows.iter().map(|r| {
            let mut row = vec![r.step.to_string(), r.loss_nats.to_string(), r.bpd_estimate.to_string()];
            row.extend(r.per_scale_bpd.iter().map(f64::to_string));
            row
        }),
    )?;
    let path = cfg.out_path("checkpoint");
    model.save(&path).with_context(|| format!("writing {}", path.display()))?;
    println!("trained {} parameters; checkpoint {}", model.num_params(), path.display());
    Ok(())
}

/// Per-image FullSum bound of `images`, with uniform dequantization drawn from `rng`.
pub fn eval_bpd(model: &CascadedModel, images: &[ImageU8], folded: bool, rng: &mut Rng) -> Result<Vec<[f64; 4]>> {
    images
        .iter()
        .map(|img| {
            let x = dequantize(img, rng);
            let b = if folded {
                cvdm_loss(model, &x, rng, VlbMode::FullSum)?
            } else {
                cascaded_loss(model, &x, rng, VlbMode::FullSum)?
            };
            Ok([b.bpd, b.l0, b.lk_sum, b.lt])
        })
        .collect()
}

pub fn cmd_eval(cfg: &ExperimentConfig) -> Result<()> {
    let dir = prepare_out(cfg, "eval")?;
    let steps: usize = cfg.get("eval_steps")?;
    let mut runs = vec![("pcdm", cfg.out_path("checkpoint"), false)];
    if !cfg.raw("cvdm_checkpoint").is_empty() {
        runs.push(("cvdm", cfg.out_path("cvdm_checkpoint"), true));
    }
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for (name, path, folded) in runs {
        let mut model = load_model(&path)?;
        if steps > 0 {
            model = model.with_steps(steps)?;
        }
        if folded && model.hierarchy.kind != HierarchyKind::NearestNeighbor {
            bail!("cvdm_checkpoint must hold a nearest-neighbour model");
        }
        let images = eval_set(cfg, &model.hierarchy)?;
        let terms = eval_bpd(&model, &images, folded, &mut stream(cfg.seed()?, Stream::Eval))?;
        let mean = terms.iter().map(|t| t[0]).sum::<f64>() / terms.len().max(1) as f64;
        println!("{name}: {mean:.4} bits/dim over {} images (T = {})", images.len(), model.steps);
        summary.push(vec![
            name.to_string(),
            model.hierarchy.kind.to_string(),
            mean.to_string(),
            images.len().to_string(),
        ]);
        rows.extend(terms.iter().enumerate().map(|(i, t)| {
            let mut row = vec![name.to_string(), i.to_string()];
            row.extend(t.iter().map(f64::to_string));
            row
        }));
    }
    write_csv(&dir.join("eval.csv"), &["model", "image_id", "bpd", "l0_nats", "lk_nats", "lt_nats"], rows)?;
    write_csv(&dir.join("eval_summary.csv"), &["model", "hierarchy", "mean_bpd", "images"], summary)
}

fn image_name(prefix: &str, i: usize, img: &ImageU8) -> String {
    format!("{prefix}_{i:04}.{}", if img.channels() == 1 { "pgm" } else { "ppm" })
}

fn write_images(dir: &Path, prefix: &str, images: &[ImageU8]) -> Result<()> {
    for (i, img) in images.iter().enumerate() {
        let path = dir.join(image_name(prefix, i, img));
        write_image(&path, img).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

pub fn cmd_sample(cfg: &ExperimentConfig) -> Result<()> {
    let dir = prepare_out(cfg, "sample")?;
    let model = load_model(&cfg.out_path("checkpoint"))?;
    let images = sample(&model, cfg.get("sample_count")?, &mut stream(cfg.seed()?, Stream::Sample))?;
    write_images(&dir, "sample", &images)?;
    println!("wrote {} samples to {}", images.len(), dir.display());
    Ok(())
}

pub fn cmd_compress(cfg: &ExperimentConfig) -> Result<()> {
    let dir = prepare_out(cfg, "compress")?;
    let model = load_model(&cfg.out_path("checkpoint"))?;
    let codec = cfg.codec_config()?;
    let images = eval_set(cfg, &model.hierarchy)?;
    let aux_words = match cfg.get::<usize>("aux_words")? {
        0 => default_aux_words(&model),
        n => n,
    };
    let aux_seed = stream(cfg.seed()?, Stream::Aux).next_u64();
    let (bytes, report) = compress(&model, &images, &codec, aux_seed, aux_words)?;
    let path = cfg.out_path("archive");
    fs::write(&path, &bytes).with_context(|| format!("writing {}", path.display()))?;
    write_images(&dir, "original", &images)?;

    let dim = model.hierarchy.image_dim();
    let bound = model.clone().with_steps(codec.steps)?;
    let vlb: Vec<f64> = images
        .iter()
        .map(|img| Ok(cascaded_loss(&bound, &dequantize_centered(img), &mut Rng::new(0), VlbMode::FullSum)?.bpd))
        .collect::<Result<_>>()?;
    write_csv(
        &dir.join("compress.csv"),
        &["image_id", "net_bits", "net_bpd", "vlb_bpd"],
        report
            .net_bits
            .iter()
            .zip(&vlb)
            .enumerate()
            .map(|(i, (b, v))| vec![i.to_string(), b.to_string(), (b / dim as f64).to_string(), v.to_string()]),
    )?;
    let net = report.net_bpd(dim);
    let mean_vlb = vlb.iter().sum::<f64>() / vlb.len() as f64;
    write_csv(
        &dir.join("compress_summary.csv"),
        &["images", "net_bpd", "vlb_bpd", "aux_bits", "gross_bits", "archive_bytes"],
        [vec![
            images.len().to_string(),
            net.to_string(),
            mean_vlb.to_string(),
            report.aux_bits.to_string(),
            report.gross_bits.to_string(),
            report.archive_bytes.to_string(),
        ]],
    )?;
    println!(
        "{} images: {net:.4} net bits/dim (bound {mean_vlb:.4}), {} archive bytes",
        images.len(),
        report.archive_bytes
    );
    Ok(())
}

pub fn cmd_decompress(cfg: &ExperimentConfig) -> Result<()> {
    let dir = prepare_out(cfg, "decompress")?;
    let model = load_model(&cfg.out_path("checkpoint"))?;
    let path = cfg.out_path("archive");
    let bytes = fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
    let images = decompress(&model, &bytes)?;
    write_images(&dir, "decoded", &images)?;
    println!("decoded {} images to {}", images.len(), dir.display());
    Ok(())
}

/// Typicality scores of the held-out set and both outlier sets, and the AUROC
/// of each outlier set against the held-out scores.
pub struct OodReport {
    pub entropy: f64,
    pub scores: Vec<(&'static str, Vec<f64>)>,
    pub auroc: Vec<(&'static str, f64)>,
}

pub fn ood_suite(cfg: &ExperimentConfig, model: &CascadedModel) -> Result<OodReport> {
    let spec = model.hierarchy;
    let seed = cfg.seed()?;
    let mc: usize = cfg.get("ood_mc")?;
    let train = train_set(cfg, &spec, cfg.get("ood_train_count")?)?;
    let held = eval_set(cfg, &spec)?;
    let mut data_rng = stream(seed, Stream::OodData);
    let uniform = uniform_noise(&spec, held.len(), &mut data_rng)?;
    let constant = constant_images(&spec, held.len(), &mut data_rng)?;

    let mut rng = stream(seed, Stream::Ood);
    let scorer = OodScorer::fit(model, &train, mc, &mut rng)?;
    let mut scores = Vec::new();
    for (name, set) in [("in", &held), ("out_uniform", &uniform), ("out_const", &constant)] {
        scores.push((name, scorer.scores(model, set, &mut rng)?));
    }
    let auroc = scores[1..].iter().map(|(n, s)| Ok((*n, auroc(&scores[0].1, s)?))).collect::<Result<_>>()?;
    Ok(OodReport { entropy: scorer.entropy, scores, auroc })
}

pub fn cmd_ood(cfg: &ExperimentConfig) -> Result<()> {
    let dir = prepare_out(cfg, "ood")?;
    let model = load_model(&cfg.out_path("checkpoint"))?;
    let report = ood_suite(cfg, &model)?;
    write_csv(
        &dir.join("ood.csv"),
        &["image_id", "set", "score"],
        report.scores.iter().flat_map(|(name, s)| {
            s.iter().enumerate().map(move |(i, v)| vec![i.to_string(), name.to_string(), v.to_string()])
        }),
    )?;
    write_csv(
        &dir.join("ood_summary.csv"),
        &["set", "auroc"],
        report.auroc.iter().map(|(n, a)| vec![n.to_string(), a.to_string()]),
    )?;
    println!("entropy estimate {:.3} nats/image", report.entropy);
    for (n, a) in &report.auroc {
        println!("AUROC {n}: {a:.4}");
    }
    Ok(())
}

pub fn cmd_emd_bench(cfg: &ExperimentConfig) -> Result<()> {
    let dir = prepare_out(cfg, "emd-bench")?;
    let (stats, records) = bound_suite(
        cfg.get("emd_pairs")?,
        cfg.get("emd_grid")?,
        cfg.get("emd_p")?,
        cfg.emd_variant()?,
        &mut stream(cfg.seed()?, Stream::Emd),
    )?;
    write_csv(
        &dir.join("emd_bench.csv"),
        &["pair_id", "exact", "surrogate", "ratio"],
        records
            .iter()
            .map(|r| vec![r.pair_id.to_string(), r.exact.to_string(), r.surrogate.to_string(), r.ratio.to_string()]),
    )?;
    write_csv(
        &dir.join("emd_summary.csv"),
        &["pairs", "min", "max", "mean", "spread", "sign_violations"],
        [vec![
            stats.pairs.to_string(),
            stats.min.to_string(),
            stats.max.to_string(),
            stats.mean.to_string(),
            stats.spread.to_string(),
            stats.sign_violations.to_string(),
        ]],
    )?;
    println!("ratio exact/surrogate in [{:.4}, {:.4}], spread {:.3}", stats.min, stats.max, stats.spread);
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn check(name: impl Into<String>, passed: bool, detail: String) -> CheckResult {
    CheckResult { name: name.into(), passed, detail }
}

/// Invertibility, norm preservation and volume checks on the configured
/// image shape, plus a finite-difference gradient check on a small cascade.
pub fn check_battery(spec: &HierarchySpec, seeds: u64) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    for kind in [HierarchyKind::HaarWavelet, HierarchyKind::LaplacianPyramid, HierarchyKind::NearestNeighbor] {
        let s = HierarchySpec { kind, ..*spec };
        s.validate()?;
        let mut worst_inv: f64 = 0.0;
        let mut worst_norm: f64 = 0.0;
        for seed in 0..seeds {
            let x = Tensor::randn(s.image_shape(), &mut Rng::new(seed));
            let rep = s.forward(&x)?;
            worst_inv = worst_inv.max(rep.inverse()?.max_abs_diff(&x)?);
            worst_norm = worst_norm.max((rep.norm_sq() / x.norm_sq() - 1.0).abs());
        }
        out.push(check(format!("{kind}: inverse"), worst_inv < 1e-9, format!("max abs error {worst_inv:.3e}")));
        let vf = volume_factor(&s)?;
        if kind.is_volume_preserving() {
            out.push(check(format!("{kind}: norm"), worst_norm < 1e-9, format!("max relative error {worst_norm:.3e}")));
            let g = gram_matrix(&jacobian_matrix(&s)?)?;
            let n = g.shape()[0];
            let off =
                (0..n * n).map(|i| (g.data()[i] - if i / n == i % n { 1.0 } else { 0.0 }).abs()).fold(0.0, f64::max);
            out.push(check(format!("{kind}: gram"), off < 1e-9, format!("max |AᵀA − I| {off:.3e}")));
            out.push(check(format!("{kind}: volume"), (vf - 1.0).abs() < 1e-9, format!("volume factor {vf}")));
        } else if s.levels > 1 {
            out.push(check(format!("{kind}: volume"), vf > 1.0, format!("volume factor {vf}")));
        }
    }
    let worst = gradient_check(spec.kind)?;
    out.push(check("gradient", worst <= 1e-4, format!("max relative error {worst:.3e}")));
    Ok(out)
}

/// Largest relative error between analytic and central-difference gradients
/// of the cascaded bound on a 4×4, two-scale, four-step model.
pub fn gradient_check(kind: HierarchyKind) -> Result<f64> {
    let spec = HierarchySpec::new(kind, 2, 1, 4, 4)?;
    let mut rng = Rng::new(11);
    let mut model = CascadedModel::init(spec, NoiseSchedule::default(), 4, &[3], &mut rng)?;
    for net in &mut model.scales {
        let lv = net.log_var_index();
        for (i, p) in net.params_mut().iter_mut().enumerate() {
            if i != lv {
                *p += 0.2 * (2.0 * rng.uniform() - 1.0);
            }
        }
    }
    let x = Tensor::new(spec.image_shape(), (0..16).map(|_| 1.8 * rng.uniform() - 0.9).collect())?;
    let loss = |m: &CascadedModel| -> Result<f64> {
        Ok(cascaded_loss(m, &x, &mut Rng::new(3), VlbMode::FullSum)?.total_nats())
    };
    let mut grads: Vec<Vec<f64>> = model.scales.iter().map(|n| vec![0.0; n.num_params()]).collect();
    cascaded_loss_with_grad(&model, &x, &mut Rng::new(3), VlbMode::FullSum, &mut grads, 1.0)?;
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for s in 0..model.scales.len() {
        for i in 0..model.scales[s].num_params() {
            let orig = model.scales[s].params()[i];
            model.scales[s].params_mut()[i] = orig + h;
            let up = loss(&model)?;
            model.scales[s].params_mut()[i] = orig - h;
            let down = loss(&model)?;
            model.scales[s].params_mut()[i] = orig;
            let fd = (up - down) / (2.0 * h);
            let g = grads[s][i];
            worst = worst.max((g - fd).abs() / g.abs().max(fd.abs()).max(1e-2));
        }
    }
    Ok(worst)
}

pub fn cmd_check(cfg: &ExperimentConfig) -> Result<()> {
    let dir = prepare_out(cfg, "check")?;
    let results = check_battery(&cfg.hierarchy()?, 100)?;
    for r in &results {
        println!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
    }
    write_csv(
        &dir.join("check.csv"),
        &["check", "passed", "detail"],
        results.iter().map(|r| vec![r.name.clone(), r.passed.to_string(), r.detail.clone()]),
    )?;
    let failed = results.iter().filter(|r| !r.passed).count();
    if failed > 0 {
        return Err(CheckFailed(format!("{failed} of {} checks failed", results.len())).into());
    }
    Ok(())
}

/// Converts a CSV into whitespace-separated columns with a `#` header,
/// smoothing every numeric column after the first with a trailing moving average.
pub fn cmd_plot_data(cfg: &ExperimentConfig) -> Result<()> {
    let dir = prepare_out(cfg, "plot-data")?;
    let input = cfg.out_path("plot_input");
    let window: usize = cfg.get("plot_smooth")?;
    if window == 0 {
        bail!("plot_smooth must be at least 1");
    }
    let mut reader = csv::Reader::from_path(&input).with_context(|| format!("reading {}", input.display()))?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let mut rows: Vec<Vec<String>> = Vec::new();
    for rec in reader.records() {
        rows.push(rec?.iter().map(str::to_string).collect());
    }
    let numeric: Vec<bool> =
        (0..header.len()).map(|c| c > 0 && rows.iter().all(|r| r[c].parse::<f64>().is_ok())).collect();
    let mut text = format!("# {}\n", header.join(" "));
    for i in 0..rows.len() {
        let cells: Vec<String> = (0..header.len())
            .map(|c| {
                if !numeric[c] {
                    return rows[i][c].clone();
                }
                let lo = (i + 1).saturating_sub(window);
                let vals: Vec<f64> = rows[lo..=i].iter().map(|r| r[c].parse::<f64>().unwrap()).collect();
                (vals.iter().sum::<f64>() / vals.len() as f64).to_string()
            })
            .collect();
        text.push_str(&cells.join(" "));
        text.push('\n');
    }
    let stem = input.file_stem().and_then(|s| s.to_str()).unwrap_or("data");
    let path = dir.join(format!("{stem}.dat"));
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    println!("wrote {}", path.display());
    Ok(())
}
