//! Quantitative evaluation protocols and report writers.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rayon::prelude::*;
use serde::Serialize;

use crate::data::{enumerate_sequences, Dataset, DirectionPolicy, ViewGeometry};
use crate::error::{Error, Result};
use crate::model::{
    classifier_logits_graph, encode, rollout, rollout_code, Action, BindMode, Frame, LatentCode,
    ModelConfig, ModelParams,
};
use crate::ops;
use crate::pnm::PnmImage;
use crate::tape::Tape;
use crate::tensor::Tensor;
use crate::train::{adam_step, AdamConfig, AdamState};

/// Per-step reconstruction error. `per_step[t]` is the mean over evaluated
/// sequences of the summed squared image error at step t+1.
#[derive(Debug, Clone)]
pub struct MseReport {
    pub per_step: Vec<f64>,
    pub count: usize,
}

impl MseReport {
    pub fn mean_over_steps(&self) -> f64 {
        self.per_step.iter().sum::<f64>() / self.per_step.len().max(1) as f64
    }
}

/// Rolls the model over every enumerated (identity, start view, direction)
/// sequence of the given ids and accumulates squared error per step.
pub fn mse_by_step(
    params: &ModelParams,
    ds: &Dataset,
    ids: &[u32],
    t: usize,
    policy: DirectionPolicy,
    threads: usize,
) -> Result<MseReport> {
    let seqs = enumerate_sequences(ds, ids, t, policy)?;
    let errs: Vec<Result<Vec<f64>>> = if threads == 1 {
        seqs.iter().map(|s| sequence_sq_errors(params, s)).collect()
    } else {
        seqs.par_iter().map(|s| sequence_sq_errors(params, s)).collect()
    };
    let mut per_step = vec![0.0f64; t];
    let mut count = 0usize;
    for e in errs {
        let e = e?;
        for (acc, v) in per_step.iter_mut().zip(&e) {
            *acc += v;
        }
        count += 1;
    }
    for v in &mut per_step {
        *v /= count as f64;
    }
    Ok(MseReport { per_step, count })
}

fn sequence_sq_errors(params: &ModelParams, seq: &crate::data::RotationSequence) -> Result<Vec<f64>> {
    let frames = rollout(params, &seq.input, &seq.actions)?;
    Ok(frames
        .iter()
        .zip(&seq.targets)
        .map(|(f, target)| ops::sq_diff_sum(f.image.data(), target.data()) as f64)
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureKind {
    Identity,
    Pose,
}

impl FeatureKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FeatureKind::Identity => "identity",
            FeatureKind::Pose => "pose",
        }
    }
}

/// Encode-time unit activations, one row per image. No normalization is
/// applied here; recognition uses cosine distance downstream.
pub fn extract_features(
    params: &ModelParams,
    images: &[&Tensor],
    kind: FeatureKind,
) -> Result<Tensor> {
    let width = match kind {
        FeatureKind::Identity => params.config.identity_units,
        FeatureKind::Pose => params.config.pose_units,
    };
    let mut data = Vec::with_capacity(images.len() * width);
    for img in images {
        let code = encode(params, img)?;
        data.extend(match kind {
            FeatureKind::Identity => code.identity,
            FeatureKind::Pose => code.pose,
        });
    }
    Tensor::from_vec(&[images.len(), width], data)
}

/// Feature rows plus the (identity, view) metadata recognition needs.
pub struct ProbeSet {
    pub features: Tensor,
    pub identities: Vec<u32>,
    pub views: Vec<usize>,
}

impl ProbeSet {
    /// Features of every (identity, view) image of the given ids.
    pub fn from_dataset(
        params: &ModelParams,
        ds: &Dataset,
        ids: &[u32],
        kind: FeatureKind,
    ) -> Result<ProbeSet> {
        let mut images = Vec::new();
        let mut identities = Vec::new();
        let mut views = Vec::new();
        for &id in ids {
            for view in 0..ds.views() {
                images.push(ds.image(id, view));
                identities.push(id);
                views.push(view);
            }
        }
        Ok(ProbeSet {
            features: extract_features(params, &images, kind)?,
            identities,
            views,
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct OffsetBucket {
    pub offset_deg: f64,
    /// Mean success rate (percent) over the splits containing this offset.
    pub mean: f64,
    pub sd: f64,
    pub probes: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct RecognitionReport {
    /// Mean and sd (percent) over splits of the per-split success rate.
    pub overall_mean: f64,
    pub overall_sd: f64,
    pub by_offset: Vec<OffsetBucket>,
    pub splits: usize,
    /// Zero-norm feature rows: skipped as gallery candidates, counted as
    /// failures as probes.
    pub excluded_zero_norm: usize,
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / values.len() as f64;
    (mean, var.sqrt())
}

/// One gallery/probe split per view: images of that view form the gallery,
/// all other views are probes, matched by cosine distance, ties broken by
/// the lowest gallery index.
pub fn cross_view_recognition(set: &ProbeSet, geometry: &ViewGeometry) -> Result<RecognitionReport> {
    let n = set.identities.len();
    if n == 0 || set.features.shape()[0] != n || set.views.len() != n {
        return Err(Error::arg("probe set metadata does not match feature rows"));
    }
    let distinct_ids: std::collections::BTreeSet<u32> = set.identities.iter().copied().collect();
    if distinct_ids.len() < 2 {
        return Err(Error::arg("recognition needs at least two identities"));
    }
    let dim = set.features.shape()[1];
    let row = |i: usize| &set.features.data()[i * dim..(i + 1) * dim];
    let norms: Vec<f64> = (0..n)
        .map(|i| row(i).iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt())
        .collect();
    let excluded_zero_norm = norms.iter().filter(|&&v| v == 0.0).count();

    let mut split_rates = Vec::new();
    let mut bucket_rates: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    let mut bucket_probes: BTreeMap<u64, usize> = BTreeMap::new();
    // f64 degrees keyed by bits-of-rounded-millidegrees for stable bucketing
    let key = |deg: f64| (deg * 1000.0).round() as u64;

    for gallery_view in 0..geometry.views {
        let gallery: Vec<usize> = (0..n).filter(|&i| set.views[i] == gallery_view).collect();
        let probes: Vec<usize> = (0..n).filter(|&i| set.views[i] != gallery_view).collect();
        if gallery.is_empty() || probes.is_empty() {
            continue;
        }
        let mut split_hits = 0usize;
        let mut split_buckets: BTreeMap<u64, (usize, usize)> = BTreeMap::new();
        for &p in &probes {
            let offset = geometry.offset_deg(set.views[p], gallery_view);
            let entry = split_buckets.entry(key(offset)).or_insert((0, 0));
            entry.1 += 1;
            *bucket_probes.entry(key(offset)).or_insert(0) += 1;

            if norms[p] == 0.0 {
                continue; // counted as a failure
            }
            let mut best: Option<(f64, usize)> = None;
            for &g in &gallery {
                if norms[g] == 0.0 {
                    continue;
                }
                let dot: f64 = row(p)
                    .iter()
                    .zip(row(g))
                    .map(|(&a, &b)| a as f64 * b as f64)
                    .sum();
                let dist = 1.0 - dot / (norms[p] * norms[g]);
                if best.map(|(bd, _)| dist < bd).unwrap_or(true) {
                    best = Some((dist, g));
                }
            }
            if let Some((_, g)) = best {
                if set.identities[g] == set.identities[p] {
                    split_hits += 1;
                    entry.0 += 1;
                }
            }
        }
        split_rates.push(100.0 * split_hits as f64 / probes.len() as f64);
        for (k, (hits, total)) in split_buckets {
            bucket_rates
                .entry(k)
                .or_default()
                .push(100.0 * hits as f64 / total as f64);
        }
    }

    let (overall_mean, overall_sd) = mean_sd(&split_rates);
    let by_offset = bucket_rates
        .iter()
        .map(|(&k, rates)| {
            let (mean, sd) = mean_sd(rates);
            OffsetBucket {
                offset_deg: k as f64 / 1000.0,
                mean,
                sd,
                probes: bucket_probes[&k],
            }
        })
        .collect();

    Ok(RecognitionReport {
        overall_mean,
        overall_sd,
        by_offset,
        splits: split_rates.len(),
        excluded_zero_norm,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KnnFeature {
    RawPixels,
    Encoder,
}

impl KnnFeature {
    pub fn as_str(self) -> &'static str {
        match self {
            KnnFeature::RawPixels => "raw",
            KnnFeature::Encoder => "encoder",
        }
    }
}

#[derive(Debug, Clone)]
pub struct KnnReport {
    pub k: usize,
    pub per_step: Vec<f64>,
    pub count: usize,
}

/// Pixel-averaging retrieval baseline. For each evaluated sequence the K
/// nearest training images of the same start view are retrieved (Euclidean
/// distance in the chosen feature space, ties to the lowest train index);
/// the step-t prediction is the per-pixel mean of their ground-truth renders
/// at the sequence's step-t view.
pub fn knn_baseline(
    ds: &Dataset,
    train_ids: &[u32],
    test_ids: &[u32],
    ks: &[usize],
    t: usize,
    feature: KnnFeature,
    encoder: Option<&ModelParams>,
    policy: DirectionPolicy,
) -> Result<Vec<KnnReport>> {
    if ks.is_empty() {
        return Err(Error::arg("need at least one K"));
    }
    let kmax = *ks.iter().max().unwrap();
    if ks.iter().any(|&k| k == 0) {
        return Err(Error::arg("K must be at least 1"));
    }
    if kmax > train_ids.len() {
        return Err(Error::arg(format!(
            "K = {kmax} exceeds the {} training identities",
            train_ids.len()
        )));
    }
    let encoder = match feature {
        KnnFeature::Encoder => Some(
            encoder.ok_or_else(|| Error::arg("encoder features need a trained model"))?,
        ),
        KnnFeature::RawPixels => None,
    };

    // feature vector per (id, view), computed once
    let feat = |id: u32, view: usize| -> Result<Vec<f32>> {
        match encoder {
            None => Ok(ds.image(id, view).data().to_vec()),
            Some(params) => Ok(encode(params, ds.image(id, view))?.identity),
        }
    };
    let mut train_feats: BTreeMap<(u32, usize), Vec<f32>> = BTreeMap::new();
    for &id in train_ids {
        for view in 0..ds.views() {
            train_feats.insert((id, view), feat(id, view)?);
        }
    }

    let seqs = enumerate_sequences(ds, test_ids, t, policy)?;
    let mut sums: Vec<Vec<f64>> = ks.iter().map(|_| vec![0.0; t]).collect();
    let mut count = 0usize;
    let pixels = ds.image_elems();

    for seq in &seqs {
        let q = feat(seq.identity, seq.start_view)?;
        // (distance, train index) ascending; index breaks ties deterministically
        let mut ranked: Vec<(f64, usize)> = train_ids
            .iter()
            .enumerate()
            .map(|(idx, &id)| {
                let f = &train_feats[&(id, seq.start_view)];
                let d: f64 = q
                    .iter()
                    .zip(f)
                    .map(|(&a, &b)| {
                        let diff = a as f64 - b as f64;
                        diff * diff
                    })
                    .sum();
                (d, idx)
            })
            .collect();
        ranked.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));

        for (ki, &k) in ks.iter().enumerate() {
            let picked: Vec<u32> = ranked[..k].iter().map(|&(_, idx)| train_ids[idx]).collect();
            for (step, &target_view) in seq.target_views.iter().enumerate() {
                let mut pred = vec![0.0f64; pixels];
                for &id in &picked {
                    for (p, &v) in pred.iter_mut().zip(ds.image(id, target_view).data()) {
                        *p += v as f64;
                    }
                }
                let inv = 1.0 / k as f64;
                let target = &seq.targets[step];
                let err: f64 = pred
                    .iter()
                    .zip(target.data())
                    .map(|(&p, &y)| {
                        let d = p * inv - y as f64;
                        d * d
                    })
                    .sum();
                sums[ki][step] += err;
            }
        }
        count += 1;
    }

    Ok(ks
        .iter()
        .zip(sums)
        .map(|(&k, mut per_step)| {
            for v in &mut per_step {
                *v /= count as f64;
            }
            KnnReport { k, per_step, count }
        })
        .collect())
}

#[derive(Debug, Clone)]
pub struct ClassifierOpts {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub seed: u64,
    pub threads: usize,
    pub adam: AdamConfig,
}

impl Default for ClassifierOpts {
    fn default() -> Self {
        ClassifierOpts {
            epochs: 10,
            batch_size: 32,
            lr: 1e-3,
            seed: 7,
            threads: 1,
            adam: AdamConfig::default(),
        }
    }
}

/// Supervised baseline: the same encoder topology with an N-way softmax over
/// the identity units, trained with cross-entropy on the train split. The
/// returned params carry the classifier head; identity-unit features from
/// them feed the usual recognition protocol.
pub fn classifier_baseline(
    ds: &Dataset,
    config: &ModelConfig,
    opts: &ClassifierOpts,
) -> Result<(ModelParams, Vec<(usize, f32)>)> {
    let classes = ds.train_ids().len();
    if classes < 2 {
        return Err(Error::arg("classifier training needs at least two identities"));
    }
    let mut params = ModelParams::init(config, opts.seed)?;
    params.attach_classifier(classes, opts.seed ^ 0xC1A5)?;
    let mut state = AdamState::new(&params);

    // all (identity index, view) pairs, reshuffled each epoch
    let mut pairs: Vec<(usize, usize)> = (0..classes)
        .flat_map(|c| (0..ds.views()).map(move |v| (c, v)))
        .collect();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(opts.seed);
    let mut curve = Vec::new();

    for epoch in 0..opts.epochs {
        pairs.shuffle(&mut rng);
        let mut epoch_loss = 0.0f64;
        let mut batches = 0usize;
        for chunk in pairs.chunks(opts.batch_size) {
            let results: Vec<Result<(Vec<Vec<f32>>, f64)>> = {
                let work = |&(c, v): &(usize, usize)| -> Result<(Vec<Vec<f32>>, f64)> {
                    let img = ds.image(ds.train_ids()[c], v);
                    let mut tape = Tape::new();
                    let g = params.bind(&mut tape, BindMode::Trainable);
                    let mut shape = vec![1];
                    shape.extend_from_slice(img.shape());
                    let x = tape.leaf(img.clone().reshaped(&shape)?);
                    let logits = classifier_logits_graph(&mut tape, &g, x)?;
                    let loss = tape.softmax_cross_entropy(logits, &[c])?;
                    let value = tape.scalar_value(loss) as f64;
                    tape.backward(loss)?;
                    let grads = g
                        .flat
                        .iter()
                        .map(|&id| tape.grad(id).expect("trainable").to_vec())
                        .collect();
                    Ok((grads, value))
                };
                if opts.threads == 1 {
                    chunk.iter().map(work).collect()
                } else {
                    chunk.par_iter().map(work).collect()
                }
            };
            let mut iter = results.into_iter();
            let (mut grads, mut loss_sum) = iter.next().unwrap()?;
            let mut n = 1usize;
            for r in iter {
                let (g, l) = r?;
                for (acc, gi) in grads.iter_mut().zip(&g) {
                    for (a, b) in acc.iter_mut().zip(gi) {
                        *a += b;
                    }
                }
                loss_sum += l;
                n += 1;
            }
            let scale = 1.0 / n as f32;
            for g in &mut grads {
                for v in g.iter_mut() {
                    *v *= scale;
                }
            }
            adam_step(&mut params, &grads, &mut state, opts.lr, &opts.adam)?;
            epoch_loss += loss_sum / n as f64;
            batches += 1;
        }
        curve.push((epoch, (epoch_loss / batches as f64) as f32));
    }
    Ok((params, curve))
}

/// Fraction of (image, label) pairs the classifier head gets right.
pub fn classifier_accuracy(params: &ModelParams, ds: &Dataset) -> Result<f32> {
    let head = params
        .classifier
        .as_ref()
        .ok_or_else(|| Error::config("model has no classifier head"))?;
    let classes = head.weight.shape()[0];
    let mut hits = 0usize;
    let mut total = 0usize;
    for (c, &id) in ds.train_ids().iter().enumerate().take(classes) {
        for view in 0..ds.views() {
            let code = encode(params, ds.image(id, view))?;
            let mut logits = vec![0.0f32; classes];
            ops::affine_forward(
                &code.identity,
                1,
                params.config.identity_units,
                head.weight.data(),
                classes,
                Some(head.bias.data()),
                &mut logits,
            );
            let best = logits
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(i, _)| i)
                .unwrap();
            hits += usize::from(best == c);
            total += 1;
        }
    }
    Ok(hits as f32 / total as f32)
}

/// Interpolation grid: `frames[b][t]` renders the convex combination
/// beta[b] * code(A) + (1 - beta[b]) * code(B) rolled through the actions.
#[derive(Debug)]
pub struct InterpGrid {
    pub betas: Vec<f32>,
    pub frames: Vec<Vec<Frame>>,
}

pub const DEFAULT_BETAS: [f32; 6] = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0];

pub fn interpolate(
    params: &ModelParams,
    image_a: &Tensor,
    image_b: &Tensor,
    betas: &[f32],
    actions: &[Action],
) -> Result<InterpGrid> {
    if image_a.shape() != image_b.shape() {
        return Err(Error::shape(format!(
            "interpolation inputs must share a shape: {:?} vs {:?}",
            image_a.shape(),
            image_b.shape()
        )));
    }
    if betas.is_empty() || betas.iter().any(|&b| !(0.0..=1.0).contains(&b)) {
        return Err(Error::arg("betas must be a non-empty subset of [0, 1]"));
    }
    let code_a = encode(params, image_a)?;
    let code_b = encode(params, image_b)?;
    let mut frames = Vec::with_capacity(betas.len());
    for &beta in betas {
        let code = LatentCode::lerp(&code_a, &code_b, beta);
        frames.push(rollout_code(params, &code, actions)?);
    }
    Ok(InterpGrid {
        betas: betas.to_vec(),
        frames,
    })
}

/// Tiles rows of equally-sized frames into one image with a 2-pixel gutter.
pub fn contact_sheet(rows: &[Vec<&Tensor>]) -> Result<PnmImage> {
    const GUTTER: usize = 2;
    let first = rows
        .first()
        .and_then(|r| r.first())
        .ok_or_else(|| Error::arg("contact sheet needs at least one frame"))?;
    let (c, h, w) = (first.shape()[0], first.shape()[1], first.shape()[2]);
    let cols = rows.iter().map(|r| r.len()).max().unwrap();
    let sheet_w = cols * w + (cols + 1) * GUTTER;
    let sheet_h = rows.len() * h + (rows.len() + 1) * GUTTER;
    let mut data = vec![32u8; sheet_w * sheet_h * c];

    for (ri, row) in rows.iter().enumerate() {
        for (ci, t) in row.iter().enumerate() {
            if t.shape() != first.shape() {
                return Err(Error::shape("contact sheet frames must share a shape"));
            }
            let img = PnmImage::from_tensor(t)?;
            let y0 = GUTTER + ri * (h + GUTTER);
            let x0 = GUTTER + ci * (w + GUTTER);
            for y in 0..h {
                for x in 0..w {
                    for ch in 0..c {
                        data[((y0 + y) * sheet_w + x0 + x) * c + ch] =
                            img.data[(y * w + x) * c + ch];
                    }
                }
            }
        }
    }
    PnmImage::new(sheet_w, sheet_h, c, data)
}

pub fn write_mse_csv(path: &Path, rows: &[(String, &[f64])]) -> Result<()> {
    let mut out = String::from("model,step,mse\n");
    for (label, per_step) in rows {
        for (i, v) in per_step.iter().enumerate() {
            out.push_str(&format!("{label},{},{v}\n", i + 1));
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn write_recognition_csv(path: &Path, rows: &[(String, &RecognitionReport)]) -> Result<()> {
    let mut out = String::from("feature,offset_deg,mean,sd,probes\n");
    for (label, report) in rows {
        for b in &report.by_offset {
            out.push_str(&format!(
                "{label},{},{},{},{}\n",
                b.offset_deg, b.mean, b.sd, b.probes
            ));
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn write_json_summary<T: Serialize>(path: &Path, summary: &T) -> Result<()> {
    let json = serde_json::to_string_pretty(summary)
        .map_err(|e| Error::format(path, e.to_string()))?;
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, GenConfig, GeometryMode};
    use crate::model::{InitOpts, WeightInit};

    fn wrap_ds() -> (tempfile::TempDir, Dataset) {
        let dir = tempfile::tempdir().unwrap();
        let ds = generate(
            &GenConfig {
                mode: GeometryMode::Wrap,
                identities: 4,
                views: 6,
                size: 16,
                channels: 3,
                seed: 21,
                train_count: Some(3),
            },
            dir.path(),
        )
        .unwrap();
        (dir, ds)
    }

    fn desk_params(ds: &Dataset, seed: u64) -> ModelParams {
        // wider-than-default init so an untrained model's outputs are not all
        // indistinguishably close to sigmoid(0)
        ModelParams::init_with(
            &ModelConfig::desk(ds.manifest.image_size, ds.manifest.channels),
            seed,
            &InitOpts {
                weights: WeightInit::FanIn,
                action_noise_std: 0.05,
            },
        )
        .unwrap()
    }

    #[test]
    fn identity_init_model_mse_matches_replicated_autoencode() {
        // with exactly-identity transforms, every CW step decodes the same
        // latent, so per-step MSE equals the replicated encode-decode MSE
        let (_d, ds) = wrap_ds();
        let cfg = ModelConfig::desk(16, 3);
        let params = ModelParams::init_with(
            &cfg,
            3,
            &InitOpts {
                weights: WeightInit::Gaussian(0.01),
                action_noise_std: 0.0,
            },
        )
        .unwrap();
        let report = mse_by_step(&params, &ds, ds.test_ids(), 3, DirectionPolicy::Both, 1).unwrap();

        let seqs = enumerate_sequences(&ds, ds.test_ids(), 3, DirectionPolicy::Both).unwrap();
        let mut expect = vec![0.0f64; 3];
        for s in &seqs {
            let frame = crate::model::decode(&params, &encode(&params, &s.input).unwrap()).unwrap();
            for (t, target) in s.targets.iter().enumerate() {
                expect[t] += ops::sq_diff_sum(frame.image.data(), target.data()) as f64;
            }
        }
        for v in &mut expect {
            *v /= seqs.len() as f64;
        }
        for (got, want) in report.per_step.iter().zip(&expect) {
            assert!((got - want).abs() < 1e-6, "{got} vs {want}");
        }
    }

    #[test]
    fn mse_is_additive_over_disjoint_subsets() {
        let (_d, ds) = wrap_ds();
        let params = desk_params(&ds, 5);
        let a = mse_by_step(&params, &ds, &[0], 2, DirectionPolicy::Both, 1).unwrap();
        let b = mse_by_step(&params, &ds, &[1, 2], 2, DirectionPolicy::Both, 1).unwrap();
        let union = mse_by_step(&params, &ds, &[0, 1, 2], 2, DirectionPolicy::Both, 1).unwrap();
        for t in 0..2 {
            let weighted = (a.per_step[t] * a.count as f64 + b.per_step[t] * b.count as f64)
                / (a.count + b.count) as f64;
            assert!((union.per_step[t] - weighted).abs() < 1e-9);
        }
    }

    #[test]
    fn feature_widths_follow_the_latent_split() {
        let (_d, ds) = wrap_ds();
        let params = desk_params(&ds, 6);
        let imgs = vec![ds.image(0, 0), ds.image(1, 3)];
        let id = extract_features(&params, &imgs, FeatureKind::Identity).unwrap();
        let pose = extract_features(&params, &imgs, FeatureKind::Pose).unwrap();
        assert_eq!(id.shape(), &[2, params.config.identity_units]);
        assert_eq!(pose.shape(), &[2, params.config.pose_units]);
    }

    #[test]
    fn one_hot_identity_features_recognize_perfectly() {
        // four identities, three views each, features = one-hot of identity
        let geometry = ViewGeometry::wrap(3);
        let n_ids = 4;
        let mut data = Vec::new();
        let mut identities = Vec::new();
        let mut views = Vec::new();
        for id in 0..n_ids {
            for v in 0..3 {
                let mut row = vec![0.0f32; n_ids];
                row[id] = 1.0;
                data.extend(row);
                identities.push(id as u32);
                views.push(v);
            }
        }
        let set = ProbeSet {
            features: Tensor::from_vec(&[n_ids * 3, n_ids], data).unwrap(),
            identities,
            views,
        };
        let report = cross_view_recognition(&set, &geometry).unwrap();
        assert_eq!(report.overall_mean, 100.0);
        assert_eq!(report.excluded_zero_norm, 0);
        assert!(report.by_offset.iter().all(|b| b.mean == 100.0));
    }

    #[test]
    fn recognition_is_scale_invariant() {
        let (_d, ds) = wrap_ds();
        let params = desk_params(&ds, 7);
        let all_ids: Vec<u32> = (0..4).collect();
        let set = ProbeSet::from_dataset(&params, &ds, &all_ids, FeatureKind::Identity).unwrap();
        let scaled = ProbeSet {
            features: set.features.map(|v| v * 37.5),
            identities: set.identities.clone(),
            views: set.views.clone(),
        };
        let g = ds.geometry();
        let a = cross_view_recognition(&set, &g).unwrap();
        let b = cross_view_recognition(&scaled, &g).unwrap();
        assert_eq!(a.overall_mean, b.overall_mean);
        for (x, y) in a.by_offset.iter().zip(&b.by_offset) {
            assert_eq!(x.mean, y.mean);
        }
    }

    #[test]
    fn constant_features_are_excluded_and_fail() {
        let geometry = ViewGeometry::wrap(3);
        // two identities; identity 0 rows are zero vectors
        let mut data = Vec::new();
        let mut identities = Vec::new();
        let mut views = Vec::new();
        for id in 0..2u32 {
            for v in 0..3usize {
                data.extend(if id == 0 {
                    vec![0.0f32, 0.0]
                } else {
                    vec![1.0f32, 0.5]
                });
                identities.push(id);
                views.push(v);
            }
        }
        let set = ProbeSet {
            features: Tensor::from_vec(&[6, 2], data).unwrap(),
            identities,
            views,
        };
        let report = cross_view_recognition(&set, &geometry).unwrap();
        assert_eq!(report.excluded_zero_norm, 3);
        // identity-1 probes always match identity-1 galleries; identity-0
        // probes always fail
        assert_eq!(report.overall_mean, 50.0);
    }

    #[test]
    fn knn_k1_on_a_training_image_is_exact() {
        let (_d, ds) = wrap_ds();
        // query the train split against itself: K = 1 retrieves the query
        // identity, so every step's prediction is the exact render
        let reports = knn_baseline(
            &ds,
            ds.train_ids(),
            ds.train_ids(),
            &[1],
            3,
            KnnFeature::RawPixels,
            None,
            DirectionPolicy::Both,
        )
        .unwrap();
        assert_eq!(reports[0].k, 1);
        for &v in &reports[0].per_step {
            assert!(v.abs() < 1e-12, "step error {v}");
        }
    }

    #[test]
    fn knn_k2_prediction_is_the_pixel_mean() {
        let (_d, ds) = wrap_ds();
        // two training identities: K=2 averages both, so the error at step t
        // against identity 0's render is sum((mean - y0)^2)
        let reports = knn_baseline(
            &ds,
            &[0, 1],
            &[0],
            &[2],
            1,
            KnnFeature::RawPixels,
            None,
            DirectionPolicy::CwOnly,
        )
        .unwrap();
        let seqs = enumerate_sequences(&ds, &[0], 1, DirectionPolicy::CwOnly).unwrap();
        let mut expect = 0.0f64;
        for s in &seqs {
            let v = s.target_views[0];
            let y0 = ds.image(0, v);
            let y1 = ds.image(1, v);
            expect += y0
                .data()
                .iter()
                .zip(y1.data())
                .map(|(&a, &b)| {
                    let mean = (a as f64 + b as f64) / 2.0;
                    let d = mean - a as f64;
                    d * d
                })
                .sum::<f64>();
        }
        expect /= seqs.len() as f64;
        assert!((reports[0].per_step[0] - expect).abs() < 1e-9);
    }

    #[test]
    fn knn_rejects_oversized_k() {
        let (_d, ds) = wrap_ds();
        let err = knn_baseline(
            &ds,
            ds.train_ids(),
            ds.test_ids(),
            &[7],
            1,
            KnnFeature::RawPixels,
            None,
            DirectionPolicy::Both,
        )
        .unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
    }

    #[test]
    fn interpolation_endpoints_reproduce_single_image_rollouts() {
        let (_d, ds) = wrap_ds();
        let params = desk_params(&ds, 8);
        let a = ds.image(0, 0);
        let b = ds.image(1, 0);
        let actions = vec![Action::Cw, Action::Cw, Action::Ccw];
        let grid = interpolate(&params, a, b, &[0.0, 0.5, 1.0], &actions).unwrap();
        let roll_a = rollout(&params, a, &actions).unwrap();
        let roll_b = rollout(&params, b, &actions).unwrap();
        assert_eq!(grid.frames[2], roll_a); // beta = 1 row is image A
        assert_eq!(grid.frames[0], roll_b); // beta = 0 row is image B
        assert_ne!(grid.frames[1], roll_a);
    }

    #[test]
    fn beta_half_latent_is_the_coordinatewise_mean() {
        let (_d, ds) = wrap_ds();
        let params = desk_params(&ds, 9);
        let ca = encode(&params, ds.image(0, 0)).unwrap();
        let cb = encode(&params, ds.image(1, 0)).unwrap();
        let mid = LatentCode::lerp(&ca, &cb, 0.5);
        for ((m, a), b) in mid.identity.iter().zip(&ca.identity).zip(&cb.identity) {
            assert!((m - (a + b) / 2.0).abs() < 1e-6);
        }
    }

    #[test]
    fn interpolate_validates_betas() {
        let (_d, ds) = wrap_ds();
        let params = desk_params(&ds, 10);
        let err = interpolate(
            &params,
            ds.image(0, 0),
            ds.image(1, 0),
            &[1.5],
            &[Action::Cw],
        )
        .unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
    }

    #[test]
    fn contact_sheet_tiles_rows() {
        let a = Tensor::zeros(&[3, 4, 4]);
        let b = Tensor::full(&[3, 4, 4], 1.0);
        let sheet = contact_sheet(&[vec![&a, &b], vec![&b, &a]]).unwrap();
        assert_eq!(sheet.channels, 3);
        assert_eq!(sheet.width, 2 + 4 + 2 + 4 + 2);
        assert_eq!(sheet.height, 2 + 4 + 2 + 4 + 2);
    }

    #[test]
    fn classifier_overfits_two_identities() {
        let dir = tempfile::tempdir().unwrap();
        let ds = generate(
            &GenConfig {
                mode: GeometryMode::Wrap,
                identities: 3,
                views: 6,
                size: 16,
                channels: 3,
                seed: 31,
                train_count: Some(2),
            },
            dir.path(),
        )
        .unwrap();
        let cfg = ModelConfig::desk(16, 3);
        let opts = ClassifierOpts {
            epochs: 30,
            batch_size: 6,
            lr: 2e-3,
            ..Default::default()
        };
        let (params, curve) = classifier_baseline(&ds, &cfg, &opts).unwrap();
        assert_eq!(params.classifier.as_ref().unwrap().weight.shape()[0], 2);
        assert_eq!(curve.len(), 30);
        let acc = classifier_accuracy(&params, &ds).unwrap();
        assert!(acc >= 0.99, "train accuracy {acc}");
    }
}
