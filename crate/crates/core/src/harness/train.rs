//! Mini-batch teacher-forced training with per-epoch validation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Gradients, Graph};
use crate::corpus::Sample;
use crate::error::{OridError, Result};
use crate::model::{ForwardOptions, ModelInput, OridModel};
use crate::params::ParamStore;

use super::augment::augment_sample;
use super::config::TrainConfig;
use super::optim::{clip_gradients, Adam};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossSummary {
    pub total: f64,
    pub ce: f64,
    pub cs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Running means over the epoch's updates.
    pub train: LossSummary,
    pub val: Option<LossSummary>,
    pub mean_grad_norm: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    pub best_epoch: Option<usize>,
    /// Epoch at which every training report was reproduced, when that stop rule was on.
    pub memorized_at: Option<usize>,
    /// Training-set losses of the returned parameters, without augmentation.
    pub final_train: Option<LossSummary>,
    pub steps: u64,
}

#[derive(Clone, Copy, Debug)]
pub struct TrainOptions {
    pub seed: u64,
    pub augment: bool,
    /// Beam width used by the memorization check.
    pub beam_width: usize,
}

fn mean(summaries: &[LossSummary]) -> LossSummary {
    let n = summaries.len().max(1) as f64;
    LossSummary {
        total: summaries.iter().map(|s| s.total).sum::<f64>() / n,
        ce: summaries.iter().map(|s| s.ce).sum::<f64>() / n,
        cs: summaries.iter().map(|s| s.cs).sum::<f64>() / n,
    }
}

/// Forward-only losses averaged over inputs.
pub fn mean_losses(model: &OridModel, inputs: &[ModelInput], beta: f64) -> Result<LossSummary> {
    let mut all = Vec::with_capacity(inputs.len());
    for input in inputs {
        let mut g = Graph::new(&model.params);
        let (_, l) = model.loss(&mut g, input, beta, &ForwardOptions::default())?;
        all.push(LossSummary { total: g.scalar(l.total), ce: g.scalar(l.ce), cs: g.scalar(l.cs) });
    }
    Ok(mean(&all))
}

/// Whether decoding reproduces every target report exactly.
pub fn reproduces_all(model: &OridModel, inputs: &[ModelInput], width: usize) -> Result<bool> {
    for input in inputs {
        let gen = model.generate(input, width)?;
        if model.detokenize(&gen.hypothesis.tokens) != model.detokenize(&input.target) {
            return Ok(false);
        }
    }
    Ok(true)
}

fn sample_gradients(model: &OridModel, input: &ModelInput, beta: f64, epoch: usize, step: u64) -> Result<(Gradients, LossSummary)> {
    let mut g = Graph::new(&model.params);
    let (_, l) = model.loss(&mut g, input, beta, &ForwardOptions::default())?;
    let s = LossSummary { total: g.scalar(l.total), ce: g.scalar(l.ce), cs: g.scalar(l.cs) };
    if !s.total.is_finite() {
        return Err(OridError::NonFiniteLoss {
            epoch,
            step: step as usize,
            detail: format!("sample {}: total={} ce={} cs={}", input.id, s.total, s.ce, s.cs),
        });
    }
    Ok((g.backward(l.total), s))
}

/// Trains in place. With validation data the parameters of the lowest
/// validation loss are restored at the end.
pub fn train_model(model: &mut OridModel, train: &[Sample], val: &[Sample], cfg: &TrainConfig, opts: &TrainOptions) -> Result<TrainLog> {
    if train.is_empty() {
        return Err(OridError::EmptyCorpus);
    }
    let clean: Vec<ModelInput> = train.iter().map(|s| model.prepare(s)).collect::<Result<_>>()?;
    let val_inputs: Vec<ModelInput> = val.iter().map(|s| model.prepare(s)).collect::<Result<_>>()?;
    let mut opt = Adam::new(&model.params, cfg.lr_image_extractor, cfg.lr_other);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5e_ed0f_7a11);
    let mut log = TrainLog::default();
    let mut best: Option<(f64, ParamStore)> = None;
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut running = Vec::with_capacity(train.len());
        let mut norms = Vec::new();
        for batch in order.chunks(cfg.batch_size) {
            let mut acc = Gradients::zeros_like(&model.params);
            for &i in batch {
                let aug;
                let input = if opts.augment {
                    aug = model.prepare(&augment_sample(&train[i], cfg.crop_padding, cfg.flip_prob, &mut rng))?;
                    &aug
                } else {
                    &clean[i]
                };
                let (grads, s) = sample_gradients(model, input, cfg.beta, epoch, opt.steps())?;
                acc.accumulate(&grads);
                running.push(s);
            }
            acc.scale(1.0 / batch.len() as f64);
            let norm = clip_gradients(&mut acc, cfg.clip_norm);
            if !norm.is_finite() {
                return Err(OridError::NonFiniteLoss { epoch, step: opt.steps() as usize, detail: format!("gradient norm {norm}") });
            }
            norms.push(norm);
            opt.step(&mut model.params, &acc);
        }
        let val_loss = if val_inputs.is_empty() { None } else { Some(mean_losses(model, &val_inputs, cfg.beta)?) };
        let entry = EpochLog { epoch, train: mean(&running), val: val_loss, mean_grad_norm: norms.iter().sum::<f64>() / norms.len() as f64 };
        log::info!(
            "epoch {epoch}: train {:.5} (ce {:.5}) val {}",
            entry.train.total,
            entry.train.ce,
            val_loss.map_or("-".to_string(), |v| format!("{:.5}", v.total))
        );
        if let Some(v) = val_loss {
            if best.as_ref().is_none_or(|(b, _)| v.total < *b) {
                best = Some((v.total, model.params.clone()));
                log.best_epoch = Some(epoch);
            }
        }
        let running_ce = entry.train.ce;
        log.epochs.push(entry);
        if let Some(target) = cfg.memorize_ce {
            if running_ce < target {
                let exact = mean_losses(model, &clean, cfg.beta)?;
                if exact.ce < target && reproduces_all(model, &clean, opts.beam_width)? {
                    log.memorized_at = Some(epoch);
                    break;
                }
            }
        }
    }
    if log.memorized_at.is_none() {
        if let Some((_, params)) = best {
            model.params = params;
        }
    }
    log.steps = opt.steps();
    log.final_train = Some(mean_losses(model, &clean, cfg.beta)?);
    Ok(log)
}
