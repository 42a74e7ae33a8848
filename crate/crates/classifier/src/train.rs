use std::collections::BTreeMap;

use aspire_core::{GroupedDataset, LabeledImage, Origin};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{Strategy, TrainConfig};
use crate::error::{Error, Result};
use crate::model::{Provenance, TrainedClassifier};
use crate::net::{self, Arch, Cache, Params};

const CONV1: usize = 8;
const CONV2: usize = 16;

/// Something that happened during training. Useful for tests and logging.
#[derive(Debug)]
pub enum Event<'a> {
    Epoch { stage: &'static str, epoch: usize, loss: f64 },
    GroupWeights { groups: &'a [String], weights: &'a [f64] },
    ErrorSet { ids: &'a [String] },
    Subset { stage: &'static str, counts: &'a BTreeMap<String, usize> },
}

pub trait Observer {
    fn event(&mut self, event: Event<'_>);
}

impl Observer for () {
    fn event(&mut self, _: Event<'_>) {}
}

impl<F: FnMut(Event<'_>)> Observer for F {
    fn event(&mut self, event: Event<'_>) {
        self(event)
    }
}

pub fn train(dataset: &GroupedDataset, cfg: &TrainConfig) -> Result<TrainedClassifier> {
    train_observed(dataset, cfg, &mut ())
}

pub fn train_observed(dataset: &GroupedDataset, cfg: &TrainConfig, obs: &mut dyn Observer) -> Result<TrainedClassifier> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if cfg.strategy.requires_groups() && !has_groups(dataset) {
        return Err(Error::RequiresGroups {
            strategy: cfg.strategy,
            dataset: dataset.name().to_owned(),
        });
    }
    let arch = arch_for(dataset)?;
    let provenance = Provenance {
        strategy: cfg.strategy.to_string(),
        config_hash: cfg.hash(),
        dataset_hash: dataset.content_hash(),
    };
    let items: Vec<&LabeledImage> = dataset.iter().collect();
    tracing::debug!(strategy = %cfg.strategy, n = items.len(), "training");

    let (params, history) = match cfg.strategy {
        Strategy::Erm => fit_fresh(&arch, dataset, &items, cfg, cfg.epochs, 0, "erm", None, obs)?,
        Strategy::GroupDro => {
            let groups = GroupIndex::new(&items);
            fit_fresh(&arch, dataset, &items, cfg, cfg.epochs, 0, "groupdro", Some(&groups), obs)?
        }
        Strategy::Subg => {
            let subset = subsample_groups(dataset, cfg.seed);
            obs.event(Event::Subset {
                stage: "subg",
                counts: &subset.group_counts(),
            });
            let sub: Vec<&LabeledImage> = subset.iter().collect();
            fit_fresh(&arch, dataset, &sub, cfg, cfg.epochs, 0, "subg", None, obs)?
        }
        Strategy::Jtt => {
            let original = non_generated(dataset);
            let stage1 = fit_stage(&arch, dataset, &original, cfg, cfg.jtt_stage1_epochs(), 1, "jtt-stage1", &provenance, obs)?;
            let errors = error_set(&stage1, &original)?;
            obs.event(Event::ErrorSet { ids: &errors });
            let upweight = cfg.jtt_lambda().round() as usize;
            let mut pool: Vec<&LabeledImage> = items.clone();
            for it in dataset.iter().filter(|it| errors.binary_search_by(|e| e.as_str().cmp(it.id())).is_ok()) {
                pool.extend(std::iter::repeat(it).take(upweight.saturating_sub(1)));
            }
            fit_fresh(&arch, dataset, &pool, cfg, cfg.epochs, 2, "jtt-stage2", None, obs)?
        }
        Strategy::Dfr => {
            let original = non_generated(dataset);
            let stage1 = fit_stage(&arch, dataset, &original, cfg, cfg.epochs, 1, "dfr-stage1", &provenance, obs)?;
            let retrained = retrain_head_observed(&stage1, dataset, cfg, obs)?;
            (retrained.params, retrained.loss_history)
        }
    };
    Ok(TrainedClassifier {
        arch,
        params,
        classes: dataset.classes().to_vec(),
        provenance,
        loss_history: history,
    })
}

fn has_groups(ds: &GroupedDataset) -> bool {
    ds.is_grouped() && ds.iter().all(|it| it.group.is_some())
}

fn arch_for(ds: &GroupedDataset) -> Result<Arch> {
    let dims = ds.dims().ok_or(Error::EmptyDataset)?;
    if dims.height < 4 || dims.width < 4 {
        return Err(Error::ImageTooSmall(dims));
    }
    Ok(Arch {
        in_channels: dims.channels as usize,
        height: dims.height as usize,
        width: dims.width as usize,
        conv1: CONV1,
        conv2: CONV2,
        classes: ds.classes().len(),
    })
}

fn non_generated(ds: &GroupedDataset) -> Vec<&LabeledImage> {
    ds.iter().filter(|it| it.origin != Origin::Generated).collect()
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Group-balanced subsample: every non-empty group is cut to the size of the
/// smallest one, choosing members uniformly at random by `seed`.
pub fn subsample_groups(ds: &GroupedDataset, seed: u64) -> GroupedDataset {
    let mut by_group: BTreeMap<&str, Vec<&LabeledImage>> = BTreeMap::new();
    for it in ds.iter() {
        by_group.entry(it.group.as_deref().unwrap_or("")).or_default().push(it);
    }
    let n = by_group.values().map(Vec::len).min().unwrap_or(0);
    let mut rng = rng_for(seed, 7);
    let mut keep = std::collections::HashSet::new();
    for members in by_group.values() {
        for it in members.choose_multiple(&mut rng, n) {
            keep.insert(it.id().to_owned());
        }
    }
    ds.filter(|it| keep.contains(it.id()))
}

/// Ids (sorted) of the items `clf` gets wrong.
pub fn error_set(clf: &TrainedClassifier, items: &[&LabeledImage]) -> Result<Vec<String>> {
    let preds = clf.predict(items.iter().copied())?;
    let mut ids: Vec<String> = items
        .iter()
        .filter(|it| preds[it.id()].class != it.label)
        .map(|it| it.id().to_owned())
        .collect();
    ids.sort();
    Ok(ids)
}

/// Retrain only the linear head of `base` on a group-balanced subset of
/// `dataset`. Every other parameter is copied unchanged.
pub fn retrain_head(base: &TrainedClassifier, dataset: &GroupedDataset, cfg: &TrainConfig) -> Result<TrainedClassifier> {
    retrain_head_observed(base, dataset, cfg, &mut ())
}

fn retrain_head_observed(
    base: &TrainedClassifier,
    dataset: &GroupedDataset,
    cfg: &TrainConfig,
    obs: &mut dyn Observer,
) -> Result<TrainedClassifier> {
    if !has_groups(dataset) {
        return Err(Error::RequiresGroups {
            strategy: Strategy::Dfr,
            dataset: dataset.name().to_owned(),
        });
    }
    for it in dataset.iter() {
        if it.dims() != base.dims() {
            return Err(Error::DimensionMismatch {
                expected: base.dims(),
                found: it.dims(),
            });
        }
    }
    let arch = base.arch;
    let f = arch.features();
    let all: Vec<&LabeledImage> = dataset.iter().collect();
    let features = base.features(&all);
    let row: BTreeMap<&str, usize> = all.iter().enumerate().map(|(i, it)| (it.id(), i)).collect();
    let targets: Vec<usize> = all.iter().map(|it| class_of(dataset, it)).collect();

    // Fit one head per balanced subset and average them, which keeps the
    // small-sample variance of a single subset out of the result.
    let subsets = cfg.dfr_subsets();
    let mut params = base.params.clone();
    let (mut wf, mut bf) = (vec![0.0f32; params.wf.len()], vec![0.0f32; params.bf.len()]);
    let mut history = vec![0.0; cfg.dfr_epochs()];
    let (mut batch_feat, mut logits, mut d_logits) = (Vec::new(), Vec::new(), Vec::new());
    for s in 0..subsets {
        let balanced = subsample_groups(dataset, (cfg.seed ^ 0xdf).wrapping_add(s as u64));
        obs.event(Event::Subset {
            stage: "dfr-head",
            counts: &balanced.group_counts(),
        });
        let mut order: Vec<usize> = balanced.iter().map(|it| row[it.id()]).collect();
        let mut head = base.params.clone();
        let mut rng = rng_for(cfg.seed.wrapping_add(s as u64), 3);
        head.init_head(&arch, &mut rng);
        let mut opt = Sgd::new(&arch, cfg, cfg.dfr_lr());
        for (epoch, mean) in history.iter_mut().enumerate() {
            order.shuffle(&mut rng);
            let mut total = 0.0;
            for chunk in order.chunks(cfg.batch_size) {
                batch_feat.clear();
                for &i in chunk {
                    batch_feat.extend_from_slice(&features[i * f..][..f]);
                }
                let t: Vec<usize> = chunk.iter().map(|&i| targets[i]).collect();
                let w = vec![1.0 / chunk.len() as f32; chunk.len()];
                net::head(&arch, &head, &batch_feat, chunk.len(), &mut logits);
                let losses = net::cross_entropy(&logits, arch.classes, &t, &w, &mut d_logits);
                total += losses.iter().map(|&l| l as f64).sum::<f64>();
                let mut grad = Params::zeros(&arch);
                net::backward_head(&arch, &batch_feat, chunk.len(), &d_logits, &mut grad);
                opt.step(&mut head, &grad, true);
            }
            let loss = total / order.len().max(1) as f64;
            if !loss.is_finite() {
                return Err(Error::NanLoss { stage: "dfr-head", epoch });
            }
            *mean += loss / subsets as f64;
        }
        wf.iter_mut().zip(&head.wf).for_each(|(a, x)| *a += x / subsets as f32);
        bf.iter_mut().zip(&head.bf).for_each(|(a, x)| *a += x / subsets as f32);
    }
    params.wf = wf;
    params.bf = bf;
    for (epoch, &loss) in history.iter().enumerate() {
        record_epoch(obs, "dfr-head", epoch, loss, &mut Vec::new())?;
    }
    Ok(TrainedClassifier {
        arch,
        params,
        classes: base.classes.clone(),
        provenance: base.provenance.clone(),
        loss_history: history,
    })
}

fn class_of(ds: &GroupedDataset, it: &LabeledImage) -> usize {
    ds.class_index(&it.label).expect("dataset validated labels")
}

fn record_epoch(obs: &mut dyn Observer, stage: &'static str, epoch: usize, loss: f64, history: &mut Vec<f64>) -> Result<()> {
    if !loss.is_finite() {
        return Err(Error::NanLoss { stage, epoch });
    }
    tracing::trace!(stage, epoch, loss, "epoch");
    obs.event(Event::Epoch { stage, epoch, loss });
    history.push(loss);
    Ok(())
}

struct GroupIndex {
    names: Vec<String>,
    of_item: BTreeMap<String, usize>,
}

impl GroupIndex {
    fn new(items: &[&LabeledImage]) -> Self {
        let mut names: Vec<String> = items.iter().filter_map(|it| it.group.clone()).collect();
        names.sort();
        names.dedup();
        let of_item = items
            .iter()
            .map(|it| {
                let g = names.binary_search(it.group.as_ref().expect("checked grouped")).unwrap();
                (it.id().to_owned(), g)
            })
            .collect();
        Self { names, of_item }
    }
}

/// SGD with momentum and coupled L2 weight decay.
struct Sgd {
    lr: f32,
    momentum: f32,
    weight_decay: f32,
    velocity: Params,
}

impl Sgd {
    fn new(arch: &Arch, cfg: &TrainConfig, lr: f64) -> Self {
        Self {
            lr: lr as f32,
            momentum: cfg.momentum as f32,
            weight_decay: cfg.weight_decay as f32,
            velocity: Params::zeros(arch),
        }
    }

    fn step(&mut self, params: &mut Params, grad: &Params, head_only: bool) {
        let skip = if head_only { 4 } else { 0 };
        let (mu, wd, lr) = (self.momentum, self.weight_decay, self.lr);
        for ((p, g), v) in params
            .tensors_mut()
            .into_iter()
            .zip(grad.tensors())
            .zip(self.velocity.tensors_mut())
            .skip(skip)
        {
            for ((p, &g), v) in p.iter_mut().zip(g.1).zip(v.iter_mut()) {
                let d = g + wd * *p;
                *v = mu * *v + d;
                *p -= lr * *v;
            }
        }
    }
}

fn fit_stage(
    arch: &Arch,
    ds: &GroupedDataset,
    items: &[&LabeledImage],
    cfg: &TrainConfig,
    epochs: usize,
    stream: u64,
    stage: &'static str,
    provenance: &Provenance,
    obs: &mut dyn Observer,
) -> Result<TrainedClassifier> {
    if items.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (params, history) = fit_fresh(arch, ds, items, cfg, epochs, stream, stage, None, obs)?;
    Ok(TrainedClassifier {
        arch: *arch,
        params,
        classes: ds.classes().to_vec(),
        provenance: provenance.clone(),
        loss_history: history,
    })
}

/// Train a freshly initialized network on `pool` (items may repeat).
#[allow(clippy::too_many_arguments)]
fn fit_fresh(
    arch: &Arch,
    ds: &GroupedDataset,
    pool: &[&LabeledImage],
    cfg: &TrainConfig,
    epochs: usize,
    stream: u64,
    stage: &'static str,
    dro: Option<&GroupIndex>,
    obs: &mut dyn Observer,
) -> Result<(Params, Vec<f64>)> {
    if pool.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut rng = rng_for(cfg.seed, stream);
    let mut params = Params::init(arch, &mut rng);
    let mut opt = Sgd::new(arch, cfg, cfg.learning_rate);
    let mut cache = Cache::default();
    let mut grad = Params::zeros(arch);
    let (mut input, mut d_logits) = (Vec::new(), Vec::new());
    let mut q: Vec<f64> = dro.map(|g| vec![1.0 / g.names.len() as f64; g.names.len()]).unwrap_or_default();
    let eta = cfg.dro_eta();

    let targets: Vec<usize> = pool.iter().map(|it| class_of(ds, it)).collect();
    let mut order: Vec<usize> = (0..pool.len()).collect();
    let mut history = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let b = chunk.len();
            let raw: Vec<&[u8]> = chunk.iter().map(|&i| pool[i].pixels().as_bytes()).collect();
            let t: Vec<usize> = chunk.iter().map(|&i| targets[i]).collect();
            net::pack_inputs(arch, &raw, &mut input);
            net::forward(arch, &params, &input, b, &mut cache);
            let ones = vec![1.0; b];
            let losses = net::cross_entropy(&cache.logits, arch.classes, &t, &ones, &mut d_logits);
            total += losses.iter().map(|&l| l as f64).sum::<f64>();

            let weights: Vec<f32> = match dro {
                None => vec![1.0 / b as f32; b],
                Some(groups) => {
                    let g_of: Vec<usize> = chunk.iter().map(|&i| groups.of_item[pool[i].id()]).collect();
                    let mut sum = vec![0.0f64; q.len()];
                    let mut count = vec![0usize; q.len()];
                    for (&g, &l) in g_of.iter().zip(&losses) {
                        sum[g] += l as f64;
                        count[g] += 1;
                    }
                    for g in 0..q.len() {
                        if count[g] > 0 {
                            q[g] *= (eta * sum[g] / count[g] as f64).exp();
                        }
                    }
                    let z: f64 = q.iter().sum();
                    q.iter_mut().for_each(|x| *x /= z);
                    obs.event(Event::GroupWeights {
                        groups: &groups.names,
                        weights: &q,
                    });
                    g_of.iter().map(|&g| (q[g] / count[g] as f64) as f32).collect()
                }
            };
            for (row, &w) in d_logits.chunks_mut(arch.classes).zip(&weights) {
                row.iter_mut().for_each(|v| *v *= w);
            }
            grad.tensors_mut().into_iter().for_each(|t| t.iter_mut().for_each(|v| *v = 0.0));
            net::backward(arch, &params, &mut cache, &d_logits, &mut grad);
            opt.step(&mut params, &grad, false);
        }
        let loss = total / pool.len() as f64;
        record_epoch(obs, stage, epoch, loss, &mut history)?;
    }
    if !params.is_finite() {
        return Err(Error::NanLoss { stage, epoch: epochs - 1 });
    }
    Ok((params, history))
}
