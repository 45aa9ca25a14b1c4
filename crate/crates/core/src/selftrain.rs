//! The self-training loop and its variants.
//!
//! One iteration: freeze the current model as the teacher, decode pseudo
//! targets for the unlabeled sources, select a subset by confidence, train a
//! student on the pseudo corpus (pseudo-training), then fine-tune on the real
//! parallel data (separate regime) or fold the parallel data into one joint
//! training run. The fine-tuned (or jointly trained) model becomes the next
//! teacher.
//!
//! Sub-seeds for every stage derive from the plan's master seed, so the whole
//! loop is reproducible from one number.

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::data::{Dataset, ParallelExample, Sequence};
use crate::decode::{decode, DecodeSpec};
use crate::error::{Error, Result};
use crate::model::{init_params, score_target, ModelConfig, ModelParams};
use crate::noise::{make_perturber, NoiseKind, NoiseSpec};
use crate::seeds;
use crate::train::{train, TrainOutcome, TrainSchedule};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitMode {
    /// Pseudo-training starts from freshly initialized weights.
    Scratch,
    /// Pseudo-training continues from the current teacher.
    Baseline,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Selection {
    All,
    /// Keep the ceil(f * n) most confident examples.
    TopFraction(f64),
    /// Keep the iteration-indexed count of most confident examples
    /// (1-based; iterations beyond the list reuse the last entry).
    Schedule(Vec<usize>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Regime {
    /// Pseudo-train on the corpus, then fine-tune on real data.
    Separate,
    /// One training run on corpus + parallel data duplicated by the ratio
    /// (rounded to the nearest integer).
    Joint { upsample_ratio: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PtTarget {
    /// Teacher-decoded targets.
    Fake,
    /// Ground-truth targets (only sensible with parallel PT data).
    Real,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PtData {
    Unlabeled,
    Parallel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Baseline,
    PseudoTrain,
    FineTune,
}

impl Stage {
    pub fn as_str(&self) -> &'static str {
        match self {
            Stage::Baseline => "baseline",
            Stage::PseudoTrain => "pt",
            Stage::FineTune => "ft",
        }
    }
}

/// Declarative description of one experiment. The seeds inside the embedded
/// schedules are ignored; every stage seed derives from `master_seed`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentPlan {
    /// Self-training rounds. 0 trains and reports the baseline only.
    pub iterations: usize,
    pub init_mode: InitMode,
    pub decode_spec: DecodeSpec,
    /// Dropout on during pseudo-training (fine-tuning always uses dropout).
    pub pt_dropout: bool,
    pub noise: NoiseSpec,
    pub selection: Selection,
    pub regime: Regime,
    pub pt_target: PtTarget,
    pub pt_data: PtData,
    pub baseline_schedule: TrainSchedule,
    pub pt_schedule: TrainSchedule,
    pub ft_schedule: TrainSchedule,
    pub master_seed: u64,
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<()> {
        self.decode_spec.validate()?;
        self.noise.validate()?;
        self.baseline_schedule.validate()?;
        self.pt_schedule.validate()?;
        self.ft_schedule.validate()?;
        if let Selection::TopFraction(f) = self.selection {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::Config(format!("top_fraction {f} outside (0, 1]")));
            }
        }
        if let Selection::Schedule(counts) = &self.selection {
            if counts.is_empty() || counts.iter().any(|&c| c == 0) {
                return Err(Error::Config("selection schedule must be nonempty positive counts".into()));
            }
        }
        if let Regime::Joint { upsample_ratio } = self.regime {
            if upsample_ratio < 1.0 {
                return Err(Error::Config(format!("upsample_ratio {upsample_ratio} must be >= 1")));
            }
        }
        if self.pt_target == PtTarget::Real && self.pt_data != PtData::Parallel {
            return Err(Error::Config("pt_target=real requires pt_data=parallel".into()));
        }
        Ok(())
    }
}

/// Per-stage task metrics (toy-sum metrics when the observer computes them).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskMetrics {
    pub test_error: f64,
    pub smoothness: f64,
    pub symmetry: f64,
    pub failure_rate: f64,
}

/// One row of the experiment report.
#[derive(Debug, Clone, PartialEq)]
pub struct StageRecord {
    pub iteration: usize,
    pub stage: Stage,
    pub train_loss: f64,
    pub valid_loss: f64,
    pub task: Option<TaskMetrics>,
}

/// Hook the loop calls after every completed stage (and corpus build).
/// Returning task metrics attaches them to the stage record.
pub trait StageObserver {
    fn observe(
        &mut self,
        iteration: usize,
        stage: Stage,
        outcome: &TrainOutcome,
    ) -> Result<Option<TaskMetrics>>;

    fn observe_corpus(&mut self, _iteration: usize, _corpus: &PseudoCorpus) -> Result<()> {
        Ok(())
    }
}

/// Observer that records nothing.
pub struct NullObserver;

impl StageObserver for NullObserver {
    fn observe(&mut self, _: usize, _: Stage, _: &TrainOutcome) -> Result<Option<TaskMetrics>> {
        Ok(None)
    }
}

/// Pseudo-parallel data: unlabeled sources paired with teacher decodes.
#[derive(Debug, Clone)]
pub struct PseudoCorpus {
    pub examples: Vec<ParallelExample>,
    /// Teacher score per example (normalized per the decode spec's flag).
    pub confidence: Vec<f64>,
    /// Fingerprint of the teacher snapshot that produced the targets.
    pub teacher_fingerprint: String,
    /// Sources dropped because decoding produced an empty target.
    pub dropped: usize,
    /// Examples removed later by subset selection.
    pub filtered_out: usize,
}

impl PseudoCorpus {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}

/// Short content hash of a parameter snapshot.
pub fn params_fingerprint(params: &ModelParams) -> String {
    let mut hasher = Sha256::new();
    for (name, arr) in params.arrays() {
        hasher.update(name.as_bytes());
        hasher.update((arr.nrows() as u64).to_le_bytes());
        hasher.update((arr.ncols() as u64).to_le_bytes());
        for v in arr.iter() {
            hasher.update(v.to_bits().to_le_bytes());
        }
    }
    let digest = hasher.finalize();
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// Decode one pseudo target per unlabeled source with the frozen teacher.
/// Sampling decodes are seeded per example (base seed + index), so sharded
/// and serial labeling agree. Empty decodes are dropped and counted.
pub fn pseudo_label(
    teacher: &ModelParams,
    unlabeled: &[Sequence],
    spec: &DecodeSpec,
) -> Result<PseudoCorpus> {
    spec.validate()?;
    let labeled: Vec<Option<(ParallelExample, f64)>> = unlabeled
        .par_iter()
        .enumerate()
        .map(|(idx, src)| {
            let mut per_example = *spec;
            per_example.seed = spec.seed.wrapping_add(idx as u64);
            let hyp = decode(teacher, src, &per_example)?;
            if hyp.seq.is_empty() {
                return Ok(None);
            }
            Ok(Some((
                ParallelExample {
                    source: src.clone(),
                    target: hyp.seq,
                },
                hyp.normalized_score,
            )))
        })
        .collect::<Result<_>>()?;

    let mut examples = Vec::with_capacity(labeled.len());
    let mut confidence = Vec::with_capacity(labeled.len());
    let mut dropped = 0;
    for item in labeled {
        match item {
            Some((ex, conf)) => {
                examples.push(ex);
                confidence.push(conf);
            }
            None => dropped += 1,
        }
    }
    Ok(PseudoCorpus {
        examples,
        confidence,
        teacher_fingerprint: params_fingerprint(teacher),
        dropped,
        filtered_out: 0,
    })
}

/// Pair real parallel data with its real targets, scored by the teacher
/// (used by the noise-on-parallel-data ablation).
pub fn corpus_from_parallel(
    teacher: &ModelParams,
    parallel: &Dataset,
    length_normalize: bool,
) -> Result<PseudoCorpus> {
    let mut examples = Vec::with_capacity(parallel.len());
    let mut confidence = Vec::with_capacity(parallel.len());
    for ex in &parallel.examples {
        let lp = score_target(teacher, &ex.source.ids, &ex.target.ids, true)?;
        let conf = if length_normalize {
            lp / (ex.target.len() + 1) as f64
        } else {
            lp
        };
        examples.push(ex.clone());
        confidence.push(conf);
    }
    Ok(PseudoCorpus {
        examples,
        confidence,
        teacher_fingerprint: params_fingerprint(teacher),
        dropped: 0,
        filtered_out: 0,
    })
}

/// Keep a confidence-ranked subset. Output preserves corpus order; ties
/// break toward the earlier example.
pub fn select_subset(
    corpus: &PseudoCorpus,
    selection: &Selection,
    iteration: usize,
) -> Result<PseudoCorpus> {
    let n = corpus.len();
    let keep = match selection {
        Selection::All => return Ok(corpus.clone()),
        Selection::TopFraction(f) => {
            if !(*f > 0.0 && *f <= 1.0) {
                return Err(Error::Usage(format!("top_fraction {f} outside (0, 1]")));
            }
            (f * n as f64).ceil() as usize
        }
        Selection::Schedule(counts) => {
            if counts.is_empty() {
                return Err(Error::Usage("empty selection schedule".into()));
            }
            if iteration == 0 {
                return Err(Error::Usage("schedule selection needs a 1-based iteration".into()));
            }
            counts[(iteration - 1).min(counts.len() - 1)].min(n)
        }
    };
    if keep == 0 || n == 0 {
        return Err(Error::Usage("subset selection produced an empty corpus".into()));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        corpus.confidence[b]
            .total_cmp(&corpus.confidence[a])
            .then(a.cmp(&b))
    });
    let mut chosen: Vec<usize> = order.into_iter().take(keep).collect();
    chosen.sort_unstable();

    Ok(PseudoCorpus {
        examples: chosen.iter().map(|&i| corpus.examples[i].clone()).collect(),
        confidence: chosen.iter().map(|&i| corpus.confidence[i]).collect(),
        teacher_fingerprint: corpus.teacher_fingerprint.clone(),
        dropped: corpus.dropped,
        filtered_out: corpus.filtered_out + (n - keep),
    })
}

fn stage_config(base: &ModelConfig, dropout_on: bool) -> ModelConfig {
    let mut cfg = base.clone();
    if !dropout_on {
        cfg.dropout_rate = 0.0;
    }
    cfg
}

/// Pseudo-training: fit a student on the (optionally noised) pseudo corpus,
/// selecting the checkpoint by loss on the real validation set. In the joint
/// regime the parallel data rides along, duplicated by the upsample ratio.
pub fn pseudo_train(
    plan: &ExperimentPlan,
    config: &ModelConfig,
    teacher: &ModelParams,
    corpus: &PseudoCorpus,
    parallel: &Dataset,
    valid: &Dataset,
    iteration: usize,
) -> Result<TrainOutcome> {
    if corpus.is_empty() {
        return Err(Error::Usage("pseudo-training on an empty corpus".into()));
    }
    let mut data = Dataset::new(corpus.examples.clone());
    if let Regime::Joint { upsample_ratio } = plan.regime {
        let copies = upsample_ratio.round().max(1.0) as usize;
        for _ in 0..copies {
            data.examples.extend(parallel.examples.iter().cloned());
        }
    }

    let cfg = stage_config(config, plan.pt_dropout);
    let mut init = match plan.init_mode {
        InitMode::Scratch => init_params(&cfg, seeds::derive(plan.master_seed, "pt-init", iteration as u64))?,
        InitMode::Baseline => teacher.clone(),
    };
    init.config = cfg;

    let mut sched = plan.pt_schedule;
    sched.seed = seeds::derive(plan.master_seed, "pt-train", iteration as u64);

    let perturber = match plan.noise.kind {
        NoiseKind::None => None,
        _ => Some(make_perturber(plan.noise)),
    };
    train(init, &data, valid, &sched, perturber.as_ref())
}

/// Fine-tuning: continue from the pseudo-trained weights on real parallel
/// data; dropout is always on here regardless of the PT setting.
pub fn fine_tune(
    plan: &ExperimentPlan,
    config: &ModelConfig,
    pt_params: &ModelParams,
    parallel: &Dataset,
    valid: &Dataset,
    iteration: usize,
) -> Result<TrainOutcome> {
    let mut init = pt_params.clone();
    init.config = config.clone();
    let mut sched = plan.ft_schedule;
    sched.seed = seeds::derive(plan.master_seed, "ft-train", iteration as u64);
    train(init, parallel, valid, &sched, None)
}

fn with_iteration(err: Error, iteration: usize) -> Error {
    match err {
        Error::Config(m) => Error::Config(format!("iteration {iteration}: {m}")),
        Error::Usage(m) => Error::Usage(format!("iteration {iteration}: {m}")),
        Error::Numeric(m) => Error::Numeric(format!("iteration {iteration}: {m}")),
        other => other,
    }
}

/// Run the full loop: train the baseline on `parallel`, then iterate
/// pseudo-label -> select -> pseudo-train -> fine-tune, feeding each
/// iteration's result back as the next teacher. With no unlabeled data (or
/// zero iterations) the baseline is returned unchanged.
pub fn self_train_loop(
    plan: &ExperimentPlan,
    config: &ModelConfig,
    parallel: &Dataset,
    unlabeled: &[Sequence],
    valid: &Dataset,
    observer: &mut dyn StageObserver,
) -> Result<(ModelParams, Vec<StageRecord>)> {
    plan.validate()?;
    config.validate()?;

    let init = init_params(config, seeds::derive(plan.master_seed, "baseline-init", 0))?;
    let mut sched = plan.baseline_schedule;
    sched.seed = seeds::derive(plan.master_seed, "baseline-train", 0);
    let baseline = train(init, parallel, valid, &sched, None)?;

    let mut records = Vec::new();
    let task = observer.observe(0, Stage::Baseline, &baseline)?;
    records.push(StageRecord {
        iteration: 0,
        stage: Stage::Baseline,
        train_loss: baseline.final_train_loss,
        valid_loss: baseline.best_valid_loss,
        task,
    });

    let mut current = baseline.params;
    let no_sources = match plan.pt_data {
        PtData::Unlabeled => unlabeled.is_empty(),
        PtData::Parallel => parallel.is_empty(),
    };
    if plan.iterations == 0 || no_sources {
        return Ok((current, records));
    }

    for k in 1..=plan.iterations {
        let run = |records: &mut Vec<StageRecord>,
                   current: &mut ModelParams,
                   observer: &mut dyn StageObserver|
         -> Result<()> {
            let teacher = current.clone();

            let mut decode_spec = plan.decode_spec;
            decode_spec.seed = seeds::derive(plan.master_seed, "decode", k as u64);
            let corpus = match plan.pt_target {
                PtTarget::Fake => {
                    let sources: Vec<Sequence> = match plan.pt_data {
                        PtData::Unlabeled => unlabeled.to_vec(),
                        PtData::Parallel => parallel.sources(),
                    };
                    pseudo_label(&teacher, &sources, &decode_spec)?
                }
                PtTarget::Real => {
                    corpus_from_parallel(&teacher, parallel, decode_spec.length_normalize)?
                }
            };
            let corpus = select_subset(&corpus, &plan.selection, k)?;
            observer.observe_corpus(k, &corpus)?;

            let pt = pseudo_train(plan, config, &teacher, &corpus, parallel, valid, k)?;
            let task = observer.observe(k, Stage::PseudoTrain, &pt)?;
            records.push(StageRecord {
                iteration: k,
                stage: Stage::PseudoTrain,
                train_loss: pt.final_train_loss,
                valid_loss: pt.best_valid_loss,
                task,
            });

            match plan.regime {
                Regime::Separate => {
                    let ft = fine_tune(plan, config, &pt.params, parallel, valid, k)?;
                    let task = observer.observe(k, Stage::FineTune, &ft)?;
                    records.push(StageRecord {
                        iteration: k,
                        stage: Stage::FineTune,
                        train_loss: ft.final_train_loss,
                        valid_loss: ft.best_valid_loss,
                        task,
                    });
                    *current = ft.params;
                }
                Regime::Joint { .. } => {
                    *current = pt.params;
                }
            }
            Ok(())
        };
        run(&mut records, &mut current, observer).map_err(|e| with_iteration(e, k))?;
    }

    Ok((current, records))
}
