//! Scratch harness for tuning the toy-task schedules. Not part of the API.

use std::time::Instant;

use selftrain_core::data::Dataset;
use selftrain_core::decode::{DecodeMode, DecodeSpec};
use selftrain_core::model::ModelConfig;
use selftrain_core::noise::{NoiseKind, NoiseSpec};
use selftrain_core::optim::LrSchedule;
use selftrain_core::selftrain::{
    self_train_loop, ExperimentPlan, InitMode, PtData, PtTarget, Regime, Selection, Stage,
    StageObserver,
};
use selftrain_core::toysum::{
    gen_toy_dataset, parallel_dataset, toy_vocabulary, unlabeled_sources, ToyEvaluator,
};
use selftrain_core::train::TrainSchedule;

fn config() -> ModelConfig {
    ModelConfig {
        embed_dim: 32,
        hidden_dim: 32,
        dropout_rate: 0.3,
        label_smoothing: 0.1,
        vocab_size: 16,
        max_decode_len: 8,
    }
}

fn sched(max_updates: usize, patience: usize) -> TrainSchedule {
    TrainSchedule {
        max_updates,
        batch_size: 32,
        seed: 0,
        patience,
        eval_interval: 100,
        lr: LrSchedule::new(5e-4, 400),
        clip_norm: Some(5.0),
    }
}

fn base_plan(master_seed: u64, iterations: usize) -> ExperimentPlan {
    ExperimentPlan {
        iterations,
        init_mode: InitMode::Baseline,
        decode_spec: DecodeSpec::beam(5, 8),
        pt_dropout: true,
        noise: NoiseSpec::none(),
        selection: Selection::All,
        regime: Regime::Separate,
        pt_target: PtTarget::Fake,
        pt_data: PtData::Unlabeled,
        baseline_schedule: sched(4000, 0),
        pt_schedule: sched(4000, 0),
        ft_schedule: sched(2000, 0),
        master_seed,
    }
}

struct PrintObserver {
    eval: ToyEvaluator,
    label: String,
}

impl StageObserver for PrintObserver {
    fn observe(
        &mut self,
        iteration: usize,
        stage: Stage,
        outcome: &selftrain_core::train::TrainOutcome,
    ) -> selftrain_core::Result<Option<selftrain_core::selftrain::TaskMetrics>> {
        let m = self.eval.metrics(&outcome.params)?;
        println!(
            "{} iter={} stage={:<8} err={:>7.3} smooth={:>6.3} sym={:>6.3} fail={:>5.3} vloss={:.4} tloss={:.4} best@{} ran={}",
            self.label,
            iteration,
            stage.as_str(),
            m.test_error,
            m.smoothness,
            m.symmetry,
            m.failure_rate,
            outcome.best_valid_loss,
            outcome.final_train_loss,
            outcome.best_update,
            outcome.updates_run,
        );
        Ok(Some(m))
    }
}

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let variant = args.first().map(|s| s.as_str()).unwrap_or("baseline");
    let seeds: Vec<u64> = args
        .get(1)
        .map(|s| s.split(',').map(|x| x.parse().unwrap()).collect())
        .unwrap_or_else(|| vec![1]);
    let data_seed: u64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(7);

    let vocab = toy_vocabulary();
    let split = gen_toy_dataset(data_seed);
    let train: Dataset = parallel_dataset(&vocab, &split.train).unwrap();
    let valid = parallel_dataset(&vocab, &split.valid).unwrap();
    let unlabeled = unlabeled_sources(&vocab, &split.unlabeled).unwrap();
    let cfg = config();

    for &seed in &seeds {
        let mut plan = base_plan(seed, 1);
        match variant {
            "baseline" => plan.iterations = 0,
            "st" => {}
            "st-sample-nodrop" => {
                plan.decode_spec = DecodeSpec {
                    mode: DecodeMode::Sample,
                    beam_size: 1,
                    max_len: 8,
                    length_normalize: true,
                    temperature: 1.0,
                    seed: 0,
                };
                plan.pt_dropout = false;
            }
            "nst-swap" => plan.noise = NoiseSpec::operand_swap(),
            "nst-synth" => plan.noise = NoiseSpec::synthetic_default(0),
            "nst-blank" => {
                let blank: f64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(0.2);
                plan.noise = NoiseSpec {
                    kind: NoiseKind::Synthetic,
                    drop_prob: 0.0,
                    blank_prob: blank,
                    shuffle_window: 0,
                    seed_stream: 0,
                };
            }
            "nst-synth-custom" => {
                // args[3] = drop,blank,window
                let parts: Vec<f64> = args
                    .get(3)
                    .map(|s| s.split(',').map(|x| x.parse().unwrap()).collect())
                    .unwrap_or_else(|| vec![0.0, 0.0, 3.0]);
                plan.noise = NoiseSpec {
                    kind: NoiseKind::Synthetic,
                    drop_prob: parts[0],
                    blank_prob: parts[1],
                    shuffle_window: parts[2] as usize,
                    seed_stream: 0,
                };
            }
            "nst-swap-3iter" => {
                plan.noise = NoiseSpec::operand_swap();
                plan.iterations = 3;
                plan.init_mode = InitMode::Scratch;
            }
            "par-real" => {
                plan.noise = NoiseSpec::synthetic_default(0);
                plan.pt_data = PtData::Parallel;
                plan.pt_target = PtTarget::Real;
            }
            "par-fake" => {
                plan.noise = NoiseSpec::synthetic_default(0);
                plan.pt_data = PtData::Parallel;
                plan.pt_target = PtTarget::Fake;
            }
            other => panic!("unknown variant {other}"),
        }
        if let Some(us) = args.get(4) {
            let parts: Vec<usize> = us.split(',').map(|x| x.parse().unwrap()).collect();
            plan.baseline_schedule.max_updates = parts[0];
            plan.pt_schedule.max_updates = parts[1];
            plan.ft_schedule.max_updates = parts[2];
        }
        if let Some(ei) = args.get(5) {
            let ei: usize = ei.parse().unwrap();
            plan.pt_schedule.eval_interval = if ei == 0 {
                plan.pt_schedule.max_updates
            } else {
                ei
            };
        }
        let mut obs = PrintObserver {
            eval: ToyEvaluator::new(vocab.clone(), split.test.clone()),
            label: format!("[{variant} seed={seed}]"),
        };
        let t0 = Instant::now();
        let result = self_train_loop(&plan, &cfg, &train, &unlabeled, &valid, &mut obs);
        match result {
            Ok(_) => println!("[{variant} seed={seed}] done in {:.1}s", t0.elapsed().as_secs_f64()),
            Err(e) => println!("[{variant} seed={seed}] FAILED: {e}"),
        }
    }
}
