use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use tryon_core::captioner::PromptPair;
use tryon_core::data::synthetic::{generate_samples, SyntheticConfig};
use tryon_core::data::TryOnSample;
use tryon_core::diffusion::{train_step, ModelConfig, OptimizerConfig, TrainExample, TryOnModel};
use tryon_core::eval::{ssim_with, SsimParams};
use tryon_core::exec::Exec;
use tryon_core::mask::{build_coarse_mask, build_fine_mask, default_n_max, random_dilation_augment, DilationSpec};
use tryon_core::pmg::{pmg_generate_batch, PmgConfig};

const POLICIES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn samples(count: usize, scale: usize) -> Vec<TryOnSample> {
    generate_samples(&SyntheticConfig {
        count,
        seed: 11,
        scale,
        ..Default::default()
    })
    .into_iter()
    .map(|(s, _)| s)
    .collect()
}

fn prompts() -> PromptPair {
    let main = "a slim woman wears t-shirt, cotton, untucked, with arms down at the sides.".to_string();
    PromptPair {
        token_count_main: main.split_whitespace().count(),
        main_prompt: main,
        reference_prompt: "t-shirt, cotton".into(),
        token_count_ref: 2,
    }
}

fn masks(c: &mut Criterion) {
    let data = samples(64, 2);
    let mut g = c.benchmark_group("mask_augment_64");
    for (name, exec) in POLICIES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                exec.map_range(data.len(), |i| {
                    let s = &data[i];
                    let fine = build_fine_mask(s).unwrap();
                    let coarse = build_coarse_mask(s).unwrap();
                    let spec = DilationSpec {
                        n_max: default_n_max(s.height(), s.width()),
                        rng_seed: i as u64,
                        element: Default::default(),
                    };
                    random_dilation_augment(&fine, &coarse, &spec).unwrap().count()
                })
            })
        });
    }
    g.finish();
}

fn ssim(c: &mut Criterion) {
    let data = samples(2, 4);
    let params = SsimParams::default();
    let mut g = c.benchmark_group("ssim_256x192");
    for (name, exec) in POLICIES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| ssim_with(&data[0].person, &data[1].person, &params, exec).unwrap())
        });
    }
    g.finish();
}

fn training(c: &mut Criterion) {
    let data = samples(8, 1);
    let model = TryOnModel::new(ModelConfig::default()).unwrap();
    let p = prompts();
    let examples: Vec<TrainExample> = data
        .iter()
        .map(|s| {
            let fine = build_fine_mask(s).unwrap();
            let coarse = build_coarse_mask(s).unwrap();
            TrainExample::new(&model, s, fine, coarse, &p.main_prompt, &p.reference_prompt).unwrap()
        })
        .collect();
    let n_max = default_n_max(data[0].height(), data[0].width());
    let mut g = c.benchmark_group("train_step_batch8");
    g.sample_size(10);
    for (name, exec) in POLICIES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            let mut m = model.clone();
            let mut opt = OptimizerConfig::default().build();
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            b.iter(|| train_step(&mut m, opt.as_mut(), &examples, n_max, &mut rng, exec).unwrap())
        });
    }
    g.finish();
}

fn generation(c: &mut Criterion) {
    let model = TryOnModel::new(ModelConfig::default()).unwrap();
    let inputs: Vec<(TryOnSample, PromptPair)> = samples(4, 1).into_iter().map(|s| (s, prompts())).collect();
    let cfg = PmgConfig { steps: 10, ..Default::default() };
    let mut g = c.benchmark_group("pmg_batch4_10steps");
    g.sample_size(10);
    for (name, exec) in POLICIES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| pmg_generate_batch(&model, &inputs, &cfg, exec).len())
        });
    }
    g.finish();
}

criterion_group!(benches, masks, ssim, training, generation);
criterion_main!(benches);
